//! Training loop and multi-run comparison.
//!
//! A run proceeds as:
//!
//! 1. initialize the model and train `warmup_epochs` epochs in uniform random
//!    order;
//! 2. score every training sample with the frozen model (skipped for the
//!    vanilla scheduler);
//! 3. for `t = 0..epochs`, build the epoch plan with the selected scheduler,
//!    cut it into contiguous minibatches in plan order, take one SGD step per
//!    minibatch and evaluate on the test set.
//!
//! The learning-based scheduler re-scores the training set every `interval`
//! epochs (the first update reuses the step-2 scores), so it performs exactly
//! `⌈epochs / interval⌉` scoring passes. The heuristic schedulers score once.
//!
//! Every random draw comes from a stream of `seed`, so a run is replayable.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::evalkit::{accuracy, late_fusion, macro_f1, mean_average_precision, MetricReport, PerModality};
use crate::measurer::{evaluate_balance_scores, rank_by_balance, BalanceRecord, CriterionKind};
use crate::mmnet::{GradScope, ModelDims, ModelState, Objective};
use crate::numkit::{argmax, entropy, mean, sample_std, softmax, SeededRng};
use crate::scheduler::{
    learning_epoch_plan, pacing_lambda, vanilla_epoch_plan, EpochPlan, HeuristicState, LearningState, PacingKind,
    SchedulerKind,
};

const STREAM_INIT: u64 = 10;
const STREAM_WARMUP: u64 = 11;
const STREAM_PLAN: u64 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub scheduler: SchedulerKind,
    pub criterion: CriterionKind,
    /// Weight of the uni-modal loss terms.
    pub alpha: f64,
    /// Moving-average weight of fresh scores (learning scheduler).
    pub beta: f64,
    /// Initial fraction of the ranking (heuristic schedulers).
    pub lambda0: f64,
    /// Epoch at which pacing first reaches the full dataset.
    pub t_grow: usize,
    /// Re-scoring interval in epochs (learning scheduler).
    pub interval: usize,
    pub pacing: PacingKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub hidden: usize,
    pub embed: usize,
    pub grad_scope: GradScope,
    pub detach_uni_heads: bool,
    /// Late-fusion weights `[fused, uni_0, uni_1, ...]`; all ones when unset.
    pub fusion_weights: Option<Vec<f64>>,
    /// Truncate each learning-scheduler epoch to this many samples.
    pub epoch_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            scheduler: SchedulerKind::Vanilla,
            criterion: CriterionKind::PredSimLoss,
            alpha: 0.2,
            beta: 0.6,
            lambda0: 0.1,
            t_grow: 40,
            interval: 5,
            pacing: PacingKind::Root,
            lr: 1e-2,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 16,
            epochs: 60,
            warmup_epochs: 1,
            seed: 0,
            hidden: 64,
            embed: 16,
            grad_scope: GradScope::HeadsOnly,
            detach_uni_heads: false,
            fusion_weights: None,
            epoch_size: None,
        }
    }
}

impl TrainConfig {
    pub fn objective(&self) -> Objective {
        Objective {
            alpha: self.alpha,
            detach_uni_heads: self.detach_uni_heads,
        }
    }

    pub fn validate(&self, train_len: usize) -> Result<()> {
        self.objective().validate()?;
        pacing_lambda(self.pacing, 0, self.lambda0, self.t_grow)?;
        LearningState::new(self.interval, self.beta)?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::input(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::input(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::input(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::input("batch_size must be >= 1"));
        }
        if self.batch_size > train_len {
            return Err(Error::input(format!(
                "batch_size {} exceeds the {train_len} training samples",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::input("epochs must be >= 1"));
        }
        if self.epoch_size == Some(0) {
            return Err(Error::input("epoch_size must be >= 1 when set"));
        }
        Ok(())
    }

    /// First epoch at which the pacing function covers the whole dataset,
    /// clamped to the last epoch. Used as the P1 checkpoint for every
    /// scheduler so that runs are compared at the same epoch.
    pub fn p1_epoch(&self) -> usize {
        (0..self.epochs)
            .find(|&t| pacing_lambda(self.pacing, t, self.lambda0, self.t_grow).is_ok_and(|l| l >= 1.0))
            .unwrap_or(self.epochs - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerSnapshot {
    pub plan_len: usize,
    pub lambda: Option<f64>,
    pub ema_updates: Option<usize>,
    pub prob_entropy: Option<f64>,
    pub prob_max: Option<f64>,
    pub prob_min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub scheduler: SchedulerSnapshot,
    pub test: MetricReport,
    /// Not serialized: it would make otherwise identical histories differ.
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub p1_epoch: usize,
    pub score_evaluations: usize,
    pub warmup: Vec<EpochRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl RunHistory {
    pub fn final_record(&self) -> &EpochRecord {
        self.epochs.last().expect("a finished run has at least one epoch")
    }

    pub fn p1_record(&self) -> &EpochRecord {
        &self.epochs[self.p1_epoch.min(self.epochs.len() - 1)]
    }

    pub fn wall_times(&self) -> Vec<f64> {
        self.warmup.iter().chain(&self.epochs).map(|r| r.wall_time_s).collect()
    }
}

fn check_datasets(train: &Dataset, test: &Dataset) -> Result<()> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::input("training and test sets must be non-empty"));
    }
    if train.header != test.header {
        return Err(Error::input(format!(
            "train header {:?} differs from test header {:?}",
            train.header, test.header
        )));
    }
    Ok(())
}

pub fn model_dims(train: &Dataset, config: &TrainConfig) -> ModelDims {
    ModelDims {
        inputs: train.header.dims.clone(),
        hidden: config.hidden,
        embed: config.embed,
        classes: train.header.classes,
    }
}

/// Runs one epoch over `indices` in order, one SGD step per contiguous
/// minibatch, and returns the mean per-sample loss (each measured before its
/// batch's update).
pub fn train_epoch(model: &mut ModelState, train: &Dataset, indices: &[usize], config: &TrainConfig) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::input("epoch plan is empty"));
    }
    let objective = config.objective();
    let mut grads = model.params.zeros_like();
    let mut loss_sum = 0.0;
    for batch in indices.chunks(config.batch_size) {
        grads.scale(0.0);
        let scale = 1.0 / batch.len() as f64;
        for &i in batch {
            let sample = train
                .samples
                .get(i)
                .ok_or_else(|| Error::input(format!("plan index {i} out of range")))?;
            loss_sum += model.accumulate_gradients(&sample.mods, sample.label, &objective, &mut grads, scale)?;
        }
        model.sgd_step(&grads, config.lr, config.momentum, config.weight_decay)?;
    }
    Ok(loss_sum / indices.len() as f64)
}

/// Late-fusion test metrics plus per-modality and fusion-head accuracies.
pub fn evaluate(model: &ModelState, dataset: &Dataset, fusion_weights: Option<&[f64]>) -> Result<MetricReport> {
    struct Row {
        pred: usize,
        fused_head: usize,
        uni: Vec<usize>,
        scores: Vec<f64>,
    }
    let rows: Vec<Row> = dataset
        .samples
        .par_iter()
        .map(|s| -> Result<Row> {
            let trace = model.forward(&s.mods)?;
            let mut bundle = trace.logit_bundle();
            bundle.weights = fusion_weights.map(<[f64]>::to_vec);
            let total = late_fusion(&bundle)?;
            Ok(Row {
                pred: argmax(&total),
                fused_head: argmax(&trace.fused_logits),
                uni: trace.modalities.iter().map(|m| argmax(&m.logits)).collect(),
                scores: softmax(&total),
            })
        })
        .collect::<Result<_>>()?;
    let labels = dataset.labels();
    let preds: Vec<usize> = rows.iter().map(|r| r.pred).collect();
    let fused: Vec<usize> = rows.iter().map(|r| r.fused_head).collect();
    let scores: Vec<Vec<f64>> = rows.iter().map(|r| r.scores.clone()).collect();
    let per_modality = (0..model.modalities())
        .map(|j| {
            let uni: Vec<usize> = rows.iter().map(|r| r.uni[j]).collect();
            accuracy(&uni, &labels)
        })
        .collect::<Result<_>>()?;
    Ok(MetricReport {
        acc: accuracy(&preds, &labels)?,
        map: mean_average_precision(&scores, &labels)?,
        macro_f1: macro_f1(&preds, &labels, model.classes())?,
        fused_head_acc: accuracy(&fused, &labels)?,
        per_modality: PerModality { acc: per_modality },
    })
}

/// Model state after warm-up, with the initial balance scores when requested.
/// Shared by every scheduler of one seed in [`compare_runs`].
#[derive(Debug, Clone)]
pub struct Prepared {
    pub model: ModelState,
    pub warmup: Vec<EpochRecord>,
    pub scores: Option<Vec<BalanceRecord>>,
}

pub fn prepare(train: &Dataset, test: &Dataset, config: &TrainConfig, with_scores: bool) -> Result<Prepared> {
    check_datasets(train, test)?;
    config.validate(train.len())?;
    let mut model = ModelState::init(
        model_dims(train, config),
        &mut SeededRng::stream(config.seed, STREAM_INIT),
    )?;
    let mut rng = SeededRng::stream(config.seed, STREAM_WARMUP);
    let mut warmup = Vec::with_capacity(config.warmup_epochs);
    for w in 0..config.warmup_epochs {
        let started = Instant::now();
        let plan = vanilla_epoch_plan(train.len(), w, &mut rng);
        let train_loss = train_epoch(&mut model, train, &plan.indices, config)?;
        let test_report = evaluate(&model, test, config.fusion_weights.as_deref())?;
        warmup.push(EpochRecord {
            epoch: w,
            train_loss,
            scheduler: SchedulerSnapshot {
                plan_len: plan.indices.len(),
                lambda: None,
                ema_updates: None,
                prob_entropy: None,
                prob_max: None,
                prob_min: None,
            },
            test: test_report,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
    }
    let scores = if with_scores {
        Some(evaluate_balance_scores(
            &model,
            train,
            config.criterion,
            &config.objective(),
            config.grad_scope,
        )?)
    } else {
        None
    };
    Ok(Prepared { model, warmup, scores })
}

enum Branch {
    Vanilla,
    Paced { state: HeuristicState, anti: bool },
    Learning(LearningState),
}

/// Runs the scheduled epochs from a prepared state.
pub fn run_prepared(
    prepared: Prepared,
    train: &Dataset,
    test: &Dataset,
    config: &TrainConfig,
) -> Result<(ModelState, RunHistory)> {
    check_datasets(train, test)?;
    config.validate(train.len())?;
    let Prepared {
        mut model,
        warmup,
        scores,
    } = prepared;
    let initial_scores = || -> Result<&Vec<BalanceRecord>> {
        scores
            .as_ref()
            .ok_or_else(|| Error::input(format!("scheduler {} needs initial balance scores", config.scheduler)))
    };

    let mut branch = match config.scheduler {
        SchedulerKind::Vanilla => Branch::Vanilla,
        SchedulerKind::Heuristic | SchedulerKind::AntiHeuristic => Branch::Paced {
            state: HeuristicState::new(
                rank_by_balance(initial_scores()?),
                config.lambda0,
                config.t_grow,
                config.pacing,
            )?,
            anti: config.scheduler == SchedulerKind::AntiHeuristic,
        },
        SchedulerKind::Learning => {
            initial_scores()?;
            Branch::Learning(LearningState::new(config.interval, config.beta)?)
        }
    };
    let mut score_evaluations = usize::from(scores.is_some());

    let mut rng = SeededRng::stream(config.seed, STREAM_PLAN);
    let mut epochs = Vec::with_capacity(config.epochs);
    for t in 0..config.epochs {
        let started = Instant::now();
        let (plan, snapshot): (EpochPlan, SchedulerSnapshot) = match &mut branch {
            Branch::Vanilla => {
                let plan = vanilla_epoch_plan(train.len(), t, &mut rng);
                let snap = SchedulerSnapshot {
                    plan_len: plan.indices.len(),
                    lambda: None,
                    ema_updates: None,
                    prob_entropy: None,
                    prob_max: None,
                    prob_min: None,
                };
                (plan, snap)
            }
            Branch::Paced { state, anti } => {
                let plan = state.epoch_plan(t, &mut rng, *anti);
                let snap = SchedulerSnapshot {
                    plan_len: plan.indices.len(),
                    lambda: Some(state.lambda(t)),
                    ema_updates: None,
                    prob_entropy: None,
                    prob_max: None,
                    prob_min: None,
                };
                (plan, snap)
            }
            Branch::Learning(state) => {
                if state.is_update_epoch(t) {
                    let current: Vec<f64> = if state.updates == 0 {
                        initial_scores()?.iter().map(|r| r.score).collect()
                    } else {
                        score_evaluations += 1;
                        evaluate_balance_scores(
                            &model,
                            train,
                            config.criterion,
                            &config.objective(),
                            config.grad_scope,
                        )?
                        .iter()
                        .map(|r| r.score)
                        .collect()
                    };
                    state.ema_update(&current, t)?;
                }
                let probs = state.sampling_probabilities()?;
                let mut plan = learning_epoch_plan(&probs, t, &mut rng)?;
                if let Some(size) = config.epoch_size {
                    plan.indices.truncate(size);
                }
                let snap = SchedulerSnapshot {
                    plan_len: plan.indices.len(),
                    lambda: None,
                    ema_updates: Some(state.updates),
                    prob_entropy: Some(entropy(&probs)),
                    prob_max: probs.iter().copied().reduce(f64::max),
                    prob_min: probs.iter().copied().reduce(f64::min),
                };
                (plan, snap)
            }
        };
        let train_loss = train_epoch(&mut model, train, &plan.indices, config)?;
        let report = evaluate(&model, test, config.fusion_weights.as_deref())?;
        epochs.push(EpochRecord {
            epoch: t,
            train_loss,
            scheduler: snapshot,
            test: report,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
    }

    let history = RunHistory {
        scheduler: config.scheduler,
        seed: config.seed,
        p1_epoch: config.p1_epoch(),
        score_evaluations,
        warmup,
        epochs,
    };
    Ok((model, history))
}

/// One complete training run.
pub fn train(train: &Dataset, test: &Dataset, config: &TrainConfig) -> Result<(ModelState, RunHistory)> {
    let prepared = prepare(train, test, config, config.scheduler.needs_scores())?;
    run_prepared(prepared, train, test, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub p1_acc: f64,
    pub final_acc: f64,
    pub final_map: f64,
    pub final_macro_f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        MeanStd {
            mean: mean(xs),
            std: sample_std(xs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerSummary {
    pub scheduler: SchedulerKind,
    pub runs: usize,
    pub p1_acc: MeanStd,
    pub final_acc: MeanStd,
    pub final_map: MeanStd,
    pub final_macro_f1: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub p1_epoch: usize,
    pub rows: Vec<ComparisonRow>,
    pub summary: Vec<SchedulerSummary>,
    #[serde(skip)]
    pub histories: Vec<RunHistory>,
}

impl Comparison {
    pub fn summary_for(&self, scheduler: SchedulerKind) -> Option<&SchedulerSummary> {
        self.summary.iter().find(|s| s.scheduler == scheduler)
    }

    pub fn rows_for(&self, scheduler: SchedulerKind) -> impl Iterator<Item = &ComparisonRow> {
        self.rows.iter().filter(move |r| r.scheduler == scheduler)
    }

    /// `scheduler,seed,p1_acc,final_acc,final_map,final_macro_f1`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io("<comparison csv>", e))?;
        Ok(())
    }

    /// Long-format per-epoch curves: `epoch,metric,scheduler,seed,value`.
    pub fn write_curves_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "metric", "scheduler", "seed", "value"])?;
        for h in &self.histories {
            for r in &h.epochs {
                let mut metrics = vec![
                    ("train_loss", r.train_loss),
                    ("acc", r.test.acc),
                    ("map", r.test.map),
                    ("macro_f1", r.test.macro_f1),
                    ("fused_head_acc", r.test.fused_head_acc),
                ];
                let names: Vec<String> = (0..r.test.per_modality.acc.len())
                    .map(|j| format!("acc_mod{j}"))
                    .collect();
                metrics.extend(
                    names
                        .iter()
                        .map(String::as_str)
                        .zip(r.test.per_modality.acc.iter().copied()),
                );
                for (name, value) in metrics {
                    w.write_record([
                        r.epoch.to_string(),
                        name.to_string(),
                        h.scheduler.to_string(),
                        h.seed.to_string(),
                        value.to_string(),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<curves csv>", e))?;
        Ok(())
    }
}

/// Trains every scheduler on every seed over shared data splits.
///
/// For each seed the warm-up and initial scoring are computed once and shared
/// by all schedulers of that seed. Runs are independent and may execute in
/// parallel on the current rayon pool; results are ordered by seed, then by
/// the order of `schedulers`.
pub fn compare_runs(
    train: &Dataset,
    test: &Dataset,
    base: &TrainConfig,
    schedulers: &[SchedulerKind],
    seeds: &[u64],
) -> Result<Comparison> {
    if seeds.is_empty() {
        return Err(Error::input("compare needs at least one seed"));
    }
    if schedulers.is_empty() {
        return Err(Error::input("compare needs at least one scheduler"));
    }
    let with_scores = schedulers.iter().any(|s| s.needs_scores());
    let prepared: Vec<Prepared> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = TrainConfig { seed, ..base.clone() };
            prepare(train, test, &cfg, with_scores)
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, SchedulerKind)> = (0..seeds.len())
        .flat_map(|i| schedulers.iter().map(move |&s| (i, s)))
        .collect();
    let histories: Vec<RunHistory> = jobs
        .par_iter()
        .map(|&(i, scheduler)| {
            let cfg = TrainConfig {
                seed: seeds[i],
                scheduler,
                ..base.clone()
            };
            run_prepared(prepared[i].clone(), train, test, &cfg).map(|(_, h)| h)
        })
        .collect::<Result<_>>()?;

    let rows: Vec<ComparisonRow> = histories
        .iter()
        .map(|h| {
            let last = &h.final_record().test;
            ComparisonRow {
                scheduler: h.scheduler,
                seed: h.seed,
                p1_acc: h.p1_record().test.acc,
                final_acc: last.acc,
                final_map: last.map,
                final_macro_f1: last.macro_f1,
            }
        })
        .collect();

    let mut grouped: BTreeMap<usize, Vec<&ComparisonRow>> = BTreeMap::new();
    for row in &rows {
        let pos = schedulers.iter().position(|&s| s == row.scheduler).unwrap_or(0);
        grouped.entry(pos).or_default().push(row);
    }
    let summary = grouped
        .into_values()
        .map(|group| {
            let col = |f: fn(&ComparisonRow) -> f64| MeanStd::of(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            SchedulerSummary {
                scheduler: group[0].scheduler,
                runs: group.len(),
                p1_acc: col(|r| r.p1_acc),
                final_acc: col(|r| r.final_acc),
                final_map: col(|r| r.final_map),
                final_macro_f1: col(|r| r.final_macro_f1),
            }
        })
        .collect();

    Ok(Comparison {
        p1_epoch: base.p1_epoch(),
        rows,
        summary,
        histories,
    })
}
