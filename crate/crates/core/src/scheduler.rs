//! Per-epoch training sequences.
//!
//! * **Heuristic**: a ranking fixed before training plus a pacing function
//!   `λ(t)`; epoch `t` trains on a uniform shuffle of the top `⌈λ(t)·n⌉`
//!   ranked samples. The anti variant paces over the reversed ranking.
//! * **Learning-based**: scores are refreshed every `E` epochs and smoothed
//!   with an exponential moving average, turned into probabilities by softmax,
//!   and each epoch is a full weighted permutation drawn without replacement,
//!   so high-scoring samples tend to come first.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{softmax, weighted_sample_without_replacement, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PacingKind {
    /// `B` equal bins of the ranking, one more unlocked every `T_grow / B`
    /// epochs. Starts at `1/B` regardless of `λ₀`.
    BabyStep {
        bins: u32,
    },
    Linear,
    #[default]
    Root,
    /// `p`-th root pacing, `p ∈ {3, 5}`.
    RootP {
        p: u32,
    },
    Geometric,
}

impl PacingKind {
    pub fn validate(self) -> Result<()> {
        match self {
            PacingKind::BabyStep { bins: 0 } => Err(Error::input("baby-step pacing needs >= 1 bin")),
            PacingKind::RootP { p } if p != 3 && p != 5 => {
                Err(Error::input(format!("root-p pacing supports p = 3 or 5, got {p}")))
            }
            _ => Ok(()),
        }
    }

    /// Value at `t = 0`.
    pub fn start(self, lambda0: f64) -> f64 {
        match self {
            PacingKind::BabyStep { bins } => 1.0 / bins as f64,
            _ => lambda0,
        }
    }
}

impl fmt::Display for PacingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PacingKind::BabyStep { bins } => write!(f, "baby-step:{bins}"),
            PacingKind::Linear => f.write_str("linear"),
            PacingKind::Root => f.write_str("root"),
            PacingKind::RootP { p } => write!(f, "root-{p}"),
            PacingKind::Geometric => f.write_str("geometric"),
        }
    }
}

impl FromStr for PacingKind {
    type Err = Error;

    /// `linear`, `root`, `root-3`, `root-5`, `geometric`, `baby-step[:bins]`
    /// (5 bins by default).
    fn from_str(s: &str) -> Result<Self> {
        let kind = match s {
            "linear" => PacingKind::Linear,
            "root" => PacingKind::Root,
            "root-3" => PacingKind::RootP { p: 3 },
            "root-5" => PacingKind::RootP { p: 5 },
            "geometric" => PacingKind::Geometric,
            "baby-step" => PacingKind::BabyStep { bins: 5 },
            other => match other.strip_prefix("baby-step:") {
                Some(bins) => PacingKind::BabyStep {
                    bins: bins
                        .parse()
                        .map_err(|_| Error::input(format!("bad baby-step bin count {bins:?}")))?,
                },
                None => {
                    return Err(Error::input(format!(
                        "unknown pacing {other:?} (expected baby-step[:B], linear, root, root-3, root-5, geometric)"
                    )))
                }
            },
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// Fraction of the ranking available at epoch `t`.
///
/// ```text
/// root       min(1, √((1 − λ₀²)·t/T + λ₀²))
/// root-p     min(1, ((1 − λ₀^p)·t/T + λ₀^p)^(1/p))
/// linear     min(1, λ₀ + (1 − λ₀)·t/T)
/// geometric  min(1, λ₀^(1 − t/T))
/// baby-step  min(1, (⌊t·B/T⌋ + 1) / B)
/// ```
///
/// Every kind is exactly 1 from `t = T` on.
pub fn pacing_lambda(kind: PacingKind, t: usize, lambda0: f64, t_grow: usize) -> Result<f64> {
    if !(lambda0 > 0.0 && lambda0 <= 1.0) {
        return Err(Error::input(format!("lambda0 must lie in (0, 1], got {lambda0}")));
    }
    if t_grow == 0 {
        return Err(Error::input("t_grow must be >= 1"));
    }
    kind.validate()?;
    if t >= t_grow {
        return Ok(1.0);
    }
    let progress = t as f64 / t_grow as f64;
    let value = match kind {
        PacingKind::Root => ((1.0 - lambda0 * lambda0) * progress + lambda0 * lambda0).sqrt(),
        PacingKind::RootP { p } => {
            let l0p = lambda0.powi(p as i32);
            ((1.0 - l0p) * progress + l0p).powf(1.0 / p as f64)
        }
        PacingKind::Linear => lambda0 + (1.0 - lambda0) * progress,
        PacingKind::Geometric => lambda0.powf(1.0 - progress),
        PacingKind::BabyStep { bins } => {
            let b = bins as usize;
            ((t * b / t_grow) + 1) as f64 / b as f64
        }
    };
    Ok(value.min(1.0))
}

/// Number of ranked samples available for a fraction `lambda` of `n`.
pub fn prefix_len(lambda: f64, n: usize) -> usize {
    // 1e-9 keeps exact products such as 0.1·100 from rounding up to 11
    let k = (lambda * n as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchedulerKind {
    #[serde(rename = "vanilla")]
    Vanilla,
    #[serde(rename = "bss-h")]
    Heuristic,
    #[serde(rename = "anti")]
    AntiHeuristic,
    #[serde(rename = "bss-l")]
    Learning,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 4] = [
        SchedulerKind::Vanilla,
        SchedulerKind::Heuristic,
        SchedulerKind::AntiHeuristic,
        SchedulerKind::Learning,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Vanilla => "vanilla",
            SchedulerKind::Heuristic => "bss-h",
            SchedulerKind::AntiHeuristic => "anti",
            SchedulerKind::Learning => "bss-l",
        }
    }

    pub fn needs_scores(self) -> bool {
        !matches!(self, SchedulerKind::Vanilla)
    }

    pub fn is_paced(self) -> bool {
        matches!(self, SchedulerKind::Heuristic | SchedulerKind::AntiHeuristic)
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchedulerKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::input(format!(
                "unknown scheduler {s:?} (expected vanilla, bss-h, anti or bss-l)"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochPlan {
    pub epoch: usize,
    pub indices: Vec<usize>,
    pub scheduler: SchedulerKind,
}

/// Uniform permutation of the whole dataset.
pub fn vanilla_epoch_plan(n: usize, t: usize, rng: &mut SeededRng) -> EpochPlan {
    let mut indices: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut indices);
    EpochPlan {
        epoch: t,
        indices,
        scheduler: SchedulerKind::Vanilla,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicState {
    /// Sample indices from most to least balanced, fixed before training.
    pub ranking: Vec<usize>,
    pub lambda0: f64,
    pub t_grow: usize,
    pub pacing: PacingKind,
}

impl HeuristicState {
    pub fn new(ranking: Vec<usize>, lambda0: f64, t_grow: usize, pacing: PacingKind) -> Result<Self> {
        if ranking.is_empty() {
            return Err(Error::input("ranking is empty"));
        }
        let mut seen = vec![false; ranking.len()];
        for &i in &ranking {
            if i >= ranking.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::input("ranking is not a permutation of 0..n"));
            }
        }
        // validates lambda0, t_grow and the pacing kind
        pacing_lambda(pacing, 0, lambda0, t_grow)?;
        Ok(HeuristicState {
            ranking,
            lambda0,
            t_grow,
            pacing,
        })
    }

    pub fn lambda(&self, t: usize) -> f64 {
        pacing_lambda(self.pacing, t, self.lambda0, self.t_grow).expect("validated on construction")
    }

    /// A uniform shuffle of the `⌈λ(t)·n⌉` best-ranked samples, or of the
    /// worst-ranked ones when `anti` is set.
    pub fn epoch_plan(&self, t: usize, rng: &mut SeededRng, anti: bool) -> EpochPlan {
        let n = self.ranking.len();
        let k = prefix_len(self.lambda(t), n);
        let mut indices: Vec<usize> = if anti {
            self.ranking.iter().rev().take(k).copied().collect()
        } else {
            self.ranking[..k].to_vec()
        };
        rng.shuffle(&mut indices);
        EpochPlan {
            epoch: t,
            indices,
            scheduler: if anti {
                SchedulerKind::AntiHeuristic
            } else {
                SchedulerKind::Heuristic
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningState {
    /// Smoothed scores; empty until the first update.
    pub scores: Vec<f64>,
    pub interval: usize,
    pub beta: f64,
    /// Number of updates applied so far.
    pub updates: usize,
}

impl LearningState {
    pub fn new(interval: usize, beta: f64) -> Result<Self> {
        if interval == 0 {
            return Err(Error::input("update interval must be >= 1"));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::input(format!("beta must lie in [0, 1], got {beta}")));
        }
        Ok(LearningState {
            scores: Vec::new(),
            interval,
            beta,
            updates: 0,
        })
    }

    /// Whether epoch `t` refreshes the scores.
    pub fn is_update_epoch(&self, t: usize) -> bool {
        t.is_multiple_of(self.interval)
    }

    /// Applies the moving-average update at update epochs and returns whether
    /// it fired. The first update copies `current`; later ones blend
    /// `(1 − β)·old + β·current`.
    pub fn ema_update(&mut self, current: &[f64], t: usize) -> Result<bool> {
        if !self.is_update_epoch(t) {
            return Ok(false);
        }
        if current.is_empty() {
            return Err(Error::input("no scores to update with"));
        }
        if self.updates == 0 {
            self.scores = current.to_vec();
        } else {
            if current.len() != self.scores.len() {
                return Err(Error::input(format!(
                    "{} current scores for {} tracked samples",
                    current.len(),
                    self.scores.len()
                )));
            }
            for (s, &c) in self.scores.iter_mut().zip(current) {
                *s = (1.0 - self.beta) * *s + self.beta * c;
            }
        }
        self.updates += 1;
        Ok(true)
    }

    pub fn sampling_probabilities(&self) -> Result<Vec<f64>> {
        if self.scores.is_empty() {
            return Err(Error::input("scores have not been initialized"));
        }
        Ok(softmax(&self.scores))
    }
}

/// A full permutation drawn sequentially without replacement with
/// probabilities `probs`.
pub fn learning_epoch_plan(probs: &[f64], t: usize, rng: &mut SeededRng) -> Result<EpochPlan> {
    Ok(EpochPlan {
        epoch: t,
        indices: weighted_sample_without_replacement(probs, rng)?,
        scheduler: SchedulerKind::Learning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const KINDS: [PacingKind; 6] = [
        PacingKind::BabyStep { bins: 4 },
        PacingKind::Linear,
        PacingKind::Root,
        PacingKind::RootP { p: 3 },
        PacingKind::RootP { p: 5 },
        PacingKind::Geometric,
    ];

    #[test]
    fn root_pacing_examples() {
        assert_eq!(pacing_lambda(PacingKind::Root, 40, 0.1, 40).unwrap(), 1.0);
        assert_abs_diff_eq!(
            pacing_lambda(PacingKind::Root, 0, 0.1, 40).unwrap(),
            0.1,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            pacing_lambda(PacingKind::Root, 10, 0.1, 40).unwrap(),
            0.2575f64.sqrt(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            pacing_lambda(PacingKind::Root, 10, 0.1, 40).unwrap(),
            0.50745,
            epsilon = 1e-5
        );
    }

    #[test]
    fn pacing_rejects_bad_parameters() {
        assert!(pacing_lambda(PacingKind::Root, 0, 0.0, 40).is_err());
        assert!(pacing_lambda(PacingKind::Root, 0, 1.5, 40).is_err());
        assert!(pacing_lambda(PacingKind::Root, 0, 0.1, 0).is_err());
        assert!(pacing_lambda(PacingKind::RootP { p: 4 }, 0, 0.1, 40).is_err());
        assert!(pacing_lambda(PacingKind::BabyStep { bins: 0 }, 0, 0.1, 40).is_err());
    }

    #[test]
    fn every_kind_starts_right_and_reaches_one() {
        for kind in KINDS {
            assert_abs_diff_eq!(
                pacing_lambda(kind, 0, 0.2, 30).unwrap(),
                kind.start(0.2),
                epsilon = 1e-12
            );
            assert_eq!(pacing_lambda(kind, 30, 0.2, 30).unwrap(), 1.0);
            assert_eq!(pacing_lambda(kind, 75, 0.2, 30).unwrap(), 1.0);
            let mut prev = 0.0;
            for t in 0..=60 {
                let v = pacing_lambda(kind, t, 0.2, 30).unwrap();
                assert!(v >= prev && v > 0.0 && v <= 1.0, "{kind} t={t}");
                prev = v;
            }
        }
    }

    #[test]
    fn geometric_below_linear_below_root() {
        for t in 1..40 {
            let g = pacing_lambda(PacingKind::Geometric, t, 0.1, 40).unwrap();
            let l = pacing_lambda(PacingKind::Linear, t, 0.1, 40).unwrap();
            let r = pacing_lambda(PacingKind::Root, t, 0.1, 40).unwrap();
            assert!(g <= l && l <= r, "t={t}: {g} {l} {r}");
        }
    }

    #[test]
    fn pacing_parses() {
        assert_eq!("geometric".parse::<PacingKind>().unwrap(), PacingKind::Geometric);
        assert_eq!("root-3".parse::<PacingKind>().unwrap(), PacingKind::RootP { p: 3 });
        assert_eq!(
            "baby-step:8".parse::<PacingKind>().unwrap(),
            PacingKind::BabyStep { bins: 8 }
        );
        assert!("root-4".parse::<PacingKind>().is_err());
        assert!("baby-step:0".parse::<PacingKind>().is_err());
        for k in KINDS {
            assert_eq!(k.to_string().parse::<PacingKind>().unwrap(), k);
        }
    }

    #[test]
    fn prefix_arithmetic() {
        assert_eq!(prefix_len(0.1, 100), 10);
        assert_eq!(prefix_len(0.101, 100), 11);
        assert_eq!(prefix_len(1.0, 100), 100);
        assert_eq!(prefix_len(1e-6, 100), 1);
    }

    #[test]
    fn heuristic_plan_takes_the_ranked_prefix() {
        let ranking: Vec<usize> = (0..100).rev().collect();
        let state = HeuristicState::new(ranking.clone(), 0.1, 40, PacingKind::Root).unwrap();
        let mut rng = SeededRng::new(0);
        let plan = state.epoch_plan(0, &mut rng, false);
        assert_eq!(plan.indices.len(), 10);
        let mut got = plan.indices.clone();
        got.sort_unstable();
        assert_eq!(got, (90..100).collect::<Vec<_>>());

        let anti = state.epoch_plan(0, &mut rng, true);
        let mut got = anti.indices.clone();
        got.sort_unstable();
        assert_eq!(got, (0..10).collect::<Vec<_>>());
        assert_eq!(anti.scheduler, SchedulerKind::AntiHeuristic);

        let full = state.epoch_plan(40, &mut rng, false);
        let mut got = full.indices.clone();
        got.sort_unstable();
        assert_eq!(got, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn heuristic_state_validates_ranking() {
        assert!(HeuristicState::new(vec![0, 0], 0.1, 40, PacingKind::Root).is_err());
        assert!(HeuristicState::new(vec![0, 2], 0.1, 40, PacingKind::Root).is_err());
        assert!(HeuristicState::new(vec![], 0.1, 40, PacingKind::Root).is_err());
        assert!(HeuristicState::new(vec![1, 0], 0.0, 40, PacingKind::Root).is_err());
    }

    #[test]
    fn ema_examples() {
        let mut s = LearningState::new(5, 0.6).unwrap();
        assert!(!s.ema_update(&[1.0], 3).unwrap());
        assert!(s.ema_update(&[0.5, -0.2], 0).unwrap());
        assert_eq!(s.scores, vec![0.5, -0.2]);
        assert!(s.ema_update(&[1.0, -0.2], 5).unwrap());
        assert_abs_diff_eq!(s.scores[0], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(s.scores[1], -0.2, epsilon = 1e-15);
        assert_eq!(s.updates, 2);
        assert!(s.ema_update(&[1.0], 10).is_err());

        let mut s = LearningState::new(1, 1.0).unwrap();
        s.ema_update(&[0.3], 0).unwrap();
        s.ema_update(&[0.9], 1).unwrap();
        assert_eq!(s.scores, vec![0.9]);
        assert!(LearningState::new(0, 0.5).is_err());
        assert!(LearningState::new(5, 1.5).is_err());
    }

    #[test]
    fn probabilities_examples() {
        let mut s = LearningState::new(1, 0.6).unwrap();
        assert!(s.sampling_probabilities().is_err());
        s.ema_update(&[0.4; 4], 0).unwrap();
        assert_eq!(s.sampling_probabilities().unwrap(), vec![0.25; 4]);
        let mut s = LearningState::new(1, 0.6).unwrap();
        s.ema_update(&[2f64.ln(), 0.0], 0).unwrap();
        let p = s.sampling_probabilities().unwrap();
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn learning_plan_law_for_two_samples() {
        let draws = 100_000;
        let mut first = 0;
        for seed in 0..draws {
            let plan = learning_epoch_plan(&[0.75, 0.25], 0, &mut SeededRng::new(seed)).unwrap();
            if plan.indices == [0, 1] {
                first += 1;
            }
        }
        assert!((first as f64 / draws as f64 - 0.75).abs() < 0.01);
    }

    #[test]
    fn higher_scores_come_earlier_on_average() {
        let scores: Vec<f64> = (0..20).map(|i| i as f64 / 5.0).collect();
        let probs = softmax(&scores);
        let mut pos_sum = [0.0; 20];
        for seed in 0..1000 {
            let plan = learning_epoch_plan(&probs, 0, &mut SeededRng::new(seed)).unwrap();
            for (pos, &i) in plan.indices.iter().enumerate() {
                pos_sum[i] += pos as f64;
            }
        }
        // Spearman between score rank and mean position: scores are already
        // increasing, so compare against the ranks of pos_sum.
        let mut order: Vec<usize> = (0..20).collect();
        order.sort_by(|&a, &b| pos_sum[a].total_cmp(&pos_sum[b]));
        let mut pos_rank = [0.0; 20];
        for (r, &i) in order.iter().enumerate() {
            pos_rank[i] = r as f64;
        }
        let n = 20.0;
        let d2: f64 = (0..20).map(|i| (i as f64 - pos_rank[i]).powi(2)).sum();
        let rho = 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
        assert!(rho < 0.0, "spearman {rho}");
    }

    #[test]
    fn scheduler_names() {
        for k in SchedulerKind::ALL {
            assert_eq!(k.name().parse::<SchedulerKind>().unwrap(), k);
        }
        assert!("heuristic".parse::<SchedulerKind>().is_err());
    }
}
