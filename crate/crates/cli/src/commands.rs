use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use bss::datagen::{generate, Dataset, SynthConfig};
use bss::evalkit::{roc_auc, MetricReport};
use bss::measurer::{evaluate_balance_scores, write_score_csv};
use bss::mmnet::ModelState;
use bss::scheduler::SchedulerKind;
use bss::trainer::{compare_runs, prepare, RunHistory, TrainConfig};

use crate::manifest::{
    check_replayed_inputs, create_dir, guard_outputs, load_config, write_json, ConfigFile, InputFile, Manifest,
};
use crate::{CompareArgs, GenDataArgs, ScoreArgs, TrainArgs};

/// A problem with the command line itself; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

struct Splits {
    dir: PathBuf,
    train: Dataset,
    test: Dataset,
    files: Vec<InputFile>,
}

fn load_splits(dir: &Path) -> Result<Splits> {
    let mut files = Vec::new();
    let mut load = |name: &str| -> Result<Dataset> {
        let path = dir.join(name);
        files.push(InputFile::hash(&path)?);
        Dataset::load_jsonl(&path).with_context(|| format!("loading {}", path.display()))
    };
    let train = load("train.jsonl")?;
    let test = load("test.jsonl")?;
    Ok(Splits {
        dir: dir.to_path_buf(),
        train,
        test,
        files,
    })
}

fn resolve_data_dir<C>(flag: &Option<PathBuf>, file: Option<&ConfigFile<C>>) -> Result<PathBuf> {
    if let Some(dir) = flag {
        return Ok(dir.clone());
    }
    file.and_then(|f| f.extra("data_dir"))
        .and_then(Value::as_str)
        .map(PathBuf::from)
        .ok_or_else(|| usage("--data is required unless --config names a manifest that records it"))
}

fn train_config_file(path: &Option<PathBuf>, command: &str) -> Result<Option<ConfigFile<TrainConfig>>> {
    path.as_deref().map(|p| load_config(p, command)).transpose()
}

fn input_paths(config: &Option<PathBuf>, splits: &Splits, extra: &[&Path]) -> Vec<PathBuf> {
    config
        .iter()
        .cloned()
        .chain(splits.files.iter().map(|f| f.path.clone()))
        .chain(extra.iter().map(|p| p.to_path_buf()))
        .collect()
}

/// Keeps run artifacts out of the dataset directory, whose manifest they would replace.
fn separate_from_data(out: &Path, splits: &Splits) -> Result<()> {
    let same = match (std::fs::canonicalize(out), std::fs::canonicalize(&splits.dir)) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        return Err(usage(format!(
            "--out {} must differ from the data directory",
            out.display()
        )));
    }
    Ok(())
}

fn replay_check<C>(file: Option<&ConfigFile<C>>, splits: &Splits) {
    if let Some(m) = file.and_then(|f| f.manifest.as_ref()) {
        check_replayed_inputs(&m.inputs, &splits.files);
    }
}

#[derive(Serialize)]
struct RunMetrics<'a> {
    scheduler: SchedulerKind,
    seed: u64,
    p1_epoch: usize,
    p1: &'a MetricReport,
    #[serde(rename = "final")]
    last: &'a MetricReport,
}

fn run_metrics(h: &RunHistory) -> RunMetrics<'_> {
    RunMetrics {
        scheduler: h.scheduler,
        seed: h.seed,
        p1_epoch: h.p1_epoch,
        p1: &h.p1_record().test,
        last: &h.final_record().test,
    }
}

fn write_csv_file(path: &Path, write: impl FnOnce(BufWriter<File>) -> bss::Result<()>) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write(BufWriter::new(file)).with_context(|| format!("writing {}", path.display()))
}

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let file = args
        .config
        .as_deref()
        .map(|p| load_config::<SynthConfig>(p, "gen-data"))
        .transpose()?;
    let mut cfg = file.as_ref().map(|f| f.config.clone()).unwrap_or_default();
    if let Some(v) = args.classes {
        cfg.classes = v;
    }
    if let Some(v) = &args.dims {
        cfg.dims = v.clone();
    }
    if let Some(v) = args.n {
        cfg.n = v;
    }
    if let Some(v) = &args.noise {
        cfg.noise = v.clone();
    }
    if let Some(v) = args.rho {
        cfg.rho = v;
    }
    if let Some(v) = args.corruption {
        cfg.corruption = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.train_fraction {
        cfg.train_fraction = v;
    }
    cfg.validate()
        .map_err(|e| usage(format!("conflicting data flags (--dims, --noise, --n, ...): {e}")))?;

    create_dir(&args.out)?;
    let train_path = args.out.join("train.jsonl");
    let test_path = args.out.join("test.jsonl");
    let manifest_path = args.out.join("manifest.json");
    let outputs = vec![train_path.clone(), test_path.clone(), manifest_path.clone()];
    guard_outputs(&outputs, &args.config.iter().cloned().collect::<Vec<_>>())?;

    let mut manifest = Manifest::new("gen-data", cfg.seed, &cfg);
    manifest.outputs = outputs;
    write_json(&manifest_path, &manifest)?;

    let (train, test) = generate(&cfg)?;
    train.save_jsonl(&train_path)?;
    test.save_jsonl(&test_path)?;
    println!(
        "wrote {} train / {} test samples ({} corrupted) to {}",
        train.len(),
        test.len(),
        train.samples.iter().filter(|s| s.balanced == Some(false)).count(),
        args.out.display()
    );
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let file = train_config_file(&args.config, "train")?;
    let mut cfg = file.as_ref().map(|f| f.config.clone()).unwrap_or_default();
    if let Some(s) = args.scheduler {
        cfg.scheduler = s;
    }
    args.flags.apply(&mut cfg);
    let splits = load_splits(&resolve_data_dir(&args.data, file.as_ref())?)?;
    replay_check(file.as_ref(), &splits);
    cfg.validate(splits.train.len())?;

    create_dir(&args.out)?;
    separate_from_data(&args.out, &splits)?;
    let path = |name: &str| args.out.join(name);
    let outputs: Vec<PathBuf> = [
        "manifest.json",
        "history.json",
        "metrics.json",
        "model.json",
        "timing.json",
    ]
    .into_iter()
    .map(path)
    .collect();
    guard_outputs(&outputs, &input_paths(&args.config, &splits, &[]))?;

    let mut manifest = Manifest::new("train", cfg.seed, &cfg);
    manifest.extra.insert("data_dir".into(), json!(splits.dir));
    manifest.inputs = splits.files.clone();
    manifest.outputs = outputs;
    write_json(&path("manifest.json"), &manifest)?;

    let (model, history) = bss::trainer::train(&splits.train, &splits.test, &cfg)?;
    write_json(&path("history.json"), &history)?;
    write_json(&path("metrics.json"), &run_metrics(&history))?;
    model.save(path("model.json"))?;
    let warmup_s: Vec<f64> = history.warmup.iter().map(|e| e.wall_time_s).collect();
    let epochs_s: Vec<f64> = history.epochs.iter().map(|e| e.wall_time_s).collect();
    let total: f64 = warmup_s.iter().chain(&epochs_s).sum();
    write_json(
        &path("timing.json"),
        &json!({ "warmup_s": warmup_s, "epochs_s": epochs_s, "total_s": total }),
    )?;

    let last = &history.final_record().test;
    println!(
        "{} seed {}: final acc {:.4}  map {:.4}  macro-f1 {:.4}  (P1 epoch {}: acc {:.4})",
        cfg.scheduler,
        cfg.seed,
        last.acc,
        last.map,
        last.macro_f1,
        history.p1_epoch,
        history.p1_record().test.acc
    );
    Ok(())
}

pub fn compare(args: &CompareArgs) -> Result<()> {
    let file = train_config_file(&args.config, "compare")?;
    let mut cfg = file.as_ref().map(|f| f.config.clone()).unwrap_or_default();
    args.flags.apply(&mut cfg);
    let recorded = |key: &str| file.as_ref().and_then(|f| f.extra(key)).cloned();
    let schedulers: Vec<SchedulerKind> = match (&args.schedulers, recorded("schedulers")) {
        (Some(s), _) => s.clone(),
        (None, Some(v)) => serde_json::from_value(v).context("schedulers recorded in the manifest")?,
        (None, None) => SchedulerKind::ALL.to_vec(),
    };
    let seeds: Vec<u64> = match (&args.seeds, recorded("seeds")) {
        (Some(s), _) => s.0.clone(),
        (None, Some(v)) => serde_json::from_value(v).context("seeds recorded in the manifest")?,
        (None, None) => (1..=10).collect(),
    };
    if schedulers.is_empty() {
        return Err(usage("--schedulers needs at least one scheduler"));
    }
    if let Some(i) = (1..schedulers.len()).find(|&i| schedulers[..i].contains(&schedulers[i])) {
        return Err(usage(format!("--schedulers lists {} twice", schedulers[i])));
    }
    let splits = load_splits(&resolve_data_dir(&args.data, file.as_ref())?)?;
    replay_check(file.as_ref(), &splits);
    cfg.validate(splits.train.len())?;

    create_dir(&args.out)?;
    separate_from_data(&args.out, &splits)?;
    let path = |name: &str| args.out.join(name);
    let run_dir = |s: SchedulerKind, seed: u64| args.out.join("runs").join(format!("{s}-seed{seed}"));
    let mut outputs: Vec<PathBuf> = ["manifest.json", "compare.csv", "summary.json", "curves.csv"]
        .into_iter()
        .map(path)
        .collect();
    for &seed in &seeds {
        for &s in &schedulers {
            outputs.push(run_dir(s, seed).join("history.json"));
            outputs.push(run_dir(s, seed).join("metrics.json"));
        }
    }
    guard_outputs(&outputs, &input_paths(&args.config, &splits, &[]))?;

    let mut manifest = Manifest::new("compare", seeds[0], &cfg);
    manifest.extra.insert("data_dir".into(), json!(splits.dir));
    manifest.extra.insert("schedulers".into(), json!(schedulers));
    manifest.extra.insert("seeds".into(), json!(seeds));
    manifest.inputs = splits.files.clone();
    manifest.outputs = outputs;
    write_json(&path("manifest.json"), &manifest)?;

    let cmp = compare_runs(&splits.train, &splits.test, &cfg, &schedulers, &seeds)?;
    write_csv_file(&path("compare.csv"), |w| cmp.write_csv(w))?;
    write_csv_file(&path("curves.csv"), |w| cmp.write_curves_csv(w))?;
    write_json(
        &path("summary.json"),
        &json!({ "p1_epoch": cmp.p1_epoch, "schedulers": cmp.summary }),
    )?;
    for h in &cmp.histories {
        let dir = run_dir(h.scheduler, h.seed);
        create_dir(&dir)?;
        write_json(&dir.join("history.json"), h)?;
        write_json(&dir.join("metrics.json"), &run_metrics(h))?;
    }

    println!("P1 epoch {}", cmp.p1_epoch);
    for s in &cmp.summary {
        println!(
            "{:8} runs {:3}  P1 acc {:.4} ± {:.4}  final acc {:.4} ± {:.4}  map {:.4}  macro-f1 {:.4}",
            s.scheduler.to_string(),
            s.runs,
            s.p1_acc.mean,
            s.p1_acc.std,
            s.final_acc.mean,
            s.final_acc.std,
            s.final_map.mean,
            s.final_macro_f1.mean
        );
    }
    Ok(())
}

pub fn score(args: &ScoreArgs) -> Result<()> {
    let file = train_config_file(&args.config, "score")?;
    let mut cfg = file.as_ref().map(|f| f.config.clone()).unwrap_or_default();
    args.flags.apply(&mut cfg);
    let recorded = |key: &str| {
        file.as_ref()
            .and_then(|f| f.extra(key))
            .and_then(Value::as_str)
            .map(String::from)
    };
    let split = args
        .split
        .clone()
        .or_else(|| recorded("split"))
        .unwrap_or_else(|| "train".into());
    if split != "train" && split != "test" {
        return Err(usage(format!("--split must be train or test, got {split:?}")));
    }
    let checkpoint = args
        .checkpoint
        .clone()
        .or_else(|| recorded("checkpoint").map(PathBuf::from));
    let splits = load_splits(&resolve_data_dir(&args.data, file.as_ref())?)?;
    replay_check(file.as_ref(), &splits);

    create_dir(&args.out)?;
    separate_from_data(&args.out, &splits)?;
    let path = |name: &str| args.out.join(name);
    let outputs: Vec<PathBuf> = ["manifest.json", "scores.csv", "score_summary.json"]
        .into_iter()
        .map(path)
        .collect();
    let extra_inputs: Vec<&Path> = checkpoint.iter().map(PathBuf::as_path).collect();
    guard_outputs(&outputs, &input_paths(&args.config, &splits, &extra_inputs))?;

    let mut manifest = Manifest::new("score", cfg.seed, &cfg);
    manifest.extra.insert("data_dir".into(), json!(splits.dir));
    manifest.extra.insert("split".into(), json!(split));
    manifest.inputs = splits.files.clone();
    if let Some(ckpt) = &checkpoint {
        manifest.extra.insert("checkpoint".into(), json!(ckpt));
        manifest.inputs.push(InputFile::hash(ckpt)?);
    }
    manifest.outputs = outputs;
    write_json(&path("manifest.json"), &manifest)?;

    let model = match &checkpoint {
        Some(p) => ModelState::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?,
        None => prepare(&splits.train, &splits.test, &cfg, false)?.model,
    };
    let data = if split == "train" { &splits.train } else { &splits.test };
    let records = evaluate_balance_scores(&model, data, cfg.criterion, &cfg.objective(), cfg.grad_scope)?;
    write_csv_file(&path("scores.csv"), |w| write_score_csv(&records, w))?;

    let flags: Option<Vec<bool>> = data.samples.iter().map(|s| s.balanced).collect();
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    let auc = flags.as_ref().and_then(|f| roc_auc(&scores, f));
    let count = |want: bool| flags.as_ref().map(|f| f.iter().filter(|&&b| b == want).count());
    write_json(
        &path("score_summary.json"),
        &json!({
            "criterion": cfg.criterion,
            "split": split,
            "model": if checkpoint.is_some() { "checkpoint" } else { "warm-up" },
            "samples": records.len(),
            "balanced": count(true),
            "imbalanced": count(false),
            "auc": auc,
        }),
    )?;
    match auc {
        Some(a) => println!(
            "scored {} samples with {}; AUC vs ground truth {a:.4}",
            records.len(),
            cfg.criterion
        ),
        None => println!("scored {} samples with {}; AUC undefined", records.len(), cfg.criterion),
    }
    Ok(())
}
