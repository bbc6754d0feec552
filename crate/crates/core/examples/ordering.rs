//! Compares vanilla, heuristic, anti-curriculum and learning-based schedules
//! on a synthetic corrupted dataset and prints the summary table.
//!
//! Knobs come from the environment, e.g.
//! `DIMS=2,8 SEEDS=10 HIDDEN=128 cargo run --release -p bss-core --example ordering`

use std::env;
use std::str::FromStr;

use bss::datagen::{generate, SynthConfig};
use bss::evalkit::roc_auc;
use bss::measurer::evaluate_balance_scores;
use bss::scheduler::SchedulerKind;
use bss::trainer::{compare_runs, prepare, TrainConfig};

fn knob<T: FromStr>(name: &str, default: T) -> T {
    env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> bss::Result<()> {
    let dims: Vec<usize> = env::var("DIMS")
        .unwrap_or_else(|_| "2,8".into())
        .split(',')
        .map(|d| d.parse().expect("DIMS is a comma list"))
        .collect();
    let defaults = TrainConfig::default();
    let data = SynthConfig {
        dims,
        seed: knob("DATA_SEED", 0),
        train_fraction: knob("SPLIT", 0.8),
        ..SynthConfig::default()
    };
    let (train, test) = generate(&data)?;
    let base = TrainConfig {
        batch_size: knob("BATCH", defaults.batch_size),
        hidden: knob("HIDDEN", defaults.hidden),
        embed: knob("EMBED", defaults.embed),
        lr: knob("LR", defaults.lr),
        warmup_epochs: knob("WARMUP", defaults.warmup_epochs),
        ..defaults
    };

    let prepared = prepare(&train, &test, &base, false)?;
    let scores = evaluate_balance_scores(
        &prepared.model,
        &train,
        base.criterion,
        &base.objective(),
        base.grad_scope,
    )?;
    let balanced: Vec<bool> = train.samples.iter().map(|s| s.balanced == Some(true)).collect();
    let s: Vec<f64> = scores.iter().map(|r| r.score).collect();
    println!("auc after warm-up: {:?}", roc_auc(&s, &balanced));

    let seeds: Vec<u64> = (1..=knob("SEEDS", 5u64)).collect();
    let cmp = compare_runs(&train, &test, &base, &SchedulerKind::ALL, &seeds)?;
    for s in &cmp.summary {
        println!(
            "{:8} p1 {:.4} ± {:.4}  final {:.4} ± {:.4}  map {:.4}  f1 {:.4}",
            s.scheduler,
            s.p1_acc.mean,
            s.p1_acc.std,
            s.final_acc.mean,
            s.final_acc.std,
            s.final_map.mean,
            s.final_macro_f1.mean
        );
    }
    let h: Vec<f64> = cmp.rows_for(SchedulerKind::Heuristic).map(|r| r.final_acc).collect();
    let a: Vec<f64> = cmp
        .rows_for(SchedulerKind::AntiHeuristic)
        .map(|r| r.final_acc)
        .collect();
    let wins = h.iter().zip(&a).filter(|(h, a)| h > a).count();
    println!("bss-h > anti in {wins}/{} seeds", h.len());
    Ok(())
}
