//! `bss`: generate synthetic data, score samples, train with a scheduler, and
//! compare schedulers over seeds.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bss::datagen::CorruptionMode;
use bss::measurer::CriterionKind;
use bss::mmnet::GradScope;
use bss::scheduler::{PacingKind, SchedulerKind};
use bss::trainer::TrainConfig;

#[derive(Parser, Debug)]
#[command(
    name = "bss",
    version,
    about = "Balance-aware sequence sampling for multi-modal training"
)]
struct Cli {
    /// Worker threads for scoring, evaluation and parallel runs [default: all cores].
    /// Results do not depend on this value.
    #[arg(long, global = true, value_parser = clap::value_parser!(usize))]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic two-split dataset with a corrupted modality.
    GenData(GenDataArgs),
    /// Train one model with the selected scheduler.
    Train(TrainArgs),
    /// Train every scheduler on every seed and summarize.
    Compare(CompareArgs),
    /// Score every sample of a split with the balance measurer.
    Score(ScoreArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// JSON data config, or a gen-data manifest to replay; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of classes [default: 6].
    #[arg(long)]
    pub classes: Option<usize>,
    /// Feature dimension per modality, comma separated [default: 2,8].
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    /// Total number of samples before the split [default: 2000].
    #[arg(long)]
    pub n: Option<usize>,
    /// Noise scale per modality, comma separated [default: 0.3,1.0].
    #[arg(long, value_delimiter = ',', value_parser = parse_non_negative)]
    pub noise: Option<Vec<f64>>,
    /// Fraction of training samples with one corrupted modality [default: 0.3].
    #[arg(long, value_parser = parse_unit)]
    pub rho: Option<f64>,
    /// Corruption kind: cross-class or pure-noise [default: cross-class].
    #[arg(long, value_parser = parse_from_str::<CorruptionMode>)]
    pub corruption: Option<CorruptionMode>,
    /// Random seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fraction of samples in the training split [default: 0.8].
    #[arg(long, value_parser = parse_unit)]
    pub train_fraction: Option<f64>,
    /// Output directory for train.jsonl, test.jsonl and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

/// Hyper-parameters shared by `train`, `compare` and `score`. Unset flags
/// fall back to the config file, then to the built-in defaults.
#[derive(Args, Debug, Default)]
pub struct TrainFlags {
    /// Balance criterion: predsim, featsim, loss, gradmag, predsim-loss,
    /// predsim-gradmag, featsim-loss, featsim-gradmag [default: predsim-loss].
    #[arg(long, value_parser = parse_from_str::<CriterionKind>)]
    pub criterion: Option<CriterionKind>,
    /// Pacing function: root, root-3, root-5, linear, geometric, baby-step[:bins] [default: root].
    #[arg(long, value_parser = parse_from_str::<PacingKind>)]
    pub pacing: Option<PacingKind>,
    /// Weight of the uni-modal loss terms [default: 0.2].
    #[arg(long, value_parser = parse_unit)]
    pub alpha: Option<f64>,
    /// Moving-average weight of fresh scores, learning scheduler [default: 0.6].
    #[arg(long, value_parser = parse_unit)]
    pub beta: Option<f64>,
    /// Initial data fraction of the pacing function [default: 0.1].
    #[arg(long, value_parser = parse_unit)]
    pub lambda0: Option<f64>,
    /// Epoch at which pacing reaches the whole dataset [default: 40].
    #[arg(long)]
    pub t_grow: Option<usize>,
    /// Re-scoring interval in epochs, learning scheduler [default: 5].
    #[arg(long)]
    pub interval: Option<usize>,
    /// Learning rate [default: 0.01].
    #[arg(long, value_parser = parse_positive)]
    pub lr: Option<f64>,
    /// SGD momentum [default: 0.9].
    #[arg(long, value_parser = parse_unit)]
    pub momentum: Option<f64>,
    /// L2 weight decay [default: 0.0001].
    #[arg(long, value_parser = parse_non_negative)]
    pub weight_decay: Option<f64>,
    /// Minibatch size [default: 16].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Scheduled training epochs T [default: 60].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Uniform warm-up epochs before the first scoring pass [default: 1].
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    /// Random seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Encoder hidden width [default: 64].
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Embedding width per modality [default: 16].
    #[arg(long)]
    pub embed: Option<usize>,
    /// Parameters entering the gradient-magnitude criterion: heads-only or all-parameters [default: heads-only].
    #[arg(long, value_parser = parse_from_str::<GradScope>)]
    pub grad_scope: Option<GradScope>,
    /// Stop uni-modal loss gradients at the uni-modal heads [default: off].
    #[arg(long)]
    pub detach_uni_heads: bool,
    /// Late-fusion weights: fused head first, then one per modality [default: all 1].
    #[arg(long, value_delimiter = ',')]
    pub fusion_weights: Option<Vec<f64>>,
    /// Truncate each learning-scheduler epoch to this many samples [default: whole set].
    #[arg(long)]
    pub epoch_size: Option<usize>,
}

impl TrainFlags {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        set!(
            criterion,
            pacing,
            alpha,
            beta,
            lambda0,
            t_grow,
            interval,
            lr,
            momentum,
            weight_decay,
            batch_size,
            epochs,
            warmup_epochs,
            seed,
            hidden,
            embed,
            grad_scope
        );
        if self.detach_uni_heads {
            cfg.detach_uni_heads = true;
        }
        if let Some(w) = &self.fusion_weights {
            cfg.fusion_weights = Some(w.clone());
        }
        if let Some(size) = self.epoch_size {
            cfg.epoch_size = Some(size);
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Scheduler: vanilla, bss-h, anti or bss-l [default: vanilla].
    #[arg(long, value_parser = parse_from_str::<SchedulerKind>)]
    pub scheduler: Option<SchedulerKind>,
    /// Directory holding train.jsonl and test.jsonl [default: taken from --config manifest].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// JSON training config, or a train manifest to replay; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Comma-separated schedulers [default: vanilla,bss-h,anti,bss-l].
    #[arg(long, value_delimiter = ',', value_parser = parse_from_str::<SchedulerKind>)]
    pub schedulers: Option<Vec<SchedulerKind>>,
    /// Seeds as a list and/or inclusive ranges, e.g. `1..10` or `1,4,7..9` [default: 1..10].
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<Seeds>,
    /// Directory holding train.jsonl and test.jsonl [default: taken from --config manifest].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// JSON training config, or a compare manifest to replay; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Directory holding train.jsonl and test.jsonl [default: taken from --config manifest].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Split to score: train or test [default: train].
    #[arg(long, value_parser = ["train", "test"])]
    pub split: Option<String>,
    /// Model checkpoint to score with [default: fresh model after the warm-up epochs].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// JSON training config, or a score manifest to replay; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Output directory for scores.csv, score_summary.json and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seeds(pub Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let mut seeds = Vec::new();
    for part in s.split(',').map(str::trim) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a
                .trim()
                .parse()
                .map_err(|e| format!("bad range start in {part:?}: {e}"))?;
            let b: u64 = b
                .trim()
                .parse()
                .map_err(|e| format!("bad range end in {part:?}: {e}"))?;
            if a > b {
                return Err(format!("empty range {part:?}"));
            }
            seeds.extend(a..=b);
        } else {
            seeds.push(part.parse().map_err(|e| format!("bad seed {part:?}: {e}"))?);
        }
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = seeds.iter().find(|s| !seen.insert(**s)) {
        return Err(format!("seed {dup} listed twice"));
    }
    Ok(Seeds(seeds))
}

fn parse_from_str<T: std::str::FromStr<Err = bss::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: bss::Error| e.to_string())
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if !v.is_finite() {
        return Err("must be finite".into());
    }
    Ok(v)
}

fn parse_unit(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if !(0.0..=1.0).contains(&v) {
        return Err(format!("{v} must lie in [0, 1]"));
    }
    Ok(v)
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v <= 0.0 {
        return Err(format!("{v} must be > 0"));
    }
    Ok(v)
}

fn parse_non_negative(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v < 0.0 {
        return Err(format!("{v} must be >= 0"));
    }
    Ok(v)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 {
            clap::Error::raw(clap::error::ErrorKind::ValueValidation, "--workers must be >= 1\n").exit();
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("the global thread pool is configured once");
    }
    let result = match &cli.command {
        Command::GenData(args) => commands::gen_data(args),
        Command::Train(args) => commands::train(args),
        Command::Compare(args) => commands::compare(args),
        Command::Score(args) => commands::score(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<commands::UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
