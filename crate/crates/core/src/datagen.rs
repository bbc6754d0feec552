//! Synthetic multi-modal data with known per-sample balance, plus the JSONL
//! dataset format.
//!
//! Every class `c` has a prototype `μ_c^(j) ~ N(0, I)` in each modality `j`; a
//! clean sample of class `y` is `μ_y^(j) + σ_j·ε`. A fixed `⌊ρ·n_train⌋` of the
//! training samples are corrupted in exactly one (uniformly chosen) modality
//! and flagged `balanced = false`. Test samples are never corrupted.
//!
//! # JSONL layout
//!
//! ```text
//! {"format":"bss-dataset","version":1,"classes":6,"modalities":2,"dims":[8,8]}
//! {"id":0,"label":3,"balanced":true,"mods":[[...],[...]]}
//! ...
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::SeededRng;

pub const DATASET_FORMAT: &str = "bss-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionMode {
    /// The corrupted modality shows a wrong class's prototype (plus the usual noise).
    #[default]
    CrossClass,
    /// The corrupted modality is replaced by noise with the clean data's scale.
    PureNoise,
}

impl FromStr for CorruptionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross-class" => Ok(CorruptionMode::CrossClass),
            "pure-noise" => Ok(CorruptionMode::PureNoise),
            other => Err(Error::input(format!(
                "unknown corruption mode {other:?} (expected cross-class or pure-noise)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    /// Feature dimension of each modality.
    pub dims: Vec<usize>,
    /// Total samples, before the train/test split.
    pub n: usize,
    /// Noise scale per modality; a smaller value makes the stronger modality.
    pub noise: Vec<f64>,
    /// Fraction of training samples corrupted in one modality.
    pub rho: f64,
    pub corruption: CorruptionMode,
    pub seed: u64,
    pub train_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 6,
            dims: vec![2, 8],
            n: 2000,
            noise: vec![0.3, 1.0],
            rho: 0.3,
            corruption: CorruptionMode::CrossClass,
            seed: 0,
            train_fraction: 0.8,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::input(format!("classes must be >= 2, got {}", self.classes)));
        }
        if self.dims.len() < 2 {
            return Err(Error::input(format!("need >= 2 modalities, got {}", self.dims.len())));
        }
        if self.dims.contains(&0) {
            return Err(Error::input("every modality needs >= 1 feature"));
        }
        if self.noise.len() != self.dims.len() {
            return Err(Error::input(format!(
                "{} noise scales for {} modalities",
                self.noise.len(),
                self.dims.len()
            )));
        }
        if self.noise.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::input("noise scales must be positive"));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::input(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::input(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        let (train, test) = self.split_sizes();
        if train == 0 || test == 0 {
            return Err(Error::input(format!(
                "n = {} with train fraction {} leaves an empty split",
                self.n, self.train_fraction
            )));
        }
        Ok(())
    }

    pub fn split_sizes(&self) -> (usize, usize) {
        let train = ((self.n as f64) * self.train_fraction).floor() as usize;
        (train, self.n - train)
    }

    /// `⌊ρ · n_train⌋`
    pub fn corrupted_count(&self) -> usize {
        let (train, _) = self.split_sizes();
        // guard against 0.3 * 1000 landing a hair under 300
        ((self.rho * train as f64) + 1e-9).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub classes: usize,
    pub dims: Vec<usize>,
}

impl DatasetHeader {
    pub fn modalities(&self) -> usize {
        self.dims.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiModalSample {
    pub id: u64,
    pub label: usize,
    /// Ground-truth balance flag; only synthetic data has one.
    pub balanced: Option<bool>,
    pub mods: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<MultiModalSample>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    format: String,
    version: u32,
    classes: usize,
    modalities: usize,
    dims: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_jsonl(&mut out)
            .and_then(|_| out.flush().map_err(|e| Error::io(path, e)))
    }

    pub fn write_jsonl<W: Write>(&self, out: &mut W) -> Result<()> {
        let header = HeaderLine {
            format: DATASET_FORMAT.to_string(),
            version: DATASET_VERSION,
            classes: self.header.classes,
            modalities: self.header.modalities(),
            dims: self.header.dims.clone(),
        };
        let io_err = |e| Error::io("<dataset writer>", e);
        serde_json::to_writer(&mut *out, &header)?;
        out.write_all(b"\n").map_err(io_err)?;
        for s in &self.samples {
            serde_json::to_writer(&mut *out, s)?;
            out.write_all(b"\n").map_err(io_err)?;
        }
        Ok(())
    }

    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(BufReader::new(file))
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => {
                let line = line.map_err(|e| Error::io("<dataset reader>", e))?;
                let h: HeaderLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: 1,
                    message: format!("bad header: {e}"),
                })?;
                if h.format != DATASET_FORMAT || h.version != DATASET_VERSION {
                    return Err(Error::Format(format!(
                        "unsupported dataset {} v{} (expected {DATASET_FORMAT} v{DATASET_VERSION})",
                        h.format, h.version
                    )));
                }
                if h.modalities != h.dims.len() {
                    return Err(Error::Format(format!(
                        "header declares {} modalities but {} dims",
                        h.modalities,
                        h.dims.len()
                    )));
                }
                DatasetHeader {
                    classes: h.classes,
                    dims: h.dims,
                }
            }
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "empty file, missing header".into(),
                })
            }
        };

        let mut samples = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::io("<dataset reader>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let s: MultiModalSample = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            if s.mods.len() != header.modalities() {
                return Err(Error::Format(format!(
                    "line {lineno}: {} modality arrays, header declares {}",
                    s.mods.len(),
                    header.modalities()
                )));
            }
            for (j, (x, &d)) in s.mods.iter().zip(&header.dims).enumerate() {
                if x.len() != d {
                    return Err(Error::Format(format!(
                        "line {lineno}: modality {j} has {} features, header declares {d}",
                        x.len()
                    )));
                }
            }
            if s.label >= header.classes {
                return Err(Error::Format(format!(
                    "line {lineno}: label {} out of range for {} classes",
                    s.label, header.classes
                )));
            }
            samples.push(s);
        }
        Ok(Dataset { header, samples })
    }
}

const STREAM_PROTOTYPES: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_CORRUPTION: u64 = 2;
const STREAM_TEST: u64 = 3;

/// Draws a `(train, test)` pair.
pub fn generate(config: &SynthConfig) -> Result<(Dataset, Dataset)> {
    config.validate()?;
    let m = config.dims.len();
    let header = DatasetHeader {
        classes: config.classes,
        dims: config.dims.clone(),
    };

    let mut proto_rng = SeededRng::stream(config.seed, STREAM_PROTOTYPES);
    // prototypes[c][j]
    let prototypes: Vec<Vec<Vec<f64>>> = (0..config.classes)
        .map(|_| {
            config
                .dims
                .iter()
                .map(|&d| (0..d).map(|_| proto_rng.normal()).collect())
                .collect()
        })
        .collect();

    let draw = |label: usize, rng: &mut SeededRng| -> Vec<Vec<f64>> {
        (0..m)
            .map(|j| {
                prototypes[label][j]
                    .iter()
                    .map(|&mu| mu + config.noise[j] * rng.normal())
                    .collect()
            })
            .collect()
    };

    let (n_train, n_test) = config.split_sizes();
    let mut rng = SeededRng::stream(config.seed, STREAM_TRAIN);
    let mut train: Vec<MultiModalSample> = (0..n_train)
        .map(|i| {
            let label = rng.index(config.classes);
            MultiModalSample {
                id: i as u64,
                label,
                balanced: Some(true),
                mods: draw(label, &mut rng),
            }
        })
        .collect();

    let mut rng = SeededRng::stream(config.seed, STREAM_CORRUPTION);
    let mut order: Vec<usize> = (0..n_train).collect();
    rng.shuffle(&mut order);
    for &i in &order[..config.corrupted_count()] {
        let sample = &mut train[i];
        let j = rng.index(m);
        let sigma = config.noise[j];
        sample.mods[j] = match config.corruption {
            CorruptionMode::CrossClass => {
                // uniform over the other classes
                let mut wrong = rng.index(config.classes - 1);
                if wrong >= sample.label {
                    wrong += 1;
                }
                prototypes[wrong][j]
                    .iter()
                    .map(|&mu| mu + sigma * rng.normal())
                    .collect()
            }
            CorruptionMode::PureNoise => {
                let scale = (1.0 + sigma * sigma).sqrt();
                (0..config.dims[j]).map(|_| scale * rng.normal()).collect()
            }
        };
        sample.balanced = Some(false);
    }

    let mut rng = SeededRng::stream(config.seed, STREAM_TEST);
    let test = (0..n_test)
        .map(|i| {
            let label = rng.index(config.classes);
            MultiModalSample {
                id: (n_train + i) as u64,
                label,
                balanced: Some(true),
                mods: draw(label, &mut rng),
            }
        })
        .collect();

    Ok((
        Dataset {
            header: header.clone(),
            samples: train,
        },
        Dataset { header, samples: test },
    ))
}
