//! Per-sample balance scoring.
//!
//! A balance score combines a *correlation* criterion (how much the modalities
//! agree) with an *information* criterion (how hard the sample is for the
//! current model):
//!
//! ```text
//! s(x) = Norm(correlation(x)) − Norm(information(x))
//! ```
//!
//! `Norm` is min–max scaling over the whole dataset, so `s ∈ [−1, 1]` and a
//! higher score means a more balanced sample. Single-criterion kinds return
//! `+Norm(similarity)` or `−Norm(information)` so that the same orientation
//! holds. With more than two modalities the correlation is the mean cosine
//! over all unordered modality pairs.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::mmnet::{total_loss, ForwardTrace, GradScope, ModelState, Objective};
use crate::numkit::{cosine_similarity, min_max_normalize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum CriterionKind {
    #[serde(rename = "predsim")]
    PredSim,
    #[serde(rename = "featsim")]
    FeatSim,
    #[serde(rename = "loss")]
    Loss,
    #[serde(rename = "gradmag")]
    GradMag,
    #[default]
    #[serde(rename = "predsim-loss")]
    PredSimLoss,
    #[serde(rename = "predsim-gradmag")]
    PredSimGradMag,
    #[serde(rename = "featsim-loss")]
    FeatSimLoss,
    #[serde(rename = "featsim-gradmag")]
    FeatSimGradMag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Correlation {
    Prediction,
    Feature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Information {
    Loss,
    GradMagnitude,
}

impl CriterionKind {
    pub const ALL: [CriterionKind; 8] = [
        CriterionKind::PredSim,
        CriterionKind::FeatSim,
        CriterionKind::Loss,
        CriterionKind::GradMag,
        CriterionKind::PredSimLoss,
        CriterionKind::PredSimGradMag,
        CriterionKind::FeatSimLoss,
        CriterionKind::FeatSimGradMag,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CriterionKind::PredSim => "predsim",
            CriterionKind::FeatSim => "featsim",
            CriterionKind::Loss => "loss",
            CriterionKind::GradMag => "gradmag",
            CriterionKind::PredSimLoss => "predsim-loss",
            CriterionKind::PredSimGradMag => "predsim-gradmag",
            CriterionKind::FeatSimLoss => "featsim-loss",
            CriterionKind::FeatSimGradMag => "featsim-gradmag",
        }
    }

    fn correlation(self) -> Option<Correlation> {
        use CriterionKind::*;
        match self {
            PredSim | PredSimLoss | PredSimGradMag => Some(Correlation::Prediction),
            FeatSim | FeatSimLoss | FeatSimGradMag => Some(Correlation::Feature),
            Loss | GradMag => None,
        }
    }

    fn information(self) -> Option<Information> {
        use CriterionKind::*;
        match self {
            Loss | PredSimLoss | FeatSimLoss => Some(Information::Loss),
            GradMag | PredSimGradMag | FeatSimGradMag => Some(Information::GradMagnitude),
            PredSim | FeatSim => None,
        }
    }
}

impl fmt::Display for CriterionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CriterionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CriterionKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = CriterionKind::ALL.iter().map(|k| k.name()).collect();
            Error::input(format!(
                "unknown criterion {s:?} (expected one of {})",
                names.join(", ")
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRecord {
    pub sample_index: usize,
    /// Raw similarity, when the criterion has a correlation part.
    pub correlation_raw: Option<f64>,
    /// Raw loss or gradient norm, when the criterion has an information part.
    pub information_raw: Option<f64>,
    pub score: f64,
}

fn mean_pairwise_cosine<'a>(vectors: impl Iterator<Item = &'a [f64]>) -> Result<f64> {
    let vs: Vec<&[f64]> = vectors.collect();
    if vs.len() < 2 {
        return Err(Error::input(format!(
            "similarity needs >= 2 modalities, got {}",
            vs.len()
        )));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..vs.len() {
        for b in a + 1..vs.len() {
            total += cosine_similarity(vs[a], vs[b])?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Cosine similarity of the uni-modal prediction vectors (mean over pairs when
/// there are more than two modalities).
pub fn prediction_similarity(trace: &ForwardTrace) -> Result<f64> {
    mean_pairwise_cosine(trace.uni_probs())
}

/// Cosine similarity of the per-modality embeddings.
pub fn feature_similarity(trace: &ForwardTrace) -> Result<f64> {
    mean_pairwise_cosine(trace.embeddings())
}

/// Scores every sample with a frozen model.
pub fn evaluate_balance_scores(
    model: &ModelState,
    dataset: &Dataset,
    criterion: CriterionKind,
    objective: &Objective,
    grad_scope: GradScope,
) -> Result<Vec<BalanceRecord>> {
    if dataset.is_empty() {
        return Err(Error::input("cannot score an empty dataset"));
    }
    let raw: Vec<RawCriteria> = dataset
        .samples
        .par_iter()
        .map(|sample| -> Result<RawCriteria> {
            let needs_full_grad =
                criterion.information() == Some(Information::GradMagnitude) && grad_scope == GradScope::AllParameters;
            let trace = model.forward(&sample.mods)?;
            let corr = match criterion.correlation() {
                Some(Correlation::Prediction) => Some(prediction_similarity(&trace)?),
                Some(Correlation::Feature) => Some(feature_similarity(&trace)?),
                None => None,
            };
            let info = match criterion.information() {
                Some(Information::Loss) => Some(total_loss(&trace, sample.label, objective.alpha)?),
                Some(Information::GradMagnitude) if needs_full_grad => Some(model.per_sample_gradient_norm(
                    &sample.mods,
                    sample.label,
                    objective,
                    GradScope::AllParameters,
                )?),
                Some(Information::GradMagnitude) => {
                    Some(model.heads_gradient_norm(&trace, sample.label, objective.alpha)?)
                }
                None => None,
            };
            Ok((corr, info))
        })
        .collect::<Result<_>>()?;

    combine(&raw)
}

/// Raw `(correlation, information)` values of one sample; either may be absent.
pub type RawCriteria = (Option<f64>, Option<f64>);

/// Normalizes and combines raw `(correlation, information)` pairs.
pub fn combine(raw: &[RawCriteria]) -> Result<Vec<BalanceRecord>> {
    if raw.is_empty() {
        return Err(Error::input("cannot score an empty dataset"));
    }
    let column = |pick: fn(&RawCriteria) -> Option<f64>| -> Result<Option<Vec<f64>>> {
        let values: Option<Vec<f64>> = raw.iter().map(pick).collect();
        values.map(|v| min_max_normalize(&v)).transpose()
    };
    let corr = column(|r| r.0)?;
    let info = column(|r| r.1)?;

    Ok(raw
        .iter()
        .enumerate()
        .map(|(i, &(c, inf))| {
            let score = match (&corr, &info) {
                (Some(c), Some(inf)) => c[i] - inf[i],
                (Some(c), None) => c[i],
                (None, Some(inf)) => -inf[i],
                (None, None) => 0.0,
            };
            BalanceRecord {
                sample_index: i,
                correlation_raw: c,
                information_raw: inf,
                score,
            }
        })
        .collect())
}

/// Sample indices by descending score; equal scores keep ascending index order.
pub fn rank_by_balance(records: &[BalanceRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[b]
            .score
            .total_cmp(&records[a].score)
            .then(records[a].sample_index.cmp(&records[b].sample_index))
    });
    order.into_iter().map(|i| records[i].sample_index).collect()
}

/// Writes the `sample_index,correlation_raw,information_raw,balance_score,rank`
/// dump. `rank` is the 0-based position in the ranking.
pub fn write_score_csv<W: Write>(records: &[BalanceRecord], out: W) -> Result<()> {
    let ranking = rank_by_balance(records);
    let mut position = vec![0usize; records.len()];
    for (pos, &idx) in ranking.iter().enumerate() {
        position[idx] = pos;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "sample_index",
        "correlation_raw",
        "information_raw",
        "balance_score",
        "rank",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.sample_index.to_string(),
            opt(r.correlation_raw),
            opt(r.information_raw),
            r.score.to_string(),
            position[r.sample_index].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<score csv>", e))?;
    Ok(())
}
