//! Late-fusion inference and evaluation metrics.
//!
//! Prediction sums the fused logits and every uni-modal logit vector (optionally
//! weighted) and takes the argmax. Metrics:
//!
//! * accuracy: fraction of correct predictions;
//! * macro F1: unweighted mean of per-class `2TP / (2TP + FP + FN)`, with a
//!   class that has no true positives (including one never predicted and never
//!   present) scoring 0;
//! * MAP: for each class with at least one positive, rank all samples by that
//!   class's score (descending, ties by sample index) and average the precision
//!   at every positive hit; MAP is the mean of those per-class APs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::argmax;

#[derive(Debug, Clone, PartialEq)]
pub struct LogitBundle {
    pub multi: Vec<f64>,
    pub uni: Vec<Vec<f64>>,
    /// `[w_multi, w_uni_0, w_uni_1, ...]`; `None` means all ones.
    pub weights: Option<Vec<f64>>,
}

impl LogitBundle {
    pub fn new(multi: Vec<f64>, uni: Vec<Vec<f64>>) -> Self {
        LogitBundle {
            multi,
            uni,
            weights: None,
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = Some(weights);
        self
    }
}

/// `z_total = w₀·z_multi + Σ_j w_j·z_uni_j`
pub fn late_fusion(bundle: &LogitBundle) -> Result<Vec<f64>> {
    let classes = bundle.multi.len();
    if let Some((j, z)) = bundle.uni.iter().enumerate().find(|(_, z)| z.len() != classes) {
        return Err(Error::input(format!(
            "uni-modal logits {j} have length {}, fused logits have {classes}",
            z.len()
        )));
    }
    let ones;
    let weights = match &bundle.weights {
        Some(w) => {
            if w.len() != bundle.uni.len() + 1 {
                return Err(Error::input(format!(
                    "expected {} fusion weights, got {}",
                    bundle.uni.len() + 1,
                    w.len()
                )));
            }
            w.as_slice()
        }
        None => {
            ones = vec![1.0; bundle.uni.len() + 1];
            ones.as_slice()
        }
    };
    let mut total: Vec<f64> = bundle.multi.iter().map(|z| weights[0] * z).collect();
    for (z, &w) in bundle.uni.iter().zip(&weights[1..]) {
        for (t, v) in total.iter_mut().zip(z) {
            *t += w * v;
        }
    }
    Ok(total)
}

/// Argmax of the late-fused logits (softmax does not change it); ties go to the
/// lowest class index.
pub fn predict(bundle: &LogitBundle) -> Result<usize> {
    Ok(argmax(&late_fusion(bundle)?))
}

fn check_pair(preds: &[usize], labels: &[usize]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::input("no predictions to score"));
    }
    if preds.len() != labels.len() {
        return Err(Error::input(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_pair(preds, labels)?;
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / preds.len() as f64)
}

pub fn macro_f1(preds: &[usize], labels: &[usize], classes: usize) -> Result<f64> {
    check_pair(preds, labels)?;
    if classes < 2 {
        return Err(Error::input(format!("macro F1 needs >= 2 classes, got {classes}")));
    }
    if let Some(bad) = preds.iter().chain(labels).find(|&&c| c >= classes) {
        return Err(Error::input(format!("class {bad} out of range for {classes} classes")));
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[l] += 1;
        }
    }
    let total: f64 = (0..classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if tp[c] == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / classes as f64)
}

/// Class-wise mean average precision. `scores[i][c]` is sample `i`'s score for
/// class `c`.
pub fn mean_average_precision(scores: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::input(format!(
            "{} score rows but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let Some(classes) = scores.first().map(Vec::len) else {
        return Err(Error::input("no samples to score"));
    };
    if scores.iter().any(|row| row.len() != classes) {
        return Err(Error::input("score rows have differing lengths"));
    }
    if scores.iter().flatten().any(|s| !s.is_finite()) {
        return Err(Error::input("scores must be finite"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let mut aps = Vec::new();
    #[allow(clippy::needless_range_loop)]
    for c in 0..classes {
        let positives = labels.iter().filter(|&&l| l == c).count();
        if positives == 0 {
            continue;
        }
        order.sort_by(|&a, &b| scores[b][c].total_cmp(&scores[a][c]).then(a.cmp(&b)));
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        for (rank, &i) in order.iter().enumerate() {
            if labels[i] == c {
                hits += 1;
                precision_sum += hits as f64 / (rank + 1) as f64;
            }
        }
        aps.push(precision_sum / positives as f64);
    }
    if aps.is_empty() {
        return Err(Error::input("no class has a positive sample"));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Area under the ROC curve for `scores` ranking `positive` samples first
/// (Mann–Whitney statistic, ties count one half). `None` when either class is
/// empty.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // Average ranks handle ties.
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && scores[idx[end]] == scores[idx[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    let pos_rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerModality {
    pub acc: Vec<f64>,
}

/// Metric report written as `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub acc: f64,
    pub map: f64,
    pub macro_f1: f64,
    /// Accuracy of the fusion head alone, without late fusion.
    pub fused_head_acc: f64,
    pub per_modality: PerModality,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn late_fusion_examples() {
        let b = LogitBundle::new(vec![1.0, 0.0], vec![vec![0.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(late_fusion(&b).unwrap(), vec![2.0, 2.0]);
        let b = LogitBundle::new(vec![0.3, -1.0, 2.0], vec![vec![0.0; 3], vec![0.0; 3]]);
        assert_eq!(late_fusion(&b).unwrap(), vec![0.3, -1.0, 2.0]);
        let bad = LogitBundle::new(vec![1.0, 0.0], vec![vec![0.0]]);
        assert!(late_fusion(&bad).is_err());
        let bad_w = LogitBundle::new(vec![1.0, 0.0], vec![vec![0.0, 1.0]]).with_weights(vec![1.0]);
        assert!(late_fusion(&bad_w).is_err());
    }

    #[test]
    fn predict_examples() {
        assert_eq!(predict(&LogitBundle::new(vec![3.0, 1.0, 2.0], vec![])).unwrap(), 0);
        assert_eq!(predict(&LogitBundle::new(vec![1.0, 1.0], vec![])).unwrap(), 0);
        // every source one-hot on class 2
        let onehot = |k: usize| (0..4).map(|c| if c == k { 1.0 } else { 0.0 }).collect::<Vec<_>>();
        let b = LogitBundle::new(onehot(2), vec![onehot(2), onehot(2)]);
        assert_eq!(predict(&b).unwrap(), 2);
        let doubled = b.clone().with_weights(vec![2.0, 2.0, 2.0]);
        assert_eq!(predict(&doubled).unwrap(), 2);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_abs_diff_eq!(accuracy(&[0, 1, 1], &[0, 1, 0]).unwrap(), 2.0 / 3.0);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        assert_abs_diff_eq!(macro_f1(&[0, 0], &[0, 1], 2).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        // class 2 never predicted nor present: contributes 0
        assert_abs_diff_eq!(macro_f1(&[0, 1], &[0, 1], 3).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert!(macro_f1(&[0, 3], &[0, 1], 3).is_err());
    }

    #[test]
    fn map_examples() {
        // one class, positives {0, 2}, scores [0.9, 0.1, 0.5]: hits at ranks 1, 2
        let scores = vec![vec![0.9, 0.0], vec![0.1, 1.0], vec![0.5, 0.0]];
        let labels = [0, 1, 0];
        // class 0 AP = 1, class 1: sample 1 ranked first → AP = 1
        assert_eq!(mean_average_precision(&scores, &labels).unwrap(), 1.0);

        // single positive column: hits at ranks 1 and 3 of 3 → (1 + 2/3) / 2
        let scores = vec![vec![0.9, 0.0], vec![0.5, 0.0], vec![0.1, 0.0]];
        let labels = [0, 1, 0];
        let map = mean_average_precision(&scores, &labels).unwrap();
        // class 1 (only sample 1) ranked by ties → index order → rank 2 → AP 1/2
        assert_abs_diff_eq!(map, (5.0 / 6.0 + 0.5) / 2.0, epsilon = 1e-15);

        assert!(mean_average_precision(&[], &[]).is_err());
        assert!(mean_average_precision(&[vec![f64::NAN]], &[0]).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.1], &[true, true, false]), Some(1.0));
        assert_eq!(roc_auc(&[0.1, 0.8, 0.9], &[true, true, false]), Some(0.0));
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert_eq!(roc_auc(&[0.5, 0.4], &[true, true]), None);
    }

    proptest! {
        #[test]
        fn late_fusion_ignores_modality_order(
            multi in prop::collection::vec(-5.0f64..5.0, 4),
            a in prop::collection::vec(-5.0f64..5.0, 4),
            b in prop::collection::vec(-5.0f64..5.0, 4),
        ) {
            let ab = late_fusion(&LogitBundle::new(multi.clone(), vec![a.clone(), b.clone()])).unwrap();
            let ba = late_fusion(&LogitBundle::new(multi, vec![b, a])).unwrap();
            for (x, y) in ab.iter().zip(&ba) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn map_is_invariant_to_increasing_transforms(
            rows in prop::collection::vec((prop::collection::vec(-3.0f64..3.0, 3), 0usize..3), 1..15),
        ) {
            let scores: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
            let labels: Vec<usize> = rows.iter().map(|r| r.1).collect();
            let transformed: Vec<Vec<f64>> = scores
                .iter()
                .map(|r| r.iter().map(|s| s.exp() * 3.0 + 1.0).collect())
                .collect();
            prop_assert_eq!(
                mean_average_precision(&scores, &labels).unwrap(),
                mean_average_precision(&transformed, &labels).unwrap()
            );
        }

        #[test]
        fn metrics_lie_in_unit_interval(
            pairs in prop::collection::vec((0usize..4, 0usize..4), 1..30),
        ) {
            let preds: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let labels: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let acc = accuracy(&preds, &labels).unwrap();
            let f1 = macro_f1(&preds, &labels, 4).unwrap();
            prop_assert!((0.0..=1.0).contains(&acc));
            prop_assert!((0.0..=1.0).contains(&f1));
        }
    }
}
