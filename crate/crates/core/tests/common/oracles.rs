//! Brute-force metric oracles, written independently of `bss::evalkit`.

#![allow(clippy::needless_range_loop)]

use bss::numkit::SeededRng;

/// Macro F1 from an explicit confusion matrix (rows = truth, cols = prediction).
pub fn macro_f1_oracle(preds: &[usize], labels: &[usize], classes: usize) -> f64 {
    let mut cm = vec![vec![0usize; classes]; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        cm[l][p] += 1;
    }
    let mut total = 0.0;
    for c in 0..classes {
        let tp = cm[c][c];
        let fp = (0..classes).map(|r| cm[r][c]).sum::<usize>() - tp;
        let fn_ = cm[c].iter().sum::<usize>() - tp;
        if tp > 0 {
            total += 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
        }
    }
    total / classes as f64
}

/// Class-wise AP over a ranked list where each item's rank is counted directly:
/// items ahead of `i` are those with a higher score, or an equal score and a
/// smaller index.
pub fn map_oracle(scores: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = labels.len();
    let classes = scores[0].len();
    let mut aps = Vec::new();
    for c in 0..classes {
        let ahead = |i: usize, j: usize| scores[j][c] > scores[i][c] || (scores[j][c] == scores[i][c] && j < i);
        let mut pos_ranks: Vec<usize> = (0..n)
            .filter(|&i| labels[i] == c)
            .map(|i| 1 + (0..n).filter(|&j| ahead(i, j)).count())
            .collect();
        if pos_ranks.is_empty() {
            continue;
        }
        pos_ranks.sort_unstable();
        let sum: f64 = pos_ranks
            .iter()
            .enumerate()
            .map(|(k, &r)| (k + 1) as f64 / r as f64)
            .sum();
        aps.push(sum / pos_ranks.len() as f64);
    }
    aps.iter().sum::<f64>() / aps.len() as f64
}

pub struct MetricCase {
    pub classes: usize,
    pub labels: Vec<usize>,
    pub preds: Vec<usize>,
    pub scores: Vec<Vec<f64>>,
}

/// Random instance with n ≤ 20, c ≤ 5; scores are coarse so ties are common.
pub fn random_case(rng: &mut SeededRng) -> MetricCase {
    let classes = 2 + rng.index(4);
    let n = 1 + rng.index(20);
    let coarse = rng.uniform() < 0.5;
    MetricCase {
        classes,
        labels: (0..n).map(|_| rng.index(classes)).collect(),
        preds: (0..n).map(|_| rng.index(classes)).collect(),
        scores: (0..n)
            .map(|_| {
                (0..classes)
                    .map(|_| if coarse { rng.index(3) as f64 } else { rng.normal() })
                    .collect()
            })
            .collect(),
    }
}
