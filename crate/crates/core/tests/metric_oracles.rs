mod common;

use bss::evalkit::{macro_f1, mean_average_precision, roc_auc};
use bss::numkit::SeededRng;
use common::oracles::{macro_f1_oracle, map_oracle, random_case};

#[test]
fn macro_f1_matches_confusion_matrix_oracle() {
    let mut rng = SeededRng::new(2024);
    for k in 0..200 {
        let case = random_case(&mut rng);
        let got = macro_f1(&case.preds, &case.labels, case.classes).unwrap();
        let want = macro_f1_oracle(&case.preds, &case.labels, case.classes);
        assert_eq!(got.to_bits(), want.to_bits(), "case {k}: {got} vs {want}");
    }
}

#[test]
fn map_matches_ranked_list_oracle() {
    let mut rng = SeededRng::new(2025);
    for k in 0..200 {
        let case = random_case(&mut rng);
        let got = mean_average_precision(&case.scores, &case.labels).unwrap();
        let want = map_oracle(&case.scores, &case.labels);
        assert_eq!(got.to_bits(), want.to_bits(), "case {k}: {got} vs {want}");
    }
}

#[test]
fn auc_matches_pair_counting() {
    let mut rng = SeededRng::new(7);
    for _ in 0..200 {
        let n = 2 + rng.index(30);
        let scores: Vec<f64> = (0..n).map(|_| rng.index(5) as f64).collect();
        let pos: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.4).collect();
        let (np, nn) = (pos.iter().filter(|&&p| p).count(), pos.iter().filter(|&&p| !p).count());
        let got = roc_auc(&scores, &pos);
        if np == 0 || nn == 0 {
            assert_eq!(got, None);
            continue;
        }
        let mut wins = 0.0;
        for i in (0..n).filter(|&i| pos[i]) {
            for j in (0..n).filter(|&j| !pos[j]) {
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let want = wins / (np * nn) as f64;
        assert!((got.unwrap() - want).abs() < 1e-12);
    }
}
