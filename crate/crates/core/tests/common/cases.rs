//! Random datasets and models for the round-trip tests.

use bss::datagen::{Dataset, DatasetHeader, MultiModalSample};
use bss::mmnet::{ModelDims, ModelState};
use bss::numkit::SeededRng;

/// Mostly ordinary values, with occasional hard cases for decimal printing.
fn awkward_float(rng: &mut SeededRng) -> f64 {
    const SPECIAL: [f64; 8] = [
        0.0,
        -0.0,
        5e-324,
        f64::MIN_POSITIVE,
        1e308,
        -1.7976931348623157e308,
        0.1,
        1.0 / 3.0,
    ];
    match rng.index(10) {
        0 => SPECIAL[rng.index(SPECIAL.len())],
        1 => rng.normal() * 10f64.powi(rng.index(600) as i32 - 300),
        _ => rng.normal(),
    }
}

pub fn random_dataset(rng: &mut SeededRng) -> Dataset {
    let m = 2 + rng.index(3);
    let dims: Vec<usize> = (0..m).map(|_| 1 + rng.index(6)).collect();
    let classes = 2 + rng.index(6);
    let n = rng.index(25);
    let samples = (0..n)
        .map(|i| MultiModalSample {
            id: if rng.index(4) == 0 {
                u64::MAX - i as u64
            } else {
                i as u64
            },
            label: rng.index(classes),
            balanced: [None, Some(true), Some(false)][rng.index(3)],
            mods: dims
                .iter()
                .map(|&d| (0..d).map(|_| awkward_float(rng)).collect())
                .collect(),
        })
        .collect();
    Dataset {
        header: DatasetHeader { classes, dims },
        samples,
    }
}

pub fn random_model(rng: &mut SeededRng) -> ModelState {
    let m = 2 + rng.index(2);
    let dims = ModelDims {
        inputs: (0..m).map(|_| 1 + rng.index(8)).collect(),
        hidden: 1 + rng.index(8),
        embed: 1 + rng.index(8),
        classes: 2 + rng.index(5),
    };
    let mut model = ModelState::init(dims, rng).unwrap();
    for t in model.params.tensors_mut() {
        for x in t.iter_mut() {
            *x = awkward_float(rng);
        }
    }
    for t in model.momentum.tensors_mut() {
        for x in t.iter_mut() {
            *x = awkward_float(rng);
        }
    }
    model
}

pub fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

pub fn datasets_identical(a: &Dataset, b: &Dataset) -> bool {
    a.header == b.header
        && a.samples.len() == b.samples.len()
        && a.samples.iter().zip(&b.samples).all(|(x, y)| {
            x.id == y.id
                && x.label == y.label
                && x.balanced == y.balanced
                && x.mods.len() == y.mods.len()
                && x.mods.iter().zip(&y.mods).all(|(u, v)| same_bits(u, v))
        })
}

pub fn models_identical(a: &ModelState, b: &ModelState) -> bool {
    a.dims == b.dims
        && same_bits(&a.params.flatten(), &b.params.flatten())
        && same_bits(&a.momentum.flatten(), &b.momentum.flatten())
}
