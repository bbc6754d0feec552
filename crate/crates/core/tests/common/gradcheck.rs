//! Central finite-difference check of `ModelState::backward`.

use bss::mmnet::{total_loss, ModelDims, ModelState, Objective};
use bss::numkit::SeededRng;

pub const STEP: f64 = 1e-5;

/// A random net with dims ≤ 8; `seed` parity picks two or three modalities.
pub fn random_net(seed: u64) -> (ModelState, Vec<Vec<f64>>, usize) {
    let mut rng = SeededRng::new(seed);
    let m = 2 + (seed % 2) as usize;
    let dims = ModelDims {
        inputs: (0..m).map(|_| 1 + rng.index(8)).collect(),
        hidden: 2 + rng.index(7),
        embed: 2 + rng.index(7),
        classes: 2 + rng.index(4),
    };
    let inputs = dims
        .inputs
        .iter()
        .map(|&d| (0..d).map(|_| rng.normal()).collect())
        .collect();
    let label = rng.index(dims.classes);
    let model = ModelState::init(dims, &mut rng).unwrap();
    (model, inputs, label)
}

/// Largest relative error between backward and central differences over
/// every parameter.
pub fn max_relative_error(model: &ModelState, inputs: &[Vec<f64>], label: usize, objective: &Objective) -> f64 {
    let analytic = model.backward(inputs, label, objective).unwrap().flatten();
    let mut probe = model.clone();
    let lens: Vec<usize> = probe.params.tensors_mut().iter().map(|t| t.len()).collect();
    let mut worst = 0.0_f64;
    let mut k = 0;
    for (ti, len) in lens.into_iter().enumerate() {
        for i in 0..len {
            let mut loss_at = |delta: f64| {
                let original = probe.params.tensors_mut()[ti][i];
                probe.params.tensors_mut()[ti][i] = original + delta;
                let loss = total_loss(&probe.forward(inputs).unwrap(), label, objective.alpha).unwrap();
                probe.params.tensors_mut()[ti][i] = original;
                loss
            };
            let numeric = (loss_at(STEP) - loss_at(-STEP)) / (2.0 * STEP);
            let a = analytic[k];
            let scale = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / scale);
            k += 1;
        }
    }
    assert_eq!(k, analytic.len(), "tensor order disagrees with flatten()");
    worst
}
