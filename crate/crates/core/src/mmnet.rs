//! Toy multi-modal classifier.
//!
//! Each modality `j` has its own encoder `e_j = W2·relu(W1·x_j + b1) + b2` and
//! its own uni-modal head. The fusion head reads the concatenation of all
//! embeddings. Training minimizes
//!
//! ```text
//! L = (1 − α)·CE(softmax(z_fused), y) + α·Σ_j CE(softmax(z_j), y)
//! ```
//!
//! Gradients are computed by hand; `tests/gradient_check.rs` verifies them
//! against central finite differences.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::LogitBundle;
use crate::numkit::{cross_entropy, l2_norm, softmax, Matrix, SeededRng};

pub const CHECKPOINT_FORMAT: &str = "bss-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A fully-connected layer `W·x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(outputs: usize, inputs: usize) -> Self {
        Dense {
            weight: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    fn xavier(outputs: usize, inputs: usize, rng: &mut SeededRng) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut layer = Dense::zeros(outputs, inputs);
        for w in layer.weight.as_mut_slice() {
            *w = rng.uniform_range(-bound, bound);
        }
        layer
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.weight.matvec(x);
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
        out
    }

    /// Accumulates `dW += g xᵀ`, `db += g`.
    fn accumulate(&mut self, g: &[f64], x: &[f64], scale: f64) {
        self.weight.add_outer(g, x, scale);
        for (b, gi) in self.bias.iter_mut().zip(g) {
            *b += scale * gi;
        }
    }

    fn tensors(&self) -> [&[f64]; 2] {
        [self.weight.as_slice(), &self.bias]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 2] {
        [self.weight.as_mut_slice(), &mut self.bias]
    }

    fn shape(&self) -> (usize, usize) {
        (self.weight.rows(), self.weight.cols())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub hidden: Dense,
    pub output: Dense,
}

/// Every trainable array of the model. Gradients and momentum buffers use the
/// same layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub encoders: Vec<Encoder>,
    pub uni_heads: Vec<Dense>,
    pub fusion_head: Dense,
}

pub type Gradients = Params;

impl Params {
    pub fn zeros_like(&self) -> Params {
        let zero = |d: &Dense| {
            let (r, c) = d.shape();
            Dense::zeros(r, c)
        };
        Params {
            encoders: self
                .encoders
                .iter()
                .map(|e| Encoder {
                    hidden: zero(&e.hidden),
                    output: zero(&e.output),
                })
                .collect(),
            uni_heads: self.uni_heads.iter().map(zero).collect(),
            fusion_head: zero(&self.fusion_head),
        }
    }

    /// All arrays in a fixed order: per-encoder `W1, b1, W2, b2`, then
    /// per-head `W, b`, then the fusion head's `W, b`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for e in &self.encoders {
            out.extend(e.hidden.tensors());
            out.extend(e.output.tensors());
        }
        out.extend(self.head_tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for e in &mut self.encoders {
            out.extend(e.hidden.tensors_mut());
            out.extend(e.output.tensors_mut());
        }
        for h in &mut self.uni_heads {
            out.extend(h.tensors_mut());
        }
        out.extend(self.fusion_head.tensors_mut());
        out
    }

    /// Uni-modal and fusion head arrays only.
    pub fn head_tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for h in &self.uni_heads {
            out.extend(h.tensors());
        }
        out.extend(self.fusion_head.tensors());
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// `self += s · other`. Shapes must match.
    pub fn add_scaled(&mut self, other: &Params, s: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, v) in dst.iter_mut().zip(src) {
                *d += s * v;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub inputs: Vec<usize>,
    pub hidden: usize,
    pub embed: usize,
    pub classes: usize,
}

impl ModelDims {
    pub fn modalities(&self) -> usize {
        self.inputs.len()
    }

    fn validate(&self) -> Result<()> {
        if self.inputs.len() < 2 {
            return Err(Error::input(format!(
                "need at least 2 modalities, got {}",
                self.inputs.len()
            )));
        }
        if self.inputs.contains(&0) || self.hidden == 0 || self.embed == 0 {
            return Err(Error::input(format!("all model dimensions must be >= 1: {self:?}")));
        }
        if self.classes < 2 {
            return Err(Error::input(format!("need at least 2 classes, got {}", self.classes)));
        }
        Ok(())
    }
}

/// Loss weighting used for training and for the loss criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    /// Weight of the summed uni-modal CE terms; the fused CE gets `1 − alpha`.
    pub alpha: f64,
    /// When set, uni-modal CE gradients stop at the heads and do not reach the
    /// encoders.
    pub detach_uni_heads: bool,
}

impl Objective {
    pub fn new(alpha: f64) -> Self {
        Objective {
            alpha,
            detach_uni_heads: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::input(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Which arrays enter a per-sample gradient norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GradScope {
    #[default]
    HeadsOnly,
    AllParameters,
}

impl FromStr for GradScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heads-only" => Ok(GradScope::HeadsOnly),
            "all-parameters" => Ok(GradScope::AllParameters),
            _ => Err(Error::input(format!(
                "unknown gradient scope {s:?} (expected heads-only or all-parameters)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModalityTrace {
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub embedding: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub modalities: Vec<ModalityTrace>,
    pub fused_embedding: Vec<f64>,
    pub fused_logits: Vec<f64>,
    pub fused_probs: Vec<f64>,
}

impl ForwardTrace {
    pub fn embeddings(&self) -> impl Iterator<Item = &[f64]> {
        self.modalities.iter().map(|m| m.embedding.as_slice())
    }

    pub fn uni_probs(&self) -> impl Iterator<Item = &[f64]> {
        self.modalities.iter().map(|m| m.probs.as_slice())
    }

    pub fn logit_bundle(&self) -> LogitBundle {
        LogitBundle::new(
            self.fused_logits.clone(),
            self.modalities.iter().map(|m| m.logits.clone()).collect(),
        )
    }
}

/// `(1 − α)·CE(ŷ, y) + α·Σ_j CE(ŷ_j, y)`
pub fn total_loss(trace: &ForwardTrace, label: usize, alpha: f64) -> Result<f64> {
    let fused = cross_entropy(&trace.fused_probs, label)?;
    let mut uni = 0.0;
    for m in &trace.modalities {
        uni += cross_entropy(&m.probs, label)?;
    }
    Ok((1.0 - alpha) * fused + alpha * uni)
}

/// Gradients of the loss w.r.t. the fused and per-modality logits.
fn logit_gradients(trace: &ForwardTrace, label: usize, alpha: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let delta = |probs: &[f64], weight: f64| -> Vec<f64> {
        probs
            .iter()
            .enumerate()
            .map(|(c, &p)| weight * (p - if c == label { 1.0 } else { 0.0 }))
            .collect()
    };
    let fused = delta(&trace.fused_probs, 1.0 - alpha);
    let uni = trace.modalities.iter().map(|m| delta(&m.probs, alpha)).collect();
    (fused, uni)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub dims: ModelDims,
    pub params: Params,
    pub momentum: Params,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: ModelState,
}

impl ModelState {
    /// Xavier-uniform weights, zero biases, zero momentum.
    pub fn init(dims: ModelDims, rng: &mut SeededRng) -> Result<Self> {
        dims.validate()?;
        let encoders: Vec<Encoder> = dims
            .inputs
            .iter()
            .map(|&d| Encoder {
                hidden: Dense::xavier(dims.hidden, d, rng),
                output: Dense::xavier(dims.embed, dims.hidden, rng),
            })
            .collect();
        let uni_heads = (0..dims.modalities())
            .map(|_| Dense::xavier(dims.classes, dims.embed, rng))
            .collect();
        let fusion_head = Dense::xavier(dims.classes, dims.embed * dims.modalities(), rng);
        let params = Params {
            encoders,
            uni_heads,
            fusion_head,
        };
        let momentum = params.zeros_like();
        Ok(ModelState { dims, params, momentum })
    }

    pub fn modalities(&self) -> usize {
        self.dims.modalities()
    }

    pub fn classes(&self) -> usize {
        self.dims.classes
    }

    pub fn check_inputs(&self, inputs: &[Vec<f64>]) -> Result<()> {
        if inputs.len() != self.modalities() {
            return Err(Error::input(format!(
                "model has {} modalities, sample has {}",
                self.modalities(),
                inputs.len()
            )));
        }
        for (j, (x, &d)) in inputs.iter().zip(&self.dims.inputs).enumerate() {
            if x.len() != d {
                return Err(Error::input(format!(
                    "modality {j} expects {d} features, sample has {}",
                    x.len()
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, inputs: &[Vec<f64>]) -> Result<ForwardTrace> {
        self.check_inputs(inputs)?;
        let p = &self.params;
        let mut modalities = Vec::with_capacity(inputs.len());
        let mut fused_embedding = Vec::with_capacity(self.dims.embed * inputs.len());
        for ((x, enc), head) in inputs.iter().zip(&p.encoders).zip(&p.uni_heads) {
            let hidden_pre = enc.hidden.apply(x);
            let hidden: Vec<f64> = hidden_pre.iter().map(|&v| v.max(0.0)).collect();
            let embedding = enc.output.apply(&hidden);
            let logits = head.apply(&embedding);
            let probs = softmax(&logits);
            fused_embedding.extend_from_slice(&embedding);
            modalities.push(ModalityTrace {
                hidden_pre,
                hidden,
                embedding,
                logits,
                probs,
            });
        }
        let fused_logits = p.fusion_head.apply(&fused_embedding);
        let fused_probs = softmax(&fused_logits);
        Ok(ForwardTrace {
            modalities,
            fused_embedding,
            fused_logits,
            fused_probs,
        })
    }

    /// Exact gradient of the per-sample loss.
    pub fn backward(&self, inputs: &[Vec<f64>], label: usize, objective: &Objective) -> Result<Gradients> {
        let mut grads = self.params.zeros_like();
        self.accumulate_gradients(inputs, label, objective, &mut grads, 1.0)?;
        Ok(grads)
    }

    /// Adds `scale · ∇L` for one sample into `grads` and returns the sample's loss.
    pub fn accumulate_gradients(
        &self,
        inputs: &[Vec<f64>],
        label: usize,
        objective: &Objective,
        grads: &mut Gradients,
        scale: f64,
    ) -> Result<f64> {
        if label >= self.classes() {
            return Err(Error::input(format!(
                "label {label} out of range for {} classes",
                self.classes()
            )));
        }
        let trace = self.forward(inputs)?;
        let loss = total_loss(&trace, label, objective.alpha)?;
        let (d_fused, d_uni) = logit_gradients(&trace, label, objective.alpha);
        let p = &self.params;
        let embed = self.dims.embed;

        grads.fusion_head.accumulate(&d_fused, &trace.fused_embedding, scale);
        let d_concat = p.fusion_head.weight.matvec_t(&d_fused);

        for (j, m) in trace.modalities.iter().enumerate() {
            grads.uni_heads[j].accumulate(&d_uni[j], &m.embedding, scale);

            let mut d_embed = d_concat[j * embed..(j + 1) * embed].to_vec();
            if !objective.detach_uni_heads {
                let from_head = p.uni_heads[j].weight.matvec_t(&d_uni[j]);
                for (d, h) in d_embed.iter_mut().zip(from_head) {
                    *d += h;
                }
            }

            let enc = &p.encoders[j];
            let g_enc = &mut grads.encoders[j];
            g_enc.output.accumulate(&d_embed, &m.hidden, scale);
            let mut d_hidden = enc.output.weight.matvec_t(&d_embed);
            for (d, &pre) in d_hidden.iter_mut().zip(&m.hidden_pre) {
                if pre <= 0.0 {
                    *d = 0.0;
                }
            }
            g_enc.hidden.accumulate(&d_hidden, &inputs[j], scale);
        }
        Ok(loss)
    }

    /// `‖∇L‖₂` for one sample over the chosen parameter scope.
    ///
    /// The heads-only norm uses `‖g xᵀ‖_F = ‖g‖·‖x‖` and skips encoder
    /// backpropagation entirely.
    pub fn per_sample_gradient_norm(
        &self,
        inputs: &[Vec<f64>],
        label: usize,
        objective: &Objective,
        scope: GradScope,
    ) -> Result<f64> {
        match scope {
            GradScope::AllParameters => {
                let grads = self.backward(inputs, label, objective)?;
                Ok(l2_norm(&grads.flatten()))
            }
            GradScope::HeadsOnly => {
                let trace = self.forward(inputs)?;
                self.heads_gradient_norm(&trace, label, objective.alpha)
            }
        }
    }

    pub(crate) fn heads_gradient_norm(&self, trace: &ForwardTrace, label: usize, alpha: f64) -> Result<f64> {
        if label >= self.classes() {
            return Err(Error::input(format!(
                "label {label} out of range for {} classes",
                self.classes()
            )));
        }
        let (d_fused, d_uni) = logit_gradients(trace, label, alpha);
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let mut total = sq(&d_fused) * (sq(&trace.fused_embedding) + 1.0);
        for (d, m) in d_uni.iter().zip(&trace.modalities) {
            total += sq(d) * (sq(&m.embedding) + 1.0);
        }
        Ok(total.sqrt())
    }

    /// SGD with momentum and L2 weight decay:
    /// `buf ← μ·buf + (g + λ·θ)`, `θ ← θ − lr·buf`.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::input(format!("learning rate must be finite and >= 0, got {lr}")));
        }
        let params = self.params.tensors_mut();
        let bufs = self.momentum.tensors_mut();
        for ((theta, buf), g) in params.into_iter().zip(bufs).zip(grads.tensors()) {
            for ((t, b), &gi) in theta.iter_mut().zip(buf.iter_mut()).zip(g) {
                *b = momentum * *b + (gi + weight_decay * *t);
                *t -= lr * *b;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        Ok(serde_json::to_string(&ckpt)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                ckpt.format, ckpt.version
            )));
        }
        ckpt.model.validate_shapes()?;
        Ok(ckpt.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn validate_shapes(&self) -> Result<()> {
        self.dims.validate()?;
        let d = &self.dims;
        let m = d.modalities();
        let check = |layer: &Dense, rows: usize, cols: usize, what: &str| -> Result<()> {
            if layer.shape() != (rows, cols) || layer.bias.len() != rows {
                return Err(Error::Format(format!(
                    "{what} has shape {:?}, expected ({rows}, {cols})",
                    layer.shape()
                )));
            }
            Ok(())
        };
        for p in [&self.params, &self.momentum] {
            if p.encoders.len() != m || p.uni_heads.len() != m {
                return Err(Error::Format("modality count disagrees with dims".into()));
            }
            for (j, (enc, head)) in p.encoders.iter().zip(&p.uni_heads).enumerate() {
                check(&enc.hidden, d.hidden, d.inputs[j], "encoder hidden layer")?;
                check(&enc.output, d.embed, d.hidden, "encoder output layer")?;
                check(head, d.classes, d.embed, "uni-modal head")?;
            }
            check(&p.fusion_head, d.classes, d.embed * m, "fusion head")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dims(inputs: Vec<usize>) -> ModelDims {
        ModelDims {
            inputs,
            hidden: 8,
            embed: 4,
            classes: 6,
        }
    }

    fn sample(dims: &[usize], rng: &mut SeededRng) -> Vec<Vec<f64>> {
        dims.iter().map(|&d| (0..d).map(|_| rng.normal()).collect()).collect()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases_and_bounded_weights() {
        let a = ModelState::init(dims(vec![4, 4]), &mut SeededRng::new(5)).unwrap();
        let b = ModelState::init(dims(vec![4, 4]), &mut SeededRng::new(5)).unwrap();
        assert_eq!(a, b);
        for enc in &a.params.encoders {
            assert!(enc.hidden.bias.iter().all(|&v| v == 0.0));
            assert!(enc.output.bias.iter().all(|&v| v == 0.0));
            let bound = (6.0f64 / 12.0).sqrt();
            assert!(enc.hidden.weight.as_slice().iter().all(|w| w.abs() <= bound));
        }
        assert!(a.params.fusion_head.bias.iter().all(|&v| v == 0.0));
        assert!(a.momentum.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_rejects_zero_dims() {
        let mut rng = SeededRng::new(0);
        assert!(ModelState::init(dims(vec![4, 0]), &mut rng).is_err());
        assert!(ModelState::init(dims(vec![4]), &mut rng).is_err());
        let mut d = dims(vec![3, 3]);
        d.hidden = 0;
        assert!(ModelState::init(d, &mut rng).is_err());
    }

    #[test]
    fn zero_weights_predict_uniform() {
        let mut model = ModelState::init(dims(vec![3, 5]), &mut SeededRng::new(1)).unwrap();
        model.params.scale(0.0);
        let trace = model.forward(&sample(&[3, 5], &mut SeededRng::new(2))).unwrap();
        for p in trace.uni_probs().chain([trace.fused_probs.as_slice()]) {
            for &x in p {
                assert_abs_diff_eq!(x, 1.0 / 6.0, epsilon = 1e-15);
            }
        }
        assert_eq!(trace.fused_embedding.len(), 2 * 4);
        // c = 6, m = 2, α = 0.5 → 1.5·ln 6
        assert_abs_diff_eq!(total_loss(&trace, 3, 0.5).unwrap(), 1.5 * 6f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn forward_checks_dims() {
        let model = ModelState::init(dims(vec![3, 5]), &mut SeededRng::new(1)).unwrap();
        assert!(model.forward(&[vec![0.0; 3]]).is_err());
        assert!(model.forward(&[vec![0.0; 3], vec![0.0; 4]]).is_err());
        let trace = model.forward(&[vec![1.0; 3], vec![-1.0; 5]]).unwrap();
        for p in trace.uni_probs().chain([trace.fused_probs.as_slice()]) {
            assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn alpha_zero_is_plain_fused_cross_entropy() {
        let model = ModelState::init(dims(vec![3, 3]), &mut SeededRng::new(4)).unwrap();
        let trace = model.forward(&sample(&[3, 3], &mut SeededRng::new(8))).unwrap();
        assert_eq!(
            total_loss(&trace, 2, 0.0).unwrap(),
            cross_entropy(&trace.fused_probs, 2).unwrap()
        );
    }

    #[test]
    fn alpha_one_leaves_fusion_head_without_gradient() {
        let model = ModelState::init(dims(vec![3, 3]), &mut SeededRng::new(4)).unwrap();
        let x = sample(&[3, 3], &mut SeededRng::new(8));
        let g = model.backward(&x, 1, &Objective::new(1.0)).unwrap();
        assert!(g.fusion_head.weight.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.fusion_head.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn detached_heads_leave_encoders_driven_by_fusion_only() {
        let model = ModelState::init(dims(vec![3, 3]), &mut SeededRng::new(4)).unwrap();
        let x = sample(&[3, 3], &mut SeededRng::new(8));
        let objective = Objective {
            alpha: 1.0,
            detach_uni_heads: true,
        };
        let g = model.backward(&x, 1, &objective).unwrap();
        for enc in &g.encoders {
            assert!(enc.hidden.weight.as_slice().iter().all(|&v| v == 0.0));
            assert!(enc.output.bias.iter().all(|&v| v == 0.0));
        }
        assert!(g.uni_heads[0].bias.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn modality_with_zero_input_only_gets_bias_gradients_in_first_layer() {
        let model = ModelState::init(dims(vec![3, 3]), &mut SeededRng::new(4)).unwrap();
        let x = vec![vec![0.5, -1.0, 2.0], vec![0.0; 3]];
        let g = model.backward(&x, 0, &Objective::new(0.2)).unwrap();
        assert!(g.encoders[1].hidden.weight.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.encoders[0].hidden.weight.as_slice().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn heads_only_norm_matches_backward_and_is_bounded_by_full_norm() {
        for seed in 0..5 {
            let mut rng = SeededRng::new(seed);
            let model = ModelState::init(dims(vec![3, 4, 2]), &mut rng).unwrap();
            let x = sample(&[3, 4, 2], &mut rng);
            let objective = Objective::new(0.2);
            let heads = model
                .per_sample_gradient_norm(&x, 2, &objective, GradScope::HeadsOnly)
                .unwrap();
            let full = model
                .per_sample_gradient_norm(&x, 2, &objective, GradScope::AllParameters)
                .unwrap();
            let g = model.backward(&x, 2, &objective).unwrap();
            let from_backward = l2_norm(&g.head_tensors().concat());
            assert_abs_diff_eq!(heads, from_backward, epsilon = 1e-12);
            assert_abs_diff_eq!(full, l2_norm(&g.flatten()), epsilon = 1e-12);
            assert!(heads <= full);
        }
    }

    #[test]
    fn confident_correct_prediction_has_vanishing_gradient() {
        let mut model = ModelState::init(dims(vec![2, 2]), &mut SeededRng::new(4)).unwrap();
        model.params.scale(0.0);
        for b in model.params.uni_heads.iter_mut().chain([&mut model.params.fusion_head]) {
            b.bias[0] = 60.0;
        }
        let norm = model
            .per_sample_gradient_norm(
                &[vec![1.0, 1.0], vec![1.0, 1.0]],
                0,
                &Objective::new(0.2),
                GradScope::AllParameters,
            )
            .unwrap();
        assert!(norm < 1e-20, "{norm}");
    }

    #[test]
    fn sgd_step_arithmetic() {
        let model = ModelState::init(dims(vec![2, 2]), &mut SeededRng::new(4)).unwrap();
        let before = model.params.clone();
        let x = sample(&[2, 2], &mut SeededRng::new(1));
        let g = model.backward(&x, 0, &Objective::new(0.2)).unwrap();

        let mut frozen = model.clone();
        frozen.sgd_step(&g, 0.0, 0.9, 1e-4).unwrap();
        assert_eq!(frozen.params, before);

        let mut plain = model.clone();
        plain.sgd_step(&g, 0.1, 0.0, 0.0).unwrap();
        for ((a, b), gi) in plain.params.flatten().iter().zip(before.flatten()).zip(g.flatten()) {
            assert_eq!(*a, b - 0.1 * gi);
        }

        // Same gradient twice with momentum 0.9: displacement 1·g then 1.9·g.
        let mut m = model.clone();
        m.sgd_step(&g, 0.1, 0.9, 0.0).unwrap();
        let after_one = m.params.flatten();
        m.sgd_step(&g, 0.1, 0.9, 0.0).unwrap();
        let after_two = m.params.flatten();
        let b = before.flatten();
        let gf = g.flatten();
        for i in 0..b.len() {
            let first = (after_one[i] - b[i]).abs();
            let second = (after_two[i] - after_one[i]).abs();
            assert_abs_diff_eq!(second, 1.9 * 0.1 * gf[i].abs(), epsilon = 1e-12);
            if gf[i] != 0.0 {
                assert!(second > first);
            }
        }
        assert!(model.clone().sgd_step(&g, -1.0, 0.9, 0.0).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_version_check() {
        let mut model = ModelState::init(dims(vec![3, 2]), &mut SeededRng::new(11)).unwrap();
        let g = model
            .backward(&sample(&[3, 2], &mut SeededRng::new(3)), 1, &Objective::new(0.2))
            .unwrap();
        model.sgd_step(&g, 0.01, 0.9, 1e-4).unwrap();
        let text = model.to_json().unwrap();
        assert_eq!(ModelState::from_json(&text).unwrap(), model);

        let bumped = text.replace("\"version\":1", "\"version\":99");
        assert!(matches!(ModelState::from_json(&bumped), Err(Error::Format(_))));
    }
}
