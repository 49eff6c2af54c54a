//! Encoder `g_u` and classifier `h_v` over feature vectors, with hand-written
//! forward and backward passes.
//!
//! The encoder is a stack of affine layers, each followed by a ReLU. The
//! classifier is one affine layer producing logits; probabilities come from a
//! max-shifted softmax.

mod optim;
mod train;

pub use optim::{Optimizer, OptimizerKind};
pub use train::{train_source, EpochStats, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;

/// Layer sizes of one source model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub classes: usize,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, latent_dim: usize, classes: usize) -> Self {
        Self {
            input_dim,
            hidden,
            latent_dim,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        Ok(())
    }
}

/// One affine map `x ↦ W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    /// Uniform fan-in/fan-out scaling, zero bias.
    pub fn init(input: usize, output: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| rng.uniform_range(-limit, limit))
            .collect();
        Self {
            weight: Matrix::from_vec(output, input, data).expect("shape"),
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = x.matmul_t(&self.weight)?;
        for i in 0..z.rows() {
            for (v, b) in z.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(z)
    }

    /// Gradients for this layer given its input and the upstream gradient of
    /// its output. Returns `(layer grads, grad wrt input)`.
    pub fn backward(&self, input: &Matrix, grad_out: &Matrix) -> Result<(DenseGrad, Matrix)> {
        let weight = grad_out.t_matmul(input)?;
        let mut bias = vec![0.0; self.output_dim()];
        for row in grad_out.row_iter() {
            for (b, g) in bias.iter_mut().zip(row) {
                *b += g;
            }
        }
        let grad_in = grad_out.matmul(&self.weight)?;
        Ok((DenseGrad { weight, bias }, grad_in))
    }

    fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|b| b.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Encoder parameters `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub layers: Vec<Dense>,
}

/// Cached activations of one encoder forward pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    /// `inputs[i]` is the input to layer `i`; the last entry is the output.
    activations: Vec<Matrix>,
}

impl EncoderTrace {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("trace always holds the input")
    }
}

impl Encoder {
    pub fn init(arch: &Architecture, rng: &mut Rng) -> Self {
        let mut dims = vec![arch.input_dim];
        dims.extend_from_slice(&arch.hidden);
        dims.push(arch.latent_dim);
        let layers = dims.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("encoder layers"));
        }
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::DimensionMismatch {
                    context: "encoder layer chain",
                    expected: w[0].output_dim(),
                    found: w[1].input_dim(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.output_dim() {
                return Err(Error::DimensionMismatch {
                    context: "encoder bias",
                    expected: l.output_dim(),
                    found: l.bias.len(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::output_dim)
    }

    pub fn forward(&self, x: &Matrix) -> Result<EncoderTrace> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "encoder input",
                expected: self.input_dim(),
                found: x.cols(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for layer in &self.layers {
            let mut z = layer.forward(activations.last().unwrap())?;
            z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            activations.push(z);
        }
        Ok(EncoderTrace { activations })
    }

    /// `g_u(X)`.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = self.forward(x)?.activations;
        Ok(h.pop().unwrap())
    }

    /// Backpropagate `grad_out` (gradient w.r.t. the latent output) through
    /// the cached forward pass.
    pub fn backward(&self, trace: &EncoderTrace, grad_out: &Matrix) -> Result<EncoderGrads> {
        let mut grad = grad_out.clone();
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let out = &trace.activations[i + 1];
            // ReLU mask: the stored output is positive exactly where the
            // pre-activation was.
            for (g, &o) in grad.as_mut_slice().iter_mut().zip(out.as_slice()) {
                if o <= 0.0 {
                    *g = 0.0;
                }
            }
            let (lg, gin) = layer.backward(&trace.activations[i], &grad)?;
            layers.push(lg);
            grad = gin;
        }
        layers.reverse();
        Ok(EncoderGrads { layers, input: grad })
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }
}

#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub layers: Vec<DenseGrad>,
    /// Gradient w.r.t. the encoder input batch.
    pub input: Matrix,
}

impl EncoderGrads {
    pub fn as_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|g| [g.weight.as_slice(), g.bias.as_slice()])
            .collect()
    }
}

/// Classifier parameters `v`: latent → logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub layer: Dense,
}

impl Classifier {
    pub fn init(arch: &Architecture, rng: &mut Rng) -> Self {
        Self {
            layer: Dense::init(arch.latent_dim, arch.classes, rng),
        }
    }

    pub fn classes(&self) -> usize {
        self.layer.output_dim()
    }

    pub fn logits(&self, h: &Matrix) -> Result<Matrix> {
        if h.cols() != self.layer.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "classifier input",
                expected: self.layer.input_dim(),
                found: h.cols(),
            });
        }
        self.layer.forward(h)
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.layer.weight.as_mut_slice(),
            self.layer.bias.as_mut_slice(),
        ]
    }
}

/// `θ = (u, v)` for one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: Encoder,
    pub classifier: Classifier,
}

impl ModelParams {
    pub fn init(arch: &Architecture, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            encoder: Encoder::init(arch, rng),
            classifier: Classifier::init(arch, rng),
        })
    }

    pub fn new(encoder: Encoder, classifier: Classifier) -> Result<Self> {
        if encoder.latent_dim() != classifier.layer.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "encoder/classifier latent width",
                expected: encoder.latent_dim(),
                found: classifier.layer.input_dim(),
            });
        }
        Ok(Self { encoder, classifier })
    }

    pub fn classes(&self) -> usize {
        self.classifier.classes()
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.classifier.logits(&self.encoder.encode(x)?)
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        Ok(softmax_rows(&self.logits(x)?))
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.classifier.layer.is_finite()
    }
}

/// `softmax(h_v(g_u(X)))`.
pub fn predict_proba(encoder: &Encoder, classifier: &Classifier, x: &Matrix) -> Result<Matrix> {
    Ok(softmax_rows(&classifier.logits(&encoder.encode(x)?)?))
}

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// Mean cross-entropy and its gradient w.r.t. the logits.
#[derive(Debug, Clone)]
pub struct CrossEntropy {
    pub loss: f64,
    pub grad_logits: Matrix,
}

/// `mean(−log p[y])`; gradient `(p − onehot(y)) / batch`.
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<CrossEntropy> {
    if probs.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "cross_entropy labels",
            expected: probs.rows(),
            found: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Empty("cross_entropy batch"));
    }
    let classes = probs.cols();
    let n = labels.len() as f64;
    let mut grad = probs.clone();
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        loss -= probs[(i, y)].ln();
        grad[(i, y)] -= 1.0;
    }
    grad.scale(1.0 / n);
    Ok(CrossEntropy {
        loss: loss / n,
        grad_logits: grad,
    })
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(probs: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = probs
        .row_iter()
        .zip(labels)
        .filter(|(r, &y)| argmax(r) == y)
        .count();
    hits as f64 / labels.len() as f64
}
