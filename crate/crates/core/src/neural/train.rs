use serde::{Deserialize, Serialize};

use super::{accuracy, cross_entropy, softmax_rows, Architecture, ModelParams, Optimizer, OptimizerKind};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Supervised training knobs for one source model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 1e-3,
            epochs: 30,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("train.learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    /// 0 is the untrained model.
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: Vec<EpochStats>,
}

impl TrainOutcome {
    pub fn final_stats(&self) -> EpochStats {
        *self.trace.last().expect("trace holds the initial entry")
    }
}

fn evaluate(params: &ModelParams, data: &LabeledDataset, epoch: usize) -> Result<EpochStats> {
    let probs = params.predict_proba(&data.features)?;
    let loss = cross_entropy(&probs, &data.labels)?.loss;
    if !loss.is_finite() {
        return Err(Error::Diverged {
            stage: "source training",
            step: epoch,
        });
    }
    Ok(EpochStats {
        epoch,
        loss,
        accuracy: accuracy(&probs, &data.labels),
    })
}

/// Minibatch cross-entropy training of `θ_k = (u_k, v_k)` on one labeled
/// source dataset.
pub fn train_source(
    data: &LabeledDataset,
    arch: &Architecture,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    if !data.is_labeled() {
        return Err(Error::Config("training dataset has no labels".into()));
    }
    if data.dim() != arch.input_dim {
        return Err(Error::DimensionMismatch {
            context: "training features",
            expected: arch.input_dim,
            found: data.dim(),
        });
    }
    if let Some(&bad) = data.labels.iter().find(|&&y| y >= arch.classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: arch.classes,
        });
    }

    let mut init_rng = rng.split_named("init");
    let mut order_rng = rng.split_named("order");
    let mut params = ModelParams::init(arch, &mut init_rng)?;
    let mut trace = vec![evaluate(&params, data, 0)?];
    let mut enc_opt = Optimizer::new(config.optimizer, config.learning_rate);
    let mut cls_opt = Optimizer::new(config.optimizer, config.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=config.epochs {
        order_rng.shuffle(&mut order);
        for batch in order.chunks(config.batch_size) {
            let x = data.features.select_rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();

            let enc_trace = params.encoder.forward(&x)?;
            let latent = enc_trace.output();
            let logits = params.classifier.logits(latent)?;
            let ce = cross_entropy(&softmax_rows(&logits), &y)?;

            let (cls_grad, grad_latent) = params.classifier.layer.backward(latent, &ce.grad_logits)?;
            let enc_grads = params.encoder.backward(&enc_trace, &grad_latent)?;

            enc_opt.step(params.encoder.params_mut(), &enc_grads.as_slices());
            cls_opt.step(
                params.classifier.params_mut(),
                &[cls_grad.weight.as_slice(), cls_grad.bias.as_slice()],
            );
        }
        if !params.is_finite() {
            return Err(Error::Diverged {
                stage: "source training",
                step: epoch,
            });
        }
        trace.push(evaluate(&params, data, epoch)?);
    }
    Ok(TrainOutcome { params, trace })
}
