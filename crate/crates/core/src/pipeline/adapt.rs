use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{check_distribution, sample_intermediate, GmmPrototype, IntermediateDomain};
use crate::linalg::Matrix;
use crate::neural::{Encoder, Optimizer, OptimizerKind};
use crate::rng::Rng;
use crate::swd::{swd_grad_with, Pairing, ProjectionSet};

/// Encoder adaptation knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub steps: usize,
    /// Target and reference batches both use this size.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub projections: usize,
    pub pairing: Pairing,
    /// Stop once the mean of the last `early_stop_window` objective values
    /// improves on the window before it by less than `early_stop_tolerance`.
    /// A window of 0 disables early stopping.
    pub early_stop_window: usize,
    pub early_stop_tolerance: f64,
    /// Reuse one projection set for every step.
    pub fixed_projections: bool,
    /// Draw `A_k` once up front instead of resampling every step.
    pub fixed_intermediate: bool,
    /// Size of a fixed `A_k`; defaults to the target sample count.
    pub intermediate_size: Option<usize>,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            projections: 100,
            pairing: Pairing::Sorted,
            early_stop_window: 50,
            early_stop_tolerance: 1e-5,
            fixed_projections: false,
            fixed_intermediate: false,
            intermediate_size: None,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("adapt.batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("adapt.learning_rate must be > 0".into()));
        }
        if self.projections == 0 {
            return Err(Error::Config("adapt.projections must be >= 1".into()));
        }
        Ok(())
    }
}

/// What the target encodings are pulled towards.
#[derive(Debug, Clone, Copy)]
pub enum Reference<'a> {
    /// Samples of the prototype drawn with the given class distribution.
    Prototype {
        gmm: &'a GmmPrototype,
        distribution: &'a [f64],
    },
    /// Fixed latent points, e.g. encoded source samples for direct alignment.
    Points(&'a Matrix),
}

impl Reference<'_> {
    fn dim(&self) -> usize {
        match self {
            Reference::Prototype { gmm, .. } => gmm.dim(),
            Reference::Points(m) => m.cols(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub encoder: Encoder,
    /// Minibatch objective before each update.
    pub trace: Vec<f64>,
}

impl AdaptOutcome {
    pub fn steps_run(&self) -> usize {
        self.trace.len()
    }
}

fn window_mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn plateaued(trace: &[f64], window: usize, tol: f64) -> bool {
    if window == 0 || trace.len() < 2 * window || !trace.len().is_multiple_of(window) {
        return false;
    }
    let n = trace.len();
    let previous = window_mean(&trace[n - 2 * window..n - window]);
    let current = window_mean(&trace[n - window..]);
    previous - current < tol
}

/// Minimize the sliced distance between `g_u(target)` and the reference by
/// gradient descent on the encoder, starting from `encoder`.
pub fn adapt_encoder(encoder: &Encoder, reference: Reference<'_>, target: &Matrix, config: &AdaptConfig, rng: &mut Rng) -> Result<AdaptOutcome> {
    config.validate()?;
    if target.rows() == 0 {
        return Err(Error::Empty("target features"));
    }
    if reference.dim() != encoder.latent_dim() {
        return Err(Error::DimensionMismatch {
            context: "reference latent dimension",
            expected: encoder.latent_dim(),
            found: reference.dim(),
        });
    }
    if target.cols() != encoder.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "target feature dimension",
            expected: encoder.input_dim(),
            found: target.cols(),
        });
    }
    if let Reference::Prototype { gmm, distribution } = reference {
        check_distribution(gmm, distribution)?;
    }

    let mut enc = encoder.clone();
    let mut trace = Vec::with_capacity(config.steps);
    if config.steps == 0 {
        return Ok(AdaptOutcome { encoder: enc, trace });
    }

    let mut batch_rng = rng.split_named("batches");
    let mut draw_rng = rng.split_named("draws");
    let mut proj_rng = rng.split_named("projections");
    let mut pair_rng = rng.split_named("pairing");

    let fixed_pool: Option<IntermediateDomain> = match reference {
        Reference::Prototype { gmm, distribution } if config.fixed_intermediate => {
            let n = config.intermediate_size.unwrap_or(target.rows()).max(1);
            Some(sample_intermediate(gmm, distribution, n, &mut draw_rng)?)
        }
        _ => None,
    };
    let pool_rows = match (&fixed_pool, reference) {
        (Some(p), _) => Some(p.samples.rows()),
        (None, Reference::Points(m)) => Some(m.rows()),
        _ => None,
    };
    if pool_rows == Some(0) {
        return Err(Error::Empty("alignment reference"));
    }
    let batch = config
        .batch_size
        .min(target.rows())
        .min(pool_rows.unwrap_or(usize::MAX));

    let fixed_proj = if config.fixed_projections {
        Some(ProjectionSet::sample(config.projections, enc.latent_dim(), &mut proj_rng)?)
    } else {
        None
    };
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate);

    for step in 0..config.steps {
        let xt = target.select_rows(&batch_rng.sample_indices(target.rows(), batch));
        let reference_batch = match (&fixed_pool, reference) {
            (Some(pool), _) => pool
                .samples
                .select_rows(&draw_rng.sample_indices(pool.samples.rows(), batch)),
            (None, Reference::Points(m)) => m.select_rows(&draw_rng.sample_indices(m.rows(), batch)),
            (None, Reference::Prototype { gmm, distribution }) => {
                sample_intermediate(gmm, distribution, batch, &mut draw_rng)?.samples
            }
        };
        let fresh;
        let proj = match &fixed_proj {
            Some(p) => p,
            None => {
                fresh = ProjectionSet::sample(config.projections, enc.latent_dim(), &mut proj_rng)?;
                &fresh
            }
        };

        let fwd = enc.forward(&xt)?;
        let g = swd_grad_with(fwd.output(), &reference_batch, proj, config.pairing, Some(&mut pair_rng))?;
        if !g.value.value.is_finite() {
            return Err(Error::Diverged {
                stage: "encoder adaptation",
                step,
            });
        }
        trace.push(g.value.value);
        let grads = enc.backward(&fwd, &g.grad)?;
        opt.step(enc.params_mut(), &grads.as_slices());
        if !enc.is_finite() {
            return Err(Error::Diverged {
                stage: "encoder adaptation",
                step,
            });
        }
        if plateaued(&trace, config.early_stop_window, config.early_stop_tolerance) {
            break;
        }
    }
    Ok(AdaptOutcome { encoder: enc, trace })
}
