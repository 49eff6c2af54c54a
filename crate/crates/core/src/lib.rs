//! Privacy-preserving multi-source unsupervised domain adaptation.
//!
//! Each labeled source domain trains its own encoder and classifier, then
//! summarizes its latent encodings as a per-class Gaussian prototype. The
//! unlabeled target adapts a copy of each encoder so that target encodings
//! match samples drawn from the prototype under the sliced Wasserstein
//! distance. Predictions are a weighted ensemble of the adapted models, with
//! weights inversely proportional to the stored alignment distances. Source
//! samples never leave their domain; [`protocol`] runs the whole procedure
//! across isolated nodes and audits what crossed the boundaries.

// Range checks are written as `!(x > y)` on purpose so NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod gmm;
pub mod linalg;
pub mod neural;
pub mod pipeline;
pub mod protocol;
pub mod rng;
pub mod swd;

pub use data::LabeledDataset;
pub use error::{Error, Result};
pub use gmm::{GmmConfig, GmmPrototype};
pub use linalg::Matrix;
pub use neural::{Architecture, ModelParams, TrainConfig};
pub use pipeline::{AdaptConfig, AdaptationReport, Ensemble, PipelineConfig, RunOutput, WeightStrategy};
pub use rng::Rng;
pub use swd::{DistanceEstimator, Pairing, ProjectionSet};
