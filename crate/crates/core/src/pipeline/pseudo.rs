use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::neural::{argmax, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PseudoConfig {
    /// A target sample is high-confidence when its top class probability
    /// exceeds this.
    pub confidence: f64,
    /// Pseudo-label sampling is used when at least this fraction of target
    /// samples is high-confidence.
    pub fraction: f64,
}

impl Default for PseudoConfig {
    fn default() -> Self {
        Self {
            confidence: 0.8,
            fraction: 0.8,
        }
    }
}

impl PseudoConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("confidence", self.confidence), ("fraction", self.fraction)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("pseudo.{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    Uniform,
    Pseudo,
}

impl SamplingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplingMode::Uniform => "uniform",
            SamplingMode::Pseudo => "pseudo",
        }
    }
}

/// Which class distribution is used to sample the intermediate domain for
/// one source, and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoTargetDecision {
    pub high_confidence_fraction: f64,
    pub mode: SamplingMode,
    pub distribution: Vec<f64>,
    pub confidence_threshold: f64,
    pub fraction_threshold: f64,
}

fn uniform_over(present: &[usize], classes: usize) -> Vec<f64> {
    let mut p = vec![0.0; classes];
    for &c in present {
        p[c] = 1.0 / present.len() as f64;
    }
    p
}

/// Apply the decision rule to precomputed class probabilities.
pub fn decide_from_probs(probs: &Matrix, present: &[usize], config: &PseudoConfig) -> Result<PseudoTargetDecision> {
    config.validate()?;
    let classes = probs.cols();
    if present.is_empty() {
        return Err(Error::Empty("prototype classes"));
    }
    if let Some(&bad) = present.iter().find(|&&c| c >= classes) {
        return Err(Error::LabelOutOfRange { label: bad, classes });
    }
    let mut counts = vec![0usize; classes];
    let mut confident = 0usize;
    for row in probs.row_iter() {
        let top = argmax(row);
        if row[top] > config.confidence {
            confident += 1;
            counts[top] += 1;
        }
    }
    let fraction = if probs.rows() == 0 {
        0.0
    } else {
        confident as f64 / probs.rows() as f64
    };
    let uniform = |fraction| PseudoTargetDecision {
        high_confidence_fraction: fraction,
        mode: SamplingMode::Uniform,
        distribution: uniform_over(present, classes),
        confidence_threshold: config.confidence,
        fraction_threshold: config.fraction,
    };
    if fraction < config.fraction {
        return Ok(uniform(fraction));
    }
    let mut dist = vec![0.0; classes];
    let mut kept = 0usize;
    for &c in present {
        dist[c] = counts[c] as f64;
        kept += counts[c];
    }
    if kept < confident {
        warn!(
            "{} confident pseudo-labels fall on classes missing from the prototype; renormalizing",
            confident - kept
        );
    }
    if kept == 0 {
        warn!("no confident pseudo-labels on prototype classes; using uniform sampling");
        return Ok(uniform(fraction));
    }
    dist.iter_mut().for_each(|p| *p /= kept as f64);
    Ok(PseudoTargetDecision {
        high_confidence_fraction: fraction,
        mode: SamplingMode::Pseudo,
        distribution: dist,
        confidence_threshold: config.confidence,
        fraction_threshold: config.fraction,
    })
}

/// Decide the sampling distribution for one source from its source-only
/// model's predictions on the target.
pub fn pseudo_target_distribution(model: &ModelParams, target: &Matrix, present: &[usize], config: &PseudoConfig) -> Result<PseudoTargetDecision> {
    decide_from_probs(&model.predict_proba(target)?, present, config)
}
