//! Computable terms of the multi-source target-error bound.
//!
//! Per source the bound adds the source risk, the Wasserstein distances
//! target→prototype and prototype→source, and a finite-sample confidence
//! term; the combined-error term of the optimal joint hypothesis cannot be
//! computed from data and is reported as such. Wasserstein distances are
//! estimated as the square root of the stored sliced squared distances.

use serde::Serialize;

use crate::error::{Error, Result};

/// Counts above this are treated as infinite.
pub const SAMPLE_COUNT_CAP: f64 = 1e12;

pub const WASSERSTEIN_ESTIMATOR: &str = "sqrt-sliced-w2";

/// `sqrt(2 log(1/ξ) / ζ) · (sqrt(1/N) + sqrt(1/M))`.
pub fn confidence_term(xi: f64, zeta: f64, source_count: f64, target_count: f64) -> Result<f64> {
    if !(xi > 0.0 && xi <= 1.0) {
        return Err(Error::Config(format!("xi must lie in (0, 1], got {xi}")));
    }
    if !(zeta > 0.0 && zeta < std::f64::consts::SQRT_2) {
        return Err(Error::Config(format!("zeta must lie in (0, sqrt 2), got {zeta}")));
    }
    if !(source_count >= 1.0 && target_count >= 1.0) {
        return Err(Error::Config("sample counts must be >= 1".into()));
    }
    let n = source_count.min(SAMPLE_COUNT_CAP);
    let m = target_count.min(SAMPLE_COUNT_CAP);
    Ok((2.0 * (1.0 / xi).ln() / zeta).sqrt() * ((1.0 / n).sqrt() + (1.0 / m).sqrt()))
}

/// Stored quantities for one source, as needed by the bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInput {
    pub name: String,
    pub weight: f64,
    pub source_risk: f64,
    pub d_target: f64,
    pub d_source: f64,
    pub source_count: usize,
    pub target_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundTerms {
    pub name: String,
    pub weight: f64,
    pub source_risk: f64,
    pub w_target_prototype: f64,
    pub w_prototype_source: f64,
    pub confidence: f64,
    /// Sum of the computable terms.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub xi: f64,
    pub zeta: f64,
    pub estimator: &'static str,
    pub sources: Vec<BoundTerms>,
    /// `Σ_k w_k · total_k`, without the combined-error term.
    pub weighted_rhs: f64,
    pub combined_error_computable: bool,
    pub target_risk: Option<f64>,
    /// `max(0, target_risk − weighted_rhs)`: what the missing term would
    /// have to cover.
    pub slack: Option<f64>,
}

impl BoundReport {
    pub fn holds(&self) -> Option<bool> {
        self.target_risk.map(|r| r <= self.weighted_rhs)
    }
}

pub fn bound_report(inputs: &[BoundInput], xi: f64, zeta: f64, target_risk: Option<f64>) -> Result<BoundReport> {
    if inputs.is_empty() {
        return Err(Error::Empty("bound sources"));
    }
    let mut sources = Vec::with_capacity(inputs.len());
    let mut rhs = 0.0;
    for s in inputs {
        if s.d_target < 0.0 || s.d_source < 0.0 || s.source_risk < 0.0 {
            return Err(Error::Config(format!("source {}: negative bound term", s.name)));
        }
        let confidence = confidence_term(xi, zeta, s.source_count as f64, s.target_count as f64)?;
        let w_tp = s.d_target.sqrt();
        let w_ps = s.d_source.sqrt();
        let total = s.source_risk + w_tp + w_ps + confidence;
        rhs += s.weight * total;
        sources.push(BoundTerms {
            name: s.name.clone(),
            weight: s.weight,
            source_risk: s.source_risk,
            w_target_prototype: w_tp,
            w_prototype_source: w_ps,
            confidence,
            total,
        });
    }
    Ok(BoundReport {
        xi,
        zeta,
        estimator: WASSERSTEIN_ESTIMATOR,
        sources,
        weighted_rhs: rhs,
        combined_error_computable: false,
        target_risk,
        slack: target_risk.map(|r| (r - rhs).max(0.0)),
    })
}
