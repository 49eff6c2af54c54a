use serde::Serialize;

use super::bound::BoundInput;
use super::pseudo::PseudoTargetDecision;
use super::weights::WeightStrategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Prototype-based alignment; no samples leave any domain.
    Smuda,
    /// Target aligned straight to encoded source samples.
    Direct,
    /// All sources pooled into one before training.
    SourceCombined,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Smuda => "smuda",
            Method::Direct => "direct",
            Method::SourceCombined => "source-combined",
        }
    }

    /// Whether source samples stay inside their own domain.
    pub fn is_private(self) -> bool {
        matches!(self, Method::Smuda)
    }
}

/// Everything stored about one source over a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceReport {
    pub index: usize,
    pub name: String,
    pub source_count: usize,
    /// Empirical cross-entropy risk of the source model on its own data.
    pub source_risk: f64,
    pub source_accuracy: f64,
    /// `D(S_k, A_k)`, computed before the source data was released.
    pub d_source: f64,
    /// `D(T, A_k)` under the source-only encoder.
    pub d_target_initial: f64,
    /// `D(T, A_k)` under the adapted encoder.
    pub d_target_final: f64,
    pub weight: f64,
    pub decision: PseudoTargetDecision,
    pub omitted_classes: Vec<usize>,
    /// Minibatch objective per adaptation step.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroppedSource {
    pub index: usize,
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptationReport {
    pub method: Method,
    pub weighting: WeightStrategy,
    pub target_count: usize,
    pub sources: Vec<SourceReport>,
    pub dropped: Vec<DroppedSource>,
}

impl AdaptationReport {
    pub fn weights(&self) -> Vec<f64> {
        self.sources.iter().map(|s| s.weight).collect()
    }

    pub fn bound_inputs(&self) -> Vec<BoundInput> {
        self.sources
            .iter()
            .map(|s| BoundInput {
                name: s.name.clone(),
                weight: s.weight,
                source_risk: s.source_risk,
                d_target: s.d_target_final,
                d_source: s.d_source,
                source_count: s.source_count,
                target_count: self.target_count,
            })
            .collect()
    }
}
