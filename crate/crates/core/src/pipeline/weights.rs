use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Added to the summed distances when one of them is exactly zero.
pub const WEIGHT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightStrategy {
    /// `w_k ∝ 1 / (D(T, A_k) + D(S_k, A_k))`.
    #[default]
    Swd,
    Uniform,
    /// All mass on the source with the smallest summed distance.
    SingleBest,
}

impl WeightStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightStrategy::Swd => "swd",
            WeightStrategy::Uniform => "uniform",
            WeightStrategy::SingleBest => "single-best",
        }
    }
}

impl std::str::FromStr for WeightStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "swd" => Ok(Self::Swd),
            "uniform" => Ok(Self::Uniform),
            "single-best" => Ok(Self::SingleBest),
            other => Err(Error::Config(format!("unknown weighting strategy {other:?}"))),
        }
    }
}

/// Mixing weights from the stored per-source distances.
pub fn compute_weights(d_target: &[f64], d_source: &[f64], strategy: WeightStrategy) -> Result<Vec<f64>> {
    if d_target.is_empty() {
        return Err(Error::Empty("sources to weight"));
    }
    if d_target.len() != d_source.len() {
        return Err(Error::DimensionMismatch {
            context: "weight distances",
            expected: d_target.len(),
            found: d_source.len(),
        });
    }
    if d_target.iter().chain(d_source).any(|d| !(*d >= 0.0) || !d.is_finite()) {
        return Err(Error::Config("distances must be finite and non-negative".into()));
    }
    let sums: Vec<f64> = d_target.iter().zip(d_source).map(|(t, s)| t + s).collect();
    let n = sums.len();
    Ok(match strategy {
        WeightStrategy::Uniform => vec![1.0 / n as f64; n],
        WeightStrategy::SingleBest => {
            let best = sums
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
                .map(|(i, _)| i)
                .unwrap();
            let mut w = vec![0.0; n];
            w[best] = 1.0;
            w
        }
        WeightStrategy::Swd => {
            // The epsilon only enters when some source is perfectly aligned,
            // so a common positive scaling of all distances cancels exactly.
            let degenerate = sums.contains(&0.0);
            let inv: Vec<f64> = if degenerate {
                sums.iter().map(|s| 1.0 / (s + WEIGHT_EPS)).collect()
            } else {
                sums.iter().map(|s| 1.0 / s).collect()
            };
            let total: f64 = inv.iter().sum();
            inv.into_iter().map(|v| v / total).collect()
        }
    })
}
