use serde::Serialize;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::neural::{accuracy, ModelParams};
use crate::protocol::{decode_model, encode_model};

/// Adapted per-source models and their mixing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub names: Vec<String>,
    pub models: Vec<ModelParams>,
    pub weights: Vec<f64>,
}

impl Ensemble {
    pub fn new(names: Vec<String>, models: Vec<ModelParams>, weights: Vec<f64>) -> Result<Self> {
        check_weights(&weights, models.len())?;
        if names.len() != models.len() {
            return Err(Error::DimensionMismatch {
                context: "ensemble names",
                expected: models.len(),
                found: names.len(),
            });
        }
        Ok(Self { names, models, weights })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        predict_ensemble(&self.models, &self.weights, x)
    }

    /// `SMEN`, `u32` version, `u32` count, then per member `f64` weight,
    /// `u32` name length, UTF-8 name and the model in wire encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(ENSEMBLE_MAGIC);
        out.extend_from_slice(&ENSEMBLE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.models.len() as u32).to_le_bytes());
        for ((name, model), w) in self.names.iter().zip(&self.models).zip(&self.weights) {
            out.extend_from_slice(&w.to_le_bytes());
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&encode_model(model));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let take = |pos: usize, n: usize| -> Result<&[u8]> {
            bytes
                .get(pos..pos + n)
                .ok_or_else(|| Error::parse(pos, format!("truncated: need {n} bytes")))
        };
        if take(0, 4)? != ENSEMBLE_MAGIC {
            return Err(Error::parse(0, "bad ensemble magic"));
        }
        let version = u32::from_le_bytes(take(4, 4)?.try_into().unwrap());
        if version != ENSEMBLE_VERSION {
            return Err(Error::parse(4, format!("unsupported ensemble version {version}")));
        }
        let count = u32::from_le_bytes(take(8, 4)?.try_into().unwrap()) as usize;
        let mut pos = 12;
        let (mut names, mut models, mut weights) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..count {
            weights.push(f64::from_le_bytes(take(pos, 8)?.try_into().unwrap()));
            let len = u32::from_le_bytes(take(pos + 8, 4)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(pos + 12, len)?).map_err(|_| Error::parse(pos + 12, "member name is not UTF-8"))?;
            names.push(name.to_string());
            pos += 12 + len;
            let (model, used) = decode_model(&bytes[pos..]).map_err(|e| match e {
                Error::Parse { offset, message } => Error::parse(pos + offset, message),
                other => other,
            })?;
            models.push(model);
            pos += used;
        }
        if pos != bytes.len() {
            return Err(Error::parse(pos, "trailing bytes after ensemble"));
        }
        Self::new(names, models, weights)
    }
}

const ENSEMBLE_MAGIC: &[u8; 4] = b"SMEN";
const ENSEMBLE_VERSION: u32 = 1;

fn check_weights(w: &[f64], models: usize) -> Result<()> {
    if w.len() != models {
        return Err(Error::DimensionMismatch {
            context: "ensemble weights",
            expected: models,
            found: w.len(),
        });
    }
    if models == 0 {
        return Err(Error::Empty("ensemble models"));
    }
    let total: f64 = w.iter().sum();
    if w.iter().any(|&v| !(v >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("weights must lie on the simplex (sum {total})")));
    }
    Ok(())
}

/// Row-wise convex combination `Σ_k w_k f_k(X)`.
pub fn predict_ensemble(models: &[ModelParams], weights: &[f64], x: &Matrix) -> Result<Matrix> {
    let probs = models
        .iter()
        .map(|m| m.predict_proba(x))
        .collect::<Result<Vec<_>>>()?;
    combine(&probs, weights)
}

/// Convex combination of per-model probability rows.
pub fn combine(probs: &[Matrix], weights: &[f64]) -> Result<Matrix> {
    check_weights(weights, probs.len())?;
    let first = &probs[0];
    let mut out = Matrix::zeros(first.rows(), first.cols());
    for (p, &w) in probs.iter().zip(weights) {
        if p.rows() != first.rows() || p.cols() != first.cols() {
            return Err(Error::DimensionMismatch {
                context: "ensemble member output",
                expected: first.cols(),
                found: p.cols(),
            });
        }
        if w == 0.0 {
            continue;
        }
        for (o, v) in out.as_mut_slice().iter_mut().zip(p.as_slice()) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Mean `−log p[y]`.
pub fn ce_risk(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.len() != probs.rows() {
        return Err(Error::DimensionMismatch {
            context: "risk labels",
            expected: probs.rows(),
            found: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Empty("risk evaluation set"));
    }
    let mut total = 0.0;
    for (row, &y) in probs.row_iter().zip(labels) {
        if y >= row.len() {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: row.len(),
            });
        }
        total -= row[y].ln();
    }
    Ok(total / labels.len() as f64)
}

/// Both sides of `e_T(h) ≤ Σ_k w_k e_T(h_k)` under cross-entropy risk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JensenCheck {
    pub ensemble_risk: f64,
    pub weighted_member_risk: f64,
}

impl JensenCheck {
    pub fn holds(&self, tol: f64) -> bool {
        self.ensemble_risk <= self.weighted_member_risk + tol
    }
}

pub fn jensen_from_probs(probs: &[Matrix], weights: &[f64], labels: &[usize]) -> Result<JensenCheck> {
    let ensemble = combine(probs, weights)?;
    let ensemble_risk = ce_risk(&ensemble, labels)?;
    let mut weighted = 0.0;
    for (p, &w) in probs.iter().zip(weights) {
        if w > 0.0 {
            weighted += w * ce_risk(p, labels)?;
        }
    }
    Ok(JensenCheck {
        ensemble_risk,
        weighted_member_risk: weighted,
    })
}

pub fn verify_ensemble_bound(models: &[ModelParams], weights: &[f64], eval: &LabeledDataset) -> Result<JensenCheck> {
    let probs = models
        .iter()
        .map(|m| m.predict_proba(&eval.features))
        .collect::<Result<Vec<_>>>()?;
    jensen_from_probs(&probs, weights, &eval.labels)
}

/// Accuracy and risk of an ensemble and its members on labeled data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub risk: f64,
    pub member_accuracy: Vec<f64>,
    pub member_risk: Vec<f64>,
    pub jensen: JensenCheck,
}

pub fn evaluate(ensemble: &Ensemble, eval: &LabeledDataset) -> Result<Evaluation> {
    if !eval.is_labeled() || eval.is_empty() {
        return Err(Error::Config("evaluation needs a non-empty labeled dataset".into()));
    }
    let probs = ensemble
        .models
        .iter()
        .map(|m| m.predict_proba(&eval.features))
        .collect::<Result<Vec<_>>>()?;
    let mixed = combine(&probs, &ensemble.weights)?;
    let jensen = jensen_from_probs(&probs, &ensemble.weights, &eval.labels)?;
    Ok(Evaluation {
        accuracy: accuracy(&mixed, &eval.labels),
        risk: jensen.ensemble_risk,
        member_accuracy: probs.iter().map(|p| accuracy(p, &eval.labels)).collect(),
        member_risk: probs
            .iter()
            .map(|p| ce_risk(p, &eval.labels))
            .collect::<Result<_>>()?,
        jensen,
    })
}
