//! Class-conditional Gaussian prototypes of a source's latent space.
//!
//! For every class `c` present in the source labels the prototype stores the
//! indicator-weighted mean of the encodings and their divide-by-count scatter
//! matrix. Sampling uses the Cholesky factor of `Σ + εI`, where `ε` scales
//! with the average variance of the class.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, Matrix};
use crate::neural::Encoder;
use crate::rng::{sample_gaussian, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmConfig {
    /// `ε = max(relative_eps · tr(Σ)/d, eps_floor)`.
    pub relative_eps: f64,
    pub eps_floor: f64,
    /// Keep only the diagonal of each class covariance.
    pub diagonal: bool,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            relative_eps: 1e-4,
            eps_floor: 1e-6,
            diagonal: false,
        }
    }
}

impl GmmConfig {
    pub fn regularization(&self, sigma: &Matrix) -> f64 {
        let d = sigma.rows().max(1) as f64;
        (self.relative_eps * sigma.trace() / d).max(self.eps_floor)
    }
}

/// Fitted Gaussian for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototype {
    pub class: usize,
    pub count: usize,
    pub mean: Vec<f64>,
    /// Unregularized scatter matrix, exactly as fitted.
    pub covariance: Matrix,
    pub regularization: f64,
    /// Factor of `covariance + regularization · I`.
    pub chol: Matrix,
}

impl ClassPrototype {
    pub fn new(class: usize, count: usize, mean: Vec<f64>, covariance: Matrix, regularization: f64) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config(format!("class {class} prototype with zero samples")));
        }
        if covariance.rows() != mean.len() || covariance.cols() != mean.len() {
            return Err(Error::DimensionMismatch {
                context: "prototype covariance",
                expected: mean.len(),
                found: covariance.rows(),
            });
        }
        if !covariance.is_finite() || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("prototype parameters"));
        }
        let chol = cholesky(&regularize_covariance(&covariance, regularization))?;
        Ok(Self {
            class,
            count,
            mean,
            covariance,
            regularization,
            chol,
        })
    }

    pub fn regularized_covariance(&self) -> Matrix {
        regularize_covariance(&self.covariance, self.regularization)
    }
}

/// `Σ + εI`.
pub fn regularize_covariance(sigma: &Matrix, eps: f64) -> Matrix {
    let mut out = sigma.clone();
    out.add_diag(eps);
    out
}

/// Per-class Gaussian summary of one source's latent encodings.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmPrototype {
    dim: usize,
    classes: usize,
    entries: Vec<ClassPrototype>,
}

impl GmmPrototype {
    /// Assemble from per-class entries; entries are sorted by class.
    pub fn from_entries(dim: usize, classes: usize, mut entries: Vec<ClassPrototype>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("prototype classes"));
        }
        entries.sort_by_key(|e| e.class);
        for w in entries.windows(2) {
            if w[0].class == w[1].class {
                return Err(Error::Config(format!("duplicate prototype class {}", w[0].class)));
            }
        }
        for e in &entries {
            if e.mean.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "prototype mean",
                    expected: dim,
                    found: e.mean.len(),
                });
            }
            if e.class >= classes {
                return Err(Error::LabelOutOfRange {
                    label: e.class,
                    classes,
                });
            }
        }
        Ok(Self { dim, classes, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Size of the label space, including omitted classes.
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn entries(&self) -> &[ClassPrototype] {
        &self.entries
    }

    pub fn get(&self, class: usize) -> Option<&ClassPrototype> {
        self.entries
            .binary_search_by_key(&class, |e| e.class)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn present_classes(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.class).collect()
    }

    pub fn omitted_classes(&self) -> Vec<usize> {
        (0..self.classes).filter(|c| self.get(*c).is_none()).collect()
    }

    /// Class proportions of the data the prototype was fitted on.
    pub fn empirical_distribution(&self) -> Vec<f64> {
        let total: usize = self.entries.iter().map(|e| e.count).sum();
        let mut p = vec![0.0; self.classes];
        for e in &self.entries {
            p[e.class] = e.count as f64 / total as f64;
        }
        p
    }

    /// Uniform over the classes present in the prototype.
    pub fn uniform_distribution(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.classes];
        let share = 1.0 / self.entries.len() as f64;
        for e in &self.entries {
            p[e.class] = share;
        }
        p
    }

    pub fn sample_class(&self, class: usize, rng: &mut Rng) -> Result<Vec<f64>> {
        let e = self.get(class).ok_or(Error::MissingClass(class))?;
        sample_gaussian(&e.mean, &e.chol, rng)
    }
}

/// Fit the prototype on already-encoded latent points.
pub fn fit_gmm_latent(latent: &Matrix, labels: &[usize], classes: usize, config: &GmmConfig) -> Result<GmmPrototype> {
    if latent.rows() == 0 {
        return Err(Error::Empty("prototype fit data"));
    }
    if labels.len() != latent.rows() {
        return Err(Error::DimensionMismatch {
            context: "prototype fit labels",
            expected: latent.rows(),
            found: labels.len(),
        });
    }
    if !latent.is_finite() {
        return Err(Error::NonFinite("latent encodings"));
    }
    let d = latent.cols();
    let mut counts = vec![0usize; classes];
    let mut sums = vec![vec![0.0; d]; classes];
    for (x, &y) in latent.row_iter().zip(labels) {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        counts[y] += 1;
        for (s, v) in sums[y].iter_mut().zip(x) {
            *s += v;
        }
    }
    let means: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &n)| s.into_iter().map(|v| v / n.max(1) as f64).collect())
        .collect();

    let mut scatter = vec![Matrix::zeros(d, d); classes];
    let mut centered = vec![0.0; d];
    for (x, &y) in latent.row_iter().zip(labels) {
        for ((c, v), m) in centered.iter_mut().zip(x).zip(&means[y]) {
            *c = v - m;
        }
        let s = scatter[y].as_mut_slice();
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in 0..=i {
                s[i * d + j] += ci * centered[j];
            }
        }
    }

    let mut entries = Vec::new();
    let mut omitted = Vec::new();
    for (c, (mut sigma, mean)) in scatter.into_iter().zip(means).enumerate() {
        let n = counts[c];
        if n == 0 {
            omitted.push(c);
            continue;
        }
        let inv = 1.0 / n as f64;
        for i in 0..d {
            for j in 0..=i {
                let v = sigma[(i, j)] * inv;
                let v = if config.diagonal && i != j { 0.0 } else { v };
                sigma[(i, j)] = v;
                sigma[(j, i)] = v;
            }
        }
        let eps = config.regularization(&sigma);
        entries.push(ClassPrototype::new(c, n, mean, sigma, eps)?);
    }
    if !omitted.is_empty() {
        warn!("classes {omitted:?} have no samples and are left out of the prototype");
    }
    GmmPrototype::from_entries(d, classes, entries)
}

/// Encode the labeled source data with `encoder` and fit the prototype.
pub fn fit_gmm(encoder: &Encoder, data: &LabeledDataset, classes: usize, config: &GmmConfig) -> Result<GmmPrototype> {
    if data.is_empty() {
        return Err(Error::Empty("prototype fit data"));
    }
    let latent = encoder.encode(&data.features)?;
    fit_gmm_latent(&latent, &data.labels, classes, config)
}

/// Samples of the intermediate domain `A_k` with their generating labels.
#[derive(Debug, Clone, PartialEq)]
pub struct IntermediateDomain {
    pub samples: Matrix,
    pub labels: Vec<usize>,
}

impl IntermediateDomain {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn check_distribution(gmm: &GmmPrototype, class_distribution: &[f64]) -> Result<()> {
    if class_distribution.len() != gmm.classes() {
        return Err(Error::DimensionMismatch {
            context: "class distribution",
            expected: gmm.classes(),
            found: class_distribution.len(),
        });
    }
    let total: f64 = class_distribution.iter().sum();
    if (total - 1.0).abs() > 1e-6 || class_distribution.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::Config(format!(
            "class distribution must be a probability vector (sum {total})"
        )));
    }
    for (c, &p) in class_distribution.iter().enumerate() {
        if p > 0.0 && gmm.get(c).is_none() {
            return Err(Error::MissingClass(c));
        }
    }
    Ok(())
}

/// Draw `n` labeled points: labels i.i.d. from `class_distribution`, each point
/// from its class Gaussian.
pub fn sample_intermediate(gmm: &GmmPrototype, class_distribution: &[f64], n: usize, rng: &mut Rng) -> Result<IntermediateDomain> {
    check_distribution(gmm, class_distribution)?;
    let mut data = Vec::with_capacity(n * gmm.dim());
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.categorical(class_distribution);
        data.extend(gmm.sample_class(c, rng)?);
        labels.push(c);
    }
    Ok(IntermediateDomain {
        samples: Matrix::from_vec(n, gmm.dim(), data)?,
        labels,
    })
}

/// One prototype draw per given label, in order.
pub fn sample_matching(gmm: &GmmPrototype, labels: &[usize], rng: &mut Rng) -> Result<IntermediateDomain> {
    let mut data = Vec::with_capacity(labels.len() * gmm.dim());
    for &c in labels {
        data.extend(gmm.sample_class(c, rng)?);
    }
    Ok(IntermediateDomain {
        samples: Matrix::from_vec(labels.len(), gmm.dim(), data)?,
        labels: labels.to_vec(),
    })
}
