use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, Matrix};
use crate::rng::{sample_gaussian, Rng};

/// Recipe for one synthetic domain: per-class Gaussian clouds, then a
/// rotation in the first coordinate plane, a uniform scale and a translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Matrix>,
    /// Radians, applied in the (x0, x1) plane about the origin.
    pub rotation: f64,
    pub translation: Vec<f64>,
    pub scale: f64,
    pub class_weights: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
}

impl DomainSpec {
    pub fn classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.classes();
        let d = self.dim();
        if k == 0 || d == 0 {
            return Err(Error::Config(format!("domain {}: no classes", self.name)));
        }
        if self.means.iter().any(|m| m.len() != d)
            || self.covariances.len() != k
            || self.covariances.iter().any(|c| c.rows() != d || c.cols() != d)
            || self.class_weights.len() != k
            || self.translation.len() != d
        {
            return Err(Error::Config(format!(
                "domain {}: inconsistent class or dimension sizes",
                self.name
            )));
        }
        let total: f64 = self.class_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.class_weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Config(format!(
                "domain {}: class weights must form a distribution (sum {total})",
                self.name
            )));
        }
        if self.samples < k {
            return Err(Error::Config(format!(
                "domain {}: {} samples for {} classes",
                self.name, self.samples, k
            )));
        }
        if !(self.scale.is_finite() && self.rotation.is_finite()) {
            return Err(Error::Config(format!("domain {}: bad transform", self.name)));
        }
        Ok(())
    }

    fn transform(&self, x: &mut [f64]) {
        if x.len() >= 2 {
            let (s, c) = self.rotation.sin_cos();
            let (a, b) = (x[0], x[1]);
            x[0] = c * a - s * b;
            x[1] = s * a + c * b;
        }
        for (v, t) in x.iter_mut().zip(&self.translation) {
            *v = self.scale * *v + t;
        }
    }
}

/// Draw a labeled dataset from `spec`. Deterministic in `spec.seed`.
pub fn gen_domain(spec: &DomainSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let chols = spec
        .covariances
        .iter()
        .map(cholesky)
        .collect::<Result<Vec<_>>>()?;
    let mut rng = Rng::new(spec.seed);
    let mut data = Vec::with_capacity(spec.samples * spec.dim());
    let mut labels = Vec::with_capacity(spec.samples);
    for _ in 0..spec.samples {
        let y = rng.categorical(&spec.class_weights);
        let mut x = sample_gaussian(&spec.means[y], &chols[y], &mut rng)?;
        spec.transform(&mut x);
        data.extend_from_slice(&x);
        labels.push(y);
    }
    LabeledDataset::new(
        Matrix::from_vec(spec.samples, spec.dim(), data)?,
        labels,
        spec.name.clone(),
    )
}

/// The default four-class, three-source rotated-blob benchmark.
#[derive(Debug, Clone)]
pub struct Blobs3 {
    pub sources: Vec<DomainSpec>,
    pub target: DomainSpec,
}

impl Blobs3 {
    pub fn generate(&self) -> Result<Domains> {
        Ok(Domains {
            sources: self.sources.iter().map(gen_domain).collect::<Result<_>>()?,
            target: gen_domain(&self.target)?,
        })
    }
}

/// Generated source datasets plus the (labeled) target.
#[derive(Debug, Clone, PartialEq)]
pub struct Domains {
    pub sources: Vec<LabeledDataset>,
    pub target: LabeledDataset,
}

const BLOB_MEANS: [[f64; 2]; 4] = [[-1.5, 1.2], [-2.7, 0.4], [0.8, -1.3], [-0.4, -2.5]];
// Major and minor standard deviation, then orientation in degrees.
const BLOB_SHAPE: [[f64; 3]; 4] = [[0.65, 0.19, 77.0], [0.36, 0.27, 48.0], [0.45, 0.44, 82.0], [0.73, 0.32, 39.0]];
const BLOB_WEIGHTS: [f64; 4] = [0.4, 0.3, 0.2, 0.1];

fn oriented_covariance([major, minor, degrees]: [f64; 3]) -> Matrix {
    let (s, c) = degrees.to_radians().sin_cos();
    let (a, b) = (major * major, minor * minor);
    let xy = (a - b) * c * s;
    Matrix::from_rows(&[[a * c * c + b * s * s, xy], [xy, a * s * s + b * c * c]]).expect("2x2")
}

/// Three source domains rotated by 0°, 15° and 30° and a target at 45°.
/// All four share the imbalanced label distribution, so the shift between
/// domains is purely geometric.
pub fn blobs3(seed: u64, samples: usize) -> Blobs3 {
    let means: Vec<Vec<f64>> = BLOB_MEANS.iter().map(|m| m.to_vec()).collect();
    let covariances: Vec<Matrix> = BLOB_SHAPE.iter().map(|&s| oriented_covariance(s)).collect();
    let domain = |name: &str, degrees: f64, offset: u64| DomainSpec {
        name: name.to_string(),
        means: means.clone(),
        covariances: covariances.clone(),
        rotation: degrees.to_radians(),
        translation: vec![0.0, 0.0],
        scale: 1.0,
        class_weights: BLOB_WEIGHTS.to_vec(),
        samples,
        seed: seed.wrapping_mul(1000).wrapping_add(offset),
    };
    Blobs3 {
        sources: vec![domain("source0", 0.0, 1), domain("source1", 15.0, 2), domain("source2", 30.0, 3)],
        target: domain("target", 45.0, 4),
    }
}
