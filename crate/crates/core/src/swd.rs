//! Sliced Wasserstein distance between equal-size point sets.
//!
//! Each slice projects both sets onto a unit direction, sorts the projected
//! values, and pairs them by rank; the squared differences of the pairs give
//! the exact squared 2-Wasserstein distance between the two 1D empirical
//! measures. The sliced distance is the mean over slices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};
use crate::rng::{sample_unit_sphere, Rng};

/// `L` unit directions stored as the rows of a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    directions: Matrix,
    seed: Option<u64>,
}

impl ProjectionSet {
    pub fn sample(count: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config("need at least one projection".into()));
        }
        let mut data = Vec::with_capacity(count * dim);
        for _ in 0..count {
            data.extend(sample_unit_sphere(dim, rng)?);
        }
        Ok(Self {
            directions: Matrix::from_vec(count, dim, data)?,
            seed: Some(rng.seed()),
        })
    }

    /// Wrap caller-provided directions; each row must be unit norm.
    pub fn from_directions(directions: Matrix) -> Result<Self> {
        if directions.rows() == 0 || directions.cols() == 0 {
            return Err(Error::Empty("projection directions"));
        }
        for (i, row) in directions.row_iter().enumerate() {
            if (norm(row) - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidDimension(format!("direction {i} is not unit norm")));
            }
        }
        Ok(Self { directions, seed: None })
    }

    pub fn len(&self) -> usize {
        self.directions.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.directions.cols()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn directions(&self) -> &Matrix {
        &self.directions
    }
}

/// How the two projected batches are coupled within a slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// Sort both sides and pair by rank: exact 1D optimal transport.
    #[default]
    Sorted,
    /// Pair each point with a uniformly random partner, per slice.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwdValue {
    pub value: f64,
    pub projections: usize,
    pub batch: usize,
}

#[derive(Debug, Clone)]
pub struct SwdGrad {
    pub value: SwdValue,
    /// Gradient w.r.t. each row of the first point set.
    pub grad: Matrix,
}

/// Squared 2-Wasserstein distance between two equal-size 1D samples.
pub fn wasserstein_1d_sq(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "1D Wasserstein sample sizes",
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::Empty("1D Wasserstein sample"));
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let s: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / x.len() as f64)
}

fn check(x: &Matrix, y: &Matrix, proj: &ProjectionSet) -> Result<()> {
    if x.rows() == 0 || y.rows() == 0 {
        return Err(Error::Empty("sliced Wasserstein point set"));
    }
    if x.rows() != y.rows() {
        return Err(Error::DimensionMismatch {
            context: "sliced Wasserstein batch sizes",
            expected: x.rows(),
            found: y.rows(),
        });
    }
    for m in [x, y] {
        if m.cols() != proj.dim() {
            return Err(Error::DimensionMismatch {
                context: "sliced Wasserstein point dimension",
                expected: proj.dim(),
                found: m.cols(),
            });
        }
    }
    Ok(())
}

/// Stable rank order: by value, then original index.
fn rank_order(col: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..col.len()).collect();
    idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
    idx
}

/// Projected values, one column per slice, transposed so each slice is
/// contiguous: returns `L × n`.
fn project(points: &Matrix, proj: &ProjectionSet) -> Matrix {
    proj.directions.matmul_t(points).expect("checked dims")
}

fn sliced(x: &Matrix, y: &Matrix, proj: &ProjectionSet, pairing: Pairing, rng: Option<&mut Rng>, want_grad: bool) -> Result<SwdGrad> {
    check(x, y, proj)?;
    let n = x.rows();
    let l = proj.len();
    let px = project(x, proj);
    let py = project(y, proj);
    let mut coef = if want_grad { Some(Matrix::zeros(l, n)) } else { None };
    let scale = 2.0 / (l as f64 * n as f64);
    let mut rng = rng;
    let mut total = 0.0;
    for s in 0..l {
        let a = px.row(s);
        let b = py.row(s);
        let (ia, ib) = match pairing {
            Pairing::Sorted => (rank_order(a), rank_order(b)),
            Pairing::Random => {
                let r = rng
                    .as_deref_mut()
                    .ok_or_else(|| Error::Config("random pairing needs a generator".into()))?;
                let mut perm: Vec<usize> = (0..n).collect();
                r.shuffle(&mut perm);
                ((0..n).collect(), perm)
            }
        };
        let mut slice_cost = 0.0;
        for (&i, &j) in ia.iter().zip(&ib) {
            let diff = a[i] - b[j];
            slice_cost += diff * diff;
            if let Some(c) = coef.as_mut() {
                c[(s, i)] = scale * diff;
            }
        }
        total += slice_cost / n as f64;
    }
    let value = SwdValue {
        value: total / l as f64,
        projections: l,
        batch: n,
    };
    let grad = match coef {
        // (L × n)ᵀ · (L × d) = n × d
        Some(c) => c.t_matmul(&proj.directions)?,
        None => Matrix::zeros(0, 0),
    };
    Ok(SwdGrad { value, grad })
}

/// Sliced squared 2-Wasserstein distance under a fixed projection set.
pub fn swd(x: &Matrix, y: &Matrix, proj: &ProjectionSet) -> Result<SwdValue> {
    Ok(sliced(x, y, proj, Pairing::Sorted, None, false)?.value)
}

/// Distance and its gradient w.r.t. the rows of `x`, with `y` held fixed.
pub fn swd_grad(x: &Matrix, y: &Matrix, proj: &ProjectionSet) -> Result<SwdGrad> {
    sliced(x, y, proj, Pairing::Sorted, None, true)
}

/// Like [`swd_grad`] with an explicit pairing rule. `rng` is required for
/// [`Pairing::Random`].
pub fn swd_grad_with(x: &Matrix, y: &Matrix, proj: &ProjectionSet, pairing: Pairing, rng: Option<&mut Rng>) -> Result<SwdGrad> {
    sliced(x, y, proj, pairing, rng, true)
}

/// Settings for the stored distance estimates `D(S_k, A_k)` and `D(T, A_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistanceEstimator {
    pub projections: usize,
    pub repeats: usize,
    pub max_points: usize,
}

impl Default for DistanceEstimator {
    fn default() -> Self {
        Self {
            projections: 100,
            repeats: 8,
            max_points: 2048,
        }
    }
}

impl DistanceEstimator {
    /// Mean sliced distance over `repeats` independent projection sets.
    /// Both sets must already have equal size.
    pub fn estimate(&self, x: &Matrix, y: &Matrix, rng: &mut Rng) -> Result<f64> {
        if self.repeats == 0 {
            return Err(Error::Config("estimator repeats must be >= 1".into()));
        }
        let mut acc = 0.0;
        for r in 0..self.repeats {
            let mut prng = rng.split(r as u64);
            let proj = ProjectionSet::sample(self.projections, x.cols(), &mut prng)?;
            acc += swd(x, y, &proj)?.value;
        }
        Ok(acc / self.repeats as f64)
    }
}
