//! Fixtures shared by the benchmarks.

use smuda_core::{Matrix, Rng};

/// Standard normal `rows x cols` matrix.
pub fn normal_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).expect("shape")
}

/// A well-conditioned symmetric positive definite matrix.
pub fn spd_matrix(n: usize, rng: &mut Rng) -> Matrix {
    let b = normal_matrix(n, n, rng);
    let mut a = b.matmul_t(&b).expect("square");
    a.add_diag(n as f64);
    a
}
