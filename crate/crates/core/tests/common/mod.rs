//! Shared test utilities: central finite differences and random inputs.

use fopkit::matrix::Matrix;
use fopkit::rng::domain_rng;
use rand::Rng as _;

pub const FD_H: f64 = 1e-5;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = domain_rng(seed, "test-random-matrix");
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Central finite-difference gradient of a scalar function of one matrix.
pub fn fd_matrix(x: &Matrix, f: &mut dyn FnMut(&Matrix) -> f64) -> Matrix {
    let mut g = Matrix::zeros(x.rows(), x.cols());
    for idx in 0..x.data().len() {
        let mut xp = x.clone();
        xp.data_mut()[idx] += FD_H;
        let mut xm = x.clone();
        xm.data_mut()[idx] -= FD_H;
        g.data_mut()[idx] = (f(&xp) - f(&xm)) / (2.0 * FD_H);
    }
    g
}

pub fn max_rel_err(analytic: &Matrix, numeric: &Matrix) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

pub fn assert_grad_close(analytic: &Matrix, numeric: &Matrix, tol: f64, what: &str) {
    let err = max_rel_err(analytic, numeric);
    assert!(err <= tol, "{what}: max rel err {err:.3e} > {tol:.1e}");
}
