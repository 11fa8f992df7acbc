//! Small dense linear-algebra helpers shared by the other modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use rand::Rng;
use rand_distr::StandardNormal;

/// Thin SVD with singular values in descending order.
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

pub fn thin_svd(m: &DMatrix<f64>) -> ThinSvd {
    let svd = SVD::new(m.clone(), true, true);
    ThinSvd {
        u: svd.u.expect("u requested"),
        s: svd.singular_values,
        v_t: svd.v_t.expect("v_t requested"),
    }
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    SVD::new(m.clone(), false, false).singular_values
}

/// `max |A^T A - I|`.
pub fn orthonormality_error(a: &DMatrix<f64>) -> f64 {
    let g = a.transpose() * a;
    let mut worst = 0.0_f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Haar-distributed `rows x cols` matrix with orthonormal columns (`cols <= rows`).
pub fn random_orthonormal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    assert!(cols <= rows, "cannot fit {cols} orthonormal columns in R^{rows}");
    let g = gaussian_matrix(rows, cols, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // sign fix makes the distribution Haar
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Orthogonal `Q` minimising `|A Q - B|_F` for `A`, `B` of equal shape.
pub fn procrustes(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = thin_svd(&(a.transpose() * b));
    &svd.u * &svd.v_t
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn eigen_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = SymmetricEigen::new(m.clone()).eigenvalues;
    let min = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_orthonormal_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_orthonormal(12, 5, &mut rng);
        assert!(orthonormality_error(&q) < 1e-12);
    }

    #[test]
    fn svd_is_descending() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = gaussian_matrix(7, 9, &mut rng);
        let svd = thin_svd(&m);
        assert!(svd.s.as_slice().windows(2).all(|w| w[0] >= w[1]));
        let rec = &svd.u * DMatrix::from_diagonal(&svd.s) * &svd.v_t;
        assert!(max_abs(&(rec - m)) < 1e-12);
    }

    #[test]
    fn procrustes_recovers_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_orthonormal(8, 3, &mut rng);
        let q = random_orthonormal(3, 3, &mut rng);
        let b = &a * &q;
        let found = procrustes(&a, &b);
        assert!(max_abs(&(found - q)) < 1e-10);
    }
}
