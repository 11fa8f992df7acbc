//! Grassmann kernels on [`SubspaceRep`] pairs.
//!
//! Every kernel here has the form
//! `tr(W_A A^T B W_B B^T A) + R` for diagonal weights `W` and a residual `R`,
//! evaluated as `sum_ij w_A[i] w_B[j] (A^T B)_ij^2 + R` in `O(m^2 D)` without
//! forming any `D x D` matrix. The dense feature maps used to cross-check these
//! closed forms live in [`dense`].

pub mod dense;
mod gram;
pub mod special;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subspace::SubspaceRep;

pub use gram::{cross_gram, gram, GramMatrix, InstanceWeights};
pub use special::{ln_gamma, reg_inc_beta};

/// Kernel family and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum KernelFamily {
    Projection,
    BinetCauchy,
    ScaledProjection,
    DgPg { epsilon: f64 },
    DgDir { lambda_m: f64 },
}

impl KernelFamily {
    /// Short name used on the command line and in reports.
    pub fn short_name(&self) -> &'static str {
        match self {
            KernelFamily::Projection => "proj",
            KernelFamily::BinetCauchy => "bc",
            KernelFamily::ScaledProjection => "scproj",
            KernelFamily::DgPg { .. } => "dg-pg",
            KernelFamily::DgDir { .. } => "dg-dir",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelFamily::DgPg { epsilon } if !(epsilon >= 0.0 && epsilon.is_finite()) => {
                Err(Error::invalid(format!("epsilon = {epsilon} must be finite and >= 0")))
            }
            KernelFamily::DgDir { lambda_m } if !(0.0..1.0).contains(&lambda_m) => {
                Err(Error::invalid(format!("lambda_m = {lambda_m} outside [0, 1)")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(flatten)]
    pub family: KernelFamily,
    #[serde(default = "default_symmetrize")]
    pub symmetrize: bool,
}

fn default_symmetrize() -> bool {
    true
}

impl KernelSpec {
    pub fn new(family: KernelFamily) -> Self {
        Self {
            family,
            symmetrize: true,
        }
    }

    /// Evaluates the kernel on one pair.
    pub fn eval(&self, a: &SubspaceRep, b: &SubspaceRep) -> Result<f64> {
        self.family.validate()?;
        match self.family {
            KernelFamily::Projection => projection_kernel(a, b),
            KernelFamily::BinetCauchy => binet_cauchy_kernel(a, b),
            KernelFamily::ScaledProjection => scaled_projection_kernel(a, b),
            KernelFamily::DgPg { epsilon } => dg_pg_kernel(a, b, epsilon),
            KernelFamily::DgDir { lambda_m } => dg_dir_kernel(a, b, lambda_m),
        }
    }
}

impl From<KernelFamily> for KernelSpec {
    fn from(family: KernelFamily) -> Self {
        KernelSpec::new(family)
    }
}

/// Diagonal `Sigma` and scalar `Delta` of the pseudo-Gaussian expectation
/// `E[U~ U~^T] = U (Sigma - Delta I) U^T + Delta I`.
#[derive(Debug, Clone, PartialEq)]
pub struct DgCoefficients {
    pub sigma_diag: Vec<f64>,
    pub delta: f64,
}

impl DgCoefficients {
    pub fn trace(&self) -> f64 {
        self.sigma_diag.iter().sum()
    }
}

fn check_ambient(a: &SubspaceRep, b: &SubspaceRep) -> Result<()> {
    if a.ambient_dim() != b.ambient_dim() {
        return Err(Error::DimensionMismatch {
            context: "ambient dimension of kernel arguments".into(),
            expected: a.ambient_dim(),
            found: b.ambient_dim(),
        });
    }
    Ok(())
}

/// `sum_ij wa[i] wb[j] (A^T B)_ij^2`, i.e. `tr(W_A A^T B W_B B^T A)`.
pub(crate) fn weighted_alignment(a: &DMatrix<f64>, wa: &[f64], b: &DMatrix<f64>, wb: &[f64]) -> f64 {
    let ab = a.transpose() * b;
    let mut acc = 0.0;
    for j in 0..ab.ncols() {
        let mut col = 0.0;
        for i in 0..ab.nrows() {
            let v = ab[(i, j)];
            col += wa[i] * v * v;
        }
        acc += wb[j] * col;
    }
    acc
}

/// `tr[(A A^T)(B B^T)] = |A^T B|_F^2`.
pub fn projection_kernel(a: &SubspaceRep, b: &SubspaceRep) -> Result<f64> {
    check_ambient(a, b)?;
    Ok((a.basis().transpose() * b.basis()).norm_squared())
}

/// `det(A^T B)^2`; both subspaces must have the same dimension.
pub fn binet_cauchy_kernel(a: &SubspaceRep, b: &SubspaceRep) -> Result<f64> {
    check_ambient(a, b)?;
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "subspace dimension for Binet-Cauchy kernel".into(),
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let det = (a.basis().transpose() * b.basis()).determinant();
    Ok(det * det)
}

/// `tr(L_A A^T B L_B B^T A)` with `L` the diagonal of normalized singular values.
pub fn scaled_projection_kernel(a: &SubspaceRep, b: &SubspaceRep) -> Result<f64> {
    check_ambient(a, b)?;
    Ok(weighted_alignment(a.basis(), a.singvals(), b.basis(), b.singvals()))
}

/// Expected `cos^2` of the disturbance angle at spread `sigma`:
/// `1 / (sigma^2 (D - m) + 1)`, running from 1 at `sigma = 0` down to the
/// uniform-direction value `1 / (D - m + 1)` at `sigma = 1`.
pub fn c_sigma(sigma: f64, ambient: usize, m: usize) -> f64 {
    assert!((0.0..=1.0).contains(&sigma), "sigma = {sigma} outside [0, 1]");
    assert!(m < ambient, "c_sigma needs m < D (m = {m}, D = {ambient})");
    1.0 / (sigma * sigma * (ambient - m) as f64 + 1.0)
}

/// Disturbance spread of a basis with normalized singular value `lambda`:
/// `sqrt(1 - exp(-(epsilon / D)(1 / lambda - 1)))`.
pub fn sigma_lambda(lambda: f64, epsilon: f64, ambient: usize) -> Result<f64> {
    if !(lambda > 0.0) || lambda > 1.0 + 1e-12 {
        return Err(Error::invalid(format!("singular value {lambda} outside (0, 1]")));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon = {epsilon} must be finite and >= 0")));
    }
    let lambda = lambda.min(1.0);
    let expo = -(epsilon / ambient as f64) * (1.0 / lambda - 1.0);
    // 1 - e^x computed as -expm1(x)
    Ok((-expo.exp_m1()).max(0.0).sqrt())
}

pub fn dg_pg_coefficients(rep: &SubspaceRep, epsilon: f64) -> Result<DgCoefficients> {
    let (d, m) = (rep.ambient_dim(), rep.dim());
    if m >= d {
        return Err(Error::NoNullSpace(d));
    }
    let sigma_diag = rep
        .singvals()
        .iter()
        .map(|&l| sigma_lambda(l, epsilon, d).map(|s| c_sigma(s, d, m)))
        .collect::<Result<Vec<f64>>>()?;
    let delta = (m as f64 - sigma_diag.iter().sum::<f64>()) / (d - m) as f64;
    Ok(DgCoefficients {
        sigma_diag,
        delta: delta.max(0.0),
    })
}

/// DG-PG kernel from precomputed coefficients.
///
/// For subspaces of different dimension the cross identity term is
/// `Delta_A Delta_B (D - m_A - m_B)`, which is what the dense feature map
/// gives and equals `Delta_A Delta_B (D - 2m)` when the dimensions agree.
pub(crate) fn dg_pg_from_coefficients(
    a: &SubspaceRep,
    ca: &DgCoefficients,
    b: &SubspaceRep,
    cb: &DgCoefficients,
) -> f64 {
    let wa: Vec<f64> = ca.sigma_diag.iter().map(|s| s - ca.delta).collect();
    let wb: Vec<f64> = cb.sigma_diag.iter().map(|s| s - cb.delta).collect();
    let d = a.ambient_dim() as f64;
    weighted_alignment(a.basis(), &wa, b.basis(), &wb)
        + ca.delta * cb.trace()
        + cb.delta * ca.trace()
        + ca.delta * cb.delta * (d - a.dim() as f64 - b.dim() as f64)
}

/// Pseudo-Gaussian disturbance Grassmann kernel.
pub fn dg_pg_kernel(a: &SubspaceRep, b: &SubspaceRep, epsilon: f64) -> Result<f64> {
    check_ambient(a, b)?;
    let ca = dg_pg_coefficients(a, epsilon)?;
    let cb = dg_pg_coefficients(b, epsilon)?;
    Ok(dg_pg_from_coefficients(a, &ca, b, &cb))
}

/// Probability that a basis with normalized singular value `lambda_l` stays
/// above the threshold `lambda_m` when the spectrum follows `Dir(lambda)`:
/// `I_{1 - lambda_m}(1 - lambda_l, lambda_l)`.
///
/// Values of `lambda_l` numerically at 0 or 1 give 0 or 1.
pub fn retention_prob(lambda_l: f64, lambda_m: f64) -> Result<f64> {
    const EDGE: f64 = 1e-12;
    if !(0.0..1.0).contains(&lambda_m) {
        return Err(Error::invalid(format!("lambda_m = {lambda_m} outside [0, 1)")));
    }
    if !(-EDGE..=1.0 + EDGE).contains(&lambda_l) || lambda_l.is_nan() {
        return Err(Error::invalid(format!("singular value {lambda_l} outside [0, 1]")));
    }
    if lambda_m == 0.0 {
        return Ok(1.0);
    }
    if lambda_l <= EDGE {
        return Ok(0.0);
    }
    if lambda_l >= 1.0 - EDGE {
        return Ok(1.0);
    }
    Ok(reg_inc_beta(1.0 - lambda_m, 1.0 - lambda_l, lambda_l)?.clamp(0.0, 1.0))
}

pub fn retention_probs(rep: &SubspaceRep, lambda_m: f64) -> Result<Vec<f64>> {
    rep.singvals().iter().map(|&l| retention_prob(l, lambda_m)).collect()
}

/// Dirichlet disturbance Grassmann kernel `tr(P_A A^T B P_B B^T A)`.
pub fn dg_dir_kernel(a: &SubspaceRep, b: &SubspaceRep, lambda_m: f64) -> Result<f64> {
    check_ambient(a, b)?;
    let pa = retention_probs(a, lambda_m)?;
    let pb = retention_probs(b, lambda_m)?;
    Ok(weighted_alignment(a.basis(), &pa, b.basis(), &pb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_orthonormal;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn vec_rep(v: &[f64], lambda: f64) -> SubspaceRep {
        let m = DMatrix::from_column_slice(v.len(), 1, v);
        SubspaceRep::from_parts(&m / m.norm(), vec![lambda]).unwrap()
    }

    pub(crate) fn random_rep<R: Rng>(d: usize, m: usize, rng: &mut R) -> SubspaceRep {
        let basis = random_orthonormal(d, m, rng);
        let mut w: Vec<f64> = (0..=m).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        w.truncate(m);
        w.sort_by(|a, b| b.total_cmp(a));
        SubspaceRep::from_parts(basis, w).unwrap()
    }

    #[test]
    fn projection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = random_rep(9, 4, &mut rng);
        assert!((projection_kernel(&u, &u).unwrap() - 4.0).abs() < 1e-12);
        let e1 = vec_rep(&[1.0, 0.0], 1.0);
        let e2 = vec_rep(&[0.0, 1.0], 1.0);
        assert!(projection_kernel(&e1, &e2).unwrap().abs() < 1e-15);
        let diag = vec_rep(&[1.0, 1.0], 1.0);
        assert!((projection_kernel(&e1, &diag).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ambient_mismatch_is_error() {
        let a = vec_rep(&[1.0, 0.0], 1.0);
        let b = vec_rep(&[1.0, 0.0, 0.0], 1.0);
        for fam in [
            KernelFamily::Projection,
            KernelFamily::BinetCauchy,
            KernelFamily::ScaledProjection,
            KernelFamily::DgPg { epsilon: 0.1 },
            KernelFamily::DgDir { lambda_m: 0.1 },
        ] {
            assert!(matches!(
                KernelSpec::new(fam).eval(&a, &b),
                Err(Error::DimensionMismatch { .. })
            ));
        }
    }

    #[test]
    fn binet_cauchy_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let u = random_rep(8, 3, &mut rng);
        assert!((binet_cauchy_kernel(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        // principal angles (0, pi/2): span(e1, e2) vs span(e1, e3)
        let a = SubspaceRep::uniform(DMatrix::identity(3, 2)).unwrap();
        let b = SubspaceRep::uniform(DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0])).unwrap();
        assert!(binet_cauchy_kernel(&a, &b).unwrap().abs() < 1e-15);
        // 1-dim case coincides with projection
        for _ in 0..10 {
            let x = random_rep(5, 1, &mut rng);
            let y = random_rep(5, 1, &mut rng);
            let bc = binet_cauchy_kernel(&x, &y).unwrap();
            let dot: f64 = (0..5).map(|k| x.basis()[(k, 0)] * y.basis()[(k, 0)]).sum();
            assert!((bc - dot * dot).abs() < 1e-14);
            assert!((bc - projection_kernel(&x, &y).unwrap()).abs() < 1e-14);
        }
        let c = random_rep(8, 2, &mut rng);
        assert!(binet_cauchy_kernel(&u, &c).is_err());
    }

    #[test]
    fn scaled_projection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = 3;
        let a = SubspaceRep::uniform(random_orthonormal(7, m, &mut rng)).unwrap();
        let b = SubspaceRep::uniform(random_orthonormal(7, m, &mut rng)).unwrap();
        let sp = scaled_projection_kernel(&a, &b).unwrap();
        let p = projection_kernel(&a, &b).unwrap();
        assert!((sp - p / (m * m) as f64).abs() < 1e-14);

        let x = vec_rep(&[1.0, 2.0, 0.5], 0.4);
        let y = vec_rep(&[0.3, -1.0, 2.0], 0.7);
        let dot: f64 = (0..3).map(|k| x.basis()[(k, 0)] * y.basis()[(k, 0)]).sum();
        let want = 0.4 * 0.7 * dot * dot;
        assert!((scaled_projection_kernel(&x, &y).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn scaled_projection_matches_dir_at_inverse_threshold() {
        // find lambda_m with p(lambda, lambda_m) = lambda by bisection
        let lambda = 0.4;
        let (mut lo, mut hi) = (0.0, 1.0 - 1e-12);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if retention_prob(lambda, mid).unwrap() > lambda {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lambda_m = 0.5 * (lo + hi);
        assert!((retention_prob(lambda, lambda_m).unwrap() - lambda).abs() < 1e-12);
        let a = vec_rep(&[1.0, 2.0, 0.5, 0.0], lambda);
        let b = vec_rep(&[0.3, -1.0, 2.0, 1.0], lambda);
        let sp = scaled_projection_kernel(&a, &b).unwrap();
        let dir = dg_dir_kernel(&a, &b, lambda_m).unwrap();
        assert!((sp - dir).abs() < 1e-12);
    }

    #[test]
    fn c_sigma_values() {
        assert_eq!(c_sigma(0.0, 10, 3), 1.0);
        assert!((c_sigma(1.0, 10, 3) - 1.0 / 8.0).abs() < 1e-15);
        assert!((c_sigma(0.5, 10, 3) - 4.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn sigma_lambda_values() {
        assert_eq!(sigma_lambda(1.0, 2.0, 10).unwrap(), 0.0);
        assert!(sigma_lambda(1e-300, 2.0, 10).unwrap() > 1.0 - 1e-12);
        for &l in &[0.01, 0.3, 0.9] {
            assert_eq!(sigma_lambda(l, 0.0, 10).unwrap(), 0.0);
        }
        // direct evaluation of the closed form
        let (l, e, d) = (0.25_f64, 0.7_f64, 12usize);
        let want = (1.0 - (-(e / d as f64) * (1.0 / l - 1.0)).exp()).sqrt();
        assert!((sigma_lambda(l, e, d).unwrap() - want).abs() < 1e-15);
        assert!(sigma_lambda(0.0, 1.0, 10).is_err());
        assert!(sigma_lambda(-0.2, 1.0, 10).is_err());
    }

    #[test]
    fn dg_pg_coefficient_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let rep = random_rep(10, 3, &mut rng);
        let c0 = dg_pg_coefficients(&rep, 0.0).unwrap();
        assert!(c0.sigma_diag.iter().all(|&s| s == 1.0));
        assert_eq!(c0.delta, 0.0);

        let eq = SubspaceRep::uniform(random_orthonormal(10, 3, &mut rng)).unwrap();
        let c = dg_pg_coefficients(&eq, 1.5).unwrap();
        let s = c.sigma_diag[0];
        assert!(c.sigma_diag.iter().all(|&v| (v - s).abs() < 1e-15));
        assert!((c.delta - 3.0 * (1.0 - s) / 7.0).abs() < 1e-15);

        let full = SubspaceRep::uniform(DMatrix::identity(3, 3)).unwrap();
        assert!(matches!(dg_pg_coefficients(&full, 1.0), Err(Error::NoNullSpace(3))));
    }

    #[test]
    fn dg_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..20 {
            let a = random_rep(8, 3, &mut rng);
            let b = random_rep(8, 2, &mut rng);
            let p = projection_kernel(&a, &b).unwrap();
            assert!((dg_pg_kernel(&a, &b, 0.0).unwrap() - p).abs() <= 1e-12);
            assert!((dg_dir_kernel(&a, &b, 0.0).unwrap() - p).abs() <= 1e-12);
            assert!(dg_pg_kernel(&a, &a, 3.0).unwrap() >= 0.0);
            assert!(dg_dir_kernel(&a, &a, 0.3).unwrap() <= 3.0 + 1e-12);
        }
    }

    #[test]
    fn retention_prob_cases() {
        assert_eq!(retention_prob(0.3, 0.0).unwrap(), 1.0);
        assert!((retention_prob(0.5, 0.5).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(retention_prob(0.0, 0.4).unwrap(), 0.0);
        assert_eq!(retention_prob(1.0, 0.4).unwrap(), 1.0);
        assert!(retention_prob(0.3, 1.0).is_err());
        assert!(retention_prob(1.5, 0.2).is_err());
        // monotone in both arguments
        let grid: Vec<f64> = (1..20).map(|i| i as f64 / 20.0).collect();
        for w in grid.windows(2) {
            assert!(retention_prob(w[1], 0.3).unwrap() >= retention_prob(w[0], 0.3).unwrap());
            assert!(retention_prob(0.3, w[1]).unwrap() <= retention_prob(0.3, w[0]).unwrap());
        }
    }

    #[test]
    fn rep_1d_pg_matches_hand_expansion() {
        let u = vec_rep(&[1.0, 0.0, 0.0], 0.5);
        let v = vec_rep(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0], 0.5);
        let eps = 0.8;
        let s = sigma_lambda(0.5, eps, 3).unwrap();
        let c = c_sigma(s, 3, 1);
        let delta = (1.0 - c) / 2.0;
        let want = (c - delta) * (c - delta) * 0.5 + 2.0 * delta * c + delta * delta * 1.0;
        assert!((dg_pg_kernel(&u, &v, eps).unwrap() - want).abs() < 1e-14);
    }
}
