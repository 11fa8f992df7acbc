//! Grassmann geometry and disturbance samplers.
//!
//! The kernels in [`crate::kernels`] are closed-form expectations over random
//! disturbances of subspaces. This module provides the geometry those
//! disturbances live in (horizontal tangent vectors, the exponential map,
//! principal angles) and Monte-Carlo samplers whose empirical moments are
//! compared against the closed forms.
//!
//! Disturbed bases are sampled column by column: each basis `u` becomes
//! `u cos(theta) + w sin(theta)` with `w` uniform on the unit sphere of the
//! null space. Joint orthonormality of the disturbed columns is not enforced;
//! only the per-basis second moments enter the kernels.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{c_sigma, sigma_lambda};
use crate::linalg;
use crate::rng;
use crate::subspace::{null_complement, NullBasis, SequenceMatrix, SubspaceRep};

/// Largest `|U^T H|` accepted for a horizontal tangent vector.
pub const HORIZONTAL_TOL: f64 = 1e-8;

/// A horizontal tangent vector `H` at a base point `U` (`U^T H = 0`).
#[derive(Debug, Clone)]
pub struct TangentVector<'a> {
    matrix: DMatrix<f64>,
    base: &'a SubspaceRep,
}

impl<'a> TangentVector<'a> {
    pub fn new(base: &'a SubspaceRep, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.shape() != base.basis().shape() {
            return Err(Error::invalid(format!(
                "tangent shape {:?} differs from base shape {:?}",
                matrix.shape(),
                base.basis().shape()
            )));
        }
        let resid = linalg::max_abs(&(base.basis().transpose() * &matrix));
        if resid > HORIZONTAL_TOL {
            return Err(Error::NotHorizontal(resid));
        }
        Ok(Self { matrix, base })
    }

    /// `(I - U U^T) Z`, the horizontal part of an arbitrary `D x m` matrix.
    pub fn project(base: &'a SubspaceRep, z: &DMatrix<f64>) -> Result<Self> {
        let u = base.basis();
        let h = z - u * (u.transpose() * z);
        Self::new(base, h)
    }

    /// `U_perp Z` for null-space coordinates `Z` of shape `(D - m) x m`.
    pub fn from_null_coords(base: &'a SubspaceRep, null: &NullBasis, z: &DMatrix<f64>) -> Result<Self> {
        Self::new(base, null.basis() * z)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn base(&self) -> &SubspaceRep {
        self.base
    }
}

/// Geodesic step `Exp_U(H) = (U V_H cos S_H + U_H sin S_H) V_H^T` where
/// `H = U_H S_H V_H^T` is the compact SVD. The spectrum metadata of the base
/// point is carried over unchanged.
pub fn exp_map(base: &SubspaceRep, tangent: &TangentVector<'_>) -> Result<SubspaceRep> {
    if base.basis().shape() != tangent.matrix().shape() {
        return Err(Error::invalid("tangent vector belongs to a different base point"));
    }
    let resid = linalg::max_abs(&(base.basis().transpose() * tangent.matrix()));
    if resid > HORIZONTAL_TOL {
        return Err(Error::NotHorizontal(resid));
    }
    let svd = linalg::thin_svd(tangent.matrix());
    let v = svd.v_t.transpose();
    let cos = DMatrix::from_diagonal(&svd.s.map(f64::cos));
    let sin = DMatrix::from_diagonal(&svd.s.map(f64::sin));
    let moved = (base.basis() * &v * cos + &svd.u * sin) * &svd.v_t;
    SubspaceRep::from_parts(moved, base.singvals().to_vec())
}

/// `U cos(Theta) + H^ sin(Theta)` for an orthonormal horizontal direction
/// `H^` and diagonal angles `Theta`.
pub fn from_polar(base: &SubspaceRep, direction: &DMatrix<f64>, angles: &[f64]) -> Result<SubspaceRep> {
    let m = base.dim();
    if direction.shape() != base.basis().shape() || angles.len() != m {
        return Err(Error::DimensionMismatch {
            context: "polar tangent coordinates".into(),
            expected: m,
            found: angles.len().min(direction.ncols()),
        });
    }
    let resid = linalg::max_abs(&(base.basis().transpose() * direction));
    if resid > HORIZONTAL_TOL {
        return Err(Error::NotHorizontal(resid));
    }
    if linalg::orthonormality_error(direction) > 1e-10 {
        return Err(Error::invalid("polar direction must have orthonormal columns"));
    }
    let mut out = base.basis().clone();
    for (l, &t) in angles.iter().enumerate() {
        let col = base.basis().column(l) * t.cos() + direction.column(l) * t.sin();
        out.set_column(l, &col);
    }
    SubspaceRep::from_parts(out, base.singvals().to_vec())
}

/// Principal angles in ascending order, `theta_i = acos(s_i(A^T B))`.
pub fn principal_angles(a: &SubspaceRep, b: &SubspaceRep) -> Result<Vec<f64>> {
    if a.ambient_dim() != b.ambient_dim() {
        return Err(Error::DimensionMismatch {
            context: "ambient dimension for principal angles".into(),
            expected: a.ambient_dim(),
            found: b.ambient_dim(),
        });
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "subspace dimension for principal angles".into(),
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let s = linalg::singular_values(&(a.basis().transpose() * b.basis()));
    let mut angles: Vec<f64> = s.iter().map(|c| c.clamp(-1.0, 1.0).acos()).collect();
    angles.sort_by(f64::total_cmp);
    Ok(angles)
}

/// Law of the disturbance angle `theta` of one basis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum ThetaLaw {
    /// Deterministic `theta` with `cos^2 theta = c(sigma)`.
    #[default]
    Calibrated,
    /// Deterministic `theta`, independent of `sigma`.
    Fixed { theta: f64 },
    /// `|N(0, (scale * sigma)^2)|` conditioned on `[0, pi/2]`.
    Folded { scale: f64 },
}

impl ThetaLaw {
    fn validate(&self) -> Result<()> {
        match *self {
            ThetaLaw::Fixed { theta } if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&theta) => {
                Err(Error::invalid(format!("fixed theta {theta} outside [0, pi/2]")))
            }
            ThetaLaw::Folded { scale } if !(scale >= 0.0 && scale.is_finite()) => {
                Err(Error::invalid(format!("folded scale {scale} must be finite and >= 0")))
            }
            _ => Ok(()),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, sigma: f64, ambient: usize, m: usize, rng: &mut R) -> f64 {
        match *self {
            ThetaLaw::Calibrated => c_sigma(sigma, ambient, m).sqrt().clamp(0.0, 1.0).acos(),
            ThetaLaw::Fixed { theta } => theta,
            ThetaLaw::Folded { scale } => {
                let sd = scale * sigma;
                if sd == 0.0 {
                    return 0.0;
                }
                loop {
                    let z: f64 = rng.sample(StandardNormal);
                    let t = (z * sd).abs();
                    if t <= std::f64::consts::FRAC_PI_2 {
                        return t;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DisturbanceKind {
    /// Basis-wise pseudo-Gaussian disturbance with spread `sigma_lambda(epsilon)`.
    PseudoGaussian {
        epsilon: f64,
        #[serde(default)]
        theta_law: ThetaLaw,
    },
    /// Dirichlet fluctuation of the spectrum followed by thresholding at `lambda_m`.
    Dirichlet { lambda_m: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    #[serde(flatten)]
    pub kind: DisturbanceKind,
    pub seed: u64,
}

impl DisturbanceSpec {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DisturbanceKind::PseudoGaussian { epsilon, theta_law } => {
                if !(epsilon >= 0.0 && epsilon.is_finite()) {
                    return Err(Error::invalid(format!("epsilon = {epsilon} must be finite and >= 0")));
                }
                theta_law.validate()
            }
            DisturbanceKind::Dirichlet { lambda_m } => {
                if !(0.0..1.0).contains(&lambda_m) {
                    return Err(Error::invalid(format!("lambda_m = {lambda_m} outside [0, 1)")));
                }
                Ok(())
            }
        }
    }

    pub fn rng(&self) -> rng::SeededRng {
        rng::seeded(self.seed)
    }
}

/// Uniform direction on the unit sphere of `R^dim`.
pub fn sample_unit_sphere<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let x = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = x.norm();
        if n > 1e-300 {
            return x / n;
        }
    }
}

/// One disturbed copy `u cos(theta) + U_perp x sin(theta)` of the unit basis `u`.
pub fn sample_basis_disturbance<R: Rng + ?Sized>(
    u: &DVector<f64>,
    null: &NullBasis,
    sigma: f64,
    theta_law: ThetaLaw,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::invalid(format!("sigma = {sigma} outside [0, 1]")));
    }
    if u.len() != null.ambient_dim() {
        return Err(Error::DimensionMismatch {
            context: "basis vector vs null basis".into(),
            expected: null.ambient_dim(),
            found: u.len(),
        });
    }
    if (u.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::invalid("basis vector must have unit norm"));
    }
    theta_law.validate()?;
    if null.dim() == 0 {
        return Err(Error::NoNullSpace(null.ambient_dim()));
    }
    let d = null.ambient_dim();
    let theta = theta_law.sample(sigma, d, d - null.dim(), rng);
    if theta == 0.0 {
        return Ok(u.clone());
    }
    let w = null.basis() * sample_unit_sphere(null.dim(), rng);
    let out = u * theta.cos() + w * theta.sin();
    let n = out.norm();
    Ok(out / n)
}

/// Monte-Carlo estimate of a `D x D` matrix expectation.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub mean_matrix: DMatrix<f64>,
    pub samples: usize,
    /// Largest per-entry standard error of the mean.
    pub stderr: f64,
    second_moment: DMatrix<f64>,
}

impl McEstimate {
    fn from_sums(sum: DMatrix<f64>, sum_sq: DMatrix<f64>, samples: usize) -> Self {
        let k = samples as f64;
        let mut mean = sum / k;
        mean = (&mean + mean.transpose()) * 0.5;
        let second_moment = sum_sq / k;
        let stderr = Self::stderr_of(&mean, &second_moment, samples);
        Self {
            mean_matrix: mean,
            samples,
            stderr,
            second_moment,
        }
    }

    fn stderr_of(mean: &DMatrix<f64>, second: &DMatrix<f64>, samples: usize) -> f64 {
        if samples < 2 {
            return 0.0;
        }
        let k = samples as f64;
        mean.iter()
            .zip(second.iter())
            .map(|(m, s)| ((s - m * m).max(0.0) * k / (k - 1.0) / k).sqrt())
            .fold(0.0, f64::max)
    }

    /// Count-weighted combination of two independent estimates.
    pub fn merge(&self, other: &McEstimate) -> McEstimate {
        let n = self.samples + other.samples;
        let (wa, wb) = (self.samples as f64 / n as f64, other.samples as f64 / n as f64);
        let mean = &self.mean_matrix * wa + &other.mean_matrix * wb;
        let second = &self.second_moment * wa + &other.second_moment * wb;
        let stderr = Self::stderr_of(&mean, &second, n);
        McEstimate {
            mean_matrix: mean,
            samples: n,
            stderr,
            second_moment: second,
        }
    }
}

fn accumulate(sum: &mut DMatrix<f64>, sum_sq: &mut DMatrix<f64>, sample: &DMatrix<f64>) {
    *sum += sample;
    *sum_sq += sample.component_mul(sample);
}

/// Mean of `u~ u~^T` over `samples` disturbed copies of one basis.
pub fn mc_basis_expectation<R: Rng + ?Sized>(
    u: &DVector<f64>,
    null: &NullBasis,
    sigma: f64,
    theta_law: ThetaLaw,
    samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if samples == 0 {
        return Err(Error::invalid("Monte-Carlo estimate needs at least one sample"));
    }
    let d = u.len();
    let mut sum = DMatrix::zeros(d, d);
    let mut sum_sq = DMatrix::zeros(d, d);
    let mut outer = DMatrix::zeros(d, d);
    for _ in 0..samples {
        let v = sample_basis_disturbance(u, null, sigma, theta_law, rng)?;
        outer.ger(1.0, &v, &v, 0.0);
        accumulate(&mut sum, &mut sum_sq, &outer);
    }
    Ok(McEstimate::from_sums(sum, sum_sq, samples))
}

/// Dirichlet parameters of a representation: its normalized singular values
/// plus, when the kept values sum to less than one, a residual component for
/// the discarded part of the spectrum. The marginal of each kept value is then
/// `Beta(lambda_l, 1 - lambda_l)`.
pub fn dirichlet_params(rep: &SubspaceRep) -> Vec<f64> {
    let mut params = rep.singvals().to_vec();
    let residual = 1.0 - params.iter().sum::<f64>();
    if residual > 1e-12 {
        params.push(residual);
    }
    params
}

/// Draws from `Dir(lambdas)` by normalizing independent `Gamma(lambda_l, 1)`
/// variates. Small shapes use `G(a) = G(a + 1) U^(1/a)` in log space, so no
/// component underflows to zero before normalization.
pub fn sample_dirichlet<R: Rng + ?Sized>(lambdas: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if lambdas.is_empty() {
        return Err(Error::Empty("Dirichlet parameters".into()));
    }
    if let Some(v) = lambdas.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!("Dirichlet parameter {v} must be positive")));
    }
    let total: f64 = lambdas.iter().sum();
    if (total - 1.0).abs() > 1e-8 {
        return Err(Error::invalid(format!(
            "Dirichlet parameters sum to {total}, expected 1"
        )));
    }
    if lambdas.len() == 1 {
        return Ok(vec![1.0]);
    }
    let logs = lambdas
        .iter()
        .map(|&a| {
            let g = Gamma::new(a + 1.0, 1.0).map_err(|e| Error::invalid(format!("gamma shape {a}: {e}")))?;
            let boosted: f64 = g.sample(rng);
            let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
            Ok(boosted.ln() + u.ln() / a)
        })
        .collect::<Result<Vec<f64>>>()?;
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / s).collect())
}

/// Mean of `U~ U~^T = sum_l u~_l u~_l^T` over disturbed copies of `rep`.
///
/// * Pseudo-Gaussian: every basis is disturbed independently with spread
///   `sigma_lambda(lambda_l, epsilon)`.
/// * Dirichlet: the spectrum is resampled from [`dirichlet_params`] and basis
///   `l` is kept when its resampled value exceeds `lambda_m`.
pub fn mc_expectation<R: Rng + ?Sized>(
    rep: &SubspaceRep,
    spec: &DisturbanceSpec,
    samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    spec.validate()?;
    if samples == 0 {
        return Err(Error::invalid("Monte-Carlo estimate needs at least one sample"));
    }
    let d = rep.ambient_dim();
    let m = rep.dim();
    let mut sum = DMatrix::zeros(d, d);
    let mut sum_sq = DMatrix::zeros(d, d);
    let mut draw = DMatrix::zeros(d, d);
    match spec.kind {
        DisturbanceKind::PseudoGaussian { epsilon, theta_law } => {
            let null = null_complement(rep.basis())?;
            let sigmas = rep
                .singvals()
                .iter()
                .map(|&l| sigma_lambda(l, epsilon, d))
                .collect::<Result<Vec<f64>>>()?;
            let cols: Vec<DVector<f64>> = (0..m).map(|l| rep.basis().column(l).into_owned()).collect();
            for _ in 0..samples {
                draw.fill(0.0);
                for (u, &s) in cols.iter().zip(&sigmas) {
                    let v = sample_basis_disturbance(u, &null, s, theta_law, rng)?;
                    draw.ger(1.0, &v, &v, 1.0);
                }
                accumulate(&mut sum, &mut sum_sq, &draw);
            }
        }
        DisturbanceKind::Dirichlet { lambda_m } => {
            let params = dirichlet_params(rep);
            let cols: Vec<DVector<f64>> = (0..m).map(|l| rep.basis().column(l).into_owned()).collect();
            for _ in 0..samples {
                let lam = sample_dirichlet(&params, rng)?;
                draw.fill(0.0);
                for (u, &l) in cols.iter().zip(&lam) {
                    if l > lambda_m {
                        draw.ger(1.0, u, u, 1.0);
                    }
                }
                accumulate(&mut sum, &mut sum_sq, &draw);
            }
        }
    }
    Ok(McEstimate::from_sums(sum, sum_sq, samples))
}

/// [`mc_expectation`] split over `chunks` independent streams derived from the
/// spec's seed and evaluated in parallel. Same `chunks` gives the same result.
pub fn mc_expectation_parallel(
    rep: &SubspaceRep,
    spec: &DisturbanceSpec,
    samples: usize,
    chunks: usize,
) -> Result<McEstimate> {
    let chunks = chunks.clamp(1, samples.max(1));
    let base = samples / chunks;
    let extra = samples % chunks;
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let k = base + usize::from(c < extra);
            let mut r = rng::derived(spec.seed, &[c as u64]);
            mc_expectation(rep, spec, k, &mut r)
        })
        .collect::<Result<Vec<McEstimate>>>()?;
    Ok(parts[1..].iter().fold(parts[0].clone(), |acc, p| acc.merge(p)))
}

/// Errors of the first-order perturbation model at `eps` and `eps / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub eps: f64,
    pub trials: usize,
    pub mean_error_at_eps: f64,
    pub mean_error_at_half_eps: f64,
}

impl PerturbationReport {
    /// `error(eps / 2) / error(eps)`; about 1/4 when the residual is second order.
    pub fn ratio(&self) -> f64 {
        if self.mean_error_at_eps == 0.0 {
            0.0
        } else {
            self.mean_error_at_half_eps / self.mean_error_at_eps
        }
    }
}

/// Compares the top-`m` left singular subspace of `X + eps W`
/// (`W_ij ~ N(0, 1/D)`) with the first-order prediction
/// `U + eps U_perp W0 S^-1`, where `W0 = U_perp^T W V` is the null-space
/// component of the noise seen through the right singular vectors. The true
/// basis is Procrustes-aligned to the prediction before differencing. Each
/// trial reuses one noise draw for `eps` and `eps / 2`.
pub fn gaussian_perturbation_check<R: Rng + ?Sized>(
    x: &SequenceMatrix,
    m: usize,
    eps: f64,
    trials: usize,
    rng: &mut R,
) -> Result<PerturbationReport> {
    let (d, n) = (x.dim(), x.frames());
    if m == 0 || m >= d || m > n {
        return Err(Error::invalid(format!(
            "subspace dimension {m} invalid for a {d}x{n} matrix"
        )));
    }
    if trials == 0 {
        return Err(Error::invalid("perturbation check needs at least one trial"));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("noise level {eps} must be finite and >= 0")));
    }
    if eps > 1.0 / (d as f64).sqrt() {
        return Err(Error::invalid(format!(
            "noise level {eps} exceeds the small-noise regime 1/sqrt(D) = {}",
            1.0 / (d as f64).sqrt()
        )));
    }
    let svd = linalg::thin_svd(x.data());
    let s = svd.s.as_slice();
    if !(s[m - 1] > s[0] * 1e-12) {
        return Err(Error::invalid(format!("matrix rank is below {m}")));
    }
    let spectrum_end = (m + 1).min(s.len());
    if s[..spectrum_end].windows(2).any(|w| w[0] - w[1] < 1e-6) {
        return Err(Error::PerturbationInapplicable(
            "repeated leading singular values".into(),
        ));
    }
    if eps == 0.0 {
        return Ok(PerturbationReport {
            eps,
            trials,
            mean_error_at_eps: 0.0,
            mean_error_at_half_eps: 0.0,
        });
    }
    let u = svd.u.columns(0, m).into_owned();
    let v = svd.v_t.rows(0, m).transpose();
    let s_inv = DMatrix::from_diagonal(&DVector::from_iterator(m, s[..m].iter().map(|v| 1.0 / v)));
    let null = null_complement(&u)?;
    let scale = 1.0 / (d as f64).sqrt();

    let mut total = [0.0_f64; 2];
    for _ in 0..trials {
        let w = linalg::gaussian_matrix(d, n, rng) * scale;
        let w0 = null.basis().transpose() * &w * &v;
        let direction = null.basis() * w0 * &s_inv;
        for (slot, e) in [eps, 0.5 * eps].into_iter().enumerate() {
            let noisy = x.data() + &w * e;
            let top = linalg::thin_svd(&noisy).u.columns(0, m).into_owned();
            let predicted = &u + &direction * e;
            let q = linalg::procrustes(&top, &predicted);
            total[slot] += (top * q - predicted).norm();
        }
    }
    Ok(PerturbationReport {
        eps,
        trials,
        mean_error_at_eps: total[0] / trials as f64,
        mean_error_at_half_eps: total[1] / trials as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{dense, retention_prob};
    use crate::linalg::{max_abs, orthonormality_error, random_orthonormal};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_6};

    fn rep_from(basis: DMatrix<f64>) -> SubspaceRep {
        SubspaceRep::uniform(basis).unwrap()
    }

    fn axis(d: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        v
    }

    #[test]
    fn zero_step_stays_put() {
        let mut r = rng::seeded(1);
        let u = rep_from(random_orthonormal(7, 3, &mut r));
        let h = TangentVector::new(&u, DMatrix::zeros(7, 3)).unwrap();
        let moved = exp_map(&u, &h).unwrap();
        assert!(max_abs(&(moved.projector() - u.projector())) <= 1e-10);
    }

    #[test]
    fn quarter_turn_in_the_plane() {
        let u = rep_from(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
        let h = TangentVector::new(&u, DMatrix::from_column_slice(2, 1, &[0.0, FRAC_PI_4])).unwrap();
        let moved = exp_map(&u, &h).unwrap();
        assert!((moved.basis()[(0, 0)] - FRAC_PI_4.cos()).abs() < 1e-15);
        assert!((moved.basis()[(1, 0)] - FRAC_PI_4.sin()).abs() < 1e-15);
    }

    #[test]
    fn cut_locus_is_orthogonal() {
        let mut r = rng::seeded(2);
        let u = rep_from(random_orthonormal(9, 3, &mut r));
        let null = u.null_complement().unwrap();
        let coords = random_orthonormal(6, 3, &mut r);
        let direction = null.basis() * coords;
        let h = TangentVector::new(&u, &direction * FRAC_PI_2).unwrap();
        let moved = exp_map(&u, &h).unwrap();
        let s = linalg::singular_values(&(moved.basis().transpose() * u.basis()));
        assert!(s.iter().all(|&v| v.abs() < 1e-12));
        let angles = principal_angles(&u, &moved).unwrap();
        assert!(angles.iter().all(|&a| (a - FRAC_PI_2).abs() < 1e-7));
    }

    #[test]
    fn non_horizontal_rejected() {
        let u = rep_from(DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]));
        let bad = DMatrix::from_column_slice(3, 1, &[0.1, 1.0, 0.0]);
        assert!(matches!(TangentVector::new(&u, bad), Err(Error::NotHorizontal(_))));
    }

    #[test]
    fn principal_angle_examples() {
        let mut r = rng::seeded(3);
        let a = rep_from(random_orthonormal(6, 2, &mut r));
        assert!(principal_angles(&a, &a).unwrap().iter().all(|&t| t.abs() < 1e-7));
        let e1 = rep_from(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
        let e2 = rep_from(DMatrix::from_column_slice(2, 1, &[0.0, 1.0]));
        assert!((principal_angles(&e1, &e2).unwrap()[0] - FRAC_PI_2).abs() < 1e-15);
        let diag = rep_from(DMatrix::from_column_slice(2, 1, &[0.5f64.sqrt(), 0.5f64.sqrt()]));
        assert!((principal_angles(&e1, &diag).unwrap()[0] - FRAC_PI_4).abs() < 1e-15);
        let b = rep_from(random_orthonormal(6, 3, &mut r));
        assert!(principal_angles(&a, &b).is_err());
        let c = rep_from(random_orthonormal(5, 2, &mut r));
        assert!(principal_angles(&a, &c).is_err());
    }

    #[test]
    fn geodesic_and_polar_forms_agree() {
        let mut r = rng::seeded(4);
        for _ in 0..20 {
            let u = rep_from(random_orthonormal(10, 3, &mut r));
            let z = linalg::gaussian_matrix(10, 3, &mut r) * 0.4;
            let h = TangentVector::project(&u, &z).unwrap();
            let moved = exp_map(&u, &h).unwrap();
            assert!(orthonormality_error(moved.basis()) <= 1e-10);

            // same point from the rotated base U V_H and the step U_H S_H
            let svd = linalg::thin_svd(h.matrix());
            let rotated = rep_from(u.basis() * svd.v_t.transpose());
            let step = &svd.u * DMatrix::from_diagonal(&svd.s);
            let h2 = TangentVector::new(&rotated, step).unwrap();
            let moved2 = exp_map(&rotated, &h2).unwrap();
            assert!(max_abs(&(moved.projector() - moved2.projector())) <= 1e-10);
        }
    }

    #[test]
    fn polar_round_trip_recovers_angles() {
        let mut r = rng::seeded(5);
        for _ in 0..20 {
            let u = rep_from(random_orthonormal(12, 4, &mut r));
            let null = u.null_complement().unwrap();
            let direction = null.basis() * random_orthonormal(8, 4, &mut r);
            let mut angles: Vec<f64> = (0..4).map(|_| r.random_range(0.05..1.5)).collect();
            let moved = from_polar(&u, &direction, &angles).unwrap();
            angles.sort_by(f64::total_cmp);
            let got = principal_angles(&u, &moved).unwrap();
            for (a, b) in angles.iter().zip(&got) {
                assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn basis_disturbance_edge_laws() {
        let mut r = rng::seeded(6);
        let u_rep = rep_from(random_orthonormal(5, 2, &mut r));
        let null = u_rep.null_complement().unwrap();
        let u = u_rep.basis().column(0).into_owned();
        let same = sample_basis_disturbance(&u, &null, 0.0, ThetaLaw::Calibrated, &mut r).unwrap();
        assert_eq!(same, u);
        let folded = sample_basis_disturbance(&u, &null, 0.0, ThetaLaw::Folded { scale: 1.0 }, &mut r).unwrap();
        assert_eq!(folded, u);
        for _ in 0..20 {
            let perp = sample_basis_disturbance(&u, &null, 0.3, ThetaLaw::Fixed { theta: FRAC_PI_2 }, &mut r).unwrap();
            assert!(u.dot(&perp).abs() < 1e-12);
            assert!((perp.norm() - 1.0).abs() < 1e-12);
            assert!((u_rep.basis().transpose() * &perp).amax() < 1e-12);
        }
        assert!(sample_basis_disturbance(&u, &null, 1.5, ThetaLaw::Calibrated, &mut r).is_err());
        assert!(sample_basis_disturbance(&u, &null, -0.1, ThetaLaw::Calibrated, &mut r).is_err());
    }

    #[test]
    fn fixed_angle_cos_squared() {
        let mut r = rng::seeded(7);
        let u_rep = rep_from(DMatrix::from_column_slice(5, 1, &[1.0, 0.0, 0.0, 0.0, 0.0]));
        let null = u_rep.null_complement().unwrap();
        let u = axis(5, 0);
        let k = 100_000;
        let vals: Vec<f64> = (0..k)
            .map(|_| {
                let v = sample_basis_disturbance(&u, &null, 0.5, ThetaLaw::Fixed { theta: FRAC_PI_6 }, &mut r).unwrap();
                u.dot(&v).powi(2)
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / k as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        let se = (var / k as f64).sqrt();
        // cos^2 is deterministic here, so the spread is rounding only
        assert!((mean - 0.75).abs() <= 3.0 * se + 1e-12);
    }

    #[test]
    fn calibrated_law_hits_c_sigma() {
        let mut r = rng::seeded(8);
        let u_rep = rep_from(random_orthonormal(6, 2, &mut r));
        let null = u_rep.null_complement().unwrap();
        let u = u_rep.basis().column(1).into_owned();
        let v = sample_basis_disturbance(&u, &null, 0.6, ThetaLaw::Calibrated, &mut r).unwrap();
        assert!((u.dot(&v).powi(2) - c_sigma(0.6, 6, 2)).abs() < 1e-12);
    }

    #[test]
    fn mc_zero_sigma_is_exact() {
        let mut r = rng::seeded(9);
        let u_rep = rep_from(random_orthonormal(6, 2, &mut r));
        let null = u_rep.null_complement().unwrap();
        let u = u_rep.basis().column(0).into_owned();
        let est = mc_basis_expectation(&u, &null, 0.0, ThetaLaw::Calibrated, 50, &mut r).unwrap();
        assert!(max_abs(&(est.mean_matrix - &u * u.transpose())) < 1e-15);
        assert_eq!(est.samples, 50);
    }

    #[test]
    fn mc_fixed_angle_matches_basis_expectation() {
        let mut r = rng::seeded(10);
        let (d, m) = (6, 2);
        let u_rep = rep_from(random_orthonormal(d, m, &mut r));
        let null = u_rep.null_complement().unwrap();
        let u = u_rep.basis().column(0).into_owned();
        let theta0: f64 = 0.7;
        let k = 100_000;
        let est = mc_basis_expectation(&u, &null, 0.2, ThetaLaw::Fixed { theta: theta0 }, k, &mut r).unwrap();
        let c = theta0.cos().powi(2);
        let want = &u * u.transpose() * c + null.basis() * null.basis().transpose() * ((1.0 - c) / (d - m) as f64);
        assert!(max_abs(&(&est.mean_matrix - &want)) <= 5.0 / (k as f64).sqrt());
        // null-space block is isotropic, U block is diagonal-dominant
        let nb = null.basis().transpose() * &est.mean_matrix * null.basis();
        let iso = (1.0 - c) / (d - m) as f64;
        assert!(max_abs(&(nb - DMatrix::identity(d - m, d - m) * iso)) <= 5.0 / (k as f64).sqrt());
    }

    #[test]
    fn mc_pseudo_gaussian_matches_dense_feature() {
        let mut r = rng::seeded(11);
        let basis = random_orthonormal(6, 2, &mut r);
        let rep = SubspaceRep::from_parts(basis, vec![0.5, 0.2]).unwrap();
        let spec = DisturbanceSpec {
            kind: DisturbanceKind::PseudoGaussian {
                epsilon: 3.0,
                theta_law: ThetaLaw::Calibrated,
            },
            seed: 5,
        };
        let k = 20_000;
        let est = mc_expectation_parallel(&rep, &spec, k, 4).unwrap();
        let want = dense::dg_pg_feature(&rep, 3.0).unwrap();
        assert!(max_abs(&(&est.mean_matrix - &want)) <= 5.0 / (k as f64).sqrt());
        // parallel chunks are reproducible
        assert_eq!(est, mc_expectation_parallel(&rep, &spec, k, 4).unwrap());
    }

    #[test]
    fn mc_dirichlet_matches_retention() {
        let mut r = rng::seeded(12);
        let basis = random_orthonormal(5, 3, &mut r);
        let rep = SubspaceRep::from_parts(basis, vec![0.7, 0.2, 0.1]).unwrap();
        let spec = DisturbanceSpec {
            kind: DisturbanceKind::Dirichlet { lambda_m: 0.15 },
            seed: 3,
        };
        let k = 40_000;
        let est = mc_expectation(&rep, &spec, k, &mut spec.rng()).unwrap();
        let want = dense::dg_dir_feature(&rep, 0.15).unwrap();
        assert!(max_abs(&(&est.mean_matrix - &want)) <= 5.0 * est.stderr.max(1.0 / k as f64));
        assert!(retention_prob(0.7, 0.15).unwrap() > retention_prob(0.1, 0.15).unwrap());
    }

    #[test]
    fn dirichlet_residual_component() {
        let rep = SubspaceRep::from_parts(DMatrix::identity(4, 2), vec![0.5, 0.3]).unwrap();
        let p = dirichlet_params(&rep);
        assert_eq!(p.len(), 3);
        assert!((p[2] - 0.2).abs() < 1e-15);
        let full = SubspaceRep::from_parts(DMatrix::identity(4, 2), vec![0.6, 0.4]).unwrap();
        assert_eq!(dirichlet_params(&full).len(), 2);
    }

    #[test]
    fn dirichlet_sampler_cases() {
        let mut r = rng::seeded(13);
        assert_eq!(sample_dirichlet(&[1.0], &mut r).unwrap(), vec![1.0]);
        let k = 100_000;
        let mut acc = [0.0; 2];
        let mut acc_sq = [0.0; 2];
        for _ in 0..k {
            let s = sample_dirichlet(&[0.5, 0.5], &mut r).unwrap();
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..2 {
                acc[i] += s[i];
                acc_sq[i] += s[i] * s[i];
            }
        }
        for i in 0..2 {
            let mean = acc[i] / k as f64;
            let var = acc_sq[i] / k as f64 - mean * mean;
            assert!((mean - 0.5).abs() <= 3.0 * (var / k as f64).sqrt());
        }
        assert!(sample_dirichlet(&[0.5, 0.0, 0.5], &mut r).is_err());
        assert!(sample_dirichlet(&[0.5, 0.6], &mut r).is_err());
    }

    #[test]
    fn dirichlet_tiny_shapes_stay_on_simplex() {
        let mut r = rng::seeded(14);
        let p = [0.998, 0.001, 0.001];
        for _ in 0..1000 {
            let s = sample_dirichlet(&p, &mut r).unwrap();
            assert!(s.iter().all(|v| v.is_finite() && *v >= 0.0));
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn samplers_are_seed_deterministic() {
        let spec = DisturbanceSpec {
            kind: DisturbanceKind::Dirichlet { lambda_m: 0.3 },
            seed: 99,
        };
        let rep = SubspaceRep::from_parts(DMatrix::identity(4, 2), vec![0.6, 0.3]).unwrap();
        let a = mc_expectation(&rep, &spec, 500, &mut spec.rng()).unwrap();
        let b = mc_expectation(&rep, &spec, 500, &mut spec.rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn merge_matches_single_run_moments() {
        let mut r = rng::seeded(15);
        let u_rep = rep_from(random_orthonormal(4, 1, &mut r));
        let null = u_rep.null_complement().unwrap();
        let u = u_rep.basis().column(0).into_owned();
        let law = ThetaLaw::Folded { scale: 1.0 };
        let a = mc_basis_expectation(&u, &null, 0.5, law, 300, &mut r).unwrap();
        let b = mc_basis_expectation(&u, &null, 0.5, law, 100, &mut r).unwrap();
        let merged = a.merge(&b);
        assert_eq!(merged.samples, 400);
        let want = (&a.mean_matrix * 300.0 + &b.mean_matrix * 100.0) / 400.0;
        assert!(max_abs(&(merged.mean_matrix - want)) < 1e-15);
    }

    fn spectrum_matrix(d: usize, n: usize, spectrum: &[f64], seed: u64) -> SequenceMatrix {
        let mut r = rng::seeded(seed);
        let k = spectrum.len();
        let u = random_orthonormal(d, k, &mut r);
        let v = random_orthonormal(n, k, &mut r);
        let s = DMatrix::from_diagonal(&DVector::from_column_slice(spectrum));
        SequenceMatrix::new(u * s * v.transpose(), "spectrum").unwrap()
    }

    #[test]
    fn perturbation_zero_noise() {
        let x = spectrum_matrix(10, 15, &[3.0, 2.0, 1.0], 1);
        let rep = gaussian_perturbation_check(&x, 3, 0.0, 5, &mut rng::seeded(0)).unwrap();
        assert_eq!(rep.mean_error_at_eps, 0.0);
        assert_eq!(rep.mean_error_at_half_eps, 0.0);
    }

    #[test]
    fn perturbation_residual_is_second_order() {
        let x = spectrum_matrix(12, 20, &[5.0, 4.0, 3.0], 2);
        let rep = gaussian_perturbation_check(&x, 3, 1e-3, 100, &mut rng::seeded(1)).unwrap();
        assert!(rep.ratio() <= 0.6, "ratio {}", rep.ratio());
    }

    #[test]
    fn perturbation_error_grows_as_gap_shrinks() {
        let wide = spectrum_matrix(12, 20, &[5.0, 4.0, 3.0], 3);
        let narrow = spectrum_matrix(12, 20, &[5.0, 4.0, 0.3], 3);
        let a = gaussian_perturbation_check(&wide, 3, 1e-3, 100, &mut rng::seeded(2)).unwrap();
        let b = gaussian_perturbation_check(&narrow, 3, 1e-3, 100, &mut rng::seeded(2)).unwrap();
        assert!(b.mean_error_at_eps > a.mean_error_at_eps);
    }

    #[test]
    fn perturbation_rejects_repeated_values() {
        let x = spectrum_matrix(8, 10, &[2.0, 2.0, 1.0], 4);
        assert!(matches!(
            gaussian_perturbation_check(&x, 3, 1e-3, 3, &mut rng::seeded(3)),
            Err(Error::PerturbationInapplicable(_))
        ));
    }
}
