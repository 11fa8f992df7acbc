//! Monte-Carlo checks of the closed-form disturbance expectations.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grassmann::{
    dirichlet_params, gaussian_perturbation_check, mc_basis_expectation, mc_expectation_parallel, sample_dirichlet,
    DisturbanceKind, DisturbanceSpec, ThetaLaw,
};
use crate::kernels::{dense, retention_prob};
use crate::linalg::{max_abs, random_orthonormal};
use crate::rng;
use crate::subspace::{SequenceMatrix, SubspaceRep};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    /// Observed discrepancy.
    pub statistic: f64,
    /// Largest discrepancy accepted.
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: impl Into<String>, statistic: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            statistic,
            tolerance,
            passed: statistic <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn test_rep(d: usize, singvals: &[f64], seed: u64) -> Result<SubspaceRep> {
    let basis = random_orthonormal(d, singvals.len(), &mut rng::seeded(seed));
    SubspaceRep::from_parts(basis, singvals.to_vec())
}

/// Fixed-angle disturbance of one basis: `E[u~ u~^T] = cos^2 t uu^T + sin^2 t / (D - m) U_perp U_perp^T`,
/// compared entrywise with tolerance `5 / sqrt(K)`.
pub fn check_fixed_angle(samples: usize, seed: u64) -> Result<CheckResult> {
    let (d, theta) = (10, 0.6f64);
    let rep = test_rep(d, &[0.5, 0.3], seed)?;
    let null = rep.null_complement()?;
    let u = rep.basis().column(0).into_owned();
    let est = mc_basis_expectation(
        &u,
        &null,
        0.5,
        ThetaLaw::Fixed { theta },
        samples,
        &mut rng::derived(seed, &[1]),
    )?;
    let q = null.basis() * null.basis().transpose();
    let expected = &u * u.transpose() * theta.cos().powi(2) + q * (theta.sin().powi(2) / (d - 2) as f64);
    Ok(CheckResult::new(
        "pseudo-gaussian fixed angle",
        max_abs(&(est.mean_matrix - expected)),
        5.0 / (samples as f64).sqrt(),
    ))
}

fn matrix_check(
    name: &str,
    rep: &SubspaceRep,
    kind: DisturbanceKind,
    expected: DMatrix<f64>,
    samples: usize,
    seed: u64,
) -> Result<CheckResult> {
    let spec = DisturbanceSpec { kind, seed };
    let est = mc_expectation_parallel(rep, &spec, samples, 16)?;
    let tol = 5.0 * est.stderr.max(1.0 / samples as f64);
    Ok(CheckResult::new(name, max_abs(&(est.mean_matrix - expected)), tol))
}

/// Calibrated pseudo-Gaussian disturbance against `U (Sigma - Delta I) U^T + Delta I`.
pub fn check_pseudo_gaussian(samples: usize, seed: u64) -> Result<CheckResult> {
    let rep = test_rep(12, &[0.5, 0.25, 0.1], seed)?;
    let epsilon = 0.5;
    let expected = dense::dg_pg_feature(&rep, epsilon)?;
    matrix_check(
        "pseudo-gaussian expectation",
        &rep,
        DisturbanceKind::PseudoGaussian {
            epsilon,
            theta_law: ThetaLaw::Calibrated,
        },
        expected,
        samples,
        rng::derive_seed(seed, &[2]),
    )
}

/// Dirichlet spectrum resampling against `sum_l p_l u_l u_l^T`.
pub fn check_dirichlet_expectation(samples: usize, seed: u64) -> Result<CheckResult> {
    let rep = test_rep(8, &[0.5, 0.3, 0.15], seed)?;
    let lambda_m = 0.2;
    let expected = dense::dg_dir_feature(&rep, lambda_m)?;
    matrix_check(
        "dirichlet expectation",
        &rep,
        DisturbanceKind::Dirichlet { lambda_m },
        expected,
        samples,
        rng::derive_seed(seed, &[3]),
    )
}

/// Exceedance frequencies of Dirichlet draws against the retention
/// probabilities, within 3 binomial standard errors per basis.
pub fn check_exceedance(lambdas: &[f64], lambda_m: f64, samples: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let rep = test_rep(lambdas.len() + 2, lambdas, seed)?;
    let params = dirichlet_params(&rep);
    let chunks = 16;
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::derived(seed, &[4, c as u64]);
            let k = samples / chunks + usize::from(c < samples % chunks);
            let mut hits = vec![0usize; lambdas.len()];
            for _ in 0..k {
                let draw = sample_dirichlet(&params, &mut r)?;
                for (h, v) in hits.iter_mut().zip(&draw) {
                    *h += usize::from(*v > lambda_m);
                }
            }
            Ok(hits)
        })
        .collect::<Result<Vec<Vec<usize>>>>()?;
    lambdas
        .iter()
        .enumerate()
        .map(|(l, &lam)| {
            let p = retention_prob(lam, lambda_m)?;
            let freq = counts.iter().map(|h| h[l]).sum::<usize>() as f64 / samples as f64;
            let se = (p * (1.0 - p) / samples as f64).sqrt();
            Ok(CheckResult::new(
                format!("exceedance lambda={lam} lambda_m={lambda_m}"),
                (freq - p).abs(),
                3.0 * se.max(1.0 / samples as f64),
            ))
        })
        .collect()
}

/// First-order singular-subspace perturbation: halving the noise should cut
/// the prediction error by well over half.
pub fn check_perturbation(trials: usize, seed: u64) -> Result<CheckResult> {
    let (d, n) = (20, 40);
    let mut r = rng::derived(seed, &[5]);
    let u = random_orthonormal(d, 5, &mut r);
    let v = random_orthonormal(n, 5, &mut r);
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![5.0, 4.0, 3.0, 2.0, 1.0]));
    let x = SequenceMatrix::new(u * s * v.transpose(), "spectrum-5")?;
    let report = gaussian_perturbation_check(&x, 5, 1e-3, trials, &mut r)?;
    Ok(CheckResult::new("perturbation error ratio", report.ratio(), 0.6))
}

/// The full suite with `samples` Monte-Carlo draws per check.
pub fn run_validation(samples: usize, seed: u64) -> Result<ValidationReport> {
    let mut checks = vec![
        check_fixed_angle(samples, seed)?,
        check_pseudo_gaussian(samples, seed)?,
        check_dirichlet_expectation(samples, seed)?,
    ];
    for lambda_m in [0.1, 0.5] {
        checks.extend(check_exceedance(&[0.7, 0.2, 0.1], lambda_m, samples, seed)?);
    }
    checks.push(check_perturbation(200, seed)?);
    Ok(ValidationReport { samples, seed, checks })
}
