//! Dense `D x D` feature maps of the kernels.
//!
//! Each kernel in the parent module is the Frobenius inner product of two of
//! these matrices. They cost `O(D^2 m)` per instance and exist only to check
//! the closed forms.

use nalgebra::DMatrix;

use super::{dg_pg_coefficients, retention_probs};
use crate::error::Result;
use crate::subspace::SubspaceRep;

/// `sum_l w_l u_l u_l^T`.
pub fn weighted_projector(rep: &SubspaceRep, weights: &[f64]) -> DMatrix<f64> {
    let d = rep.ambient_dim();
    let mut out = DMatrix::zeros(d, d);
    for (l, &w) in weights.iter().enumerate() {
        let u = rep.basis().column(l);
        out.ger(w, &u, &u, 1.0);
    }
    out
}

pub fn projection_feature(rep: &SubspaceRep) -> DMatrix<f64> {
    rep.projector()
}

/// `U (Sigma - Delta I) U^T + Delta I`.
pub fn dg_pg_feature(rep: &SubspaceRep, epsilon: f64) -> Result<DMatrix<f64>> {
    let c = dg_pg_coefficients(rep, epsilon)?;
    let w: Vec<f64> = c.sigma_diag.iter().map(|s| s - c.delta).collect();
    let d = rep.ambient_dim();
    Ok(weighted_projector(rep, &w) + DMatrix::<f64>::identity(d, d) * c.delta)
}

/// `sum_l p_l u_l u_l^T` with `p_l` the retention probabilities.
pub fn dg_dir_feature(rep: &SubspaceRep, lambda_m: f64) -> Result<DMatrix<f64>> {
    Ok(weighted_projector(rep, &retention_probs(rep, lambda_m)?))
}

/// `<X, Y>_F = tr(X^T Y)`.
pub fn frobenius(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    x.component_mul(y).sum()
}
