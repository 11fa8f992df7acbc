//! Kernel SVMs on precomputed Gram matrices.
//!
//! The binary solver maximizes the hinge-loss dual
//! `sum_i a_i - 1/2 sum_ij a_i a_j y_i y_j K_ij` subject to `0 <= a_i <= C`
//! and `sum_i y_i a_i = 0` with SMO: at each step the maximal violating pair
//! (second-order selection for the partner) is optimized analytically.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{GramMatrix, KernelSpec};

/// Stopping tolerance on the maximal KKT violation.
pub const KKT_TOL: f64 = 1e-3;
/// Hard cap on pair updates.
pub const MAX_UPDATES: usize = 10_000_000;
/// Multipliers above this count as support vectors.
pub const SUPPORT_EPS: f64 = 1e-9;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_updates: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: KKT_TOL,
            max_updates: MAX_UPDATES,
        }
    }
}

/// One two-class dual problem.
#[derive(Debug, Clone)]
pub struct BinaryProblem {
    pub gram: GramMatrix,
    /// `+1` or `-1` per instance.
    pub labels: Vec<f64>,
    pub c: f64,
}

impl BinaryProblem {
    pub fn new(gram: GramMatrix, labels: Vec<f64>, c: f64) -> Result<Self> {
        if labels.len() != gram.len() {
            return Err(Error::DimensionMismatch {
                context: "labels vs Gram matrix".into(),
                expected: gram.len(),
                found: labels.len(),
            });
        }
        if let Some(y) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(Error::invalid(format!("binary label {y} is not +1 or -1")));
        }
        if !labels.contains(&1.0) || !labels.contains(&-1.0) {
            return Err(Error::invalid("binary problem needs both classes"));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid(format!("C = {c} must be positive")));
        }
        Ok(Self { gram, labels, c })
    }
}

/// Solution of one binary dual problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub alphas: Vec<f64>,
    /// `+1` / `-1` training labels, aligned with `alphas`.
    pub labels: Vec<f64>,
    pub bias: f64,
    pub support_ids: Vec<usize>,
    /// Class names for the `+1` and `-1` sides.
    pub class_pair: (String, String),
    /// Instance ids (as carried by the Gram matrix) of the training rows.
    pub instance_ids: Vec<usize>,
    pub c: f64,
    pub kkt_gap: f64,
    pub objective: f64,
    pub updates: usize,
}

impl SvmModel {
    /// `sum_i a_i y_i k_i + b` for kernel values `k_i` against the training rows.
    pub fn decision(&self, kernel_row: &[f64]) -> Result<f64> {
        if kernel_row.len() != self.alphas.len() {
            return Err(Error::DimensionMismatch {
                context: "kernel row vs training instances".into(),
                expected: self.alphas.len(),
                found: kernel_row.len(),
            });
        }
        Ok(self
            .support_ids
            .iter()
            .map(|&i| self.alphas[i] * self.labels[i] * kernel_row[i])
            .sum::<f64>()
            + self.bias)
    }

    /// `sum_i y_i a_i`.
    pub fn equality_residual(&self) -> f64 {
        self.alphas.iter().zip(&self.labels).map(|(a, y)| a * y).sum()
    }
}

/// Dual objective `sum a - 1/2 a^T Q a`.
pub fn dual_objective(gram: &DMatrix<f64>, labels: &[f64], alphas: &[f64]) -> f64 {
    let n = alphas.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alphas[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            quad += alphas[i] * alphas[j] * labels[i] * labels[j] * gram[(i, j)];
        }
    }
    alphas.iter().sum::<f64>() - 0.5 * quad
}

/// Maximal KKT violation `max_{I_up} -y G - min_{I_low} -y G`.
pub fn kkt_gap(gram: &DMatrix<f64>, labels: &[f64], alphas: &[f64], c: f64) -> f64 {
    let n = alphas.len();
    let grad: Vec<f64> = (0..n)
        .map(|t| labels[t] * (0..n).map(|s| alphas[s] * labels[s] * gram[(t, s)]).sum::<f64>() - 1.0)
        .collect();
    let (mut up, mut low) = (f64::NEG_INFINITY, f64::INFINITY);
    for t in 0..n {
        let v = -labels[t] * grad[t];
        if in_up(labels[t], alphas[t], c) {
            up = up.max(v);
        }
        if in_low(labels[t], alphas[t], c) {
            low = low.min(v);
        }
    }
    (up - low).max(0.0)
}

fn in_up(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a < c) || (y < 0.0 && a > 0.0)
}

fn in_low(y: f64, a: f64, c: f64) -> bool {
    (y < 0.0 && a < c) || (y > 0.0 && a > 0.0)
}

/// Adds a small ridge when rounding pushed the Gram matrix off the PSD cone.
fn jittered(gram: &GramMatrix) -> DMatrix<f64> {
    let mut k = gram.values().clone();
    let (min, max) = gram.eigen_extremes();
    if min < -1e-8 * max.abs() {
        let ridge = 1e-8 * max.abs();
        log::warn!("Gram matrix min eigenvalue {min:e} below tolerance; adding ridge {ridge:e}");
        for i in 0..k.nrows() {
            k[(i, i)] += ridge;
        }
    }
    k
}

pub fn train_binary(problem: &BinaryProblem) -> Result<SvmModel> {
    train_binary_with(problem, &SolverConfig::default(), ("+1".into(), "-1".into()))
}

pub fn train_binary_with(
    problem: &BinaryProblem,
    config: &SolverConfig,
    class_pair: (String, String),
) -> Result<SvmModel> {
    let k = jittered(&problem.gram);
    let y = &problem.labels;
    let c = problem.c;
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut updates = 0usize;
    let mut gap;

    loop {
        // i: maximal -y G over I_up
        let mut i = usize::MAX;
        let mut g_max = f64::NEG_INFINITY;
        for t in 0..n {
            if in_up(y[t], alpha[t], c) {
                let v = -y[t] * grad[t];
                if v > g_max {
                    g_max = v;
                    i = t;
                }
            }
        }
        // j: second-order gain among violators in I_low
        let mut j = usize::MAX;
        let mut g_min = f64::INFINITY;
        let mut best_gain = f64::INFINITY;
        for t in 0..n {
            if !in_low(y[t], alpha[t], c) {
                continue;
            }
            let v = -y[t] * grad[t];
            g_min = g_min.min(v);
            if i != usize::MAX && v < g_max {
                let b = g_max - v;
                let mut a = k[(i, i)] + k[(t, t)] - 2.0 * k[(i, t)];
                if a <= 0.0 {
                    a = TAU;
                }
                let gain = -(b * b) / a;
                if gain < best_gain {
                    best_gain = gain;
                    j = t;
                }
            }
        }
        gap = if i == usize::MAX || g_min == f64::INFINITY {
            0.0
        } else {
            (g_max - g_min).max(0.0)
        };
        if gap < config.tol || j == usize::MAX {
            break;
        }
        if updates >= config.max_updates {
            let objective = dual_objective(&k, y, &alpha);
            return Err(Error::NotConverged {
                what: "SMO",
                iterations: updates,
                detail: format!("best KKT gap {gap:e}, dual objective {objective}"),
            });
        }

        // step t >= 0 along a_i += y_i t, a_j -= y_j t
        let b = g_max - (-y[j] * grad[j]);
        let mut a = k[(i, i)] + k[(j, j)] - 2.0 * k[(i, j)];
        if a <= 0.0 {
            a = TAU;
        }
        let bound_i = if y[i] > 0.0 { c - alpha[i] } else { alpha[i] };
        let bound_j = if y[j] > 0.0 { alpha[j] } else { c - alpha[j] };
        let step = (b / a).min(bound_i).min(bound_j);
        if step <= 0.0 {
            break;
        }
        let old_i = alpha[i];
        let old_j = alpha[j];
        alpha[i] = old_i + y[i] * step;
        alpha[j] = old_j - y[j] * step;
        if step == bound_i {
            alpha[i] = if y[i] > 0.0 { c } else { 0.0 };
        }
        if step == bound_j {
            alpha[j] = if y[j] > 0.0 { 0.0 } else { c };
        }
        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        for t in 0..n {
            grad[t] += y[t] * (y[i] * k[(t, i)] * di + y[j] * k[(t, j)] * dj);
        }
        updates += 1;
    }

    let bias = bias_from_gradient(y, &alpha, &grad, c);
    let support_ids: Vec<usize> = (0..n).filter(|&t| alpha[t] > SUPPORT_EPS).collect();
    let objective = dual_objective(&k, y, &alpha);
    Ok(SvmModel {
        alphas: alpha,
        labels: y.clone(),
        bias,
        support_ids,
        class_pair,
        instance_ids: problem.gram.ids().to_vec(),
        c,
        kkt_gap: gap,
        objective,
        updates,
    })
}

/// `b = -avg(y_i G_i)` over free multipliers, or the midpoint of the feasible
/// interval when every multiplier sits at a bound.
fn bias_from_gradient(y: &[f64], alpha: &[f64], grad: &[f64], c: f64) -> f64 {
    let mut free_sum = 0.0;
    let mut free = 0usize;
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..y.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 {
        free_sum / free as f64
    } else if ub.is_finite() && lb.is_finite() {
        0.5 * (ub + lb)
    } else if ub.is_finite() {
        ub
    } else {
        lb
    };
    -rho
}

/// One-vs-one collection of binary models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassModel {
    pub models: Vec<SvmModel>,
    pub classes: Vec<String>,
    /// Number of training instances; prediction rows must have this length.
    pub n_train: usize,
}

/// Trains one binary model per unordered class pair, in parallel.
/// `labels[i]` belongs to row `i` of `gram`.
pub fn train_multiclass(gram: &GramMatrix, labels: &[String], c: f64) -> Result<MulticlassModel> {
    train_multiclass_with(gram, labels, c, &SolverConfig::default())
}

pub fn train_multiclass_with(
    gram: &GramMatrix,
    labels: &[String],
    c: f64,
    config: &SolverConfig,
) -> Result<MulticlassModel> {
    if labels.len() != gram.len() {
        return Err(Error::DimensionMismatch {
            context: "labels vs Gram matrix".into(),
            expected: gram.len(),
            found: labels.len(),
        });
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l.as_str()).or_default().push(i);
    }
    if by_class.len() < 2 {
        return Err(Error::invalid(format!(
            "multiclass training needs at least 2 classes, found {}",
            by_class.len()
        )));
    }
    let classes: Vec<String> = by_class.keys().map(|s| s.to_string()).collect();
    let mut pairs = Vec::new();
    for a in 0..classes.len() {
        for b in a + 1..classes.len() {
            pairs.push((a, b));
        }
    }
    let models = pairs
        .par_iter()
        .map(|&(a, b)| {
            let pos = &by_class[classes[a].as_str()];
            let neg = &by_class[classes[b].as_str()];
            let mut rows: Vec<usize> = pos.iter().chain(neg).copied().collect();
            rows.sort_unstable();
            let y: Vec<f64> = rows
                .iter()
                .map(|&r| if labels[r] == classes[a] { 1.0 } else { -1.0 })
                .collect();
            // ids become positions in the multiclass Gram, so prediction rows index directly
            let sub = GramMatrix::new(gram.cross_block(&rows, &rows), rows.clone())?;
            let problem = BinaryProblem::new(sub, y, c)?;
            train_binary_with(&problem, config, (classes[a].clone(), classes[b].clone()))
        })
        .collect::<Result<Vec<SvmModel>>>()?;
    Ok(MulticlassModel {
        models,
        classes,
        n_train: labels.len(),
    })
}

impl MulticlassModel {
    /// Pairwise decision values for one test instance given its kernel values
    /// against every training instance.
    pub fn decisions(&self, kernel_row: &[f64]) -> Result<Vec<f64>> {
        if kernel_row.len() != self.n_train {
            return Err(Error::DimensionMismatch {
                context: "kernel row vs training set".into(),
                expected: self.n_train,
                found: kernel_row.len(),
            });
        }
        self.models
            .iter()
            .map(|m| {
                let row: Vec<f64> = m.instance_ids.iter().map(|&i| kernel_row[i]).collect();
                m.decision(&row)
            })
            .collect()
    }

    /// Majority vote over pairwise decisions. Ties go to the class with the
    /// largest summed `|decision|` over the votes it won, then to the class
    /// that sorts first.
    pub fn predict(&self, kernel_row: &[f64]) -> Result<String> {
        let decisions = self.decisions(kernel_row)?;
        let index: BTreeMap<&str, usize> = self.classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let mut votes = vec![0usize; self.classes.len()];
        let mut margin = vec![0.0f64; self.classes.len()];
        for (m, d) in self.models.iter().zip(&decisions) {
            let winner = if *d > 0.0 { &m.class_pair.0 } else { &m.class_pair.1 };
            let w = index[winner.as_str()];
            votes[w] += 1;
            margin[w] += d.abs();
        }
        let mut best = 0;
        for k in 1..self.classes.len() {
            if votes[k] > votes[best] || (votes[k] == votes[best] && margin[k] > margin[best]) {
                best = k;
            }
        }
        Ok(self.classes[best].clone())
    }

    /// Predictions for each row of a `n_test x n_train` kernel matrix.
    pub fn predict_rows(&self, rows: &DMatrix<f64>) -> Result<Vec<String>> {
        (0..rows.nrows())
            .map(|i| {
                let row: Vec<f64> = rows.row(i).iter().copied().collect();
                self.predict(&row)
            })
            .collect()
    }

    /// Fraction of misclassified rows; unknown true labels are an error.
    pub fn error_rate(&self, rows: &DMatrix<f64>, truth: &[String]) -> Result<f64> {
        if truth.len() != rows.nrows() {
            return Err(Error::DimensionMismatch {
                context: "test labels vs kernel rows".into(),
                expected: rows.nrows(),
                found: truth.len(),
            });
        }
        if let Some(t) = truth.iter().find(|t| !self.classes.contains(t)) {
            return Err(Error::UnseenClass(t.clone()));
        }
        if truth.is_empty() {
            return Err(Error::Empty("test set".into()));
        }
        let pred = self.predict_rows(rows)?;
        let wrong = pred.iter().zip(truth).filter(|(p, t)| p != t).count();
        Ok(wrong as f64 / truth.len() as f64)
    }
}

/// A trained classifier together with the representation settings it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub kernel: KernelSpec,
    pub rank: usize,
    pub model: MulticlassModel,
}
