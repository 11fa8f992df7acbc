//! Hyperparameter grids and kernel-family selection.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelFamily;

/// Kernel family without its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    #[serde(rename = "proj")]
    Projection,
    #[serde(rename = "bc")]
    BinetCauchy,
    #[serde(rename = "scproj")]
    ScaledProjection,
    #[serde(rename = "dg-pg")]
    DgPg,
    #[serde(rename = "dg-dir")]
    DgDir,
}

impl KernelKind {
    pub const ALL: [KernelKind; 5] = [
        KernelKind::Projection,
        KernelKind::BinetCauchy,
        KernelKind::ScaledProjection,
        KernelKind::DgPg,
        KernelKind::DgDir,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            KernelKind::Projection => "proj",
            KernelKind::BinetCauchy => "bc",
            KernelKind::ScaledProjection => "scproj",
            KernelKind::DgPg => "dg-pg",
            KernelKind::DgDir => "dg-dir",
        }
    }

    pub fn is_disturbance(&self) -> bool {
        matches!(self, KernelKind::DgPg | KernelKind::DgDir)
    }

    /// The concrete families this kind expands to under `grid`.
    pub fn families(&self, grid: &ParamGrid) -> Vec<KernelFamily> {
        match self {
            KernelKind::Projection => vec![KernelFamily::Projection],
            KernelKind::BinetCauchy => vec![KernelFamily::BinetCauchy],
            KernelKind::ScaledProjection => vec![KernelFamily::ScaledProjection],
            KernelKind::DgPg => grid
                .epsilon
                .iter()
                .map(|&epsilon| KernelFamily::DgPg { epsilon })
                .collect(),
            KernelKind::DgDir => grid
                .lambda_m
                .iter()
                .map(|&lambda_m| KernelFamily::DgDir { lambda_m })
                .collect(),
        }
    }
}

impl From<&KernelFamily> for KernelKind {
    fn from(f: &KernelFamily) -> Self {
        match f {
            KernelFamily::Projection => KernelKind::Projection,
            KernelFamily::BinetCauchy => KernelKind::BinetCauchy,
            KernelFamily::ScaledProjection => KernelKind::ScaledProjection,
            KernelFamily::DgPg { .. } => KernelKind::DgPg,
            KernelFamily::DgDir { .. } => KernelKind::DgDir,
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::invalid(format!(
                "unknown kernel {s:?}; expected one of proj, bc, scproj, dg-pg, dg-dir"
            ))
        })
    }
}

/// Candidate values searched by cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamGrid {
    #[serde(rename = "C", default = "default_c")]
    pub c: Vec<f64>,
    #[serde(default = "default_r")]
    pub r: Vec<usize>,
    #[serde(default = "default_epsilon")]
    pub epsilon: Vec<f64>,
    #[serde(default = "default_lambda_m")]
    pub lambda_m: Vec<f64>,
}

fn default_c() -> Vec<f64> {
    (-4..=5).map(|e| 10f64.powi(e)).collect()
}

fn default_r() -> Vec<usize> {
    (1..=15).collect()
}

fn default_epsilon() -> Vec<f64> {
    let mut eps = vec![1e-6, 1e-2, 0.05, 0.1];
    eps.extend((2..=10).map(|k| k as f64 / 10.0));
    eps.extend([1.2, 1.7, 2.0, 5.0, 40.0]);
    eps
}

fn default_lambda_m() -> Vec<f64> {
    vec![0.001, 0.01, 0.1, 0.3, 0.5, 0.7, 0.9]
}

impl Default for ParamGrid {
    fn default() -> Self {
        Self {
            c: default_c(),
            r: default_r(),
            epsilon: default_epsilon(),
            lambda_m: default_lambda_m(),
        }
    }
}

impl ParamGrid {
    pub fn validate(&self) -> Result<()> {
        for (name, empty) in [
            ("C", self.c.is_empty()),
            ("r", self.r.is_empty()),
            ("epsilon", self.epsilon.is_empty()),
            ("lambda_m", self.lambda_m.is_empty()),
        ] {
            if empty {
                return Err(Error::invalid(format!("grid list {name} is empty")));
            }
        }
        if let Some(c) = self.c.iter().find(|&&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::invalid(format!("grid C value {c} must be positive")));
        }
        if self.r.contains(&0) {
            return Err(Error::invalid("grid rank values must be >= 1"));
        }
        for &epsilon in &self.epsilon {
            KernelFamily::DgPg { epsilon }.validate()?;
        }
        for &lambda_m in &self.lambda_m {
            KernelFamily::DgDir { lambda_m }.validate()?;
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let grid: ParamGrid = toml::from_str(s)?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::data(path, e.to_string()))
    }

    pub fn max_rank(&self) -> usize {
        self.r.iter().copied().max().unwrap_or(1)
    }

    /// `(family, r)` cells for one kind, in search order: family values
    /// outermost, then rank.
    pub fn cells(&self, kind: KernelKind) -> Vec<(KernelFamily, usize)> {
        kind.families(self)
            .into_iter()
            .flat_map(|f| self.r.iter().map(move |&r| (f, r)))
            .collect()
    }
}
