//! Subspace representations of sequences.
//!
//! A sequence is a `D x N` matrix whose columns are frames. Its representation
//! is the span of the leading left singular vectors, carried together with the
//! singular values normalized by the sum of the whole spectrum, so that the
//! values of one sequence always sum to at most one.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance on `|U^T U - I|` accepted when assembling a representation.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// Raw sequence data, one column per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceMatrix {
    data: DMatrix<f64>,
    source_id: String,
}

impl SequenceMatrix {
    pub fn new(data: DMatrix<f64>, source_id: impl Into<String>) -> Result<Self> {
        let source_id = source_id.into();
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Empty(format!("sequence {source_id:?} has no entries")));
        }
        if !linalg::all_finite(&data) {
            return Err(Error::NonFinite(format!("sequence {source_id:?}")));
        }
        Ok(Self { data, source_id })
    }

    /// Builds a sequence from frames given row by row (`N` rows of length `D`).
    pub fn from_frames(frames: &[Vec<f64>], source_id: impl Into<String>) -> Result<Self> {
        let source_id = source_id.into();
        let n = frames.len();
        let d = frames.first().map_or(0, Vec::len);
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.len() != d) {
            return Err(Error::invalid(format!(
                "sequence {source_id:?}: frame {i} has {} values, expected {d}",
                f.len()
            )));
        }
        let data = DMatrix::from_fn(d, n, |r, c| frames[c][r]);
        Self::new(data, source_id)
    }

    /// Reads a headerless (or single-header-line) CSV with one frame per row.
    pub fn from_csv_path(path: &Path, skip_header: bool) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(skip_header)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(file);
        let mut frames: Vec<Vec<f64>> = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let frame = record
                .iter()
                .enumerate()
                .map(|(col, field)| {
                    field
                        .parse::<f64>()
                        .map_err(|_| Error::data(path, format!("row {row}, column {col}: cannot parse {field:?}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if let Some(first) = frames.first() {
                if first.len() != frame.len() {
                    return Err(Error::data(
                        path,
                        format!(
                            "ragged rows: row {row} has {} columns, row 0 has {}",
                            frame.len(),
                            first.len()
                        ),
                    ));
                }
            }
            frames.push(frame);
        }
        if frames.is_empty() {
            return Err(Error::data(path, "no frames"));
        }
        Self::from_frames(&frames, path.display().to_string()).map_err(|e| match e {
            Error::NonFinite(_) => Error::data(path, "non-finite value"),
            other => other,
        })
    }

    /// Feature dimension `D`.
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    /// Number of frames `N`.
    pub fn frames(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    /// Applies `f` to every frame in place.
    pub fn map_frames(mut self, mut f: impl FnMut(&mut [f64])) -> Self {
        let d = self.dim();
        for mut col in self.data.column_iter_mut() {
            let mut buf: Vec<f64> = col.iter().cloned().collect();
            f(&mut buf);
            debug_assert_eq!(buf.len(), d);
            col.copy_from_slice(&buf);
        }
        self
    }
}

/// A point on `G(m, D)` with per-basis normalized singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceRep {
    basis: DMatrix<f64>,
    singvals: Vec<f64>,
    /// Sum of the raw spectrum, when the representation came from data.
    energy: Option<f64>,
}

impl SubspaceRep {
    /// Assembles a representation from an orthonormal basis and its weights.
    ///
    /// Weights must lie in `(0, 1]` and sum to at most one. Their order is
    /// not checked, so permuted bases are accepted; [`build_subspace`] always
    /// produces descending values.
    pub fn from_parts(basis: DMatrix<f64>, singvals: Vec<f64>) -> Result<Self> {
        let m = basis.ncols();
        if m == 0 || basis.nrows() == 0 {
            return Err(Error::Empty("subspace basis".into()));
        }
        if m > basis.nrows() {
            return Err(Error::invalid(format!(
                "{m} basis vectors in ambient dimension {}",
                basis.nrows()
            )));
        }
        if singvals.len() != m {
            return Err(Error::DimensionMismatch {
                context: "singular values vs basis columns".into(),
                expected: m,
                found: singvals.len(),
            });
        }
        if !linalg::all_finite(&basis) || singvals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("subspace representation".into()));
        }
        if let Some(v) = singvals.iter().find(|&&v| v <= 0.0 || v > 1.0) {
            return Err(Error::invalid(format!("singular value {v} outside (0, 1]")));
        }
        let total: f64 = singvals.iter().sum();
        if total > 1.0 + 1e-9 {
            return Err(Error::invalid(format!("singular values sum to {total} > 1")));
        }
        let err = linalg::orthonormality_error(&basis);
        if err > ORTHONORMAL_TOL {
            return Err(Error::invalid(format!("basis not orthonormal: |U^T U - I| = {err:e}")));
        }
        Ok(Self {
            basis,
            singvals,
            energy: None,
        })
    }

    /// Representation with equal weights `1/m`.
    pub fn uniform(basis: DMatrix<f64>) -> Result<Self> {
        let m = basis.ncols().max(1);
        Self::from_parts(basis, vec![1.0 / m as f64; m])
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn singvals(&self) -> &[f64] {
        &self.singvals
    }

    /// Subspace dimension `m`.
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Ambient dimension `D`.
    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Sum of all raw singular values of the source sequence, if known.
    /// Multiplying [`singvals`](Self::singvals) by it recovers the raw values.
    pub fn energy(&self) -> Option<f64> {
        self.energy
    }

    pub fn is_descending(&self) -> bool {
        self.singvals.windows(2).all(|w| w[0] >= w[1])
    }

    /// Keeps the first `k` bases (the `k` strongest for data-built representations).
    pub fn leading(&self, k: usize) -> SubspaceRep {
        let k = k.clamp(1, self.dim());
        SubspaceRep {
            basis: self.basis.columns(0, k).into_owned(),
            singvals: self.singvals[..k].to_vec(),
            energy: self.energy,
        }
    }

    /// Keeps exactly the bases whose value exceeds `lambda_m`; when none
    /// does, keeps the single strongest basis.
    pub fn truncate(&self, lambda_m: f64) -> SubspaceRep {
        assert!((0.0..1.0).contains(&lambda_m), "lambda_m = {lambda_m} outside [0, 1)");
        let mut keep: Vec<usize> = (0..self.dim()).filter(|&l| self.singvals[l] > lambda_m).collect();
        if keep.is_empty() {
            let top = (0..self.dim())
                .max_by(|&a, &b| self.singvals[a].total_cmp(&self.singvals[b]).then(b.cmp(&a)))
                .expect("nonempty representation");
            keep.push(top);
        }
        self.select(&keep)
    }

    fn select(&self, cols: &[usize]) -> SubspaceRep {
        SubspaceRep {
            basis: self.basis.select_columns(cols),
            singvals: cols.iter().map(|&l| self.singvals[l]).collect(),
            energy: self.energy,
        }
    }

    /// Orthonormal basis of the orthogonal complement of the span.
    pub fn null_complement(&self) -> Result<NullBasis> {
        null_complement(&self.basis)
    }

    /// Dense projection matrix `U U^T`.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }
}

/// Orthonormal basis `U_perp` of the orthogonal complement of a subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct NullBasis {
    basis: DMatrix<f64>,
}

impl NullBasis {
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// `D - m`.
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }
}

/// Thin SVD of the raw (uncentered) data, keeping the top `min(r, rank)`
/// singular triplets.
pub fn build_subspace(seq: &SequenceMatrix, r: usize) -> Result<SubspaceRep> {
    let (d, n) = (seq.dim(), seq.frames());
    if r == 0 || r > d.min(n) {
        return Err(Error::invalid(format!(
            "rank {r} outside 1..={} for a {d}x{n} sequence",
            d.min(n)
        )));
    }
    let svd = linalg::thin_svd(seq.data());
    let s = svd.s.as_slice();
    let top = s.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Err(Error::DegenerateSequence);
    }
    let tol = top * (d.max(n) as f64) * f64::EPSILON;
    let rank = s.iter().take_while(|&&v| v > tol).count();
    let total: f64 = s.iter().sum();
    let k = r.min(rank);
    Ok(SubspaceRep {
        basis: svd.u.columns(0, k).into_owned(),
        singvals: s[..k].iter().map(|v| v / total).collect(),
        energy: Some(total),
    })
}

pub fn null_complement(basis: &DMatrix<f64>) -> Result<NullBasis> {
    let (d, m) = basis.shape();
    if m >= d {
        return Err(Error::NoNullSpace(d));
    }
    let mut resid = DMatrix::<f64>::identity(d, d) - basis * basis.transpose();
    resid = (&resid + resid.transpose()) * 0.5;
    let eig = SymmetricEigen::new(resid);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut comp = eig.eigenvectors.select_columns(&order[..d - m]);
    // one re-orthogonalization pass against U, then QR among themselves
    comp -= basis * (basis.transpose() * &comp);
    let q = comp.qr().q();
    Ok(NullBasis { basis: q })
}
