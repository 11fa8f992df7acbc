use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{
    binet_cauchy_kernel, dg_pg_coefficients, dg_pg_from_coefficients, projection_kernel, retention_probs,
    weighted_alignment, DgCoefficients, KernelFamily, KernelSpec,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::subspace::SubspaceRep;

/// Per-instance quantities that only depend on one side of a kernel pair.
#[derive(Debug, Clone)]
pub enum InstanceWeights {
    None,
    Diagonal(Vec<f64>),
    PseudoGaussian(DgCoefficients),
}

impl InstanceWeights {
    pub fn compute(rep: &SubspaceRep, family: &KernelFamily) -> Result<Self> {
        Ok(match *family {
            KernelFamily::Projection | KernelFamily::BinetCauchy => InstanceWeights::None,
            KernelFamily::ScaledProjection => InstanceWeights::Diagonal(rep.singvals().to_vec()),
            KernelFamily::DgDir { lambda_m } => InstanceWeights::Diagonal(retention_probs(rep, lambda_m)?),
            KernelFamily::DgPg { epsilon } => InstanceWeights::PseudoGaussian(dg_pg_coefficients(rep, epsilon)?),
        })
    }
}

fn eval_cached(
    family: &KernelFamily,
    a: &SubspaceRep,
    wa: &InstanceWeights,
    b: &SubspaceRep,
    wb: &InstanceWeights,
) -> Result<f64> {
    if a.ambient_dim() != b.ambient_dim() {
        return Err(Error::DimensionMismatch {
            context: "ambient dimension within Gram set".into(),
            expected: a.ambient_dim(),
            found: b.ambient_dim(),
        });
    }
    match (family, wa, wb) {
        (KernelFamily::Projection, _, _) => projection_kernel(a, b),
        (KernelFamily::BinetCauchy, _, _) => binet_cauchy_kernel(a, b),
        (_, InstanceWeights::Diagonal(pa), InstanceWeights::Diagonal(pb)) => {
            Ok(weighted_alignment(a.basis(), pa, b.basis(), pb))
        }
        (_, InstanceWeights::PseudoGaussian(ca), InstanceWeights::PseudoGaussian(cb)) => {
            Ok(dg_pg_from_coefficients(a, ca, b, cb))
        }
        _ => unreachable!("instance weights computed for a different family"),
    }
}

fn weights_for(set: &[SubspaceRep], family: &KernelFamily) -> Result<Vec<InstanceWeights>> {
    set.iter().map(|r| InstanceWeights::compute(r, family)).collect()
}

/// Symmetric kernel matrix over a set of instances.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: DMatrix<f64>,
    ids: Vec<usize>,
}

impl GramMatrix {
    /// Wraps a precomputed square matrix; `ids[i]` names the instance of row `i`.
    pub fn new(values: DMatrix<f64>, ids: Vec<usize>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::invalid(format!(
                "Gram matrix must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if ids.len() != values.nrows() {
            return Err(Error::DimensionMismatch {
                context: "Gram ids".into(),
                expected: values.nrows(),
                found: ids.len(),
            });
        }
        if !linalg::all_finite(&values) {
            return Err(Error::NonFinite("Gram matrix".into()));
        }
        Ok(Self { values, ids })
    }

    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let n = values.nrows();
        Self::new(values, (0..n).collect())
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Principal sub-block on the given row positions, keeping their ids.
    pub fn sub_block(&self, rows: &[usize]) -> GramMatrix {
        GramMatrix {
            values: DMatrix::from_fn(rows.len(), rows.len(), |i, j| self.values[(rows[i], rows[j])]),
            ids: rows.iter().map(|&r| self.ids[r]).collect(),
        }
    }

    /// Rectangular block `rows x cols` (positions, not ids).
    pub fn cross_block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.values[(rows[i], cols[j])])
    }

    pub fn symmetrize(&mut self) {
        self.values = (&self.values + self.values.transpose()) * 0.5;
    }

    /// `(min, max)` eigenvalues.
    pub fn eigen_extremes(&self) -> (f64, f64) {
        linalg::eigen_extremes(&self.values)
    }

    /// True when the smallest eigenvalue is at least `-rel_tol * max eigenvalue`.
    pub fn is_psd(&self, rel_tol: f64) -> bool {
        let (min, max) = self.eigen_extremes();
        min >= -rel_tol * max.abs().max(f64::MIN_POSITIVE)
    }

    /// Writes the full matrix as headerless CSV, one row per line.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for i in 0..self.len() {
            let row: Vec<String> = (0..self.len()).map(|j| format!("{}", self.values[(i, j)])).collect();
            writeln!(out, "{}", row.join(",")).map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Kernel matrix over `set`, with per-instance coefficients computed once.
/// Rows are evaluated in parallel; each entry is independent so the result
/// does not depend on scheduling.
pub fn gram(set: &[SubspaceRep], spec: &KernelSpec) -> Result<GramMatrix> {
    if set.is_empty() {
        return Err(Error::Empty("Gram matrix over an empty set".into()));
    }
    spec.family.validate()?;
    let weights = weights_for(set, &spec.family)?;
    let n = set.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| eval_cached(&spec.family, &set[i], &weights[i], &set[j], &weights[j]))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let values = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    let mut g = GramMatrix::new(values, (0..n).collect())?;
    if spec.symmetrize {
        g.symmetrize();
    }
    Ok(g)
}

/// `rows.len() x cols.len()` matrix of kernel values between two sets.
pub fn cross_gram(rows: &[SubspaceRep], cols: &[SubspaceRep], spec: &KernelSpec) -> Result<DMatrix<f64>> {
    spec.family.validate()?;
    let wr = weights_for(rows, &spec.family)?;
    let wc = weights_for(cols, &spec.family)?;
    let out: Vec<Vec<f64>> = (0..rows.len())
        .into_par_iter()
        .map(|i| {
            (0..cols.len())
                .map(|j| eval_cached(&spec.family, &rows[i], &wr[i], &cols[j], &wc[j]))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(rows.len(), cols.len(), |i, j| out[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::tests::random_rep;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn families() -> Vec<KernelFamily> {
        vec![
            KernelFamily::Projection,
            KernelFamily::BinetCauchy,
            KernelFamily::ScaledProjection,
            KernelFamily::DgPg { epsilon: 0.7 },
            KernelFamily::DgDir { lambda_m: 0.2 },
        ]
    }

    #[test]
    fn singleton_projection_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rep = random_rep(6, 3, &mut rng);
        let g = gram(&[rep], &KernelFamily::Projection.into()).unwrap();
        assert_eq!(g.len(), 1);
        assert!((g.get(0, 0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_set_is_error() {
        assert!(matches!(
            gram(&[], &KernelFamily::Projection.into()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn gram_matches_pairwise_and_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let set: Vec<SubspaceRep> = (0..20).map(|_| random_rep(10, 3, &mut rng)).collect();
        for fam in families() {
            let spec = KernelSpec::new(fam);
            let g = gram(&set, &spec).unwrap();
            for i in 0..20 {
                for j in 0..20 {
                    assert!((g.get(i, j) - spec.eval(&set[i], &set[j]).unwrap()).abs() < 1e-12);
                    assert_eq!(g.get(i, j), g.get(j, i));
                }
            }
            assert!(g.is_psd(1e-8), "{fam:?}");
        }
    }

    #[test]
    fn permuting_inputs_permutes_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let set: Vec<SubspaceRep> = (0..9).map(|_| random_rep(7, 2, &mut rng)).collect();
        let mut perm: Vec<usize> = (0..9).collect();
        perm.shuffle(&mut rng);
        let shuffled: Vec<SubspaceRep> = perm.iter().map(|&p| set[p].clone()).collect();
        for fam in families() {
            let spec = KernelSpec::new(fam);
            let g = gram(&set, &spec).unwrap();
            let gs = gram(&shuffled, &spec).unwrap();
            for i in 0..9 {
                for j in 0..9 {
                    assert_eq!(gs.get(i, j), g.get(perm[i], perm[j]));
                }
            }
        }
    }

    #[test]
    fn cross_gram_agrees_with_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let set: Vec<SubspaceRep> = (0..6).map(|_| random_rep(8, 2, &mut rng)).collect();
        let spec = KernelSpec::new(KernelFamily::DgPg { epsilon: 2.0 });
        let g = gram(&set, &spec).unwrap();
        let c = cross_gram(&set[..2], &set, &spec).unwrap();
        for i in 0..2 {
            for j in 0..6 {
                assert_eq!(c[(i, j)], g.get(i, j));
            }
        }
    }

    #[test]
    fn sub_block_keeps_ids() {
        let g = GramMatrix::from_matrix(DMatrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64)).unwrap();
        let s = g.sub_block(&[3, 1]);
        assert_eq!(s.ids(), &[3, 1]);
        assert_eq!(s.get(0, 1), 13.0);
        assert_eq!(s.sub_block(&[1]).ids(), &[1]);
    }

    #[test]
    fn csv_export_is_row_major() {
        let g = GramMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 2.0])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        g.write_csv(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "1,0.25\n0.25,2\n");
    }
}
