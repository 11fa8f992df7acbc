//! Manifest-driven dataset loading.
//!
//! A manifest is a CSV file with header `path,label,subject,trial`; each
//! `path` is a headerless frame-per-row CSV resolved relative to the
//! manifest's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subspace::SequenceMatrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
    pub subject: String,
    pub trial: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Expected feature dimension `D`; inferred from the first file when absent.
    pub feature_dim: Option<usize>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = reader.headers()?.clone();
        let expected = ["path", "label", "subject", "trial"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::data(
                path,
                format!("manifest header must be {:?}, found {:?}", expected.join(","), headers),
            ));
        }
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut entries = Vec::new();
        for record in reader.deserialize::<ManifestEntry>() {
            let mut e = record?;
            if e.label.is_empty() {
                return Err(Error::data(path, format!("entry {:?} has an empty label", e.path)));
            }
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
            entries.push(e);
        }
        if entries.is_empty() {
            return Err(Error::data(path, "manifest has no entries"));
        }
        Ok(Self {
            entries,
            feature_dim: None,
        })
    }

    /// Writes the manifest with paths relative to `dir` where possible.
    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["path", "label", "subject", "trial"])?;
        for e in &self.entries {
            let p = e.path.strip_prefix(base).unwrap_or(&e.path);
            w.write_record([p.to_string_lossy().as_ref(), &e.label, &e.subject, &e.trial])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Optional per-frame preprocessing applied at load time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FrameTransform {
    #[default]
    Raw,
    /// Subtracts the 3-D position of joint `joint` (columns `3j..3j+3`) from
    /// every joint of the frame.
    CenterOnJoint { joint: usize },
}

impl FrameTransform {
    pub fn apply(&self, seq: SequenceMatrix) -> Result<SequenceMatrix> {
        match *self {
            FrameTransform::Raw => Ok(seq),
            FrameTransform::CenterOnJoint { joint } => {
                let d = seq.dim();
                if !d.is_multiple_of(3) || 3 * joint + 3 > d {
                    return Err(Error::invalid(format!(
                        "cannot center on joint {joint} with {d} features"
                    )));
                }
                Ok(seq.map_frames(|f| {
                    let origin = [f[3 * joint], f[3 * joint + 1], f[3 * joint + 2]];
                    for (k, v) in f.iter_mut().enumerate() {
                        *v -= origin[k % 3];
                    }
                }))
            }
        }
    }
}

/// Sequences with their labels and grouping metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub entries: Vec<ManifestEntry>,
    pub sequences: Vec<SequenceMatrix>,
    pub feature_dim: usize,
}

impl Dataset {
    pub fn new(entries: Vec<ManifestEntry>, sequences: Vec<SequenceMatrix>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("dataset".into()));
        }
        if entries.len() != sequences.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset entries vs sequences".into(),
                expected: entries.len(),
                found: sequences.len(),
            });
        }
        let feature_dim = sequences[0].dim();
        for (e, s) in entries.iter().zip(&sequences) {
            if s.dim() != feature_dim {
                return Err(Error::data(
                    &e.path,
                    format!("feature dimension {} differs from {feature_dim}", s.dim()),
                ));
            }
        }
        Ok(Self {
            entries,
            sequences,
            feature_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.label.clone()).collect()
    }

    pub fn classes(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| e.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Copy with labels permuted by `perm` (`label[i] <- label[perm[i]]`).
    pub fn with_permuted_labels(&self, perm: &[usize]) -> Dataset {
        let mut out = self.clone();
        for (i, &p) in perm.iter().enumerate() {
            out.entries[i].label = self.entries[p].label.clone();
        }
        out
    }

    /// Writes every sequence as a CSV under `dir` plus `dir/manifest.csv`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<PathBuf> {
        let seq_dir = dir.join("sequences");
        std::fs::create_dir_all(&seq_dir).map_err(|e| Error::io(&seq_dir, e))?;
        let mut entries = Vec::with_capacity(self.len());
        for (i, (e, s)) in self.entries.iter().zip(&self.sequences).enumerate() {
            let path = seq_dir.join(format!("{i:05}_{}_{}_{}.csv", e.label, e.subject, e.trial));
            let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&path)?;
            for frame in s.data().column_iter() {
                w.write_record(frame.iter().map(|v| v.to_string()))?;
            }
            w.flush().map_err(|err| Error::io(&path, err))?;
            entries.push(ManifestEntry { path, ..e.clone() });
        }
        let manifest_path = dir.join("manifest.csv");
        DatasetManifest {
            entries,
            feature_dim: Some(self.feature_dim),
        }
        .write(&manifest_path)?;
        Ok(manifest_path)
    }
}

/// Loads every sequence listed in a manifest file.
pub fn load_dataset(manifest_path: &Path, feature_dim: Option<usize>, transform: FrameTransform) -> Result<Dataset> {
    let mut manifest = DatasetManifest::read(manifest_path)?;
    manifest.feature_dim = feature_dim;
    load_manifest(&manifest, transform)
}

pub fn load_manifest(manifest: &DatasetManifest, transform: FrameTransform) -> Result<Dataset> {
    if manifest.entries.is_empty() {
        return Err(Error::Empty("manifest".into()));
    }
    let mut expected = manifest.feature_dim;
    let mut sequences = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        if !e.path.exists() {
            return Err(Error::data(&e.path, "sequence file not found"));
        }
        let seq = SequenceMatrix::from_csv_path(&e.path, false)?;
        let d = *expected.get_or_insert(seq.dim());
        if seq.dim() != d {
            return Err(Error::data(
                &e.path,
                format!("dimension mismatch: {} columns, expected {d}", seq.dim()),
            ));
        }
        sequences.push(transform.apply(seq)?);
    }
    Dataset::new(manifest.entries.clone(), sequences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn write(dir: &Path, name: &str, rows: usize, cols: usize) {
        let body: String = (0..rows)
            .map(|r| {
                (0..cols)
                    .map(|c| format!("{}", (r * cols + c) as f64 * 0.5))
                    .collect::<Vec<_>>()
                    .join(",")
                    + "\n"
            })
            .collect();
        std::fs::write(dir.join(name), body).unwrap();
    }

    #[test]
    fn empty_manifest_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("manifest.csv");
        std::fs::write(&m, "path,label,subject,trial\n").unwrap();
        assert!(load_dataset(&m, None, FrameTransform::Raw).is_err());
    }

    #[test]
    fn three_entry_fixture() {
        let dir = tempfile::tempdir().unwrap();
        for n in ["a.csv", "b.csv", "c.csv"] {
            write(dir.path(), n, 4, 6);
        }
        let m = dir.path().join("manifest.csv");
        std::fs::write(
            &m,
            "path,label,subject,trial\na.csv,x,s1,1\nb.csv,y,s1,1\nc.csv,x,s2,1\n",
        )
        .unwrap();
        let ds = load_dataset(&m, Some(6), FrameTransform::Raw).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.feature_dim, 6);
        assert_eq!(ds.sequences[0].frames(), 4);
        assert_eq!(ds.classes(), vec!["x".to_string(), "y".to_string()]);
    }

    #[test]
    fn dimension_mismatch_names_file() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "good.csv", 3, 45);
        write(dir.path(), "short.csv", 3, 44);
        let m = dir.path().join("manifest.csv");
        std::fs::write(&m, "path,label,subject,trial\ngood.csv,a,1,1\nshort.csv,b,1,1\n").unwrap();
        let err = load_dataset(&m, Some(45), FrameTransform::Raw).unwrap_err().to_string();
        assert!(err.contains("short.csv") && err.contains("44"), "{err}");
    }

    #[test]
    fn missing_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("manifest.csv");
        std::fs::write(&m, "path,label,subject,trial\nnope.csv,a,1,1\n").unwrap();
        let err = load_dataset(&m, None, FrameTransform::Raw).unwrap_err().to_string();
        assert!(err.contains("nope.csv"), "{err}");
    }

    #[test]
    fn bad_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("manifest.csv");
        std::fs::write(&m, "file,label\nx.csv,a\n").unwrap();
        assert!(DatasetManifest::read(&m).is_err());
    }

    #[test]
    fn write_then_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let seqs: Vec<SequenceMatrix> = (0..2)
            .map(|i| SequenceMatrix::new(DMatrix::from_fn(3, 4, |r, c| (r + c + i) as f64 + 0.125), "s").unwrap())
            .collect();
        let entries = (0..2)
            .map(|i| ManifestEntry {
                path: PathBuf::new(),
                label: format!("c{i}"),
                subject: "1".into(),
                trial: i.to_string(),
            })
            .collect();
        let ds = Dataset::new(entries, seqs).unwrap();
        let manifest = ds.write_to_dir(dir.path()).unwrap();
        let back = load_dataset(&manifest, Some(3), FrameTransform::Raw).unwrap();
        assert_eq!(back.sequences[1].data(), ds.sequences[1].data());
        assert_eq!(back.labels(), ds.labels());
    }

    #[test]
    fn center_on_joint() {
        let seq = SequenceMatrix::new(DMatrix::from_column_slice(6, 1, &[1.0, 2.0, 3.0, 5.0, 7.0, 9.0]), "j").unwrap();
        let out = FrameTransform::CenterOnJoint { joint: 0 }.apply(seq).unwrap();
        assert_eq!(out.data().as_slice(), &[0.0, 0.0, 0.0, 4.0, 5.0, 6.0]);
    }
}
