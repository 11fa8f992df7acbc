//! Synthetic labeled sequence data with known class subspaces.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, ManifestEntry};
use crate::error::{Error, Result};
use crate::linalg::{gaussian_matrix, random_orthonormal};
use crate::rng;
use crate::subspace::SequenceMatrix;

/// Generator settings. Every class owns a `latent_dim`-dimensional subspace
/// of `R^ambient_dim`; the first `shared_dim` of its directions are common
/// to all classes. A frame is `basis * z + noise_level * n` with
/// `z_k ~ N(0, 1 / (k + 1))` and `n` standard Gaussian. `jitter` rotates
/// each sample's basis slightly away from its class basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub classes: usize,
    /// Extra classes labelled `noise<k>`, intended as appended-noise pools.
    pub noise_classes: usize,
    pub subjects: usize,
    /// Sequences per (subject, class).
    pub trials: usize,
    pub ambient_dim: usize,
    pub latent_dim: usize,
    pub shared_dim: usize,
    pub frames: usize,
    pub jitter: f64,
    pub noise_level: f64,
    /// Amplitude multiplier for noise-class sequences.
    pub noise_class_scale: f64,
    /// Frame count of noise-class sequences; `frames` when absent.
    pub noise_class_frames: Option<usize>,
    /// All evaluation classes share one latent subspace.
    pub identical_latents: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            noise_classes: 0,
            subjects: 3,
            trials: 3,
            ambient_dim: 20,
            latent_dim: 3,
            shared_dim: 0,
            frames: 40,
            jitter: 0.0,
            noise_level: 0.0,
            noise_class_scale: 1.0,
            noise_class_frames: None,
            identical_latents: false,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::invalid(msg));
        if self.classes == 0 || self.subjects == 0 || self.trials == 0 || self.frames == 0 {
            return fail("classes, subjects, trials and frames must all be >= 1".into());
        }
        if self.latent_dim == 0 || self.latent_dim > self.ambient_dim {
            return fail(format!(
                "latent dimension {} must be in 1..={}",
                self.latent_dim, self.ambient_dim
            ));
        }
        if self.shared_dim > self.latent_dim {
            return fail(format!(
                "shared dimension {} exceeds latent dimension {}",
                self.shared_dim, self.latent_dim
            ));
        }
        let own = self.latent_dim - self.shared_dim;
        if self.shared_dim + own * (self.classes + self.noise_classes) > self.ambient_dim && !self.identical_latents {
            log::debug!("class subspaces overlap: ambient dimension too small for disjoint latents");
        }
        for (name, v) in [
            ("jitter", self.jitter),
            ("noise_level", self.noise_level),
            ("noise_class_scale", self.noise_class_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        if self.noise_class_frames == Some(0) {
            return fail("noise_class_frames must be >= 1".into());
        }
        Ok(())
    }
}

fn class_bases(spec: &SynthSpec, count: usize, rng: &mut rng::SeededRng) -> Vec<DMatrix<f64>> {
    let d = spec.ambient_dim;
    let shared = random_orthonormal(d, spec.shared_dim.max(1), rng)
        .columns(0, spec.shared_dim)
        .into_owned();
    let own = spec.latent_dim - spec.shared_dim;
    let common = random_orthonormal(d, spec.latent_dim, rng);
    (0..count)
        .map(|k| {
            if spec.identical_latents && k < spec.classes {
                return common.clone();
            }
            let mut b = DMatrix::zeros(d, spec.latent_dim);
            b.columns_mut(0, own)
                .copy_from(&random_orthonormal(d, own.max(1), rng).columns(0, own));
            b.columns_mut(own, spec.shared_dim).copy_from(&shared);
            orthonormalize(b)
        })
        .collect()
}

fn orthonormalize(b: DMatrix<f64>) -> DMatrix<f64> {
    let k = b.ncols();
    let q = b.qr().q();
    q.columns(0, k).into_owned()
}

fn sample_sequence(
    basis: &DMatrix<f64>,
    frames: usize,
    scale: f64,
    spec: &SynthSpec,
    rng: &mut rng::SeededRng,
) -> DMatrix<f64> {
    let (d, k) = basis.shape();
    let b = if spec.jitter > 0.0 {
        orthonormalize(basis + gaussian_matrix(d, k, rng) * (spec.jitter / (d as f64).sqrt()))
    } else {
        basis.clone()
    };
    let sd = DVector::from_fn(k, |i, _| 1.0 / ((i + 1) as f64).sqrt());
    let z = DMatrix::from_fn(k, frames, |i, _| {
        sd[i] * Distribution::<f64>::sample(&StandardNormal, rng)
    });
    let mut x = b * z;
    if spec.noise_level > 0.0 {
        x += gaussian_matrix(d, frames, rng) * spec.noise_level;
    }
    x * scale
}

/// Draws a labelled dataset. Entries are ordered by class, subject, trial;
/// sequence paths are placeholders until [`Dataset::write_to_dir`].
pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let total = spec.classes + spec.noise_classes;
    let mut base_rng = rng::derived(spec.seed, &[0]);
    let bases = class_bases(spec, total, &mut base_rng);
    let mut entries = Vec::new();
    let mut sequences = Vec::new();
    for (c, basis) in bases.iter().enumerate() {
        let is_noise = c >= spec.classes;
        let label = if is_noise {
            format!("noise{}", c - spec.classes)
        } else {
            format!("c{c}")
        };
        let (frames, scale) = if is_noise {
            (spec.noise_class_frames.unwrap_or(spec.frames), spec.noise_class_scale)
        } else {
            (spec.frames, 1.0)
        };
        for s in 0..spec.subjects {
            for t in 0..spec.trials {
                let mut r = rng::derived(spec.seed, &[1, c as u64, s as u64, t as u64]);
                let data = sample_sequence(basis, frames, scale, spec, &mut r);
                let id = format!("{label}_s{s}_t{t}");
                sequences.push(SequenceMatrix::new(data, id.clone())?);
                entries.push(ManifestEntry {
                    path: PathBuf::from(format!("{id}.csv")),
                    label: label.clone(),
                    subject: format!("s{s}"),
                    trial: format!("t{t}"),
                });
            }
        }
    }
    Dataset::new(entries, sequences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::projection_kernel;
    use crate::subspace::build_subspace;

    #[test]
    fn shape_and_labels() {
        let spec = SynthSpec {
            classes: 3,
            noise_classes: 1,
            subjects: 2,
            trials: 2,
            noise_class_frames: Some(7),
            ..SynthSpec::default()
        };
        let ds = synth_generate(&spec).unwrap();
        assert_eq!(ds.len(), 16);
        assert_eq!(ds.feature_dim, 20);
        assert_eq!(ds.classes(), vec!["c0", "c1", "c2", "noise0"]);
        assert_eq!(ds.sequences[0].frames(), 40);
        assert_eq!(ds.sequences[15].frames(), 7);
    }

    #[test]
    fn deterministic() {
        let spec = SynthSpec {
            jitter: 0.1,
            noise_level: 0.2,
            seed: 9,
            ..SynthSpec::default()
        };
        assert_eq!(synth_generate(&spec).unwrap(), synth_generate(&spec).unwrap());
        let other = synth_generate(&SynthSpec {
            seed: 10,
            ..spec.clone()
        })
        .unwrap();
        assert_ne!(other.sequences[0], synth_generate(&spec).unwrap().sequences[0]);
    }

    #[test]
    fn noiseless_samples_span_class_subspace() {
        let spec = SynthSpec {
            latent_dim: 3,
            ..SynthSpec::default()
        };
        let ds = synth_generate(&spec).unwrap();
        let a = build_subspace(&ds.sequences[0], 3).unwrap();
        let b = build_subspace(&ds.sequences[1], 3).unwrap();
        let other = build_subspace(&ds.sequences[ds.len() - 1], 3).unwrap();
        assert!((projection_kernel(&a, &b).unwrap() - 3.0).abs() < 1e-8);
        assert!(projection_kernel(&a, &other).unwrap() < 2.5);
    }

    #[test]
    fn identical_latents_share_subspace() {
        let spec = SynthSpec {
            identical_latents: true,
            ..SynthSpec::default()
        };
        let ds = synth_generate(&spec).unwrap();
        let a = build_subspace(&ds.sequences[0], 3).unwrap();
        let z = build_subspace(&ds.sequences[ds.len() - 1], 3).unwrap();
        assert!((projection_kernel(&a, &z).unwrap() - 3.0).abs() < 1e-8);
    }

    #[test]
    fn infeasible_dims() {
        for spec in [
            SynthSpec {
                latent_dim: 25,
                ..SynthSpec::default()
            },
            SynthSpec {
                latent_dim: 0,
                ..SynthSpec::default()
            },
            SynthSpec {
                shared_dim: 4,
                ..SynthSpec::default()
            },
            SynthSpec {
                classes: 0,
                ..SynthSpec::default()
            },
            SynthSpec {
                noise_level: -1.0,
                ..SynthSpec::default()
            },
        ] {
            assert!(synth_generate(&spec).is_err(), "{spec:?}");
        }
    }
}
