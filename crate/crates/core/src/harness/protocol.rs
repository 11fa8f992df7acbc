//! Corruption transforms and train/test split rules.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subspace::SequenceMatrix;

/// Appends the frames of one uniformly drawn pool sequence after `sample`.
pub fn append_noise<R: Rng + ?Sized>(
    sample: &SequenceMatrix,
    pool: &[SequenceMatrix],
    rng: &mut R,
) -> Result<SequenceMatrix> {
    if pool.is_empty() {
        return Err(Error::Empty("noise pool".into()));
    }
    let noise = &pool[rng.random_range(0..pool.len())];
    if noise.dim() != sample.dim() {
        return Err(Error::DimensionMismatch {
            context: format!("noise sequence {:?}", noise.source_id()),
            expected: sample.dim(),
            found: noise.dim(),
        });
    }
    let (d, n1, n2) = (sample.dim(), sample.frames(), noise.frames());
    let mut data = DMatrix::zeros(d, n1 + n2);
    data.columns_mut(0, n1).copy_from(sample.data());
    data.columns_mut(n1, n2).copy_from(noise.data());
    SequenceMatrix::new(data, format!("{}+{}", sample.source_id(), noise.source_id()))
}

/// First `min(cap, N)` frames.
pub fn truncate_latency(sample: &SequenceMatrix, cap: usize) -> Result<SequenceMatrix> {
    if cap == 0 {
        return Err(Error::invalid("latency cap must be at least one frame"));
    }
    if cap >= sample.frames() {
        return Ok(sample.clone());
    }
    SequenceMatrix::new(sample.data().columns(0, cap).into_owned(), sample.source_id())
}

/// Outer train/test protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Split {
    /// Within every (subject, class) group a fraction goes to training.
    PerSubjectFraction { train_fraction: f64 },
    /// Class-stratified random halves, ignoring subjects.
    RandomHalf,
    /// Class-stratified k-fold cross-validation; every fold is tested once.
    KFold { k: usize },
}

impl Split {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Split::PerSubjectFraction { train_fraction } if !(train_fraction > 0.0 && train_fraction < 1.0) => Err(
                Error::invalid(format!("train fraction {train_fraction} outside (0, 1)")),
            ),
            Split::KFold { k } if k < 2 => Err(Error::invalid("k-fold split needs k >= 2")),
            _ => Ok(()),
        }
    }
}

/// Train and test positions of one evaluation unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn group_by<K: Ord>(items: &[usize], key: impl Fn(usize) -> K) -> BTreeMap<K, Vec<usize>> {
    let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for &i in items {
        groups.entry(key(i)).or_default().push(i);
    }
    groups
}

fn fraction_split<R: Rng + ?Sized>(groups: BTreeMap<impl Ord, Vec<usize>>, fraction: f64, rng: &mut R) -> Fold {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (_, mut members) in groups {
        members.shuffle(rng);
        let n = members.len();
        let mut k = (fraction * n as f64).round() as usize;
        if n >= 2 {
            k = k.clamp(1, n - 1);
        }
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Fold { train, test }
}

/// Class-stratified `k`-fold partition of `items`.
pub fn stratified_folds<R: Rng + ?Sized>(items: &[usize], labels: &[String], k: usize, rng: &mut R) -> Vec<Fold> {
    let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (offset, (_, mut members)) in group_by(items, |i| labels[i].clone()).into_iter().enumerate() {
        members.shuffle(rng);
        for (n, m) in members.into_iter().enumerate() {
            assignment[(offset + n) % k].push(m);
        }
    }
    (0..k)
        .map(|f| {
            let mut test = assignment[f].clone();
            test.sort_unstable();
            let mut train: Vec<usize> = (0..k).filter(|&g| g != f).flat_map(|g| assignment[g].clone()).collect();
            train.sort_unstable();
            Fold { train, test }
        })
        .collect()
}

/// Splits `items` (positions into `labels` / `subjects`) per the protocol.
pub fn make_folds<R: Rng + ?Sized>(
    split: &Split,
    items: &[usize],
    labels: &[String],
    subjects: &[String],
    rng: &mut R,
) -> Vec<Fold> {
    match *split {
        Split::PerSubjectFraction { train_fraction } => {
            vec![fraction_split(
                group_by(items, |i| (subjects[i].clone(), labels[i].clone())),
                train_fraction,
                rng,
            )]
        }
        Split::RandomHalf => vec![fraction_split(group_by(items, |i| labels[i].clone()), 0.5, rng)],
        Split::KFold { k } => stratified_folds(items, labels, k, rng),
    }
}
