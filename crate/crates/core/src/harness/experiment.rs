//! Repeated split / select / refit / test runs over kernel families.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::grid::{KernelKind, ParamGrid};
use super::protocol::{append_noise, make_folds, stratified_folds, truncate_latency, Fold, Split};
use crate::error::{Error, Result};
use crate::kernels::{cross_gram, gram, GramMatrix, KernelFamily, KernelSpec};
use crate::rng;
use crate::subspace::{build_subspace, SequenceMatrix, SubspaceRep};
use crate::svm::{train_multiclass, MulticlassModel};

/// Split draws attempted before giving up on a training set that covers every class.
pub const MAX_SPLIT_ATTEMPTS: usize = 20;

/// Appended-noise corruption: sequences of `noise_classes` are removed from
/// the evaluation set and one of them, drawn uniformly, is appended to every
/// evaluation sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnaSpec {
    pub noise_classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub split: Split,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub noise: Option<AnaSpec>,
    /// Keep only the first `K` frames of every (possibly corrupted) sequence.
    #[serde(default)]
    pub latency_cap: Option<usize>,
    #[serde(default)]
    pub grid: ParamGrid,
    #[serde(default = "default_kernels")]
    pub kernels: Vec<KernelKind>,
    /// Folds of the model-selection cross-validation inside each training split.
    #[serde(default = "default_inner_folds")]
    pub inner_folds: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_repeats() -> usize {
    1
}

fn default_kernels() -> Vec<KernelKind> {
    KernelKind::ALL.to_vec()
}

fn default_inner_folds() -> usize {
    3
}

impl ExperimentPlan {
    pub fn new(split: Split) -> Self {
        Self {
            split,
            repeats: default_repeats(),
            noise: None,
            latency_cap: None,
            grid: ParamGrid::default(),
            kernels: default_kernels(),
            inner_folds: default_inner_folds(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.grid.validate()?;
        if self.repeats == 0 {
            return Err(Error::invalid("repeats must be >= 1"));
        }
        if self.inner_folds < 2 {
            return Err(Error::invalid("inner cross-validation needs at least 2 folds"));
        }
        if self.kernels.is_empty() {
            return Err(Error::invalid("no kernel families requested"));
        }
        if self.latency_cap == Some(0) {
            return Err(Error::invalid("latency cap must be at least one frame"));
        }
        if let Some(ana) = &self.noise {
            if ana.noise_classes.is_empty() {
                return Err(Error::invalid("appended-noise spec lists no noise class"));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let plan: ExperimentPlan = toml::from_str(s)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::data(path, e.to_string()))
    }
}

/// Hyperparameters chosen by cross-validation on one training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub kernel: KernelFamily,
    pub r: usize,
    #[serde(rename = "C")]
    pub c: f64,
    pub cv_error: f64,
}

/// Seeds behind one repeat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepeatSeeds {
    pub repeat: usize,
    pub split_seed: u64,
    /// Number of split draws needed before every class reached training.
    pub split_attempts: usize,
    pub noise_seed: u64,
    pub selection_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kernel: KernelKind,
    pub repeat: usize,
    pub fold: usize,
    pub selected: Selection,
    pub skipped_cells: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub test_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSummary {
    pub kernel: KernelKind,
    /// Per-repeat test error (mean over that repeat's outer folds).
    pub repeat_errors: Vec<f64>,
    pub mean_error: f64,
    /// Sample standard deviation of `repeat_errors`; zero for one repeat.
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub plan: ExperimentPlan,
    pub n_instances: usize,
    pub classes: Vec<String>,
    pub noise_classes: Vec<String>,
    pub seeds: Vec<RepeatSeeds>,
    pub summaries: Vec<KernelSummary>,
    pub runs: Vec<RunRecord>,
}

impl Report {
    pub fn summary(&self, kernel: KernelKind) -> Option<&KernelSummary> {
        self.summaries.iter().find(|s| s.kernel == kernel)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    /// One row per (kernel, repeat, fold) with the chosen parameters.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "kernel",
            "repeat",
            "fold",
            "C",
            "r",
            "epsilon",
            "lambda_m",
            "cv_error",
            "test_error",
        ])?;
        for run in &self.runs {
            let (eps, lam) = match run.selected.kernel {
                KernelFamily::DgPg { epsilon } => (epsilon.to_string(), String::new()),
                KernelFamily::DgDir { lambda_m } => (String::new(), lambda_m.to_string()),
                _ => (String::new(), String::new()),
            };
            w.write_record([
                run.kernel.name().to_string(),
                run.repeat.to_string(),
                run.fold.to_string(),
                run.selected.c.to_string(),
                run.selected.r.to_string(),
                eps,
                lam,
                run.selected.cv_error.to_string(),
                run.test_error.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn misclassification(model: &MulticlassModel, rows: &nalgebra::DMatrix<f64>, truth: &[String]) -> Result<f64> {
    let pred = model.predict_rows(rows)?;
    let wrong = pred.iter().zip(truth).filter(|(p, t)| p != t).count();
    Ok(wrong as f64 / truth.len() as f64)
}

/// Mean inner-fold error for every `C`, given a Gram matrix over training
/// instances only. Folds whose training part has a single class are skipped;
/// a solver failure scores `+inf`.
pub fn cross_validate(
    train_gram: &GramMatrix,
    labels: &[String],
    c_values: &[f64],
    inner: &[Fold],
) -> Result<Vec<f64>> {
    if labels.len() != train_gram.len() {
        return Err(Error::DimensionMismatch {
            context: "training labels vs Gram matrix".into(),
            expected: train_gram.len(),
            found: labels.len(),
        });
    }
    let mut totals = vec![0.0; c_values.len()];
    let mut used = 0usize;
    for fold in inner {
        let fit_labels: Vec<String> = fold.train.iter().map(|&i| labels[i].clone()).collect();
        if fold.test.is_empty() || fit_labels.iter().collect::<BTreeSet<_>>().len() < 2 {
            continue;
        }
        let truth: Vec<String> = fold.test.iter().map(|&i| labels[i].clone()).collect();
        let fit = train_gram.sub_block(&fold.train);
        let rows = train_gram.cross_block(&fold.test, &fold.train);
        used += 1;
        for (k, &c) in c_values.iter().enumerate() {
            totals[k] += match train_multiclass(&fit, &fit_labels, c).and_then(|m| misclassification(&m, &rows, &truth))
            {
                Ok(e) => e,
                Err(e) => {
                    log::warn!("inner fit failed at C = {c}: {e}");
                    f64::INFINITY
                }
            };
        }
    }
    if used == 0 {
        return Err(Error::invalid("no inner fold has two classes in training"));
    }
    Ok(totals.into_iter().map(|t| t / used as f64).collect())
}

/// Grid search over `(family, r)` cells and `C`, touching only the training
/// representations. The first cell attaining the minimal error wins.
pub fn select_params(
    cells: &[(KernelFamily, usize)],
    c_values: &[f64],
    train: &[SubspaceRep],
    labels: &[String],
    inner: &[Fold],
) -> Result<(Selection, usize)> {
    let scored = cells
        .par_iter()
        .map(|&(family, r)| {
            let set: Vec<SubspaceRep> = train.iter().map(|x| x.leading(r)).collect();
            match gram(&set, &KernelSpec::new(family)) {
                Ok(g) => cross_validate(&g, labels, c_values, inner).map(Some),
                Err(e) => {
                    log::debug!("skipping {family:?} at r = {r}: {e}");
                    Ok(None)
                }
            }
        })
        .collect::<Result<Vec<Option<Vec<f64>>>>>()?;
    let skipped = scored.iter().filter(|s| s.is_none()).count();
    let mut best: Option<Selection> = None;
    for (&(kernel, r), errors) in cells.iter().zip(&scored) {
        for (&c, &cv_error) in c_values.iter().zip(errors.iter().flatten()) {
            if best.is_none_or(|b| cv_error < b.cv_error) {
                best = Some(Selection { kernel, r, c, cv_error });
            }
        }
    }
    match best {
        Some(b) if b.cv_error.is_finite() => Ok((b, skipped)),
        _ => Err(Error::invalid("every grid cell failed during model selection")),
    }
}

fn split_with_retries(
    plan: &ExperimentPlan,
    items: &[usize],
    labels: &[String],
    subjects: &[String],
    repeat: usize,
) -> Result<(Vec<Fold>, u64, usize)> {
    let classes: BTreeSet<&String> = items.iter().map(|&i| &labels[i]).collect();
    for attempt in 0..MAX_SPLIT_ATTEMPTS {
        let seed = rng::derive_seed(plan.seed, &[repeat as u64, 0, attempt as u64]);
        let folds = make_folds(&plan.split, items, labels, subjects, &mut rng::seeded(seed));
        let complete = folds
            .iter()
            .all(|f| !f.test.is_empty() && f.train.iter().map(|&i| &labels[i]).collect::<BTreeSet<_>>() == classes);
        if complete {
            return Ok((folds, seed, attempt + 1));
        }
    }
    Err(Error::invalid(format!(
        "no split with every class in training after {MAX_SPLIT_ATTEMPTS} attempts"
    )))
}

struct RepeatOutcome {
    seeds: RepeatSeeds,
    runs: Vec<RunRecord>,
}

fn run_repeat(
    plan: &ExperimentPlan,
    dataset: &Dataset,
    items: &[usize],
    pool: &[SequenceMatrix],
    labels: &[String],
    subjects: &[String],
    repeat: usize,
) -> Result<RepeatOutcome> {
    let (folds, split_seed, split_attempts) = split_with_retries(plan, items, labels, subjects, repeat)?;
    let noise_seed = rng::derive_seed(plan.seed, &[repeat as u64, 1]);
    let selection_seed = rng::derive_seed(plan.seed, &[repeat as u64, 2]);
    let max_rank = plan.grid.max_rank();

    // representations indexed by dataset position; only evaluation items are filled
    let built = items
        .par_iter()
        .map(|&i| {
            let mut seq = dataset.sequences[i].clone();
            if !pool.is_empty() {
                seq = append_noise(&seq, pool, &mut rng::derived(noise_seed, &[i as u64]))?;
            }
            if let Some(k) = plan.latency_cap {
                seq = truncate_latency(&seq, k)?;
            }
            let r = max_rank.min(seq.dim()).min(seq.frames());
            build_subspace(&seq, r).map_err(|e| match e {
                Error::DegenerateSequence => Error::data(&dataset.entries[i].path, "sequence is all zeros"),
                other => other,
            })
        })
        .collect::<Result<Vec<SubspaceRep>>>()?;
    let mut reps: Vec<Option<SubspaceRep>> = vec![None; dataset.len()];
    for (&i, rep) in items.iter().zip(built) {
        reps[i] = Some(rep);
    }
    let rep = |i: usize| reps[i].clone().expect("evaluation item has a representation");

    let mut runs = Vec::new();
    for (f, fold) in folds.iter().enumerate() {
        let train: Vec<SubspaceRep> = fold.train.iter().map(|&i| rep(i)).collect();
        let test: Vec<SubspaceRep> = fold.test.iter().map(|&i| rep(i)).collect();
        let train_labels: Vec<String> = fold.train.iter().map(|&i| labels[i].clone()).collect();
        let test_labels: Vec<String> = fold.test.iter().map(|&i| labels[i].clone()).collect();
        let positions: Vec<usize> = (0..train.len()).collect();
        let inner = stratified_folds(
            &positions,
            &train_labels,
            plan.inner_folds,
            &mut rng::derived(selection_seed, &[f as u64]),
        );
        for &kind in &plan.kernels {
            let cells = plan.grid.cells(kind);
            let (selected, skipped_cells) = select_params(&cells, &plan.grid.c, &train, &train_labels, &inner)?;
            let fit_set: Vec<SubspaceRep> = train.iter().map(|x| x.leading(selected.r)).collect();
            let test_set: Vec<SubspaceRep> = test.iter().map(|x| x.leading(selected.r)).collect();
            let spec = KernelSpec::new(selected.kernel);
            let model = train_multiclass(&gram(&fit_set, &spec)?, &train_labels, selected.c)?;
            let rows = cross_gram(&test_set, &fit_set, &spec)?;
            let test_error = misclassification(&model, &rows, &test_labels)?;
            log::info!(
                "repeat {repeat} fold {f} {kind}: r = {} C = {} cv {:.4} test {test_error:.4}",
                selected.r,
                selected.c,
                selected.cv_error
            );
            runs.push(RunRecord {
                kernel: kind,
                repeat,
                fold: f,
                selected,
                skipped_cells,
                n_train: train.len(),
                n_test: test.len(),
                test_error,
            });
        }
    }
    Ok(RepeatOutcome {
        seeds: RepeatSeeds {
            repeat,
            split_seed,
            split_attempts,
            noise_seed,
            selection_seed,
        },
        runs,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every repeat of `plan` on `dataset`. Repeats, grid cells and class
/// pairs run in parallel; every random stream is derived from the plan seed
/// and the unit's position, so the report does not depend on scheduling.
pub fn run_experiment(plan: &ExperimentPlan, dataset: &Dataset) -> Result<Report> {
    plan.validate()?;
    let labels = dataset.labels();
    let subjects: Vec<String> = dataset.entries.iter().map(|e| e.subject.clone()).collect();
    let all_classes = dataset.classes();
    let noise_classes = plan.noise.as_ref().map(|a| a.noise_classes.clone()).unwrap_or_default();
    for c in &noise_classes {
        if !all_classes.contains(c) {
            return Err(Error::invalid(format!("noise class {c:?} not present in the dataset")));
        }
    }
    let items: Vec<usize> = (0..dataset.len())
        .filter(|&i| !noise_classes.contains(&labels[i]))
        .collect();
    let pool: Vec<SequenceMatrix> = (0..dataset.len())
        .filter(|&i| noise_classes.contains(&labels[i]))
        .map(|i| dataset.sequences[i].clone())
        .collect();
    let classes: Vec<String> = all_classes.into_iter().filter(|c| !noise_classes.contains(c)).collect();
    if classes.len() < 2 {
        return Err(Error::invalid(format!(
            "experiment needs at least 2 evaluation classes, found {}",
            classes.len()
        )));
    }
    if !noise_classes.is_empty() {
        log::info!("appended-noise classes: {}", noise_classes.join(", "));
    }

    let outcomes = (0..plan.repeats)
        .into_par_iter()
        .map(|rep| run_repeat(plan, dataset, &items, &pool, &labels, &subjects, rep))
        .collect::<Result<Vec<RepeatOutcome>>>()?;

    let runs: Vec<RunRecord> = outcomes.iter().flat_map(|o| o.runs.clone()).collect();
    let summaries = plan
        .kernels
        .iter()
        .map(|&kernel| {
            let repeat_errors: Vec<f64> = (0..plan.repeats)
                .map(|rep| {
                    let errs: Vec<f64> = runs
                        .iter()
                        .filter(|r| r.kernel == kernel && r.repeat == rep)
                        .map(|r| r.test_error)
                        .collect();
                    errs.iter().sum::<f64>() / errs.len() as f64
                })
                .collect();
            let (mean_error, std_error) = mean_std(&repeat_errors);
            KernelSummary {
                kernel,
                repeat_errors,
                mean_error,
                std_error,
            }
        })
        .collect();
    Ok(Report {
        plan: plan.clone(),
        n_instances: items.len(),
        classes,
        noise_classes,
        seeds: outcomes.iter().map(|o| o.seeds).collect(),
        summaries,
        runs,
    })
}
