//! `grassdg` command-line interface.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use grassdg::harness::experiment::AnaSpec;
use grassdg::harness::validate::run_validation;
use grassdg::harness::{
    load_dataset, run_experiment, synth_generate, truncate_latency, Dataset, ExperimentPlan, FrameTransform,
    KernelKind, ParamGrid, Split, SynthSpec,
};
use grassdg::kernels::gram;
use grassdg::subspace::build_subspace;
use grassdg::svm::{train_multiclass, ModelFile};
use grassdg::{KernelFamily, KernelSpec, SubspaceRep};

#[derive(Parser)]
#[command(name = "grassdg", version, about = "Grassmann subspace kernels and SVM experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the Gram matrix of a manifest and write it as CSV.
    BuildGram(GramArgs),
    /// Fit a one-vs-one SVM on a manifest and write the model as JSON.
    Train(TrainArgs),
    /// Run the split / cross-validate / test protocol.
    Experiment(ExperimentArgs),
    /// Generate a synthetic labelled dataset with a manifest.
    Synth(SynthArgs),
    /// Run the Monte-Carlo checks of the closed-form expectations.
    ValidateMath(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Proj,
    Bc,
    Scproj,
    DgPg,
    DgDir,
}

impl From<KernelArg> for KernelKind {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Proj => KernelKind::Projection,
            KernelArg::Bc => KernelKind::BinetCauchy,
            KernelArg::Scproj => KernelKind::ScaledProjection,
            KernelArg::DgPg => KernelKind::DgPg,
            KernelArg::DgDir => KernelKind::DgDir,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    /// 1/3 of each subject's sequences per class for training.
    PerSubject,
    RandomHalf,
    /// 4-fold cross-validation.
    Kfold,
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Expected number of features per frame.
    #[arg(long)]
    dim: Option<usize>,
    /// Subtract this joint's 3-D position from every frame.
    #[arg(long)]
    center_joint: Option<usize>,
    /// Keep only the first K frames of every sequence.
    #[arg(long = "latency", value_name = "K")]
    latency: Option<usize>,
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long, value_enum, default_value = "proj")]
    kernel: KernelArg,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long = "lambda-m", default_value_t = 0.1)]
    lambda_m: f64,
    #[arg(long, default_value_t = 5)]
    rank: usize,
}

impl KernelArgs {
    fn spec(&self) -> KernelSpec {
        KernelSpec::new(match self.kernel {
            KernelArg::Proj => KernelFamily::Projection,
            KernelArg::Bc => KernelFamily::BinetCauchy,
            KernelArg::Scproj => KernelFamily::ScaledProjection,
            KernelArg::DgPg => KernelFamily::DgPg { epsilon: self.epsilon },
            KernelArg::DgDir => KernelFamily::DgDir {
                lambda_m: self.lambda_m,
            },
        })
    }
}

#[derive(Args)]
struct GramArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long = "C", default_value_t = 1.0)]
    c: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    center_joint: Option<usize>,
    /// TOML experiment plan; command-line flags override its fields.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// TOML grid file with keys C, r, epsilon, lambda_m.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Kernel families to evaluate (repeatable); all when absent.
    #[arg(long, value_enum)]
    kernel: Vec<KernelArg>,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "latency", value_name = "K")]
    latency: Option<usize>,
    /// Class whose sequences are appended as noise (repeatable).
    #[arg(long = "ana-class", value_name = "LABEL")]
    ana_class: Vec<String>,
    /// Only keep these evaluation labels (plus any noise class).
    #[arg(long = "classes", value_delimiter = ',')]
    classes: Vec<String>,
    /// Report JSON path; a CSV of per-run rows is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// TOML generator spec; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    noise_classes: Option<usize>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    noise_level: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; receives manifest.csv and sequences/.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(input: &InputArgs) -> Result<Dataset> {
    let transform = match input.center_joint {
        Some(joint) => FrameTransform::CenterOnJoint { joint },
        None => FrameTransform::Raw,
    };
    load_dataset(&input.manifest, input.dim, transform).with_context(|| format!("loading {}", input.manifest.display()))
}

fn represent(ds: &Dataset, rank: usize, latency: Option<usize>) -> Result<Vec<SubspaceRep>> {
    ds.sequences
        .iter()
        .zip(&ds.entries)
        .map(|(s, e)| {
            let s = match latency {
                Some(k) => truncate_latency(s, k)?,
                None => s.clone(),
            };
            let r = rank.min(s.dim()).min(s.frames());
            build_subspace(&s, r).with_context(|| format!("subspace of {}", e.path.display()))
        })
        .collect()
}

fn build_gram(args: &GramArgs) -> Result<()> {
    let ds = load(&args.input)?;
    let reps = represent(&ds, args.kernel.rank, args.input.latency)?;
    let g = gram(&reps, &args.kernel.spec())?;
    g.write_csv(&args.out)?;
    let (lo, hi) = g.eigen_extremes();
    println!(
        "wrote {}x{} Gram matrix to {} (eigenvalues in [{lo:.3e}, {hi:.3e}])",
        g.len(),
        g.len(),
        args.out.display()
    );
    Ok(())
}

fn train(args: &TrainArgs) -> Result<()> {
    let ds = load(&args.input)?;
    let reps = represent(&ds, args.kernel.rank, args.input.latency)?;
    let spec = args.kernel.spec();
    let g = gram(&reps, &spec)?;
    let labels = ds.labels();
    let model = train_multiclass(&g, &labels, args.c)?;
    let err = model.error_rate(g.values(), &labels)?;
    let file = ModelFile {
        kernel: spec,
        rank: args.kernel.rank,
        model,
    };
    write_json(&args.out, &file)?;
    println!(
        "trained {} binary models over {} classes; training error {err:.4}; model written to {}",
        file.model.models.len(),
        file.model.classes.len(),
        args.out.display()
    );
    Ok(())
}

fn experiment(args: &ExperimentArgs) -> Result<()> {
    let transform = match args.center_joint {
        Some(joint) => FrameTransform::CenterOnJoint { joint },
        None => FrameTransform::Raw,
    };
    let mut ds = load_dataset(&args.manifest, args.dim, transform)
        .with_context(|| format!("loading {}", args.manifest.display()))?;
    if !args.classes.is_empty() {
        let keep: Vec<usize> = (0..ds.len())
            .filter(|&i| args.classes.contains(&ds.entries[i].label) || args.ana_class.contains(&ds.entries[i].label))
            .collect();
        ds = Dataset::new(
            keep.iter().map(|&i| ds.entries[i].clone()).collect(),
            keep.iter().map(|&i| ds.sequences[i].clone()).collect(),
        )?;
    }
    let mut plan = match &args.plan {
        Some(p) => ExperimentPlan::from_path(p)?,
        None => ExperimentPlan::new(Split::PerSubjectFraction {
            train_fraction: 1.0 / 3.0,
        }),
    };
    if let Some(split) = args.split {
        plan.split = match split {
            SplitArg::PerSubject => Split::PerSubjectFraction {
                train_fraction: 1.0 / 3.0,
            },
            SplitArg::RandomHalf => Split::RandomHalf,
            SplitArg::Kfold => Split::KFold { k: 4 },
        };
    }
    if let Some(g) = &args.grid {
        plan.grid = ParamGrid::from_path(g)?;
    }
    if !args.kernel.is_empty() {
        plan.kernels = args.kernel.iter().map(|&k| k.into()).collect();
    }
    if let Some(r) = args.repeats {
        plan.repeats = r;
    }
    if let Some(s) = args.seed {
        plan.seed = s;
    }
    if args.latency.is_some() {
        plan.latency_cap = args.latency;
    }
    if !args.ana_class.is_empty() {
        plan.noise = Some(AnaSpec {
            noise_classes: args.ana_class.clone(),
        });
    }
    let report = run_experiment(&plan, &ds)?;
    report.write_json(&args.out)?;
    let csv_path = args.out.with_extension("csv");
    report.write_csv(&csv_path)?;
    for s in &report.summaries {
        println!(
            "{:<7} error {:.4} +/- {:.4}",
            s.kernel.name(),
            s.mean_error,
            s.std_error
        );
    }
    if !report.noise_classes.is_empty() {
        println!("appended-noise classes: {}", report.noise_classes.join(", "));
    }
    println!("report written to {} and {}", args.out.display(), csv_path.display());
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let mut spec: SynthSpec = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SynthSpec::default(),
    };
    macro_rules! set {
        ($($field:ident <- $flag:ident),*) => {
            $(if let Some(v) = args.$flag { spec.$field = v; })*
        };
    }
    set!(classes <- classes, noise_classes <- noise_classes, subjects <- subjects, trials <- trials,
         ambient_dim <- dim, latent_dim <- latent_dim, frames <- frames, noise_level <- noise_level,
         jitter <- jitter, seed <- seed);
    let ds = synth_generate(&spec)?;
    let manifest = ds.write_to_dir(&args.out)?;
    println!(
        "wrote {} sequences ({} classes) to {}",
        ds.len(),
        ds.classes().len(),
        manifest.display()
    );
    Ok(())
}

fn validate_math(args: &ValidateArgs) -> Result<()> {
    let report = run_validation(args.samples, args.seed)?;
    for c in &report.checks {
        println!(
            "[{}] {:<40} {:.3e} <= {:.3e}",
            if c.passed { "pass" } else { "FAIL" },
            c.name,
            c.statistic,
            c.tolerance
        );
    }
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    if !report.all_passed() {
        bail!("some Monte-Carlo checks failed");
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::BuildGram(a) => build_gram(a),
        Command::Train(a) => train(a),
        Command::Experiment(a) => experiment(a),
        Command::Synth(a) => synth(a),
        Command::ValidateMath(a) => validate_math(a),
    }
}
