//! Dataset ingestion, evaluation protocols, grid search and reports.

pub mod dataset;
pub mod experiment;
pub mod grid;
pub mod protocol;
pub mod synth;
pub mod validate;

pub use dataset::{load_dataset, Dataset, DatasetManifest, FrameTransform, ManifestEntry};
pub use experiment::{run_experiment, AnaSpec, ExperimentPlan, Report};
pub use grid::{KernelKind, ParamGrid};
pub use protocol::{append_noise, truncate_latency, Split};
pub use synth::{synth_generate, SynthSpec};
