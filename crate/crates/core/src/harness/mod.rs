//! Seeding, parallel execution, statistics and output shared by all experiments.

pub mod config;
pub mod exec;
pub mod ks;
pub mod output;
pub mod plateau;
pub mod rng;
pub mod run;
pub mod stats;

pub use config::{AnalysisSection, ExperimentConfig, ExperimentKind, ModelSection, RunSection};
pub use exec::{Exec, Merge};
pub use ks::{ks_one_sample, ks_two_sample, ks_two_sample_weighted, ks_weighted, KsReport, Reference};
pub use plateau::{plateau_fit, plateau_fit_window, PlateauFit};
pub use rng::RngStream;
pub use run::{run_experiment, Gate, Summary};
pub use stats::{effective_sample_size, weighted_correlation, weighted_mean, Estimate, Moments, RatioSums, Sums, SumsVec};
