//! Simulation and verification tools for branching random walks in the
//! boundary case.

pub mod brw_sim;
pub mod error;
pub mod harness;
pub mod models;
pub mod spine_sim;
pub mod tail_lab;
pub mod walk;

pub use error::{LabError, Result};
pub use harness::{Estimate, Exec, ExperimentConfig, RngStream};
pub use models::{make_spec, Family, PointProcessSpec, StepDistribution};
