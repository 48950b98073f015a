//! `brw-lab`: command-line front end for the branching random walk lab.
//!
//! Exit codes: 0 when every gate passed, 2 when a statistical gate failed,
//! 1 on any execution error.

mod commands;
mod grid;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "brw-lab", version, about = "Branching random walks in the boundary case")]
pub struct Cli {
    /// Root seed; every emitted byte is a function of the inputs and this
    /// seed. Defaults to 0, or to the config's seed for `theorem`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "brw-lab-out")]
    pub out: PathBuf,
    /// Worker threads; `BRW_LAB_WORKERS` takes precedence when set.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate trees and write the per-replica table.
    Simulate(SimulateArgs),
    /// Check the many-to-one formula or the spine time reversal.
    Spine(SpineArgs),
    /// Renewal functions of a centered walk.
    Renewal(RenewalArgs),
    /// Rare-event estimate of P(M <= -x).
    MinTail(MinTailArgs),
    /// Run a theorem-level experiment from a config file.
    Theorem(TheoremArgs),
    /// Deterministic and Monte Carlo verification of the walk identities.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    #[arg(long, default_value_t = 12)]
    pub horizon: u32,
    #[arg(long, default_value = "1000", value_parser = grid::parse_count)]
    pub replicas: u64,
    /// `none`, `fixed:<y>` or `adaptive:<x>`.
    #[arg(long, default_value = "none")]
    pub barrier: String,
    #[arg(long, default_value = "1e8", value_parser = grid::parse_count)]
    pub cap: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SpineCheck {
    ManyToOne,
    TimeReversal,
}

#[derive(Args, Debug)]
pub struct SpineArgs {
    #[arg(long, value_enum, default_value = "many-to-one")]
    pub check: SpineCheck,
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    /// Generations: `a:b`, `a:b:step` or a comma list.
    #[arg(long, default_value = "1:6")]
    pub n: String,
    /// Functionals, comma separated. Defaults to `one,end-nonpositive,derivative-weight`
    /// for many-to-one and `end-position,max-below-zero,first-step-sibling` for
    /// the time reversal.
    #[arg(long)]
    pub functional: Option<String>,
    #[arg(long, default_value = "1e6", value_parser = grid::parse_count)]
    pub samples: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Quantity {
    Rminus,
    Rplus,
    /// `K_u`, the mass of `R^+` at the integer `u`.
    Katom,
    Harmonicity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Ladder laws from the Wiener-Hopf factorization (lattice walks).
    Dp,
    /// Time-indexed path DP with extrapolation (lattice walks).
    PathDp,
    Mc,
}

#[derive(Args, Debug)]
pub struct RenewalArgs {
    /// `srw`, `asym5`, `gaussian:<variance>` or `spine:<p>`.
    #[arg(long, default_value = "srw")]
    pub dist: String,
    #[arg(long, value_enum, default_value = "rminus")]
    pub quantity: Quantity,
    #[arg(long, default_value = "0:20")]
    pub u: String,
    #[arg(long, value_enum, default_value = "dp")]
    pub method: Method,
    /// Target error of the path DP.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value = "1e5", value_parser = grid::parse_count)]
    pub samples: u64,
}

#[derive(Args, Debug)]
pub struct MinTailArgs {
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    #[arg(long)]
    pub x: f64,
    #[arg(long, default_value = "1e6", value_parser = grid::parse_count)]
    pub samples: u64,
    /// Longest reversed walk followed, in steps.
    #[arg(long, default_value = "1e6", value_parser = grid::parse_count)]
    pub kmax: u64,
}

#[derive(Args, Debug)]
pub struct TheoremArgs {
    /// cM, cDinf, overshoot, factorization, smoothing, integrability, truncation or min-tail.
    #[arg(long)]
    pub which: String,
    /// TOML config with `[model]`, `[run]` and `[analysis]` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VerifyTarget {
    /// Extended renewal identity on an (x, a) grid; a = 0 must be rejected.
    Lemma25,
    /// Boundary normalization by quadrature.
    Boundary,
    /// Exact SRW renewal values against the ladder DP and Monte Carlo.
    RenewalOracle,
    /// Harmonicity of R^- for the killed walk.
    Harmonicity,
    /// `e^{-M} frak_D = D_n` on random trees.
    Decomposition,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(value_enum)]
    pub target: VerifyTarget,
    #[arg(long, default_value = "srw")]
    pub dist: String,
    #[arg(long, default_value = "0:9")]
    pub x_grid: String,
    #[arg(long, default_value = "1:5")]
    pub a_grid: String,
    /// Offspring parameters for `boundary`.
    #[arg(long, default_value = "0.6,0.8,1.0")]
    pub p: String,
    /// Levels for `harmonicity` (default `0,1,5,20`) and `renewal-oracle`
    /// (default `0:20:0.5`).
    #[arg(long)]
    pub u: Option<String>,
    /// Monte Carlo budget. Defaults: 1e6 for `harmonicity`, 1e5 for
    /// `renewal-oracle`, 1e3 trees for `decomposition`.
    #[arg(long, value_parser = grid::parse_count)]
    pub samples: Option<u64>,
    #[arg(long, default_value_t = 12)]
    pub horizon: u32,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
