//! Simulation under the size-biased measures `Q` and `Q_k (x) P`, checks of
//! the change of measure, and rare-event estimators for the global minimum.

mod hybrid;
mod path;
mod reversed;

pub use hybrid::{forward_min_tail, hybrid_sim, min_event_weight, DepthProposal, ForwardConfig, ForwardTail, HybridTree, MinEventWeight};
pub use path::{
    many_to_one_check, simulate_spine, spine_marginal_samples, time_reversal_check, ManyToOne, PathFunctional,
    SpineFunctional, SpinePath, TimeReversal, MANY_TO_ONE_TILT,
};
pub use reversed::{
    calibration_levels, conditional_run, default_closure_grid, derivative_draws, derivative_tail, DerivativeTail, min_tail_curve, ConditionalDraw, ConditionalLevel,
    ConditionalRun, MinTailCurve, ReversedConfig,
};

use serde::{Deserialize, Serialize};

use crate::brw_sim::simulate_direct_tail;
use crate::error::{LabError, Result};
use crate::harness::{Estimate, Exec, RngStream, Sums, SumsVec};
use crate::models::PointProcessSpec;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntervalContribution {
    pub j: u32,
    pub lo: f64,
    pub hi: f64,
    pub p_hat: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MinTailEstimate {
    pub x: f64,
    pub p_hat: f64,
    pub stderr: f64,
    pub exm_phat: f64,
    pub exm_stderr: f64,
    /// Upper bound `e^{-(x + span)}` on the mass beyond the summed intervals.
    pub truncation_bound: f64,
    pub closure: f64,
    pub kmax_hits: u64,
    /// Set when paths reaching `k_max` could carry more than 10% of the stderr.
    pub kmax_warning: bool,
    pub intervals: Vec<IntervalContribution>,
    pub samples: u64,
    pub seed: u64,
}

/// `P(M <= -x)` from the reversed-spine sampler, summed over the intervals
/// `[-x-j-1, -x-j)`.
pub fn estimate_min_tail(
    spec: &PointProcessSpec,
    x: f64,
    k_max: usize,
    samples: u64,
    exec: &Exec,
    seed: u64,
) -> Result<MinTailEstimate> {
    if !(x >= 0.0) {
        return Err(LabError::param("x", "must be nonnegative"));
    }
    let mut cfg = ReversedConfig::for_levels(x);
    cfg.k_max = k_max;
    let curve = min_tail_curve(spec, &[x], &cfg, None, samples, exec, seed)?;
    let v = &curve.values[0];
    let span = ReversedConfig::TAIL_SPAN;
    let first = x.floor() as usize;
    let intervals = curve
        .intervals
        .iter()
        .enumerate()
        .skip(first)
        .map(|(j, e)| IntervalContribution {
            j: j as u32,
            lo: -(j as f64) - 1.0,
            hi: -(j as f64),
            p_hat: e.value,
            stderr: e.stderr,
        })
        .collect();
    let p = (-x).exp();
    // A path still alive at k_max carries at most e^{-x} per candidate.
    let kmax_mass = curve.kmax_hits as f64 / samples as f64;
    Ok(MinTailEstimate {
        x,
        p_hat: if x == 0.0 { 1.0 } else { v.value * p },
        stderr: if x == 0.0 { 0.0 } else { v.stderr * p },
        exm_phat: if x == 0.0 { 1.0 } else { v.value },
        exm_stderr: if x == 0.0 { 0.0 } else { v.stderr },
        truncation_bound: (-(x + span)).exp(),
        closure: curve.closure,
        kmax_hits: curve.kmax_hits,
        kmax_warning: kmax_mass > 0.1 * v.stderr,
        intervals,
        samples,
        seed,
    })
}

/// Direct estimate of `e^x P(M < -x)` from ordinary trees killed above
/// `kill`, with killed particles closed by `1 - c e^{-(z + x)}`.
pub fn direct_min_tail(
    spec: &PointProcessSpec,
    xs: &[f64],
    kill: f64,
    closure: f64,
    samples: u64,
    exec: &Exec,
    seed: u64,
) -> Result<Vec<Estimate>> {
    let stream = RngStream::named(seed, "spine/direct", 0);
    let nx = xs.len();
    let SumsVec(sums) = exec.run_with_state(
        samples,
        Vec::new,
        |stack, i, acc: &mut SumsVec| {
            acc.ensure(nx);
            let mut rng = stream.with_stream(i).rng();
            let s = simulate_direct_tail(spec, kill, usize::MAX, stack, &mut rng)?;
            for (a, &x) in acc.0.iter_mut().zip(xs) {
                a.add(s.hit_probability(x, closure) * x.exp());
            }
            Ok(())
        },
    )?;
    let sums = if sums.is_empty() { vec![Sums::default(); nx] } else { sums };
    Ok(sums.iter().map(|s| s.estimate(samples, "direct", seed)).collect())
}
