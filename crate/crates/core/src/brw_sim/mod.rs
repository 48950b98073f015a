//! Trees under the original measure: simulation with horizon and barrier,
//! martingale functionals, the global minimum and the decomposition of the
//! derivative martingale around its argmin.

mod line;
mod minimum;
mod tree;

pub use line::{closure_survival, simulate_direct_tail, simulate_line, DirectTailSample, LineStats};
pub use minimum::{frak_d_truncated, global_min, min_decomposition, DecompositionTerms, MinRecord};
pub use tree::{
    additive_martingale, derivative_martingale, simulate_tree, truncated_martingale, BarrierPolicy, Particle, TreeState,
    DEFAULT_POPULATION_CAP, TIE_TOLERANCE,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::harness::{Exec, RngStream};
use crate::models::PointProcessSpec;

/// One row of the per-replica CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRecord {
    pub seed: u64,
    pub replica_id: u64,
    pub n: u32,
    #[serde(rename = "W_n")]
    pub w_n: f64,
    #[serde(rename = "D_n")]
    pub d_n: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub argmin_gen: u32,
    pub frak_d: f64,
    pub killed_mass_bound: f64,
}

pub fn simulate_replicas(
    spec: &PointProcessSpec,
    horizon: u32,
    barrier: BarrierPolicy,
    cap: usize,
    replicas: u64,
    exec: &Exec,
    seed: u64,
) -> Result<Vec<ReplicaRecord>> {
    let stream = RngStream::named(seed, "brw_sim/replicas", 0);
    exec.map(replicas, |i| {
        let mut rng = stream.with_stream(i).rng();
        let t = simulate_tree(spec, horizon, barrier, cap, &mut rng)?;
        let m = global_min(&t, &mut rng);
        let d = min_decomposition(&t, &m, horizon)?;
        Ok(ReplicaRecord {
            seed,
            replica_id: i,
            n: horizon,
            w_n: additive_martingale(&t, horizon)?,
            d_n: derivative_martingale(&t, horizon)?,
            m: m.value,
            argmin_gen: m.argmin_generation,
            frak_d: d.frak_d,
            killed_mass_bound: t.killed_mass_bound,
        })
    })
}
