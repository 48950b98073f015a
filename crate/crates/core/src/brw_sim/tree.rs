use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::models::PointProcessSpec;

pub const DEFAULT_POPULATION_CAP: usize = 100_000_000;

/// Relative tolerance under which two positions count as a tie for the minimum.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub parent: u32,
    pub generation: u32,
    pub position: f64,
}

/// Where particles are removed from above. `level` is the minimum-event depth
/// `x` that the killed-mass bound refers to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum BarrierPolicy {
    None,
    Fixed { y_max: f64 },
    Adaptive { x: f64, slack: f64 },
}

impl BarrierPolicy {
    pub fn adaptive(x: f64) -> Self {
        BarrierPolicy::Adaptive { x, slack: 15.0 }
    }

    pub fn y_max(&self) -> Option<f64> {
        match *self {
            BarrierPolicy::None => None,
            BarrierPolicy::Fixed { y_max } => Some(y_max),
            BarrierPolicy::Adaptive { x, slack } => Some(x + slack),
        }
    }

    pub fn level(&self) -> f64 {
        match *self {
            BarrierPolicy::Adaptive { x, .. } => x,
            _ => 0.0,
        }
    }
}

/// Arena of one realized tree. Generations are stored contiguously and in
/// order, so a parent always precedes its children.
#[derive(Clone, Debug)]
pub struct TreeState {
    pub particles: Vec<Particle>,
    pub(crate) gen_start: Vec<usize>,
    pub horizon: u32,
    pub upper_barrier: Option<f64>,
    pub killed_mass_bound: f64,
    pub killed: u64,
}

impl TreeState {
    pub(crate) fn root() -> Self {
        TreeState {
            particles: vec![Particle {
                parent: u32::MAX,
                generation: 0,
                position: 0.0,
            }],
            gen_start: vec![0, 1],
            horizon: 0,
            upper_barrier: None,
            killed_mass_bound: 0.0,
            killed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Index range of generation `n`; empty past the horizon.
    pub fn generation_range(&self, n: u32) -> std::ops::Range<usize> {
        let n = n as usize;
        if n + 1 >= self.gen_start.len() {
            return 0..0;
        }
        self.gen_start[n]..self.gen_start[n + 1]
    }

    pub fn generation(&self, n: u32) -> &[Particle] {
        &self.particles[self.generation_range(n)]
    }

    pub fn frontier(&self) -> std::ops::Range<usize> {
        self.generation_range(self.horizon)
    }

    pub fn survived(&self) -> bool {
        !self.frontier().is_empty()
    }

    /// Positions along the ancestral line of particle `i`, root first.
    pub fn ancestry(&self, mut i: usize) -> Vec<f64> {
        let mut path = Vec::with_capacity(self.particles[i].generation as usize + 1);
        loop {
            path.push(self.particles[i].position);
            let p = self.particles[i].parent;
            if p == u32::MAX {
                break;
            }
            i = p as usize;
        }
        path.reverse();
        path
    }

    /// Running minimum of positions along each particle's ancestry.
    pub fn path_minima(&self) -> Vec<f64> {
        let mut m = Vec::with_capacity(self.particles.len());
        for (i, p) in self.particles.iter().enumerate() {
            let v = if i == 0 { p.position } else { p.position.min(m[p.parent as usize]) };
            m.push(v);
        }
        m
    }
}

/// Simulates a tree generation by generation up to `horizon`.
pub fn simulate_tree<R: Rng + ?Sized>(
    spec: &PointProcessSpec,
    horizon: u32,
    barrier: BarrierPolicy,
    cap: usize,
    rng: &mut R,
) -> Result<TreeState> {
    let mut t = TreeState::root();
    t.upper_barrier = barrier.y_max();
    let level = barrier.level();
    for g in 0..horizon {
        let range = t.generation_range(g);
        for i in range {
            let y = t.particles[i].position;
            if let Some(children) = spec.branch(rng) {
                for d in children {
                    let z = y + d;
                    if matches!(t.upper_barrier, Some(ymax) if z > ymax) {
                        t.killed += 1;
                        t.killed_mass_bound += (-(level + z)).exp();
                        continue;
                    }
                    t.particles.push(Particle {
                        parent: i as u32,
                        generation: g + 1,
                        position: z,
                    });
                }
            }
            if t.particles.len() > cap {
                return Err(LabError::PopulationCap {
                    count: t.particles.len(),
                    cap,
                });
            }
        }
        t.gen_start.push(t.particles.len());
        t.horizon = g + 1;
        if t.generation_range(g + 1).is_empty() {
            // Extinct: record the remaining empty generations.
            for _ in g + 1..horizon {
                t.gen_start.push(t.particles.len());
            }
            t.horizon = horizon;
            break;
        }
    }
    Ok(t)
}

fn check_generation(tree: &TreeState, n: u32) -> Result<()> {
    if n > tree.horizon {
        return Err(LabError::param("n", format!("generation {n} beyond horizon {}", tree.horizon)));
    }
    Ok(())
}

pub fn additive_martingale(tree: &TreeState, n: u32) -> Result<f64> {
    check_generation(tree, n)?;
    Ok(tree.generation(n).iter().map(|p| (-p.position).exp()).sum())
}

pub fn derivative_martingale(tree: &TreeState, n: u32) -> Result<f64> {
    check_generation(tree, n)?;
    Ok(tree.generation(n).iter().map(|p| p.position * (-p.position).exp()).sum())
}

/// `D_n^(a) = sum R^-(V+a) e^-V 1{min along the path >= -a}`.
pub fn truncated_martingale<F: Fn(f64) -> f64>(tree: &TreeState, n: u32, a: f64, renewal_minus: F) -> Result<f64> {
    check_generation(tree, n)?;
    if !(a > 0.0) {
        return Err(LabError::param("a", "must be positive"));
    }
    let mins = tree.path_minima();
    Ok(tree
        .generation_range(n)
        .filter(|&i| mins[i] >= -a)
        .map(|i| {
            let v = tree.particles[i].position;
            renewal_minus(v + a) * (-v).exp()
        })
        .sum())
}
