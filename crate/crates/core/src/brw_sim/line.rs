//! Depth-first simulation up to a freeze line.
//!
//! Every descendant line is followed until it first reaches `V >= level` and
//! is frozen there. In the boundary case the tree dies out below any fixed
//! line, so the frozen set is finite and defines a stopping line; the
//! derivative martingale evaluated on it converges to `D_inf` as the level
//! grows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::models::PointProcessSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LineStats {
    /// `sum V e^-V` over the frozen particles.
    pub d_line: f64,
    /// `sum e^-V` over the frozen particles.
    pub w_line: f64,
    /// Minimum over all visited positions (including the root at 0).
    pub min: f64,
    /// Visited particles below the line.
    pub particles: u64,
    pub frozen: u64,
}

impl LineStats {
    /// Min-shifted derivative mass `sum (V - M) e^-V`. Plain `d_line` loses the
    /// `-M W` part of the limit at finite level, which biases the upper tail;
    /// shifting by the minimum restores it.
    pub fn d_shifted(&self) -> f64 {
        self.d_line - self.min * self.w_line
    }
}

pub fn simulate_line<R: Rng + ?Sized>(
    spec: &PointProcessSpec,
    level: f64,
    cap: usize,
    stack: &mut Vec<f64>,
    rng: &mut R,
) -> Result<LineStats> {
    let mut s = LineStats::default();
    stack.clear();
    if 0.0 >= level {
        s.d_line = 0.0;
        s.w_line = 1.0;
        s.frozen = 1;
        return Ok(s);
    }
    stack.push(0.0);
    while let Some(y) = stack.pop() {
        s.particles += 1;
        if s.particles as usize > cap {
            return Err(LabError::PopulationCap {
                count: s.particles as usize,
                cap,
            });
        }
        if let Some(children) = spec.branch(rng) {
            for d in children {
                let z = y + d;
                if z >= level {
                    let e = (-z).exp();
                    s.d_line += z * e;
                    s.w_line += e;
                    s.frozen += 1;
                } else {
                    s.min = s.min.min(z);
                    stack.push(z);
                }
            }
        }
    }
    Ok(s)
}

/// Direct estimate of `P(M < -x)` for a list of levels on one tree killed at
/// absolute height `kill`. A killed particle at `z` would still reach below
/// `-x` with probability about `c e^{-(z + x)}`; `closure` supplies `c` and
/// the result is `1 - prod (1 - c e^{-(z+x)})` when the stored tree itself
/// stays above `-x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectTailSample {
    pub min: f64,
    /// Power sums `sum e^{-m z}`, `m = 1..=4`, over killed particles.
    pub killed_power_sums: [f64; 4],
    pub particles: u64,
}

impl DirectTailSample {
    pub fn hit_probability(&self, x: f64, closure: f64) -> f64 {
        if self.min < -x {
            return 1.0;
        }
        1.0 - closure_survival(&self.killed_power_sums, closure * (-x).exp())
    }
}

/// `prod (1 - a e^{-z})` from power sums, via `ln(1 - u) = -sum u^m / m`.
/// Terms beyond the fourth power are below `u^5/5` with `u <= e^{-ceiling}`.
#[inline]
pub fn closure_survival(power_sums: &[f64; 4], a: f64) -> f64 {
    let mut am = a;
    let mut log = 0.0;
    for (m, s) in power_sums.iter().enumerate() {
        log -= am * s / (m + 1) as f64;
        am *= a;
    }
    log.exp()
}

pub fn simulate_direct_tail<R: Rng + ?Sized>(
    spec: &PointProcessSpec,
    kill: f64,
    cap: usize,
    stack: &mut Vec<f64>,
    rng: &mut R,
) -> Result<DirectTailSample> {
    let mut out = DirectTailSample {
        min: 0.0,
        killed_power_sums: [0.0; 4],
        particles: 0,
    };
    stack.clear();
    stack.push(0.0);
    while let Some(y) = stack.pop() {
        out.particles += 1;
        if out.particles as usize > cap {
            return Err(LabError::PopulationCap {
                count: out.particles as usize,
                cap,
            });
        }
        if let Some(children) = spec.branch(rng) {
            for d in children {
                let z = y + d;
                if z > kill {
                    let e = (-z).exp();
                    let mut em = e;
                    for s in out.killed_power_sums.iter_mut() {
                        *s += em;
                        em *= e;
                    }
                } else {
                    out.min = out.min.min(z);
                    stack.push(z);
                }
            }
        }
    }
    Ok(out)
}
