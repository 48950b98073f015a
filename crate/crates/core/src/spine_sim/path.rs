//! The spine construction under `Q`: a tilted line of descent with ordinary
//! siblings hanging off it.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::brw_sim::{simulate_line, LineStats};
use crate::error::{LabError, Result};
use crate::harness::{Estimate, Exec, RngStream, Sums};
use crate::models::{sample_tilted_offspring, PointProcessSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinePath {
    /// `V(w_0) = 0, ..., V(w_k)`.
    pub spine_positions: Vec<f64>,
    /// Displacements of the brothers of `w_j` relative to `w_{j-1}`, for `j = 1..=k`.
    pub sibling_displacements: Vec<Vec<f64>>,
}

impl SpinePath {
    pub fn depth(&self) -> usize {
        self.sibling_displacements.len()
    }

    pub fn end(&self) -> f64 {
        *self.spine_positions.last().unwrap()
    }

    /// Absolute positions of the brothers of `w_j`.
    pub fn siblings(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        let base = self.spine_positions[j - 1];
        self.sibling_displacements[j - 1].iter().map(move |d| base + d)
    }

    /// Simulates, on demand, the ordinary subtree of a brother of `w_j`
    /// up to the freeze line at absolute level `level`.
    pub fn sibling_subtree<R: Rng + ?Sized>(
        &self,
        spec: &PointProcessSpec,
        j: usize,
        sibling: usize,
        level: f64,
        cap: usize,
        rng: &mut R,
    ) -> Result<LineStats> {
        let root = self.spine_positions[j - 1] + self.sibling_displacements[j - 1][sibling];
        let mut st = simulate_line(spec, level - root, cap, &mut Vec::new(), rng)?;
        // Back to absolute coordinates.
        st.d_line = st.d_line * (-root).exp() + root * st.w_line * (-root).exp();
        st.w_line *= (-root).exp();
        st.min += root;
        Ok(st)
    }
}

pub fn simulate_spine<R: Rng + ?Sized>(spec: &PointProcessSpec, k: usize, rng: &mut R) -> SpinePath {
    let mut spine_positions = Vec::with_capacity(k + 1);
    let mut sibling_displacements = Vec::with_capacity(k);
    let mut v = 0.0;
    spine_positions.push(v);
    for _ in 0..k {
        let draw = sample_tilted_offspring(spec, rng);
        v += draw.spine_displacement;
        spine_positions.push(v);
        sibling_displacements.push(draw.sibling_displacements);
    }
    SpinePath {
        spine_positions,
        sibling_displacements,
    }
}

/// Path functionals available to [`many_to_one_check`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PathFunctional {
    One,
    EndNonPositive,
    /// `S_n e^{-S_n}`.
    DerivativeWeight,
    /// `1{min_j S_j >= -level}`.
    MinAbove { level: f64 },
}

impl PathFunctional {
    pub fn eval(&self, path: &[f64]) -> f64 {
        let end = path.last().copied().unwrap_or(0.0);
        match *self {
            PathFunctional::One => 1.0,
            PathFunctional::EndNonPositive => f64::from(end <= 0.0),
            PathFunctional::DerivativeWeight => end * (-end).exp(),
            PathFunctional::MinAbove { level } => f64::from(path.iter().all(|&s| s >= -level)),
        }
    }
}

impl std::str::FromStr for PathFunctional {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one" => Ok(PathFunctional::One),
            "end-nonpositive" => Ok(PathFunctional::EndNonPositive),
            "derivative-weight" => Ok(PathFunctional::DerivativeWeight),
            "min-above-1" => Ok(PathFunctional::MinAbove { level: 1.0 }),
            _ => Err(LabError::Unsupported(format!("unregistered path functional '{s}'"))),
        }
    }
}

/// Exponential tilt of the walk-side sampler: steps are drawn from
/// `N(theta sigma^2, sigma^2)` and reweighted. `theta = 1/2` halves the
/// log-variance of `e^{S_n}` without making `g = 1` trivially exact.
pub const MANY_TO_ONE_TILT: f64 = 0.5;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManyToOne {
    pub n: usize,
    pub functional: PathFunctional,
    pub tree_side: Estimate,
    pub walk_side: Estimate,
}

/// Tree side `E sum_{|z|=n} g(V(z_1), ..., V(z_n))` against walk side
/// `E e^{S_n} g(S_1, ..., S_n)`.
pub fn many_to_one_check(
    spec: &PointProcessSpec,
    n: usize,
    g: PathFunctional,
    samples: u64,
    exec: &Exec,
    seed: u64,
) -> Result<ManyToOne> {
    if n == 0 || n > 24 {
        return Err(LabError::param("n", "must lie in 1..=24"));
    }
    let tree_stream = RngStream::named(seed, "spine/m2o-tree", n as u64);
    let tree: Sums = exec.run_with_state(
        samples,
        || (Vec::<(usize, f64)>::new(), vec![0.0; n + 1]),
        |(stack, path), i, acc: &mut Sums| {
            let mut rng = tree_stream.with_stream(i).rng();
            let mut total = 0.0;
            stack.clear();
            stack.push((0, 0.0));
            while let Some((depth, v)) = stack.pop() {
                path[depth] = v;
                if depth == n {
                    total += g.eval(&path[1..=n]);
                    continue;
                }
                if let Some(children) = spec.branch(&mut rng) {
                    for d in children {
                        stack.push((depth + 1, v + d));
                    }
                }
            }
            acc.add(total);
            Ok(())
        },
    )?;
    let walk_stream = RngStream::named(seed, "spine/m2o-walk", n as u64);
    let s2 = spec.sigma_g2;
    let sd = spec.sigma();
    let shift = MANY_TO_ONE_TILT * s2;
    let walk: Sums = exec.run_with_state(
        samples,
        || vec![0.0; n],
        |path, i, acc: &mut Sums| {
            let mut rng = walk_stream.with_stream(i).rng();
            let mut s = 0.0;
            for x in path.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                s += shift + sd * z;
                *x = s;
            }
            // e^{S_n} times the likelihood ratio of the untilted walk.
            let log_w = s - MANY_TO_ONE_TILT * s + n as f64 * MANY_TO_ONE_TILT * MANY_TO_ONE_TILT * s2 / 2.0;
            acc.add(log_w.exp() * g.eval(path));
            Ok(())
        },
    )?;
    Ok(ManyToOne {
        n,
        functional: g,
        tree_side: tree.estimate(samples, "tree", seed),
        walk_side: walk.estimate(samples, "tilted-walk", seed),
    })
}

/// Functionals of the spine increments and sibling sets for the
/// time-reversal check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpineFunctional {
    EndPosition,
    /// `1{max_{1 <= i <= k} V(w_i) < 0}`.
    MaxBelowZero,
    /// `e^{V(w_1)} 1{one brother at generation 1}`.
    FirstStepSibling,
}

impl std::str::FromStr for SpineFunctional {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "end-position" => Ok(SpineFunctional::EndPosition),
            "max-below-zero" => Ok(SpineFunctional::MaxBelowZero),
            "first-step-sibling" => Ok(SpineFunctional::FirstStepSibling),
            _ => Err(LabError::Unsupported(format!("unregistered spine functional '{s}'"))),
        }
    }
}

impl SpineFunctional {
    fn eval(&self, positions: &[f64], sibling_counts: &[usize]) -> f64 {
        match self {
            SpineFunctional::EndPosition => *positions.last().unwrap(),
            SpineFunctional::MaxBelowZero => f64::from(positions[1..].iter().all(|&v| v < 0.0)),
            SpineFunctional::FirstStepSibling => positions[1].exp() * f64::from(sibling_counts[0] == 1),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimeReversal {
    pub k: usize,
    pub functional: SpineFunctional,
    pub forward: Estimate,
    pub reversed: Estimate,
}

/// Evaluates `phi` on the spine sequence and, on an independent batch, on the
/// reversed sequence `(V(w_k) - V(w_{k-i}), brothers at k-i+1)_{i <= k}`.
pub fn time_reversal_check(
    spec: &PointProcessSpec,
    k: usize,
    phi: SpineFunctional,
    samples: u64,
    exec: &Exec,
    seed: u64,
) -> Result<TimeReversal> {
    if k == 0 {
        return Err(LabError::param("k", "must be at least 1"));
    }
    let run = |domain: &str, reverse: bool| -> Result<Estimate> {
        let stream = RngStream::named(seed, domain, k as u64);
        let acc: Sums = exec.run(samples, |i, acc: &mut Sums| {
            let mut rng = stream.with_stream(i).rng();
            let path = simulate_spine(spec, k, &mut rng);
            let counts: Vec<usize> = path.sibling_displacements.iter().map(Vec::len).collect();
            let v = if reverse {
                let end = path.end();
                let pos: Vec<f64> = (0..=k).map(|i| end - path.spine_positions[k - i]).collect();
                let rc: Vec<usize> = (1..=k).map(|i| counts[k - i]).collect();
                phi.eval(&pos, &rc)
            } else {
                phi.eval(&path.spine_positions, &counts)
            };
            acc.add(v);
            Ok(())
        })?;
        Ok(acc.estimate(samples, if reverse { "reversed" } else { "forward" }, seed))
    };
    Ok(TimeReversal {
        k,
        functional: phi,
        forward: run("spine/reversal-fwd", false)?,
        reversed: run("spine/reversal-rev", true)?,
    })
}

/// Samples of `V(w_n)` for marginal checks.
pub fn spine_marginal_samples(spec: &PointProcessSpec, n: usize, samples: u64, exec: &Exec, seed: u64) -> Result<Vec<f64>> {
    let stream = RngStream::named(seed, "spine/marginal", n as u64);
    exec.map(samples, |i| {
        let mut rng = stream.with_stream(i).rng();
        Ok(simulate_spine(spec, n, &mut rng).end())
    })
}
