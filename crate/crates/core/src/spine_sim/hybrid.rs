//! Forward construction under `Q_k (x) P`: the spine up to generation `k`,
//! ordinary branching everywhere else.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::brw_sim::{BarrierPolicy, Particle, TreeState, TIE_TOLERANCE};
use crate::error::{LabError, Result};
use crate::harness::{Estimate, Exec, Merge, RngStream, Sums};
use crate::models::PointProcessSpec;

#[derive(Clone, Debug)]
pub struct HybridTree {
    pub tree: TreeState,
    /// Arena indices of `w_0, ..., w_k`.
    pub spine: Vec<usize>,
    pub k: usize,
}

impl HybridTree {
    pub fn spine_end(&self) -> f64 {
        self.tree.particles[self.spine[self.k]].position
    }

    /// `W_n` over stored generation-`n` particles.
    pub fn additive(&self, n: u32) -> f64 {
        self.tree.generation(n).iter().map(|p| (-p.position).exp()).sum()
    }
}

pub fn hybrid_sim<R: Rng + ?Sized>(
    spec: &PointProcessSpec,
    k: usize,
    horizon: u32,
    barrier: BarrierPolicy,
    cap: usize,
    rng: &mut R,
) -> Result<HybridTree> {
    if k as u32 > horizon {
        return Err(LabError::param("k", "spine depth beyond horizon"));
    }
    let mut t = TreeState::root();
    t.upper_barrier = barrier.y_max();
    let level = barrier.level();
    let mut spine = vec![0usize];
    for g in 0..horizon {
        let range = t.generation_range(g);
        let spine_here = (g as usize) < k;
        for i in range {
            let y = t.particles[i].position;
            let on_spine = spine_here && spine[g as usize] == i;
            let children = if on_spine {
                // Spine child first, then its brother.
                Some([spec.spine_displacement(rng), spec.displacement(rng)])
            } else {
                spec.branch(rng)
            };
            let Some(children) = children else { continue };
            for (c, d) in children.into_iter().enumerate() {
                let z = y + d;
                let is_spine = on_spine && c == 0;
                if !is_spine && matches!(t.upper_barrier, Some(ymax) if z > ymax) {
                    t.killed += 1;
                    t.killed_mass_bound += (-(level + z)).exp();
                    continue;
                }
                if is_spine {
                    spine.push(t.particles.len());
                }
                t.particles.push(Particle {
                    parent: i as u32,
                    generation: g + 1,
                    position: z,
                });
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
    }
    Ok(HybridTree { tree: t, spine, k })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinEventWeight {
    pub k: usize,
    pub indicator: bool,
    /// `e^{V(w_k) + x} / N_k(M)` on the event, else 0.
    pub weight: f64,
    pub ties: usize,
}

/// Whether `w_k` is the youngest strict minimizer of the stored tree with
/// `V(w_k)` in `[-x-1, -x)`, and the corresponding weight.
pub fn min_event_weight(h: &HybridTree, x: f64) -> MinEventWeight {
    let v = h.spine_end();
    let tie = |a: f64| (a - v).abs() <= TIE_TOLERANCE * (1.0 + a.abs().max(v.abs()));
    let mut ok = v >= -x - 1.0 && v < -x;
    let mut ties = 0usize;
    for p in &h.tree.particles {
        if tie(p.position) {
            if (p.generation as usize) < h.k {
                ok = false;
            } else if p.generation as usize == h.k {
                ties += 1;
            }
        } else if p.position < v {
            ok = false;
        }
        if !ok {
            break;
        }
    }
    MinEventWeight {
        k: h.k,
        indicator: ok,
        weight: if ok { (v + x).exp() / ties.max(1) as f64 } else { 0.0 },
        ties,
    }
}

/// Proposal for the argmin depth `k` on `[1, k_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DepthProposal {
    Geometric { q: f64 },
    /// `pi(k) ~ 1/k`. The argmin depth has a polynomial tail, which a
    /// geometric proposal only reaches through exponentially large weights.
    Harmonic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardConfig {
    pub k_max: usize,
    pub proposal: DepthProposal,
    /// Subtree particles more than `slack` above `V(w_k)` are dropped.
    pub slack: f64,
    /// When set, a dropped particle at height `z` above `V(w_k)` still fails
    /// with probability `c e^{-z}`.
    pub closure: Option<f64>,
    pub cap: usize,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        ForwardConfig {
            k_max: 200,
            proposal: DepthProposal::Harmonic,
            slack: 10.0,
            closure: None,
            cap: 50_000_000,
        }
    }
}

/// Cumulative proposal masses `cdf[k-1] = pi(1) + ... + pi(k)`.
fn proposal_cdf(cfg: &ForwardConfig) -> Result<Vec<f64>> {
    let raw: Vec<f64> = match cfg.proposal {
        DepthProposal::Geometric { q } => {
            if !(q > 0.0 && q < 1.0) {
                return Err(LabError::param("q", "must lie in (0, 1)"));
            }
            (0..cfg.k_max).map(|k| q * (1.0 - q).powi(k as i32)).collect()
        }
        DepthProposal::Harmonic => (1..=cfg.k_max).map(|k| 1.0 / k as f64).collect(),
    };
    let total: f64 = raw.iter().sum();
    let mut acc = 0.0;
    Ok(raw
        .iter()
        .map(|r| {
            acc += r / total;
            acc
        })
        .collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ForwardTail {
    pub xs: Vec<f64>,
    /// `e^x P(M < -x)`.
    pub values: Vec<Estimate>,
    /// Bound on the probability mass lost to the slack barrier, in the same units.
    pub barrier_bound: Vec<f64>,
    pub spine_rejections: u64,
}

#[derive(Clone, Debug, Default)]
struct ForwardAcc {
    sums: Vec<Sums>,
    killed: Vec<f64>,
    rejected: u64,
}

impl Merge for ForwardAcc {
    fn merge(&mut self, o: Self) {
        if self.sums.is_empty() {
            *self = o;
            return;
        }
        for (a, b) in self.sums.iter_mut().zip(o.sums) {
            a.merge(b);
        }
        for (a, b) in self.killed.iter_mut().zip(o.killed) {
            *a += b;
        }
        self.rejected += o.rejected;
    }
}

/// Ordinary subtree from absolute `root`; fails if anything goes below
/// `floor`. Returns the dropped mass `sum e^{-(z - floor)}` on success;
/// the caller turns it into a closure factor.
fn subtree_above<R: Rng + ?Sized>(
    spec: &PointProcessSpec,
    root: f64,
    floor: f64,
    ceiling: f64,
    cap: usize,
    stack: &mut Vec<f64>,
    rng: &mut R,
) -> Result<Option<f64>> {
    if root < floor {
        return Ok(None);
    }
    if root > ceiling {
        return Ok(Some((floor - root).exp()));
    }
    let mut dropped = 0.0;
    let mut n = 0usize;
    stack.clear();
    stack.push(root);
    while let Some(y) = stack.pop() {
        n += 1;
        if n > cap {
            return Err(LabError::PopulationCap { count: n, cap });
        }
        if let Some(children) = spec.branch(rng) {
            for d in children {
                let z = y + d;
                if z < floor {
                    return Ok(None);
                }
                if z > ceiling {
                    dropped += (floor - z).exp();
                } else {
                    stack.push(z);
                }
            }
        }
    }
    Ok(Some(dropped))
}

/// Forward estimator of `e^x P(M < -x)`, restricted to argmin depths
/// `k <= k_max`, with the depth drawn from a proposal. The spine is checked first; subtrees are
/// only simulated when the spine already ends at a strict running minimum.
pub fn forward_min_tail(
    spec: &PointProcessSpec,
    xs: &[f64],
    cfg: &ForwardConfig,
    samples: u64,
    exec: &Exec,
    seed: u64,
) -> Result<ForwardTail> {
    if cfg.k_max == 0 {
        return Err(LabError::param("k_max", "must be positive"));
    }
    let cdf = proposal_cdf(cfg)?;
    let x_min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    if !(x_min >= 0.0) {
        return Err(LabError::param("x", "levels must be nonnegative"));
    }
    let stream = RngStream::named(seed, "spine/forward", 0);
    let nx = xs.len();
    let acc: ForwardAcc = exec.run_with_state(
        samples,
        || (Vec::new(), Vec::new(), Vec::new()),
        |(pos, sib, stack): &mut (Vec<f64>, Vec<f64>, Vec<f64>), i, acc: &mut ForwardAcc| {
            if acc.sums.is_empty() {
                acc.sums = vec![Sums::default(); nx];
                acc.killed = vec![0.0; nx];
            }
            let mut rng = stream.with_stream(i).rng();
            let u: f64 = rng.gen();
            let k = cdf.partition_point(|&c| c <= u).min(cfg.k_max - 1) + 1;
            let pk = cdf[k - 1] - if k > 1 { cdf[k - 2] } else { 0.0 };
            pos.clear();
            sib.clear();
            let mut v = 0.0;
            pos.push(v);
            for _ in 0..k {
                sib.push(v + spec.displacement(&mut rng));
                v += spec.spine_displacement(&mut rng);
                pos.push(v);
            }
            if !(v < -x_min) || pos[..k].iter().any(|&p| p <= v) {
                acc.rejected += 1;
                return Ok(());
            }
            let ceiling = v + cfg.slack;
            let mut dropped = 0.0;
            let mut survival = 1.0;
            for &s in sib.iter().chain(std::iter::once(&v)) {
                match subtree_above(spec, s, v, ceiling, cfg.cap, stack, &mut rng)? {
                    Some(d) => {
                        dropped += d;
                        if let Some(c) = cfg.closure {
                            // Dropped particles sit above the slack, so c e^{-z} is tiny
                            // and the first-order product is accurate.
                            survival *= (-c * d).exp();
                        }
                    }
                    None => return Ok(()),
                }
            }
            let w = survival * v.exp() / pk;
            for (xi, &x) in xs.iter().enumerate() {
                if v < -x {
                    acc.sums[xi].add(w * x.exp());
                    acc.killed[xi] += w * x.exp() * dropped.min(1.0);
                }
            }
            Ok(())
        },
    )?;
    let acc = if acc.sums.is_empty() {
        ForwardAcc {
            sums: vec![Sums::default(); nx],
            killed: vec![0.0; nx],
            rejected: 0,
        }
    } else {
        acc
    };
    Ok(ForwardTail {
        xs: xs.to_vec(),
        values: acc.sums.iter().map(|s| s.estimate(samples, "forward-hybrid", seed)).collect(),
        barrier_bound: acc.killed.iter().map(|k| k / samples as f64).collect(),
        spine_rejections: acc.rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_spec, Family};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn depth_zero_is_ordinary_tree() {
        let s = make_spec(Family::GaussianDyadic, 1.0).unwrap();
        let h = hybrid_sim(&s, 0, 4, BarrierPolicy::None, 1 << 20, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(h.tree.len(), 31);
        assert_eq!(h.spine, vec![0]);
    }

    #[test]
    fn spine_survives_beyond_extinction() {
        let s = make_spec(Family::GaussianDyadic, 0.6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let h = hybrid_sim(&s, 6, 6, BarrierPolicy::None, 1 << 20, &mut rng).unwrap();
            assert_eq!(h.spine.len(), 7);
            assert_eq!(h.tree.particles[h.spine[6]].generation, 6);
            assert!(!h.tree.generation(6).is_empty());
        }
    }

    #[test]
    fn change_of_measure_recovers_survival() {
        // E_P[1{Z_k > 0}] = E_Q[1 / W_k].
        let s = make_spec(Family::GaussianDyadic, 0.7).unwrap();
        let k = 4u32;
        // Extinction by generation n is the n-th iterate of f(s) = 1 - p + p s^2 at 0.
        let mut surv = 1.0;
        for _ in 0..k {
            surv = 1.0 - (1.0 - s.p + s.p * (1.0 - surv) * (1.0 - surv));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut sums = Sums::default();
        let n = 40_000;
        for _ in 0..n {
            let h = hybrid_sim(&s, k as usize, k, BarrierPolicy::None, 1 << 20, &mut rng).unwrap();
            sums.add(1.0 / h.additive(k));
        }
        let e = sums.estimate(n, "q", 0);
        assert!((e.value - surv).abs() < 4.0 * e.stderr, "{e:?} vs {surv}");
    }

    #[test]
    fn weight_is_bounded_on_event() {
        let s = make_spec(Family::GaussianDyadic, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut hits = 0;
        for _ in 0..3000 {
            let h = hybrid_sim(&s, 3, 8, BarrierPolicy::Fixed { y_max: 6.0 }, 1 << 22, &mut rng).unwrap();
            let m = min_event_weight(&h, 0.5);
            if m.indicator {
                hits += 1;
                assert!(m.weight > 0.0 && m.weight <= std::f64::consts::E);
            } else {
                assert_eq!(m.weight, 0.0);
            }
        }
        assert!(hits > 0);
    }
}
