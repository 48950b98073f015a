//! Importance sampler for the global minimum, run backwards from the argmin.
//!
//! Under `Q_k (x) P` the event `{V(w_k) = M < M_{k-1}}` has weight
//! `e^{V(w_k)}`. Seen from `w_k`, the spine ancestors form a centered walk
//! `H_i = V(w_{k-i}) - V(w_k)` and the brother of `w_{k-i+1}` sits at
//! `H_i + xi` with `xi` an ordinary displacement. The event asks that `H`
//! stays positive, that every brother subtree and the subtree of `w_k` stay
//! at or above height 0. One reversed path serves every depth `k` at once:
//! candidate `k` contributes `e^{-H_k}` times the survival of the first `k`
//! brother subtrees.
//!
//! Two approximations keep the cost finite, both with explicit knobs:
//! - subtree particles above a freeze height are not followed; a frozen
//!   particle at `z` survives with probability `1 - c e^{-z}`, where `c` is
//!   the tail constant itself, solved self-consistently on a grid;
//! - the reversed walk is capped at `top`, far above every requested level.
//!   For the diffusion approximation of a walk killed at 0, a reflecting cap
//!   leaves the occupation density below it unchanged.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::brw_sim::closure_survival;
use crate::error::{LabError, Result};
use crate::harness::{Estimate, Exec, Merge, RatioSums, RngStream, Sums, SumsVec};
use crate::models::PointProcessSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReversedConfig {
    /// Subtree freeze height above the argmin.
    pub freeze: f64,
    /// Cap of the reversed walk.
    pub top: f64,
    /// Maximal argmin depth.
    pub k_max: usize,
    /// Particle cap per reversed path.
    pub cap: usize,
}

impl ReversedConfig {
    pub const DEFAULT_CEILING: f64 = 4.0;
    pub const TAIL_SPAN: f64 = 10.0;
    pub const MARGIN: f64 = 8.0;

    /// Settings for tail curves up to level `x_max`.
    pub fn for_levels(x_max: f64) -> Self {
        ReversedConfig {
            freeze: Self::DEFAULT_CEILING,
            top: x_max + Self::TAIL_SPAN + Self::MARGIN,
            k_max: 1_000_000,
            cap: 50_000_000,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.freeze > 0.0) {
            return Err(LabError::param("freeze", "must be positive"));
        }
        if !(self.top > self.freeze) {
            return Err(LabError::param("top", "must exceed the freeze height"));
        }
        if self.k_max == 0 {
            return Err(LabError::param("k_max", "must be positive"));
        }
        Ok(())
    }
}

/// Outcome of one ordinary subtree followed up to the freeze height.
#[derive(Clone, Copy, Debug, Default)]
struct Subtree {
    ok: bool,
    /// `sum e^{-m z}` over frozen particles, `m = 1..=4`.
    power: [f64; 4],
    /// `sum z e^{-z}` over frozen particles.
    mass: f64,
    particles: u64,
}

#[inline]
fn freeze_into(s: &mut Subtree, z: f64) {
    let e = (-z).exp();
    s.mass += z * e;
    let mut em = e;
    for p in s.power.iter_mut() {
        *p += em;
        em *= e;
    }
}

fn subtree<R: Rng + ?Sized>(
    spec: &PointProcessSpec,
    h: f64,
    freeze: f64,
    cap: u64,
    stack: &mut Vec<f64>,
    rng: &mut R,
) -> Result<Subtree> {
    let mut s = Subtree::default();
    if h < 0.0 {
        return Ok(s);
    }
    if h >= freeze {
        freeze_into(&mut s, h);
        s.ok = true;
        return Ok(s);
    }
    stack.clear();
    stack.push(h);
    while let Some(y) = stack.pop() {
        s.particles += 1;
        if s.particles > cap {
            return Err(LabError::PopulationCap {
                count: s.particles as usize,
                cap: cap as usize,
            });
        }
        if let Some(children) = spec.branch(rng) {
            for d in children {
                let z = y + d;
                if z < 0.0 {
                    return Ok(s);
                }
                if z >= freeze {
                    freeze_into(&mut s, z);
                } else {
                    stack.push(z);
                }
            }
        }
    }
    s.ok = true;
    Ok(s)
}

/// An admissible argmin depth on one reversed path.
#[derive(Clone, Copy, Debug)]
struct Candidate {
    depth: usize,
    height: f64,
    /// Power sums over frozen particles of the subtrees `0..=depth`.
    power: [f64; 4],
}

#[derive(Default)]
struct Scratch {
    heights: Vec<f64>,
    stack: Vec<f64>,
    cands: Vec<Candidate>,
    /// `masses[i]`: frozen derivative mass of subtree `i` (0 is the argmin's own).
    masses: Vec<f64>,
}

struct PathOutcome {
    root_ok: bool,
    root_power: [f64; 4],
    kmax_hit: bool,
    particles: u64,
    steps: usize,
}

fn sample_path<R: Rng + ?Sized>(
    spec: &PointProcessSpec,
    cfg: &ReversedConfig,
    x_min: f64,
    sc: &mut Scratch,
    rng: &mut R,
) -> Result<PathOutcome> {
    let sd = spec.sigma();
    sc.heights.clear();
    sc.cands.clear();
    sc.masses.clear();
    let mut out = PathOutcome {
        root_ok: false,
        root_power: [0.0; 4],
        kmax_hit: false,
        particles: 0,
        steps: 0,
    };
    let mut h = 0.0;
    loop {
        if sc.heights.len() >= cfg.k_max {
            out.kmax_hit = true;
            break;
        }
        let z: f64 = rng.sample(StandardNormal);
        h += sd * z;
        if h <= 0.0 {
            break;
        }
        if h > cfg.top {
            h = cfg.top;
        }
        sc.heights.push(h);
    }
    out.steps = sc.heights.len();
    let last = match sc.heights.iter().rposition(|&h| h > x_min) {
        Some(i) => i + 1,
        None if x_min < 0.0 => 0,
        None => return Ok(out),
    };
    let cap = cfg.cap as u64;
    let root = subtree(spec, 0.0, cfg.freeze, cap, &mut sc.stack, rng)?;
    out.particles += root.particles;
    if !root.ok {
        return Ok(out);
    }
    out.root_ok = true;
    out.root_power = root.power;
    sc.masses.push(root.mass);
    let mut power = root.power;
    for i in 1..=last {
        let hi = sc.heights[i - 1];
        let sib = hi + spec.displacement(rng);
        let s = subtree(spec, sib, cfg.freeze, cap, &mut sc.stack, rng)?;
        out.particles += s.particles;
        if !s.ok {
            break;
        }
        for (p, q) in power.iter_mut().zip(s.power) {
            *p += q;
        }
        sc.masses.push(s.mass);
        if hi > x_min {
            sc.cands.push(Candidate {
                depth: i,
                height: hi,
                power,
            });
        }
    }
    Ok(out)
}

/// Default closure grid for the self-consistent tail constant.
pub fn default_closure_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * 0.05).collect()
}

/// Levels at which the closure is made self-consistent: `[freeze, freeze + 4]`.
pub fn calibration_levels(freeze: f64) -> Vec<f64> {
    (0..=8).map(|i| freeze + 0.5 * i as f64).collect()
}

#[derive(Clone, Debug, Default)]
struct CurveAcc {
    curve: Vec<Sums>,
    bins: Vec<Sums>,
    root: Vec<Sums>,
    total0: Vec<Sums>,
    top: Vec<Sums>,
    depth_hist: Vec<f64>,
    particles: u64,
    steps: u64,
    kmax_hits: u64,
}

const DEPTH_BUCKETS: usize = 24;

impl CurveAcc {
    fn new(nc: usize, nx: usize, nb: usize) -> Self {
        CurveAcc {
            curve: vec![Sums::default(); nc * nx],
            bins: vec![Sums::default(); nc * nb],
            root: vec![Sums::default(); nc],
            total0: vec![Sums::default(); nc],
            top: vec![Sums::default(); nc],
            depth_hist: vec![0.0; DEPTH_BUCKETS],
            ..Default::default()
        }
    }
}

fn merge_vec(a: &mut [Sums], b: Vec<Sums>) {
    for (x, y) in a.iter_mut().zip(b) {
        x.merge(y);
    }
}

impl Merge for CurveAcc {
    fn merge(&mut self, o: Self) {
        if self.curve.is_empty() {
            *self = o;
            return;
        }
        if o.curve.is_empty() {
            return;
        }
        merge_vec(&mut self.curve, o.curve);
        merge_vec(&mut self.bins, o.bins);
        merge_vec(&mut self.root, o.root);
        merge_vec(&mut self.total0, o.total0);
        merge_vec(&mut self.top, o.top);
        for (x, y) in self.depth_hist.iter_mut().zip(o.depth_hist) {
            *x += y;
        }
        self.particles += o.particles;
        self.steps += o.steps;
        self.kmax_hits += o.kmax_hits;
    }
}

/// `e^x P(M < -x)` on a grid of levels, for a grid of closure constants.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MinTailCurve {
    pub xs: Vec<f64>,
    /// `e^x P(M < -x)` at the selected closure.
    pub values: Vec<Estimate>,
    /// Per-path average of the curve over the top half of `xs`.
    pub plateau: Estimate,
    /// `P(M in [-j-1, -j))` for `j = 0, 1, ...`.
    pub intervals: Vec<Estimate>,
    pub p_min_at_root: Estimate,
    /// `P(M < 0) + P(M = 0)`; should be 1.
    pub total_mass: Estimate,
    pub closure: f64,
    pub closure_self_consistent: bool,
    /// `(c, mean of e^z P_c(M < -z) over the calibration levels)`.
    pub calibration: Vec<(f64, f64)>,
    /// Weighted argmin depth profile in buckets `[2^b, 2^{b+1})`.
    pub depth_profile: Vec<f64>,
    pub samples: u64,
    pub particles: u64,
    pub walk_steps: u64,
    pub kmax_hits: u64,
    pub config: ReversedConfig,
    pub seed: u64,
}

/// Four-point Lagrange interpolation on a sorted grid.
fn interp(grid: &[f64], vals: &[f64], c: f64) -> f64 {
    let n = grid.len();
    if n == 1 {
        return vals[0];
    }
    if n < 4 {
        let i = grid.partition_point(|&g| g <= c).clamp(1, n - 1);
        let t = (c - grid[i - 1]) / (grid[i] - grid[i - 1]);
        return vals[i - 1] + t * (vals[i] - vals[i - 1]);
    }
    let i = grid.partition_point(|&g| g <= c).clamp(2, n - 2);
    let idx = [i - 2, i - 1, i, i + 1];
    let mut out = 0.0;
    for &a in &idx {
        let mut l = 1.0;
        for &b in &idx {
            if a != b {
                l *= (c - grid[b]) / (grid[a] - grid[b]);
            }
        }
        out += l * vals[a];
    }
    out
}

/// Runs the reversed sampler and assembles the tail curve. With `closure`
/// set, that constant is used; otherwise it is solved from
/// `c = mean_z e^z P_c(M < -z)` over [`calibration_levels`].
#[allow(clippy::too_many_arguments)]
pub fn min_tail_curve(
    spec: &PointProcessSpec,
    xs: &[f64],
    cfg: &ReversedConfig,
    closure: Option<f64>,
    samples: u64,
    exec: &Exec,
    seed: u64,
) -> Result<MinTailCurve> {
    cfg.check()?;
    if xs.iter().any(|&x| !(x >= 0.0)) {
        return Err(LabError::param("x", "levels must be nonnegative"));
    }
    if samples < 2 {
        return Err(LabError::param("samples", "need at least two samples"));
    }
    let calib = calibration_levels(cfg.freeze);
    let cgrid = match closure {
        Some(c) if (0.0..=1.0).contains(&c) => vec![c],
        Some(_) => return Err(LabError::param("closure", "must lie in [0, 1]")),
        None => default_closure_grid(),
    };
    let mut levels: Vec<f64> = xs.iter().chain(&calib).copied().collect();
    levels.sort_by(|a, b| a.total_cmp(b));
    levels.dedup();
    let exp_levels: Vec<f64> = levels.iter().map(|x| x.exp()).collect();
    let nb = cfg.top.ceil() as usize + 1;
    let (nc, nx) = (cgrid.len(), levels.len());
    let top_idx: Vec<usize> = xs[xs.len() / 2..]
        .iter()
        .map(|x| levels.iter().position(|l| l == x).unwrap())
        .collect();
    // Include x = 0 so the total-mass check is always available.
    let x_min = -1.0;
    let stream = RngStream::named(seed, "spine/reversed", 0);
    let acc: CurveAcc = exec.run_with_state(
        samples,
        || (Scratch::default(), Vec::new(), vec![0.0; nb], vec![0.0; nx]),
        |(sc, ew, bins, row), i, acc: &mut CurveAcc| {
            if acc.curve.is_empty() {
                *acc = CurveAcc::new(nc, nx, nb);
            }
            let mut rng = stream.with_stream(i).rng();
            let out = sample_path(spec, cfg, x_min, sc, &mut rng)?;
            acc.particles += out.particles;
            acc.steps += out.steps as u64;
            acc.kmax_hits += u64::from(out.kmax_hit);
            if !out.root_ok {
                return Ok(());
            }
            for cand in &sc.cands {
                let b = (usize::BITS - cand.depth.leading_zeros() - 1) as usize;
                acc.depth_hist[b.min(DEPTH_BUCKETS - 1)] += (-cand.height).exp();
            }
            for (ci, &c) in cgrid.iter().enumerate() {
                let r = closure_survival(&out.root_power, c);
                acc.root[ci].add(r);
                ew.clear();
                ew.extend(sc.cands.iter().map(|k| (-k.height).exp() * closure_survival(&k.power, c)));
                let below: f64 = ew.iter().sum();
                acc.total0[ci].add(below + r);
                row.iter_mut().for_each(|v| *v = 0.0);
                for (k, w) in sc.cands.iter().zip(ew.iter()) {
                    for (xi, &x) in levels.iter().enumerate() {
                        if k.height > x {
                            row[xi] += w;
                        }
                    }
                }
                for xi in 0..nx {
                    if row[xi] > 0.0 {
                        acc.curve[ci * nx + xi].add(row[xi] * exp_levels[xi]);
                    }
                }
                if !top_idx.is_empty() {
                    let t: f64 = top_idx.iter().map(|&xi| row[xi] * exp_levels[xi]).sum();
                    if t > 0.0 {
                        acc.top[ci].add(t / top_idx.len() as f64);
                    }
                }
                bins.iter_mut().for_each(|v| *v = 0.0);
                for (k, w) in sc.cands.iter().zip(ew.iter()) {
                    bins[(k.height.floor() as usize).min(nb - 1)] += w;
                }
                for (j, &v) in bins.iter().enumerate() {
                    if v > 0.0 {
                        acc.bins[ci * nb + j].add(v);
                    }
                }
            }
            Ok(())
        },
    )?;
    let acc = if acc.curve.is_empty() { CurveAcc::new(nc, nx, nb) } else { acc };
    let mean = |s: &Sums| s.mean(samples);
    let se = |s: &Sums| s.stderr(samples);

    let mut calibration = Vec::with_capacity(nc);
    for ci in 0..nc {
        let f: f64 = calib
            .iter()
            .map(|z| {
                let xi = levels.iter().position(|l| l == z).unwrap();
                mean(&acc.curve[ci * nx + xi])
            })
            .sum::<f64>()
            / calib.len() as f64;
        calibration.push((cgrid[ci], f));
    }
    let (c_star, consistent) = solve_closure(&calibration);
    let at = |v: &[Sums], stride: usize, j: usize, f: &dyn Fn(&Sums) -> f64| -> f64 {
        let col: Vec<f64> = (0..nc).map(|ci| f(&v[ci * stride + j])).collect();
        interp(&cgrid, &col, c_star)
    };
    let method = "reversed-spine";
    let est = |v: f64, s: f64| Estimate::new(v, s, samples, method, seed);
    let values = xs
        .iter()
        .map(|x| {
            let xi = levels.iter().position(|l| l == x).unwrap();
            est(at(&acc.curve, nx, xi, &mean), at(&acc.curve, nx, xi, &se))
        })
        .collect();
    let intervals = (0..nb)
        .map(|j| est(at(&acc.bins, nb, j, &mean), at(&acc.bins, nb, j, &se)))
        .collect();
    let total: f64 = acc.depth_hist.iter().sum();
    Ok(MinTailCurve {
        xs: xs.to_vec(),
        values,
        plateau: est(at(&acc.top, 1, 0, &mean), at(&acc.top, 1, 0, &se)),
        intervals,
        p_min_at_root: est(at(&acc.root, 1, 0, &mean), at(&acc.root, 1, 0, &se)),
        total_mass: est(at(&acc.total0, 1, 0, &mean), at(&acc.total0, 1, 0, &se)),
        closure: c_star,
        closure_self_consistent: consistent,
        calibration,
        depth_profile: acc.depth_hist.iter().map(|h| if total > 0.0 { h / total } else { 0.0 }).collect(),
        samples,
        particles: acc.particles,
        walk_steps: acc.steps,
        kmax_hits: acc.kmax_hits,
        config: cfg.clone(),
        seed,
    })
}

/// Root of `f(c) - c` on the grid (decreasing), refined on the interpolant.
fn solve_closure(cal: &[(f64, f64)]) -> (f64, bool) {
    if cal.len() == 1 {
        return (cal[0].0, true);
    }
    let grid: Vec<f64> = cal.iter().map(|p| p.0).collect();
    let g: Vec<f64> = cal.iter().map(|p| p.1 - p.0).collect();
    let Some(i) = g.windows(2).position(|w| w[0] >= 0.0 && w[1] <= 0.0) else {
        // No crossing on the grid: take the end with the smallest residual.
        let end = if g[0] < 0.0 { 0 } else { grid.len() - 1 };
        return (grid[end], false);
    };
    let (mut lo, mut hi) = (grid[i], grid[i + 1]);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if interp(&grid, &g, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi), true)
}

/// One weighted draw from the law of `(-(M + x), frak_D)` given `M < -x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalDraw {
    pub overshoot: f64,
    pub frak_d: f64,
    pub weight: f64,
    pub depth: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionalLevel {
    pub x: f64,
    /// `e^x P(M < -x)` from the same paths.
    pub tail: Estimate,
    pub mean_frak_d: Estimate,
    /// `E[frak_D ln^2(1 + frak_D) | M < -x]`.
    pub integrability: Estimate,
    pub mean_overshoot: Estimate,
    /// `P(frak_D - frak_D^{>= t} >= epsilon | M < -x)` per `t`.
    pub truncation: Vec<Estimate>,
    /// `E[frak_D^{>= t} | M < -x]` per `t`.
    pub mean_truncated: Vec<Estimate>,
    pub draws: Vec<ConditionalDraw>,
    pub effective_samples: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionalRun {
    pub levels: Vec<ConditionalLevel>,
    pub t_grid: Vec<u32>,
    pub epsilon: f64,
    pub closure: f64,
    pub samples: u64,
    pub particles: u64,
    pub config: ReversedConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, Default)]
struct LevelAcc {
    tail: Sums,
    frak_d: RatioSums,
    integ: RatioSums,
    overshoot: RatioSums,
    trunc: Vec<RatioSums>,
    kept: Vec<RatioSums>,
    draws: Vec<ConditionalDraw>,
}

impl Merge for LevelAcc {
    fn merge(&mut self, o: Self) {
        self.tail.merge(o.tail);
        self.frak_d.merge(o.frak_d);
        self.integ.merge(o.integ);
        self.overshoot.merge(o.overshoot);
        if self.trunc.is_empty() {
            self.trunc = o.trunc;
            self.kept = o.kept;
        } else {
            for (a, b) in self.trunc.iter_mut().zip(o.trunc) {
                a.merge(b);
            }
            for (a, b) in self.kept.iter_mut().zip(o.kept) {
                a.merge(b);
            }
        }
        self.draws.extend(o.draws);
    }
}

#[derive(Clone, Debug, Default)]
struct CondAcc {
    levels: Vec<LevelAcc>,
    particles: u64,
}

impl Merge for CondAcc {
    fn merge(&mut self, o: Self) {
        if self.levels.is_empty() {
            self.levels = o.levels;
        } else {
            for (a, b) in self.levels.iter_mut().zip(o.levels) {
                a.merge(b);
            }
        }
        self.particles += o.particles;
    }
}

/// Conditional law of the overshoot and of `frak_D` given `M < -x`.
///
/// Subtrees are followed up to the freeze height `cfg.freeze` above the
/// argmin and `frak_D` is the frozen mass `sum z e^{-z}` of the argmin's own
/// subtree plus the brother subtrees along the spine; the truncated version
/// keeps only the brothers at reversed index `<= t + 1`.
#[allow(clippy::too_many_arguments)]
pub fn conditional_run(
    spec: &PointProcessSpec,
    xs: &[f64],
    t_grid: &[u32],
    epsilon: f64,
    closure: f64,
    cfg: &ReversedConfig,
    samples: u64,
    exec: &Exec,
    seed: u64,
) -> Result<ConditionalRun> {
    cfg.check()?;
    if xs.is_empty() || xs.iter().any(|&x| !(x >= 0.0)) {
        return Err(LabError::param("x", "need nonnegative levels"));
    }
    if !(epsilon > 0.0) {
        return Err(LabError::param("epsilon", "must be positive"));
    }
    let x_min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let stream = RngStream::named(seed, "spine/conditional", 0);
    let nt = t_grid.len();
    let acc: CondAcc = exec.run_with_state(
        samples,
        || (Scratch::default(), Vec::new(), Vec::new()),
        |(sc, w, prefix), i, acc: &mut CondAcc| {
            if acc.levels.is_empty() {
                acc.levels = (0..xs.len())
                    .map(|_| LevelAcc {
                        trunc: vec![RatioSums::default(); nt],
                        kept: vec![RatioSums::default(); nt],
                        ..Default::default()
                    })
                    .collect();
            }
            let mut rng = stream.with_stream(i).rng();
            let out = sample_path(spec, cfg, x_min, sc, &mut rng)?;
            acc.particles += out.particles;
            // Prefix sums of the subtree masses: prefix[i] = masses[0..=i].
            prefix.clear();
            let mut s = 0.0;
            for m in &sc.masses {
                s += m;
                prefix.push(s);
            }
            for (xi, &x) in xs.iter().enumerate() {
                let la = &mut acc.levels[xi];
                w.clear();
                w.extend(sc.cands.iter().map(|k| {
                    if k.height > x {
                        (x - k.height).exp() * closure_survival(&k.power, closure)
                    } else {
                        0.0
                    }
                }));
                let total: f64 = w.iter().sum();
                let u: f64 = rng.gen();
                if total <= 0.0 {
                    la.frak_d.push(0.0, 0.0);
                    la.integ.push(0.0, 0.0);
                    la.overshoot.push(0.0, 0.0);
                    for t in la.trunc.iter_mut().chain(la.kept.iter_mut()) {
                        t.push(0.0, 0.0);
                    }
                    continue;
                }
                la.tail.add(total);
                let (mut sd, mut si, mut so) = (0.0, 0.0, 0.0);
                let mut st = vec![0.0; 2 * nt];
                let mut pick = None;
                let mut run = 0.0;
                for (k, &wk) in sc.cands.iter().zip(w.iter()) {
                    if wk == 0.0 {
                        continue;
                    }
                    let d = prefix[k.depth];
                    let l = d.ln_1p();
                    sd += wk * d;
                    si += wk * d * l * l;
                    so += wk * (k.height - x);
                    for (ti, &t) in t_grid.iter().enumerate() {
                        let keep = prefix[k.depth.min(t as usize + 1)];
                        if d - keep >= epsilon {
                            st[ti] += wk;
                        }
                        st[nt + ti] += wk * keep;
                    }
                    run += wk;
                    if pick.is_none() && u * total < run {
                        pick = Some((k.height - x, d, k.depth));
                    }
                }
                la.frak_d.push(sd, total);
                la.integ.push(si, total);
                la.overshoot.push(so, total);
                for (t, &v) in la.trunc.iter_mut().chain(la.kept.iter_mut()).zip(&st) {
                    t.push(v, total);
                }
                let (overshoot, frak_d, depth) = pick.unwrap_or_else(|| {
                    let k = sc.cands.iter().rev().find(|k| k.height > x).unwrap();
                    (k.height - x, prefix[k.depth], k.depth)
                });
                la.draws.push(ConditionalDraw {
                    overshoot,
                    frak_d,
                    weight: total,
                    depth: depth as u32,
                });
            }
            Ok(())
        },
    )?;
    let method = "reversed-spine-conditional";
    let mut levels = Vec::with_capacity(xs.len());
    for (xi, la) in acc.levels.into_iter().enumerate() {
        let ws: Vec<f64> = la.draws.iter().map(|d| d.weight).collect();
        levels.push(ConditionalLevel {
            x: xs[xi],
            tail: la.tail.estimate(samples, method, seed),
            mean_frak_d: la.frak_d.estimate(method, seed),
            integrability: la.integ.estimate(method, seed),
            mean_overshoot: la.overshoot.estimate(method, seed),
            truncation: la.trunc.iter().map(|t| t.estimate(method, seed)).collect(),
            mean_truncated: la.kept.iter().map(|t| t.estimate(method, seed)).collect(),
            effective_samples: crate::harness::effective_sample_size(&ws),
            draws: la.draws,
        });
    }
    Ok(ConditionalRun {
        levels,
        t_grid: t_grid.to_vec(),
        epsilon,
        closure,
        samples,
        particles: acc.particles,
        config: cfg.clone(),
        seed,
    })
}

/// Tail of the derivative martingale limit written as `D = e^{-M} frak_D`,
/// with `M` and `frak_D` drawn jointly from the reversed sampler.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DerivativeTail {
    /// Levels `ln y`.
    pub log_y: Vec<f64>,
    /// `y P(D >= y)`.
    pub scaled_tail: Vec<Estimate>,
    /// `E[min(D, y)] = int_0^y P(D >= u) du`.
    pub truncated_mean: Vec<Estimate>,
    /// Per-path average of `y P(D >= y)` over the top half of the levels.
    pub plateau: Estimate,
    pub closure: f64,
    pub samples: u64,
    pub particles: u64,
    pub config: ReversedConfig,
    pub seed: u64,
}

#[derive(Default)]
struct TailAcc {
    sums: SumsVec,
    particles: u64,
}

impl Merge for TailAcc {
    fn merge(&mut self, o: Self) {
        self.sums.merge(o.sums);
        self.particles += o.particles;
    }
}

/// Estimates [`DerivativeTail`] on the levels `log_y`. Every argmin depth,
/// including the root, is summed on each path.
#[allow(clippy::too_many_arguments)]
pub fn derivative_tail(
    spec: &PointProcessSpec,
    log_y: &[f64],
    closure: f64,
    cfg: &ReversedConfig,
    samples: u64,
    exec: &Exec,
    seed: u64,
) -> Result<DerivativeTail> {
    cfg.check()?;
    if log_y.is_empty() || log_y.iter().any(|l| !l.is_finite()) {
        return Err(LabError::param("log_y", "need finite levels"));
    }
    if !(0.0..=1.0).contains(&closure) {
        return Err(LabError::param("closure", "must lie in [0, 1]"));
    }
    let ny = log_y.len();
    let ys: Vec<f64> = log_y.iter().map(|l| l.exp()).collect();
    let stream = RngStream::named(seed, "spine/derivative-tail", 0);
    let acc: TailAcc = exec.run_with_state(
        samples,
        || (Scratch::default(), vec![0.0; 2 * ny]),
        |(sc, row), i, acc: &mut TailAcc| {
            acc.sums.ensure(2 * ny + 1);
            let mut rng = stream.with_stream(i).rng();
            let out = sample_path(spec, cfg, -1.0, sc, &mut rng)?;
            acc.particles += out.particles;
            if !out.root_ok {
                return Ok(());
            }
            row.iter_mut().for_each(|v| *v = 0.0);
            let mut add = |w: f64, ln_d: f64| {
                let d = ln_d.exp();
                for j in 0..ny {
                    if ln_d >= log_y[j] {
                        row[j] += w * ys[j];
                    }
                    row[ny + j] += w * d.min(ys[j]);
                }
            };
            add(closure_survival(&out.root_power, closure), sc.masses[0].ln());
            for k in &sc.cands {
                let w = (-k.height).exp() * closure_survival(&k.power, closure);
                let d: f64 = sc.masses[..=k.depth].iter().sum();
                add(w, k.height + d.ln());
            }
            for (s, &v) in acc.sums.0.iter_mut().zip(row.iter()) {
                if v != 0.0 {
                    s.add(v);
                }
            }
            let top = &row[ny / 2..ny];
            acc.sums.0[2 * ny].add(top.iter().sum::<f64>() / top.len() as f64);
            Ok(())
        },
    )?;
    let particles = acc.particles;
    let sums = if acc.sums.0.is_empty() { vec![Sums::default(); 2 * ny + 1] } else { acc.sums.0 };
    let method = "reversed-spine-derivative";
    Ok(DerivativeTail {
        log_y: log_y.to_vec(),
        scaled_tail: sums[..ny].iter().map(|s| s.estimate(samples, method, seed)).collect(),
        truncated_mean: sums[ny..2 * ny].iter().map(|s| s.estimate(samples, method, seed)).collect(),
        plateau: sums[2 * ny].estimate(samples, method, seed),
        closure,
        samples,
        particles,
        config: cfg.clone(),
        seed,
    })
}

/// Weighted draws from the law of `D = e^{-M} frak_D`: one depth per path,
/// picked in proportion to its weight, carrying the path's total weight.
/// Extinct trees give `D = 0`.
pub fn derivative_draws(
    spec: &PointProcessSpec,
    closure: f64,
    cfg: &ReversedConfig,
    samples: u64,
    exec: &Exec,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    cfg.check()?;
    let stream = RngStream::named(seed, "spine/derivative-draws", 0);
    exec.run_with_state(samples, Scratch::default, |sc, i, acc: &mut Vec<(f64, f64)>| {
        let mut rng = stream.with_stream(i).rng();
        let out = sample_path(spec, cfg, -1.0, sc, &mut rng)?;
        if !out.root_ok {
            acc.push((0.0, 0.0));
            return Ok(());
        }
        let root = closure_survival(&out.root_power, closure);
        let ws: Vec<f64> = sc
            .cands
            .iter()
            .map(|k| (-k.height).exp() * closure_survival(&k.power, closure))
            .collect();
        let total = root + ws.iter().sum::<f64>();
        let u: f64 = rng.gen::<f64>() * total;
        let mut d = sc.masses[0];
        let mut run = root;
        if u >= run {
            for (k, w) in sc.cands.iter().zip(&ws) {
                run += w;
                d = k.height.exp() * sc.masses[..=k.depth].iter().sum::<f64>();
                if u < run {
                    break;
                }
            }
        }
        acc.push((d, total));
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_spec, Family};

    #[test]
    fn interpolation_is_exact_on_cubics() {
        let g: Vec<f64> = (0..8).map(|i| i as f64 * 0.25).collect();
        let v: Vec<f64> = g.iter().map(|x| 1.0 - 2.0 * x + x * x * x).collect();
        for c in [0.1, 0.6, 1.3, 1.7] {
            assert!((interp(&g, &v, c) - (1.0 - 2.0 * c + c * c * c)).abs() < 1e-12);
        }
    }

    #[test]
    fn closure_solver_finds_crossing() {
        let cal: Vec<(f64, f64)> = (0..=20).map(|i| i as f64 * 0.05).map(|c| (c, 0.6 - 0.3 * c)).collect();
        let (c, ok) = solve_closure(&cal);
        assert!(ok);
        assert!((c - 0.6 / 1.3).abs() < 1e-9);
    }

    #[test]
    fn subtree_fails_below_zero() {
        let s = make_spec(Family::GaussianDyadic, 1.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut stack = Vec::new();
        assert!(!subtree(&s, -0.1, 4.0, 1000, &mut stack, &mut rng).unwrap().ok);
        let f = subtree(&s, 5.0, 4.0, 1000, &mut stack, &mut rng).unwrap();
        assert!(f.ok && f.particles == 0);
        assert!((f.power[0] - (-5.0f64).exp()).abs() < 1e-15);
    }

    use rand::SeedableRng;

    #[test]
    fn total_mass_is_one() {
        let s = make_spec(Family::GaussianDyadic, 1.0).unwrap();
        let cfg = ReversedConfig::for_levels(4.0);
        let c = min_tail_curve(&s, &[0.0, 1.0, 2.0], &cfg, None, 20_000, &Exec::new(1), 3).unwrap();
        let t = &c.total_mass;
        assert!((t.value - 1.0).abs() < 4.0 * t.stderr + 0.01, "{t:?}");
        assert!(c.values[0].value < 1.0 + 4.0 * c.values[0].stderr);
    }
}
