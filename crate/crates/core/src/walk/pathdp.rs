//! Dynamic programming over (step count, position) for integer walks killed
//! outside a half-line.
//!
//! Infinite sums over time are evaluated from partial sums at path lengths
//! `L_0 2^k`. Constrained occupation probabilities decay like `j^{-3/2}`
//! with corrections in powers of `j^{-1/2}`, so the partial sums are smooth
//! in `h = L^{-1/2}` and Richardson (Neville) extrapolation to `h = 0`
//! converges fast. The reported bound is the gap between the last two
//! diagonal extrapolants plus any mass trimmed from the window.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::models::StepDistribution;

/// Entries below this are dropped from the far edge of the window.
const TRIM: f64 = 1e-30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HalfLine {
    AtMost(i64),
    AtLeast(i64),
}

impl HalfLine {
    fn contains(&self, s: i64) -> bool {
        match *self {
            HalfLine::AtMost(b) => s <= b,
            HalfLine::AtLeast(b) => s >= b,
        }
    }
}

/// A probability vector on consecutive integers starting at `lo`.
#[derive(Clone, Debug)]
pub struct Occupation {
    pub lo: i64,
    pub mass: Vec<f64>,
    pub trimmed: f64,
}

impl Occupation {
    pub fn point(s: i64) -> Self {
        Occupation {
            lo: s,
            mass: vec![1.0],
            trimmed: 0.0,
        }
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.mass.len() as i64 - 1
    }

    pub fn at(&self, s: i64) -> f64 {
        if s < self.lo || s > self.hi() {
            0.0
        } else {
            self.mass[(s - self.lo) as usize]
        }
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }
}

pub(crate) fn lattice_steps(dist: &StepDistribution) -> Result<Vec<(i64, f64)>> {
    match dist {
        StepDistribution::Lattice { support, probs } => Ok(support.iter().copied().zip(probs.iter().copied()).collect()),
        StepDistribution::ContinuousGaussian { .. } => {
            Err(LabError::Unsupported("lattice DP requested for a continuous step law".into()))
        }
    }
}

/// One step of the walk followed by killing outside `alive`.
pub fn advance(occ: &Occupation, steps: &[(i64, f64)], alive: HalfLine, buf: &mut Vec<f64>) -> Occupation {
    let smin = steps.first().map(|s| s.0).unwrap_or(0);
    let smax = steps.last().map(|s| s.0).unwrap_or(0);
    let mut lo = occ.lo + smin;
    let mut hi = occ.hi() + smax;
    match alive {
        HalfLine::AtMost(b) => hi = hi.min(b),
        HalfLine::AtLeast(b) => lo = lo.max(b),
    }
    if hi < lo {
        return Occupation {
            lo: 0,
            mass: Vec::new(),
            trimmed: occ.trimmed,
        };
    }
    buf.clear();
    buf.resize((hi - lo + 1) as usize, 0.0);
    for (i, &m) in occ.mass.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let s = occ.lo + i as i64;
        for &(d, q) in steps {
            let t = s + d;
            if t >= lo && t <= hi {
                buf[(t - lo) as usize] += m * q;
            }
        }
    }
    // Trim negligible entries on the unbounded side.
    let mut trimmed = occ.trimmed;
    let (mut a, mut b) = (0usize, buf.len());
    match alive {
        HalfLine::AtMost(_) => {
            while a < b && buf[a] < TRIM {
                trimmed += buf[a];
                a += 1;
            }
        }
        HalfLine::AtLeast(_) => {
            while b > a && buf[b - 1] < TRIM {
                trimmed += buf[b - 1];
                b -= 1;
            }
        }
    }
    Occupation {
        lo: lo + a as i64,
        mass: buf[a..b].to_vec(),
        trimmed,
    }
}

/// Law of the killed walk after exactly `n` steps (time 0 is not checked).
pub fn killed_distribution(dist: &StepDistribution, start: i64, alive: HalfLine, n: usize) -> Result<Occupation> {
    let steps = lattice_steps(dist)?;
    let mut occ = Occupation::point(start);
    let mut buf = Vec::new();
    for _ in 0..n {
        occ = advance(&occ, &steps, alive, &mut buf);
    }
    Ok(occ)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DpConfig {
    pub base_length: usize,
    pub levels: usize,
}

impl Default for DpConfig {
    fn default() -> Self {
        DpConfig {
            base_length: 256,
            levels: 9,
        }
    }
}

/// Extrapolated Green function `G(s) = sum_{j >= 0} P(S_j = s, S_i in alive for 1 <= i <= j)`
/// on the positions `[lo, hi]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GreenTable {
    pub lo: i64,
    pub values: Vec<f64>,
    pub bounds: Vec<f64>,
    /// Partial sums at the largest path length, unextrapolated.
    pub raw: Vec<f64>,
    pub max_length: usize,
}

impl GreenTable {
    pub fn at(&self, s: i64) -> (f64, f64) {
        if s < self.lo || s >= self.lo + self.values.len() as i64 {
            return (0.0, 0.0);
        }
        let i = (s - self.lo) as usize;
        (self.values[i], self.bounds[i])
    }

    /// Sum over `s` in `[a, b]` of the extrapolated values with summed bounds.
    pub fn sum(&self, a: i64, b: i64) -> (f64, f64) {
        let (mut v, mut e) = (0.0, 0.0);
        for s in a.max(self.lo)..=b.min(self.lo + self.values.len() as i64 - 1) {
            let (x, y) = self.at(s);
            v += x;
            e += y;
        }
        (v, e)
    }
}

/// Neville extrapolation to zero of `values[k]` sampled at `h[k]`; returns the
/// last diagonal entry and its gap to the previous one.
fn richardson(h: &[f64], values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mut t = values.to_vec();
    let mut diag = vec![t[0]];
    for m in 1..n {
        for k in (m..n).rev() {
            t[k] = (h[k - m] * t[k] - h[k] * t[k - 1]) / (h[k - m] - h[k]);
        }
        diag.push(t[m]);
    }
    let last = diag[n - 1];
    let gap = if n >= 2 { (last - diag[n - 2]).abs() } else { f64::INFINITY };
    (last, gap)
}

pub fn green_table(
    dist: &StepDistribution,
    start: i64,
    alive: HalfLine,
    window: (i64, i64),
    cfg: &DpConfig,
) -> Result<GreenTable> {
    let steps = lattice_steps(dist)?;
    let (wlo, whi) = window;
    if whi < wlo {
        return Err(LabError::param("window", "empty position window"));
    }
    let width = (whi - wlo + 1) as usize;
    let mut acc = vec![0.0; width];
    let add = |acc: &mut [f64], occ: &Occupation, alive_check: bool| {
        for (i, &m) in occ.mass.iter().enumerate() {
            let s = occ.lo + i as i64;
            if s >= wlo && s <= whi && (!alive_check || alive.contains(s)) {
                acc[(s - wlo) as usize] += m;
            }
        }
    };
    let mut occ = Occupation::point(start);
    add(&mut acc, &occ, false);
    let mut snapshots: Vec<Vec<f64>> = Vec::new();
    let mut lengths = Vec::new();
    let mut buf = Vec::new();
    let mut j = 0usize;
    for k in 0..cfg.levels {
        let target = cfg.base_length << k;
        while j < target {
            occ = advance(&occ, &steps, alive, &mut buf);
            add(&mut acc, &occ, true);
            j += 1;
        }
        snapshots.push(acc.clone());
        lengths.push(target as f64);
    }
    let h: Vec<f64> = lengths.iter().map(|l| l.powf(-0.5)).collect();
    let mut values = Vec::with_capacity(width);
    let mut bounds = Vec::with_capacity(width);
    for i in 0..width {
        let col: Vec<f64> = snapshots.iter().map(|s| s[i]).collect();
        let (v, gap) = richardson(&h, &col);
        values.push(v);
        bounds.push(gap + occ.trimmed * j as f64);
    }
    Ok(GreenTable {
        lo: wlo,
        values,
        bounds,
        raw: acc,
        max_length: j,
    })
}

/// Quantities with a DP evaluation backend.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DpQuantity {
    /// `R^-(u) = sum_j P(max_{1..j} S < 0, S_j >= -u)`.
    RMinus { u: i64 },
    /// `R^+(u) = sum_j P(min_{1..j} S > 0, S_j <= u)`.
    RPlus { u: i64 },
    /// `theta0 = sum_j P(max_{0..j} S <= 0, S_j = 0)`.
    Theta0,
    /// `K_a = sum_j P(min_{1..j} S > 0, S_j = a)`.
    KAtom { a: i64 },
    /// `R~(x, a) = sum_j P_{-a}(max_{1..j} S < 0, S_j >= -x)`.
    TildeR { x: i64, a: i64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpValue {
    pub value: f64,
    pub error_bound: f64,
    pub flagged: bool,
}

/// Evaluates `quantity` by path DP; `flagged` is set when the bound exceeds `tol`.
pub fn lattice_dp_oracle(dist: &StepDistribution, quantity: DpQuantity, cfg: &DpConfig, tol: f64) -> Result<DpValue> {
    let (value, error_bound) = match quantity {
        DpQuantity::RMinus { u } => {
            check_nonneg("u", u)?;
            green_table(dist, 0, HalfLine::AtMost(-1), (-u, 0), cfg)?.sum(-u, 0)
        }
        DpQuantity::RPlus { u } => {
            check_nonneg("u", u)?;
            green_table(dist, 0, HalfLine::AtLeast(1), (0, u), cfg)?.sum(0, u)
        }
        DpQuantity::Theta0 => green_table(dist, 0, HalfLine::AtMost(0), (0, 0), cfg)?.at(0),
        DpQuantity::KAtom { a } => {
            check_nonneg("a", a)?;
            green_table(dist, 0, HalfLine::AtLeast(1), (a, a), cfg)?.at(a)
        }
        DpQuantity::TildeR { x, a } => {
            check_nonneg("x", x)?;
            check_nonneg("a", a)?;
            let t = green_table(dist, -a, HalfLine::AtMost(-1), (-x.max(a), 0), cfg)?;
            let (v, e) = t.sum(-x, 0);
            // The start itself counts at time 0 when -a >= -x.
            (v, e)
        }
    };
    Ok(DpValue {
        value,
        error_bound,
        flagged: error_bound > tol,
    })
}

fn check_nonneg(name: &'static str, v: i64) -> Result<()> {
    if v < 0 {
        return Err(LabError::param(name, "must be nonnegative"));
    }
    Ok(())
}

/// `R~(x, a)` for all `x` in `0..=x_max` at once.
pub fn tilde_r_row(dist: &StepDistribution, a: i64, x_max: i64, cfg: &DpConfig) -> Result<Vec<DpValue>> {
    let t = green_table(dist, -a, HalfLine::AtMost(-1), (-x_max.max(a), 0), cfg)?;
    Ok((0..=x_max)
        .map(|x| {
            let (value, error_bound) = t.sum(-x, 0);
            DpValue {
                value,
                error_bound,
                flagged: false,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn srw_theta0_is_two() {
        let v = lattice_dp_oracle(&StepDistribution::srw(), DpQuantity::Theta0, &DpConfig::default(), 1e-6).unwrap();
        assert!((v.value - 2.0).abs() < 1e-6, "{v:?}");
        assert!(v.error_bound < 1e-6, "{v:?}");
    }

    #[test]
    fn srw_r_minus_and_atoms() {
        let cfg = DpConfig::default();
        for u in [0, 1, 3, 7] {
            let v = lattice_dp_oracle(&StepDistribution::srw(), DpQuantity::RMinus { u }, &cfg, 1e-6).unwrap();
            assert!((v.value - (u + 1) as f64).abs() < 1e-6, "{u}: {v:?}");
            let k = lattice_dp_oracle(&StepDistribution::srw(), DpQuantity::KAtom { a: u }, &cfg, 1e-6).unwrap();
            assert!((k.value - 1.0).abs() < 1e-6, "{u}: {k:?}");
        }
    }

    #[test]
    fn tilde_r_at_zero_shift_is_r_minus() {
        let cfg = DpConfig::default();
        let v = lattice_dp_oracle(&StepDistribution::srw(), DpQuantity::TildeR { x: 5, a: 0 }, &cfg, 1e-6).unwrap();
        assert!((v.value - 6.0).abs() < 1e-6);
    }

    #[test]
    fn two_step_survival_enumeration() {
        // Of the four SRW paths of length 2, ++ and +- stay >= 0; only ++ stays > 0.
        let occ = killed_distribution(&StepDistribution::srw(), 0, HalfLine::AtLeast(0), 2).unwrap();
        assert!((occ.total() - 0.5).abs() < 1e-15);
        let strict = killed_distribution(&StepDistribution::srw(), 0, HalfLine::AtLeast(1), 2).unwrap();
        assert!((strict.total() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn richardson_recovers_polynomial_limit() {
        let h = [1.0, 0.5, 0.25, 0.125];
        let v: Vec<f64> = h.iter().map(|x| 3.0 + 2.0 * x - x * x * x).collect();
        let (lim, _) = richardson(&h, &v);
        assert!((lim - 3.0).abs() < 1e-12);
    }
}
