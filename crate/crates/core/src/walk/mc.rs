//! Monte Carlo fluctuation theory for any centered step law.
//!
//! Descending ladder records are generated with an upper re-injection band:
//! whenever the walk climbs more than `band` above its running minimum it is
//! moved back to `min + band`. Future records depend on the re-entry point
//! only through an overshoot law that forgets its start exponentially fast,
//! so the bias is negligible for a band of a few dozen standard deviations,
//! while the otherwise heavy-tailed excursion times become light-tailed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::harness::{Estimate, Exec, Merge, Moments, RngStream};
use crate::models::{StepDistribution, StepSampler};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderSample {
    pub descending_heights: Vec<f64>,
    pub descending_epochs: Vec<u64>,
    pub ascending_heights: Vec<f64>,
    pub ascending_epochs: Vec<u64>,
    pub path_length: u64,
    /// The ladder epoch following the last recorded one was not observed.
    pub censored_descending: bool,
    pub censored_ascending: bool,
}

/// Strict ladder records of one path of `path_length` steps, starting with
/// the trivial record `(0, 0)` on both sides.
pub fn ladder_sample<R: Rng + ?Sized>(dist: &StepDistribution, path_length: u64, rng: &mut R) -> LadderSample {
    let smp = dist.sampler();
    let mut out = LadderSample {
        descending_heights: vec![0.0],
        descending_epochs: vec![0],
        ascending_heights: vec![0.0],
        ascending_epochs: vec![0],
        path_length,
        censored_descending: true,
        censored_ascending: true,
    };
    let (mut s, mut lo, mut hi) = (0.0, 0.0, 0.0);
    for j in 1..=path_length {
        s += smp.sample(rng);
        if s < lo {
            lo = s;
            out.descending_heights.push(s);
            out.descending_epochs.push(j);
        }
        if s > hi {
            hi = s;
            out.ascending_heights.push(s);
            out.ascending_epochs.push(j);
        }
    }
    out.censored_descending = *out.descending_epochs.last().unwrap() < path_length || path_length == 0;
    out.censored_ascending = *out.ascending_epochs.last().unwrap() < path_length || path_length == 0;
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Minus,
    Plus,
}

/// Default band, in step standard deviations.
pub const DEFAULT_BAND_SDS: f64 = 30.0;

/// Calls `record(depth)` with `depth = |H_j|` for every strict descending
/// (or ascending, on the plus side) ladder height `j >= 1` up to depth `u_max`.
fn ladder_walk<R: Rng + ?Sized, F: FnMut(f64)>(
    smp: &StepSampler,
    sign: f64,
    u_max: f64,
    band: f64,
    rng: &mut R,
    mut record: F,
) {
    let (mut s, mut m) = (0.0f64, 0.0f64);
    loop {
        s += sign * smp.sample(rng);
        if s < m {
            m = s;
            if -m > u_max {
                return;
            }
            record(-m);
        } else if s > m + band {
            s = m + band;
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RenewalTable {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub error_bound: Vec<f64>,
    pub side: Side,
    pub method: String,
    pub samples: u64,
}

impl RenewalTable {
    /// Linear interpolation; flat beyond the last grid point.
    pub fn eval(&self, u: f64) -> f64 {
        if u < 0.0 {
            return 0.0;
        }
        let i = self.grid.partition_point(|&g| g <= u);
        if i == 0 {
            return self.values[0];
        }
        if i >= self.grid.len() {
            return *self.values.last().unwrap();
        }
        let (g0, g1) = (self.grid[i - 1], self.grid[i]);
        let t = (u - g0) / (g1 - g0);
        self.values[i - 1] * (1.0 - t) + self.values[i] * t
    }
}

#[derive(Default)]
struct GridAcc(Vec<Moments>);

impl Merge for GridAcc {
    fn merge(&mut self, o: Self) {
        if self.0.is_empty() {
            self.0 = o.0;
            return;
        }
        for (a, b) in self.0.iter_mut().zip(o.0) {
            a.merge(b);
        }
    }
}

/// Monte Carlo renewal function on a sorted grid of `u >= 0`.
pub fn renewal_table_mc(
    dist: &StepDistribution,
    grid: &[f64],
    side: Side,
    samples: u64,
    band: Option<f64>,
    exec: &Exec,
    seed: u64,
) -> Result<RenewalTable> {
    if grid.is_empty() || grid.iter().any(|&u| u < 0.0) || grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(LabError::param("grid", "must be sorted and nonnegative"));
    }
    let smp = dist.sampler();
    let band = band.unwrap_or(DEFAULT_BAND_SDS * dist.variance().sqrt());
    let u_max = *grid.last().unwrap();
    let sign = if side == Side::Minus { 1.0 } else { -1.0 };
    let stream = RngStream::named(seed, "walk/renewal", 0);
    let acc = exec.run_with_state(
        samples,
        || vec![0u64; grid.len()],
        |counts, i, acc: &mut GridAcc| {
            if acc.0.is_empty() {
                acc.0 = vec![Moments::default(); grid.len()];
            }
            let mut rng = stream.with_stream(i).rng();
            counts.iter_mut().for_each(|c| *c = 1);
            ladder_walk(&smp, sign, u_max, band, &mut rng, |depth| {
                let first = grid.partition_point(|&g| g < depth);
                for c in &mut counts[first..] {
                    *c += 1;
                }
            });
            for (m, &c) in acc.0.iter_mut().zip(counts.iter()) {
                m.push(c as f64);
            }
            Ok(())
        },
    )?;
    Ok(RenewalTable {
        grid: grid.to_vec(),
        values: acc.0.iter().map(|m| m.mean).collect(),
        stderr: acc.0.iter().map(|m| if m.variance() == 0.0 { 0.0 } else { m.stderr() }).collect(),
        error_bound: vec![0.0; grid.len()],
        side,
        method: "monte-carlo-ladder".into(),
        samples,
    })
}

/// Coupled estimate of `R^-(u) - E[R^-(S_1 + u) 1{S_1 >= -u}]`.
///
/// With `N(u)` the record count of a path and `N'` that of the path restarted
/// at time 1, `N(u) - N'(S_1 + u) 1{S_1 >= -u}` has exactly the required mean;
/// it equals `1` minus the number of post-time-1 records in `[0, S_1]`.
pub fn harmonicity_mc(dist: &StepDistribution, u: f64, samples: u64, exec: &Exec, seed: u64) -> Result<Estimate> {
    if u < 0.0 {
        return Err(LabError::param("u", "must be nonnegative"));
    }
    let smp = dist.sampler();
    let band = DEFAULT_BAND_SDS * dist.variance().sqrt();
    let stream = RngStream::named(seed, "walk/harmonicity", 0);
    let m: Moments = exec.run(samples, |i, acc: &mut Moments| {
        let mut rng = stream.with_stream(i).rng();
        let s1 = smp.sample(&mut rng);
        let mut value = 1.0;
        if s1 >= 0.0 {
            // Records of the restarted path that stay in [0, S_1].
            let (mut s, mut m) = (s1, s1);
            value -= 1.0; // S_1 itself is the first record of the restarted path.
            loop {
                s += smp.sample(&mut rng);
                if s < m {
                    m = s;
                    if m < 0.0 {
                        break;
                    }
                    value -= 1.0;
                } else if s > m + band {
                    s = m + band;
                }
            }
        }
        acc.push(value);
        Ok(())
    })?;
    Ok(Estimate::from_moments(&m, "monte-carlo-coupled-ladder", seed))
}

/// Monte Carlo `P(min_{j <= n} S_j >= -u)` for every `(u, n)` pair.
pub fn min_survival_mc(
    dist: &StepDistribution,
    u_grid: &[f64],
    n_grid: &[u64],
    samples: u64,
    exec: &Exec,
    seed: u64,
) -> Result<Vec<Vec<Estimate>>> {
    let smp = dist.sampler();
    let u_max = u_grid.iter().copied().fold(0.0, f64::max);
    let stream = RngStream::named(seed, "walk/min-survival", 0);
    let cells = u_grid.len() * n_grid.len();
    let acc = exec.run(samples, |i, acc: &mut GridAcc| {
        if acc.0.is_empty() {
            acc.0 = vec![Moments::default(); cells];
        }
        let mut rng = stream.with_stream(i).rng();
        let (mut s, mut m) = (0.0f64, 0.0f64);
        let mut hits = vec![0.0; cells];
        let mut j = 0u64;
        for (b, &n) in n_grid.iter().enumerate() {
            while j < n && -m <= u_max {
                s += smp.sample(&mut rng);
                m = m.min(s);
                j += 1;
            }
            for (a, &u) in u_grid.iter().enumerate() {
                if m >= -u && j >= n {
                    hits[a * n_grid.len() + b] = 1.0;
                }
            }
        }
        for (mm, h) in acc.0.iter_mut().zip(hits) {
            mm.push(h);
        }
        Ok(())
    })?;
    Ok(u_grid
        .iter()
        .enumerate()
        .map(|(a, _)| {
            (0..n_grid.len())
                .map(|b| Estimate::from_moments(&acc.0[a * n_grid.len() + b], "monte-carlo", seed))
                .collect()
        })
        .collect())
}

/// Monte Carlo `P(min_{j <= n} S_j >= -a, b - a <= S_n <= b - a + u)` per `n`.
pub fn ballot_mc(
    dist: &StepDistribution,
    a: f64,
    b: f64,
    u: f64,
    n_grid: &[u64],
    samples: u64,
    exec: &Exec,
    seed: u64,
) -> Result<Vec<Estimate>> {
    let smp = dist.sampler();
    let stream = RngStream::named(seed, "walk/ballot", 0);
    let acc = exec.run(samples, |i, acc: &mut GridAcc| {
        if acc.0.is_empty() {
            acc.0 = vec![Moments::default(); n_grid.len()];
        }
        let mut rng = stream.with_stream(i).rng();
        let (mut s, mut j) = (0.0f64, 0u64);
        let mut alive = true;
        for (k, &n) in n_grid.iter().enumerate() {
            while alive && j < n {
                s += smp.sample(&mut rng);
                j += 1;
                alive = s >= -a;
            }
            let hit = alive && s >= b - a && s <= b - a + u;
            acc.0[k].push(if hit { 1.0 } else { 0.0 });
        }
        Ok(())
    })?;
    Ok(acc.0.iter().map(|m| Estimate::from_moments(m, "monte-carlo", seed)).collect())
}

/// Monte Carlo `E_z[sum_{l <= L} e^{-a S_l} 1{min_{j <= l} S_j >= 0}]`.
pub fn green_sum_mc(
    dist: &StepDistribution,
    a_exp: f64,
    z: f64,
    samples: u64,
    length: u64,
    exec: &Exec,
    seed: u64,
) -> Result<Estimate> {
    if !(a_exp > 0.0) || z < 0.0 {
        return Err(LabError::param("a_exp", "need a_exp > 0 and z >= 0"));
    }
    let smp = dist.sampler();
    let stream = RngStream::named(seed, "walk/green", 0);
    let m: Moments = exec.run(samples, |i, acc: &mut Moments| {
        let mut rng = stream.with_stream(i).rng();
        let mut s = z;
        let mut total = (-a_exp * s).exp();
        for _ in 0..length {
            s += smp.sample(&mut rng);
            if s < 0.0 {
                break;
            }
            total += (-a_exp * s).exp();
        }
        acc.push(total);
        Ok(())
    })?;
    Ok(Estimate::from_moments(&m, "monte-carlo", seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn srw_descending_heights_are_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let l = ladder_sample(&StepDistribution::srw(), 500, &mut rng);
            for w in l.descending_heights.windows(2) {
                assert_eq!(w[1] - w[0], -1.0);
            }
            assert!(l.descending_epochs.windows(2).all(|w| w[0] < w[1]));
            assert!(l.ascending_heights.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn srw_renewal_is_exact() {
        let grid: Vec<f64> = (0..=20).map(f64::from).collect();
        let t = renewal_table_mc(&StepDistribution::srw(), &grid, Side::Minus, 200, None, &Exec::new(1), 3).unwrap();
        for (u, v) in grid.iter().zip(&t.values) {
            assert_eq!(*v, u + 1.0);
        }
    }

    #[test]
    fn table_interpolates() {
        let t = RenewalTable {
            grid: vec![0.0, 1.0, 2.0],
            values: vec![1.0, 2.0, 4.0],
            stderr: vec![0.0; 3],
            error_bound: vec![0.0; 3],
            side: Side::Minus,
            method: "t".into(),
            samples: 0,
        };
        assert_eq!(t.eval(0.5), 1.5);
        assert_eq!(t.eval(1.5), 3.0);
        assert_eq!(t.eval(9.0), 4.0);
        assert_eq!(t.eval(-1.0), 0.0);
    }
}
