use serde::{Deserialize, Serialize};

use super::exec::Merge;

pub const Z95: f64 = 1.959_963_984_540_054;

/// A Monte Carlo or exact result with its uncertainty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_effective: f64,
    pub n_samples: u64,
    pub method: String,
    pub seed: u64,
}

impl Estimate {
    pub fn new(value: f64, stderr: f64, n_samples: u64, method: impl Into<String>, seed: u64) -> Self {
        let stderr = if stderr.is_finite() { stderr.max(0.0) } else { f64::INFINITY };
        Estimate {
            value,
            stderr,
            ci_low: value - Z95 * stderr,
            ci_high: value + Z95 * stderr,
            n_effective: n_samples as f64,
            n_samples,
            method: method.into(),
            seed,
        }
    }

    /// A deterministic value with a rigorous error bound in place of a CI.
    pub fn exact(value: f64, error_bound: f64, method: impl Into<String>) -> Self {
        Estimate {
            value,
            stderr: 0.0,
            ci_low: value - error_bound,
            ci_high: value + error_bound,
            n_effective: 0.0,
            n_samples: 0,
            method: method.into(),
            seed: 0,
        }
    }

    pub fn with_n_effective(mut self, n_effective: f64) -> Self {
        self.n_effective = n_effective.min(self.n_samples as f64);
        self
    }

    pub fn from_moments(m: &Moments, method: impl Into<String>, seed: u64) -> Self {
        Estimate::new(m.mean, m.stderr(), m.n, method, seed)
    }

    pub fn scaled(&self, k: f64) -> Estimate {
        let mut e = Estimate::new(self.value * k, self.stderr * k.abs(), self.n_samples, self.method.clone(), self.seed);
        e.n_effective = self.n_effective;
        e
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }

    pub fn rel_stderr(&self) -> f64 {
        self.stderr / self.value.abs()
    }

    /// Number of combined standard errors separating two independent estimates.
    pub fn z_distance(&self, other: &Estimate) -> f64 {
        let d = (self.value - other.value).abs();
        let s = self.stderr.hypot(other.stderr);
        if d == 0.0 {
            0.0
        } else {
            d / s
        }
    }

    pub fn agrees_with(&self, other: &Estimate, k: f64) -> bool {
        self.z_distance(other) <= k
    }
}

/// Streaming mean and variance (Welford), mergeable with Chan's update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut m = Moments::default();
        for &x in xs {
            m.push(x);
        }
        m
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            f64::INFINITY
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

impl Merge for Moments {
    fn merge(&mut self, o: Self) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * self.n as f64 * o.n as f64 / n as f64;
        self.n = n;
    }
}

/// Raw first and second sums for sparse accumulation; the sample count is
/// tracked by the caller, so zero contributions cost nothing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sums {
    pub sum: f64,
    pub sumsq: f64,
}

impl Sums {
    #[inline]
    pub fn add(&mut self, x: f64) {
        self.sum += x;
        self.sumsq += x * x;
    }

    pub fn mean(&self, n: u64) -> f64 {
        self.sum / n as f64
    }

    pub fn stderr(&self, n: u64) -> f64 {
        if n < 2 {
            return f64::INFINITY;
        }
        let nf = n as f64;
        let m = self.sum / nf;
        let var = ((self.sumsq - nf * m * m) / (nf - 1.0)).max(0.0);
        (var / nf).sqrt()
    }

    pub fn estimate(&self, n: u64, method: impl Into<String>, seed: u64) -> Estimate {
        Estimate::new(self.mean(n), self.stderr(n), n, method, seed)
    }
}

impl Merge for Sums {
    fn merge(&mut self, o: Self) {
        self.sum += o.sum;
        self.sumsq += o.sumsq;
    }
}

/// Elementwise-merged vector of [`Sums`], one entry per grid point.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SumsVec(pub Vec<Sums>);

impl SumsVec {
    pub fn ensure(&mut self, n: usize) {
        if self.0.is_empty() {
            self.0 = vec![Sums::default(); n];
        }
    }
}

impl Merge for SumsVec {
    fn merge(&mut self, o: Self) {
        if self.0.is_empty() {
            *self = o;
        } else {
            for (a, b) in self.0.iter_mut().zip(o.0) {
                a.merge(b);
            }
        }
    }
}

/// Paired sums for a ratio of means `E[X]/E[Y]` with delta-method error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RatioSums {
    pub n: u64,
    pub sx: f64,
    pub sy: f64,
    pub sxx: f64,
    pub syy: f64,
    pub sxy: f64,
}

impl RatioSums {
    #[inline]
    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        self.sx += x;
        self.sy += y;
        self.sxx += x * x;
        self.syy += y * y;
        self.sxy += x * y;
    }

    pub fn ratio(&self) -> f64 {
        self.sx / self.sy
    }

    pub fn stderr(&self) -> f64 {
        let n = self.n as f64;
        if self.n < 2 || self.sy == 0.0 {
            return f64::INFINITY;
        }
        let r = self.ratio();
        let my = self.sy / n;
        // Sample variance of the linearized residual x - r y.
        let ss = self.sxx - 2.0 * r * self.sxy + r * r * self.syy;
        let var = (ss / (n - 1.0)).max(0.0);
        (var / n).sqrt() / my.abs()
    }

    pub fn estimate(&self, method: impl Into<String>, seed: u64) -> Estimate {
        Estimate::new(self.ratio(), self.stderr(), self.n, method, seed)
    }
}

impl Merge for RatioSums {
    fn merge(&mut self, o: Self) {
        self.n += o.n;
        self.sx += o.sx;
        self.sy += o.sy;
        self.sxx += o.sxx;
        self.syy += o.syy;
        self.sxy += o.sxy;
    }
}

/// Kish effective sample size of a set of weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}

pub fn weighted_mean(xs: &[f64], ws: &[f64]) -> f64 {
    let sw: f64 = ws.iter().sum();
    xs.iter().zip(ws).map(|(x, w)| x * w).sum::<f64>() / sw
}

pub fn weighted_correlation(xs: &[f64], ys: &[f64], ws: &[f64]) -> f64 {
    let mx = weighted_mean(xs, ws);
    let my = weighted_mean(ys, ws);
    let (mut cxy, mut cxx, mut cyy) = (0.0, 0.0, 0.0);
    for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
        cxy += w * (x - mx) * (y - my);
        cxx += w * (x - mx) * (x - mx);
        cyy += w * (y - my) * (y - my);
    }
    cxy / (cxx * cyy).sqrt()
}

/// Pool-adjacent-violators fit of a nonincreasing sequence with weights.
pub fn isotonic_nonincreasing(values: &[f64], weights: &[f64]) -> Vec<f64> {
    // Blocks of (weighted mean, total weight, length).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (v2, w2, l2) = blocks[blocks.len() - 1];
            let (v1, w1, l1) = blocks[blocks.len() - 2];
            if v1 >= v2 {
                break;
            }
            blocks.pop();
            let w = w1 + w2;
            *blocks.last_mut().unwrap() = ((v1 * w1 + v2 * w2) / w, w, l1 + l2);
        }
    }
    blocks.into_iter().flat_map(|(v, _, l)| std::iter::repeat(v).take(l)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn estimate_ci_brackets_value() {
        let e = Estimate::new(1.0, 0.1, 100, "t", 0);
        assert!(e.ci_low < 1.0 && e.ci_high > 1.0);
        assert!((e.half_width() - Z95 * 0.1).abs() < 1e-15);
    }

    #[test]
    fn ratio_of_constant_multiple() {
        let mut r = RatioSums::default();
        for i in 1..50 {
            r.push(3.0 * i as f64, i as f64);
        }
        assert!((r.ratio() - 3.0).abs() < 1e-14);
        assert!(r.stderr() < 1e-6);
    }

    #[test]
    fn isotonic_pools_violations() {
        let fit = isotonic_nonincreasing(&[3.0, 1.0, 2.0, 0.0], &[1.0; 4]);
        assert_eq!(fit, vec![3.0, 1.5, 1.5, 0.0]);
    }

    proptest! {
        #[test]
        fn merged_moments_match_sequential(xs in prop::collection::vec(-1e3f64..1e3, 2..200), cut in 0usize..200) {
            let cut = cut.min(xs.len());
            let mut a = Moments::from_slice(&xs[..cut]);
            a.merge(Moments::from_slice(&xs[cut..]));
            let b = Moments::from_slice(&xs);
            prop_assert_eq!(a.n, b.n);
            prop_assert!((a.mean - b.mean).abs() <= 1e-9 * (1.0 + b.mean.abs()));
            prop_assert!((a.m2 - b.m2).abs() <= 1e-7 * (1.0 + b.m2.abs()));
        }

        #[test]
        fn isotonic_output_is_nonincreasing(xs in prop::collection::vec(-10f64..10.0, 1..60)) {
            let fit = isotonic_nonincreasing(&xs, &vec![1.0; xs.len()]);
            prop_assert_eq!(fit.len(), xs.len());
            for w in fit.windows(2) {
                prop_assert!(w[0] >= w[1] - 1e-12);
            }
            let s1: f64 = xs.iter().sum();
            let s2: f64 = fit.iter().sum();
            prop_assert!((s1 - s2).abs() < 1e-9);
        }
    }
}
