//! Kolmogorov-Smirnov tests, including weighted samples via the Kish
//! effective sample size.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::stats::effective_sample_size;
use crate::error::{LabError, Result};

pub const MIN_EFFECTIVE: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "law")]
pub enum Reference {
    Exponential { rate: f64 },
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Reference {
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Reference::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            Reference::Normal { mean, sd } => 0.5 * erfc(-(x - mean) / (sd * std::f64::consts::SQRT_2)),
            Reference::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: f64,
}

/// Asymptotic Kolmogorov tail `P(K > lambda)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-transformed series, fast for small lambda.
        let y = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut s = 0.0;
        for k in 0..20 {
            let j = (2 * k + 1) as f64;
            s += (j * j * y).exp();
        }
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let mut s = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            s += if k % 2 == 1 { term } else { -term };
            if term < 1e-300 {
                break;
            }
        }
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// p-value for statistic `d` at effective size `n`, with Stephens' finite-n
/// correction.
pub fn ks_p_value(d: f64, n: f64) -> f64 {
    let sn = n.sqrt();
    kolmogorov_q((sn + 0.12 + 0.11 / sn) * d)
}

fn sorted_pairs(xs: &[f64], ws: &[f64]) -> Result<Vec<(f64, f64)>> {
    if xs.len() != ws.len() {
        return Err(LabError::param("weights", "length differs from samples"));
    }
    if xs.iter().any(|x| x.is_nan()) || ws.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(LabError::param("samples", "NaN sample or invalid weight"));
    }
    let mut v: Vec<(f64, f64)> = xs.iter().copied().zip(ws.iter().copied()).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(v)
}

fn check_size(n: f64) -> Result<()> {
    if n < MIN_EFFECTIVE {
        return Err(LabError::InsufficientSamples(format!(
            "{n:.1} effective samples, need at least {MIN_EFFECTIVE}"
        )));
    }
    Ok(())
}

pub fn ks_one_sample(samples: &[f64], reference: Reference) -> Result<KsReport> {
    ks_weighted(samples, &vec![1.0; samples.len()], reference)
}

/// One-sample test of a weighted empirical law against `reference`.
pub fn ks_weighted(samples: &[f64], weights: &[f64], reference: Reference) -> Result<KsReport> {
    let pairs = sorted_pairs(samples, weights)?;
    let n_eff = effective_sample_size(weights);
    check_size(n_eff)?;
    let total: f64 = weights.iter().sum();
    let mut d: f64 = 0.0;
    let mut acc = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let x = pairs[i].0;
        let f = reference.cdf(x);
        let below = acc / total;
        while i < pairs.len() && pairs[i].0 == x {
            acc += pairs[i].1;
            i += 1;
        }
        let at = acc / total;
        d = d.max((f - below).abs()).max((at - f).abs());
    }
    Ok(KsReport {
        statistic: d,
        p_value: ks_p_value(d, n_eff),
        n_effective: n_eff,
    })
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsReport> {
    ks_two_sample_weighted(a, &vec![1.0; a.len()], b, &vec![1.0; b.len()])
}

pub fn ks_two_sample_weighted(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64]) -> Result<KsReport> {
    let pa = sorted_pairs(a, wa)?;
    let pb = sorted_pairs(b, wb)?;
    let (na, nb) = (effective_sample_size(wa), effective_sample_size(wb));
    check_size(na)?;
    check_size(nb)?;
    let (ta, tb): (f64, f64) = (wa.iter().sum(), wb.iter().sum());
    let (mut i, mut j) = (0, 0);
    let (mut ca, mut cb) = (0.0, 0.0);
    let mut d: f64 = 0.0;
    while i < pa.len() || j < pb.len() {
        let x = match (pa.get(i), pb.get(j)) {
            (Some(u), Some(v)) => u.0.min(v.0),
            (Some(u), None) => u.0,
            (None, Some(v)) => v.0,
            (None, None) => unreachable!(),
        };
        while i < pa.len() && pa[i].0 == x {
            ca += pa[i].1;
            i += 1;
        }
        while j < pb.len() && pb[j].0 == x {
            cb += pb[j].1;
            j += 1;
        }
        d = d.max((ca / ta - cb / tb).abs());
    }
    let n = na * nb / (na + nb);
    Ok(KsReport {
        statistic: d,
        p_value: ks_p_value(d, n),
        n_effective: n,
    })
}
