//! Fluctuation theory of the spine walk and of standalone lattice walks:
//! ladder records, the renewal functions `R^-`, `R^+`, `R~`, `K` and
//! `theta0`, with exact lattice backends and Monte Carlo for any step law.

mod ladder;
mod mc;
mod pathdp;

pub use ladder::LatticeLadder;
pub use mc::{
    ballot_mc, green_sum_mc, harmonicity_mc, ladder_sample, min_survival_mc, renewal_table_mc, LadderSample,
    RenewalTable, Side, DEFAULT_BAND_SDS,
};
pub use pathdp::{
    green_table, killed_distribution, lattice_dp_oracle, tilde_r_row, DpConfig, DpQuantity, DpValue, GreenTable,
    HalfLine, Occupation,
};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::harness::{Estimate, Exec};
use crate::models::StepDistribution;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum RenewalMethod {
    /// Ladder laws from the Wiener-Hopf roots, then the renewal recursion.
    ExactLatticeDp,
    /// Time-indexed path DP with extrapolation; independent of the ladder laws.
    PathDp,
    MonteCarloLadder { samples: u64, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenewalValue {
    pub value: f64,
    pub error_bound: f64,
    pub stderr: f64,
}

fn renewal(dist: &StepDistribution, u: f64, side: Side, method: RenewalMethod) -> Result<RenewalValue> {
    if !(u >= 0.0) {
        return Err(LabError::param("u", "must be nonnegative"));
    }
    match method {
        RenewalMethod::ExactLatticeDp => {
            let mut l = LatticeLadder::new(dist)?;
            let value = if side == Side::Minus { l.r_minus(u) } else { l.r_plus(u) };
            Ok(RenewalValue {
                value,
                error_bound: 1e-12 * value,
                stderr: 0.0,
            })
        }
        RenewalMethod::PathDp => {
            let k = u.floor() as i64;
            let q = if side == Side::Minus { DpQuantity::RMinus { u: k } } else { DpQuantity::RPlus { u: k } };
            let v = lattice_dp_oracle(dist, q, &DpConfig::default(), 1e-6)?;
            Ok(RenewalValue {
                value: v.value,
                error_bound: v.error_bound,
                stderr: 0.0,
            })
        }
        RenewalMethod::MonteCarloLadder { samples, seed } => {
            let t = renewal_table_mc(dist, &[u], side, samples, None, &Exec::new(1), seed)?;
            Ok(RenewalValue {
                value: t.values[0],
                error_bound: 0.0,
                stderr: t.stderr[0],
            })
        }
    }
}

pub fn renewal_minus(dist: &StepDistribution, u: f64, method: RenewalMethod) -> Result<RenewalValue> {
    renewal(dist, u, Side::Minus, method)
}

pub fn renewal_plus(dist: &StepDistribution, u: f64, method: RenewalMethod) -> Result<RenewalValue> {
    renewal(dist, u, Side::Plus, method)
}

/// Exact renewal table for a lattice walk.
pub fn renewal_table_exact(dist: &StepDistribution, grid: &[f64], side: Side) -> Result<RenewalTable> {
    let mut l = LatticeLadder::new(dist)?;
    let values: Vec<f64> = grid
        .iter()
        .map(|&u| if side == Side::Minus { l.r_minus(u) } else { l.r_plus(u) })
        .collect();
    Ok(RenewalTable {
        grid: grid.to_vec(),
        error_bound: values.iter().map(|v| 1e-12 * v).collect(),
        stderr: vec![0.0; grid.len()],
        values,
        side,
        method: "exact-lattice-dp".into(),
        samples: 0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum HarmonicityMode {
    Exact,
    MonteCarlo { samples: u64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicityResidual {
    pub u: f64,
    pub residual: f64,
    pub stderr: f64,
    pub residual_plus: f64,
    pub stderr_plus: f64,
    pub method: String,
}

/// Residuals of `R^-(u) = E[R^-(S_1 + u) 1{S_1 >= -u}]` and its ascending twin.
pub fn check_harmonicity(dist: &StepDistribution, u: f64, mode: HarmonicityMode, exec: &Exec) -> Result<HarmonicityResidual> {
    match mode {
        HarmonicityMode::Exact => {
            let mut l = LatticeLadder::new(dist)?;
            let StepDistribution::Lattice { support, probs } = dist else { unreachable!() };
            let mut rm = l.r_minus(u);
            let mut rp = l.r_plus(u);
            for (&s, &q) in support.iter().zip(probs) {
                let s = s as f64;
                if u + s >= 0.0 {
                    rm -= q * l.r_minus(u + s);
                }
                if u - s >= 0.0 {
                    rp -= q * l.r_plus(u - s);
                }
            }
            Ok(HarmonicityResidual {
                u,
                residual: rm,
                stderr: 0.0,
                residual_plus: rp,
                stderr_plus: 0.0,
                method: "exact-lattice-dp".into(),
            })
        }
        HarmonicityMode::MonteCarlo { samples, seed } => {
            let minus = harmonicity_mc(dist, u, samples, exec, seed)?;
            let mirrored = mirror(dist);
            let plus = harmonicity_mc(&mirrored, u, samples, exec, seed.wrapping_add(1))?;
            Ok(HarmonicityResidual {
                u,
                residual: minus.value,
                stderr: minus.stderr,
                residual_plus: plus.value,
                stderr_plus: plus.stderr,
                method: minus.method,
            })
        }
    }
}

/// The law of `-X`.
pub fn mirror(dist: &StepDistribution) -> StepDistribution {
    match dist {
        StepDistribution::ContinuousGaussian { mean, variance } => StepDistribution::ContinuousGaussian {
            mean: -mean,
            variance: *variance,
        },
        StepDistribution::Lattice { support, probs } => StepDistribution::Lattice {
            support: support.iter().rev().map(|s| -s).collect(),
            probs: probs.iter().rev().copied().collect(),
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenewalIdentityReport {
    pub x: i64,
    pub a: i64,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub bound: f64,
}

/// Compares `R~(x, a)` from the path DP with the ladder-based closed form.
pub fn check_renewal_identity(dist: &StepDistribution, x: i64, a: i64) -> Result<RenewalIdentityReport> {
    let mut l = LatticeLadder::new(dist)?;
    let rhs = l.tilde_r_formula(x, a)?;
    let lhs = lattice_dp_oracle(dist, DpQuantity::TildeR { x, a }, &DpConfig::default(), 1e-6)?;
    Ok(RenewalIdentityReport {
        x,
        a,
        lhs: lhs.value,
        rhs,
        residual: (lhs.value - rhs).abs(),
        bound: lhs.error_bound + 1e-12 * rhs.abs(),
    })
}

/// The same comparison over a grid; one DP per `a`.
pub fn renewal_identity_grid(dist: &StepDistribution, x_grid: &[i64], a_grid: &[i64]) -> Result<Vec<RenewalIdentityReport>> {
    let mut l = LatticeLadder::new(dist)?;
    let x_max = x_grid.iter().copied().max().unwrap_or(0);
    let mut out = Vec::new();
    for &a in a_grid {
        // Reject a = 0 before spending time on the DP.
        l.tilde_r_formula(0, a)?;
        let row = tilde_r_row(dist, a, x_max, &DpConfig::default())?;
        for &x in x_grid {
            let rhs = l.tilde_r_formula(x, a)?;
            let lhs = row[x as usize];
            out.push(RenewalIdentityReport {
                x,
                a,
                lhs: lhs.value,
                rhs,
                residual: (lhs.value - rhs).abs(),
                bound: lhs.error_bound + 1e-12 * rhs.abs(),
            });
        }
    }
    Ok(out)
}

/// `(R~(x+b, a) - R~(x, a)) / ((1+a)(1+b)^2)` from the closed form (exact for
/// lattice walks once the identity is verified).
pub fn check_tilde_increment_bound(dist: &StepDistribution, x: i64, a: i64, b: i64) -> Result<f64> {
    if x < 0 || a < 0 || b < 0 {
        return Err(LabError::param("x", "x, a, b must be nonnegative"));
    }
    if b == 0 {
        return Ok(0.0);
    }
    let tilde = |x: i64| -> Result<f64> {
        if a == 0 {
            Ok(LatticeLadder::new(dist)?.r_minus(x as f64))
        } else {
            LatticeLadder::new(dist)?.tilde_r_formula(x, a)
        }
    };
    let inc = tilde(x + b)? - tilde(x)?;
    Ok(inc / ((1.0 + a as f64) * (1.0 + b as f64).powi(2)))
}

/// Same ratio with `R~` from the path DP (independent of the closed form).
pub fn tilde_increment_dp(dist: &StepDistribution, a: i64, x_max: i64, b_grid: &[i64]) -> Result<Vec<(i64, i64, f64)>> {
    let b_max = b_grid.iter().copied().max().unwrap_or(0);
    let row = tilde_r_row(dist, a, x_max + b_max, &DpConfig::default())?;
    let mut out = Vec::new();
    for x in 0..=x_max {
        for &b in b_grid {
            let inc = row[(x + b) as usize].value - row[x as usize].value;
            out.push((x, b, inc / ((1.0 + a as f64) * (1.0 + b as f64).powi(2))));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KozlovTable {
    pub u_grid: Vec<f64>,
    pub n_grid: Vec<u64>,
    /// `cells[i][j] = sqrt(n_j) P(min_{k <= n_j} S_k >= -u_i)`.
    pub cells: Vec<Vec<Estimate>>,
    pub theta_minus: f64,
    /// Relative residual of each cell against `theta_minus R^-(u)`.
    pub residuals: Vec<Vec<f64>>,
}

/// Monte Carlo table of `sqrt(n) P(min S >= -u)` with a least-squares fit of
/// the largest-`n` column against `theta R^-(u)`.
pub fn kozlov_check<F: Fn(f64) -> f64>(
    dist: &StepDistribution,
    u_grid: &[f64],
    n_grid: &[u64],
    samples: u64,
    renewal_minus: F,
    exec: &Exec,
    seed: u64,
) -> Result<KozlovTable> {
    let raw = min_survival_mc(dist, u_grid, n_grid, samples, exec, seed)?;
    let cells: Vec<Vec<Estimate>> = raw
        .iter()
        .map(|row| row.iter().zip(n_grid).map(|(e, &n)| e.scaled((n as f64).sqrt())).collect())
        .collect();
    let last = n_grid.len() - 1;
    let r: Vec<f64> = u_grid.iter().map(|&u| renewal_minus(u)).collect();
    let num: f64 = cells.iter().zip(&r).map(|(row, r)| row[last].value * r).sum();
    let den: f64 = r.iter().map(|r| r * r).sum();
    let theta_minus = num / den;
    let residuals = cells
        .iter()
        .zip(&r)
        .map(|(row, r)| row.iter().map(|e| e.value / (theta_minus * r) - 1.0).collect())
        .collect();
    Ok(KozlovTable {
        u_grid: u_grid.to_vec(),
        n_grid: n_grid.to_vec(),
        cells,
        theta_minus,
        residuals,
    })
}

/// Exact `P(min_{k <= n} S_k >= -u)` for a lattice walk.
pub fn min_survival_exact(dist: &StepDistribution, u: f64, n: usize) -> Result<f64> {
    let bound = (-u).ceil() as i64;
    Ok(killed_distribution(dist, 0, HalfLine::AtLeast(bound), n)?.total())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BallotReport {
    pub n_grid: Vec<u64>,
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
}

fn ballot_norm(n: u64, a: f64, b: f64, u: f64) -> f64 {
    (n as f64).powf(1.5) / ((u + 1.0) * (a + 1.0) * (b + u + 1.0))
}

/// `n^{3/2} P(min S >= -a, b - a <= S_n <= b - a + u) / ((u+1)(a+1)(b+u+1))` per `n`.
pub fn ballot_bound_check(
    dist: &StepDistribution,
    a: f64,
    b: f64,
    u: f64,
    n_grid: &[u64],
    samples: u64,
    exec: &Exec,
    seed: u64,
) -> Result<BallotReport> {
    if !(u > 0.0) || a < 0.0 || b < 0.0 {
        return Err(LabError::param("u", "need u > 0 and a, b >= 0"));
    }
    let est = ballot_mc(dist, a, b, u, n_grid, samples, exec, seed)?;
    let ratios: Vec<f64> = est.iter().zip(n_grid).map(|(e, &n)| e.value * ballot_norm(n, a, b, u)).collect();
    Ok(BallotReport {
        n_grid: n_grid.to_vec(),
        max_ratio: ratios.iter().copied().fold(0.0, f64::max),
        ratios,
    })
}

/// Exact ballot ratio for a lattice walk at a single `n`.
pub fn ballot_ratio_exact(dist: &StepDistribution, a: i64, b: i64, u: i64, n: usize) -> Result<f64> {
    let occ = killed_distribution(dist, 0, HalfLine::AtLeast(-a), n)?;
    let p: f64 = (b - a..=b - a + u).map(|s| occ.at(s)).sum();
    Ok(p * ballot_norm(n as u64, a as f64, b as f64, u as f64))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GreenSum {
    pub estimate: Estimate,
    /// Change between path lengths `L/2` and `L`.
    pub tail_increment: f64,
}

/// Exact truncated Green sum for a lattice walk started at integer `z >= 0`.
pub fn green_sum_exact(dist: &StepDistribution, a_exp: f64, z: i64, length: usize) -> Result<GreenSum> {
    if !(a_exp > 0.0) || z < 0 {
        return Err(LabError::param("a_exp", "need a_exp > 0 and z >= 0"));
    }
    let steps = pathdp::lattice_steps(dist)?;
    let mut occ = Occupation::point(z);
    let mut buf = Vec::new();
    let weigh = |o: &Occupation| -> f64 {
        o.mass.iter().enumerate().map(|(i, m)| m * (-a_exp * (o.lo + i as i64) as f64).exp()).sum()
    };
    let mut total = weigh(&occ);
    let mut half = total;
    for l in 1..=length {
        occ = pathdp::advance(&occ, &steps, HalfLine::AtLeast(0), &mut buf);
        total += weigh(&occ);
        if l == length / 2 {
            half = total;
        }
    }
    Ok(GreenSum {
        estimate: Estimate::exact(total, occ.trimmed, "exact-lattice-dp"),
        tail_increment: total - half,
    })
}

/// Monte Carlo truncated Green sum for any step law.
pub fn green_sum(
    dist: &StepDistribution,
    a_exp: f64,
    z: f64,
    samples: u64,
    length: u64,
    exec: &Exec,
    seed: u64,
) -> Result<GreenSum> {
    let full = green_sum_mc(dist, a_exp, z, samples, length, exec, seed)?;
    let half = green_sum_mc(dist, a_exp, z, samples, length / 2, exec, seed)?;
    Ok(GreenSum {
        tail_increment: full.value - half.value,
        estimate: full,
    })
}
