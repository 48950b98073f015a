//! Theorem-level experiments: the tail constants of the global minimum and of
//! the derivative martingale limit, the overshoot law, the factorization of
//! the constants, the smoothing fixed point and the integrability and
//! truncation profiles of `frak_D`.
//!
//! Every experiment takes an [`ExperimentConfig`] and returns a report with a
//! `pass` flag and the warnings raised on the way.

mod derivative;
mod minimum;

pub use derivative::{
    estimate_cdinf, factorization_check, factorization_from_parts, line_diagnostic, smoothing_fixed_point_test, CdReport,
    FactorizationReport, LineDiagnostic, ProductCheck, RemarkCheck, Sensitivity, SmoothingReport, WeightedSample,
};
pub use minimum::{
    conditional_min_law, conditional_run_for, estimate_cm, integrability_profile, overshoot_report,
    truncation_profile, truncation_report, CmReport, ConditionalSample, CrossCheck, IntegrabilityLevel, IntegrabilityReport,
    OvershootLevel, OvershootReport, TruncationReport,
};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::Result;
use crate::harness::{plateau_fit, Estimate, ExperimentConfig, PlateauFit};
use crate::spine_sim::ReversedConfig;

/// A transformed tail curve with its plateau.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TailCurve {
    pub x_grid: Vec<f64>,
    /// Raw tail probabilities.
    pub raw: Vec<Estimate>,
    /// `e^x P` or `x P`.
    pub transformed: Vec<Estimate>,
    /// Weighted constant fit over the top half of the grid.
    pub plateau: PlateauFit,
    /// Plateau level as a per-sample average over the same window, so its
    /// standard error accounts for the correlation between grid points.
    pub level: Estimate,
    pub monotone: bool,
    pub flags: Vec<String>,
}

impl TailCurve {
    pub(crate) fn new(x_grid: Vec<f64>, raw: Vec<Estimate>, transformed: Vec<Estimate>, level: Estimate, tolerance: f64) -> Result<Self> {
        let v: Vec<f64> = transformed.iter().map(|e| e.value).collect();
        let s: Vec<f64> = transformed.iter().map(|e| e.stderr.max(1e-300)).collect();
        let mut plateau = plateau_fit(&x_grid, &v, &s)?;
        plateau.flagged = plateau.relative_drift.abs() > tolerance;
        let monotone = nonincreasing_within_noise(&raw);
        let mut flags = Vec::new();
        if plateau.flagged {
            flags.push(format!(
                "non-plateau: relative drift {:.3} over [{}, {}]",
                plateau.relative_drift, plateau.window.0, plateau.window.1
            ));
        }
        if !monotone {
            flags.push("raw tail increases beyond 3 stderr".into());
        }
        if transformed.iter().any(|e| !(e.value > 0.0)) {
            flags.push("nonpositive transformed value".into());
        }
        Ok(TailCurve {
            x_grid,
            raw,
            transformed,
            plateau,
            level,
            monotone,
            flags,
        })
    }
}

fn nonincreasing_within_noise(raw: &[Estimate]) -> bool {
    raw.windows(2).all(|w| w[1].value <= w[0].value + 3.0 * w[0].stderr.hypot(w[1].stderr))
}

/// Chi-square p-value of a constant fit to independent estimates.
pub fn flatness_p_value(points: &[Estimate]) -> f64 {
    if points.len() < 2 {
        return 1.0;
    }
    let w: Vec<f64> = points.iter().map(|e| 1.0 / (e.stderr * e.stderr).max(1e-300)).collect();
    let sw: f64 = w.iter().sum();
    let m = points.iter().zip(&w).map(|(e, w)| e.value * w).sum::<f64>() / sw;
    let chi2: f64 = points.iter().zip(&w).map(|(e, w)| (e.value - m).powi(2) * w).sum();
    let dof = (points.len() - 1) as f64;
    1.0 - ChiSquared::new(dof).map(|d| d.cdf(chi2)).unwrap_or(0.0)
}

/// Share of a weighted moment carried by the largest 1% of contributions.
pub fn top_percent_share(contributions: &[f64]) -> f64 {
    let total: f64 = contributions.iter().sum();
    if !(total > 0.0) {
        return 0.0;
    }
    let mut c = contributions.to_vec();
    c.sort_by(|a, b| b.total_cmp(a));
    let k = (c.len() as f64 * 0.01).ceil() as usize;
    c[..k.min(c.len())].iter().sum::<f64>() / total
}

/// Reversed-sampler settings for levels up to `x_max` at freeze `freeze`.
pub(crate) fn reversed_config(cfg: &ExperimentConfig, x_max: f64, freeze: f64) -> ReversedConfig {
    ReversedConfig {
        freeze,
        top: x_max + ReversedConfig::TAIL_SPAN + cfg.run.reinjection_margin,
        k_max: cfg.run.kmax as usize,
        cap: cfg.run.population_cap,
    }
}

/// Seed of an auxiliary stage; keeps stages of one experiment independent.
pub(crate) fn stage_seed(seed: u64, stage: &str) -> u64 {
    use rand::RngCore;
    crate::harness::RngStream::named(seed, stage, 0).rng().next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: f64, s: f64) -> Estimate {
        Estimate::new(v, s, 100, "t", 0)
    }

    #[test]
    fn flat_points_have_large_p() {
        let p = flatness_p_value(&[e(1.0, 0.1), e(1.05, 0.1), e(0.97, 0.1), e(1.02, 0.1)]);
        assert!(p > 0.5, "{p}");
        let p = flatness_p_value(&[e(1.0, 0.01), e(1.2, 0.01), e(1.4, 0.01)]);
        assert!(p < 1e-6, "{p}");
    }

    #[test]
    fn top_share_of_one_spike() {
        let mut c = vec![1.0; 99];
        c.push(1000.0);
        assert!(top_percent_share(&c) > 0.9);
        assert!((top_percent_share(&[1.0; 200]) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn monotonicity_allows_noise() {
        assert!(nonincreasing_within_noise(&[e(1.0, 0.1), e(1.1, 0.1), e(0.5, 0.1)]));
        assert!(!nonincreasing_within_noise(&[e(1.0, 0.01), e(1.5, 0.01)]));
    }
}
