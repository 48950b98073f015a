use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const DEFAULT_DRIFT_TOLERANCE: f64 = 0.10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauFit {
    pub level: f64,
    pub level_stderr: f64,
    pub slope: f64,
    pub slope_stderr: f64,
    /// Fitted slope times the window width.
    pub drift: f64,
    pub relative_drift: f64,
    pub window: (f64, f64),
    pub n_points: usize,
    pub chi2_per_dof: f64,
    pub flagged: bool,
}

/// Weighted constant fit over the top half of the grid.
pub fn plateau_fit(xs: &[f64], values: &[f64], stderrs: &[f64]) -> Result<PlateauFit> {
    if xs.len() < 4 || values.len() != xs.len() || stderrs.len() != xs.len() {
        return Err(LabError::param("curve", format!("plateau fit needs at least 4 points, got {}", xs.len())));
    }
    let start = xs.len() / 2;
    fit_points(&xs[start..], &values[start..], &stderrs[start..], DEFAULT_DRIFT_TOLERANCE)
}

/// Constant fit over the points with `lo <= x <= hi`.
pub fn plateau_fit_window(xs: &[f64], values: &[f64], stderrs: &[f64], lo: f64, hi: f64, tolerance: f64) -> Result<PlateauFit> {
    let idx: Vec<usize> = (0..xs.len()).filter(|&i| xs[i] >= lo && xs[i] <= hi).collect();
    if idx.len() < 2 {
        return Err(LabError::param("window", format!("fewer than 2 points in [{lo}, {hi}]")));
    }
    let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
    fit_points(&pick(xs), &pick(values), &pick(stderrs), tolerance)
}

fn fit_points(xs: &[f64], ys: &[f64], se: &[f64], tolerance: f64) -> Result<PlateauFit> {
    let n = xs.len();
    let use_se = se.iter().all(|&s| s > 0.0 && s.is_finite());
    let w: Vec<f64> = if use_se { se.iter().map(|s| 1.0 / (s * s)).collect() } else { vec![1.0; n] };
    let sw: f64 = w.iter().sum();
    let level = w.iter().zip(ys).map(|(w, y)| w * y).sum::<f64>() / sw;
    let xbar = w.iter().zip(xs).map(|(w, x)| w * x).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(xs).map(|(w, x)| w * (x - xbar).powi(2)).sum();
    let sxy: f64 = w.iter().zip(xs).zip(ys).map(|((w, x), y)| w * (x - xbar) * (y - level)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let chi2: f64 = w.iter().zip(ys).map(|(w, y)| w * (y - level).powi(2)).sum();
    let dof = (n.saturating_sub(1)).max(1) as f64;
    let (level_stderr, slope_stderr) = if use_se {
        (1.0 / sw.sqrt(), 1.0 / sxx.sqrt())
    } else {
        let s2 = chi2 / dof;
        ((s2 / n as f64).sqrt(), (s2 / sxx).sqrt())
    };
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let drift = slope * (hi - lo);
    let relative_drift = if level != 0.0 { (drift / level).abs() } else if drift == 0.0 { 0.0 } else { f64::INFINITY };
    Ok(PlateauFit {
        level,
        level_stderr,
        slope,
        slope_stderr,
        drift,
        relative_drift,
        window: (lo, hi),
        n_points: n,
        chi2_per_dof: chi2 / dof,
        flagged: relative_drift > tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_curve_has_no_drift() {
        let xs: Vec<f64> = (1..=8).map(f64::from).collect();
        let f = plateau_fit(&xs, &[0.4; 8], &[0.01; 8]).unwrap();
        assert_eq!(f.drift, 0.0);
        assert!((f.level - 0.4).abs() < 1e-15);
        assert!(!f.flagged);
    }

    #[test]
    fn one_over_x_fixture_is_stable() {
        let xs: Vec<f64> = (6..=12).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 + 1.0 / x).collect();
        let f = plateau_fit(&xs, &ys, &[0.01; 7]).unwrap();
        assert!(f.relative_drift < 0.10, "{f:?}");
        let g = plateau_fit_window(&xs, &ys, &[0.01; 7], 6.0, 12.0, 0.1).unwrap();
        assert!(g.relative_drift < 0.10, "{g:?}");
    }

    #[test]
    fn linear_curve_is_flagged() {
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        let f = plateau_fit(&xs, &xs, &[0.1; 10]).unwrap();
        assert!(f.flagged);
        assert!((f.slope - 1.0).abs() < 1e-12);
    }

    #[test]
    fn short_curve_rejected() {
        assert!(plateau_fit(&[1.0, 2.0, 3.0], &[1.0; 3], &[0.1; 3]).is_err());
    }
}
