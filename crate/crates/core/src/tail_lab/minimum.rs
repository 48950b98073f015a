use serde::{Deserialize, Serialize};

use super::{flatness_p_value, reversed_config, stage_seed, top_percent_share, TailCurve};
use crate::brw_sim::simulate_line;
use crate::error::{LabError, Result};
use crate::harness::{
    ks_weighted, plateau_fit_window, weighted_correlation, Estimate, Exec, ExperimentConfig, KsReport, Merge, PlateauFit,
    RatioSums, Reference, RngStream,
};
use crate::spine_sim::{calibration_levels, conditional_run, direct_min_tail, min_tail_curve, ConditionalRun};

/// Two estimates of the same quantity by different methods.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossCheck {
    pub x: f64,
    pub reference: Estimate,
    pub sampled: Estimate,
    pub z: f64,
    pub agree: bool,
}

impl CrossCheck {
    fn new(x: f64, reference: Estimate, sampled: Estimate) -> Self {
        let z = reference.z_distance(&sampled);
        CrossCheck {
            x,
            reference,
            sampled,
            z,
            agree: z <= 3.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CmReport {
    /// `e^x P(M < -x)`.
    pub curve: TailCurve,
    /// Constant fits on `[6, 9]` and `[9, 12]` when the grid covers them.
    pub windows: Vec<PlateauFit>,
    /// Relative difference of the two window levels.
    pub window_drift: Option<f64>,
    /// Every transformed value at `x >= 1` lies in `(0, 1 + 3 stderr]`.
    pub bracket_ok: bool,
    /// Direct simulation against the reversed sampler at `x <= 3`.
    pub direct: Vec<CrossCheck>,
    pub closure: f64,
    pub closure_self_consistent: bool,
    pub total_mass: Estimate,
    pub kmax_hits: u64,
    pub pass: bool,
}

/// `e^x P(M < -x)` on `analysis.x_grid` and its plateau.
pub fn estimate_cm(cfg: &ExperimentConfig, exec: &Exec) -> Result<CmReport> {
    let spec = cfg.spec()?;
    let xs = &cfg.analysis.x_grid;
    let x_max = *xs.last().unwrap();
    if x_max > 12.0 {
        return Err(LabError::param("x_grid", "largest level must be at most 12"));
    }
    let rc = reversed_config(cfg, x_max, cfg.run.ceiling);
    let c = min_tail_curve(&spec, xs, &rc, cfg.analysis.closure, cfg.run.samples, exec, cfg.seed)?;
    let raw: Vec<Estimate> = xs.iter().zip(&c.values).map(|(x, v)| v.scaled((-x).exp())).collect();
    let curve = TailCurve::new(xs.clone(), raw, c.values.clone(), c.plateau.clone(), cfg.analysis.drift_tolerance)?;

    let v: Vec<f64> = c.values.iter().map(|e| e.value).collect();
    let s: Vec<f64> = c.values.iter().map(|e| e.stderr.max(1e-300)).collect();
    let windows: Vec<PlateauFit> = [(6.0, 9.0), (9.0, 12.0)]
        .iter()
        .filter_map(|&(lo, hi)| plateau_fit_window(xs, &v, &s, lo, hi, cfg.analysis.drift_tolerance).ok())
        .collect();
    let window_drift = (windows.len() == 2).then(|| (windows[1].level - windows[0].level).abs() / windows[0].level);

    let bracket_ok = xs
        .iter()
        .zip(&c.values)
        .filter(|(&x, _)| x >= 1.0)
        .all(|(_, e)| e.value > 0.0 && e.value <= 1.0 + 3.0 * e.stderr);

    let low: Vec<f64> = xs.iter().copied().filter(|&x| x > 0.0 && x <= 3.0).collect();
    let mut direct = Vec::new();
    if !low.is_empty() {
        // Killed particles at relative height >= ceiling + 2 are closed with the same constant.
        let d = direct_min_tail(
            &spec,
            &low,
            cfg.run.ceiling + 2.0,
            c.closure,
            cfg.run.aux_samples,
            exec,
            stage_seed(cfg.seed, "cm/direct"),
        )?;
        for (x, e) in low.iter().zip(d) {
            let i = xs.iter().position(|y| y == x).unwrap();
            direct.push(CrossCheck::new(*x, e, c.values[i].clone()));
        }
    }
    let pass = bracket_ok
        && curve.flags.is_empty()
        && direct.iter().all(|d| d.agree)
        && window_drift.map_or(true, |d| d <= cfg.analysis.drift_tolerance);
    Ok(CmReport {
        curve,
        windows,
        window_drift,
        bracket_ok,
        direct,
        closure: c.closure,
        closure_self_consistent: c.closure_self_consistent,
        total_mass: c.total_mass,
        kmax_hits: c.kmax_hits,
        pass,
    })
}

/// The closure constant: fixed in the config, or solved on the calibration
/// levels with the reversed sampler.
pub(crate) fn resolve_closure(cfg: &ExperimentConfig, exec: &Exec) -> Result<f64> {
    if let Some(c) = cfg.analysis.closure {
        return Ok(c);
    }
    let spec = cfg.spec()?;
    let cal = calibration_levels(cfg.run.ceiling);
    let rc = reversed_config(cfg, *cal.last().unwrap(), cfg.run.ceiling);
    let curve = min_tail_curve(&spec, &[], &rc, None, cfg.run.samples.min(200_000), exec, stage_seed(cfg.seed, "closure"))?;
    Ok(curve.closure)
}

/// Conditional run at freeze `run.freeze_level` on the levels `xs`.
pub fn conditional_run_for(cfg: &ExperimentConfig, exec: &Exec, closure: f64, xs: &[f64]) -> Result<ConditionalRun> {
    let spec = cfg.spec()?;
    let x_max = xs.iter().copied().fold(0.0, f64::max);
    let rc = reversed_config(cfg, x_max, cfg.run.freeze_level);
    conditional_run(
        &spec,
        xs,
        &cfg.analysis.t_grid,
        cfg.analysis.epsilon,
        closure,
        &rc,
        cfg.run.samples,
        exec,
        stage_seed(cfg.seed, "conditional"),
    )
}

/// Weighted draws from the law of `(frak_D, M + x)` given `M < -x`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionalSample {
    pub x: f64,
    /// `M + x`, nonpositive.
    pub overshoots: Vec<f64>,
    pub frak_ds: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ConditionalSample {
    pub fn from_run(run: &ConditionalRun, x: f64) -> Option<Self> {
        let l = run.levels.iter().find(|l| l.x == x)?;
        Some(ConditionalSample {
            x,
            overshoots: l.draws.iter().map(|d| -d.overshoot).collect(),
            frak_ds: l.draws.iter().map(|d| d.frak_d).collect(),
            weights: l.draws.iter().map(|d| d.weight).collect(),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OvershootLevel {
    pub x: f64,
    /// Weighted KS of `-(M + x)` against Exp(1).
    pub ks: KsReport,
    /// Weighted correlation of `-(M + x)` with `ln(1 + frak_D)`.
    pub correlation: f64,
    /// `E[M + x | M < -x]`; -1 in the limit.
    pub mean_overshoot: Estimate,
    pub effective_samples: f64,
    pub ess_warning: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OvershootReport {
    pub levels: Vec<OvershootLevel>,
    pub gate_x: f64,
    pub closure: f64,
    pub warnings: Vec<String>,
    pub pass: bool,
}

pub const MIN_GATE_ESS: f64 = 1e4;
pub const MAX_ABS_CORRELATION: f64 = 0.05;

pub fn overshoot_report(run: &ConditionalRun, gate_x: f64, alpha: f64) -> Result<OvershootReport> {
    let mut levels = Vec::new();
    let mut warnings = Vec::new();
    for l in &run.levels {
        let o: Vec<f64> = l.draws.iter().map(|d| d.overshoot).collect();
        let f: Vec<f64> = l.draws.iter().map(|d| d.frak_d.ln_1p()).collect();
        let w: Vec<f64> = l.draws.iter().map(|d| d.weight).collect();
        let ks = ks_weighted(&o, &w, Reference::Exponential { rate: 1.0 })?;
        let ess_warning = l.effective_samples < run.samples as f64 / 10.0;
        if ess_warning {
            warnings.push(format!(
                "x = {}: effective sample size {:.0} below N/10 = {}",
                l.x,
                l.effective_samples,
                run.samples / 10
            ));
        }
        levels.push(OvershootLevel {
            x: l.x,
            ks,
            correlation: weighted_correlation(&o, &f, &w),
            mean_overshoot: l.mean_overshoot.scaled(-1.0),
            effective_samples: l.effective_samples,
            ess_warning,
        });
    }
    let pass = match levels.iter().find(|l| l.x == gate_x) {
        Some(g) => g.ks.p_value > alpha && g.effective_samples >= MIN_GATE_ESS && g.correlation.abs() < MAX_ABS_CORRELATION,
        None => false,
    };
    Ok(OvershootReport {
        levels,
        gate_x,
        closure: run.closure,
        warnings,
        pass,
    })
}

fn with_gate(xs: &[f64], gate: f64) -> Vec<f64> {
    let mut v = xs.to_vec();
    if !v.contains(&gate) {
        v.push(gate);
    }
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Overshoot law and its independence from `frak_D` on `analysis.conditional_x`.
pub fn conditional_min_law(cfg: &ExperimentConfig, exec: &Exec) -> Result<(ConditionalRun, OvershootReport)> {
    let closure = resolve_closure(cfg, exec)?;
    let xs = with_gate(&cfg.analysis.conditional_x, cfg.analysis.gate_x);
    if xs.iter().any(|&x| x < 4.0) {
        return Err(LabError::param("conditional_x", "overshoot levels must be at least 4"));
    }
    let run = conditional_run_for(cfg, exec, closure, &xs)?;
    let report = overshoot_report(&run, cfg.analysis.gate_x, cfg.analysis.alpha)?;
    Ok((run, report))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntegrabilityLevel {
    pub x: f64,
    /// `E[frak_D ln^2(1 + frak_D) | M < -x]`.
    pub moment: Estimate,
    pub mean: Estimate,
    /// Share of the moment carried by the top 1% of draws.
    pub top_share: f64,
    pub heavy_tail_warning: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntegrabilityReport {
    pub levels: Vec<IntegrabilityLevel>,
    pub moment_flatness_p: f64,
    pub mean_flatness_p: f64,
    /// Plain trees frozen at the absolute line `run.freeze_level` against the
    /// sampler at `x = 0`. Reported, not gated: subtrees of frozen particles
    /// can still carry the minimum, which the plain trees miss.
    pub direct_zero: Option<CrossCheck>,
    pub warnings: Vec<String>,
    pub pass: bool,
}

#[derive(Default)]
struct DirectAcc {
    moment: RatioSums,
}

impl Merge for DirectAcc {
    fn merge(&mut self, o: Self) {
        self.moment.merge(o.moment);
    }
}

/// `E[frak_D ln^2(1 + frak_D) | M < 0]` from plain trees frozen at the line
/// `level`, with `frak_D = sum (V - M) e^{-(V - M)}`.
fn direct_integrability(cfg: &ExperimentConfig, exec: &Exec, level: f64) -> Result<Estimate> {
    let spec = cfg.spec()?;
    let seed = stage_seed(cfg.seed, "integrability/direct");
    let stream = RngStream::named(seed, "tail_lab/direct-frak-d", 0);
    let cap = cfg.run.population_cap;
    let acc: DirectAcc = exec.run_with_state(cfg.run.aux_samples, Vec::new, |stack, i, acc: &mut DirectAcc| {
        let mut rng = stream.with_stream(i).rng();
        let s = simulate_line(&spec, level, cap, stack, &mut rng)?;
        if s.min < 0.0 {
            let d = s.min.exp() * s.d_shifted();
            let l = d.ln_1p();
            acc.moment.push(d * l * l, 1.0);
        } else {
            acc.moment.push(0.0, 0.0);
        }
        Ok(())
    })?;
    Ok(acc.moment.estimate("direct-line", seed))
}

/// Uniform integrability profile of `frak_D` over `analysis.conditional_x`.
pub fn integrability_profile(cfg: &ExperimentConfig, exec: &Exec) -> Result<(ConditionalRun, IntegrabilityReport)> {
    let closure = resolve_closure(cfg, exec)?;
    let mut xs = cfg.analysis.conditional_x.clone();
    xs.insert(0, 0.0);
    let run = conditional_run_for(cfg, exec, closure, &xs)?;
    let mut levels = Vec::new();
    let mut warnings = Vec::new();
    for l in &run.levels {
        let contrib: Vec<f64> = l
            .draws
            .iter()
            .map(|d| {
                let g = d.frak_d.ln_1p();
                d.weight * d.frak_d * g * g
            })
            .collect();
        let top_share = top_percent_share(&contrib);
        let heavy = top_share > 0.5;
        if heavy {
            warnings.push(format!("x = {}: top 1% of draws carry {:.0}% of the moment", l.x, 100.0 * top_share));
        }
        levels.push(IntegrabilityLevel {
            x: l.x,
            moment: l.integrability.clone(),
            mean: l.mean_frak_d.clone(),
            top_share,
            heavy_tail_warning: heavy,
        });
    }
    let positive: Vec<&IntegrabilityLevel> = levels.iter().filter(|l| l.x > 0.0).collect();
    let moment_flatness_p = flatness_p_value(&positive.iter().map(|l| l.moment.clone()).collect::<Vec<_>>());
    let mean_flatness_p = flatness_p_value(&positive.iter().map(|l| l.mean.clone()).collect::<Vec<_>>());
    let direct = direct_integrability(cfg, exec, cfg.run.freeze_level)?;
    let direct_zero = Some(CrossCheck::new(0.0, direct, levels[0].moment.clone()));
    let alpha = cfg.analysis.alpha;
    let pass = moment_flatness_p > alpha && mean_flatness_p > alpha;
    Ok((
        run,
        IntegrabilityReport {
            levels,
            moment_flatness_p,
            mean_flatness_p,
            direct_zero,
            warnings,
            pass,
        },
    ))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruncationReport {
    pub t_grid: Vec<u32>,
    pub x_grid: Vec<f64>,
    pub epsilon: f64,
    /// `table[i][j] = P(frak_D - frak_D^{>= t_j} >= epsilon | M < -x_i)`.
    pub table: Vec<Vec<Estimate>>,
    /// Supremum over `x` per `t`.
    pub sup_over_x: Vec<f64>,
    /// `E[frak_D^{>= t} | M < -x]` at `analysis.truncation_t`, per `x`.
    pub mean_truncated: Vec<Estimate>,
    pub mean_full: Vec<Estimate>,
    pub nonincreasing: bool,
    /// Supremum at the larger of the two comparison depths is smaller.
    pub sup_decreasing: bool,
    pub compared_t: (u32, u32),
    pub pass: bool,
}

pub fn truncation_report(run: &ConditionalRun, truncation_t: u32) -> TruncationReport {
    let table: Vec<Vec<Estimate>> = run.levels.iter().map(|l| l.truncation.clone()).collect();
    let nt = run.t_grid.len();
    let sup_over_x: Vec<f64> = (0..nt)
        .map(|j| table.iter().map(|r| r[j].value).fold(0.0, f64::max))
        .collect();
    let nonincreasing = table.iter().all(|r| r.windows(2).all(|w| w[1].value <= w[0].value + 1e-12));
    let pick = |t: u32| run.t_grid.iter().position(|&s| s == t);
    let (a, b) = match (pick(5), pick(20)) {
        (Some(a), Some(b)) => (a, b),
        _ => (0, nt.saturating_sub(1)),
    };
    let sup_decreasing = nt >= 2 && sup_over_x[b] < sup_over_x[a];
    let ti = pick(truncation_t);
    let mean_truncated = run
        .levels
        .iter()
        .map(|l| ti.map_or_else(|| l.mean_frak_d.clone(), |j| l.mean_truncated[j].clone()))
        .collect();
    TruncationReport {
        t_grid: run.t_grid.clone(),
        x_grid: run.levels.iter().map(|l| l.x).collect(),
        epsilon: run.epsilon,
        table,
        sup_over_x,
        mean_truncated,
        mean_full: run.levels.iter().map(|l| l.mean_frak_d.clone()).collect(),
        nonincreasing,
        sup_decreasing,
        compared_t: (run.t_grid.get(a).copied().unwrap_or(0), run.t_grid.get(b).copied().unwrap_or(0)),
        pass: nonincreasing && sup_decreasing,
    }
}

/// Convergence of the truncated mass `frak_D^{>= t}` on `analysis.t_grid`.
pub fn truncation_profile(cfg: &ExperimentConfig, exec: &Exec) -> Result<(ConditionalRun, TruncationReport)> {
    let closure = resolve_closure(cfg, exec)?;
    let run = conditional_run_for(cfg, exec, closure, &cfg.analysis.conditional_x)?;
    let report = truncation_report(&run, cfg.analysis.truncation_t);
    Ok((run, report))
}
