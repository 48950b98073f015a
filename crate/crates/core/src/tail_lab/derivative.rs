use serde::{Deserialize, Serialize};

use super::minimum::{estimate_cm, resolve_closure, CmReport};
use super::{conditional_run_for, reversed_config, stage_seed, TailCurve};
use crate::brw_sim::simulate_line;
use crate::error::Result;
use crate::harness::{
    effective_sample_size, ks_two_sample_weighted, Estimate, Exec, ExperimentConfig, KsReport, RatioSums, RngStream, Sums,
    SumsVec,
};
use crate::spine_sim::{derivative_draws, derivative_tail, DerivativeTail};

/// Plateau drift tolerated on `y P(D >= y)`.
pub const CD_DRIFT_TOLERANCE: f64 = 0.15;
/// Window of `ln X` for the logarithmic growth of `int_0^X P(D >= u) du`.
pub const REMARK_WINDOW: (f64, f64) = (3.0, 6.0);
pub const REMARK_TOLERANCE: f64 = 0.15;

/// Two runs of the same estimator at a resolution and at half of it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sensitivity {
    pub resolution: f64,
    pub half_resolution: f64,
    pub level: Estimate,
    pub level_half: Estimate,
    /// Combined standard errors between the two levels.
    pub z: f64,
    pub flagged: bool,
}

impl Sensitivity {
    fn new(resolution: f64, level: Estimate, level_half: Estimate) -> Self {
        let z = level.z_distance(&level_half);
        Sensitivity {
            resolution,
            half_resolution: 0.5 * resolution,
            level,
            level_half,
            z,
            flagged: z > 3.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RemarkCheck {
    pub log_x: Vec<f64>,
    /// `int_0^X P(D >= u) du / ln X`.
    pub ratio: Vec<Estimate>,
    /// `(max - min) / mean` of the ratio over the window.
    pub spread: f64,
    pub pass: bool,
}

/// `y P(D_L >= y)` from plain trees frozen at the line `L` and at `L / 2`,
/// with `D_L` the min-shifted derivative mass on the line.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LineDiagnostic {
    pub log_y: Vec<f64>,
    pub scaled_tail: Vec<Estimate>,
    pub scaled_tail_half: Vec<Estimate>,
    pub sensitivity: Sensitivity,
    pub samples: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CdReport {
    /// `y P(D >= y)` on `analysis.log_y_grid` (the grid holds `ln y`), with
    /// `D = e^{-M} frak_D` drawn from the reversed sampler.
    pub curve: TailCurve,
    pub truncated_mean: Vec<Estimate>,
    /// Freeze level `run.freeze_level` against half of it.
    pub sensitivity: Sensitivity,
    pub remark: RemarkCheck,
    /// Freeze-line estimator, reported for comparison only.
    pub line: LineDiagnostic,
    pub closure: f64,
    pub pass: bool,
}

fn tail_at(cfg: &ExperimentConfig, exec: &Exec, closure: f64, freeze: f64, stage: &str) -> Result<DerivativeTail> {
    let spec = cfg.spec()?;
    let ly = &cfg.analysis.log_y_grid;
    let rc = reversed_config(cfg, ly.last().copied().unwrap().max(0.0), freeze);
    derivative_tail(&spec, ly, closure, &rc, cfg.run.samples, exec, stage_seed(cfg.seed, stage))
}

fn remark_check(ly: &[f64], truncated_mean: &[Estimate]) -> RemarkCheck {
    let (lo, hi) = REMARK_WINDOW;
    let mut log_x = Vec::new();
    let mut ratio = Vec::new();
    for (l, m) in ly.iter().zip(truncated_mean) {
        if *l >= lo && *l <= hi {
            log_x.push(*l);
            ratio.push(m.scaled(1.0 / l));
        }
    }
    let v: Vec<f64> = ratio.iter().map(|e| e.value).collect();
    let spread = if v.is_empty() {
        f64::INFINITY
    } else {
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        (max - min) / (v.iter().sum::<f64>() / v.len() as f64)
    };
    RemarkCheck {
        log_x,
        ratio,
        spread,
        pass: spread <= REMARK_TOLERANCE,
    }
}

/// Freeze-line estimate of `y P(D >= y)` at `run.line_level` and half of it.
pub fn line_diagnostic(cfg: &ExperimentConfig, exec: &Exec) -> Result<LineDiagnostic> {
    let spec = cfg.spec()?;
    let ly = &cfg.analysis.log_y_grid;
    let ny = ly.len();
    let n = cfg.run.aux_samples;
    let cap = cfg.run.population_cap;
    let run = |level: f64, stage: &str| -> Result<Vec<Estimate>> {
        let seed = stage_seed(cfg.seed, stage);
        let stream = RngStream::named(seed, "tail_lab/line-tail", 0);
        let SumsVec(sums) = exec.run_with_state(n, Vec::new, |stack, i, acc: &mut SumsVec| {
            acc.ensure(ny + 1);
            let mut rng = stream.with_stream(i).rng();
            let d = simulate_line(&spec, level, cap, stack, &mut rng)?.d_shifted();
            let mut top = 0.0;
            for (j, l) in ly.iter().enumerate() {
                if d > 0.0 && d.ln() >= *l {
                    let v = l.exp();
                    acc.0[j].add(v);
                    if j >= ny / 2 {
                        top += v;
                    }
                }
            }
            acc.0[ny].add(top / (ny - ny / 2) as f64);
            Ok(())
        })?;
        let sums = if sums.is_empty() { vec![Sums::default(); ny + 1] } else { sums };
        Ok(sums.iter().map(|s| s.estimate(n, "freeze-line", seed)).collect())
    };
    let level = cfg.run.line_level;
    let mut full = run(level, "cdinf/line")?;
    let mut half = run(0.5 * level, "cdinf/line-half")?;
    let (p, ph) = (full.pop().unwrap(), half.pop().unwrap());
    Ok(LineDiagnostic {
        log_y: ly.clone(),
        scaled_tail: full,
        scaled_tail_half: half,
        sensitivity: Sensitivity::new(level, p, ph),
        samples: n,
    })
}

pub(crate) fn cdinf_with(cfg: &ExperimentConfig, exec: &Exec, closure: f64) -> Result<CdReport> {
    let ly = cfg.analysis.log_y_grid.clone();
    let freeze = cfg.run.freeze_level;
    let t = tail_at(cfg, exec, closure, freeze, "cdinf/tail")?;
    let th = tail_at(cfg, exec, closure, 0.5 * freeze, "cdinf/tail-half")?;
    let raw: Vec<Estimate> = ly.iter().zip(&t.scaled_tail).map(|(l, e)| e.scaled((-l).exp())).collect();
    let curve = TailCurve::new(ly.clone(), raw, t.scaled_tail.clone(), t.plateau.clone(), CD_DRIFT_TOLERANCE)?;
    let sensitivity = Sensitivity::new(freeze, t.plateau.clone(), th.plateau.clone());
    let remark = remark_check(&ly, &t.truncated_mean);
    let line = line_diagnostic(cfg, exec)?;
    let pass = curve.flags.is_empty() && !sensitivity.flagged && remark.pass;
    Ok(CdReport {
        curve,
        truncated_mean: t.truncated_mean,
        sensitivity,
        remark,
        line,
        closure,
        pass,
    })
}

/// Tail constant of the derivative martingale limit on `analysis.log_y_grid`.
pub fn estimate_cdinf(cfg: &ExperimentConfig, exec: &Exec) -> Result<CdReport> {
    let closure = resolve_closure(cfg, exec)?;
    cdinf_with(cfg, exec, closure)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProductCheck {
    pub c_m_scale: f64,
    pub product: Estimate,
    pub difference: f64,
    /// Three times the combined 95% half-width.
    pub bound: f64,
    pub holds: bool,
}

fn product_check(c_m: &Estimate, e_frak: &Estimate, c_d: &Estimate, scale: f64) -> ProductCheck {
    let (a, b) = (c_m.value * scale, e_frak.value);
    let sa = c_m.stderr * scale;
    let se = (b * sa).hypot(a * e_frak.stderr);
    let product = Estimate::new(a * b, se, e_frak.n_samples, "product", e_frak.seed);
    let difference = (c_d.value - product.value).abs();
    let bound = 3.0 * c_d.half_width().hypot(product.half_width());
    ProductCheck {
        c_m_scale: scale,
        product,
        difference,
        bound,
        holds: difference <= bound,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FactorizationReport {
    pub c_m: Estimate,
    /// `E[frak_D | M < -x]` at the gate level.
    pub e_frak_d: Estimate,
    /// Same with the brothers beyond `analysis.truncation_t` dropped.
    pub e_frak_d_truncated: Estimate,
    pub gate_x: f64,
    pub c_dinf: Estimate,
    pub check: ProductCheck,
    /// The same check with `c_M` multiplied by 1.5; must fail.
    pub control: ProductCheck,
    pub upstream_flags: Vec<String>,
    pub pass: bool,
    pub cm: CmReport,
    pub cd: CdReport,
}

pub const CONTROL_SCALE: f64 = 1.5;

pub fn factorization_from_parts(
    c_m: &Estimate,
    e_frak: &Estimate,
    c_d: &Estimate,
) -> (ProductCheck, ProductCheck) {
    (product_check(c_m, e_frak, c_d, 1.0), product_check(c_m, e_frak, c_d, CONTROL_SCALE))
}

/// `c_D = c_M E[frak_D]` from three independent estimates.
pub fn factorization_check(cfg: &ExperimentConfig, exec: &Exec) -> Result<FactorizationReport> {
    let cm = estimate_cm(cfg, exec)?;
    let closure = cm.closure;
    let gate_x = cfg.analysis.gate_x;
    let run = conditional_run_for(cfg, exec, closure, &[gate_x])?;
    let level = &run.levels[0];
    let e_frak_d = level.mean_frak_d.clone();
    let ti = cfg.analysis.t_grid.iter().position(|&t| t == cfg.analysis.truncation_t);
    let e_frak_d_truncated = ti.map_or_else(|| e_frak_d.clone(), |j| level.mean_truncated[j].clone());
    let cd = cdinf_with(cfg, exec, closure)?;
    let c_m = cm.curve.level.clone();
    let c_dinf = cd.curve.level.clone();
    let (check, control) = factorization_from_parts(&c_m, &e_frak_d, &c_dinf);
    let mut upstream_flags: Vec<String> = cm.curve.flags.iter().map(|f| format!("cM: {f}")).collect();
    upstream_flags.extend(cd.curve.flags.iter().map(|f| format!("cDinf: {f}")));
    if cd.sensitivity.flagged {
        upstream_flags.push(format!("cDinf: freeze sensitivity z = {:.2}", cd.sensitivity.z));
    }
    let pass = check.holds && !control.holds && upstream_flags.is_empty();
    Ok(FactorizationReport {
        c_m,
        e_frak_d,
        e_frak_d_truncated,
        gate_x,
        c_dinf,
        check,
        control,
        upstream_flags,
        pass,
        cm,
        cd,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmoothingReport {
    pub freeze: f64,
    pub samples: u64,
    /// Draws of `D` against `sum_{|z|=1} e^{-V(z)} D^{(z)}` with independent
    /// draws for the subtrees; both sides weighted.
    pub ks: KsReport,
    /// The same with every subtree replaced by 0.
    pub control_ks: KsReport,
    /// `E[ln(1 + D)]` on each side; `D` itself has no mean.
    pub log_mean_direct: Estimate,
    pub log_mean_composed: Estimate,
    pub means_agree: bool,
    pub pass: bool,
}

/// Weighted sample: values and weights.
pub type WeightedSample = (Vec<f64>, Vec<f64>);

fn log_mean(v: &[f64], w: &[f64], seed: u64, method: &str) -> Estimate {
    let mut r = RatioSums::default();
    for (x, w) in v.iter().zip(w) {
        r.push(w * x.ln_1p(), *w);
    }
    r.estimate(method, seed).with_n_effective(effective_sample_size(w))
}

/// Two-sample test of the fixed point `D = sum_{|z|=1} e^{-V(z)} D^{(z)}`.
pub fn smoothing_fixed_point_test(cfg: &ExperimentConfig, exec: &Exec) -> Result<(SmoothingReport, WeightedSample, WeightedSample)> {
    let spec = cfg.spec()?;
    let closure = resolve_closure(cfg, exec)?;
    let freeze = cfg.run.smoothing_freeze;
    let rc = reversed_config(cfg, 0.0, freeze);
    let n = cfg.run.aux_samples;
    let seed = stage_seed(cfg.seed, "smoothing");
    let draws = |stage: &str| derivative_draws(&spec, closure, &rc, n, exec, stage_seed(seed, stage));
    let a = draws("direct")?;
    let (b1, b2) = (draws("left")?, draws("right")?);
    let stream = RngStream::named(seed, "tail_lab/smoothing-offspring", 0);
    let (mut bv, mut bw) = (Vec::with_capacity(n as usize), Vec::with_capacity(n as usize));
    for i in 0..n as usize {
        let mut rng = stream.with_stream(i as u64).rng();
        match spec.branch(&mut rng) {
            Some([v1, v2]) => {
                bv.push((-v1).exp() * b1[i].0 + (-v2).exp() * b2[i].0);
                bw.push(b1[i].1 * b2[i].1);
            }
            None => {
                bv.push(0.0);
                bw.push(1.0);
            }
        }
    }
    let (av, aw): (Vec<f64>, Vec<f64>) = a.into_iter().unzip();
    let ks = ks_two_sample_weighted(&av, &aw, &bv, &bw)?;
    let zeros = vec![0.0; bv.len()];
    let control_ks = ks_two_sample_weighted(&av, &aw, &zeros, &vec![1.0; zeros.len()])?;
    let log_mean_direct = log_mean(&av, &aw, seed, "smoothing-direct");
    let log_mean_composed = log_mean(&bv, &bw, seed, "smoothing-composed");
    let means_agree = log_mean_direct.agrees_with(&log_mean_composed, 3.0);
    let alpha = cfg.analysis.alpha;
    let pass = ks.p_value > alpha && control_ks.p_value <= alpha && means_agree;
    Ok((
        SmoothingReport {
            freeze,
            samples: n,
            ks,
            control_ks,
            log_mean_direct,
            log_mean_composed,
            means_agree,
            pass,
        },
        (av, aw),
        (bv, bw),
    ))
}
