//! Dispatch of a configured experiment and emission of its outputs.
//!
//! Every run writes `summary.json`, one or more CSV tables and a plot-data
//! file into the output directory. Nothing time- or host-dependent goes into
//! the files, so a `(config, seed)` pair determines every byte.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::output::{write_csv, write_json, write_plot_data};
use super::{Estimate, Exec, ExperimentConfig, ExperimentKind};
use crate::error::{LabError, Result};
use crate::spine_sim::{estimate_min_tail, MinTailEstimate};
use crate::tail_lab::{
    conditional_min_law, estimate_cdinf, estimate_cm, factorization_check, integrability_profile, smoothing_fixed_point_test,
    truncation_profile, CdReport, CmReport, ConditionalSample, IntegrabilityReport, TruncationReport,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Gate {
    fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Gate {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub pass: bool,
    pub gates: Vec<Gate>,
    /// Files written next to the summary, relative to the output directory.
    pub files: Vec<String>,
    pub report: serde_json::Value,
}

#[derive(Serialize)]
struct CurveRow {
    x: f64,
    raw: f64,
    raw_stderr: f64,
    transformed: f64,
    transformed_stderr: f64,
}

struct Outputs {
    dir: Option<PathBuf>,
    files: Vec<String>,
}

impl Outputs {
    fn path(&mut self, name: &str) -> Option<PathBuf> {
        let dir = self.dir.as_ref()?;
        self.files.push(name.to_string());
        Some(dir.join(name))
    }

    fn csv<S: Serialize>(&mut self, name: &str, rows: &[S]) -> Result<()> {
        match self.path(name) {
            Some(p) => write_csv(&p, rows),
            None => Ok(()),
        }
    }

    fn plot(&mut self, name: &str, title: &str, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        match self.path(name) {
            Some(p) => write_plot_data(&p, title, columns, rows),
            None => Ok(()),
        }
    }

    /// `curve.csv` and `curve.dat` for a transformed tail curve.
    fn curve(&mut self, prefix: &str, title: &str, xs: &[f64], raw: &[Estimate], tr: &[Estimate]) -> Result<()> {
        let rows: Vec<CurveRow> = xs
            .iter()
            .zip(raw.iter().zip(tr))
            .map(|(&x, (r, t))| CurveRow {
                x,
                raw: r.value,
                raw_stderr: r.stderr,
                transformed: t.value,
                transformed_stderr: t.stderr,
            })
            .collect();
        self.csv(&format!("{prefix}.csv"), &rows)?;
        let plot: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.x, r.transformed]).collect();
        self.plot(&format!("{prefix}.dat"), title, &["x", "value"], &plot)
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

fn cm_outputs(r: &CmReport, tolerance: f64, out: &mut Outputs, gates: &mut Vec<Gate>) -> Result<()> {
    let c = &r.curve;
    out.curve("cm_curve", "e^x P(M < -x)", &c.x_grid, &c.raw, &c.transformed)?;
    gates.push(Gate::new("cM/bracket", r.bracket_ok, "e^x P in (0, 1 + 3 stderr]"));
    gates.push(Gate::new(
        "cM/plateau",
        c.flags.is_empty(),
        format!("relative drift {:.4}; {}", c.plateau.relative_drift, c.flags.join("; ")),
    ));
    let worst = r.direct.iter().map(|d| d.z).fold(0.0, f64::max);
    gates.push(Gate::new(
        "cM/direct",
        r.direct.iter().all(|d| d.agree),
        format!("largest z against direct trees {worst:.2}"),
    ));
    if let Some(d) = r.window_drift {
        gates.push(Gate::new("cM/windows", d <= tolerance, format!("window drift {d:.4}")));
    }
    Ok(())
}

fn cd_outputs(r: &CdReport, out: &mut Outputs, gates: &mut Vec<Gate>) -> Result<()> {
    let c = &r.curve;
    out.curve("cd_curve", "y P(D >= y) against ln y", &c.x_grid, &c.raw, &c.transformed)?;
    #[derive(Serialize)]
    struct LineRow {
        log_y: f64,
        truncated_mean: f64,
        truncated_mean_stderr: f64,
        line_scaled_tail: f64,
        line_scaled_tail_stderr: f64,
        line_half_scaled_tail: f64,
    }
    let rows: Vec<LineRow> = c
        .x_grid
        .iter()
        .enumerate()
        .map(|(i, &l)| LineRow {
            log_y: l,
            truncated_mean: r.truncated_mean[i].value,
            truncated_mean_stderr: r.truncated_mean[i].stderr,
            line_scaled_tail: r.line.scaled_tail[i].value,
            line_scaled_tail_stderr: r.line.scaled_tail[i].stderr,
            line_half_scaled_tail: r.line.scaled_tail_half[i].value,
        })
        .collect();
    out.csv("cd_auxiliary.csv", &rows)?;
    gates.push(Gate::new(
        "cDinf/plateau",
        c.flags.is_empty(),
        format!("relative drift {:.4}; {}", c.plateau.relative_drift, c.flags.join("; ")),
    ));
    gates.push(Gate::new(
        "cDinf/sensitivity",
        !r.sensitivity.flagged,
        format!("freeze {} vs {}: z = {:.2}", r.sensitivity.resolution, r.sensitivity.half_resolution, r.sensitivity.z),
    ));
    gates.push(Gate::new("cDinf/log-growth", r.remark.pass, format!("spread {:.4}", r.remark.spread)));
    Ok(())
}

fn integrability_outputs(r: &IntegrabilityReport, out: &mut Outputs, gates: &mut Vec<Gate>) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        x: f64,
        moment: f64,
        moment_stderr: f64,
        mean: f64,
        mean_stderr: f64,
        top_share: f64,
    }
    let rows: Vec<Row> = r
        .levels
        .iter()
        .map(|l| Row {
            x: l.x,
            moment: l.moment.value,
            moment_stderr: l.moment.stderr,
            mean: l.mean.value,
            mean_stderr: l.mean.stderr,
            top_share: l.top_share,
        })
        .collect();
    out.csv("integrability.csv", &rows)?;
    let plot: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.x, r.moment]).collect();
    out.plot("integrability.dat", "E[frak_D ln^2(1 + frak_D) | M < -x]", &["x", "moment"], &plot)?;
    gates.push(Gate::new(
        "integrability/flat",
        r.pass,
        format!("flatness p = {:.4} (moment), {:.4} (mean)", r.moment_flatness_p, r.mean_flatness_p),
    ));
    Ok(())
}

fn truncation_outputs(r: &TruncationReport, out: &mut Outputs, gates: &mut Vec<Gate>) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        x: f64,
        t: u32,
        p: f64,
        stderr: f64,
    }
    let mut rows = Vec::new();
    for (xi, &x) in r.x_grid.iter().enumerate() {
        for (ti, &t) in r.t_grid.iter().enumerate() {
            let e = &r.table[xi][ti];
            rows.push(Row {
                x,
                t,
                p: e.value,
                stderr: e.stderr,
            });
        }
    }
    out.csv("truncation.csv", &rows)?;
    let plot: Vec<Vec<f64>> = r.t_grid.iter().zip(&r.sup_over_x).map(|(&t, &s)| vec![t as f64, s]).collect();
    out.plot("truncation.dat", "sup over x of P(frak_D - frak_D^t > eps | M < -x)", &["t", "sup"], &plot)?;
    gates.push(Gate::new("truncation/nonincreasing", r.nonincreasing, "every row nonincreasing in t within noise"));
    gates.push(Gate::new(
        "truncation/sup",
        r.sup_decreasing,
        format!("sup at t = {} vs t = {}", r.compared_t.0, r.compared_t.1),
    ));
    Ok(())
}

fn min_tail_outputs(r: &MinTailEstimate, out: &mut Outputs, gates: &mut Vec<Gate>) -> Result<()> {
    out.csv("intervals.csv", &r.intervals)?;
    let plot: Vec<Vec<f64>> = r.intervals.iter().map(|i| vec![i.hi, i.p_hat]).collect();
    out.plot("intervals.dat", "P(M in [-x-j-1, -x-j))", &["upper", "p_hat"], &plot)?;
    let ok = r.exm_phat > 0.0 && r.exm_phat <= 1.0 + 3.0 * r.exm_stderr;
    gates.push(Gate::new("min-tail/bracket", ok, format!("e^x P = {:.5} +- {:.5}", r.exm_phat, r.exm_stderr)));
    Ok(())
}

/// Runs the experiment named in `cfg.experiment`. Outputs go to `out` when
/// given; the returned summary is the content of `summary.json`.
pub fn run_experiment(cfg: &ExperimentConfig, exec: &Exec, out: Option<&Path>) -> Result<Summary> {
    cfg.validate()?;
    let kind = cfg.experiment.ok_or_else(|| LabError::Config {
        path: "experiment".into(),
        reason: "no experiment selected".into(),
    })?;
    let mut o = Outputs {
        dir: out.map(Path::to_path_buf),
        files: Vec::new(),
    };
    let mut gates = Vec::new();
    let report = match kind {
        ExperimentKind::CM => {
            let r = estimate_cm(cfg, exec)?;
            cm_outputs(&r, cfg.analysis.drift_tolerance, &mut o, &mut gates)?;
            to_value(&r)?
        }
        ExperimentKind::CDinf => {
            let r = estimate_cdinf(cfg, exec)?;
            cd_outputs(&r, &mut o, &mut gates)?;
            to_value(&r)?
        }
        ExperimentKind::Overshoot => {
            let (run, r) = conditional_min_law(cfg, exec)?;
            #[derive(Serialize)]
            struct Row {
                x: f64,
                ks_statistic: f64,
                ks_p_value: f64,
                correlation: f64,
                mean_overshoot: f64,
                mean_overshoot_stderr: f64,
                effective_samples: f64,
            }
            let rows: Vec<Row> = r
                .levels
                .iter()
                .map(|l| Row {
                    x: l.x,
                    ks_statistic: l.ks.statistic,
                    ks_p_value: l.ks.p_value,
                    correlation: l.correlation,
                    mean_overshoot: l.mean_overshoot.value,
                    mean_overshoot_stderr: l.mean_overshoot.stderr,
                    effective_samples: l.effective_samples,
                })
                .collect();
            o.csv("overshoot.csv", &rows)?;
            // Weighted histogram of -(M + x) at the gate level against e^{-u}.
            if let Some(s) = ConditionalSample::from_run(&run, r.gate_x) {
                let width = 0.25;
                let mut h = vec![0.0; 32];
                let total: f64 = s.weights.iter().sum();
                for (v, w) in s.overshoots.iter().zip(&s.weights) {
                    let u = -v;
                    let b = (u / width).floor();
                    if b >= 0.0 && (b as usize) < h.len() {
                        h[b as usize] += w;
                    }
                }
                let plot: Vec<Vec<f64>> = h
                    .iter()
                    .enumerate()
                    .map(|(i, m)| {
                        let mid = (i as f64 + 0.5) * width;
                        vec![mid, m / (total * width), (-mid).exp()]
                    })
                    .collect();
                o.plot("overshoot.dat", "density of -(M + x) given M < -x", &["u", "density", "exp"], &plot)?;
            }
            for l in &r.levels {
                if l.x == r.gate_x {
                    gates.push(Gate::new(
                        "overshoot/ks",
                        l.ks.p_value > cfg.analysis.alpha,
                        format!("p = {:.4} at x = {}", l.ks.p_value, l.x),
                    ));
                    gates.push(Gate::new(
                        "overshoot/ess",
                        !l.ess_warning,
                        format!("effective samples {:.0}", l.effective_samples),
                    ));
                    gates.push(Gate::new(
                        "overshoot/correlation",
                        l.correlation.abs() < 0.05,
                        format!("corr = {:.4}", l.correlation),
                    ));
                }
            }
            to_value(&r)?
        }
        ExperimentKind::Factorization => {
            let r = factorization_check(cfg, exec)?;
            cm_outputs(&r.cm, cfg.analysis.drift_tolerance, &mut o, &mut gates)?;
            cd_outputs(&r.cd, &mut o, &mut gates)?;
            #[derive(Serialize)]
            struct Row<'a> {
                quantity: &'a str,
                value: f64,
                stderr: f64,
            }
            let rows = [
                Row { quantity: "c_M", value: r.c_m.value, stderr: r.c_m.stderr },
                Row { quantity: "E_frak_D", value: r.e_frak_d.value, stderr: r.e_frak_d.stderr },
                Row {
                    quantity: "E_frak_D_truncated",
                    value: r.e_frak_d_truncated.value,
                    stderr: r.e_frak_d_truncated.stderr,
                },
                Row { quantity: "c_Dinf", value: r.c_dinf.value, stderr: r.c_dinf.stderr },
                Row { quantity: "product", value: r.check.product.value, stderr: r.check.product.stderr },
                Row {
                    quantity: "control_product",
                    value: r.control.product.value,
                    stderr: r.control.product.stderr,
                },
            ];
            o.csv("factorization.csv", &rows)?;
            let plot: Vec<Vec<f64>> = rows.iter().enumerate().map(|(i, r)| vec![i as f64, r.value]).collect();
            o.plot("factorization.dat", "c_M, E frak_D, E frak_D^t, c_Dinf, product, control", &["index", "value"], &plot)?;
            gates.push(Gate::new(
                "factorization/product",
                r.check.holds,
                format!("|diff| {:.4} <= {:.4}", r.check.difference, r.check.bound),
            ));
            gates.push(Gate::new(
                "factorization/control",
                !r.control.holds,
                format!("scaled control |diff| {:.4} vs {:.4}", r.control.difference, r.control.bound),
            ));
            to_value(&r)?
        }
        ExperimentKind::Smoothing => {
            let (r, (av, aw), (bv, bw)) = smoothing_fixed_point_test(cfg, exec)?;
            let grid: Vec<f64> = (0..=40).map(|i| -4.0 + 0.25 * i as f64).collect();
            let cdf = |v: &[f64], w: &[f64], l: f64| {
                let t: f64 = w.iter().sum();
                v.iter().zip(w).filter(|(x, _)| **x <= l.exp()).map(|(_, w)| w).sum::<f64>() / t
            };
            #[derive(Serialize)]
            struct Row {
                log_d: f64,
                cdf_direct: f64,
                cdf_composed: f64,
            }
            let rows: Vec<Row> = grid
                .iter()
                .map(|&l| Row {
                    log_d: l,
                    cdf_direct: cdf(&av, &aw, l),
                    cdf_composed: cdf(&bv, &bw, l),
                })
                .collect();
            o.csv("smoothing.csv", &rows)?;
            let plot: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.log_d, r.cdf_direct - r.cdf_composed]).collect();
            o.plot("smoothing.dat", "weighted cdf difference against ln D", &["ln_d", "difference"], &plot)?;
            gates.push(Gate::new("smoothing/ks", r.ks.p_value > cfg.analysis.alpha, format!("p = {:.4}", r.ks.p_value)));
            gates.push(Gate::new(
                "smoothing/control",
                r.control_ks.p_value <= cfg.analysis.alpha,
                format!("control p = {:.3e}", r.control_ks.p_value),
            ));
            gates.push(Gate::new("smoothing/log-mean", r.means_agree, "E ln(1 + D) agrees within 3 stderr"));
            to_value(&r)?
        }
        ExperimentKind::Integrability => {
            let (_, r) = integrability_profile(cfg, exec)?;
            integrability_outputs(&r, &mut o, &mut gates)?;
            to_value(&r)?
        }
        ExperimentKind::Truncation => {
            let (_, r) = truncation_profile(cfg, exec)?;
            truncation_outputs(&r, &mut o, &mut gates)?;
            to_value(&r)?
        }
        ExperimentKind::MinTail => {
            let spec = cfg.spec()?;
            let r = estimate_min_tail(&spec, cfg.analysis.gate_x, cfg.run.kmax as usize, cfg.run.samples, exec, cfg.seed)?;
            min_tail_outputs(&r, &mut o, &mut gates)?;
            to_value(&r)?
        }
    };
    let pass = gates.iter().all(|g| g.pass);
    o.files.sort();
    o.files.dedup();
    let summary = Summary {
        experiment: kind.name().into(),
        seed: cfg.seed,
        config: cfg.clone(),
        pass,
        gates,
        files: o.files.clone(),
        report,
    };
    if let Some(dir) = out {
        write_json(&dir.join("summary.json"), &summary)?;
    }
    Ok(summary)
}
