use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use brw_lab_core::brw_sim::{simulate_replicas, BarrierPolicy};
use brw_lab_core::harness::output::{to_json_string, write_csv, write_json, write_plot_data};
use brw_lab_core::harness::{run_experiment, Gate};
use brw_lab_core::models::validate_boundary;
use brw_lab_core::spine_sim::{estimate_min_tail, many_to_one_check, time_reversal_check, PathFunctional, SpineFunctional};
use brw_lab_core::walk::{
    check_harmonicity, renewal_identity_grid, renewal_minus, renewal_plus, renewal_table_mc, HarmonicityMode, LatticeLadder,
    RenewalMethod, Side,
};
use brw_lab_core::{make_spec, Estimate, Exec, ExperimentConfig, Family, StepDistribution};

use crate::grid::{parse_grid, parse_int_grid};
use crate::{Cli, Command, Method, MinTailArgs, Quantity, RenewalArgs, SimulateArgs, SpineArgs, SpineCheck, TheoremArgs, VerifyArgs, VerifyTarget};

/// Returns whether every gate passed.
pub fn run(cli: &Cli) -> Result<bool> {
    let default = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let exec = Exec::from_env(default);
    let seed = cli.seed.unwrap_or(0);
    let out = cli.out.as_path();
    match &cli.command {
        Command::Simulate(a) => simulate(a, &exec, seed, out),
        Command::Spine(a) => spine(a, &exec, seed, out),
        Command::Renewal(a) => renewal(a, &exec, seed, out),
        Command::MinTail(a) => min_tail(a, &exec, seed, out),
        Command::Theorem(a) => theorem(a, &exec, cli.seed, out),
        Command::Verify(a) => verify(a, &exec, seed, out),
    }
}

fn gate(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Gate {
    Gate {
        name: name.into(),
        pass,
        detail: detail.into(),
    }
}

/// Writes `summary.json`, echoes the gates on stderr and returns the verdict.
fn finish(out: &Path, command: &str, seed: u64, gates: Vec<Gate>, report: serde_json::Value) -> Result<bool> {
    let pass = gates.iter().all(|g| g.pass);
    for g in &gates {
        eprintln!("{} {}: {}", if g.pass { "PASS" } else { "FAIL" }, g.name, g.detail);
    }
    let summary = json!({
        "command": command,
        "seed": seed,
        "pass": pass,
        "gates": gates,
        "report": report,
    });
    write_json(&out.join("summary.json"), &summary)?;
    Ok(pass)
}

fn parse_barrier(s: &str) -> Result<BarrierPolicy> {
    let num = |v: &str| v.parse::<f64>().with_context(|| format!("bad barrier value {v:?}"));
    Ok(match s.split_once(':') {
        None if s == "none" => BarrierPolicy::None,
        Some(("fixed", v)) => BarrierPolicy::Fixed { y_max: num(v)? },
        Some(("adaptive", v)) => BarrierPolicy::adaptive(num(v)?),
        _ => bail!("barrier must be none, fixed:<y> or adaptive:<x>, got {s:?}"),
    })
}

fn mean_estimate(xs: impl Iterator<Item = f64>, method: &str, seed: u64) -> Estimate {
    let m = brw_lab_core::harness::Moments::from_slice(&xs.collect::<Vec<_>>());
    Estimate::from_moments(&m, method, seed)
}

fn simulate(a: &SimulateArgs, exec: &Exec, seed: u64, out: &Path) -> Result<bool> {
    let spec = make_spec(Family::GaussianDyadic, a.p)?;
    let barrier = parse_barrier(&a.barrier)?;
    let rows = simulate_replicas(&spec, a.horizon, barrier, a.cap as usize, a.replicas, exec, seed)?;
    write_csv(&out.join("replicas.csv"), &rows)?;
    let residual = rows
        .iter()
        .map(|r| ((-r.m).exp() * r.frak_d - r.d_n).abs() / (1.0 + r.d_n.abs()))
        .fold(0.0, f64::max);
    let mut ms: Vec<f64> = rows.iter().map(|r| r.m).collect();
    ms.sort_by(f64::total_cmp);
    let n = ms.len() as f64;
    let ecdf: Vec<Vec<f64>> = ms.iter().enumerate().map(|(i, &m)| vec![m, (i + 1) as f64 / n]).collect();
    write_plot_data(&out.join("min_ecdf.dat"), "empirical cdf of the minimum", &["M", "F"], &ecdf)?;
    let report = json!({
        "p": a.p,
        "horizon": a.horizon,
        "replicas": a.replicas,
        "barrier": a.barrier,
        "mean_W_n": mean_estimate(rows.iter().map(|r| r.w_n), "replicas", seed),
        "mean_D_n": mean_estimate(rows.iter().map(|r| r.d_n), "replicas", seed),
        "mean_frak_d": mean_estimate(rows.iter().map(|r| r.frak_d), "replicas", seed),
        "max_killed_mass_bound": rows.iter().map(|r| r.killed_mass_bound).fold(0.0, f64::max),
        "max_relative_decomposition_residual": residual,
        "files": ["min_ecdf.dat", "replicas.csv"],
    });
    let gates = vec![gate(
        "simulate/decomposition",
        residual <= 1e-12,
        format!("max |e^-M frak_D - D_n| / (1 + |D_n|) = {residual:.3e}"),
    )];
    finish(out, "simulate", seed, gates, report)
}

#[derive(Serialize)]
struct SpineRow {
    n: usize,
    functional: String,
    lhs: f64,
    lhs_stderr: f64,
    rhs: f64,
    rhs_stderr: f64,
    z: f64,
}

fn spine(a: &SpineArgs, exec: &Exec, seed: u64, out: &Path) -> Result<bool> {
    let spec = make_spec(Family::GaussianDyadic, a.p)?;
    let ns = parse_int_grid(&a.n)?;
    if ns.iter().any(|&n| n < 1) {
        bail!("--n must hold positive generations");
    }
    let mut rows = Vec::new();
    let mut gates = Vec::new();
    match a.check {
        SpineCheck::ManyToOne => {
            let names = a.functional.as_deref().unwrap_or("one,end-nonpositive,derivative-weight");
            for name in names.split(',') {
                let g: PathFunctional = name.trim().parse()?;
                for &n in &ns {
                    let r = many_to_one_check(&spec, n as usize, g, a.samples, exec, seed)?;
                    let z = r.tree_side.z_distance(&r.walk_side);
                    gates.push(gate(format!("many-to-one/{name}/n={n}"), z <= 3.0, format!("z = {z:.2}")));
                    if g == PathFunctional::One {
                        let exact = (2.0 * a.p).powi(n as i32);
                        let worst = (r.tree_side.value / exact - 1.0).abs().max((r.walk_side.value / exact - 1.0).abs());
                        gates.push(gate(
                            format!("many-to-one/one/n={n}/exact"),
                            worst <= 0.01,
                            format!("largest relative error against (2p)^n: {worst:.4}"),
                        ));
                    }
                    rows.push(SpineRow {
                        n: n as usize,
                        functional: name.trim().into(),
                        lhs: r.tree_side.value,
                        lhs_stderr: r.tree_side.stderr,
                        rhs: r.walk_side.value,
                        rhs_stderr: r.walk_side.stderr,
                        z,
                    });
                }
            }
        }
        SpineCheck::TimeReversal => {
            let names = a.functional.as_deref().unwrap_or("end-position,max-below-zero,first-step-sibling");
            for name in names.split(',') {
                let phi: SpineFunctional = name.trim().parse()?;
                for &k in &ns {
                    let r = time_reversal_check(&spec, k as usize, phi, a.samples, exec, seed)?;
                    let z = r.forward.z_distance(&r.reversed);
                    gates.push(gate(format!("time-reversal/{name}/k={k}"), z <= 3.0, format!("z = {z:.2}")));
                    rows.push(SpineRow {
                        n: k as usize,
                        functional: name.trim().into(),
                        lhs: r.forward.value,
                        lhs_stderr: r.forward.stderr,
                        rhs: r.reversed.value,
                        rhs_stderr: r.reversed.stderr,
                        z,
                    });
                }
            }
        }
    }
    write_csv(&out.join("spine.csv"), &rows)?;
    let plot: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.n as f64, r.z]).collect();
    write_plot_data(&out.join("spine.dat"), "standardized difference by generation", &["n", "z"], &plot)?;
    let check = match a.check {
        SpineCheck::ManyToOne => "many-to-one",
        SpineCheck::TimeReversal => "time-reversal",
    };
    let report = json!({ "check": check, "p": a.p, "samples": a.samples, "rows": rows });
    finish(out, "spine", seed, gates, report)
}

#[derive(Serialize)]
struct RenewalRow {
    u: f64,
    value: f64,
    error_bound: f64,
    stderr: f64,
}

fn renewal_rows(a: &RenewalArgs, dist: &StepDistribution, us: &[f64], exec: &Exec, seed: u64) -> Result<Vec<RenewalRow>> {
    let row = |u: f64, value: f64, error_bound: f64, stderr: f64| RenewalRow {
        u,
        value,
        error_bound,
        stderr,
    };
    match (a.quantity, a.method) {
        (Quantity::Harmonicity, m) => {
            let mode = if m == Method::Mc || !dist.is_lattice() {
                HarmonicityMode::MonteCarlo { samples: a.samples, seed }
            } else {
                HarmonicityMode::Exact
            };
            us.iter()
                .map(|&u| {
                    let r = check_harmonicity(dist, u, mode, exec)?;
                    Ok(row(u, r.residual, 0.0, r.stderr))
                })
                .collect()
        }
        (Quantity::Katom, Method::Mc) => bail!("K_u has no Monte Carlo estimator; use --method dp"),
        (Quantity::Katom, _) => {
            let mut l = LatticeLadder::new(dist)?;
            Ok(us.iter().map(|&u| row(u, l.k_atom(u), 0.0, 0.0)).collect())
        }
        (q, Method::Mc) => {
            let side = if q == Quantity::Rminus { Side::Minus } else { Side::Plus };
            let mut sorted = us.to_vec();
            sorted.sort_by(f64::total_cmp);
            let t = renewal_table_mc(dist, &sorted, side, a.samples, None, exec, seed)?;
            Ok(us
                .iter()
                .map(|&u| {
                    let i = sorted.iter().position(|&g| g == u).unwrap();
                    row(u, t.values[i], t.error_bound[i], t.stderr[i])
                })
                .collect())
        }
        (q, m) => {
            let method = if m == Method::Dp { RenewalMethod::ExactLatticeDp } else { RenewalMethod::PathDp };
            us.iter()
                .map(|&u| {
                    let v = if q == Quantity::Rminus { renewal_minus(dist, u, method)? } else { renewal_plus(dist, u, method)? };
                    if v.error_bound > a.tol {
                        bail!("error bound {:.3e} at u = {u} exceeds --tol {:.3e}", v.error_bound, a.tol);
                    }
                    Ok(row(u, v.value, v.error_bound, v.stderr))
                })
                .collect()
        }
    }
}

fn renewal(a: &RenewalArgs, exec: &Exec, seed: u64, out: &Path) -> Result<bool> {
    let dist: StepDistribution = a.dist.parse()?;
    let us = parse_grid(&a.u)?;
    if us.iter().any(|&u| u < 0.0) {
        bail!("--u must be nonnegative");
    }
    let rows = renewal_rows(a, &dist, &us, exec, seed)?;
    let path = out.join("renewal.csv");
    write_csv(&path, &rows)?;
    print!("{}", fs::read_to_string(&path)?);
    let plot: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.u, r.value]).collect();
    write_plot_data(&out.join("renewal.dat"), &format!("{:?} of {}", a.quantity, a.dist), &["u", "value"], &plot)?;
    let mut gates = Vec::new();
    if a.quantity == Quantity::Harmonicity {
        for r in &rows {
            let ok = if r.stderr > 0.0 { r.value.abs() <= 3.0 * r.stderr } else { r.value.abs() <= 1e-12 };
            gates.push(gate(format!("harmonicity/u={}", r.u), ok, format!("residual {:.3e} +- {:.3e}", r.value, r.stderr)));
        }
    }
    let report = json!({
        "dist": dist,
        "quantity": format!("{:?}", a.quantity).to_lowercase(),
        "method": format!("{:?}", a.method).to_lowercase(),
        "rows": rows,
    });
    finish(out, "renewal", seed, gates, report)
}

fn min_tail(a: &MinTailArgs, exec: &Exec, seed: u64, out: &Path) -> Result<bool> {
    let spec = make_spec(Family::GaussianDyadic, a.p)?;
    let r = estimate_min_tail(&spec, a.x, a.kmax as usize, a.samples, exec, seed)?;
    write_csv(&out.join("intervals.csv"), &r.intervals)?;
    let plot: Vec<Vec<f64>> = r.intervals.iter().map(|i| vec![i.hi, i.p_hat]).collect();
    write_plot_data(&out.join("intervals.dat"), "P(M in [-x-j-1, -x-j))", &["upper", "p_hat"], &plot)?;
    let head = json!({
        "x": r.x,
        "p_hat": r.p_hat,
        "stderr": r.stderr,
        "exm_phat": r.exm_phat,
        "truncation_bound": r.truncation_bound,
        "kmax_hits": r.kmax_hits,
    });
    print!("{}", to_json_string(&head)?);
    let ok = r.x == 0.0 || (r.exm_phat > 0.0 && r.exm_phat <= 1.0 + 3.0 * r.exm_stderr);
    if r.kmax_warning {
        eprintln!("warning: {} of {} paths reached kmax; the estimate misses deeper minima", r.kmax_hits, r.samples);
    }
    let gates = vec![gate("min-tail/bracket", ok, format!("e^x P = {:.5} +- {:.5}", r.exm_phat, r.exm_stderr))];
    finish(out, "min-tail", seed, gates, serde_json::to_value(&r)?)
}

fn theorem(a: &TheoremArgs, exec: &Exec, seed: Option<u64>, out: &Path) -> Result<bool> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::from_path(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    cfg.experiment = Some(a.which.parse()?);
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let summary = run_experiment(&cfg, exec, Some(out))?;
    for g in &summary.gates {
        eprintln!("{} {}: {}", if g.pass { "PASS" } else { "FAIL" }, g.name, g.detail);
    }
    Ok(summary.pass)
}

fn verify(a: &VerifyArgs, exec: &Exec, seed: u64, out: &Path) -> Result<bool> {
    let mut gates = Vec::new();
    let report = match a.target {
        VerifyTarget::Lemma25 => {
            let dist: StepDistribution = a.dist.parse()?;
            let xs = parse_int_grid(&a.x_grid)?;
            let avals = parse_int_grid(&a.a_grid)?;
            if avals.iter().any(|&v| v < 1) {
                bail!("--a-grid must hold a >= 1; a = 0 is outside the identity");
            }
            let rows = renewal_identity_grid(&dist, &xs, &avals)?;
            let zero_rejected = renewal_identity_grid(&dist, &[0], &[0]).is_err();
            let worst = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
            let within = rows.iter().all(|r| r.residual <= r.bound.max(1e-9) && r.residual <= 1e-5);
            gates.push(gate("lemma25/identity", within, format!("largest |lhs - rhs| = {worst:.3e}")));
            gates.push(gate("lemma25/a=0", zero_rejected, "a = 0 rejected"));
            write_csv(&out.join("lemma25.csv"), &rows)?;
            let plot: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.x as f64, r.residual]).collect();
            write_plot_data(&out.join("lemma25.dat"), "residual of the extended renewal identity", &["x", "residual"], &plot)?;
            json!({ "dist": dist, "rows": rows, "a_zero_rejected": zero_rejected })
        }
        VerifyTarget::Boundary => {
            let mut rows = Vec::new();
            for p in parse_grid(&a.p)? {
                let r = validate_boundary(&make_spec(Family::GaussianDyadic, p)?);
                let ok = r.residual_mass < 1e-10 && r.residual_tilt < 1e-10;
                gates.push(gate(
                    format!("boundary/p={p}"),
                    ok,
                    format!("residuals {:.2e}, {:.2e}", r.residual_mass, r.residual_tilt),
                ));
                rows.push(json!({ "p": p, "report": r }));
            }
            json!({ "rows": rows })
        }
        VerifyTarget::RenewalOracle => {
            let dist = StepDistribution::srw();
            let us = parse_grid(a.u.as_deref().unwrap_or("0:20:0.5"))?;
            let mut l = LatticeLadder::new(&dist)?;
            let exact_ok = us.iter().all(|&u| l.r_minus(u) == u.floor() + 1.0);
            gates.push(gate("renewal/srw-exact", exact_ok, "R^-(u) = floor(u) + 1"));
            let theta_ok = (l.theta0 - 2.0).abs() < 1e-6;
            gates.push(gate("renewal/theta0", theta_ok, format!("theta0 = {:.12}", l.theta0)));
            let k_ok = (0..=20).all(|k| (l.k_atom(k as f64) - 1.0).abs() < 1e-12);
            gates.push(gate("renewal/k-atoms", k_ok, "K_a = 1 at integers 0..=20"));
            let mut sorted = us.clone();
            sorted.sort_by(f64::total_cmp);
            let t = renewal_table_mc(&dist, &sorted, Side::Minus, a.samples.unwrap_or(100_000), None, exec, seed)?;
            let mut worst: f64 = 0.0;
            let mut rows = Vec::new();
            for (i, &u) in sorted.iter().enumerate() {
                let dp = l.r_minus(u);
                let z = if t.stderr[i] > 0.0 { (t.values[i] - dp).abs() / t.stderr[i] } else if t.values[i] == dp { 0.0 } else { f64::INFINITY };
                worst = worst.max(z);
                rows.push(json!({ "u": u, "dp": dp, "mc": t.values[i], "mc_stderr": t.stderr[i], "z": z }));
            }
            gates.push(gate("renewal/mc-vs-dp", worst <= 3.0, format!("largest z = {worst:.2}")));
            json!({ "theta0": l.theta0, "rows": rows })
        }
        VerifyTarget::Harmonicity => {
            let dist: StepDistribution = a.dist.parse()?;
            let us = parse_grid(a.u.as_deref().unwrap_or("0,1,5,20"))?;
            let mode = if dist.is_lattice() {
                HarmonicityMode::Exact
            } else {
                HarmonicityMode::MonteCarlo {
                    samples: a.samples.unwrap_or(1_000_000),
                    seed,
                }
            };
            let mut rows = Vec::new();
            for u in us {
                let r = check_harmonicity(&dist, u, mode, exec)?;
                let ok = if dist.is_lattice() {
                    r.residual.abs() <= 1e-12 && r.residual_plus.abs() <= 1e-12
                } else {
                    r.residual.abs() <= 3.0 * r.stderr && r.residual_plus.abs() <= 3.0 * r.stderr_plus
                };
                gates.push(gate(
                    format!("harmonicity/u={u}"),
                    ok,
                    format!("residuals {:.3e} +- {:.1e}, {:.3e} +- {:.1e}", r.residual, r.stderr, r.residual_plus, r.stderr_plus),
                ));
                rows.push(r);
            }
            json!({ "dist": dist, "rows": rows })
        }
        VerifyTarget::Decomposition => {
            let spec = make_spec(Family::GaussianDyadic, 1.0)?;
            let n = a.samples.unwrap_or(1_000);
            let rows = simulate_replicas(&spec, a.horizon, BarrierPolicy::None, usize::MAX, n, exec, seed)?;
            let worst = rows
                .iter()
                .map(|r| ((-r.m).exp() * r.frak_d - r.d_n).abs() / (1.0 + r.d_n.abs()))
                .fold(0.0, f64::max);
            gates.push(gate("decomposition/identity", worst <= 1e-12, format!("largest relative residual {worst:.3e}")));
            json!({ "trees": n, "horizon": a.horizon, "max_relative_residual": worst })
        }
    };
    finish(out, "verify", seed, gates, report)
}
