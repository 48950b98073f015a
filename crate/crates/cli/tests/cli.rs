use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn brw_lab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brw-lab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("BRW_LAB_WORKERS")
        .output()
        .expect("binary runs")
}

fn summary(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

const SMALL: &str = r#"
[run]
samples = 3000
aux_samples = 200
[analysis]
closure = 0.44
x_grid = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
conditional_x = [4.0, 6.0]
gate_x = 6.0
"#;

#[test]
fn boundary_verification_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = brw_lab(&["verify", "boundary"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(dir.path());
    assert_eq!(s["pass"], true);
    assert_eq!(s["gates"].as_array().unwrap().len(), 3);
}

#[test]
fn renewal_prints_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = brw_lab(
        &["renewal", "--dist", "srw", "--quantity", "rminus", "--u", "0:50", "--method", "dp", "--tol", "1e-6"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("u,value,error_bound,stderr"));
    for (k, line) in lines.enumerate() {
        let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(v, k as f64 + 1.0);
    }
    assert!(dir.path().join("renewal.dat").exists());
}

#[test]
fn lemma25_grid_and_zero_rejection() {
    let dir = tempfile::tempdir().unwrap();
    let o = brw_lab(&["verify", "lemma25", "--dist", "srw", "--x-grid", "1:10", "--a-grid", "1:5"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = fs::read_to_string(dir.path().join("lemma25.csv")).unwrap();
    assert_eq!(rows.lines().count(), 51);
    let o = brw_lab(&["verify", "lemma25", "--a-grid", "0:2"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn min_tail_emits_json_and_intervals() {
    let dir = tempfile::tempdir().unwrap();
    let o = brw_lab(&["min-tail", "--x", "3", "--samples", "5e3", "--seed", "42"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for k in ["x", "p_hat", "stderr", "exm_phat", "truncation_bound"] {
        assert!(v.get(k).is_some(), "missing {k}");
    }
    let e = v["exm_phat"].as_f64().unwrap();
    assert!(e > 0.2 && e < 0.8, "{e}");
    let csv = fs::read_to_string(dir.path().join("intervals.csv")).unwrap();
    assert!(csv.starts_with("j,lo,hi,p_hat,stderr\n"));
}

#[test]
fn simulate_writes_replica_columns() {
    let dir = tempfile::tempdir().unwrap();
    let o = brw_lab(&["simulate", "--replicas", "50", "--horizon", "8", "--seed", "3"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("replicas.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "seed,replica_id,n,W_n,D_n,M,argmin_gen,frak_d,killed_mass_bound");
    assert_eq!(csv.lines().count(), 51);
    let plot = fs::read_to_string(dir.path().join("min_ecdf.dat")).unwrap();
    assert!(plot.starts_with('#'));
}

#[test]
fn failed_gate_exits_two() {
    // 50 trees cannot pin (2p)^6 to 1%.
    let dir = tempfile::tempdir().unwrap();
    let o = brw_lab(&["spine", "--functional", "one", "--n", "6", "--samples", "50"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(summary(dir.path())["pass"], false);
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "[run]\nsampels = 10\n").unwrap();
    let o = brw_lab(&["theorem", "--which", "cM", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sampels"));
    let o = brw_lab(&["theorem", "--which", "cX"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

fn theorem_bytes(dir: &Path, name: &str, workers: &str, env: Option<&str>) -> Vec<(String, Vec<u8>)> {
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.join(name);
    let mut c = Command::new(env!("CARGO_BIN_EXE_brw-lab"));
    c.args(["--seed", "11", "--workers", workers, "--out"])
        .arg(&out)
        .args(["theorem", "--which", "truncation", "--config"])
        .arg(&cfg)
        .env_remove("BRW_LAB_WORKERS");
    if let Some(w) = env {
        c.env("BRW_LAB_WORKERS", w);
    }
    let o = c.output().unwrap();
    assert!(matches!(o.status.code(), Some(0 | 2)), "{}", String::from_utf8_lossy(&o.stderr));
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn theorem_outputs_are_byte_identical_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let a = theorem_bytes(dir.path(), "a", "1", None);
    let b = theorem_bytes(dir.path(), "b", "1", None);
    let c = theorem_bytes(dir.path(), "c", "4", None);
    let d = theorem_bytes(dir.path(), "d", "1", Some("3"));
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"summary.json") && names.contains(&"truncation.csv") && names.contains(&"truncation.dat"));
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(a, d);
    let s: serde_json::Value = serde_json::from_slice(&a.iter().find(|(n, _)| n == "summary.json").unwrap().1).unwrap();
    assert_eq!(s["seed"], 11);
    assert_eq!(s["experiment"], "truncation");
}
