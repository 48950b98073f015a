//! Configured experiments end to end at small budgets.

use std::fs;

use brw_lab_core::harness::output::to_json_string;
use brw_lab_core::harness::{run_experiment, ExperimentKind};
use brw_lab_core::{Exec, ExperimentConfig, LabError};

fn small(kind: ExperimentKind) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&format!(
        r#"
        experiment = "{}"
        seed = 9
        [run]
        samples = 4000
        aux_samples = 500
        [analysis]
        closure = 0.44
        x_grid = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]
        conditional_x = [4.0, 6.0]
        gate_x = 6.0
        "#,
        kind.name()
    ))
    .unwrap()
}

#[test]
fn every_experiment_writes_its_files() {
    use ExperimentKind::*;
    for kind in [CM, CDinf, Overshoot, Factorization, Smoothing, Integrability, Truncation, MinTail] {
        let dir = tempfile::tempdir().unwrap();
        let s = run_experiment(&small(kind), &Exec::new(2), Some(dir.path())).unwrap();
        assert_eq!(s.experiment, kind.name());
        assert!(!s.gates.is_empty(), "{kind:?}");
        assert!(s.files.iter().any(|f| f.ends_with(".csv")), "{kind:?}: {:?}", s.files);
        assert!(s.files.iter().any(|f| f.ends_with(".dat")), "{kind:?}: {:?}", s.files);
        for f in &s.files {
            let text = fs::read_to_string(dir.path().join(f)).unwrap();
            if f.ends_with(".dat") {
                assert!(text.starts_with("# "), "{f}");
                let data = text.lines().find(|l| !l.starts_with('#')).unwrap();
                assert!(data.split_whitespace().count() >= 2, "{f}");
            }
        }
        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(json["pass"], s.pass);
    }
}

#[test]
fn summaries_are_reproducible_and_worker_independent() {
    let cfg = small(ExperimentKind::Factorization);
    let a = to_json_string(&run_experiment(&cfg, &Exec::new(1), None).unwrap()).unwrap();
    let b = to_json_string(&run_experiment(&cfg, &Exec::new(1), None).unwrap()).unwrap();
    let c = to_json_string(&run_experiment(&cfg, &Exec::new(8), None).unwrap()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(a, to_json_string(&run_experiment(&other, &Exec::new(1), None).unwrap()).unwrap());
}

#[test]
fn missing_experiment_is_a_config_error() {
    let err = run_experiment(&ExperimentConfig::default(), &Exec::new(1), None).unwrap_err();
    assert!(matches!(err, LabError::Config { ref path, .. } if path == "experiment"), "{err}");
}

#[test]
fn malformed_key_is_named() {
    let err = ExperimentConfig::from_toml_str("[analysis]\ngate = 3.0\n").unwrap_err().to_string();
    assert!(err.contains("gate"), "{err}");
    let err = ExperimentConfig::from_toml_str("experiment = \"cN\"\n").unwrap_err().to_string();
    assert!(err.contains("experiment") || err.contains("cN"), "{err}");
}
