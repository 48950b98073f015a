//! Experiment configuration: TOML with `[model]`, `[run]` and `[analysis]`
//! sections. Unknown keys are errors.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::models::{make_spec, Family, PointProcessSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    #[serde(rename = "cM")]
    CM,
    #[serde(rename = "cDinf")]
    CDinf,
    #[serde(rename = "overshoot")]
    Overshoot,
    #[serde(rename = "factorization")]
    Factorization,
    #[serde(rename = "smoothing")]
    Smoothing,
    #[serde(rename = "integrability")]
    Integrability,
    #[serde(rename = "truncation")]
    Truncation,
    #[serde(rename = "min-tail")]
    MinTail,
}

impl std::str::FromStr for ExperimentKind {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| LabError::Config {
            path: "experiment".into(),
            reason: format!("unknown experiment {s:?}"),
        })
    }
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::CM => "cM",
            ExperimentKind::CDinf => "cDinf",
            ExperimentKind::Overshoot => "overshoot",
            ExperimentKind::Factorization => "factorization",
            ExperimentKind::Smoothing => "smoothing",
            ExperimentKind::Integrability => "integrability",
            ExperimentKind::Truncation => "truncation",
            ExperimentKind::MinTail => "min-tail",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_family")]
    pub family: Family,
    #[serde(default = "default_p")]
    pub p: f64,
}

fn default_family() -> Family {
    Family::GaussianDyadic
}

fn default_p() -> f64 {
    1.0
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            family: default_family(),
            p: default_p(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Replicas (trees, spine paths or walks) per estimate.
    pub samples: u64,
    /// Generation horizon for plain tree simulation.
    pub horizon: u32,
    /// Maximum spine depth explored by the minimum-tail sampler.
    pub kmax: u64,
    /// Adaptive barrier slack above the minimum-event level (nats).
    pub barrier_slack: f64,
    /// Hard cap on stored particles per tree.
    pub population_cap: usize,
    /// Relative freeze level of sibling subtrees; beyond it a subtree's chance
    /// of reaching below the spine is closed analytically.
    pub ceiling: f64,
    /// Freeze level, above the minimum, for derivative-mass approximants.
    pub freeze_level: f64,
    /// Freeze level for the smoothing fixed point test. Frozen particles
    /// contribute their mean, which narrows the lower tail of the law, so this
    /// runs higher than `freeze_level`.
    pub smoothing_freeze: f64,
    /// Absolute freeze line for the derivative martingale limit.
    pub line_level: f64,
    /// The reversed spine walk is held at the largest counted level plus
    /// this margin.
    pub reinjection_margin: f64,
    /// Plain trees for the freeze-line diagnostics, the smoothing test and
    /// the direct cross-checks.
    pub aux_samples: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            samples: 200_000,
            horizon: 12,
            kmax: 1_000_000,
            barrier_slack: 15.0,
            population_cap: 100_000_000,
            ceiling: 4.0,
            freeze_level: 8.0,
            smoothing_freeze: 12.0,
            line_level: 8.0,
            reinjection_margin: 8.0,
            aux_samples: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub x_grid: Vec<f64>,
    pub t_grid: Vec<u32>,
    /// Conditioning levels for the overshoot, integrability and truncation laws.
    pub conditional_x: Vec<f64>,
    /// Level at which the overshoot law and the mean of `frak_D` are gated.
    pub gate_x: f64,
    /// Levels `ln y` for the tail of the derivative martingale limit.
    pub log_y_grid: Vec<f64>,
    /// Truncation depth used as the stand-in for the untruncated mass.
    pub truncation_t: u32,
    pub epsilon: f64,
    pub drift_tolerance: f64,
    pub alpha: f64,
    /// Fixed closure constant; self-consistent when absent.
    pub closure: Option<f64>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            x_grid: (0..=12).map(f64::from).collect(),
            t_grid: vec![0, 1, 2, 5, 10, 15, 20, 25],
            conditional_x: vec![4.0, 6.0, 8.0, 10.0],
            gate_x: 8.0,
            log_y_grid: (0..=16).map(|i| 0.5 * f64::from(i)).collect(),
            truncation_t: 25,
            epsilon: 0.05,
            drift_tolerance: 0.10,
            alpha: 0.01,
            closure: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: Option<ExperimentKind>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: None,
            seed: 0,
            model: ModelSection::default(),
            run: RunSection::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

fn bad(path: &str, reason: impl Into<String>) -> LabError {
    LabError::Config {
        path: path.into(),
        reason: reason.into(),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let span = e.span().map(|s| format!(" (bytes {}..{})", s.start, s.end)).unwrap_or_default();
            bad("<file>", format!("{}{span}", e.message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn spec(&self) -> Result<PointProcessSpec> {
        make_spec(self.model.family, self.model.p).map_err(|e| bad("model.p", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.spec()?;
        let r = &self.run;
        if r.samples == 0 {
            return Err(bad("run.samples", "must be at least 1"));
        }
        if r.horizon > 64 {
            return Err(bad("run.horizon", "must be at most 64"));
        }
        if r.kmax == 0 {
            return Err(bad("run.kmax", "must be at least 1"));
        }
        if !(r.barrier_slack > 0.0) {
            return Err(bad("run.barrier_slack", "must be positive"));
        }
        if r.aux_samples < 100 {
            return Err(bad("run.aux_samples", "must be at least 100"));
        }
        if r.population_cap == 0 {
            return Err(bad("run.population_cap", "must be at least 1"));
        }
        if !(1.0..=12.0).contains(&r.ceiling) {
            return Err(bad("run.ceiling", "must lie in [1, 12]"));
        }
        if !(r.freeze_level >= r.ceiling && r.freeze_level <= 16.0) {
            return Err(bad("run.freeze_level", "must lie in [run.ceiling, 16]"));
        }
        if !(r.smoothing_freeze >= r.ceiling && r.smoothing_freeze <= 16.0) {
            return Err(bad("run.smoothing_freeze", "must lie in [run.ceiling, 16]"));
        }
        if !(r.line_level > 0.0 && r.line_level <= 14.0) {
            return Err(bad("run.line_level", "must lie in (0, 14]"));
        }
        if !(r.reinjection_margin >= 2.0 && r.reinjection_margin <= 30.0) {
            return Err(bad("run.reinjection_margin", "must lie in [2, 30]"));
        }
        let a = &self.analysis;
        if a.x_grid.is_empty() || a.x_grid.windows(2).any(|w| w[0] >= w[1]) || a.x_grid[0] < 0.0 {
            return Err(bad("analysis.x_grid", "must be nonempty, nonnegative and strictly increasing"));
        }
        if a.t_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("analysis.t_grid", "must be strictly increasing"));
        }
        if a.conditional_x.iter().any(|&x| !(x > 0.0)) {
            return Err(bad("analysis.conditional_x", "levels must be positive"));
        }
        if !(a.gate_x > 0.0) {
            return Err(bad("analysis.gate_x", "must be positive"));
        }
        if a.log_y_grid.len() < 4 || a.log_y_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("analysis.log_y_grid", "needs at least 4 strictly increasing levels"));
        }
        if !(a.epsilon > 0.0) {
            return Err(bad("analysis.epsilon", "must be positive"));
        }
        if !(a.drift_tolerance > 0.0) {
            return Err(bad("analysis.drift_tolerance", "must be positive"));
        }
        if !(a.alpha > 0.0 && a.alpha < 1.0) {
            return Err(bad("analysis.alpha", "must lie in (0, 1)"));
        }
        if let Some(c) = a.closure {
            if !(0.0..=1.0).contains(&c) {
                return Err(bad("analysis.closure", "must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            experiment = "cM"
            seed = 42
            [model]
            family = "gaussian-dyadic"
            p = 0.8
            [run]
            samples = 1000
            [analysis]
            x_grid = [1.0, 2.0, 3.0, 4.0]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.experiment, Some(ExperimentKind::CM));
        assert_eq!(cfg.model.p, 0.8);
        assert_eq!(cfg.run.samples, 1000);
        assert_eq!(cfg.run.horizon, RunSection::default().horizon);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::from_toml_str("[run]\nsampels = 5\n").unwrap_err().to_string();
        assert!(err.contains("sampels"), "{err}");
        let err = ExperimentConfig::from_toml_str("bogus = 1\n").unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn range_errors_carry_field_path() {
        let err = ExperimentConfig::from_toml_str("[model]\np = 0.4\n").unwrap_err().to_string();
        assert!(err.contains("model.p"), "{err}");
        let err = ExperimentConfig::from_toml_str("[analysis]\nx_grid = [2.0, 1.0]\n").unwrap_err().to_string();
        assert!(err.contains("analysis.x_grid"), "{err}");
    }

    #[test]
    fn experiment_names_parse() {
        for k in ["cM", "cDinf", "overshoot", "factorization", "smoothing", "integrability", "truncation", "min-tail"] {
            let e: ExperimentKind = k.parse().unwrap();
            assert_eq!(e.name(), k);
        }
        assert!("cm".parse::<ExperimentKind>().is_err());
    }
}
