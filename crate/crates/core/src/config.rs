//! Run configuration for the `lcflow` command line.
//!
//! A config is a JSON document; every section has defaults, so the minimal
//! config is `{"problem": {"preset": "P1"}}`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::descent::DescentConfig;
use crate::error::{argument, structural, Result};
use crate::feedback::{NewtonConfig, VerificationConfig};
use crate::paths::TimeGrid;
use crate::problem::{presets, ProblemDocument, ProblemSpec};
use crate::regression::RegressionBasis;
use crate::value::BudgetFactors;

/// Where the problem comes from: a built-in preset, a JSON file (relative
/// paths resolve against the config's directory) or an inline document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSource {
    Preset(String),
    Path(PathBuf),
    Inline(Box<ProblemDocument>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StartConfig {
    pub t0: f64,
    /// Defaults to the origin.
    pub x0: Option<Vec<f64>>,
}

impl Default for StartConfig {
    fn default() -> Self {
        Self { t0: 0.0, x0: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Number of Euler steps on `[0, T]`.
    pub steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { steps: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub paths: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self { paths: 20_000, seed: 1, antithetic: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChecksConfig {
    /// Time step of `∂ₜV` differences; defaults to two grid steps.
    pub h_t: Option<f64>,
    /// Optional spatial step for a difference check of `DₓV`.
    pub h_x: Option<f64>,
    /// Query points in state space; defaults to `x0 + s·1` for
    /// `s ∈ {−1, −½, 0, ½, 1}`.
    pub points: Option<Vec<Vec<f64>>>,
    /// Query times; defaults to `t0` and the grid node nearest `T/2`.
    pub times: Option<Vec<f64>>,
    /// Use the Riccati oracle as the value source where the problem allows it.
    pub prefer_oracle: bool,
    pub riccati_substeps: usize,
    pub hjb_factor: f64,
    pub dpp_step: f64,
    pub budget: BudgetFactors,
    /// Extra factor on the budget when the continuation value is fitted.
    pub fitted_factor: f64,
    pub lattice_spacing: f64,
    /// Half-width of the lattice box in standard deviations of `X̄`.
    pub lattice_box_sd: f64,
    pub newton: NewtonConfig,
    pub verification: VerificationConfig,
    pub agreement_tolerance: f64,
    pub convexity_pairs: Option<Vec<(Vec<f64>, Vec<f64>)>>,
    pub convexity_lambdas: Vec<f64>,
    pub convexity_stderr_factor: f64,
    pub uniform_convexity_trials: usize,
    pub uniform_convexity_seed: u64,
    pub convexity_tolerance: f64,
    pub regularity_u_box: f64,
    pub regularity_samples: usize,
    pub regularity_tolerance: f64,
    pub validation_samples: usize,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self {
            h_t: None,
            h_x: None,
            points: None,
            times: None,
            prefer_oracle: true,
            riccati_substeps: 4,
            hjb_factor: 5.0,
            dpp_step: 0.2,
            budget: BudgetFactors::default(),
            fitted_factor: 5.0,
            lattice_spacing: 0.05,
            lattice_box_sd: 4.0,
            newton: NewtonConfig::default(),
            verification: VerificationConfig::default(),
            agreement_tolerance: 0.07,
            convexity_pairs: None,
            convexity_lambdas: vec![0.25, 0.5, 0.75],
            convexity_stderr_factor: 4.0,
            uniform_convexity_trials: 20,
            uniform_convexity_seed: 0xc0ffee,
            convexity_tolerance: 0.05,
            regularity_u_box: 5.0,
            regularity_samples: 200,
            regularity_tolerance: 0.05,
            validation_samples: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Any of `"json"` (always written) and `"csv"`.
    pub formats: Vec<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: PathBuf::from("lcflow-out"), formats: vec!["json".into(), "csv".into()] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// When present it must match the command given on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    pub problem: ProblemSource,
    #[serde(default)]
    pub start: StartConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub monte_carlo: MonteCarloConfig,
    #[serde(default)]
    pub basis: RegressionBasis,
    #[serde(default)]
    pub descent: DescentConfig,
    #[serde(default)]
    pub checks: ChecksConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Directory of the config file; relative problem paths resolve here.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_json_str(&std::fs::read_to_string(path)?)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// A config for a preset with every other section at its default.
    pub fn for_preset(name: &str) -> Self {
        Self {
            command: None,
            problem: ProblemSource::Preset(name.to_string()),
            start: StartConfig::default(),
            grid: GridConfig::default(),
            monte_carlo: MonteCarloConfig::default(),
            basis: RegressionBasis::default(),
            descent: DescentConfig::default(),
            checks: ChecksConfig::default(),
            output: OutputConfig::default(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.grid.steps == 0 {
            return Err(argument("grid.steps must be positive"));
        }
        if self.monte_carlo.paths == 0 {
            return Err(argument("monte_carlo.paths must be positive"));
        }
        if self.monte_carlo.antithetic && self.monte_carlo.paths % 2 == 1 {
            return Err(argument("antithetic sampling needs an even number of paths"));
        }
        self.descent.check()?;
        let c = &self.checks;
        for (name, v) in [
            ("checks.hjb_factor", c.hjb_factor),
            ("checks.dpp_step", c.dpp_step),
            ("checks.fitted_factor", c.fitted_factor),
            ("checks.lattice_spacing", c.lattice_spacing),
            ("checks.lattice_box_sd", c.lattice_box_sd),
            ("checks.agreement_tolerance", c.agreement_tolerance),
            ("checks.regularity_u_box", c.regularity_u_box),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(argument(format!("{name} must be positive, got {v}")));
            }
        }
        if c.h_t.is_some_and(|h| !(h > 0.0)) || c.h_x.is_some_and(|h| !(h > 0.0)) {
            return Err(argument("difference steps must be positive"));
        }
        if c.riccati_substeps == 0 || c.validation_samples == 0 || c.uniform_convexity_trials == 0 {
            return Err(argument("substeps and sample counts must be positive"));
        }
        if c.convexity_lambdas.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return Err(argument("convexity weights must lie in (0, 1)"));
        }
        for f in &self.output.formats {
            if f != "json" && f != "csv" {
                return Err(argument(format!("unknown output format {f:?}")));
            }
        }
        Ok(())
    }

    pub fn load_problem(&self) -> Result<ProblemSpec> {
        match &self.problem {
            ProblemSource::Preset(name) => {
                presets::by_name(name).ok_or_else(|| argument(format!("unknown preset {name:?}")))
            }
            ProblemSource::Path(p) => {
                let full = if p.is_relative() { self.base_dir.join(p) } else { p.clone() };
                ProblemDocument::from_path(&full)
                    .map_err(|e| structural(format!("{}: {e}", full.display())))?
                    .to_spec()
            }
            ProblemSource::Inline(doc) => doc.to_spec(),
        }
    }

    pub fn grid(&self, spec: &ProblemSpec) -> Result<TimeGrid> {
        TimeGrid::new(0.0, spec.horizon, self.grid.steps)
    }

    pub fn x0(&self, spec: &ProblemSpec) -> Result<Vec<f64>> {
        let x0 = self.start.x0.clone().unwrap_or_else(|| vec![0.0; spec.dims.n]);
        if x0.len() != spec.dims.n {
            return Err(argument(format!("start.x0 has length {}, expected {}", x0.len(), spec.dims.n)));
        }
        Ok(x0)
    }

    pub fn points(&self, spec: &ProblemSpec) -> Result<Vec<Vec<f64>>> {
        let pts = match &self.checks.points {
            Some(p) => p.clone(),
            None => {
                let x0 = self.x0(spec)?;
                [-1.0, -0.5, 0.0, 0.5, 1.0].iter().map(|s| x0.iter().map(|v| v + s).collect()).collect()
            }
        };
        if pts.iter().any(|p| p.len() != spec.dims.n) {
            return Err(argument("every checks.points entry must have the state dimension"));
        }
        Ok(pts)
    }

    pub fn times(&self, grid: &TimeGrid) -> Result<Vec<f64>> {
        let times = match &self.checks.times {
            Some(t) => t.clone(),
            None => vec![self.start.t0, grid.node(grid.steps / 2)],
        };
        for &t in &times {
            grid.index_of(t)?;
        }
        Ok(times)
    }

    pub fn h_t(&self, grid: &TimeGrid) -> f64 {
        self.checks.h_t.unwrap_or(2.0 * grid.dt())
    }

    pub fn writes_csv(&self) -> bool {
        self.output.formats.iter().any(|f| f == "csv")
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("configs always serialize");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::from_json_str(r#"{"problem": {"preset": "P1"}}"#).unwrap();
        assert_eq!(cfg.grid.steps, 50);
        assert_eq!(cfg.load_problem().unwrap().label, "P1");
        assert_eq!(cfg.points(&cfg.load_problem().unwrap()).unwrap().len(), 5);
    }

    #[test]
    fn unknown_fields_and_bad_values_are_rejected() {
        assert!(RunConfig::from_json_str(r#"{"problem": {"preset": "P1"}, "grid": {"step": 3}}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"problem": {"preset": "P1"}, "grid": {"steps": 0}}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"problem": {"preset": "P1"}, "monte_carlo": {"paths": 5}}"#).is_err());
        let cfg = RunConfig::from_json_str(r#"{"problem": {"preset": "nope"}}"#).unwrap();
        assert!(cfg.load_problem().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::for_preset("P1");
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.monte_carlo.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }
}
