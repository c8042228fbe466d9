//! Experiment spec files (JSON).
//!
//! ```json
//! {
//!   "mode": "lindyn",
//!   "base_seed": 1,
//!   "replicas": 5,
//!   "output_dir": "runs/fig4",
//!   "lindyn": { "methods": ["sgd", "scr", "lspr"], "omega": [0.1, 0.9], "lambda": [0.001, 1] }
//! }
//! ```
//!
//! Every grid field is optional; missing ones take the defaults below.
//! Unknown fields are rejected.

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::augment::PerturbationSpec;
use crate::ctr::{CtrMethod, DatasetConfig, ScrTarget};
use crate::error::{Error, Result};
use crate::lindyn::{self, Method};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Lindyn,
    Ctr,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Lindyn => "lindyn",
            Mode::Ctr => "ctr",
        }
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub mode: Mode,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "one")]
    pub replicas: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lindyn: Option<LindynGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ctr: Option<CtrGrid>,
}

/// Sweep over the linear-dynamics parameters. SGD ignores ω and λ and runs
/// once per (η, σ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LindynGrid {
    pub methods: Vec<Method>,
    pub omega: Vec<f64>,
    pub lambda: Vec<f64>,
    pub eta: Vec<f64>,
    pub sigma: Vec<f64>,
    pub lx: usize,
    pub ly: usize,
    /// Hidden width; unset means the CLI chooses (desk or full scale).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lh: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    pub record_every: u64,
    /// Per-entry input std; unset means width-scaled.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_std: Option<f64>,
}

impl Default for LindynGrid {
    fn default() -> Self {
        LindynGrid {
            methods: vec![Method::Sgd, Method::Scr, Method::Lspr],
            omega: vec![0.1, 0.9],
            lambda: vec![0.001, 1.0],
            eta: vec![lindyn::DEFAULT_ETA],
            sigma: vec![1.0],
            lx: lindyn::DEFAULT_LX,
            ly: lindyn::DEFAULT_LY,
            lh: None,
            steps: None,
            record_every: 100,
            input_std: None,
        }
    }
}

/// Hidden width and step count used when the spec leaves them unset and no
/// override is given.
pub const DESK_LH: usize = 1_000;
pub const DESK_STEPS: u64 = 20_000;

impl LindynGrid {
    /// Hidden width, falling back to the full-scale default.
    pub fn lh(&self) -> usize {
        self.lh.unwrap_or(lindyn::DEFAULT_LH)
    }

    pub fn steps(&self) -> u64 {
        self.steps.unwrap_or(lindyn::DEFAULT_STEPS)
    }

    pub fn input_std(&self) -> f64 {
        self.input_std
            .unwrap_or_else(|| lindyn::scaled_input_std(self.lx, self.lh()))
    }
}

/// Sweep over CTR training configurations. The baseline runs once; SCR and
/// LSPR run for every (λ, perturbation) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CtrGrid {
    pub dataset: DatasetConfig,
    /// Trailing share of the generated data held out for evaluation.
    pub eval_fraction: f64,
    pub slot_dim: usize,
    pub hidden_dim: usize,
    pub methods: Vec<CtrMethod>,
    pub lambda: Vec<f64>,
    pub perturbation: Vec<PerturbationSpec>,
    pub scr_target: ScrTarget,
    pub scr_perturb_fraction: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for CtrGrid {
    fn default() -> Self {
        CtrGrid {
            dataset: DatasetConfig::default(),
            eval_fraction: 0.5,
            slot_dim: 4,
            hidden_dim: 32,
            methods: vec![CtrMethod::Baseline, CtrMethod::Scr, CtrMethod::Lspr],
            lambda: vec![0.001, 0.01, 0.1, 0.5],
            perturbation: vec![PerturbationSpec::default()],
            scr_target: ScrTarget::Both,
            scr_perturb_fraction: 0.25,
            batch_size: 64,
            epochs: 8,
            learning_rate: 0.05,
        }
    }
}

fn nonempty<T>(field: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::spec(field, "grid list must not be empty"));
    }
    Ok(())
}

fn nonneg(field: &str, v: &[f64]) -> Result<()> {
    nonempty(field, v)?;
    if let Some(x) = v.iter().find(|x| **x < 0.0 || !x.is_finite()) {
        return Err(Error::spec(field, format!("value {x} must be finite and >= 0")));
    }
    let mut seen = HashSet::new();
    if let Some(x) = v.iter().find(|x| !seen.insert(x.to_bits())) {
        return Err(Error::spec(field, format!("duplicate value {x}")));
    }
    Ok(())
}

fn distinct<T: Eq + std::hash::Hash + std::fmt::Debug>(field: &str, v: &[T]) -> Result<()> {
    nonempty(field, v)?;
    let mut seen = HashSet::new();
    if let Some(x) = v.iter().find(|x| !seen.insert(*x)) {
        return Err(Error::spec(field, format!("duplicate value {x:?}")));
    }
    Ok(())
}

impl LindynGrid {
    fn validate(&self) -> Result<()> {
        distinct("lindyn.methods", &self.methods)?;
        nonneg("lindyn.omega", &self.omega)?;
        nonneg("lindyn.lambda", &self.lambda)?;
        nonneg("lindyn.eta", &self.eta)?;
        if self.eta.contains(&0.0) {
            return Err(Error::spec("lindyn.eta", "learning rate must be positive"));
        }
        nonneg("lindyn.sigma", &self.sigma)?;
        for (field, v) in [
            ("lindyn.lx", self.lx),
            ("lindyn.ly", self.ly),
            ("lindyn.lh", self.lh.unwrap_or(1)),
        ] {
            if v == 0 {
                return Err(Error::spec(field, "must be >= 1"));
            }
        }
        if self.record_every == 0 {
            return Err(Error::spec("lindyn.record_every", "must be >= 1"));
        }
        if self.input_std.is_some_and(|s| s <= 0.0 || !s.is_finite()) {
            return Err(Error::spec("lindyn.input_std", "must be positive"));
        }
        Ok(())
    }
}

impl CtrGrid {
    fn validate(&self) -> Result<()> {
        self.dataset
            .validate()
            .map_err(|e| Error::spec("ctr.dataset", e.to_string()))?;
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::spec("ctr.eval_fraction", "must lie in (0, 1)"));
        }
        if self.slot_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::spec("ctr.hidden_dim", "model widths must be >= 1"));
        }
        distinct("ctr.methods", &self.methods)?;
        nonneg("ctr.lambda", &self.lambda)?;
        nonempty("ctr.perturbation", &self.perturbation)?;
        for p in &self.perturbation {
            p.validate()
                .map_err(|e| Error::spec("ctr.perturbation", e.to_string()))?;
        }
        if !(self.scr_perturb_fraction > 0.0 && self.scr_perturb_fraction <= 1.0) {
            return Err(Error::spec("ctr.scr_perturb_fraction", "must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::spec("ctr.batch_size", "must be >= 1"));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::spec("ctr.learning_rate", "must be >= 0"));
        }
        Ok(())
    }
}

impl ExperimentSpec {
    /// Fills the grid for the selected mode with defaults and validates.
    pub fn normalize(mut self) -> Result<Self> {
        if self.replicas == 0 {
            return Err(Error::spec("replicas", "must be >= 1"));
        }
        match self.mode {
            Mode::Lindyn => {
                if self.ctr.is_some() {
                    return Err(Error::spec("ctr", "not allowed in lindyn mode"));
                }
                self.lindyn.get_or_insert_with(LindynGrid::default).validate()?;
            }
            Mode::Ctr => {
                if self.lindyn.is_some() {
                    return Err(Error::spec("lindyn", "not allowed in ctr mode"));
                }
                self.ctr.get_or_insert_with(CtrGrid::default).validate()?;
            }
        }
        Ok(self)
    }

    pub fn lindyn_grid(&self) -> Option<&LindynGrid> {
        self.lindyn.as_ref()
    }

    pub fn ctr_grid(&self) -> Option<&CtrGrid> {
        self.ctr.as_ref()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Parses and validates spec text, filling defaults.
pub fn parse_spec(text: &str) -> Result<ExperimentSpec> {
    let raw: ExperimentSpec = serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        let field = msg
            .split('`')
            .nth(1)
            .map(str::to_owned)
            .unwrap_or_else(|| "<document>".to_owned());
        Error::spec(field, msg)
    })?;
    raw.normalize()
}
