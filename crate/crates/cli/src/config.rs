//! Experiment configuration. Files are TOML; unknown keys are errors.

use serde::{Deserialize, Serialize};

use mvsde::brownian::integer_ratio;
use mvsde::init::InitialLaw;
use mvsde::schemes::{SchemeConfig, SchemeKind, SolverConfig};
use mvsde::{builtin_model, Model, ModelConstants};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Terminal and path errors over an `h` grid against a fine-step proxy.
    Rmse,
    /// Density snapshots and moment traces.
    Density,
    /// Two coupled systems from different initial laws.
    Contraction,
    /// Mean and particle tracks over an `N` grid.
    Phase,
    /// Propagation-of-chaos errors between nested particle systems.
    Poc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRef {
    pub name: String,
    #[serde(default = "one")]
    pub d: usize,
    /// Replaces the declared constants field by field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<ModelConstants>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeEntry {
    pub kind: SchemeKind,
    #[serde(default = "half")]
    pub alpha: f64,
    #[serde(default = "yes")]
    pub enforce_h_constraint: bool,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn half() -> f64 {
    0.5
}

fn yes() -> bool {
    true
}

impl SchemeEntry {
    pub fn new(kind: SchemeKind) -> Self {
        Self { kind, alpha: 0.5, enforce_h_constraint: true, solver: SolverConfig::default() }
    }

    pub fn unconstrained(kind: SchemeKind) -> Self {
        Self { enforce_h_constraint: false, ..Self::new(kind) }
    }

    pub fn scheme(&self, h: f64, t_end: f64) -> SchemeConfig {
        SchemeConfig {
            kind: self.kind,
            h,
            t_end,
            alpha: self.alpha,
            solver: self.solver.clone(),
            enforce_h_constraint: self.enforce_h_constraint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub t_end: f64,
    pub x0: InitialLaw,
    pub h: Vec<f64>,
    pub n: Vec<usize>,
    pub model: ModelRef,
    pub schemes: Vec<SchemeEntry>,
    /// Step of the Brownian lattice; defaults to the smallest stepsize in use.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_fine: Option<f64>,
    /// Proxy stepsize for error curves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy_h: Option<f64>,
    /// Largest system of a particle-count sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy_n: Option<usize>,
    /// Initial law of the second system in contraction runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z0: Option<InitialLaw>,
    /// Stepsize of the reference run used to score density runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_h: Option<f64>,
    /// Snapshot times.
    #[serde(default)]
    pub observe: Vec<f64>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Moments are recorded every this many steps.
    #[serde(default = "one")]
    pub moment_every: usize,
    #[serde(default = "default_cap")]
    pub moment_cap: f64,
    #[serde(default = "default_tracks")]
    pub tracks: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
}

fn default_bins() -> usize {
    100
}

fn default_cap() -> f64 {
    1e8
}

fn default_tracks() -> usize {
    5
}

fn default_burn_in() -> f64 {
    0.5
}

fn multiple(a: f64, b: f64) -> bool {
    integer_ratio(a, b).is_some()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::invalid("config", e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment configs always serialise")
    }

    /// Applies `key=value` with a dotted key, e.g. `model.d=3` or
    /// `schemes.0.alpha=1`. The value is read as TOML, falling back to a string.
    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        let (key, raw) =
            assignment.split_once('=').ok_or_else(|| CliError::invalid(assignment, "expected key=value"))?;
        let key = key.trim();
        let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.trim().to_string()),
        };
        let mut root = toml::Value::try_from(self).map_err(|e| CliError::invalid(key, e.to_string()))?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let last = i + 1 == parts.len();
            node = match node {
                toml::Value::Table(t) => {
                    if last {
                        t.insert(part.to_string(), value);
                        break;
                    }
                    t.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()))
                }
                toml::Value::Array(a) => {
                    let idx: usize = part.parse().map_err(|_| CliError::invalid(key, "expected an index"))?;
                    let len = a.len();
                    let slot = a.get_mut(idx).ok_or_else(|| CliError::invalid(key, format!("index {idx} >= {len}")))?;
                    if last {
                        *slot = value;
                        break;
                    }
                    slot
                }
                _ => return Err(CliError::invalid(key, format!("`{part}` is not a table"))),
            };
        }
        let text = toml::to_string(&root).map_err(|e| CliError::invalid(key, e.to_string()))?;
        let cfg = Self::from_toml(&text)?;
        Ok(cfg)
    }

    /// Built-in model with constant overrides applied.
    pub fn build_model(&self) -> Result<Model> {
        let mut model =
            builtin_model(&self.model.name, self.model.d).map_err(|e| CliError::invalid("model", e.to_string()))?;
        if let Some(over) = &self.model.constants {
            let mut base = serde_json::to_value(&model.constants).expect("constants serialise");
            let patch = serde_json::to_value(over).expect("constants serialise");
            if let (Some(b), Some(p)) = (base.as_object_mut(), patch.as_object()) {
                for (k, v) in p {
                    if !v.is_null() {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
            model.constants =
                serde_json::from_value(base).map_err(|e| CliError::invalid("model.constants", e.to_string()))?;
            model.constants.validate().map_err(|e| CliError::invalid("model.constants", e.to_string()))?;
        }
        Ok(model)
    }

    /// Lattice resolution: `h_fine`, or the smallest stepsize any run uses.
    pub fn lattice_step(&self) -> f64 {
        self.h_fine.unwrap_or_else(|| {
            self.h.iter().chain(&self.proxy_h).chain(&self.reference_h).copied().fold(f64::INFINITY, f64::min)
        })
    }

    /// Checks everything that can be checked before any run starts.
    pub fn validate(&self) -> Result<Model> {
        let bad = |f: &str, m: String| Err(CliError::invalid(f, m));
        if self.name.trim().is_empty() {
            return bad("name", "must not be empty".into());
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad("t_end", format!("{} must be positive", self.t_end));
        }
        if self.h.is_empty() {
            return bad("h", "grid is empty".into());
        }
        if self.n.is_empty() || self.n.contains(&0) {
            return bad("n", "grid must be nonempty with positive entries".into());
        }
        if self.schemes.is_empty() {
            return bad("schemes", "no scheme given".into());
        }
        let model = self.build_model()?;
        if let Some(k) = self.x0.dim() {
            if k != model.dim() {
                return bad("x0", format!("law has {k} coordinates, model has d = {}", model.dim()));
            }
        }
        let fine = self.lattice_step();
        if !(fine > 0.0) {
            return bad("h_fine", format!("{fine} must be positive"));
        }
        if !multiple(self.t_end, fine) {
            return bad("t_end", format!("{} is not a multiple of the lattice step {fine}", self.t_end));
        }
        let mut steps: Vec<(&str, f64)> = self.h.iter().map(|&h| ("h", h)).collect();
        if let Some(p) = self.proxy_h {
            steps.push(("proxy_h", p));
        }
        if let Some(r) = self.reference_h {
            steps.push(("reference_h", r));
        }
        for (field, h) in steps {
            if !(h > 0.0) || !multiple(h, fine) {
                return bad(field, format!("{h} is not a positive multiple of the lattice step {fine}"));
            }
            if !multiple(self.t_end, h) {
                return bad(field, format!("{h} does not divide t_end = {}", self.t_end));
            }
        }
        for &t in &self.observe {
            if !(t > 0.0 && t <= self.t_end * (1.0 + 1e-12)) {
                return bad("observe", format!("time {t} outside (0, t_end]"));
            }
            if let Some(h) = self.h.iter().find(|&&h| !multiple(t, h)) {
                return bad("observe", format!("time {t} is not on the grid of h = {h}"));
            }
        }
        for (i, s) in self.schemes.iter().enumerate() {
            for &h in &self.h {
                s.scheme(h, self.t_end).validate(&model).map_err(|e| match e {
                    mvsde::Error::StepsizeConstraint { .. } => {
                        CliError::invalid(format!("schemes[{i}].enforce_h_constraint"), e.to_string())
                    }
                    other => CliError::invalid(format!("schemes[{i}]"), other.to_string()),
                })?;
            }
        }
        if self.bins == 0 {
            return bad("bins", "must be positive".into());
        }
        match self.experiment {
            ExperimentKind::Rmse if self.proxy_h.is_none() => return bad("proxy_h", "required for rmse".into()),
            ExperimentKind::Rmse if self.n.len() != 1 => return bad("n", "rmse uses a single particle count".into()),
            ExperimentKind::Contraction if self.z0.is_none() => return bad("z0", "required for contraction".into()),
            ExperimentKind::Contraction | ExperimentKind::Density if self.n.len() != 1 || self.h.len() != 1 => {
                return bad("h", "this experiment takes a single h and a single n".into())
            }
            ExperimentKind::Poc => {
                let top = match self.proxy_n {
                    Some(p) => p,
                    None => return bad("proxy_n", "required for poc".into()),
                };
                let mut levels = self.n.clone();
                levels.push(top);
                if levels.windows(2).any(|w| w[1] != 2 * w[0]) {
                    return bad("n", "levels must double, ending at proxy_n / 2".into());
                }
                if self.h.len() != 1 {
                    return bad("h", "poc takes a single h".into());
                }
            }
            _ => {}
        }
        if let Some(z) = &self.z0 {
            if z.dim().is_some_and(|k| k != model.dim()) {
                return bad("z0", "dimension does not match the model".into());
            }
        }
        Ok(model)
    }
}
