use std::path::{Path, PathBuf};

use infolqg::{CostSpec, GammaMax, Grid, Model, ModelParams, SimConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("bad --set override `{0}`: expected key.path=value")]
    Override(String),
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKindName {
    Quadratic,
    Power,
    AffineQuadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub kind: CostKindName,
    pub zeta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linear: Option<f64>,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            kind: CostKindName::Quadratic,
            zeta: 1e-3,
            epsilon: None,
            linear: None,
        }
    }
}

impl CostConfig {
    fn build(&self) -> Result<CostSpec, ConfigError> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| invalid(&format!("cost.{name}"), "required for this cost kind"))
        };
        let spec = match self.kind {
            CostKindName::Quadratic => CostSpec::quadratic(self.zeta),
            CostKindName::Power => CostSpec::power(self.zeta, need(self.epsilon, "epsilon")?),
            CostKindName::AffineQuadratic => CostSpec::affine_quadratic(self.zeta, need(self.linear, "linear")?),
        };
        spec.map_err(|e| invalid("cost", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    pub gamma_max_factor: f64,
    /// Absolute variance cap; takes precedence over the factor. Needed when
    /// `σ2 = 0`, where `γ⁰_∞ = 0`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_max: Option<f64>,
    pub grid_n: usize,
    /// Value-iteration step; the solver's default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hjb_dt: Option<f64>,
    pub hjb_tol: f64,
    /// Step for variance rollouts and policy-cost quadrature.
    pub ode_dt: f64,
    pub sim: SimConfig,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            gamma_max_factor: 2.5,
            gamma_max: None,
            grid_n: 4001,
            hjb_dt: None,
            hjb_tol: 1e-10,
            ode_dt: 1e-3,
            sim: SimConfig::default(),
        }
    }
}

/// Inputs of the `curves` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurvesConfig {
    /// Initial variances of the trajectory blocks, as fractions of `γ_max`.
    pub initial_fractions: Vec<f64>,
    pub horizon: f64,
    /// Output every `stride`-th rollout step.
    pub stride: usize,
}

impl Default for CurvesConfig {
    fn default() -> Self {
        CurvesConfig {
            initial_fractions: vec![0.0, 0.2, 0.6, 1.0],
            horizon: 10.0,
            stride: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelParams,
    pub cost: CostConfig,
    pub numerics: Numerics,
    pub curves: CurvesConfig,
    pub outputs: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelParams::canonical(),
            cost: CostConfig::default(),
            numerics: Numerics::default(),
            curves: CurvesConfig::default(),
            outputs: PathBuf::from("out"),
        }
    }
}

/// Sets `a.b.c = value` inside a JSON document, creating objects as needed.
/// The value is parsed as JSON and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(spec.to_string()));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut node = doc;
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            *node = Value::Object(Default::default());
        }
        node = node
            .as_object_mut()
            .expect("just made an object")
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    if !node.is_object() {
        *node = Value::Object(Default::default());
    }
    node.as_object_mut()
        .expect("object")
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn from_value(doc: Value) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_path_to_error::deserialize(doc).map_err(|e| ConfigError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_path_buf(),
                    source,
                })?;
                serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
                    path: p.display().to_string(),
                    message: e.to_string(),
                })?
            }
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        Self::from_value(doc)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Err(infolqg::Error::InvalidParams { field, reason }) = self.model.validate() {
            return Err(invalid(&format!("model.{field}"), reason));
        }
        self.cost.build()?;
        let n = &self.numerics;
        if !(n.gamma_max_factor >= 1.0 && n.gamma_max_factor.is_finite()) {
            return Err(invalid("numerics.gamma_max_factor", "must be at least 1"));
        }
        if let Some(g) = n.gamma_max {
            if !(g > 0.0 && g.is_finite()) {
                return Err(invalid("numerics.gamma_max", "must be positive"));
            }
        } else if self.model.sigma2 == 0.0 {
            return Err(invalid(
                "numerics.gamma_max",
                "required when model.sigma2 = 0 (gamma_inf is 0)",
            ));
        }
        if n.grid_n < 201 {
            return Err(invalid(
                "numerics.grid_n",
                format!("{} is below the minimum 201", n.grid_n),
            ));
        }
        if let Some(dt) = n.hjb_dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(invalid("numerics.hjb_dt", "must be positive"));
            }
        }
        if !(n.hjb_tol > 0.0 && n.hjb_tol.is_finite()) {
            return Err(invalid("numerics.hjb_tol", "must be positive"));
        }
        if !(n.ode_dt > 0.0 && n.ode_dt <= 1e-2) {
            return Err(invalid("numerics.ode_dt", "must lie in (0, 1e-2]"));
        }
        let model = self.build_model()?;
        n.sim
            .validate(&model)
            .map_err(|e| invalid("numerics.sim", e.to_string()))?;
        let c = &self.curves;
        if c.initial_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(invalid("curves.initial_fractions", "fractions must lie in [0, 1]"));
        }
        if !(c.horizon > 0.0 && c.horizon.is_finite()) {
            return Err(invalid("curves.horizon", "must be positive"));
        }
        if c.stride == 0 {
            return Err(invalid("curves.stride", "must be at least 1"));
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<Model, ConfigError> {
        let cap = match self.numerics.gamma_max {
            Some(g) => GammaMax::Absolute(g),
            None => GammaMax::Factor(self.numerics.gamma_max_factor),
        };
        Model::new(self.model, self.cost.build()?, cap).map_err(|e| invalid("model", e.to_string()))
    }

    pub fn grid(&self, model: &Model) -> Result<Grid, ConfigError> {
        Grid::for_model(model, self.numerics.grid_n).map_err(|e| invalid("numerics.grid_n", e.to_string()))
    }
}
