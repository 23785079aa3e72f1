//! JSON configuration documents.
//!
//! ```json
//! {
//!   "pool": {"bins": [{"weight": "1/3", "alpha": 1, "lambda_bar": 2, "sigma": 1,
//!                      "beta_c": 10, "beta_s": 5, "lambda0": 0.5}, ...],
//!            "n_names": 200, "horizon": 1.0},
//!   "factor": {"kind": "ou", "gamma": 1.0},
//!   "scaling": {"rule": "inv_sqrt_n"},
//!   "grid": {"steps": 100},
//!   "run": {"seed": 7, "reps": 200}
//! }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::factor::{FactorModel, FactorSpec};
use crate::model::{Bin, NameType, Pool, ScalingRegime, TimeGrid, DEFAULT_K_MAX};

/// A weight given either as a number or as a fraction string like `"1/3"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weight {
    Number(f64),
    Fraction(String),
}

impl Weight {
    pub fn value(&self) -> Result<f64> {
        match self {
            Weight::Number(v) => Ok(*v),
            Weight::Fraction(s) => {
                let bad = || Error::Config(format!("cannot parse weight '{s}'"));
                match s.split_once('/') {
                    Some((a, b)) => {
                        let a: f64 = a.trim().parse().map_err(|_| bad())?;
                        let b: f64 = b.trim().parse().map_err(|_| bad())?;
                        if b == 0.0 {
                            return Err(bad());
                        }
                        Ok(a / b)
                    }
                    None => s.trim().parse().map_err(|_| bad()),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawBin {
    pub weight: Weight,
    pub alpha: f64,
    pub lambda_bar: f64,
    pub sigma: f64,
    pub beta_c: f64,
    pub beta_s: f64,
    pub lambda0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPool {
    pub bins: Vec<RawBin>,
    pub n_names: usize,
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawScaling {
    Named { rule: String },
    Power { a: f64, q: f64 },
    Nested { rule: PowerRule },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRule {
    pub a: f64,
    pub q: f64,
}

impl Default for RawScaling {
    fn default() -> Self {
        RawScaling::Named {
            rule: "inv_sqrt_n".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawGrid {
    pub steps: usize,
}

impl Default for RawGrid {
    fn default() -> Self {
        RawGrid { steps: 100 }
    }
}

/// The whole document. `run` is kept as free-form JSON; each subcommand
/// reads the keys it understands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub pool: RawPool,
    #[serde(default = "FactorSpec::none")]
    pub factor: FactorSpec,
    #[serde(default)]
    pub scaling: RawScaling,
    #[serde(default)]
    pub grid: RawGrid,
    #[serde(default)]
    pub run: BTreeMap<String, Value>,
}

impl RawConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve(&self) -> Result<Config> {
        let pool = validate_pool(&self.pool)?;
        let factor = self.factor.build()?;
        let (a, q) = match &self.scaling {
            RawScaling::Named { rule } if rule == "inv_sqrt_n" => (1.0, 0.5),
            RawScaling::Named { rule } => {
                return Err(Error::Config(format!("unknown scaling rule '{rule}'")))
            }
            RawScaling::Power { a, q } | RawScaling::Nested { rule: PowerRule { a, q } } => (*a, *q),
        };
        let scaling = ScalingRegime::new(a, q, factor.zeta())?;
        let grid = TimeGrid::new(pool.horizon(), self.grid.steps)?;
        Ok(Config {
            pool,
            factor,
            scaling,
            grid,
        })
    }

    pub fn run_u64(&self, key: &str) -> Result<Option<u64>> {
        match self.run.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_u64()
                .map(Some)
                .ok_or_else(|| Error::Config(format!("run.{key} must be a non-negative integer"))),
        }
    }

    pub fn run_f64(&self, key: &str) -> Result<Option<f64>> {
        match self.run.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_f64()
                .map(Some)
                .ok_or_else(|| Error::Config(format!("run.{key} must be a number"))),
        }
    }

    pub fn run_str(&self, key: &str) -> Result<Option<String>> {
        match self.run.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(Error::Config(format!("run.{key} must be a string"))),
        }
    }
}

/// A validated configuration.
#[derive(Debug, Clone)]
pub struct Config {
    pub pool: Pool,
    pub factor: FactorModel,
    pub scaling: ScalingRegime,
    pub grid: TimeGrid,
}

pub fn validate_pool(raw: &RawPool) -> Result<Pool> {
    let bins = raw
        .bins
        .iter()
        .map(|b| {
            Ok(Bin {
                weight: b.weight.value()?,
                name_type: NameType {
                    alpha: b.alpha,
                    lambda_bar: b.lambda_bar,
                    sigma: b.sigma,
                    beta_c: b.beta_c,
                    beta_s: b.beta_s,
                    lambda0: b.lambda0,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Pool::new(bins, raw.n_names, raw.horizon, raw.k_max.unwrap_or(DEFAULT_K_MAX))
}

/// Parses a JSON document straight to a pool.
pub fn pool_from_json(text: &str) -> Result<Pool> {
    RawConfig::from_json(text)?.resolve().map(|c| c.pool)
}
