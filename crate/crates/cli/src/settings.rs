//! Config loading and the mapping from flags and `run` keys to solver inputs.

use std::path::Path;

use pool_ldp::lln::typical_loss;
use pool_ldp::variational::RateOptions;
use pool_ldp::{Config, FactorModel, Pool, RawConfig, Variant};
use serde_json::Value;

use crate::error::CliError;

/// Reads a config document. A manifest written by an earlier run is
/// accepted too; its `config` snapshot is used.
pub fn load(path: &Path) -> Result<RawConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    from_text(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn from_text(text: &str) -> Result<RawConfig, CliError> {
    let value: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
    let doc = match value {
        Value::Object(mut map) if map.contains_key("subcommand") && map.contains_key("config") => {
            map.remove("config").expect("checked above")
        }
        other => other,
    };
    serde_json::from_value(doc).map_err(|e| CliError::Config(format!("invalid config: {e}")))
}

pub fn set(raw: &mut RawConfig, key: &str, value: Option<impl Into<Value>>) {
    if let Some(v) = value {
        raw.run.insert(key.to_string(), v.into());
    }
}

pub fn variant(raw: &RawConfig) -> Result<Variant, CliError> {
    match raw.run_str("variant")? {
        None => Ok(Variant::Full),
        Some(s) => s.parse().map_err(|e: pool_ldp::Error| CliError::Config(e.to_string())),
    }
}

pub fn rate_options(raw: &RawConfig) -> Result<RateOptions, CliError> {
    let mut opts = RateOptions::default();
    if let Some(s) = raw.run_str("solver")? {
        opts.solver = s;
    }
    if let Some(r) = raw.run_u64("restarts")? {
        opts.restarts = r as usize;
    }
    if let Some(s) = raw.run_u64("seed")? {
        opts.seed = s;
    }
    if let Some(m) = raw.run_u64("max_iter")? {
        opts.lbfgs.max_iter = m as usize;
    }
    Ok(opts)
}

pub fn flag(raw: &RawConfig, key: &str) -> Result<bool, CliError> {
    match raw.run.get(key) {
        None | Some(Value::Null) => Ok(false),
        Some(Value::Bool(b)) => Ok(*b),
        Some(_) => Err(CliError::Config(format!("run.{key} must be a boolean"))),
    }
}

/// Parses `a:b:s` (inclusive range) or a comma-separated list of levels.
pub fn parse_levels(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = |why: &str| CliError::Config(format!("bad level list '{spec}': {why}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("not a number"));
    let levels: Vec<f64> = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [a, b, s] = parts[..] else {
            return Err(bad("expected start:stop:step"));
        };
        let (a, b, s) = (num(a)?, num(b)?, num(s)?);
        if !(s > 0.0) || b < a {
            return Err(bad("need step > 0 and stop >= start"));
        }
        let count = ((b - a) / s + 1e-9).floor() as usize + 1;
        (0..count).map(|k| ((a + k as f64 * s) * 1e12).round() / 1e12).collect()
    } else {
        spec.split(',').map(num).collect::<Result<_, _>>()?
    };
    if levels.is_empty() {
        return Err(bad("empty"));
    }
    if levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(bad("levels must lie in (0, 1)"));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(bad("levels must be strictly increasing"));
    }
    Ok(levels)
}

pub fn join_levels(levels: &[f64]) -> String {
    levels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",")
}

/// The pool with the variant applied, plus the factor and `c` when the
/// factor enters the rate function.
pub struct Problem {
    pub pool: Pool,
    pub factor: Option<(FactorModel, f64)>,
}

impl Problem {
    pub fn factor_ref(&self) -> Option<(&FactorModel, f64)> {
        self.factor.as_ref().map(|(f, c)| (f, *c))
    }

    pub fn typical_terminal(&self, cfg: &Config) -> Result<f64, CliError> {
        Ok(typical_loss(&self.pool, cfg.grid)?.terminal())
    }
}

pub fn problem(cfg: &Config, variant: Variant) -> Result<Problem, CliError> {
    let pool = cfg.pool.with_variant(variant);
    let factor = if cfg.factor.active() && pool.has_systematic() {
        let c = cfg.scaling.c_limit().ok_or_else(|| {
            CliError::Config(format!(
                "scaling a={} q={} is not critical for factor exponent {}: 2*zeta*q must equal 1 for rate computations",
                cfg.scaling.a(),
                cfg.scaling.q(),
                cfg.scaling.zeta()
            ))
        })?;
        Some((cfg.factor.clone(), c))
    } else {
        None
    };
    Ok(Problem { pool, factor })
}
