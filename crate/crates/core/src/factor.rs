//! Systematic-factor dynamics.
//!
//! Each factor kind implements [`FactorDynamics`] and is registered by name in
//! a [`FactorRegistry`]; configs pick one with `factor.kind`. The large-scale
//! maps `drift`/`diffusion` are the `b̄`/`κ̄` of the rescaled factor
//! `X^N = eps_N X`, which obeys `dX^N = b̄(X^N) dt + eps_N^zeta κ̄(X^N) dV`.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait FactorDynamics: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Exponent in the speed `eps_N^{-2 zeta}` of the factor's LDP.
    fn zeta(&self) -> f64;

    fn drift(&self, x: f64) -> f64;

    fn drift_dx(&self, x: f64) -> f64;

    fn diffusion(&self, x: f64) -> f64;

    fn diffusion_dx(&self, x: f64) -> f64;

    /// Whether the diffusion map vanishes somewhere on the real line.
    fn degenerate(&self) -> bool {
        false
    }

    /// False for the "no factor" placeholder.
    fn active(&self) -> bool {
        true
    }

    fn spec(&self) -> FactorSpec;
}

pub type FactorModel = Arc<dyn FactorDynamics>;

/// Serializable description of a factor, as found in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub kind: String,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xbar: Option<f64>,
}

impl FactorSpec {
    pub fn none() -> Self {
        FactorSpec {
            kind: "none".into(),
            gamma: 0.0,
            xbar: None,
        }
    }

    pub fn ou(gamma: f64) -> Self {
        FactorSpec {
            kind: "ou".into(),
            gamma,
            xbar: None,
        }
    }

    pub fn build(&self) -> Result<FactorModel> {
        FactorRegistry::with_builtins().build(self)
    }
}

/// No systematic factor at all.
#[derive(Debug, Clone, Copy)]
pub struct NoFactor;

impl FactorDynamics for NoFactor {
    fn name(&self) -> &'static str {
        "none"
    }
    fn zeta(&self) -> f64 {
        1.0
    }
    fn drift(&self, _x: f64) -> f64 {
        0.0
    }
    fn drift_dx(&self, _x: f64) -> f64 {
        0.0
    }
    fn diffusion(&self, _x: f64) -> f64 {
        0.0
    }
    fn diffusion_dx(&self, _x: f64) -> f64 {
        0.0
    }
    fn active(&self) -> bool {
        false
    }
    fn spec(&self) -> FactorSpec {
        FactorSpec::none()
    }
}

/// `dX = -gamma X dt + dV`.
#[derive(Debug, Clone, Copy)]
pub struct OrnsteinUhlenbeck {
    pub gamma: f64,
}

impl FactorDynamics for OrnsteinUhlenbeck {
    fn name(&self) -> &'static str {
        "ou"
    }
    fn zeta(&self) -> f64 {
        1.0
    }
    fn drift(&self, x: f64) -> f64 {
        -self.gamma * x
    }
    fn drift_dx(&self, _x: f64) -> f64 {
        -self.gamma
    }
    fn diffusion(&self, _x: f64) -> f64 {
        1.0
    }
    fn diffusion_dx(&self, _x: f64) -> f64 {
        0.0
    }
    fn spec(&self) -> FactorSpec {
        FactorSpec::ou(self.gamma)
    }
}

/// Square-root factor, `b̄(x) = -gamma (x - xbar)`, `κ̄(x) = sqrt(x)`.
#[derive(Debug, Clone, Copy)]
pub struct SquareRoot {
    pub gamma: f64,
    pub xbar: f64,
}

impl FactorDynamics for SquareRoot {
    fn name(&self) -> &'static str {
        "cir"
    }
    fn zeta(&self) -> f64 {
        0.5
    }
    fn drift(&self, x: f64) -> f64 {
        -self.gamma * (x - self.xbar)
    }
    fn drift_dx(&self, _x: f64) -> f64 {
        -self.gamma
    }
    fn diffusion(&self, x: f64) -> f64 {
        x.max(0.0).sqrt()
    }
    fn diffusion_dx(&self, x: f64) -> f64 {
        if x > 0.0 {
            0.5 / x.sqrt()
        } else {
            0.0
        }
    }
    fn degenerate(&self) -> bool {
        true
    }
    fn spec(&self) -> FactorSpec {
        FactorSpec {
            kind: "cir".into(),
            gamma: self.gamma,
            xbar: Some(self.xbar),
        }
    }
}

type Constructor = Box<dyn Fn(&FactorSpec) -> Result<FactorModel> + Send + Sync>;

/// Name-keyed constructors for factor dynamics.
pub struct FactorRegistry {
    entries: BTreeMap<String, Constructor>,
}

impl FactorRegistry {
    pub fn empty() -> Self {
        FactorRegistry {
            entries: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register("none", |_| Ok(Arc::new(NoFactor)));
        reg.register("ou", |spec| {
            check_rate(spec.gamma)?;
            Ok(Arc::new(OrnsteinUhlenbeck { gamma: spec.gamma }))
        });
        reg.register("cir", |spec| {
            check_rate(spec.gamma)?;
            let xbar = spec
                .xbar
                .ok_or_else(|| Error::Config("cir factor requires xbar".into()))?;
            if !(xbar >= 0.0 && xbar.is_finite()) {
                return Err(Error::NegativeParameter {
                    name: "xbar",
                    value: xbar,
                });
            }
            Ok(Arc::new(SquareRoot {
                gamma: spec.gamma,
                xbar,
            }))
        });
        reg
    }

    pub fn register<F>(&mut self, name: &str, ctor: F)
    where
        F: Fn(&FactorSpec) -> Result<FactorModel> + Send + Sync + 'static,
    {
        self.entries.insert(name.to_string(), Box::new(ctor));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn build(&self, spec: &FactorSpec) -> Result<FactorModel> {
        let ctor = self.entries.get(&spec.kind).ok_or_else(|| Error::Unknown {
            kind: "factor kind",
            name: spec.kind.clone(),
        })?;
        ctor(spec)
    }
}

fn check_rate(gamma: f64) -> Result<()> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::NegativeParameter {
            name: "gamma",
            value: gamma,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_resolve_by_name() {
        let reg = FactorRegistry::with_builtins();
        assert_eq!(reg.names().collect::<Vec<_>>(), ["cir", "none", "ou"]);
        let ou = reg.build(&FactorSpec::ou(1.0)).unwrap();
        assert_eq!(ou.zeta(), 1.0);
        assert_eq!(ou.drift(2.0), -2.0);
        let cir = reg
            .build(&FactorSpec {
                kind: "cir".into(),
                gamma: 2.0,
                xbar: Some(0.5),
            })
            .unwrap();
        assert_eq!(cir.zeta(), 0.5);
        assert_eq!(cir.drift(0.5), 0.0);
        assert!(cir.degenerate());
        assert!(!reg.build(&FactorSpec::none()).unwrap().active());
    }

    #[test]
    fn bad_specs() {
        let reg = FactorRegistry::with_builtins();
        assert!(reg
            .build(&FactorSpec {
                kind: "heston".into(),
                gamma: 1.0,
                xbar: None
            })
            .is_err());
        assert!(reg
            .build(&FactorSpec {
                kind: "cir".into(),
                gamma: 1.0,
                xbar: None
            })
            .is_err());
        assert!(reg.build(&FactorSpec::ou(-1.0)).is_err());
    }

    #[test]
    fn custom_registration() {
        let mut reg = FactorRegistry::empty();
        reg.register("brownian", |_| Ok(Arc::new(OrnsteinUhlenbeck { gamma: 0.0 })));
        let f = reg
            .build(&FactorSpec {
                kind: "brownian".into(),
                gamma: 0.0,
                xbar: None,
            })
            .unwrap();
        assert_eq!(f.drift(3.0), 0.0);
    }
}
