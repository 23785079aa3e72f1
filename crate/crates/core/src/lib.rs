//! Large-pool default dynamics with self-exciting contagion and a
//! systematic factor: typical loss paths, large-deviation rate functions,
//! extremal paths and Monte Carlo simulation.

pub mod config;
pub mod error;
pub mod factor;
pub mod ldp;
pub mod lln;
pub mod model;
pub mod optim;
pub mod riccati;
pub mod simulator;
pub mod variational;

pub use config::{Config, RawConfig};
pub use error::{Error, Result};
pub use factor::{FactorDynamics, FactorModel, FactorRegistry, FactorSpec};
pub use model::{mixture_path, Bin, GridPath, NameType, Pool, ScalingRegime, TimeGrid, Variant};
