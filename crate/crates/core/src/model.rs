//! Domain types shared by every other module: name types, pools, time grids
//! and piecewise-linear paths on those grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bound on the magnitude of every name-type parameter.
pub const DEFAULT_K_MAX: f64 = 100.0;

/// Parameters of one pool component.
///
/// The intensity follows a square-root diffusion mean-reverting at rate
/// `alpha` to `lambda_bar`, jumps by `beta_c / N` at every default in the
/// pool and responds to the systematic factor through `beta_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NameType {
    pub alpha: f64,
    pub lambda_bar: f64,
    pub sigma: f64,
    pub beta_c: f64,
    pub beta_s: f64,
    pub lambda0: f64,
}

impl NameType {
    pub fn validate(&self, k_max: f64) -> Result<()> {
        let nonneg = [
            ("alpha", self.alpha),
            ("lambda_bar", self.lambda_bar),
            ("sigma", self.sigma),
            ("beta_c", self.beta_c),
            ("lambda0", self.lambda0),
        ];
        for (name, value) in nonneg {
            if !value.is_finite() {
                return Err(Error::Config(format!("{name} is not finite")));
            }
            if value < 0.0 {
                return Err(Error::NegativeParameter { name, value });
            }
        }
        if !self.beta_s.is_finite() {
            return Err(Error::Config("beta_s is not finite".into()));
        }
        for (name, value) in nonneg.into_iter().chain([("beta_s", self.beta_s)]) {
            if value.abs() > k_max {
                return Err(Error::ParameterBound {
                    name,
                    value,
                    bound: k_max,
                });
            }
        }
        Ok(())
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        if !variant.contagion() {
            self.beta_c = 0.0;
        }
        if !variant.systematic() {
            self.beta_s = 0.0;
        }
        self
    }
}

/// Which risk channels are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    Contagion,
    Systematic,
    Independent,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::Contagion,
        Variant::Systematic,
        Variant::Independent,
    ];

    pub fn contagion(self) -> bool {
        matches!(self, Variant::Full | Variant::Contagion)
    }

    pub fn systematic(self) -> bool {
        matches!(self, Variant::Full | Variant::Systematic)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Contagion => "contagion",
            Variant::Systematic => "systematic",
            Variant::Independent => "independent",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "variant",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub weight: f64,
    pub name_type: NameType,
}

/// A finite mixture of name types together with the pool size and horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    bins: Vec<Bin>,
    n_names: usize,
    horizon: f64,
}

impl Pool {
    /// Builds a pool, normalizing weights that sum to one within `1e-9`.
    pub fn new(bins: Vec<Bin>, n_names: usize, horizon: f64, k_max: f64) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::Config("pool has no bins".into()));
        }
        if n_names == 0 {
            return Err(Error::Config("n_names must be positive".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        let mut total = 0.0;
        for bin in &bins {
            if !(bin.weight > 0.0 && bin.weight <= 1.0) {
                return Err(Error::Config(format!(
                    "bin weight must lie in (0, 1], got {}",
                    bin.weight
                )));
            }
            bin.name_type.validate(k_max)?;
            total += bin.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("bin weights sum to {total}, not 1")));
        }
        let bins = bins
            .into_iter()
            .map(|b| Bin {
                weight: b.weight / total,
                ..b
            })
            .collect();
        Ok(Pool {
            bins,
            n_names,
            horizon,
        })
    }

    /// Single-bin pool.
    pub fn homogeneous(name_type: NameType, n_names: usize, horizon: f64) -> Result<Self> {
        Pool::new(
            vec![Bin {
                weight: 1.0,
                name_type,
            }],
            n_names,
            horizon,
            DEFAULT_K_MAX,
        )
    }

    pub fn bins(&self) -> &[Bin] {
        &self.bins
    }

    pub fn n_names(&self) -> usize {
        self.n_names
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn weights(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.weight).collect()
    }

    pub fn with_n_names(&self, n_names: usize) -> Self {
        Pool {
            n_names: n_names.max(1),
            ..self.clone()
        }
    }

    /// Copy of the pool with contagion and/or systematic sensitivities zeroed.
    pub fn with_variant(&self, variant: Variant) -> Self {
        Pool {
            bins: self
                .bins
                .iter()
                .map(|b| Bin {
                    weight: b.weight,
                    name_type: b.name_type.with_variant(variant),
                })
                .collect(),
            ..self.clone()
        }
    }

    pub fn has_systematic(&self) -> bool {
        self.bins.iter().any(|b| b.name_type.beta_s != 0.0)
    }
}

/// Uniform grid `t_k = k T / M`, `k = 0..=M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("grid horizon must be positive, got {horizon}")));
        }
        if steps < 2 {
            return Err(Error::Config(format!("grid needs at least 2 steps, got {steps}")));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.steps as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    pub fn ensure_same(&self, other: &TimeGrid, what: &str) -> Result<()> {
        if self.steps != other.steps || (self.horizon - other.horizon).abs() > 1e-12 {
            return Err(Error::GridMismatch(format!(
                "{what}: ({}, {}) vs ({}, {})",
                self.horizon, self.steps, other.horizon, other.steps
            )));
        }
        Ok(())
    }
}

/// Piecewise-linear function on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPath {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl GridPath {
    fn checked(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.nodes() {
            return Err(Error::GridMismatch(format!(
                "path has {} values, grid has {} nodes",
                values.len(),
                grid.nodes()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidPath(format!("non-finite value {v}")));
        }
        if values[0] != 0.0 {
            return Err(Error::InvalidPath(format!("path starts at {}, not 0", values[0])));
        }
        Ok(GridPath { grid, values })
    }

    /// A loss path: starts at 0, nondecreasing, stays in `[0, 1]`.
    pub fn loss(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        let path = Self::checked(grid, values)?;
        path.check_loss()?;
        Ok(path)
    }

    /// A factor path: starts at 0, otherwise unrestricted.
    pub fn factor(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        Self::checked(grid, values)
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        GridPath {
            grid,
            values: vec![0.0; grid.nodes()],
        }
    }

    /// Samples `f` at the nodes; `f(0)` is replaced by 0.
    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        let mut values: Vec<f64> = grid.times().into_iter().map(f).collect();
        values[0] = 0.0;
        GridPath { grid, values }
    }

    /// Builds a path from its per-interval increments.
    pub fn from_increments(grid: TimeGrid, increments: &[f64]) -> Result<Self> {
        if increments.len() != grid.steps() {
            return Err(Error::GridMismatch(format!(
                "{} increments for {} steps",
                increments.len(),
                grid.steps()
            )));
        }
        let mut values = Vec::with_capacity(grid.nodes());
        let mut acc = 0.0;
        values.push(0.0);
        for du in increments {
            acc += du;
            values.push(acc);
        }
        Self::checked(grid, values)
    }

    pub fn check_loss(&self) -> Result<()> {
        for (k, w) in self.values.windows(2).enumerate() {
            if w[1] < w[0] {
                return Err(Error::InvalidPath(format!(
                    "loss path decreases at node {}: {} -> {}",
                    k + 1,
                    w[0],
                    w[1]
                )));
            }
        }
        let last = self.terminal();
        if last > 1.0 + 1e-12 {
            return Err(Error::InvalidPath(format!("loss path exceeds 1: {last}")));
        }
        Ok(())
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("grid has nodes")
    }

    pub fn increments(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn slopes(&self) -> Vec<f64> {
        let dt = self.grid.dt();
        self.values.windows(2).map(|w| (w[1] - w[0]) / dt).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Linear interpolation; `t` is clamped to `[0, T]`.
    pub fn value_at(&self, t: f64) -> f64 {
        interpolate(&self.grid, &self.values, t)
    }
}

pub(crate) fn interpolate(grid: &TimeGrid, values: &[f64], t: f64) -> f64 {
    let x = (t / grid.dt()).clamp(0.0, grid.steps() as f64);
    let k = (x.floor() as usize).min(grid.steps() - 1);
    let frac = x - k as f64;
    values[k] + frac * (values[k + 1] - values[k])
}

/// `phi_bar(t_k) = sum_i w_i phi_i(t_k)`.
pub fn mixture_path(pool: &Pool, bin_paths: &[GridPath]) -> Result<GridPath> {
    if bin_paths.len() != pool.bins().len() {
        return Err(Error::InvalidInput(format!(
            "{} bin paths for {} bins",
            bin_paths.len(),
            pool.bins().len()
        )));
    }
    let grid = *bin_paths[0].grid();
    let mut values = vec![0.0; grid.nodes()];
    for (bin, path) in pool.bins().iter().zip(bin_paths) {
        grid.ensure_same(path.grid(), "mixture_path")?;
        path.check_loss()?;
        for (acc, v) in values.iter_mut().zip(path.values()) {
            *acc += bin.weight * v;
        }
    }
    GridPath::loss(grid, values)
}

/// Size of the systematic perturbation as a function of pool size:
/// `eps_N = a N^{-q}`, paired with the factor's exponent `zeta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRegime {
    a: f64,
    q: f64,
    zeta: f64,
}

impl ScalingRegime {
    pub fn new(a: f64, q: f64, zeta: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) || !(q >= 0.0 && q.is_finite()) {
            return Err(Error::Config(format!("invalid scaling rule a={a}, q={q}")));
        }
        if !(zeta > 0.0 && zeta <= 1.0) {
            return Err(Error::Config(format!("zeta must lie in (0, 1], got {zeta}")));
        }
        Ok(ScalingRegime { a, q, zeta })
    }

    /// `eps_N = N^{-1/(2 zeta)}`, the rule for which `N eps_N^{2 zeta} = 1`.
    pub fn critical(zeta: f64) -> Result<Self> {
        Self::new(1.0, 1.0 / (2.0 * zeta), zeta)
    }

    pub fn epsilon(&self, n: usize) -> f64 {
        self.a * (n as f64).powf(-self.q)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// `N eps_N^{2 zeta}`, when it does not depend on `N`.
    pub fn c_limit(&self) -> Option<f64> {
        if (2.0 * self.zeta * self.q - 1.0).abs() < 1e-12 {
            Some(self.a.powf(2.0 * self.zeta))
        } else {
            None
        }
    }

    pub fn n_eps(&self, n: usize) -> f64 {
        n as f64 * self.epsilon(n).powf(2.0 * self.zeta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn portfolio1() -> NameType {
        NameType {
            alpha: 1.0,
            lambda_bar: 1.0,
            sigma: 0.9,
            beta_c: 3.0,
            beta_s: 10.0,
            lambda0: 0.5,
        }
    }

    #[test]
    fn negative_sigma_rejected() {
        let p = NameType {
            sigma: -1.0,
            ..portfolio1()
        };
        let err = Pool::homogeneous(p, 200, 1.0).unwrap_err();
        assert!(err.to_string().contains("negative parameter"), "{err}");
    }

    #[test]
    fn beta_s_may_be_negative_but_bounded() {
        let p = NameType {
            beta_s: -5.0,
            ..portfolio1()
        };
        assert!(Pool::homogeneous(p, 10, 1.0).is_ok());
        let p = NameType {
            beta_s: -500.0,
            ..portfolio1()
        };
        assert!(matches!(
            Pool::homogeneous(p, 10, 1.0),
            Err(Error::ParameterBound { .. })
        ));
    }

    #[test]
    fn weights_must_sum_to_one() {
        let bin = |w| Bin {
            weight: w,
            name_type: portfolio1(),
        };
        assert!(Pool::new(vec![bin(0.5), bin(0.4)], 10, 1.0, DEFAULT_K_MAX).is_err());
        let pool = Pool::new(
            vec![bin(0.333333333333), bin(0.666666666667)],
            10,
            1.0,
            DEFAULT_K_MAX,
        )
        .unwrap();
        let total: f64 = pool.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert!(Pool::new(vec![], 10, 1.0, DEFAULT_K_MAX).is_err());
    }

    #[test]
    fn mixture_of_two_bins() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let pool = Pool::new(
            vec![
                Bin {
                    weight: 1.0 / 3.0,
                    name_type: portfolio1(),
                },
                Bin {
                    weight: 2.0 / 3.0,
                    name_type: portfolio1(),
                },
            ],
            10,
            1.0,
            DEFAULT_K_MAX,
        )
        .unwrap();
        let a = GridPath::from_fn(grid, |t| 0.9 * t);
        let b = GridPath::from_fn(grid, |t| 0.6 * t);
        let bar = mixture_path(&pool, &[a, b]).unwrap();
        assert!((bar.terminal() - 0.7).abs() < 1e-15);
        let zero = mixture_path(&pool, &[GridPath::zeros(grid), GridPath::zeros(grid)]).unwrap();
        assert!(zero.is_zero());
    }

    #[test]
    fn mixture_single_bin_is_identity() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let pool = Pool::homogeneous(portfolio1(), 10, 1.0).unwrap();
        let phi = GridPath::from_fn(grid, |t| 0.5 * t * t);
        assert_eq!(mixture_path(&pool, &[phi.clone()]).unwrap(), phi);
    }

    #[test]
    fn mixture_rejects_mismatched_grids() {
        let pool = Pool::new(
            vec![
                Bin {
                    weight: 0.5,
                    name_type: portfolio1(),
                },
                Bin {
                    weight: 0.5,
                    name_type: portfolio1(),
                },
            ],
            10,
            1.0,
            DEFAULT_K_MAX,
        )
        .unwrap();
        let a = GridPath::zeros(TimeGrid::new(1.0, 4).unwrap());
        let b = GridPath::zeros(TimeGrid::new(1.0, 5).unwrap());
        assert!(matches!(
            mixture_path(&pool, &[a, b]),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn loss_path_invariants() {
        let grid = TimeGrid::new(1.0, 3).unwrap();
        assert!(GridPath::loss(grid, vec![0.0, 0.2, 0.1, 0.3]).is_err());
        assert!(GridPath::loss(grid, vec![0.1, 0.2, 0.3, 0.4]).is_err());
        assert!(GridPath::loss(grid, vec![0.0, 0.2, 0.3, 1.2]).is_err());
        assert!(GridPath::factor(grid, vec![0.0, -2.0, 5.0, 1.0]).is_ok());
    }

    #[test]
    fn critical_scaling_is_constant_in_n() {
        for zeta in [1.0, 0.5] {
            let s = ScalingRegime::critical(zeta).unwrap();
            for n in [10, 100, 1000] {
                assert!((s.n_eps(n) - 1.0).abs() < 1e-12, "zeta={zeta} n={n}");
            }
            assert_eq!(s.c_limit(), Some(1.0));
        }
        assert!(ScalingRegime::new(1.0, 0.5, 0.5).unwrap().c_limit().is_none());
    }

    #[test]
    fn grid_endpoints() {
        let grid = TimeGrid::new(2.0, 7).unwrap();
        assert_eq!(grid.time(0), 0.0);
        assert_eq!(grid.time(7), 2.0);
        assert!(TimeGrid::new(1.0, 1).is_err());
    }
}
