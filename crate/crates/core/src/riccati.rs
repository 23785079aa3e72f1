//! Exponential-affine transform of the conditional intensity.
//!
//! For a name type `p`, a loss path `phi` and a factor path `psi`, the
//! conditional survival probability is `exp(-Γ(t))` with
//!
//! ```text
//! Γ(t) = θ_t(t) λ0 + α λ̄ ∫_0^t θ_t(r) dr + βᶜ ∫_0^t θ_t(t - r) dφ(r)
//! ```
//!
//! where, as a function of time-to-go `u`, each `θ_t` solves the Riccati ODE
//! `θ_t'(u) = 1 - α θ_t(u) - σ²θ_t(u)²/2 + βˢ ψ'(t - u) θ_t(u)`, `θ_t(0) = 0`.
//! When `βˢ ψ' ≡ 0` every `θ_t` equals the same function `b`.

use crate::error::{Error, Result};
use crate::model::{interpolate, GridPath, NameType, TimeGrid};

/// Relative mass threshold above which floored density values are logged.
const FLOOR_WARN_MASS: f64 = 1e-6;

#[inline]
fn rhs(p: &NameType, a: f64, theta: f64) -> f64 {
    1.0 + (a - p.alpha) * theta - 0.5 * p.sigma * p.sigma * theta * theta
}

#[inline]
fn rhs_dtheta(p: &NameType, a: f64, theta: f64) -> f64 {
    (a - p.alpha) - p.sigma * p.sigma * theta
}

#[inline]
pub(crate) fn rk4_step(p: &NameType, a: f64, h: f64, y: f64) -> f64 {
    let k1 = rhs(p, a, y);
    let k2 = rhs(p, a, y + 0.5 * h * k1);
    let k3 = rhs(p, a, y + 0.5 * h * k2);
    let k4 = rhs(p, a, y + h * k3);
    y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// One RK4 step together with its derivatives with respect to the state and
/// to the coefficient `a`.
#[inline]
pub(crate) fn rk4_step_tangent(p: &NameType, a: f64, h: f64, y: f64) -> (f64, f64, f64) {
    let k1 = rhs(p, a, y);
    let k1_y = rhs_dtheta(p, a, y);
    let k1_a = y;

    let y2 = y + 0.5 * h * k1;
    let y2_y = 1.0 + 0.5 * h * k1_y;
    let y2_a = 0.5 * h * k1_a;
    let k2 = rhs(p, a, y2);
    let k2_y = rhs_dtheta(p, a, y2) * y2_y;
    let k2_a = rhs_dtheta(p, a, y2) * y2_a + y2;

    let y3 = y + 0.5 * h * k2;
    let y3_y = 1.0 + 0.5 * h * k2_y;
    let y3_a = 0.5 * h * k2_a;
    let k3 = rhs(p, a, y3);
    let k3_y = rhs_dtheta(p, a, y3) * y3_y;
    let k3_a = rhs_dtheta(p, a, y3) * y3_a + y3;

    let y4 = y + h * k3;
    let y4_y = 1.0 + h * k3_y;
    let y4_a = h * k3_a;
    let k4 = rhs(p, a, y4);
    let k4_y = rhs_dtheta(p, a, y4) * y4_y;
    let k4_a = rhs_dtheta(p, a, y4) * y4_a + y4;

    let next = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    let d_y = 1.0 + h / 6.0 * (k1_y + 2.0 * k2_y + 2.0 * k3_y + k4_y);
    let d_a = h / 6.0 * (k1_a + 2.0 * k2_a + 2.0 * k3_a + k4_a);
    (next, d_y, d_a)
}

/// `b` and `ḃ` at the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiCurve {
    pub b: GridPath,
    pub b_dot: Vec<f64>,
}

/// Solves `ḃ = 1 - σ²b²/2 - αb`, `b(0) = 0` with classical RK4.
pub fn solve_b(p: &NameType, grid: TimeGrid) -> RiccatiCurve {
    let h = grid.dt();
    let mut b = Vec::with_capacity(grid.nodes());
    b.push(0.0);
    for k in 0..grid.steps() {
        b.push(rk4_step(p, 0.0, h, b[k]));
    }
    let b_dot = b.iter().map(|&x| rhs(p, 0.0, x)).collect();
    RiccatiCurve {
        b: GridPath::factor(grid, b).expect("b starts at 0"),
        b_dot,
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ThetaStorage {
    /// All rows equal `b`.
    Shared(Vec<f64>),
    /// `rows[j][m] = θ_{t_j}(u_m)`, `m = 0..=j`.
    Rows(Vec<Vec<f64>>),
}

/// Lower-triangular table of `θ_{t_j}(u_m)` for `0 <= m <= j <= M`, indexed
/// by time-to-go `u_m = m Δt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaFamily {
    grid: TimeGrid,
    name_type: NameType,
    slopes: Vec<f64>,
    storage: ThetaStorage,
}

impl ThetaFamily {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn name_type(&self) -> &NameType {
        &self.name_type
    }

    pub fn psi_dependent(&self) -> bool {
        matches!(self.storage, ThetaStorage::Rows(_))
    }

    /// `θ_{t_j}(u_m)`.
    #[inline]
    pub fn get(&self, j: usize, m: usize) -> f64 {
        debug_assert!(m <= j);
        match &self.storage {
            ThetaStorage::Shared(b) => b[m],
            ThetaStorage::Rows(rows) => rows[j][m],
        }
    }

    /// The function `u ↦ θ_{t_j}(u)` on `u_0..=u_j`.
    pub fn row(&self, j: usize) -> &[f64] {
        match &self.storage {
            ThetaStorage::Shared(b) => &b[..=j],
            ThetaStorage::Rows(rows) => &rows[j],
        }
    }

    pub fn max_value(&self) -> f64 {
        match &self.storage {
            ThetaStorage::Shared(b) => b.iter().copied().fold(0.0, f64::max),
            ThetaStorage::Rows(rows) => rows
                .iter()
                .flat_map(|r| r.iter().copied())
                .fold(0.0, f64::max),
        }
    }

    /// Reverse-mode sweep along row `j`: given `seeds[m] = ∂F/∂θ_{t_j}(u_m)`,
    /// adds `∂F/∂ψ'_k` to `grad_slopes[k]`.
    pub(crate) fn accumulate_slope_gradient(&self, j: usize, seeds: &[f64], grad_slopes: &mut [f64]) {
        let p = &self.name_type;
        if p.beta_s == 0.0 {
            return;
        }
        let h = self.grid.dt();
        let row = self.row(j);
        let mut adj = 0.0;
        for m in (1..=j).rev() {
            adj += seeds[m];
            let k = j - m;
            let a = p.beta_s * self.slopes[k];
            let (_, d_y, d_a) = rk4_step_tangent(p, a, h, row[m - 1]);
            grad_slopes[k] += adj * d_a * p.beta_s;
            adj *= d_y;
        }
    }
}

/// Solves the Riccati family for every grid time by marching in time-to-go.
///
/// On the `u`-interval `[u_m, u_{m+1}]` of row `j` the factor slope is the
/// constant slope of `psi` on `[t_{j-m-1}, t_{j-m}]`, so each step is a
/// constant-coefficient RK4 step.
pub fn solve_theta_family(p: &NameType, psi: &GridPath, grid: TimeGrid) -> Result<ThetaFamily> {
    grid.ensure_same(psi.grid(), "solve_theta_family")?;
    let slopes = psi.slopes();
    if p.beta_s == 0.0 || psi.is_zero() {
        let b = solve_b(p, grid).b.into_values();
        return Ok(ThetaFamily {
            grid,
            name_type: *p,
            slopes,
            storage: ThetaStorage::Shared(b),
        });
    }
    let h = grid.dt();
    let mut rows = Vec::with_capacity(grid.nodes());
    for j in 0..=grid.steps() {
        let mut row = Vec::with_capacity(j + 1);
        row.push(0.0);
        for m in 0..j {
            let a = p.beta_s * slopes[j - m - 1];
            let next = rk4_step(p, a, h, row[m]);
            if !next.is_finite() {
                return Err(Error::NonConvergence {
                    what: "theta family",
                    iterations: m,
                    residual: f64::INFINITY,
                });
            }
            row.push(next);
        }
        rows.push(row);
    }
    Ok(ThetaFamily {
        grid,
        name_type: *p,
        slopes,
        storage: ThetaStorage::Rows(rows),
    })
}

/// Per-name-type precomputation reused across many loss paths: the θ table
/// and the loss-independent part of Γ.
#[derive(Debug, Clone)]
pub struct BinKernel {
    theta: ThetaFamily,
    base: Vec<f64>,
    /// Toeplitz convolution weights when θ does not depend on `t`.
    shared_kernel: Option<Vec<f64>>,
}

impl BinKernel {
    pub fn new(theta: ThetaFamily) -> Self {
        let p = theta.name_type;
        let grid = theta.grid;
        let dt = grid.dt();
        let mut base = vec![0.0; grid.nodes()];
        for (j, slot) in base.iter_mut().enumerate().skip(1) {
            let row = theta.row(j);
            let trap: f64 = row.iter().sum::<f64>() - 0.5 * (row[0] + row[j]);
            *slot = row[j] * p.lambda0 + p.alpha * p.lambda_bar * trap * dt;
        }
        let shared_kernel = match &theta.storage {
            ThetaStorage::Shared(b) => Some(b.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()),
            ThetaStorage::Rows(_) => None,
        };
        BinKernel {
            theta,
            base,
            shared_kernel,
        }
    }

    pub fn for_path(p: &NameType, psi: &GridPath) -> Result<Self> {
        Ok(Self::new(solve_theta_family(p, psi, *psi.grid())?))
    }

    pub fn theta(&self) -> &ThetaFamily {
        &self.theta
    }

    pub fn name_type(&self) -> &NameType {
        &self.theta.name_type
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.theta.grid
    }

    /// Midpoint kernel `θ_{t_j}(t_j - r)` on the calendar interval `k < j`.
    #[inline]
    pub fn kernel(&self, j: usize, k: usize) -> f64 {
        match &self.shared_kernel {
            Some(kb) => kb[j - k - 1],
            None => {
                let row = self.theta.row(j);
                0.5 * (row[j - k] + row[j - k - 1])
            }
        }
    }

    /// Loss-independent part of Γ.
    pub fn base(&self) -> &[f64] {
        &self.base
    }

    /// `Γ` at the nodes for loss increments `dphi` (no monotone repair).
    pub fn gamma_raw(&self, dphi: &[f64], out: &mut [f64]) {
        let beta_c = self.theta.name_type.beta_c;
        out.copy_from_slice(&self.base);
        if beta_c == 0.0 {
            return;
        }
        let steps = self.grid().steps();
        match &self.shared_kernel {
            Some(kb) => {
                for j in 1..=steps {
                    let mut acc = 0.0;
                    for k in 0..j {
                        acc += kb[j - k - 1] * dphi[k];
                    }
                    out[j] += beta_c * acc;
                }
            }
            None => {
                for j in 1..=steps {
                    let row = self.theta.row(j);
                    let mut acc = 0.0;
                    for k in 0..j {
                        acc += 0.5 * (row[j - k] + row[j - k - 1]) * dphi[k];
                    }
                    out[j] += beta_c * acc;
                }
            }
        }
    }

    /// Full default-time law for the loss path with increments `dphi`.
    pub fn density(&self, dphi: &[f64]) -> DensityCurve {
        let grid = *self.grid();
        let mut gamma = vec![0.0; grid.nodes()];
        self.gamma_raw(dphi, &mut gamma);
        let f = self.nodal_density(dphi, &gamma);
        DensityCurve::from_gamma(grid, gamma, f)
    }

    /// `Γ̇ exp(-Γ)` at the nodes: analytic when θ is `t`-independent,
    /// centered differences of Γ otherwise.
    fn nodal_density(&self, dphi: &[f64], gamma: &[f64]) -> Vec<f64> {
        let grid = *self.grid();
        let n = grid.nodes();
        let p = self.theta.name_type;
        let gamma_dot: Vec<f64> = match &self.theta.storage {
            ThetaStorage::Shared(b) => {
                let b_dot: Vec<f64> = b.iter().map(|&x| rhs(&p, 0.0, x)).collect();
                (0..n)
                    .map(|j| {
                        let mut conv = 0.0;
                        for k in 0..j {
                            conv += 0.5 * (b_dot[j - k] + b_dot[j - k - 1]) * dphi[k];
                        }
                        b_dot[j] * p.lambda0 + p.alpha * p.lambda_bar * b[j] + p.beta_c * conv
                    })
                    .collect()
            }
            ThetaStorage::Rows(_) => {
                let dt = grid.dt();
                (0..n)
                    .map(|j| {
                        if j == 0 {
                            (gamma[1] - gamma[0]) / dt
                        } else if j == n - 1 {
                            (gamma[j] - gamma[j - 1]) / dt
                        } else {
                            (gamma[j + 1] - gamma[j - 1]) / (2.0 * dt)
                        }
                    })
                    .collect()
            }
        };
        gamma_dot
            .iter()
            .zip(gamma)
            .map(|(gd, g)| gd * (-g).exp())
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DensityDiagnostics {
    /// Nodes where the nodal density came out negative and was set to 0.
    pub floored_nodes: usize,
    /// Nodes where Γ decreased and was held at its running maximum.
    pub monotone_repairs: usize,
    /// Probability mass removed by those repairs.
    pub repaired_mass: f64,
}

/// The default-time law on `[0, T] ∪ {★}`.
///
/// `masses[k]` is the exact probability of defaulting in `(t_k, t_{k+1}]`,
/// i.e. `exp(-Γ(t_k)) - exp(-Γ(t_{k+1}))`, so `Σ masses + survival_mass = 1`
/// up to rounding. `f` holds the nodal density for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityCurve {
    pub grid: TimeGrid,
    pub f: Vec<f64>,
    pub masses: Vec<f64>,
    pub survival_mass: f64,
    pub gamma: Vec<f64>,
    pub diagnostics: DensityDiagnostics,
}

impl DensityCurve {
    fn from_gamma(grid: TimeGrid, mut gamma: Vec<f64>, mut f: Vec<f64>) -> Self {
        let mut diagnostics = DensityDiagnostics::default();
        for j in 1..gamma.len() {
            if gamma[j] < gamma[j - 1] {
                diagnostics.monotone_repairs += 1;
                diagnostics.repaired_mass += (-gamma[j]).exp() - (-gamma[j - 1]).exp();
                gamma[j] = gamma[j - 1];
            }
        }
        for v in f.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
                diagnostics.floored_nodes += 1;
            }
        }
        if diagnostics.repaired_mass > FLOOR_WARN_MASS {
            log::warn!(
                "density repair removed {:.3e} probability mass ({} nodes)",
                diagnostics.repaired_mass,
                diagnostics.monotone_repairs
            );
        }
        let surv: Vec<f64> = gamma.iter().map(|g| (-g).exp()).collect();
        let masses = surv.windows(2).map(|w| w[0] - w[1]).collect();
        DensityCurve {
            grid,
            f,
            masses,
            survival_mass: *surv.last().expect("grid has nodes"),
            gamma,
            diagnostics,
        }
    }

    /// `∫_0^T f`, integrated exactly per interval.
    pub fn default_probability(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn normalization_defect(&self) -> f64 {
        (self.default_probability() + self.survival_mass - 1.0).abs()
    }

    /// Trapezoidal integral of the nodal density; differs from
    /// [`default_probability`](Self::default_probability) by `O(Δt²)`.
    pub fn trapezoid_integral(&self) -> f64 {
        let dt = self.grid.dt();
        self.f.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dt).sum()
    }
}

/// Γ on the grid for the loss path `phi_bar` and the factor path baked into
/// `theta`.
pub fn gamma_curve(phi_bar: &GridPath, theta: &ThetaFamily) -> Result<GridPath> {
    theta.grid.ensure_same(phi_bar.grid(), "gamma_curve")?;
    phi_bar.check_loss()?;
    let kernel = BinKernel::new(theta.clone());
    let mut gamma = vec![0.0; theta.grid.nodes()];
    kernel.gamma_raw(&phi_bar.increments(), &mut gamma);
    GridPath::factor(theta.grid, gamma)
}

pub fn density_curve(p: &NameType, phi_bar: &GridPath, psi: &GridPath) -> Result<DensityCurve> {
    phi_bar.grid().ensure_same(psi.grid(), "density_curve")?;
    phi_bar.check_loss()?;
    let kernel = BinKernel::for_path(p, psi)?;
    Ok(kernel.density(&phi_bar.increments()))
}

/// `P{τ > t} = exp(-Γ(t))`, with Γ interpolated linearly between nodes.
pub fn survival(p: &NameType, phi_bar: &GridPath, psi: &GridPath, t: f64) -> Result<f64> {
    let grid = *phi_bar.grid();
    if !(0.0..=grid.horizon()).contains(&t) {
        return Err(Error::InvalidInput(format!(
            "time {t} outside [0, {}]",
            grid.horizon()
        )));
    }
    let theta = solve_theta_family(p, psi, grid)?;
    let gamma = gamma_curve(phi_bar, &theta)?;
    Ok((-interpolate(&grid, gamma.values(), t)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p1() -> NameType {
        NameType {
            alpha: 1.0,
            lambda_bar: 1.0,
            sigma: 0.9,
            beta_c: 3.0,
            beta_s: 10.0,
            lambda0: 0.5,
        }
    }

    fn constant_intensity() -> NameType {
        NameType {
            alpha: 0.0,
            lambda_bar: 0.0,
            sigma: 0.0,
            beta_c: 0.0,
            beta_s: 0.0,
            lambda0: 0.5,
        }
    }

    #[test]
    fn b_is_identity_without_reversion_or_noise() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let curve = solve_b(&constant_intensity(), grid);
        for (k, v) in curve.b.values().iter().enumerate() {
            assert!((v - grid.time(k)).abs() < 1e-14);
        }
        assert!(curve.b_dot.iter().all(|&d| d == 1.0));
    }

    #[test]
    fn b_is_monotone_and_bounded_by_root() {
        for (alpha, sigma) in [(1.0, 0.9), (5.0, 1.0), (0.1, 3.0), (0.0, 2.0)] {
            let p = NameType {
                alpha,
                sigma,
                ..p1()
            };
            let grid = TimeGrid::new(5.0, 500).unwrap();
            let curve = solve_b(&p, grid);
            let root = (-alpha + (alpha * alpha + 2.0 * sigma * sigma).sqrt()) / (sigma * sigma);
            for w in curve.b.values().windows(2) {
                assert!(w[1] >= w[0]);
                assert!(w[1] <= root + 1e-12);
            }
        }
    }

    #[test]
    fn theta_collapses_to_b_without_factor_sensitivity() {
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let psi = GridPath::from_fn(grid, |t| (3.0 * t).sin());
        let p = NameType { beta_s: 0.0, ..p1() };
        let theta = solve_theta_family(&p, &psi, grid).unwrap();
        assert!(!theta.psi_dependent());
        let b = solve_b(&p, grid);
        for j in 0..=50 {
            for m in 0..=j {
                assert!((theta.get(j, m) - b.b.values()[m]).abs() < 1e-10);
            }
        }
        let zero = solve_theta_family(&p1(), &GridPath::zeros(grid), grid).unwrap();
        for m in 0..=50 {
            assert!((zero.get(50, m) - b.b.values()[m]).abs() < 1e-10);
        }
    }

    #[test]
    fn theta_nonnegative_under_falling_factor() {
        let grid = TimeGrid::new(1.0, 40).unwrap();
        let psi = GridPath::from_fn(grid, |t| -3.0 * t);
        let theta = solve_theta_family(&p1(), &psi, grid).unwrap();
        assert!(theta.psi_dependent());
        for j in 0..=40 {
            assert!(theta.row(j).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn constant_intensity_is_exponential() {
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let zero = GridPath::zeros(grid);
        let d = density_curve(&constant_intensity(), &zero, &zero).unwrap();
        for (k, f) in d.f.iter().enumerate() {
            assert!((f - 0.5 * (-0.5 * grid.time(k)).exp()).abs() < 1e-12);
        }
        assert!((d.survival_mass - (-0.5f64).exp()).abs() < 1e-14);
        assert!(d.normalization_defect() < 1e-14);
        let s = survival(&constant_intensity(), &zero, &zero, 1.0).unwrap();
        assert!((s - (-0.5f64).exp()).abs() < 1e-14);
        assert_eq!(survival(&constant_intensity(), &zero, &zero, 0.0).unwrap(), 1.0);
        assert!(survival(&constant_intensity(), &zero, &zero, 1.5).is_err());
    }

    #[test]
    fn gamma_linear_without_dynamics() {
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let zero = GridPath::zeros(grid);
        let theta = solve_theta_family(&constant_intensity(), &zero, grid).unwrap();
        let phi = GridPath::from_fn(grid, |t| 0.3 * t);
        let g = gamma_curve(&phi, &theta).unwrap();
        for (k, v) in g.values().iter().enumerate() {
            assert!((v - 0.5 * grid.time(k)).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_loss_drops_contagion_term() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let zero = GridPath::zeros(grid);
        let with = solve_theta_family(&p1(), &zero, grid).unwrap();
        let g = gamma_curve(&zero, &with).unwrap();
        let p = NameType { beta_c: 0.0, ..p1() };
        let g0 = gamma_curve(&zero, &solve_theta_family(&p, &zero, grid).unwrap()).unwrap();
        assert_eq!(g, g0);
    }

    #[test]
    fn tangent_matches_finite_difference() {
        let p = p1();
        let (h, y, a) = (0.01, 0.7, 2.5);
        let (_, d_y, d_a) = rk4_step_tangent(&p, a, h, y);
        let e = 1e-6;
        let fd_y = (rk4_step(&p, a, h, y + e) - rk4_step(&p, a, h, y - e)) / (2.0 * e);
        let fd_a = (rk4_step(&p, a + e, h, y) - rk4_step(&p, a - e, h, y)) / (2.0 * e);
        assert!((d_y - fd_y).abs() < 1e-8);
        assert!((d_a - fd_a).abs() < 1e-8);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let g1 = TimeGrid::new(1.0, 10).unwrap();
        let g2 = TimeGrid::new(1.0, 11).unwrap();
        assert!(matches!(
            solve_theta_family(&p1(), &GridPath::zeros(g2), g1),
            Err(Error::GridMismatch(_))
        ));
        let theta = solve_theta_family(&p1(), &GridPath::zeros(g1), g1).unwrap();
        assert!(gamma_curve(&GridPath::zeros(g2), &theta).is_err());
    }
}
