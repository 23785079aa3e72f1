//! Large-deviations functionals on the grid.
//!
//! The entropy cost `g(ξ, f)` is evaluated as the relative entropy of the
//! discrete distribution {ξ increments per interval, 1 - ξ(T)} with respect
//! to {interval masses of f, survival mass}, so Gibbs' inequality holds
//! exactly at every grid size.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::factor::FactorDynamics;
use crate::model::{mixture_path, GridPath, NameType, Pool, TimeGrid};
use crate::riccati::{solve_b, BinKernel, DensityCurve};

/// Finite stand-in for `+∞`.
pub const INFEASIBLE: f64 = 1e18;

/// Floor applied to a vanishing diffusion map.
pub const EPS_KAPPA: f64 = 1e-6;

pub fn is_infeasible(value: f64) -> bool {
    !value.is_finite() || value >= INFEASIBLE
}

/// `x ln(x / y)` with `0 ln 0 = 0` and `x > 0, y <= 0` mapped to `None`.
#[inline]
pub(crate) fn xlogx_over(x: f64, y: f64) -> Option<f64> {
    if x <= 0.0 {
        Some(0.0)
    } else if y <= 0.0 {
        None
    } else {
        Some(x * (x / y).ln())
    }
}

/// Entropy cost of the loss path `xi` against the default-time law `f`.
/// Returns [`INFEASIBLE`] when `xi` puts mass where `f` has none.
pub fn entropy_g(xi: &GridPath, f: &DensityCurve) -> Result<f64> {
    f.grid.ensure_same(xi.grid(), "entropy_g")?;
    xi.check_loss()?;
    Ok(entropy_from_increments(&xi.increments(), f))
}

pub(crate) fn entropy_from_increments(increments: &[f64], f: &DensityCurve) -> f64 {
    let mut total = 0.0;
    let mut used = 0.0;
    for (u, m) in increments.iter().zip(&f.masses) {
        used += u;
        match xlogx_over(*u, *m) {
            Some(v) => total += v,
            None => return INFEASIBLE,
        }
    }
    match xlogx_over(1.0 - used, f.survival_mass) {
        Some(v) => total + v,
        None => INFEASIBLE,
    }
}

/// Relative entropy of Bernoulli(`ell`) with respect to Bernoulli(`pbar`).
pub fn bernoulli_kl(ell: f64, pbar: f64) -> f64 {
    let a = xlogx_over(ell, pbar);
    let b = xlogx_over(1.0 - ell, 1.0 - pbar);
    match (a, b) {
        (Some(a), Some(b)) => a + b,
        _ => INFEASIBLE,
    }
}

/// Factor action `½ ∫ |(ψ' + γψ)|² dt` for an Ornstein–Uhlenbeck factor,
/// using interval slopes and interval-midpoint values.
pub fn jx_ou(psi: &GridPath, gamma: f64) -> f64 {
    let dt = psi.grid().dt();
    psi.values()
        .windows(2)
        .map(|w| {
            let slope = (w[1] - w[0]) / dt;
            let mid = 0.5 * (w[0] + w[1]);
            let r = slope + gamma * mid;
            0.5 * dt * r * r
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FactorAction {
    pub value: f64,
    /// The diffusion map hit the floor [`EPS_KAPPA`] somewhere on the path.
    pub boundary_degenerate: bool,
}

/// `½ ∫ |(ψ' - b̄(ψ)) / κ̄(ψ)|² dt` for any factor dynamics.
pub fn jx_general(psi: &GridPath, factor: &dyn FactorDynamics) -> FactorAction {
    let (value, _, degenerate) = factor_action_with_grad(psi.values(), psi.grid().dt(), factor, false);
    FactorAction {
        value,
        boundary_degenerate: degenerate,
    }
}

/// Factor action and (optionally) its gradient with respect to the node
/// values `psi[1..]` (returned with length `psi.len()`, entry 0 unused).
pub(crate) fn factor_action_with_grad(
    psi: &[f64],
    dt: f64,
    factor: &dyn FactorDynamics,
    want_grad: bool,
) -> (f64, Vec<f64>, bool) {
    let mut grad = if want_grad { vec![0.0; psi.len()] } else { Vec::new() };
    if !factor.active() {
        return (0.0, grad, false);
    }
    let mut total = 0.0;
    let mut degenerate = false;
    for k in 0..psi.len() - 1 {
        let slope = (psi[k + 1] - psi[k]) / dt;
        let mid = 0.5 * (psi[k] + psi[k + 1]);
        let raw_kappa = factor.diffusion(mid);
        let (kappa, kappa_dx) = if raw_kappa.abs() < EPS_KAPPA {
            degenerate = true;
            (EPS_KAPPA, 0.0)
        } else {
            (raw_kappa, factor.diffusion_dx(mid))
        };
        let r = (slope - factor.drift(mid)) / kappa;
        total += 0.5 * dt * r * r;
        if want_grad {
            // d/dmid of r
            let dr_dmid = (-factor.drift_dx(mid) - r * kappa_dx) / kappa;
            let dr_dslope = 1.0 / kappa;
            let c = dt * r;
            grad[k + 1] += c * (dr_dslope / dt + 0.5 * dr_dmid);
            grad[k] += c * (-dr_dslope / dt + 0.5 * dr_dmid);
        }
    }
    (total, grad, degenerate)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionBreakdown {
    pub total: f64,
    /// `Σ_i w_i g(φ_i, f_i)`.
    pub entropy_term: f64,
    /// `J_X(ψ) / c`.
    pub factor_term: f64,
    pub per_bin: Vec<f64>,
    pub infeasible: bool,
    pub boundary_degenerate: bool,
}

/// Joint action `S(φ, ψ) = Σ_i w_i g(φ_i, f_i[φ̄, ψ]) + J_X(ψ) / c`.
pub fn action_s(
    pool: &Pool,
    bin_paths: &[GridPath],
    psi: &GridPath,
    factor: &dyn FactorDynamics,
    c: f64,
    grid: TimeGrid,
) -> Result<ActionBreakdown> {
    if !(c > 0.0) {
        return Err(Error::InvalidInput(format!("c must be positive, got {c}")));
    }
    grid.ensure_same(psi.grid(), "action_s psi")?;
    if psi.values()[0] != 0.0 {
        return Err(Error::InvalidPath("factor path must start at 0".into()));
    }
    let phi_bar = mixture_path(pool, bin_paths)?;
    grid.ensure_same(phi_bar.grid(), "action_s phi")?;
    let dphi = phi_bar.increments();
    let per_bin: Vec<f64> = pool
        .bins()
        .par_iter()
        .zip(bin_paths)
        .map(|(bin, path)| {
            let kernel = BinKernel::for_path(&bin.name_type, psi)?;
            let density = kernel.density(&dphi);
            Ok(entropy_from_increments(&path.increments(), &density))
        })
        .collect::<Result<_>>()?;
    let infeasible = per_bin.iter().any(|&g| is_infeasible(g));
    let entropy_term: f64 = pool
        .bins()
        .iter()
        .zip(&per_bin)
        .map(|(b, g)| b.weight * g)
        .sum();
    let action = if factor.active() {
        jx_general(psi, factor)
    } else {
        FactorAction {
            value: 0.0,
            boundary_degenerate: false,
        }
    };
    let factor_term = action.value / c;
    let total = if infeasible {
        INFEASIBLE
    } else {
        entropy_term + factor_term
    };
    Ok(ActionBreakdown {
        total,
        entropy_term: if infeasible { INFEASIBLE } else { entropy_term },
        factor_term,
        per_bin,
        infeasible,
        boundary_degenerate: action.boundary_degenerate,
    })
}

/// Log density ratio between the contagion-twisted and the independent
/// default-time laws (factor switched off).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityShift {
    /// `ln(f_{ν̄,0}(r) / f_{0,0}(r))` at the nodes.
    pub at_nodes: Vec<f64>,
    /// `ln(μ_{ν̄,0}(★) / μ_{0,0}(★)) = -βᶜ ∫_0^T b(T - u) dν̄(u)`.
    pub at_star: f64,
}

pub fn g_shift(p: &NameType, loss_path: &GridPath, grid: TimeGrid) -> Result<DensityShift> {
    grid.ensure_same(loss_path.grid(), "g_shift")?;
    loss_path.check_loss()?;
    let curve = solve_b(p, grid);
    let b = curve.b.values();
    let b_dot = &curve.b_dot;
    let dnu = loss_path.increments();
    let conv = |kern: &[f64], j: usize| -> f64 {
        (0..j)
            .map(|k| 0.5 * (kern[j - k] + kern[j - k - 1]) * dnu[k])
            .sum::<f64>()
    };
    let at_nodes = (0..grid.nodes())
        .map(|j| {
            if p.beta_c == 0.0 {
                return 0.0;
            }
            let base = b_dot[j] * p.lambda0 + p.alpha * p.lambda_bar * b[j];
            ((base + p.beta_c * conv(b_dot, j)) / base).ln() - p.beta_c * conv(b, j)
        })
        .collect();
    let at_star = -p.beta_c * conv(b, grid.steps());
    Ok(DensityShift { at_nodes, at_star })
}
