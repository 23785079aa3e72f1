//! Rate function of the pooled loss: `I(ℓ) = inf S(φ, ψ)` over bin loss
//! paths with `φ̄(T) = ℓ` and factor paths `ψ`.

mod objective;
mod solvers;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

pub use objective::RateProblem;
pub use solvers::{BlockSolver, JointSolver, SolveOutcome};

use crate::error::{Error, Result};
use crate::factor::{FactorDynamics, FactorModel, NoFactor};
use crate::ldp::{action_s, is_infeasible, ActionBreakdown};
use crate::lln::typical_loss;
use crate::model::{mixture_path, GridPath, Pool, TimeGrid, Variant};
use crate::optim::LbfgsOptions;

/// Levels are clamped into `[ELL_MIN, 1 - ELL_MIN]`.
pub const ELL_MIN: f64 = 1e-4;

/// A strategy for minimizing a [`RateProblem`] from a starting point.
pub trait RateSolver: Send + Sync {
    fn name(&self) -> &'static str;

    fn solve(&self, problem: &RateProblem<'_>, x0: Vec<f64>, opts: &LbfgsOptions) -> SolveOutcome;
}

type SolverCtor = fn() -> Box<dyn RateSolver>;

/// Solvers selectable by name (`--solver` on the command line).
pub struct SolverRegistry {
    ctors: BTreeMap<&'static str, SolverCtor>,
}

impl SolverRegistry {
    pub fn with_builtins() -> Self {
        let mut ctors: BTreeMap<&'static str, SolverCtor> = BTreeMap::new();
        ctors.insert("joint", || Box::new(JointSolver));
        ctors.insert("block", || Box::new(BlockSolver::default()));
        SolverRegistry { ctors }
    }

    pub fn register(&mut self, name: &'static str, ctor: SolverCtor) {
        self.ctors.insert(name, ctor);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.ctors.keys().copied().collect()
    }

    pub fn build(&self, name: &str) -> Result<Box<dyn RateSolver>> {
        self.ctors.get(name).map(|c| c()).ok_or_else(|| Error::Unknown {
            kind: "solver",
            name: name.to_string(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RateOptions {
    pub lbfgs: LbfgsOptions,
    /// Total number of starts (LLN-based start plus random perturbations).
    pub restarts: usize,
    pub seed: u64,
    pub solver: String,
    /// Standard deviation of the logit perturbations of the random starts.
    pub perturbation: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        RateOptions {
            lbfgs: LbfgsOptions::default(),
            restarts: 4,
            seed: 20_240_601,
            solver: "joint".into(),
            perturbation: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RateResult {
    /// The level actually solved for (after clamping).
    pub ell: f64,
    pub value: f64,
    pub bin_extremals: Vec<GridPath>,
    pub loss_extremal: GridPath,
    pub psi_extremal: GridPath,
    pub breakdown: ActionBreakdown,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub starts: usize,
    pub solver: String,
}

impl RateResult {
    /// Factor control `u = (ψ' - b̄(ψ)) / κ̄(ψ)` at the nodes, averaging the
    /// adjacent interval values.
    pub fn control(&self, factor: &dyn FactorDynamics) -> Vec<f64> {
        let psi = self.psi_extremal.values();
        let dt = self.psi_extremal.grid().dt();
        let per_interval: Vec<f64> = psi
            .windows(2)
            .map(|w| {
                if !factor.active() {
                    return 0.0;
                }
                let mid = 0.5 * (w[0] + w[1]);
                let kappa = factor.diffusion(mid);
                let kappa = if kappa.abs() < crate::ldp::EPS_KAPPA {
                    crate::ldp::EPS_KAPPA
                } else {
                    kappa
                };
                ((w[1] - w[0]) / dt - factor.drift(mid)) / kappa
            })
            .collect();
        let m = per_interval.len();
        (0..=m)
            .map(|k| match k {
                0 => per_interval[0],
                k if k == m => per_interval[m - 1],
                k => 0.5 * (per_interval[k - 1] + per_interval[k]),
            })
            .collect()
    }
}

/// Time average of interval controls over `[t0, t1]`.
pub fn mean_control(result: &RateResult, factor: &dyn FactorDynamics, t0: f64, t1: f64) -> f64 {
    let u = result.control(factor);
    let grid = result.psi_extremal.grid();
    let mut acc = 0.0;
    let mut span = 0.0;
    for k in 0..grid.steps() {
        let a = grid.time(k).max(t0);
        let b = grid.time(k + 1).min(t1);
        if b > a {
            acc += 0.5 * (u[k] + u[k + 1]) * (b - a);
            span += b - a;
        }
    }
    if span > 0.0 {
        acc / span
    } else {
        0.0
    }
}

fn check_ell(ell: f64) -> Result<f64> {
    if !(ell > 0.0 && ell < 1.0) {
        return Err(Error::InvalidInput(format!("level must lie in (0, 1), got {ell}")));
    }
    let clamped = ell.clamp(ELL_MIN, 1.0 - ELL_MIN);
    if clamped != ell {
        log::warn!("level {ell} clamped to {clamped}");
    }
    Ok(clamped)
}

/// `I(ℓ)` with the factor switched off (ψ ≡ 0).
pub fn minimize_rate(pool: &Pool, ell: f64, grid: TimeGrid, opts: &RateOptions) -> Result<RateResult> {
    solve_level(pool, ell, grid, None, opts, None)
}

/// `I(ℓ)` jointly over loss paths and the factor path ψ, with factor
/// action `J_X(ψ) / c`.
pub fn minimize_rate_systematic(
    pool: &Pool,
    ell: f64,
    factor: &FactorModel,
    c: f64,
    grid: TimeGrid,
    opts: &RateOptions,
) -> Result<RateResult> {
    if !(c > 0.0) {
        return Err(Error::InvalidInput(format!("c must be positive, got {c}")));
    }
    solve_level(pool, ell, grid, Some((factor.clone(), c)), opts, None)
}

/// Rate for a model variant: the factor path is optimized only when the
/// variant keeps the systematic channel.
pub fn minimize_rate_variant(
    pool: &Pool,
    variant: Variant,
    ell: f64,
    factor: &FactorModel,
    c: f64,
    grid: TimeGrid,
    opts: &RateOptions,
) -> Result<RateResult> {
    let pool = pool.with_variant(variant);
    if variant.systematic() {
        minimize_rate_systematic(&pool, ell, factor, c, grid, opts)
    } else {
        minimize_rate(&pool, ell, grid, opts)
    }
}

fn solve_level(
    pool: &Pool,
    ell: f64,
    grid: TimeGrid,
    factor: Option<(FactorModel, f64)>,
    opts: &RateOptions,
    warm: Option<&RateResult>,
) -> Result<RateResult> {
    let ell = check_ell(ell)?;
    if (grid.horizon() - pool.horizon()).abs() > 1e-12 {
        return Err(Error::GridMismatch(format!(
            "grid horizon {} differs from pool horizon {}",
            grid.horizon(),
            pool.horizon()
        )));
    }
    let solver = SolverRegistry::with_builtins().build(&opts.solver)?;
    let (factor_model, c) = match &factor {
        Some((f, c)) => (f.clone(), *c),
        None => (Arc::new(NoFactor) as FactorModel, 1.0),
    };
    let free = factor.filter(|(f, _)| f.active() && pool.has_systematic());
    let problem = RateProblem::new(pool, ell, grid, free);

    let lln = typical_loss(pool, grid)?;
    let base = problem.encode(&lln.bin_paths, None);
    let mut starts = Vec::new();
    if let Some(w) = warm {
        starts.push(problem.encode(&w.bin_extremals, Some(&w.psi_extremal)));
    }
    starts.push(base.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ ell.to_bits());
    let normal = Normal::new(0.0, opts.perturbation.max(0.0)).expect("finite perturbation");
    let layout = problem.layout;
    while starts.len() < opts.restarts.max(1) {
        let mut x = base.clone();
        for v in &mut x[layout.phi_block()] {
            *v += normal.sample(&mut rng);
        }
        let mut walk = 0.0;
        for v in &mut x[layout.psi_block()] {
            walk += 0.1 * normal.sample(&mut rng) * grid.dt().sqrt();
            *v += walk;
        }
        starts.push(x);
    }
    let n_starts = starts.len();
    let outcomes: Vec<SolveOutcome> = starts
        .into_par_iter()
        .map(|x0| solver.solve(&problem, x0, &opts.lbfgs))
        .collect();
    let best = outcomes
        .into_iter()
        .filter(|o| !is_infeasible(o.value) && o.value.is_finite())
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .ok_or(Error::NonConvergence {
            what: "rate minimization",
            iterations: 0,
            residual: f64::INFINITY,
        })?;
    if !best.converged {
        log::warn!(
            "rate minimization at ell={ell} stopped with gradient norm {:.3e} after {} iterations",
            best.grad_norm,
            best.iterations
        );
    }
    let (bin_extremals, psi_extremal) = problem.paths(&best.x)?;
    let loss_extremal = mixture_path(pool, &bin_extremals)?;
    let breakdown = action_s(pool, &bin_extremals, &psi_extremal, factor_model.as_ref(), c, grid)?;
    Ok(RateResult {
        ell,
        value: breakdown.total,
        bin_extremals,
        loss_extremal,
        psi_extremal,
        breakdown,
        converged: best.converged,
        iterations: best.iterations,
        grad_norm: best.grad_norm,
        starts: n_starts,
        solver: solver.name().to_string(),
    })
}

/// Rate function over a list of levels, warm-starting each solve from the
/// previous extremal.
pub fn rate_curve(
    pool: &Pool,
    ells: &[f64],
    factor: Option<(&FactorModel, f64)>,
    grid: TimeGrid,
    opts: &RateOptions,
) -> Result<Vec<RateResult>> {
    let mut out: Vec<RateResult> = Vec::with_capacity(ells.len());
    for &ell in ells {
        let res = solve_level(
            pool,
            ell,
            grid,
            factor.map(|(f, c)| (f.clone(), c)),
            opts,
            out.last(),
        )?;
        out.push(res);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct TailPoint {
    pub ell: f64,
    pub rate: f64,
    /// `exp(-N I(ℓ))`.
    pub tail: f64,
    pub log10_tail: f64,
    pub converged: bool,
}

/// Large-deviation tail approximation `P(L_N(T) ≥ ℓ) ≈ exp(-N I(ℓ))`.
pub fn tail_curve(
    pool: &Pool,
    ells: &[f64],
    factor: Option<(&FactorModel, f64)>,
    grid: TimeGrid,
    opts: &RateOptions,
) -> Result<Vec<TailPoint>> {
    let n = pool.n_names() as f64;
    Ok(rate_curve(pool, ells, factor, grid, opts)?
        .into_iter()
        .map(|r| TailPoint {
            ell: r.ell,
            rate: r.value,
            tail: (-n * r.value).exp(),
            log10_tail: -n * r.value / std::f64::consts::LN_10,
            converged: r.converged,
        })
        .collect())
}
