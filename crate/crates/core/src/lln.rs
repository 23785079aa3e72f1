//! Typical (law-of-large-numbers) loss path.
//!
//! `L` is the fixed point of
//! `L(t) = 1 - Σ_i w_i exp(-Γ_i(t; L))`, with `Γ_i` built from the
//! factor-free Riccati function `b` of bin `i`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{GridPath, Pool, TimeGrid};
use crate::riccati::{solve_theta_family, BinKernel};

#[derive(Debug, Clone, Copy)]
pub struct LlnOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LlnOptions {
    fn default() -> Self {
        LlnOptions {
            tol: 1e-10,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LlnResult {
    pub loss_path: GridPath,
    /// Per-bin default probabilities `1 - exp(-Γ_i)` at the fixed point.
    pub bin_paths: Vec<GridPath>,
    pub iterations: usize,
    pub final_residual: f64,
    pub residual_history: Vec<f64>,
    /// Whether every Picard iterate dominated the previous one pointwise.
    pub monotone: bool,
}

impl LlnResult {
    pub fn terminal(&self) -> f64 {
        self.loss_path.terminal()
    }
}

pub(crate) fn factor_free_kernels(pool: &Pool, grid: TimeGrid) -> Vec<BinKernel> {
    let zero = GridPath::zeros(grid);
    pool.bins()
        .par_iter()
        .map(|bin| {
            let theta = solve_theta_family(&bin.name_type, &zero, grid)
                .expect("factor-free theta family is always finite");
            BinKernel::new(theta)
        })
        .collect()
}

/// Right-hand side of the fixed-point map, pooled and per bin.
fn picard_map(pool: &Pool, kernels: &[BinKernel], candidate: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let dphi: Vec<f64> = candidate.windows(2).map(|w| w[1] - w[0]).collect();
    let n = candidate.len();
    let per_bin: Vec<Vec<f64>> = kernels
        .par_iter()
        .map(|kernel| {
            let mut gamma = vec![0.0; n];
            kernel.gamma_raw(&dphi, &mut gamma);
            gamma.iter().map(|g| -(-g).exp_m1()).collect()
        })
        .collect();
    let mut next = vec![0.0; n];
    for (bin, probs) in pool.bins().iter().zip(&per_bin) {
        for (acc, q) in next.iter_mut().zip(probs) {
            *acc += bin.weight * q;
        }
    }
    next[0] = 0.0;
    (next, per_bin)
}

/// Picard iteration from `L ≡ 0` to the typical loss path.
pub fn typical_loss(pool: &Pool, grid: TimeGrid) -> Result<LlnResult> {
    typical_loss_with(pool, grid, LlnOptions::default())
}

pub fn typical_loss_with(pool: &Pool, grid: TimeGrid, opts: LlnOptions) -> Result<LlnResult> {
    let kernels = factor_free_kernels(pool, grid);
    let mut current = vec![0.0; grid.nodes()];
    let mut history = Vec::new();
    let mut monotone = true;
    for iteration in 1..=opts.max_iter {
        let (next, _) = picard_map(pool, &kernels, &current);
        let mut change = 0.0f64;
        for (a, b) in next.iter().zip(&current) {
            change = change.max((a - b).abs());
            if a < &(b - 1e-14) {
                monotone = false;
            }
        }
        history.push(change);
        current = next;
        if change < opts.tol {
            let (check, per_bin) = picard_map(pool, &kernels, &current);
            let final_residual = sup_distance(&check, &current);
            return Ok(LlnResult {
                loss_path: GridPath::loss(grid, current)?,
                bin_paths: per_bin
                    .into_iter()
                    .map(|v| GridPath::loss(grid, v))
                    .collect::<Result<_>>()?,
                iterations: iteration,
                final_residual,
                residual_history: history,
                monotone,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "typical loss",
        iterations: opts.max_iter,
        residual: history.last().copied().unwrap_or(f64::INFINITY),
    })
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Sup-norm defect of `candidate` under the fixed-point map.
pub fn lln_residual(pool: &Pool, candidate: &GridPath, grid: TimeGrid) -> Result<f64> {
    grid.ensure_same(candidate.grid(), "lln_residual")?;
    candidate.check_loss()?;
    let kernels = factor_free_kernels(pool, grid);
    let (next, _) = picard_map(pool, &kernels, candidate.values());
    Ok(sup_distance(&next, candidate.values()))
}
