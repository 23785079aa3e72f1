//! Direct Monte Carlo of the N-name system.
//!
//! Each name's intensity is stepped by Euler with full truncation; defaults
//! happen when the trapezoid compensator of `max(λ, 0)` crosses an Exp(1)
//! threshold. Defaults found in a step raise every surviving intensity by
//! `βᶜ / N` each, once, at the end of the step.
//!
//! Random numbers come from ChaCha8 keyed by `(seed, replication)`; stream 0
//! drives the factor and stream `n + 1` drives name `n`, so results do not
//! depend on how replications are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::factor::FactorDynamics;
use crate::model::{GridPath, NameType, Pool, ScalingRegime, TimeGrid};

fn stream(seed: u64, replication: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&replication.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Euler path of the unscaled factor `dX = b(X) dt + κ(X) dV`, `X(0) = 0`,
/// with drift and diffusion evaluated at `max(x, 0)` for degenerate
/// (square-root) factors.
pub fn simulate_factor(factor: &dyn FactorDynamics, grid: TimeGrid, seed: u64) -> GridPath {
    let mut rng = stream(seed, 0, 0);
    let values = factor_values(factor, grid, &mut rng);
    GridPath::factor(grid, values).expect("factor path starts at zero")
}

fn factor_values(factor: &dyn FactorDynamics, grid: TimeGrid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dt = grid.dt();
    let root = dt.sqrt();
    let mut x = 0.0f64;
    let mut out = Vec::with_capacity(grid.nodes());
    out.push(0.0);
    for _ in 0..grid.steps() {
        let z: f64 = rng.sample(StandardNormal);
        if factor.active() {
            let at = if factor.degenerate() { x.max(0.0) } else { x };
            x += factor.drift(at) * dt + factor.diffusion(at) * root * z;
        }
        out.push(x);
    }
    out
}

/// One run of the pool.
#[derive(Debug, Clone, Serialize)]
pub struct LossRealization {
    pub loss_path: GridPath,
    /// Default time of each name, `None` if it survives the horizon.
    pub default_times: Vec<Option<f64>>,
    /// Rescaled factor `ε_N X` at the nodes.
    pub factor_path: GridPath,
    pub seed: u64,
    pub replication: u64,
    /// Steps in which more than one name defaulted.
    pub multi_default_steps: usize,
    /// Times an intensity was truncated at zero.
    pub truncations: usize,
}

/// Name `n`'s bin under largest-remainder allocation of `N` names.
pub fn bin_assignment(pool: &Pool) -> Vec<usize> {
    let n = pool.n_names();
    let weights = pool.weights();
    let exact: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| std::iter::repeat_n(i, c))
        .collect()
}

pub fn simulate_pool(
    pool: &Pool,
    factor: &dyn FactorDynamics,
    scaling: &ScalingRegime,
    grid: TimeGrid,
    seed: u64,
) -> Result<LossRealization> {
    check_grid(pool, grid)?;
    Ok(run(pool, &bin_assignment(pool), factor, scaling, grid, seed, 0))
}

fn check_grid(pool: &Pool, grid: TimeGrid) -> Result<()> {
    if (grid.horizon() - pool.horizon()).abs() > 1e-12 {
        return Err(Error::GridMismatch(format!(
            "simulation grid horizon {} differs from pool horizon {}",
            grid.horizon(),
            pool.horizon()
        )));
    }
    Ok(())
}

fn run(
    pool: &Pool,
    bins: &[usize],
    factor: &dyn FactorDynamics,
    scaling: &ScalingRegime,
    grid: TimeGrid,
    seed: u64,
    replication: u64,
) -> LossRealization {
    let n = pool.n_names();
    let nf = n as f64;
    let dt = grid.dt();
    let root = dt.sqrt();
    let eps = if factor.active() { scaling.epsilon(n) } else { 0.0 };
    let types: Vec<NameType> = pool.bins().iter().map(|b| b.name_type).collect();

    let mut factor_rng = stream(seed, replication, 0);
    let x = factor_values(factor, grid, &mut factor_rng);

    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| stream(seed, replication, i as u64 + 1)).collect();
    let thresholds: Vec<f64> = rngs.iter_mut().map(|r| r.sample(Exp1)).collect();
    let mut lambda: Vec<f64> = bins.iter().map(|&b| types[b].lambda0).collect();
    let mut comp = vec![0.0f64; n];
    let mut default_times: Vec<Option<f64>> = vec![None; n];
    let mut defaulted = 0usize;
    let mut loss = Vec::with_capacity(grid.nodes());
    loss.push(0.0);
    let mut multi_default_steps = 0;
    let mut truncations = 0;

    for k in 0..grid.steps() {
        let dx = x[k + 1] - x[k];
        let mut new_defaults = 0usize;
        for i in 0..n {
            if default_times[i].is_some() {
                continue;
            }
            let p = &types[bins[i]];
            let z: f64 = rngs[i].sample(StandardNormal);
            let lp = lambda[i].max(0.0);
            let mut next = lambda[i] + p.alpha * (p.lambda_bar - lp) * dt
                + p.sigma * lp.sqrt() * root * z
                + eps * p.beta_s * lp * dx;
            if next < 0.0 {
                truncations += 1;
                next = 0.0;
            }
            let before = comp[i];
            comp[i] += 0.5 * (lp + next) * dt;
            lambda[i] = next;
            if comp[i] >= thresholds[i] {
                let frac = if comp[i] > before {
                    ((thresholds[i] - before) / (comp[i] - before)).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                let t = (grid.time(k) + frac.max(1e-9) * dt).min(grid.time(k + 1));
                default_times[i] = Some(t);
                new_defaults += 1;
            }
        }
        if new_defaults > 1 {
            multi_default_steps += 1;
        }
        if new_defaults > 0 {
            let jump = new_defaults as f64 / nf;
            for i in 0..n {
                if default_times[i].is_none() {
                    lambda[i] += types[bins[i]].beta_c * jump;
                }
            }
        }
        defaulted += new_defaults;
        loss.push(defaulted as f64 / nf);
    }
    let factor_path: Vec<f64> = x.iter().map(|v| eps * v).collect();
    LossRealization {
        loss_path: GridPath::loss(grid, loss).expect("loss counts are monotone"),
        default_times,
        factor_path: GridPath::factor(grid, factor_path).expect("factor path starts at zero"),
        seed,
        replication,
        multi_default_steps,
        truncations,
    }
}

/// Replications `0..n_reps` under one master seed, in replication order.
pub fn simulate_replications(
    pool: &Pool,
    factor: &dyn FactorDynamics,
    scaling: &ScalingRegime,
    grid: TimeGrid,
    n_reps: usize,
    seed: u64,
) -> Result<Vec<LossRealization>> {
    check_grid(pool, grid)?;
    if n_reps == 0 {
        return Err(Error::InvalidInput("need at least one replication".into()));
    }
    let bins = bin_assignment(pool);
    Ok((0..n_reps as u64)
        .into_par_iter()
        .map(|r| run(pool, &bins, factor, scaling, grid, seed, r))
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct LossSummary {
    pub grid: TimeGrid,
    pub mean: Vec<f64>,
    pub q10: Vec<f64>,
    pub q50: Vec<f64>,
    pub q90: Vec<f64>,
    /// `L^N(T)` per replication.
    pub terminal: Vec<f64>,
    /// `histogram[k]` counts replications with exactly `k` defaults by `T`.
    pub histogram: Vec<usize>,
    pub n_names: usize,
    pub multi_default_steps: usize,
    pub truncations: usize,
}

impl LossSummary {
    /// Standard error of the terminal mean.
    pub fn terminal_std_err(&self) -> f64 {
        let n = self.terminal.len() as f64;
        if n < 2.0 {
            return 0.0;
        }
        let mean = self.terminal.iter().sum::<f64>() / n;
        let var = self.terminal.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    }

    pub fn terminal_mean(&self) -> f64 {
        *self.mean.last().expect("non-empty grid")
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn estimate_loss_distribution(
    pool: &Pool,
    factor: &dyn FactorDynamics,
    scaling: &ScalingRegime,
    grid: TimeGrid,
    n_reps: usize,
    seed: u64,
) -> Result<LossSummary> {
    let runs = simulate_replications(pool, factor, scaling, grid, n_reps, seed)?;
    let nodes = grid.nodes();
    let mut mean = vec![0.0; nodes];
    let mut q10 = vec![0.0; nodes];
    let mut q50 = vec![0.0; nodes];
    let mut q90 = vec![0.0; nodes];
    let mut column = vec![0.0; runs.len()];
    for k in 0..nodes {
        for (c, r) in column.iter_mut().zip(&runs) {
            *c = r.loss_path.values()[k];
        }
        mean[k] = column.iter().sum::<f64>() / runs.len() as f64;
        column.sort_by(f64::total_cmp);
        q10[k] = quantile(&column, 0.1);
        q50[k] = quantile(&column, 0.5);
        q90[k] = quantile(&column, 0.9);
    }
    let n = pool.n_names();
    let mut histogram = vec![0usize; n + 1];
    let terminal: Vec<f64> = runs.iter().map(|r| r.loss_path.terminal()).collect();
    for r in &runs {
        let count = r.default_times.iter().filter(|t| t.is_some()).count();
        histogram[count] += 1;
    }
    Ok(LossSummary {
        grid,
        mean,
        q10,
        q50,
        q90,
        terminal,
        histogram,
        n_names: n,
        multi_default_steps: runs.iter().map(|r| r.multi_default_steps).sum(),
        truncations: runs.iter().map(|r| r.truncations).sum(),
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TailEstimate {
    pub probability: f64,
    /// Half-width of the Wilson 95% interval.
    pub half_width: f64,
    pub lower: f64,
    pub upper: f64,
    pub hits: usize,
    pub reps: usize,
}

/// Wilson score interval at 95%.
pub fn wilson(hits: usize, reps: usize) -> TailEstimate {
    let z = 1.959_963_984_540_054;
    let n = reps as f64;
    let p = hits as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt();
    TailEstimate {
        probability: p,
        half_width: half,
        lower: (centre - half).max(0.0),
        upper: (centre + half).min(1.0),
        hits,
        reps,
    }
}

/// Plain Monte Carlo frequency of `L^N(T) >= ell`. Only moderate tails are
/// reachable this way; deep tails need the large-deviation approximation.
pub fn estimate_tail_prob(
    pool: &Pool,
    factor: &dyn FactorDynamics,
    scaling: &ScalingRegime,
    grid: TimeGrid,
    ell: f64,
    n_reps: usize,
    seed: u64,
) -> Result<TailEstimate> {
    if !(0.0..=1.0).contains(&ell) {
        return Err(Error::InvalidInput(format!("level must lie in [0, 1], got {ell}")));
    }
    let runs = simulate_replications(pool, factor, scaling, grid, n_reps, seed)?;
    let hits = runs
        .iter()
        .filter(|r| r.loss_path.terminal() >= ell - 1e-12)
        .count();
    Ok(wilson(hits, n_reps))
}

/// Monte Carlo of `E[exp(-∫_0^t λ)]` at the grid nodes for one name whose
/// intensity is driven by a deterministic loss path and factor path:
/// `dλ = α(λ̄ - λ)dt + σ√λ dW + βᶜ dφ̄ + βˢ λ dψ`, both paths linear between
/// nodes. Each grid interval is split into `substeps` Euler steps.
pub fn conditional_survival(
    p: &NameType,
    phi_bar: &GridPath,
    psi: &GridPath,
    n_reps: usize,
    substeps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let grid = *phi_bar.grid();
    grid.ensure_same(psi.grid(), "conditional_survival")?;
    let substeps = substeps.max(1);
    let h = grid.dt() / substeps as f64;
    let root = h.sqrt();
    let dphi = phi_bar.increments();
    let dpsi = psi.increments();
    let sums = (0..n_reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, r, 1);
            let mut lambda = p.lambda0;
            let mut integral = 0.0;
            let mut out = vec![1.0; grid.nodes()];
            for k in 0..grid.steps() {
                let a = dphi[k] / substeps as f64;
                let b = dpsi[k] / substeps as f64;
                for _ in 0..substeps {
                    let z: f64 = rng.sample(StandardNormal);
                    let lp = lambda.max(0.0);
                    let next = (lambda
                        + p.alpha * (p.lambda_bar - lp) * h
                        + p.sigma * lp.sqrt() * root * z
                        + p.beta_c * a
                        + p.beta_s * lp * b)
                        .max(0.0);
                    integral += 0.5 * (lp + next) * h;
                    lambda = next;
                }
                out[k + 1] = (-integral).exp();
            }
            out
        })
        .reduce(
            || vec![0.0; grid.nodes()],
            |mut acc, v| {
                acc.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
                acc
            },
        );
    Ok(sums.into_iter().map(|s| s / n_reps as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::{NoFactor, OrnsteinUhlenbeck};
    use crate::model::Bin;

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

    #[test]
    fn reruns_are_bit_identical() {
        let pool = Pool::homogeneous(p1(), 50, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let scaling = ScalingRegime::critical(1.0).unwrap();
        let f = OrnsteinUhlenbeck { gamma: 1.0 };
        let a = simulate_pool(&pool, &f, &scaling, grid, 11).unwrap();
        let b = simulate_pool(&pool, &f, &scaling, grid, 11).unwrap();
        assert_eq!(a.loss_path, b.loss_path);
        assert_eq!(a.default_times, b.default_times);
        let c = simulate_pool(&pool, &f, &scaling, grid, 12).unwrap();
        assert_ne!(a.default_times, c.default_times);
    }

    #[test]
    fn loss_counts_defaults_at_nodes() {
        let pool = Pool::homogeneous(p1(), 80, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let scaling = ScalingRegime::critical(1.0).unwrap();
        let r = simulate_pool(&pool, &OrnsteinUhlenbeck { gamma: 1.0 }, &scaling, grid, 5).unwrap();
        for (k, l) in r.loss_path.values().iter().enumerate() {
            let t = grid.time(k);
            let count = r.default_times.iter().filter(|d| d.is_some_and(|d| d <= t + 1e-12)).count();
            assert_eq!(*l, count as f64 / 80.0);
        }
    }

    #[test]
    fn largest_remainder_bins() {
        let nt = p1();
        let pool = Pool::new(
            vec![Bin { weight: 1.0 / 3.0, name_type: nt }, Bin { weight: 2.0 / 3.0, name_type: nt }],
            100,
            1.0,
            100.0,
        )
        .unwrap();
        let bins = bin_assignment(&pool);
        assert_eq!(bins.len(), 100);
        assert_eq!(bins.iter().filter(|&&b| b == 0).count(), 33);
    }

    #[test]
    fn single_replication_summary() {
        let pool = Pool::homogeneous(p1(), 40, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 40).unwrap();
        let scaling = ScalingRegime::critical(1.0).unwrap();
        let s = estimate_loss_distribution(&pool, &NoFactor, &scaling, grid, 1, 3).unwrap();
        let r = simulate_replications(&pool, &NoFactor, &scaling, grid, 1, 3).unwrap();
        assert_eq!(s.mean, r[0].loss_path.values());
        assert_eq!(s.q10, s.q90);
    }

    #[test]
    fn wilson_interval_contains_estimate() {
        let w = wilson(30, 200);
        assert!(w.lower < 0.15 && 0.15 < w.upper);
        let all = wilson(10, 10);
        assert_eq!(all.probability, 1.0);
        assert!(all.upper <= 1.0);
    }
}
