//! One function per subcommand. Each takes the effective config (flags
//! already folded in) and writes its outputs plus a manifest.

use std::path::Path;

use pool_ldp::lln::typical_loss;
use pool_ldp::simulator::estimate_loss_distribution;
use pool_ldp::variational::{rate_curve, RateResult};
use pool_ldp::{Config, RawConfig, TimeGrid};
use serde_json::json;

use crate::error::CliError;
use crate::output::{header, Cell, Run};
use crate::settings::{self, join_levels, parse_levels};

pub const DEFAULT_ELLS: &str = "0.5:0.95:0.05";
pub const DEFAULT_ELL: f64 = 0.85;
pub const DEFAULT_REPS: u64 = 500;
pub const DEFAULT_SIM_SEED: u64 = 1;

pub fn lln(raw: RawConfig, out: &Path) -> Result<f64, CliError> {
    let cfg = raw.resolve()?;
    let variant = settings::variant(&raw)?;
    let mut run = Run::start("lln", out)?;
    let res = typical_loss(&cfg.pool.with_variant(variant), cfg.grid)?;
    let rows: Vec<Vec<Cell>> = cfg
        .grid
        .times()
        .iter()
        .zip(res.loss_path.values())
        .map(|(t, l)| vec![Cell::F(*t), Cell::F(*l)])
        .collect();
    run.csv("lln.csv", &header(&["t", "L"]), &rows)?;
    run.notes.insert("L_T".into(), json!(res.terminal()));
    run.notes.insert("picard_iterations".into(), json!(res.iterations));
    run.notes.insert("final_residual".into(), json!(res.final_residual));
    run.finish(&raw, cfg.grid)?;
    println!("L({}) = {:.6}", cfg.grid.horizon(), res.terminal());
    Ok(res.terminal())
}

/// Rate curve shared by `rate` and `tail`.
fn curve(raw: &RawConfig, cfg: &Config, ells: &[f64], run: &mut Run) -> Result<Vec<RateResult>, CliError> {
    let variant = settings::variant(raw)?;
    let opts = settings::rate_options(raw)?;
    let problem = settings::problem(cfg, variant)?;
    run.seeds.insert("restarts".into(), opts.seed);
    let results = rate_curve(&problem.pool, ells, problem.factor_ref(), cfg.grid, &opts)?;
    if settings::flag(raw, "refine")? {
        let fine = TimeGrid::new(cfg.grid.horizon(), 2 * cfg.grid.steps())?;
        let refined = rate_curve(&problem.pool, ells, problem.factor_ref(), fine, &opts)?;
        let report: Vec<_> = results
            .iter()
            .zip(&refined)
            .map(|(a, b)| {
                json!({
                    "ell": a.ell,
                    "steps": cfg.grid.steps(),
                    "I": a.value,
                    "refined_steps": fine.steps(),
                    "refined_I": b.value,
                    "change": b.value - a.value,
                })
            })
            .collect();
        run.notes.insert("refinement".into(), json!(report));
    }
    Ok(results)
}

fn unconverged(results: &[RateResult]) -> Vec<f64> {
    results.iter().filter(|r| !r.converged).map(|r| r.ell).collect()
}

fn check_converged(results: &[RateResult]) -> Result<(), CliError> {
    let bad = unconverged(results);
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::NonConvergence(format!(
            "rate minimization did not converge at ell = {bad:?}; best iterates written"
        )))
    }
}

pub fn rate(mut raw: RawConfig, out: &Path) -> Result<Vec<RateResult>, CliError> {
    let spec = raw.run_str("ells")?.unwrap_or_else(|| DEFAULT_ELLS.to_string());
    let ells = parse_levels(&spec)?;
    settings::set(&mut raw, "ells", Some(spec));
    let cfg = raw.resolve()?;
    let mut run = Run::start("rate", out)?;
    let results = curve(&raw, &cfg, &ells, &mut run)?;
    let rows: Vec<Vec<Cell>> = results
        .iter()
        .map(|r| vec![Cell::F(r.ell), Cell::F(r.value), Cell::B(r.converged), Cell::U(r.iterations)])
        .collect();
    run.csv("rate.csv", &header(&["ell", "I", "converged", "iters"]), &rows)?;
    run.finish(&raw, cfg.grid)?;
    for r in &results {
        println!("ell = {:.4}  I = {:.6}{}", r.ell, r.value, if r.converged { "" } else { "  (not converged)" });
    }
    check_converged(&results)?;
    Ok(results)
}

pub fn tail(mut raw: RawConfig, out: &Path) -> Result<Vec<RateResult>, CliError> {
    let cfg = raw.resolve()?;
    let variant = settings::variant(&raw)?;
    let lbar = settings::problem(&cfg, variant)?.typical_terminal(&cfg)?;
    let ells = match raw.run_str("ells")? {
        Some(spec) => parse_levels(&spec)?,
        None => {
            let first = (lbar * 20.0).floor() / 20.0 + 0.05;
            let count = ((0.95 - first) / 0.05 + 1e-9).floor().max(0.0) as usize + 1;
            (0..count).map(|k| ((first + 0.05 * k as f64) * 1e12).round() / 1e12).collect()
        }
    };
    if let Some(l) = ells.iter().find(|l| **l <= lbar) {
        return Err(CliError::Config(format!(
            "tail levels must exceed the typical loss L(T) = {lbar:.6}; got {l}"
        )));
    }
    settings::set(&mut raw, "ells", Some(join_levels(&ells)));
    let mut run = Run::start("tail", out)?;
    run.notes.insert("L_T".into(), json!(lbar));
    let results = curve(&raw, &cfg, &ells, &mut run)?;
    let n = cfg.pool.n_names() as f64;
    let rows: Vec<Vec<Cell>> = results
        .iter()
        .map(|r| {
            vec![
                Cell::F(r.ell),
                Cell::F(r.value),
                Cell::F((-n * r.value).exp()),
                Cell::F(-n * r.value / std::f64::consts::LN_10),
            ]
        })
        .collect();
    run.csv("tail.csv", &header(&["ell", "I", "tail", "log10_tail"]), &rows)?;
    run.finish(&raw, cfg.grid)?;
    for r in &results {
        println!(
            "ell = {:.4}  I = {:.6}  tail ~ 10^{:.2}",
            r.ell,
            r.value,
            -n * r.value / std::f64::consts::LN_10
        );
    }
    check_converged(&results)?;
    Ok(results)
}

pub fn extremals(mut raw: RawConfig, out: &Path) -> Result<RateResult, CliError> {
    let ell = raw.run_f64("ell")?.unwrap_or(DEFAULT_ELL);
    if !(ell > 0.0 && ell < 1.0) {
        return Err(CliError::Config(format!("ell must lie in (0, 1), got {ell}")));
    }
    settings::set(&mut raw, "ell", Some(ell));
    let cfg = raw.resolve()?;
    let mut run = Run::start("extremals", out)?;
    let res = curve(&raw, &cfg, &[ell], &mut run)?.pop().expect("one level");
    write_extremals(&mut run, &cfg, &res, "extremals.csv")?;
    run.notes.insert("I".into(), json!(res.value));
    run.notes.insert("breakdown".into(), json!(res.breakdown));
    run.finish(&raw, cfg.grid)?;
    println!(
        "ell = {:.4}  I = {:.6}  (entropy {:.6}, factor {:.6})",
        res.ell, res.value, res.breakdown.entropy_term, res.breakdown.factor_term
    );
    check_converged(std::slice::from_ref(&res))?;
    Ok(res)
}

pub fn write_extremals(run: &mut Run, cfg: &Config, res: &RateResult, name: &str) -> Result<(), CliError> {
    let k = res.bin_extremals.len();
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=k).map(|i| format!("phi_{i}")));
    cols.extend(["phi_bar", "psi", "u"].map(String::from));
    let u = res.control(cfg.factor.as_ref());
    let rows: Vec<Vec<Cell>> = (0..cfg.grid.nodes())
        .map(|n| {
            let mut row = vec![Cell::F(cfg.grid.time(n))];
            row.extend(res.bin_extremals.iter().map(|p| Cell::F(p.values()[n])));
            row.push(Cell::F(res.loss_extremal.values()[n]));
            row.push(Cell::F(res.psi_extremal.values()[n]));
            row.push(Cell::F(u[n]));
            row
        })
        .collect();
    run.csv(name, &cols, &rows)
}

pub fn simulate(mut raw: RawConfig, out: &Path) -> Result<(f64, f64), CliError> {
    let reps = raw.run_u64("reps")?.unwrap_or(DEFAULT_REPS);
    let seed = raw.run_u64("seed")?.unwrap_or(DEFAULT_SIM_SEED);
    if reps == 0 {
        return Err(CliError::Config("reps must be positive".into()));
    }
    settings::set(&mut raw, "reps", Some(reps));
    settings::set(&mut raw, "seed", Some(seed));
    let cfg = raw.resolve()?;
    let variant = settings::variant(&raw)?;
    let mut run = Run::start("simulate", out)?;
    run.seeds.insert("simulation".into(), seed);
    let pool = cfg.pool.with_variant(variant);
    let s = estimate_loss_distribution(&pool, cfg.factor.as_ref(), &cfg.scaling, cfg.grid, reps as usize, seed)?;
    let rows: Vec<Vec<Cell>> = (0..cfg.grid.nodes())
        .map(|k| {
            vec![
                Cell::F(cfg.grid.time(k)),
                Cell::F(s.mean[k]),
                Cell::F(s.q10[k]),
                Cell::F(s.q50[k]),
                Cell::F(s.q90[k]),
            ]
        })
        .collect();
    run.csv("sim_summary.csv", &header(&["t", "mean", "q10", "q50", "q90"]), &rows)?;
    let hist: Vec<Vec<Cell>> = s
        .histogram
        .iter()
        .enumerate()
        .map(|(k, c)| vec![Cell::U(k), Cell::U(*c)])
        .collect();
    run.csv("histogram.csv", &header(&["bin", "count"]), &hist)?;
    let (mean, se) = (s.terminal_mean(), s.terminal_std_err());
    run.notes.insert("terminal_mean".into(), json!(mean));
    run.notes.insert("terminal_std_err".into(), json!(se));
    run.notes.insert("multi_default_steps".into(), json!(s.multi_default_steps));
    run.notes.insert("truncations".into(), json!(s.truncations));
    run.finish(&raw, cfg.grid)?;
    println!("mean L^N({}) = {mean:.6} (SE {se:.6}, {reps} replications)", cfg.grid.horizon());
    Ok((mean, se))
}

pub fn validate(raw: RawConfig, out: &Path) -> Result<(), CliError> {
    let cfg = raw.resolve()?;
    let variant = settings::variant(&raw)?;
    settings::rate_options(&raw)?;
    let mut run = Run::start("validate", out)?;
    println!("pool: {} bin(s), N = {}, T = {}", cfg.pool.bins().len(), cfg.pool.n_names(), cfg.pool.horizon());
    for (i, b) in cfg.pool.bins().iter().enumerate() {
        let p = b.name_type;
        println!(
            "  bin {}: weight {:.6} alpha {} lambda_bar {} sigma {} beta_c {} beta_s {} lambda0 {}",
            i + 1,
            b.weight,
            p.alpha,
            p.lambda_bar,
            p.sigma,
            p.beta_c,
            p.beta_s,
            p.lambda0
        );
    }
    println!("factor: {} (zeta = {})", cfg.factor.name(), cfg.factor.zeta());
    match cfg.scaling.c_limit() {
        Some(c) => println!(
            "scaling: eps_N = {} N^-{}, critical, c = {c}",
            cfg.scaling.a(),
            cfg.scaling.q()
        ),
        None => println!(
            "scaling: eps_N = {} N^-{}, not critical (rate subcommands unavailable)",
            cfg.scaling.a(),
            cfg.scaling.q()
        ),
    }
    println!("grid: {} steps, dt = {}", cfg.grid.steps(), cfg.grid.dt());
    println!("variant: {}", variant.name());
    run.notes.insert("c_limit".into(), json!(cfg.scaling.c_limit()));
    run.finish(&raw, cfg.grid)?;
    Ok(())
}
