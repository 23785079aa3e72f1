//! The bundled reproduction suite: typical losses, four-variant rate and
//! tail curves, extremals at ℓ = 0.85, and a pass/fail report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use pool_ldp::ldp::bernoulli_kl;
use pool_ldp::lln::typical_loss;
use pool_ldp::variational::{mean_control, rate_curve, RateOptions, RateResult};
use pool_ldp::{Config, RawConfig, TimeGrid, Variant};
use serde::Serialize;
use serde_json::json;

use crate::commands::write_extremals;
use crate::error::CliError;
use crate::output::{header, Cell, Run};
use crate::settings::{self, parse_levels};

pub const PORTFOLIO1: &str = include_str!("../../../configs/portfolio1.json");
pub const PORTFOLIO2: &str = include_str!("../../../configs/portfolio2.json");
pub const HETERO_AB: &str = include_str!("../../../configs/hetero_ab.json");

const LLN_STEPS: usize = 1000;
const LLN_TOL: f64 = 0.02;
const LLN_SECS: f64 = 10.0;
const RATE_ZERO: f64 = 1e-3;
const KL_TOL: f64 = 1e-3;
const LEVEL: f64 = 0.85;
const FULL_LEVELS: &str = "0.5:0.95:0.05";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Check,
    Info,
}

#[derive(Debug, Clone, Serialize)]
pub struct Section {
    pub name: String,
    pub kind: Kind,
    pub pass: bool,
    pub lines: Vec<String>,
}

impl Section {
    fn new(name: &str, kind: Kind) -> Self {
        Section {
            name: name.to_string(),
            kind,
            pass: true,
            lines: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.lines.push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
    }

    fn note(&mut self, line: String) {
        self.lines.push(format!("     {line}"));
    }

    fn failed(&self) -> bool {
        self.kind == Kind::Check && !self.pass
    }
}

struct Entry {
    key: &'static str,
    label: &'static str,
    raw: RawConfig,
    cfg: Config,
}

fn bundled(steps: usize) -> Result<Vec<Entry>, CliError> {
    [
        ("p1", "Portfolio I", PORTFOLIO1),
        ("p2", "Portfolio II", PORTFOLIO2),
        ("ab", "two-type pool", HETERO_AB),
    ]
    .into_iter()
    .map(|(key, label, text)| {
        let mut raw = settings::from_text(text)?;
        raw.grid.steps = steps;
        let cfg = raw.resolve()?;
        Ok(Entry { key, label, raw, cfg })
    })
    .collect()
}

pub struct Options {
    pub steps: usize,
    pub quick: bool,
}

/// Rate results per (pool key, variant), in level order.
type Curves = BTreeMap<(&'static str, &'static str), Vec<RateResult>>;

pub fn reproduce(out: &Path, opts: &Options) -> Result<Vec<Section>, CliError> {
    let entries = bundled(opts.steps)?;
    let mut run = Run::start("reproduce-paper", out)?;
    let rate_opts = RateOptions::default();
    run.seeds.insert("restarts".into(), rate_opts.seed);
    let levels = if opts.quick { vec![LEVEL] } else { parse_levels(FULL_LEVELS)? };
    run.notes.insert("levels".into(), json!(levels));

    let mut sections = vec![lln_homogeneous(&entries[..2], &mut run)?, lln_two_type(&entries[2], &mut run)?];

    let mut curves = Curves::new();
    let mut curve_section = Section::new("rate and tail curves", Kind::Check);
    for e in &entries {
        for v in Variant::ALL {
            let problem = settings::problem(&e.cfg, v)?;
            let start = Instant::now();
            let res = rate_curve(&problem.pool, &levels, problem.factor_ref(), e.cfg.grid, &rate_opts)?;
            let lbar = problem.typical_terminal(&e.cfg)?;
            write_curve(&mut run, e, v, &res, lbar)?;
            let bad: Vec<f64> = res.iter().filter(|r| !r.converged).map(|r| r.ell).collect();
            curve_section.check(
                bad.is_empty(),
                format!(
                    "{} {}: {} levels in {:.1}s{}",
                    e.label,
                    v.name(),
                    res.len(),
                    start.elapsed().as_secs_f64(),
                    if bad.is_empty() { String::new() } else { format!(", not converged at {bad:?}") }
                ),
            );
            curves.insert((e.key, v.name()), res);
        }
    }
    sections.push(curve_section);
    sections.push(zero_at_lln(&entries, &rate_opts)?);
    sections.push(independent_oracle(&entries, &curves)?);
    sections.push(orderings(&entries, &curves)?);
    sections.push(extremals(&entries, &curves, &mut run)?);
    sections.push(refinement(&entries[0], &rate_opts)?);

    let report = render(&sections);
    run.text("report.txt", &report)?;
    run.text(
        "report.json",
        &serde_json::to_string_pretty(&sections).expect("report serializes"),
    )?;
    let configs: BTreeMap<&str, &RawConfig> = entries.iter().map(|e| (e.key, &e.raw)).collect();
    run.finish(&configs, entries[0].cfg.grid)?;
    print!("{report}");
    Ok(sections)
}

pub fn render(sections: &[Section]) -> String {
    let mut s = String::new();
    for sec in sections {
        let status = match (sec.kind, sec.pass) {
            (Kind::Info, _) => "INFO",
            (Kind::Check, true) => "PASS",
            (Kind::Check, false) => "FAIL",
        };
        let _ = writeln!(s, "[{status}] {}", sec.name);
        for line in &sec.lines {
            let _ = writeln!(s, "    {line}");
        }
    }
    let failed = sections.iter().filter(|s| s.failed()).count();
    let checks = sections.iter().filter(|s| s.kind == Kind::Check).count();
    let _ = writeln!(s, "{} of {checks} sections passed", checks - failed);
    s
}

fn write_lln(run: &mut Run, name: &str, grid: TimeGrid, values: &[f64]) -> Result<(), CliError> {
    let rows: Vec<Vec<Cell>> = grid
        .times()
        .iter()
        .zip(values)
        .map(|(t, l)| vec![Cell::F(*t), Cell::F(*l)])
        .collect();
    run.csv(name, &header(&["t", "L"]), &rows)
}

fn lln_homogeneous(entries: &[Entry], run: &mut Run) -> Result<Section, CliError> {
    let mut sec = Section::new("typical default rate, homogeneous portfolios", Kind::Check);
    let targets = [[0.804, 0.470], [0.650, 0.589]];
    let grid = TimeGrid::new(1.0, LLN_STEPS)?;
    for (e, target) in entries.iter().zip(targets) {
        for (v, want) in [Variant::Full, Variant::Systematic].into_iter().zip(target) {
            let pool = e.cfg.pool.with_variant(v);
            let start = Instant::now();
            let res = typical_loss(&pool, grid)?;
            let secs = start.elapsed().as_secs_f64();
            let l = res.terminal();
            write_lln(run, &format!("lln_{}_{}.csv", e.key, v.name()), grid, res.loss_path.values())?;
            sec.check(
                (l - want).abs() <= LLN_TOL && secs < LLN_SECS,
                format!(
                    "{} beta_c = {}: L(1) = {l:.4}, target {want} ± {LLN_TOL} ({secs:.2}s)",
                    e.label,
                    pool.bins()[0].name_type.beta_c
                ),
            );
        }
    }
    Ok(sec)
}

fn lln_two_type(e: &Entry, run: &mut Run) -> Result<Section, CliError> {
    let mut sec = Section::new("typical loss, two-type pool", Kind::Check);
    let grid = TimeGrid::new(1.0, LLN_STEPS)?;
    for (v, want, what) in [(Variant::Full, 0.81, "with contagion"), (Variant::Systematic, 0.62, "beta_c = 0")] {
        let res = typical_loss(&e.cfg.pool.with_variant(v), grid)?;
        let l = res.terminal();
        write_lln(run, &format!("lln_{}_{}.csv", e.key, v.name()), grid, res.loss_path.values())?;
        sec.check(
            (l - want).abs() <= LLN_TOL,
            format!("{what}: L(1) = {l:.4}, target {want} ± {LLN_TOL}"),
        );
    }
    Ok(sec)
}

fn write_curve(run: &mut Run, e: &Entry, v: Variant, res: &[RateResult], lbar: f64) -> Result<(), CliError> {
    let rows: Vec<Vec<Cell>> = res
        .iter()
        .map(|r| vec![Cell::F(r.ell), Cell::F(r.value), Cell::B(r.converged), Cell::U(r.iterations)])
        .collect();
    run.csv(
        &format!("rate_{}_{}.csv", e.key, v.name()),
        &header(&["ell", "I", "converged", "iters"]),
        &rows,
    )?;
    let n = e.cfg.pool.n_names() as f64;
    let tail: Vec<Vec<Cell>> = res
        .iter()
        .filter(|r| r.ell > lbar)
        .map(|r| {
            vec![
                Cell::F(r.ell),
                Cell::F(r.value),
                Cell::F((-n * r.value).exp()),
                Cell::F(-n * r.value / std::f64::consts::LN_10),
            ]
        })
        .collect();
    run.csv(
        &format!("tail_{}_{}.csv", e.key, v.name()),
        &header(&["ell", "I", "tail", "log10_tail"]),
        &tail,
    )
}

fn zero_at_lln(entries: &[Entry], opts: &RateOptions) -> Result<Section, CliError> {
    let mut sec = Section::new("rate vanishes at the typical loss", Kind::Check);
    for e in &entries[..2] {
        for v in Variant::ALL {
            let problem = settings::problem(&e.cfg, v)?;
            let lbar = problem.typical_terminal(&e.cfg)?;
            let r = rate_curve(&problem.pool, &[lbar], problem.factor_ref(), e.cfg.grid, opts)?;
            let value = r[0].value;
            sec.check(
                value < RATE_ZERO,
                format!("{} {}: I(L(T) = {lbar:.4}) = {value:.2e}", e.label, v.name()),
            );
        }
    }
    Ok(sec)
}

fn independent_oracle(entries: &[Entry], curves: &Curves) -> Result<Section, CliError> {
    let mut sec = Section::new("independent pools match Bernoulli KL", Kind::Check);
    for e in &entries[..2] {
        let pool = e.cfg.pool.with_variant(Variant::Independent);
        let pbar = typical_loss(&pool, e.cfg.grid)?.terminal();
        let worst = curves[&(e.key, "independent")]
            .iter()
            .map(|r| (r.value - bernoulli_kl(r.ell, pbar)).abs())
            .fold(0.0, f64::max);
        sec.check(
            worst < KL_TOL,
            format!("{}: p = {pbar:.4}, max |I - KL| = {worst:.2e}", e.label),
        );
    }
    Ok(sec)
}

fn at_level<'a>(curves: &'a Curves, key: &'static str, v: Variant) -> Option<&'a RateResult> {
    curves[&(key, v.name())].iter().find(|r| (r.ell - LEVEL).abs() < 1e-9)
}

fn orderings(entries: &[Entry], curves: &Curves) -> Result<Section, CliError> {
    let mut sec = Section::new("rate orderings at 0.85", Kind::Check);
    let value = |key, v| at_level(curves, key, v).map(|r| r.value).ok_or_else(missing);
    let [full, cont, sys, ind] = Variant::ALL.map(|v| value("p1", v));
    let (full, cont, sys, ind) = (full?, cont?, sys?, ind?);
    sec.check(
        full <= cont && cont <= sys && sys <= ind,
        format!("Portfolio I: full {full:.4} <= contagion {cont:.4} <= systematic {sys:.4} <= independent {ind:.4}"),
    );
    let [full, cont, sys, ind] = Variant::ALL.map(|v| value("p2", v));
    let (full, cont, sys, ind) = (full?, cont?, sys?, ind?);
    sec.check(
        full <= sys && sys <= cont && cont <= ind,
        format!("Portfolio II: full {full:.4} <= systematic {sys:.4} <= contagion {cont:.4} <= independent {ind:.4}"),
    );
    let res = at_level(curves, "p1", Variant::Full).ok_or_else(missing)?;
    let factor = entries[0].cfg.factor.as_ref();
    let (early, late) = (mean_control(res, factor, 0.0, 0.5), mean_control(res, factor, 0.5, 1.0));
    sec.check(
        early > late,
        format!("Portfolio I control mean over [0, 1/2] {early:.4} > over [1/2, 1] {late:.4}"),
    );
    Ok(sec)
}

fn missing() -> CliError {
    CliError::Config(format!("level {LEVEL} missing from the curve levels"))
}

fn extremals(entries: &[Entry], curves: &Curves, run: &mut Run) -> Result<Section, CliError> {
    let mut sec = Section::new("extremals at 0.85", Kind::Check);
    for e in entries {
        for v in Variant::ALL {
            let res = at_level(curves, e.key, v).ok_or_else(missing)?;
            write_extremals(run, &e.cfg, res, &format!("extremals_{}_{}.csv", e.key, v.name()))?;
        }
        let full = at_level(curves, e.key, Variant::Full).ok_or_else(missing)?;
        sec.note(format!(
            "{} full: I = {:.4} (entropy {:.4}, factor {:.4}), psi(T) = {:.4}",
            e.label,
            full.value,
            full.breakdown.entropy_term,
            full.breakdown.factor_term,
            full.psi_extremal.terminal()
        ));
    }
    let res = at_level(curves, "ab", Variant::Full).ok_or_else(missing)?;
    let (a, b) = (res.bin_extremals[0].values(), res.bin_extremals[1].values());
    let gap = a.iter().zip(b).map(|(x, y)| y - x).fold(f64::NEG_INFINITY, f64::max);
    sec.check(
        gap <= 1e-12,
        format!(
            "two-type pool: type A extremal >= type B pointwise (max(B - A) = {gap:.2e}, A(T) = {:.4}, B(T) = {:.4})",
            a[a.len() - 1],
            b[b.len() - 1]
        ),
    );
    Ok(sec)
}

fn refinement(e: &Entry, opts: &RateOptions) -> Result<Section, CliError> {
    let mut sec = Section::new("grid refinement at 0.85", Kind::Info);
    let problem = settings::problem(&e.cfg, Variant::Full)?;
    let coarse = e.cfg.grid;
    let fine = TimeGrid::new(coarse.horizon(), 2 * coarse.steps())?;
    let a = rate_curve(&problem.pool, &[LEVEL], problem.factor_ref(), coarse, opts)?[0].value;
    let b = rate_curve(&problem.pool, &[LEVEL], problem.factor_ref(), fine, opts)?[0].value;
    sec.note(format!(
        "{} full: I = {a:.6} at M = {}, {b:.6} at M = {}, change {:.2e}",
        e.label,
        coarse.steps(),
        fine.steps(),
        b - a
    ));
    Ok(sec)
}
