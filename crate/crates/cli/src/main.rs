mod commands;
mod error;
mod output;
mod reproduce;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pool_ldp::{RawConfig, Variant};

use error::CliError;

/// Typical losses, large-deviations rates, extremal paths and Monte Carlo
/// for large pools of interacting defaultable names.
#[derive(Parser, Debug)]
#[command(name = "pool-ldp", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: PathBuf,

    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Time steps of the grid (overrides grid.steps).
    #[arg(long)]
    steps: Option<usize>,

    /// Number of names (overrides pool.n_names).
    #[arg(long)]
    n: Option<usize>,

    /// Which risk channels are on.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
}

#[derive(Args, Debug)]
struct Solve {
    /// Rate solver: joint or block.
    #[arg(long)]
    solver: Option<String>,

    /// Number of optimizer starts per level.
    #[arg(long)]
    restarts: Option<u64>,

    /// Seed for the perturbed starts.
    #[arg(long)]
    seed: Option<u64>,

    /// Also solve on a grid with twice the steps and record the change.
    #[arg(long)]
    refine: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Typical loss path L(t).
    Lln {
        #[command(flatten)]
        common: Common,
    },
    /// Rate function I(ell) over a list of levels.
    Rate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solve: Solve,
        /// Levels as start:stop:step or a comma-separated list.
        #[arg(long)]
        ells: Option<String>,
    },
    /// Large-deviations tail approximation exp(-N I(ell)).
    Tail {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solve: Solve,
        /// Levels above L(T), as start:stop:step or a comma-separated list.
        #[arg(long)]
        ells: Option<String>,
    },
    /// Optimal loss and factor paths at one level.
    Extremals {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solve: Solve,
        #[arg(long)]
        ell: Option<f64>,
    },
    /// Monte Carlo simulation of the finite pool.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reps: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a config and print the resolved model.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the bundled portfolios end to end and print a pass/fail report.
    ReproducePaper {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Only the level 0.85 instead of the full curves.
        #[arg(long)]
        quick: bool,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: pool_ldp::Error| e.to_string())
}

fn prepare(common: &Common) -> Result<RawConfig, CliError> {
    let mut raw = settings::load(&common.config)?;
    if let Some(steps) = common.steps {
        raw.grid.steps = steps;
    }
    if let Some(n) = common.n {
        raw.pool.n_names = n;
    }
    settings::set(&mut raw, "variant", common.variant.map(|v| v.name()));
    Ok(raw)
}

fn apply_solve(raw: &mut RawConfig, solve: &Solve) {
    settings::set(raw, "solver", solve.solver.clone());
    settings::set(raw, "restarts", solve.restarts);
    settings::set(raw, "seed", solve.seed);
    if solve.refine {
        settings::set(raw, "refine", Some(true));
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    let out = |c: &Common| -> PathBuf { c.out.clone() };
    match command {
        Command::Lln { common } => commands::lln(prepare(&common)?, &out(&common)).map(drop),
        Command::Rate { common, solve, ells } => {
            let mut raw = prepare(&common)?;
            apply_solve(&mut raw, &solve);
            settings::set(&mut raw, "ells", ells);
            commands::rate(raw, &out(&common)).map(drop)
        }
        Command::Tail { common, solve, ells } => {
            let mut raw = prepare(&common)?;
            apply_solve(&mut raw, &solve);
            settings::set(&mut raw, "ells", ells);
            commands::tail(raw, &out(&common)).map(drop)
        }
        Command::Extremals { common, solve, ell } => {
            let mut raw = prepare(&common)?;
            apply_solve(&mut raw, &solve);
            settings::set(&mut raw, "ell", ell);
            commands::extremals(raw, &out(&common)).map(drop)
        }
        Command::Simulate { common, reps, seed } => {
            let mut raw = prepare(&common)?;
            settings::set(&mut raw, "reps", reps);
            settings::set(&mut raw, "seed", seed);
            commands::simulate(raw, &out(&common)).map(drop)
        }
        Command::Validate { common } => commands::validate(prepare(&common)?, &out(&common)),
        Command::ReproducePaper { out, steps, quick } => reproduce_paper(&out, steps, quick),
    }
}

fn reproduce_paper(out: &Path, steps: usize, quick: bool) -> Result<(), CliError> {
    let sections = reproduce::reproduce(out, &reproduce::Options { steps, quick })?;
    let failed: Vec<&str> = sections
        .iter()
        .filter(|s| s.kind == reproduce::Kind::Check && !s.pass)
        .map(|s| s.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("failed sections: {}", failed.join(", "))))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot start {jobs} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
