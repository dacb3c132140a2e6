//! Command-line front end: `solve`, `validate`, `converge`, `characteristics`.
//!
//! Exit status is 0 on success, 2 when an invariant or convergence check
//! fails, and 1 on any error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use chol::characteristics::{backward_field, trace, SnapshotProvider};
use chol::report::{self, build_report, converge, load_config, SuiteOptions};
use chol::stepper::{read_trajectory, run, write_trajectory};

#[derive(Parser)]
#[command(name = "chol", version, about = "Dissipative Camassa-Holm solver and validator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a configured scenario, writing the trajectory and report.json.
    Solve {
        config: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Skip the rerun-based checks (determinism, backend agreement,
        /// refinement comparisons).
        #[arg(long)]
        no_reruns: bool,
    },
    /// Rerun the invariant suite on a trajectory directory.
    Validate {
        dir: PathBuf,
        #[arg(long)]
        no_reruns: bool,
    },
    /// Grid-doubling study with both backends.
    Converge {
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        /// Write the table as JSON here instead of stdout.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Trace one characteristic through a stored trajectory.
    Characteristics {
        dir: PathBuf,
        #[arg(long)]
        start: f64,
        #[arg(long, default_value_t = 0.0)]
        t0: f64,
        /// End time; defaults to the final snapshot time.
        #[arg(long)]
        t1: Option<f64>,
        /// Trace in the backward field v(t, x) = −u(T − t, x).
        #[arg(long)]
        backward: bool,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct Timing {
    solve_seconds: Option<f64>,
    suite_seconds: f64,
    threads: usize,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn finish_report(dir: &Path, rep: &report::RunReport, timing: Timing) -> Result<bool> {
    let path = dir.join("report.json");
    std::fs::write(&path, rep.to_json()?).with_context(|| format!("writing {}", path.display()))?;
    write_json(&dir.join("timing.json"), &timing)?;
    for r in rep.invariants.iter().filter(|r| r.status == report::Status::Fail) {
        eprintln!("invariant failed: {} (measured {:e}, tolerance {:e})", r.name, r.measured, r.tolerance);
    }
    Ok(rep.passed())
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Solve { config, out, no_reruns } => {
            let (scenario, cfg) = load_config(&config).with_context(|| format!("loading {}", config.display()))?;
            let t0 = Instant::now();
            let traj = run(&scenario, &cfg)?;
            let solve_seconds = t0.elapsed().as_secs_f64();
            write_trajectory(&out, &scenario, &cfg, &traj)?;
            let t1 = Instant::now();
            let rep = build_report(&scenario, &cfg, &traj, SuiteOptions { reruns: !no_reruns })?;
            let timing = Timing {
                solve_seconds: Some(solve_seconds),
                suite_seconds: t1.elapsed().as_secs_f64(),
                threads: rayon::current_num_threads(),
            };
            finish_report(&out, &rep, timing)
        }
        Command::Validate { dir, no_reruns } => {
            let (scenario, cfg, traj) = read_trajectory(&dir).with_context(|| format!("reading {}", dir.display()))?;
            let t1 = Instant::now();
            let rep = build_report(&scenario, &cfg, &traj, SuiteOptions { reruns: !no_reruns })?;
            let timing = Timing {
                solve_seconds: None,
                suite_seconds: t1.elapsed().as_secs_f64(),
                threads: rayon::current_num_threads(),
            };
            finish_report(&dir, &rep, timing)
        }
        Command::Converge { config, levels, out } => {
            let (scenario, cfg) = load_config(&config).with_context(|| format!("loading {}", config.display()))?;
            let table = converge(&scenario, &cfg, levels)?;
            match out {
                Some(path) => write_json(&path, &table)?,
                None => println!("{}", serde_json::to_string_pretty(&table)?),
            }
            Ok(table.passed)
        }
        Command::Characteristics { dir, start, t0, t1, backward, dt, out } => {
            let (scenario, _, traj) = read_trajectory(&dir).with_context(|| format!("reading {}", dir.display()))?;
            let provider = SnapshotProvider::from_trajectory(&traj, scenario.d, scenario.n_x)?;
            let t_end = traj.last().t;
            let t1 = t1.unwrap_or(t_end);
            let ch = if backward {
                trace(&backward_field(&provider, t_end)?, start, t0, t1, dt)?
            } else {
                trace(&provider, start, t0, t1, dt)?
            };
            if ch.truncated {
                log::warn!("characteristic left the reconstruction domain at t = {}", ch.t[ch.t.len() - 1]);
            }
            ch.write_csv(&out)?;
            Ok(true)
        }
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("CHOL_THREADS") {
        let n: usize = v.parse().with_context(|| format!("CHOL_THREADS must be a thread count, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match init_threads().and_then(|_| execute(cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
