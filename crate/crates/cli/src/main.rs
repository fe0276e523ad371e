//! `gridsync`: design, simulate, sweep and reproduce from scenario files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridsync::experiments::{self, Case, ExperimentId, Run};
use gridsync::io::{self, MetricsRow};
use gridsync::report::design_report;
use gridsync::scenario::{compute_metrics, run_scenario, ScenarioConfig, SyncMethod, TraceRecord};
use gridsync::Error;
use rayon::prelude::*;

#[derive(Parser)]
#[command(
    name = "gridsync",
    version,
    about = "Grid-following inverter synchronization lab"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override a config value, e.g. `--set grid.initial.magnitude=1.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Noise seed, replaces `simulation.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn overrides(&self) -> Vec<String> {
        let mut o = self.overrides.clone();
        if let Some(s) = self.seed {
            o.push(format!("simulation.seed={s}"));
        }
        o
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the LQR and Kalman design report.
    Design {
        /// Scenario file; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run one scenario and write its trace and metrics.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run every point of the scenario's `sweep` grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a canned experiment, or `all`.
    Reproduce {
        id: String,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        e if e.is_numerical() => 3,
        _ => 1,
    }
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Design { config, common } => {
            let cfg = match &config {
                Some(p) => load(p, &common)?,
                None => io::parse_scenario(
                    &io::scenario_to_string(&ScenarioConfig::new(SyncMethod::AaekfLqr))?,
                    &common.overrides(),
                )?,
            };
            let report = design_report(&cfg)?;
            fs::create_dir_all(&common.out)?;
            let path = common.out.join("design.toml");
            fs::write(&path, report.to_toml()?)?;
            println!(
                "closed-loop radius {:.6}, A_error radius {:.6}, report {}",
                report.lqr.closed_loop.spectral_radius,
                report.kalman.a_error_spectrum.spectral_radius,
                path.display()
            );
            Ok(())
        }
        Command::Simulate { config, common } => {
            let cfg = load(&config, &common)?;
            let run = simulate(&cfg)?;
            fs::create_dir_all(&common.out)?;
            write_point(&common.out, "", &cfg, &run)?;
            io::write_metrics_file(
                &common.out.join("metrics.csv"),
                std::slice::from_ref(&run.row),
            )?;
            print_row(&run.row);
            Ok(())
        }
        Command::Sweep { config, common } => {
            if !config.is_file() {
                return Err(missing(&config));
            }
            let points = io::expand_sweep(&io::load_table(&config, &common.overrides())?)?;
            let pool = pool(common.jobs)?;
            let runs: Vec<PointRun> = pool.install(|| {
                points
                    .par_iter()
                    .map(|p| {
                        let mut r = simulate(&p.config)?;
                        if !p.label.is_empty() {
                            r.row.label = p.label.clone();
                        }
                        Ok(r)
                    })
                    .collect::<Result<_, Error>>()
            })?;
            let dir = common.out.join("points");
            fs::create_dir_all(&dir)?;
            for (k, (p, r)) in points.iter().zip(&runs).enumerate() {
                write_point(&dir, &format!("{k:04}_"), &p.config, r)?;
            }
            let rows: Vec<MetricsRow> = runs.into_iter().map(|r| r.row).collect();
            io::write_metrics_file(&common.out.join("metrics.csv"), &rows)?;
            rows.iter().for_each(print_row);
            Ok(())
        }
        Command::Reproduce { id, common } => {
            let ids: Vec<ExperimentId> = if id == "all" {
                ExperimentId::ALL.to_vec()
            } else {
                vec![id.parse()?]
            };
            let pool = pool(common.jobs)?;
            for id in ids {
                let cases = experiments::cases(id)
                    .into_iter()
                    .map(|c| with_overrides(c, &common.overrides()))
                    .collect::<Result<Vec<_>, Error>>()?;
                let runs: Vec<Run> = pool.install(|| {
                    cases
                        .into_par_iter()
                        .map(experiments::run_case)
                        .collect::<Result<_, Error>>()
                })?;
                let dir = common.out.join(id.as_str());
                experiments::write_bundle(&dir, id, &runs)?;
                println!("{id}: {} runs written to {}", runs.len(), dir.display());
            }
            Ok(())
        }
    }
}

fn config_error(field: &str, reason: &str) -> Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

fn missing(path: &Path) -> Error {
    config_error("--config", &format!("{} does not exist", path.display()))
}

fn load(path: &Path, common: &Common) -> Result<ScenarioConfig, Error> {
    if !path.is_file() {
        return Err(missing(path));
    }
    io::load_scenario(path, &common.overrides())
}

fn with_overrides(case: Case, overrides: &[String]) -> Result<Case, Error> {
    if overrides.is_empty() {
        return Ok(case);
    }
    let config = io::parse_scenario(&io::scenario_to_string(&case.config)?, overrides)?;
    Ok(Case { config, ..case })
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, Error> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| config_error("--jobs", &e.to_string()))
}

struct PointRun {
    records: Vec<TraceRecord>,
    row: MetricsRow,
}

fn simulate(cfg: &ScenarioConfig) -> Result<PointRun, Error> {
    let outcome = run_scenario(cfg)?;
    let report = compute_metrics(cfg, &outcome);
    Ok(PointRun {
        row: MetricsRow {
            label: cfg.name.clone(),
            method: cfg.method.as_str().to_string(),
            report,
        },
        records: outcome.records,
    })
}

fn write_point(
    dir: &Path,
    prefix: &str,
    cfg: &ScenarioConfig,
    run: &PointRun,
) -> Result<(), Error> {
    io::write_trace_file(&dir.join(format!("{prefix}trace.csv")), &run.records)?;
    fs::write(
        dir.join(format!("{prefix}config.toml")),
        io::scenario_to_string(cfg)?,
    )?;
    Ok(())
}

fn print_row(r: &MetricsRow) {
    let m = &r.report;
    println!(
        "{} [{}]: {}, steady-state phase error {:.3e} rad",
        r.label,
        r.method,
        m.stability.as_str(),
        m.steady_state_phase_error
    );
}
