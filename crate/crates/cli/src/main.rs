//! Command-line entry point: single runs, density sweeps, the ideal
//! allocation table, and plot-ready CSV reports.
//!
//! Exit codes: 0 success, 1 validation failure or missing results,
//! 2 usage errors (missing config, malformed arguments).

mod report;

use clap::{Parser, Subcommand};
use nrv2x_sim::ch_rri::ideal_allocation_oracle;
use nrv2x_sim::config::{SchedulerKind, SimConfig};
use nrv2x_sim::engine::{run_experiment, run_trial, CellResult, ExperimentResult};
use nrv2x_sim::output;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "nrv2x-sim",
    about = "Slot-accurate NR-V2X Mode-2 sidelink broadcast simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured cell (all trials, or one trial with --seed).
    Run {
        /// TOML configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Run a single trial with this index instead of the whole set.
        #[arg(long)]
        seed: Option<u32>,
        /// Results root directory.
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Experiment id (defaults to a fingerprint-derived name).
        #[arg(long)]
        id: Option<String>,
    },
    /// Run a densities x schedulers grid from a base configuration.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated densities, veh/km.
        #[arg(long, value_delimiter = ',')]
        densities: Vec<f64>,
        /// Comma-separated scheduler labels: static<N>, ch_rri, aoi_rri.
        #[arg(long, value_delimiter = ',')]
        schedulers: Vec<String>,
        /// Trials per cell (defaults to the config value).
        #[arg(long)]
        trials: Option<u32>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long)]
        id: Option<String>,
    },
    /// Print the ideal channel occupancy / success probability table.
    Oracle {
        /// Cluster sizes, comma-separated.
        #[arg(long, value_delimiter = ',')]
        clusters: Vec<u32>,
        /// Fixed RRIs to tabulate, ms.
        #[arg(long, value_delimiter = ',', default_value = "20,50,100")]
        rris: Vec<u16>,
        /// Slot opportunities per millisecond.
        #[arg(long, default_value_t = 1.0)]
        slots_per_ms: f64,
    },
    /// Reshape sweep results into plot-ready CSV files.
    Report {
        /// Results directory produced by `sweep`.
        #[arg(long)]
        results: PathBuf,
        /// One of: te_vs_density, aoi_vs_density, pdr_vs_density,
        /// aoi_vs_time, rri_hist.
        #[arg(long)]
        figure: String,
    },
}

/// Failure carrying its intended process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run {
            config,
            seed,
            out,
            id,
        } => cmd_run(&config, seed, &out, id),
        Command::Sweep {
            config,
            densities,
            schedulers,
            trials,
            out,
            id,
        } => cmd_sweep(&config, &densities, &schedulers, trials, &out, id),
        Command::Oracle {
            clusters,
            rris,
            slots_per_ms,
        } => cmd_oracle(&clusters, &rris, slots_per_ms),
        Command::Report { results, figure } => report::cmd_report(&results, &figure),
    }
}

fn load_config(path: &PathBuf) -> Result<SimConfig, Failure> {
    if !path.exists() {
        return Err(Failure::usage(format!(
            "config file {} not found\nusage: nrv2x-sim run --config <file> [--seed N]",
            path.display()
        )));
    }
    let cfg = SimConfig::load(path).map_err(|e| Failure::usage(e.to_string()))?;
    cfg.validate().map_err(|e| Failure::invalid(e.to_string()))?;
    Ok(cfg)
}

/// Thread cap for sweeps, from the SIM_THREADS environment variable.
fn thread_pool() -> Result<rayon::ThreadPool, Failure> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("SIM_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Failure::usage(format!("SIM_THREADS={v} is not a thread count")))?;
        builder = builder.num_threads(n.max(1));
    }
    builder
        .build()
        .map_err(|e| Failure::invalid(format!("thread pool: {e}")))
}

fn summary_line(label: &str, density: f64, cell: &CellResult) {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "n/a".into());
    println!(
        "density={} scheduler={} trials={} mean_te_m={} mean_aoi_ms={} mean_pdr={}",
        density,
        label,
        cell.trials.len(),
        fmt(cell.mean_tracking_error_m),
        fmt(cell.mean_aoi_ms),
        fmt(cell.mean_pdr),
    );
}

fn cmd_run(
    config: &PathBuf,
    seed: Option<u32>,
    out: &PathBuf,
    id: Option<String>,
) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let id = id.unwrap_or_else(|| format!("run-{:016x}", cfg.fingerprint()));
    let pool = thread_pool()?;

    let trials: Vec<u32> = match seed {
        Some(s) => vec![s],
        None => (0..cfg.run.trials).collect(),
    };
    let results: Result<Vec<_>, _> = pool.install(|| {
        use rayon::prelude::*;
        trials
            .par_iter()
            .map(|&k| run_trial(&cfg, k))
            .collect::<Result<Vec<_>, _>>()
    });
    let results = results.map_err(|e| Failure::invalid(e.to_string()))?;

    let mean =
        |f: &dyn Fn(&nrv2x_sim::engine::TrialResult) -> Option<f64>| -> Option<f64> {
            let v: Vec<f64> = results.iter().filter_map(|r| f(r)).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
    let cell = CellResult {
        density_veh_per_km: cfg.highway.density_veh_per_km,
        scheduler: cfg.scheduler.clone(),
        label: cfg.scheduler.label(),
        mean_tracking_error_m: mean(&|r| r.metrics.mean_tracking_error_m),
        mean_aoi_ms: mean(&|r| r.metrics.mean_aoi_ms),
        mean_pdr: mean(&|r| r.metrics.mean_pdr),
        trials: results,
    };

    let dir = out.join(&id);
    let exp = ExperimentResult {
        cells: vec![Ok(cell)],
    };
    output::write_experiment(&dir, &exp)
        .map_err(|e| Failure::invalid(e.to_string()))?;
    let cell = exp.cells[0].as_ref().unwrap();
    summary_line(&cell.label, cell.density_veh_per_km, cell);
    println!("results written to {}", dir.display());
    Ok(())
}

fn cmd_sweep(
    config: &PathBuf,
    densities: &[f64],
    schedulers: &[String],
    trials: Option<u32>,
    out: &PathBuf,
    id: Option<String>,
) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    if densities.is_empty() {
        return Err(Failure::usage("sweep needs --densities"));
    }
    if schedulers.is_empty() {
        return Err(Failure::usage("sweep needs --schedulers"));
    }
    let kinds: Vec<SchedulerKind> = schedulers
        .iter()
        .map(|s| {
            SchedulerKind::parse_label(s).ok_or_else(|| {
                Failure::usage(format!(
                    "unknown scheduler '{s}' (expected static<N>, ch_rri, or aoi_rri)"
                ))
            })
        })
        .collect::<Result<_, _>>()?;
    let trials = trials.unwrap_or(cfg.run.trials);
    let id = id.unwrap_or_else(|| format!("sweep-{:016x}", cfg.fingerprint()));

    let pool = thread_pool()?;
    let exp = pool
        .install(|| run_experiment(&cfg, densities, &kinds, trials))
        .map_err(|e| Failure::invalid(e.to_string()))?;

    let dir = out.join(&id);
    output::write_experiment(&dir, &exp)
        .map_err(|e| Failure::invalid(e.to_string()))?;
    let mut failures = 0usize;
    for cell in &exp.cells {
        match cell {
            Ok(c) => summary_line(&c.label, c.density_veh_per_km, c),
            Err(e) => {
                failures += 1;
                eprintln!("cell failed: {e}");
            }
        }
    }
    println!("results written to {}", dir.display());
    if failures == exp.cells.len() {
        return Err(Failure::invalid("every sweep cell failed"));
    }
    Ok(())
}

fn cmd_oracle(clusters: &[u32], rris: &[u16], slots_per_ms: f64) -> Result<(), Failure> {
    if clusters.is_empty() {
        return Err(Failure::usage("oracle needs --clusters"));
    }
    let table = ideal_allocation_oracle(clusters, slots_per_ms, rris)
        .map_err(|e| Failure::usage(e.to_string()))?;
    println!("rri_ms,occupancy_percent,p_suc");
    for row in &table.fixed {
        println!(
            "{},{:.2},{:.4}",
            row.rri_ms, row.occupancy_percent, row.p_suc
        );
    }
    println!(
        "adaptive,{:.2},{:.4}",
        table.adaptive_occupancy_percent, table.adaptive_p_suc
    );
    Ok(())
}
