//! Result files: per-trial CSVs, per-cell directories, experiment summary.
//!
//! Layout: `results/<experiment-id>/<density>_<scheduler>/trial_<k>.csv`
//! plus sibling series files and a `summary.csv` at the experiment root.
//! All files are reproducible byte-for-byte from (config, seeds): no
//! timestamps or wall-clock data are ever written.

use crate::engine::{CellResult, ExperimentResult, TrialResult};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed results file {path}: {message}")]
    Malformed { path: String, message: String },
    #[error("no results found under {0}")]
    Empty(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Fixed-point float field with six decimals; empty for absent values.
fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn fmt_density(d: f64) -> String {
    if d.fract() == 0.0 {
        format!("{}", d as i64)
    } else {
        format!("{d}")
    }
}

pub fn cell_dir_name(density: f64, label: &str) -> String {
    format!("{}_{}", fmt_density(density), label)
}

/// Write every cell of an experiment plus the summary file.
pub fn write_experiment(dir: &Path, exp: &ExperimentResult) -> Result<(), OutputError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut ok_cells: Vec<&CellResult> = Vec::new();
    for cell in exp.cells.iter().flatten() {
        write_cell(dir, cell)?;
        ok_cells.push(cell);
    }
    write_summary(dir, &ok_cells)?;
    Ok(())
}

pub fn write_cell(experiment_dir: &Path, cell: &CellResult) -> Result<(), OutputError> {
    let cell_dir = experiment_dir.join(cell_dir_name(cell.density_veh_per_km, &cell.label));
    fs::create_dir_all(&cell_dir).map_err(io_err(&cell_dir))?;
    for trial in &cell.trials {
        write_trial_files(&cell_dir, trial)?;
    }
    Ok(())
}

/// `summary.csv`: one row per cell, trial-averaged headline metrics.
pub fn write_summary(dir: &Path, cells: &[&CellResult]) -> Result<(), OutputError> {
    let path = dir.join("summary.csv");
    let mut out = String::from("density,scheduler,mean_te_m,mean_aoi_ms,mean_pdr\n");
    let mut sorted: Vec<&&CellResult> = cells.iter().collect();
    sorted.sort_by(|a, b| {
        a.density_veh_per_km
            .partial_cmp(&b.density_veh_per_km)
            .unwrap()
            .then_with(|| a.label.cmp(&b.label))
    });
    for cell in sorted {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_density(cell.density_veh_per_km),
            cell.label,
            fmt_opt(cell.mean_tracking_error_m),
            fmt_opt(cell.mean_aoi_ms),
            fmt_opt(cell.mean_pdr),
        ));
    }
    fs::write(&path, out).map_err(io_err(&path))
}

pub fn write_trial_files(cell_dir: &Path, r: &TrialResult) -> Result<(), OutputError> {
    let k = r.trial;
    let m = &r.metrics;

    let path = cell_dir.join(format!("trial_{k}.csv"));
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    writeln!(
        f,
        "density,scheduler,trial,vehicles,mean_te_m,mean_aoi_ms,mean_pdr,tx_count,\
         reception_count,replay_checked,replay_mismatches,first_tx_ms,startup_avg_aoi_ms,\
         config_fingerprint"
    )
    .map_err(io_err(&path))?;
    writeln!(
        f,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{:016x}",
        fmt_density(r.density_veh_per_km),
        r.scheduler_label,
        k,
        m.vehicle_count,
        fmt_opt(m.mean_tracking_error_m),
        fmt_opt(m.mean_aoi_ms),
        fmt_opt(m.mean_pdr),
        m.tx_count,
        m.reception_count,
        m.replay_checked,
        m.replay_mismatches,
        m.first_tx_ms.map(|v| v.to_string()).unwrap_or_default(),
        fmt_opt(m.startup_avg_aoi_ms),
        r.config_fingerprint,
    )
    .map_err(io_err(&path))?;

    let path = cell_dir.join(format!("trial_{k}_aoi_time.csv"));
    let mut out = String::from("time_ms,aoi_ms,aoi_startup_ms\n");
    for s in &m.aoi_series {
        out.push_str(&format!(
            "{},{},{}\n",
            s.time_ms,
            fmt_opt(s.aoi_ms),
            fmt_opt(s.aoi_startup_ms)
        ));
    }
    fs::write(&path, out).map_err(io_err(&path))?;

    let path = cell_dir.join(format!("trial_{k}_rri_hist.csv"));
    let mut out = String::from("rri_ms,count\n");
    for (rri, count) in m.rri_histogram.iter() {
        out.push_str(&format!("{rri},{count}\n"));
    }
    fs::write(&path, out).map_err(io_err(&path))?;

    if !m.controller_trace.is_empty() {
        let path = cell_dir.join(format!("trial_{k}_controller.csv"));
        let mut out = String::from("time_ms,vehicle_id,aoi_ms,action,rri_ms,congested\n");
        for c in &m.controller_trace {
            out.push_str(&format!(
                "{},{},{:.6},{},{},{}\n",
                c.time_ms, c.vehicle_id, c.aoi_ms, c.action, c.rri_ms, c.congested
            ));
        }
        fs::write(&path, out).map_err(io_err(&path))?;
    }

    if !m.vehicle_trace.is_empty() {
        let path = cell_dir.join(format!("trial_{k}_trace.csv"));
        let mut out = String::from("time_ms,id,lane,x_m,y_m,v_mps\n");
        for s in &m.vehicle_trace {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6}\n",
                s.time_ms, s.id, s.lane, s.x_m, s.y_m, s.v_mps
            ));
        }
        fs::write(&path, out).map_err(io_err(&path))?;
    }

    Ok(())
}

/// Parsed trial summary row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummaryRow {
    pub density: f64,
    pub scheduler: String,
    pub trial: u32,
    pub vehicles: usize,
    pub mean_te_m: Option<f64>,
    pub mean_aoi_ms: Option<f64>,
    pub mean_pdr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrialFiles {
    pub summary: TrialSummaryRow,
    /// (time_ms, aoi_ms, aoi_startup_ms)
    pub aoi_time: Vec<(u64, Option<f64>, Option<f64>)>,
    /// (rri_ms, count)
    pub rri_hist: Vec<(u16, u32)>,
}

#[derive(Debug, Clone)]
pub struct CellFiles {
    pub density: f64,
    pub scheduler: String,
    pub trials: Vec<TrialFiles>,
}

fn parse_opt(field: &str) -> Option<f64> {
    (!field.is_empty()).then(|| field.parse().ok()).flatten()
}

fn read_lines(path: &Path) -> Result<Vec<String>, OutputError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Read a sweep's results directory back into memory.
pub fn read_results_dir(dir: &Path) -> Result<Vec<CellFiles>, OutputError> {
    let mut cells = Vec::new();
    let entries = fs::read_dir(dir).map_err(io_err(dir))?;
    let mut cell_dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    cell_dirs.sort();
    for cell_dir in cell_dirs {
        let name = cell_dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let Some((density_str, scheduler)) = name.split_once('_') else {
            continue;
        };
        let Ok(density) = density_str.parse::<f64>() else {
            continue;
        };
        // "20_ch_rri" splits as ("20", "ch_rri").
        let mut trials = Vec::new();
        let mut k = 0u32;
        loop {
            let summary_path = cell_dir.join(format!("trial_{k}.csv"));
            if !summary_path.exists() {
                break;
            }
            trials.push(read_trial_files(&cell_dir, k)?);
            k += 1;
        }
        if !trials.is_empty() {
            cells.push(CellFiles {
                density,
                scheduler: scheduler.to_string(),
                trials,
            });
        }
    }
    if cells.is_empty() {
        return Err(OutputError::Empty(dir.display().to_string()));
    }
    Ok(cells)
}

fn read_trial_files(cell_dir: &Path, k: u32) -> Result<TrialFiles, OutputError> {
    let path = cell_dir.join(format!("trial_{k}.csv"));
    let lines = read_lines(&path)?;
    if lines.len() < 2 {
        return Err(OutputError::Malformed {
            path: path.display().to_string(),
            message: "missing data row".into(),
        });
    }
    let fields: Vec<&str> = lines[1].split(',').collect();
    if fields.len() < 14 {
        return Err(OutputError::Malformed {
            path: path.display().to_string(),
            message: format!("expected 14 columns, got {}", fields.len()),
        });
    }
    let summary = TrialSummaryRow {
        density: fields[0].parse().unwrap_or(f64::NAN),
        scheduler: fields[1].to_string(),
        trial: fields[2].parse().unwrap_or(0),
        vehicles: fields[3].parse().unwrap_or(0),
        mean_te_m: parse_opt(fields[4]),
        mean_aoi_ms: parse_opt(fields[5]),
        mean_pdr: parse_opt(fields[6]),
    };

    let path = cell_dir.join(format!("trial_{k}_aoi_time.csv"));
    let mut aoi_time = Vec::new();
    for line in read_lines(&path)?.iter().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() == 3 {
            aoi_time.push((
                f[0].parse().unwrap_or(0),
                parse_opt(f[1]),
                parse_opt(f[2]),
            ));
        }
    }

    let path = cell_dir.join(format!("trial_{k}_rri_hist.csv"));
    let mut rri_hist = Vec::new();
    for line in read_lines(&path)?.iter().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() == 2 {
            rri_hist.push((f[0].parse().unwrap_or(0), f[1].parse().unwrap_or(0)));
        }
    }

    Ok(TrialFiles {
        summary,
        aoi_time,
        rri_hist,
    })
}
