//! Reshape sweep results into one plot-ready CSV per figure.

use crate::Failure;
use nrv2x_sim::output::{read_results_dir, CellFiles};
use std::collections::BTreeSet;
use std::path::Path;

const FIGURES: &[&str] = &[
    "te_vs_density",
    "aoi_vs_density",
    "pdr_vs_density",
    "aoi_vs_time",
    "rri_hist",
];

/// Canonical column order: static RRIs ascending, then ch_rri, aoi_rri.
fn scheduler_order(label: &str) -> (u8, u32, String) {
    if let Some(n) = label.strip_prefix("static").and_then(|s| s.parse().ok()) {
        (0, n, label.to_string())
    } else if label == "ch_rri" {
        (1, 0, label.to_string())
    } else if label == "aoi_rri" {
        (2, 0, label.to_string())
    } else {
        (3, 0, label.to_string())
    }
}

fn fmt_density(d: f64) -> String {
    if d.fract() == 0.0 {
        format!("{}", d as i64)
    } else {
        format!("{d}")
    }
}

pub fn cmd_report(results: &Path, figure: &str) -> Result<(), Failure> {
    if !FIGURES.contains(&figure) {
        return Err(Failure::usage(format!(
            "unknown figure '{figure}' (expected one of {})",
            FIGURES.join(", ")
        )));
    }
    let cells = read_results_dir(results).map_err(|e| Failure::invalid(e.to_string()))?;

    // The grid must be complete: every density x scheduler combination seen
    // anywhere must exist.
    let densities: BTreeSet<u64> = cells.iter().map(|c| c.density.to_bits()).collect();
    let mut schedulers: Vec<String> = cells
        .iter()
        .map(|c| c.scheduler.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    schedulers.sort_by_key(|s| scheduler_order(s));
    let mut missing = Vec::new();
    for &dbits in &densities {
        for s in &schedulers {
            let d = f64::from_bits(dbits);
            if !cells.iter().any(|c| c.density == d && &c.scheduler == s) {
                missing.push(format!("{}_{}", fmt_density(d), s));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Failure::invalid(format!(
            "incomplete results; absent cells: {}",
            missing.join(", ")
        )));
    }

    let report_dir = results.join("report");
    std::fs::create_dir_all(&report_dir)
        .map_err(|e| Failure::invalid(format!("cannot create report dir: {e}")))?;

    let mut sorted_densities: Vec<f64> = densities.iter().map(|&b| f64::from_bits(b)).collect();
    sorted_densities.sort_by(|a, b| a.partial_cmp(b).unwrap());

    match figure {
        "te_vs_density" | "aoi_vs_density" | "pdr_vs_density" => {
            summary_figure(&report_dir, figure, &cells, &sorted_densities, &schedulers)
        }
        "aoi_vs_time" => aoi_vs_time(&report_dir, &cells, &sorted_densities, &schedulers),
        "rri_hist" => rri_hist(&report_dir, &cells, &sorted_densities, &schedulers),
        _ => unreachable!(),
    }
}

fn cell<'a>(cells: &'a [CellFiles], density: f64, scheduler: &str) -> &'a CellFiles {
    cells
        .iter()
        .find(|c| c.density == density && c.scheduler == scheduler)
        .expect("grid completeness checked")
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn summary_figure(
    report_dir: &Path,
    figure: &str,
    cells: &[CellFiles],
    densities: &[f64],
    schedulers: &[String],
) -> Result<(), Failure> {
    let mut out = String::from("density");
    for s in schedulers {
        out.push(',');
        out.push_str(s);
    }
    out.push('\n');
    for &d in densities {
        out.push_str(&fmt_density(d));
        for s in schedulers {
            let c = cell(cells, d, s);
            let value = mean(c.trials.iter().map(|t| match figure {
                "te_vs_density" => t.summary.mean_te_m,
                "aoi_vs_density" => t.summary.mean_aoi_ms,
                _ => t.summary.mean_pdr,
            }));
            out.push(',');
            out.push_str(&fmt_opt(value));
        }
        out.push('\n');
    }
    let path = report_dir.join(format!("{figure}.csv"));
    std::fs::write(&path, out).map_err(|e| Failure::invalid(e.to_string()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn aoi_vs_time(
    report_dir: &Path,
    cells: &[CellFiles],
    densities: &[f64],
    schedulers: &[String],
) -> Result<(), Failure> {
    for &d in densities {
        let times: BTreeSet<u64> = cell(cells, d, &schedulers[0])
            .trials
            .iter()
            .flat_map(|t| t.aoi_time.iter().map(|(ts, _, _)| *ts))
            .collect();
        let mut out = String::from("time_ms");
        for s in schedulers {
            out.push(',');
            out.push_str(s);
        }
        out.push('\n');
        for &ts in &times {
            out.push_str(&ts.to_string());
            for s in schedulers {
                let c = cell(cells, d, s);
                let value = mean(c.trials.iter().map(|t| {
                    t.aoi_time
                        .iter()
                        .find(|(time, _, _)| *time == ts)
                        .and_then(|(_, aoi, _)| *aoi)
                }));
                out.push(',');
                out.push_str(&fmt_opt(value));
            }
            out.push('\n');
        }
        let path = report_dir.join(format!("aoi_vs_time_{}.csv", fmt_density(d)));
        std::fs::write(&path, out).map_err(|e| Failure::invalid(e.to_string()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn rri_hist(
    report_dir: &Path,
    cells: &[CellFiles],
    densities: &[f64],
    schedulers: &[String],
) -> Result<(), Failure> {
    for &d in densities {
        let mut rris: BTreeSet<u16> = BTreeSet::new();
        for s in schedulers {
            for t in &cell(cells, d, s).trials {
                rris.extend(t.rri_hist.iter().map(|(r, _)| *r));
            }
        }
        let mut out = String::from("rri_ms");
        for s in schedulers {
            out.push(',');
            out.push_str(s);
        }
        out.push('\n');
        for &rri in &rris {
            out.push_str(&rri.to_string());
            for s in schedulers {
                let total: u64 = cell(cells, d, s)
                    .trials
                    .iter()
                    .flat_map(|t| t.rri_hist.iter())
                    .filter(|(r, _)| *r == rri)
                    .map(|(_, c)| *c as u64)
                    .sum();
                out.push(',');
                out.push_str(&total.to_string());
            }
            out.push('\n');
        }
        let path = report_dir.join(format!("rri_hist_{}.csv", fmt_density(d)));
        std::fs::write(&path, out).map_err(|e| Failure::invalid(e.to_string()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
