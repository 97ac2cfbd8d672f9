//! The two experiment sweeps and their CSV output.
//!
//! Row CSV columns (header always present):
//! `curve,x,trial,status,radar_sinr_db,best_set_radar_sinr_db,min_comm_sinr_db,iterations,converged`
//! plus `wall_time_s` when timing output is requested. `x` is the number of
//! subcarriers (`sweep-subcarriers`) or `Γ_c` in dB (`sweep-tradeoff`).
//! Values of failed or infeasible runs are left empty.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::{Averaging, Realization, ScenarioConfig};
use crate::{from_db, to_db, DfrcError, Result};

/// Outcome class of one run. Everything except `Ok` is data, not an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Infeasible,
    Degenerate,
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Infeasible => "infeasible",
            RunStatus::Degenerate => "degenerate",
            RunStatus::Failed => "failed",
        }
    }

    /// Classifies design errors; `None` for errors that should abort.
    pub fn from_error(e: &DfrcError) -> Option<RunStatus> {
        match e {
            DfrcError::Infeasible { .. } => Some(RunStatus::Infeasible),
            DfrcError::DegenerateDesign(_) | DfrcError::ChannelDegenerate { .. } => {
                Some(RunStatus::Degenerate)
            }
            DfrcError::Solver(_) => Some(RunStatus::Failed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub curve: String,
    pub x: f64,
    pub trial: usize,
    pub status: RunStatus,
    /// Radar SINR; for partitioned designs the linear mean over sets.
    pub radar_sinr_db: Option<f64>,
    pub best_set_radar_sinr_db: Option<f64>,
    pub min_comm_sinr_db: Option<f64>,
    /// MM iterations summed over sets.
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

fn run_pool<T, F>(jobs: usize, count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| DfrcError::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| (0..count).into_par_iter().map(&f).collect())
}

/// Designs every set of a partition of `real` and reduces them to a row.
fn partitioned_row(
    cfg: &ScenarioConfig,
    real: &Realization,
    sets: usize,
    power: f64,
    threshold_db: Option<f64>,
    curve: String,
    x: f64,
    trial: usize,
) -> Result<SweepRow> {
    let start = Instant::now();
    let n = real.grid.num_subcarriers;
    let size = n / sets;
    let mut cfg = cfg.clone();
    cfg.optimizer.comm_sinr_threshold_db = threshold_db;
    let opt = cfg.optimizer_config(vec![power; size]);
    let mut sinrs = Vec::with_capacity(sets);
    let mut min_comm = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = true;
    let mut status = RunStatus::Ok;
    for j in 0..sets {
        let part = real.subset(j * size, size);
        match part.design(&cfg, &opt) {
            Ok((_, res)) => {
                sinrs.push(res.radar_sinr);
                min_comm = min_comm.min(res.min_comm_sinr());
                iterations += res.iterations;
                converged &= res.converged;
            }
            Err(e) => {
                status = RunStatus::from_error(&e).ok_or(e)?;
                log::debug!("{curve} x={x} trial {trial} set {j}: {:?}", status);
                break;
            }
        }
    }
    let ok = status == RunStatus::Ok;
    Ok(SweepRow {
        curve,
        x,
        trial,
        status,
        radar_sinr_db: ok.then(|| to_db(sinrs.iter().sum::<f64>() / sinrs.len() as f64)),
        best_set_radar_sinr_db: ok.then(|| to_db(sinrs.iter().cloned().fold(f64::MIN, f64::max))),
        min_comm_sinr_db: ok.then(|| to_db(min_comm)),
        iterations,
        converged: ok && converged,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Radar SINR versus `N` for each total power `P_t`, with `P_{t,n} = P_t / N`.
///
/// Each trial is drawn once on the largest grid and every `N` uses its
/// first `N` subcarriers.
pub fn run_subcarrier_sweep(cfg: &ScenarioConfig, jobs: usize) -> Result<SweepResult> {
    cfg.validate()?;
    let ex = &cfg.experiment;
    let n_max = ex.subcarrier_counts.iter().cloned().max().ok_or_else(|| {
        DfrcError::InvalidInput("the subcarrier sweep needs at least one subcarrier count".into())
    })?;
    let mut big = cfg.clone();
    big.grid.num_subcarriers = n_max;
    big.channel.dft_size = Some(cfg.channel.dft_size.unwrap_or(n_max).max(n_max));
    let grid = big.grid.clone();
    let mut points = Vec::new();
    for trial in 0..ex.trials {
        for &pt in &ex.total_power_db {
            for &n in &ex.subcarrier_counts {
                points.push((trial, pt, n));
            }
        }
    }
    let rows = run_pool(jobs, points.len(), |i| {
        let (trial, pt, n) = points[i];
        let real = Realization::draw(&big, &grid, trial as u64)?.subset(0, n);
        let row = partitioned_row(
            &big,
            &real,
            1,
            from_db(pt) / n as f64,
            cfg.optimizer.comm_sinr_threshold_db,
            format!("pt_{pt}db"),
            n as f64,
            trial,
        )?;
        log::info!(
            "P_t={pt} dB N={n} trial {trial}: {:?} {:?}",
            row.status,
            row.radar_sinr_db
        );
        Ok(row)
    })?;
    Ok(SweepResult { rows })
}

/// Radar SINR versus `Γ_c` for each partition count (curves `nsub_<k>`)
/// and, optionally, the radar-only design (curve `radar_only`, identical at
/// every `Γ_c`).
pub fn run_tradeoff_sweep(cfg: &ScenarioConfig, jobs: usize) -> Result<SweepResult> {
    cfg.validate()?;
    cfg.validate_partitions()?;
    let ex = &cfg.experiment;
    let power = from_db(cfg.optimizer.subcarrier_power_db);
    // (trial, partition count or None for radar-only, gamma index)
    let mut points: Vec<(usize, Option<usize>, Option<usize>)> = Vec::new();
    for trial in 0..ex.trials {
        if ex.radar_only {
            points.push((trial, None, None));
        }
        for &p in &ex.partitions {
            for g in 0..ex.comm_sinr_db.len() {
                points.push((trial, Some(p), Some(g)));
            }
        }
    }
    let computed = run_pool(jobs, points.len(), |i| {
        let (trial, sets, gamma) = points[i];
        let real = Realization::draw(cfg, &cfg.grid, trial as u64)?;
        let row = match (sets, gamma) {
            (Some(sets), Some(g)) => {
                let gdb = ex.comm_sinr_db[g];
                partitioned_row(
                    cfg,
                    &real,
                    sets,
                    power,
                    Some(gdb),
                    format!("nsub_{sets}"),
                    gdb,
                    trial,
                )?
            }
            _ => partitioned_row(
                cfg,
                &real,
                1,
                power,
                None,
                "radar_only".into(),
                f64::NAN,
                trial,
            )?,
        };
        log::info!(
            "{} x={} trial {trial}: {:?} {:?}",
            row.curve,
            row.x,
            row.status,
            row.radar_sinr_db
        );
        Ok(row)
    })?;
    let mut rows = Vec::new();
    for row in computed {
        if row.curve == "radar_only" {
            for &gdb in &ex.comm_sinr_db {
                rows.push(SweepRow {
                    x: gdb,
                    ..row.clone()
                });
            }
        } else {
            rows.push(row);
        }
    }
    // curve-major order: radar_only first, then partitions as configured
    let rank = |c: &str| -> usize {
        if c == "radar_only" {
            0
        } else {
            1 + ex
                .partitions
                .iter()
                .position(|p| c == format!("nsub_{p}"))
                .unwrap_or(usize::MAX - 1)
        }
    };
    rows.sort_by(|a, b| {
        rank(&a.curve)
            .cmp(&rank(&b.curve))
            .then(a.x.total_cmp(&b.x))
            .then(a.trial.cmp(&b.trial))
    });
    Ok(SweepResult { rows })
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes one CSV line per row; `timing` adds the `wall_time_s` column.
pub fn write_rows_csv<W: Write>(result: &SweepResult, out: W, timing: bool) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec![
        "curve",
        "x",
        "trial",
        "status",
        "radar_sinr_db",
        "best_set_radar_sinr_db",
        "min_comm_sinr_db",
        "iterations",
        "converged",
    ];
    if timing {
        header.push("wall_time_s");
    }
    wtr.write_record(&header)?;
    for r in &result.rows {
        let mut rec = vec![
            r.curve.clone(),
            r.x.to_string(),
            r.trial.to_string(),
            r.status.as_str().to_string(),
            opt_field(r.radar_sinr_db),
            opt_field(r.best_set_radar_sinr_db),
            opt_field(r.min_comm_sinr_db),
            r.iterations.to_string(),
            r.converged.to_string(),
        ];
        if timing {
            rec.push(format!("{:.3}", r.wall_time_s));
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// One curve point averaged over its successful trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub curve: String,
    pub x: f64,
    pub trials_ok: usize,
    pub trials_not_ok: usize,
    pub mean_radar_sinr_db: Option<f64>,
    /// Standard error of the mean, in dB.
    pub std_error_db: Option<f64>,
    pub mean_best_set_radar_sinr_db: Option<f64>,
    pub mean_min_comm_sinr_db: Option<f64>,
    pub mean_iterations: f64,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Averages in dB, or in linear units with a delta-method standard error.
pub fn average_db(values_db: &[f64], averaging: Averaging) -> Option<(f64, f64)> {
    if values_db.is_empty() {
        return None;
    }
    Some(match averaging {
        Averaging::Db => mean_se(values_db),
        Averaging::Linear => {
            let lin: Vec<f64> = values_db.iter().map(|v| from_db(*v)).collect();
            let (m, se) = mean_se(&lin);
            (to_db(m), 10.0 / std::f64::consts::LN_10 * se / m)
        }
    })
}

pub fn summarize(result: &SweepResult, averaging: Averaging) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in &result.rows {
        if !keys
            .iter()
            .any(|(c, x)| *c == r.curve && x.total_cmp(&r.x).is_eq())
        {
            keys.push((r.curve.clone(), r.x));
        }
    }
    keys.into_iter()
        .map(|(curve, x)| {
            let group: Vec<&SweepRow> = result
                .rows
                .iter()
                .filter(|r| r.curve == curve && r.x.total_cmp(&x).is_eq())
                .collect();
            let ok: Vec<&&SweepRow> = group.iter().filter(|r| r.status == RunStatus::Ok).collect();
            let pick = |f: fn(&SweepRow) -> Option<f64>| -> Vec<f64> {
                ok.iter().filter_map(|r| f(r)).collect()
            };
            let radar = average_db(&pick(|r| r.radar_sinr_db), averaging);
            let best = average_db(&pick(|r| r.best_set_radar_sinr_db), averaging);
            let comm = average_db(&pick(|r| r.min_comm_sinr_db), Averaging::Db);
            SummaryRow {
                trials_ok: ok.len(),
                trials_not_ok: group.len() - ok.len(),
                mean_radar_sinr_db: radar.map(|v| v.0),
                std_error_db: radar.map(|v| v.1),
                mean_best_set_radar_sinr_db: best.map(|v| v.0),
                mean_min_comm_sinr_db: comm.map(|v| v.0),
                mean_iterations: if ok.is_empty() {
                    0.0
                } else {
                    ok.iter().map(|r| r.iterations as f64).sum::<f64>() / ok.len() as f64
                },
                curve,
                x,
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(summary: &[SummaryRow], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([
        "curve",
        "x",
        "trials_ok",
        "trials_not_ok",
        "mean_radar_sinr_db",
        "std_error_db",
        "mean_best_set_radar_sinr_db",
        "mean_min_comm_sinr_db",
        "mean_iterations",
    ])?;
    for s in summary {
        wtr.write_record([
            s.curve.clone(),
            s.x.to_string(),
            s.trials_ok.to_string(),
            s.trials_not_ok.to_string(),
            opt_field(s.mean_radar_sinr_db),
            opt_field(s.std_error_db),
            opt_field(s.mean_best_set_radar_sinr_db),
            opt_field(s.mean_min_comm_sinr_db),
            s.mean_iterations.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
