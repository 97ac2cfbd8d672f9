//! Scenario configuration, seeded Monte Carlo realizations, single design
//! runs with an echo-level check, and the two parameter sweeps.
//!
//! Every trial draws its clutter field, downlink channel and symbols from
//! seeds derived from `(scenario seed, trial)`, so results do not depend on
//! job scheduling. Within a trial all sweep points reuse the same draws.

mod config;
mod sweep;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use config::{
    ArrayConfig, Averaging, ChannelConfig, ClutterConfig, ExperimentConfig, OptimizerSettings,
    ScenarioConfig, TargetConfig,
};
pub use sweep::{
    run_subcarrier_sweep, run_tradeoff_sweep, summarize, write_rows_csv, write_summary_csv,
    RunStatus, SummaryRow, SweepResult, SweepRow,
};

use crate::comm_channel::{dft_response, FreqChannel, TapChannel};
use crate::io::import_dense_ccm;
use crate::lifting::LiftedOperators;
use crate::optimizer::{
    clutter_noise_matrix, run, DesignProblem, DesignReport, DesignResult, OptimizerConfig,
};
use crate::radar_scene::{
    clutter_factors, stacked_signature, ClutterField, Dims, EchoSimulator, InnerCcmFactors,
    Scatterer,
};
use crate::signal_model::{generate_symbols, OfdmGrid, SymbolFrame};
use crate::{from_db, to_db, DfrcError, Result};

const STREAM_CLUTTER: u64 = 1;
const STREAM_CHANNEL: u64 = 2;
const STREAM_SYMBOLS: u64 = 3;
const STREAM_ECHO: u64 = 4;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `stream` of trial `trial`.
pub fn derive_seed(base: u64, trial: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ trial) ^ stream)
}

/// One random draw of everything a design needs except the transmit power.
#[derive(Debug, Clone)]
pub struct Realization {
    pub grid: OfdmGrid,
    pub target: Scatterer,
    pub clutter: ClutterField,
    pub channel: FreqChannel,
    pub symbols: SymbolFrame,
}

impl Realization {
    /// Draws trial `trial` on `grid`. The channel's frequency response uses
    /// a DFT of `cfg.channel.dft_size` points (default: `grid` size).
    pub fn draw(cfg: &ScenarioConfig, grid: &OfdmGrid, trial: u64) -> Result<Realization> {
        let n = grid.num_subcarriers;
        let mut clutter_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, trial, STREAM_CLUTTER));
        let c = &cfg.clutter;
        let clutter = if c.patches_per_cell == 0 {
            ClutterField::empty()
        } else {
            ClutterField::random(
                c.max_offset,
                c.patches_per_cell,
                (
                    c.azimuth_range_deg.0.to_radians(),
                    c.azimuth_range_deg.1.to_radians(),
                ),
                c.speed_range_m_s,
                from_db(c.power_db),
                n,
                &mut clutter_rng,
            )
        };
        let mut channel_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, trial, STREAM_CHANNEL));
        let taps = TapChannel::random(
            cfg.users,
            cfg.channel.taps,
            cfg.array.num_tx,
            from_db(cfg.channel.noise_power_db),
            &mut channel_rng,
        );
        let dft_size = cfg.channel.dft_size.unwrap_or(n).max(n);
        let channel = dft_response(&taps, &grid.slice(0, dft_size))?.subset(0, n);
        let symbols = generate_symbols(
            cfg.users,
            grid,
            cfg.constellation,
            derive_seed(cfg.seed, trial, STREAM_SYMBOLS),
        );
        Ok(Realization {
            grid: grid.clone(),
            target: Scatterer::uniform(
                cfg.target.azimuth_deg.to_radians(),
                cfg.target.speed_m_s,
                from_db(cfg.target.power_db),
                n,
                0,
            ),
            clutter,
            channel,
            symbols,
        })
    }

    /// Subcarriers `start..start + count` with their global frequencies kept.
    pub fn subset(&self, start: usize, count: usize) -> Realization {
        Realization {
            grid: self.grid.slice(start, count),
            target: self.target.slice(start, count),
            clutter: self.clutter.slice(start, count),
            channel: self.channel.subset(start, count),
            symbols: self.symbols.subset(start, count),
        }
    }

    /// Clutter factors from the patches, or from the dense CCM files when
    /// the scenario lists any.
    pub fn clutter_factors(&self, cfg: &ScenarioConfig) -> Result<Vec<InnerCcmFactors>> {
        if cfg.clutter.dense_ccm_files.is_empty() {
            return clutter_factors(
                &self.clutter,
                &self.grid,
                &cfg.geometry(),
                cfg.clutter.statistics,
            );
        }
        let len = Dims::new(&self.grid, &cfg.geometry(), cfg.users).stacked_len();
        cfg.clutter
            .dense_ccm_files
            .iter()
            .map(|p| {
                let f = import_dense_ccm(p)?;
                match f.factors.first() {
                    Some(u) if u.len() != len => Err(DfrcError::DimensionMismatch {
                        what: "dense CCM dimension",
                        expected: len,
                        found: u.len(),
                    }),
                    _ => Ok(f),
                }
            })
            .collect()
    }

    pub fn operators(&self, cfg: &ScenarioConfig) -> Result<LiftedOperators> {
        let geom = cfg.geometry();
        let dims = Dims::new(&self.grid, &geom, cfg.users);
        let signature = stacked_signature(&self.target, &self.grid, &geom)?;
        LiftedOperators::build(&signature, &self.clutter_factors(cfg)?, &self.symbols, dims)
    }

    /// Builds the operators and runs the design.
    pub fn design(
        &self,
        cfg: &ScenarioConfig,
        opt: &OptimizerConfig,
    ) -> Result<(LiftedOperators, DesignResult)> {
        let ops = self.operators(cfg)?;
        let result = run(&DesignProblem {
            ops: &ops,
            channel: &self.channel,
            symbols: &self.symbols,
            config: opt,
        })?;
        Ok((ops, result))
    }
}

/// Empirical interference-plus-noise power at the filter output against
/// the analytic `w_r^H A(w) w_r`.
#[derive(Debug, Clone, Serialize)]
pub struct EchoCheck {
    pub draws: usize,
    pub analytic_sinr_db: f64,
    pub empirical_sinr_db: f64,
    pub analytic_interference: f64,
    pub empirical_interference: f64,
    pub standard_error: f64,
    /// `(empirical - analytic) / standard_error`.
    pub z_score: f64,
    pub within_3_se: bool,
}

/// Feeds `draws` simulated echoes through `result`'s receive filter.
pub fn echo_check(
    real: &Realization,
    cfg: &ScenarioConfig,
    ops: &LiftedOperators,
    result: &DesignResult,
    draws: usize,
    seed: u64,
) -> Result<EchoCheck> {
    if draws < 2 {
        return Err(DfrcError::InvalidInput(
            "the echo check needs at least two draws".into(),
        ));
    }
    let geom = cfg.geometry();
    let signature = stacked_signature(&real.target, &real.grid, &geom)?;
    let factors = real.clutter_factors(cfg)?;
    let noise_radar = from_db(cfg.noise_radar_db);
    let sim = EchoSimulator::new(
        &result.beamformers.mats,
        &real.symbols,
        &signature,
        &factors,
        noise_radar,
        &ops.dims,
    )?;
    let wr = &result.receive_filter;
    let signal = wr.dotc(sim.target_echo()).norm_sqr();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let powers: Vec<f64> = (0..draws)
        .map(|_| {
            let d = sim.draw(&mut rng);
            wr.dotc(&(d.clutter + d.noise)).norm_sqr()
        })
        .collect();
    let mean = powers.iter().sum::<f64>() / draws as f64;
    let var = powers.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
    let se = (var / draws as f64).sqrt();
    let analytic = wr
        .dotc(&(clutter_noise_matrix(&result.w, ops, noise_radar) * wr))
        .re;
    let z = (mean - analytic) / se;
    Ok(EchoCheck {
        draws,
        analytic_sinr_db: to_db(signal / analytic),
        empirical_sinr_db: to_db(signal / mean),
        analytic_interference: analytic,
        empirical_interference: mean,
        standard_error: se,
        z_score: z,
        within_3_se: z.abs() <= 3.0,
    })
}

/// Independent check of the communication and power constraints.
#[derive(Debug, Clone, Serialize)]
pub struct ConstraintAudit {
    pub min_comm_sinr_db: f64,
    pub required_db: Option<f64>,
    /// `max_n (p_n - P_n) / P_n`.
    pub max_power_excess: f64,
    pub passed: bool,
}

/// SINR within `0.001 dB` of the target and power within `1e-6` relative.
pub fn audit_constraints(result: &DesignResult, opt: &OptimizerConfig) -> ConstraintAudit {
    let min_db = to_db(result.min_comm_sinr());
    let required_db = opt.comm_sinr_threshold_linear.map(to_db);
    let max_power_excess = result
        .realized_power
        .iter()
        .zip(&opt.per_subcarrier_power)
        .map(|(p, cap)| (p - cap) / cap)
        .fold(f64::NEG_INFINITY, f64::max);
    let sinr_ok = required_db.map_or(true, |r| min_db >= r - 1e-3);
    ConstraintAudit {
        min_comm_sinr_db: min_db,
        required_db,
        max_power_excess,
        passed: sinr_ok && max_power_excess <= 1e-6,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SingleReport {
    pub status: RunStatus,
    pub message: Option<String>,
    pub radar_sinr_db: Option<f64>,
    /// Analytic radar SINR (linear); zero for a degenerate design.
    pub radar_sinr_linear: f64,
    pub wall_time_s: f64,
    pub design: Option<DesignReport>,
    pub audit: Option<ConstraintAudit>,
    pub echo: Option<EchoCheck>,
}

/// Runs one design for trial 0 of `cfg` on its full grid at
/// `P_{t,n} = subcarrier_power_db`, then audits it and checks the analytic
/// SINR against simulated echoes.
pub fn run_single(cfg: &ScenarioConfig) -> Result<SingleReport> {
    cfg.validate()?;
    let real = Realization::draw(cfg, &cfg.grid, 0)?;
    run_single_on(cfg, &real)
}

/// [`run_single`] on a given realization.
pub fn run_single_on(cfg: &ScenarioConfig, real: &Realization) -> Result<SingleReport> {
    let start = Instant::now();
    let opt = cfg.optimizer_config(vec![
        from_db(cfg.optimizer.subcarrier_power_db);
        cfg.grid.num_subcarriers
    ]);
    let outcome = real.design(cfg, &opt);
    let (ops, result) = match outcome {
        Ok(x) => x,
        Err(e) => {
            let Some(status) = RunStatus::from_error(&e) else {
                return Err(e);
            };
            return Ok(SingleReport {
                status,
                message: Some(e.to_string()),
                radar_sinr_db: None,
                radar_sinr_linear: 0.0,
                wall_time_s: start.elapsed().as_secs_f64(),
                design: None,
                audit: None,
                echo: None,
            });
        }
    };
    let echo = echo_check(
        real,
        cfg,
        &ops,
        &result,
        cfg.experiment.echo_draws,
        derive_seed(cfg.seed, 0, STREAM_ECHO),
    )?;
    Ok(SingleReport {
        status: RunStatus::Ok,
        message: None,
        radar_sinr_db: Some(result.radar_sinr_db()),
        radar_sinr_linear: result.radar_sinr,
        wall_time_s: start.elapsed().as_secs_f64(),
        audit: Some(audit_constraints(&result, &opt)),
        design: Some(result.report()),
        echo: Some(echo),
    })
}
