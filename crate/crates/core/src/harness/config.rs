//! Scenario files: JSON, powers in dB, angles in degrees.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::optimizer::{InitPowerRule, OptimizerConfig};
use crate::radar_scene::ClutterStatistics;
use crate::signal_model::{ArrayGeometry, Constellation, OfdmGrid, SPEED_OF_LIGHT};
use crate::{from_db, DfrcError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    pub num_tx: usize,
    pub num_rx: usize,
    /// Element spacing in carrier wavelengths.
    pub tx_spacing_wavelengths: f64,
    pub rx_spacing_wavelengths: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub azimuth_deg: f64,
    pub speed_m_s: f64,
    /// Reflection power per subcarrier.
    pub power_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClutterConfig {
    /// Range cells `m = -M..=M`.
    pub max_offset: usize,
    /// Patches per range cell; zero disables clutter.
    pub patches_per_cell: usize,
    /// Azimuths are drawn uniformly on `(lo, hi]`.
    pub azimuth_range_deg: (f64, f64),
    pub speed_range_m_s: (f64, f64),
    pub power_db: f64,
    #[serde(default)]
    pub statistics: ClutterStatistics,
    /// Dense inner CCM files (see [`crate::io`]) used instead of the
    /// patches. Their size must match the design grid.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dense_ccm_files: Vec<std::path::PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// Delay taps `D`, each `CN(0, I)`.
    pub taps: usize,
    pub noise_power_db: f64,
    /// DFT size for the frequency response. Defaults to the largest design
    /// grid of the experiment so that channels are shared across points.
    #[serde(default)]
    pub dft_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSettings {
    /// `Γ_c` in dB; `null` designs for radar only.
    pub comm_sinr_threshold_db: Option<f64>,
    /// `P_{t,n}` in dB for `single` and `sweep-tradeoff`.
    pub subcarrier_power_db: f64,
    pub convergence_tol: f64,
    pub max_iters: usize,
    pub surrogate_ridge: f64,
    pub balancing_tol_db: f64,
    pub init_power_rule: InitPowerRule,
    pub solver_tol: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        let base = OptimizerConfig::default();
        OptimizerSettings {
            comm_sinr_threshold_db: Some(10.0),
            subcarrier_power_db: 10.0 * 150f64.log10(),
            convergence_tol: base.convergence_tol,
            max_iters: base.max_iters,
            surrogate_ridge: base.surrogate_ridge,
            balancing_tol_db: base.balancing_tol_db,
            init_power_rule: base.init_power_rule,
            solver_tol: base.solver_tol,
        }
    }
}

/// How trial results are averaged into a curve point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Mean of the per-trial dB values.
    #[default]
    Db,
    /// Mean of linear SINRs, reported in dB.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub trials: usize,
    pub averaging: Averaging,
    /// Echo draws for the Monte Carlo check of `single`.
    pub echo_draws: usize,
    /// `sweep-subcarriers`: values of `N`.
    pub subcarrier_counts: Vec<usize>,
    /// `sweep-subcarriers`: total power `P_t` in dB, split evenly.
    pub total_power_db: Vec<f64>,
    /// `sweep-tradeoff`: `Γ_c` grid in dB.
    pub comm_sinr_db: Vec<f64>,
    /// `sweep-tradeoff`: numbers of contiguous subcarrier sets.
    pub partitions: Vec<usize>,
    /// `sweep-tradeoff`: add the design without communication constraints.
    pub radar_only: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            trials: 50,
            averaging: Averaging::Db,
            echo_draws: 1000,
            subcarrier_counts: vec![1, 2, 3, 4, 5],
            total_power_db: vec![20.0, 30.0],
            comm_sinr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            partitions: vec![1, 2, 4],
            radar_only: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub grid: OfdmGrid,
    pub array: ArrayConfig,
    pub users: usize,
    pub target: TargetConfig,
    pub clutter: ClutterConfig,
    pub channel: ChannelConfig,
    pub noise_radar_db: f64,
    #[serde(default)]
    pub constellation: Constellation,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
    pub seed: u64,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

impl ScenarioConfig {
    /// Common simulation setup: 2.4 GHz carrier, 0.2 MHz spacing, 5 µs
    /// symbols with 2 µs prefix, `L = 8`, `N_t = N_r = 4`, `K = 3`, target at
    /// broadside moving at 20 m/s, 30 clutter patches in each of 5 range
    /// cells, `σ^2 = -20 dB`, `σ_r^2 = -10 dB`.
    pub fn base(num_subcarriers: usize, samples_per_symbol: usize) -> ScenarioConfig {
        ScenarioConfig {
            grid: OfdmGrid {
                carrier_freq_hz: 2.4e9,
                subcarrier_spacing_hz: 0.2e6,
                symbol_duration_s: 5e-6,
                cp_duration_s: 2e-6,
                num_subcarriers,
                frame_length: 8,
                samples_per_symbol,
                wave_speed_m_s: SPEED_OF_LIGHT,
                first_subcarrier: 0,
            },
            array: ArrayConfig {
                num_tx: 4,
                num_rx: 4,
                tx_spacing_wavelengths: 2.0,
                rx_spacing_wavelengths: 0.5,
            },
            users: 3,
            target: TargetConfig {
                azimuth_deg: 0.0,
                speed_m_s: 20.0,
                power_db: -10.0,
            },
            clutter: ClutterConfig {
                max_offset: 2,
                patches_per_cell: 30,
                azimuth_range_deg: (0.0, 360.0),
                speed_range_m_s: (0.0, 50.0),
                power_db: -10.0,
                statistics: ClutterStatistics::Coherent,
                dense_ccm_files: Vec::new(),
            },
            channel: ChannelConfig {
                taps: 2,
                noise_power_db: -20.0,
                dft_size: None,
            },
            noise_radar_db: -10.0,
            constellation: Constellation::Qpsk,
            optimizer: OptimizerSettings::default(),
            seed: 1,
            experiment: ExperimentConfig::default(),
        }
    }

    /// Radar SINR versus the number of subcarriers: `N_s = 5`, `N ∈ 1..=5`,
    /// `P_t ∈ {20, 30} dB` split evenly, `Γ_c = 10 dB`.
    pub fn subcarrier_sweep_preset() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::base(5, 5);
        cfg.optimizer.comm_sinr_threshold_db = Some(10.0);
        cfg
    }

    /// Radar SINR versus the SINR requirement: `N = 4`, `N_s = 4`,
    /// `P_{t,n} = 150 W`, partitions into 1, 2 and 4 sets plus radar only.
    pub fn tradeoff_preset() -> ScenarioConfig {
        ScenarioConfig::base(4, 4)
    }

    pub fn load(path: &Path) -> Result<ScenarioConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ScenarioConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DfrcError::InvalidInput(msg));
        self.grid.validate()?;
        self.geometry().validate()?;
        if self.users == 0 {
            return bad("at least one user is required".into());
        }
        if self.channel.taps == 0 {
            return bad("the channel needs at least one tap".into());
        }
        if let Some(n) = self.channel.dft_size {
            if n < self.channel.taps {
                return bad(format!(
                    "DFT size {n} is smaller than the {} taps",
                    self.channel.taps
                ));
            }
        }
        let (lo, hi) = self.clutter.azimuth_range_deg;
        let (vlo, vhi) = self.clutter.speed_range_m_s;
        if !(lo <= hi && vlo <= vhi) {
            return bad("clutter ranges must satisfy lo <= hi".into());
        }
        for (name, v) in [
            ("target power", self.target.power_db),
            ("clutter power", self.clutter.power_db),
            ("user noise", self.channel.noise_power_db),
            ("radar noise", self.noise_radar_db),
            ("subcarrier power", self.optimizer.subcarrier_power_db),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite dB, got {v}"));
            }
        }
        let ex = &self.experiment;
        if ex.trials == 0 {
            return bad("trials must be positive".into());
        }
        if ex.subcarrier_counts.iter().any(|&n| n == 0) {
            return bad("subcarrier counts must be positive".into());
        }
        self.optimizer_config(vec![1.0; self.grid.num_subcarriers])
            .validate(self.grid.num_subcarriers)
    }

    /// Every partition count must divide `N`.
    pub fn validate_partitions(&self) -> Result<()> {
        let ex = &self.experiment;
        if ex
            .partitions
            .iter()
            .any(|&p| p == 0 || self.grid.num_subcarriers % p != 0)
        {
            return Err(DfrcError::InvalidInput(format!(
                "partition counts {:?} must divide N = {}",
                ex.partitions, self.grid.num_subcarriers
            )));
        }
        Ok(())
    }

    pub fn geometry(&self) -> ArrayGeometry {
        let lambda = self.grid.wave_speed_m_s / self.grid.carrier_freq_hz;
        ArrayGeometry {
            num_tx: self.array.num_tx,
            num_rx: self.array.num_rx,
            tx_spacing_m: self.array.tx_spacing_wavelengths * lambda,
            rx_spacing_m: self.array.rx_spacing_wavelengths * lambda,
        }
    }

    /// Linear-unit optimizer settings with the given per-subcarrier powers.
    pub fn optimizer_config(&self, per_subcarrier_power: Vec<f64>) -> OptimizerConfig {
        let o = &self.optimizer;
        OptimizerConfig {
            comm_sinr_threshold_linear: o.comm_sinr_threshold_db.map(from_db),
            per_subcarrier_power,
            noise_radar: from_db(self.noise_radar_db),
            convergence_tol: o.convergence_tol,
            max_iters: o.max_iters,
            surrogate_ridge: o.surrogate_ridge,
            balancing_tol_db: o.balancing_tol_db,
            init_power_rule: o.init_power_rule,
            solver_tol: o.solver_tol,
            perturbation_seed: self.seed,
        }
    }
}
