//! OFDM grid bookkeeping, array steering vectors, fast/slow-time phase
//! vectors and data-symbol generation.
//!
//! Subcarrier indices `n` are 1-based at this boundary, matching the usual
//! OFDM notation; storage everywhere else is 0-based.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{CMatrix, CVector, DfrcError, Result, C64};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfdmGrid {
    pub carrier_freq_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub symbol_duration_s: f64,
    pub cp_duration_s: f64,
    pub num_subcarriers: usize,
    pub frame_length: usize,
    pub samples_per_symbol: usize,
    #[serde(default = "default_wave_speed")]
    pub wave_speed_m_s: f64,
    /// Global index (0-based) of this grid's first subcarrier. Non-zero when
    /// a design covers a contiguous slice of a larger band.
    #[serde(default)]
    pub first_subcarrier: usize,
}

fn default_wave_speed() -> f64 {
    SPEED_OF_LIGHT
}

impl OfdmGrid {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("carrier_freq_hz", self.carrier_freq_hz),
            ("subcarrier_spacing_hz", self.subcarrier_spacing_hz),
            ("symbol_duration_s", self.symbol_duration_s),
            ("wave_speed_m_s", self.wave_speed_m_s),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(DfrcError::InvalidInput(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.cp_duration_s.is_finite() && self.cp_duration_s >= 0.0) {
            return Err(DfrcError::InvalidInput(format!(
                "cp_duration_s must be non-negative, got {}",
                self.cp_duration_s
            )));
        }
        if self.num_subcarriers == 0 || self.frame_length == 0 || self.samples_per_symbol == 0 {
            return Err(DfrcError::InvalidInput(
                "num_subcarriers, frame_length and samples_per_symbol must be at least 1".into(),
            ));
        }
        let product = self.subcarrier_spacing_hz * self.symbol_duration_s;
        if (product - 1.0).abs() > 1e-9 {
            return Err(DfrcError::InvalidInput(format!(
                "subcarrier spacing times symbol duration must be 1, got {product}"
            )));
        }
        Ok(())
    }

    /// Carrier frequency of subcarrier `n` (1-based within this grid).
    pub fn subcarrier_freq(&self, n: usize) -> f64 {
        debug_assert!(n >= 1);
        (self.first_subcarrier + n - 1) as f64 * self.subcarrier_spacing_hz + self.carrier_freq_hz
    }

    /// Symbol plus cyclic prefix duration.
    pub fn slot_duration_s(&self) -> f64 {
        self.symbol_duration_s + self.cp_duration_s
    }

    /// Cyclic prefix length in samples at the OFDM sampling rate `N Δf`.
    pub fn cp_samples(&self) -> usize {
        (self.cp_duration_s * self.num_subcarriers as f64 * self.subcarrier_spacing_hz).floor()
            as usize
    }

    /// A grid covering subcarriers `start..start + count` (0-based, relative
    /// to this grid).
    pub fn slice(&self, start: usize, count: usize) -> OfdmGrid {
        OfdmGrid {
            num_subcarriers: count,
            first_subcarrier: self.first_subcarrier + start,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub num_tx: usize,
    pub num_rx: usize,
    pub tx_spacing_m: f64,
    pub rx_spacing_m: f64,
}

impl ArrayGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.num_tx == 0 || self.num_rx == 0 {
            return Err(DfrcError::InvalidInput(
                "arrays need at least one element".into(),
            ));
        }
        for (name, v) in [
            ("tx_spacing_m", self.tx_spacing_m),
            ("rx_spacing_m", self.rx_spacing_m),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(DfrcError::InvalidInput(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

fn check_finite(theta: f64, f: f64) -> Result<()> {
    if !theta.is_finite() || !f.is_finite() {
        return Err(DfrcError::InvalidInput(format!(
            "steering angle and frequency must be finite (theta={theta}, f={f})"
        )));
    }
    Ok(())
}

fn ula_response(count: usize, spacing: f64, theta: f64, f: f64, c: f64) -> CVector {
    let step = -2.0 * PI * spacing * theta.sin() * f / c;
    CVector::from_fn(count, |i, _| C64::from_polar(1.0, step * i as f64))
}

/// Transmit steering vector `a(θ, f)`: entry `i` is
/// `exp(-j 2π i d_t sin(θ) f / c)`.
pub fn steering_tx(theta: f64, f: f64, geom: &ArrayGeometry, c: f64) -> Result<CVector> {
    check_finite(theta, f)?;
    Ok(ula_response(geom.num_tx, geom.tx_spacing_m, theta, f, c))
}

/// Receive steering vector `b(θ, f)`.
pub fn steering_rx(theta: f64, f: f64, geom: &ArrayGeometry, c: f64) -> Result<CVector> {
    check_finite(theta, f)?;
    Ok(ula_response(geom.num_rx, geom.rx_spacing_m, theta, f, c))
}

/// Fast-time phases at the `N_s` sampling instants `(i/N_s) T_s`, i = 1..N_s.
pub fn fast_time_phase(f: f64, grid: &OfdmGrid) -> CVector {
    let ns = grid.samples_per_symbol;
    CVector::from_fn(ns, |i, _| {
        let t = (i + 1) as f64 / ns as f64 * grid.symbol_duration_s;
        C64::from_polar(1.0, 2.0 * PI * f * t)
    })
}

/// Slow-time phases across the `L` OFDM symbols, spaced by `T_s + T_cp`.
pub fn slow_time_phase(f: f64, grid: &OfdmGrid) -> CVector {
    let period = grid.slot_duration_s();
    CVector::from_fn(grid.frame_length, |l, _| {
        C64::from_polar(1.0, 2.0 * PI * f * l as f64 * period)
    })
}

/// Two-way Doppler shift `2 v f / c`.
pub fn doppler_shift(speed: f64, f: f64, c: f64) -> f64 {
    2.0 * speed * f / c
}

/// Baseband frequency of the echo from subcarrier `n` (1-based) for a
/// scatterer moving at `speed`: `f_n + f^d - f_c`.
pub fn baseband_freq(n: usize, speed: f64, grid: &OfdmGrid) -> f64 {
    let f_n = grid.subcarrier_freq(n);
    (grid.first_subcarrier + n - 1) as f64 * grid.subcarrier_spacing_hz
        + doppler_shift(speed, f_n, grid.wave_speed_m_s)
}

/// Unit average power symbol alphabets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constellation {
    #[default]
    Qpsk,
    Psk8,
    /// Circularly-symmetric complex Gaussian, `CN(0, 1)`.
    Gaussian,
}

impl FromStr for Constellation {
    type Err = DfrcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qpsk" => Ok(Constellation::Qpsk),
            "8psk" | "psk8" => Ok(Constellation::Psk8),
            "gaussian" => Ok(Constellation::Gaussian),
            other => Err(DfrcError::UnknownConstellation(other.to_string())),
        }
    }
}

impl Constellation {
    fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> C64 {
        match self {
            Constellation::Qpsk => {
                let idx = rng.gen_range(0..4u8);
                C64::from_polar(1.0, PI / 4.0 + PI / 2.0 * idx as f64)
            }
            Constellation::Psk8 => {
                let idx = rng.gen_range(0..8u8);
                C64::from_polar(1.0, PI / 4.0 * idx as f64)
            }
            Constellation::Gaussian => {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
            }
        }
    }
}

/// Per-subcarrier `K x L` symbol matrices `S_n = [s_n[1], ..., s_n[L]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    pub symbols: Vec<CMatrix>,
}

impl SymbolFrame {
    pub fn num_subcarriers(&self) -> usize {
        self.symbols.len()
    }

    pub fn num_users(&self) -> usize {
        self.symbols.first().map_or(0, |s| s.nrows())
    }

    pub fn frame_length(&self) -> usize {
        self.symbols.first().map_or(0, |s| s.ncols())
    }

    /// Symbol vector `s_n[l]` (0-based indices).
    pub fn symbol(&self, n: usize, l: usize) -> CVector {
        self.symbols[n].column(l).into_owned()
    }

    /// Contiguous subcarrier range, 0-based.
    pub fn subset(&self, start: usize, count: usize) -> SymbolFrame {
        SymbolFrame {
            symbols: self.symbols[start..start + count].to_vec(),
        }
    }
}

/// Draws a frame for `num_users` users on every subcarrier of `grid`.
///
/// Subcarriers are filled in order from a single seeded stream, so a frame
/// for `N` subcarriers is a prefix of the frame for any `N' > N`.
pub fn generate_symbols(
    num_users: usize,
    grid: &OfdmGrid,
    constellation: Constellation,
    seed: u64,
) -> SymbolFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let symbols = (0..grid.num_subcarriers)
        .map(|_| {
            // column-major fill: slot by slot
            let mut s = CMatrix::zeros(num_users, grid.frame_length);
            for l in 0..grid.frame_length {
                for k in 0..num_users {
                    s[(k, l)] = constellation.draw(&mut rng);
                }
            }
            s
        })
        .collect();
    SymbolFrame { symbols }
}
