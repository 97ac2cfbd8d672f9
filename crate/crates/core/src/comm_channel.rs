//! Tapped-delay downlink channel, its per-subcarrier response and the
//! communication SINR.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::signal_model::OfdmGrid;
use crate::{CMatrix, CVector, DfrcError, Result, C64};

/// `D`-tap impulse response per user: `taps[k][d]` is `h_{k,d}` (length `N_t`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapChannel {
    pub taps: Vec<Vec<Vec<C64>>>,
    pub noise_power: f64,
}

impl TapChannel {
    pub fn num_users(&self) -> usize {
        self.taps.len()
    }

    pub fn num_taps(&self) -> usize {
        self.taps.first().map_or(0, Vec::len)
    }

    pub fn num_tx(&self) -> usize {
        self.taps
            .first()
            .and_then(|t| t.first())
            .map_or(0, Vec::len)
    }

    /// Structural checks; `cp_samples` bounds the delay spread when given.
    pub fn validate(&self, cp_samples: Option<usize>) -> Result<()> {
        if !(self.noise_power.is_finite() && self.noise_power > 0.0) {
            return Err(DfrcError::InvalidInput(format!(
                "communication noise power must be positive, got {}",
                self.noise_power
            )));
        }
        let d = self.num_taps();
        let nt = self.num_tx();
        if self.taps.is_empty() || d == 0 || nt == 0 {
            return Err(DfrcError::InvalidInput(
                "channel needs at least one user and one tap".into(),
            ));
        }
        for user in &self.taps {
            if user.len() != d {
                return Err(DfrcError::DimensionMismatch {
                    what: "channel taps per user",
                    expected: d,
                    found: user.len(),
                });
            }
            if let Some(bad) = user.iter().find(|h| h.len() != nt) {
                return Err(DfrcError::DimensionMismatch {
                    what: "channel tap length",
                    expected: nt,
                    found: bad.len(),
                });
            }
        }
        if let Some(cp) = cp_samples {
            if d > cp.max(1) {
                return Err(DfrcError::InvalidInput(format!(
                    "{d} channel taps exceed the cyclic prefix of {cp} samples"
                )));
            }
        }
        Ok(())
    }

    /// I.i.d. `CN(0, I)` taps.
    pub fn random<R: Rng + ?Sized>(
        num_users: usize,
        num_taps: usize,
        num_tx: usize,
        noise_power: f64,
        rng: &mut R,
    ) -> TapChannel {
        let taps = (0..num_users)
            .map(|_| {
                (0..num_taps)
                    .map(|_| (0..num_tx).map(|_| complex_normal(rng)).collect())
                    .collect()
            })
            .collect();
        TapChannel { taps, noise_power }
    }
}

/// One draw of `CN(0, 1)`.
pub(crate) fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Frequency-domain channels `h̃_{n,k}` indexed `[n][k]` (0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct FreqChannel {
    pub response: Vec<Vec<CVector>>,
    pub noise_power: f64,
}

impl FreqChannel {
    pub fn num_subcarriers(&self) -> usize {
        self.response.len()
    }

    pub fn num_users(&self) -> usize {
        self.response.first().map_or(0, Vec::len)
    }

    pub fn get(&self, n: usize, k: usize) -> &CVector {
        &self.response[n][k]
    }

    /// Contiguous subcarrier range, 0-based.
    pub fn subset(&self, start: usize, count: usize) -> FreqChannel {
        FreqChannel {
            response: self.response[start..start + count].to_vec(),
            noise_power: self.noise_power,
        }
    }
}

/// `N`-point DFT of the taps: `h̃_{n,k} = Σ_d h_{k,d} exp(-j 2π (n-1)(d-1) / N)`.
pub fn dft_response(ch: &TapChannel, grid: &OfdmGrid) -> Result<FreqChannel> {
    ch.validate(None)?;
    let n_sub = grid.num_subcarriers;
    let d = ch.num_taps();
    if d > n_sub {
        return Err(DfrcError::InvalidInput(format!(
            "{d} channel taps exceed the {n_sub}-point DFT"
        )));
    }
    let nt = ch.num_tx();
    let response = (0..n_sub)
        .map(|n| {
            ch.taps
                .iter()
                .map(|user| {
                    let mut h = CVector::zeros(nt);
                    for (di, tap) in user.iter().enumerate() {
                        let phase = -2.0 * PI * (n * di) as f64 / n_sub as f64;
                        let rot = C64::from_polar(1.0, phase);
                        for (hi, ti) in h.iter_mut().zip(tap) {
                            *hi += ti * rot;
                        }
                    }
                    h
                })
                .collect()
        })
        .collect();
    Ok(FreqChannel {
        response,
        noise_power: ch.noise_power,
    })
}

/// SINR of user `k` (0-based) on one subcarrier with beamformer `w_n`
/// (`N_t x K`) and channel `h`.
pub fn comm_sinr(w_n: &CMatrix, h: &CVector, k: usize, noise_power: f64) -> f64 {
    let gains = h.adjoint() * w_n;
    let signal = gains[(0, k)].norm_sqr();
    let interference: f64 = gains
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(_, g)| g.norm_sqr())
        .sum();
    signal / (interference + noise_power)
}

/// All SINRs, indexed `[n][k]`.
pub fn sinr_table(beamformers: &[CMatrix], channel: &FreqChannel) -> Vec<Vec<f64>> {
    beamformers
        .iter()
        .zip(&channel.response)
        .map(|(w_n, users)| {
            users
                .iter()
                .enumerate()
                .map(|(k, h)| comm_sinr(w_n, h, k, channel.noise_power))
                .collect()
        })
        .collect()
}
