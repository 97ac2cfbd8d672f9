//! Joint transmit beamforming and receive filter design for wideband
//! OFDM dual-function radar-communication (DFRC) systems.
//!
//! A base station with `N_t` transmit and `N_r` receive antennas serves `K`
//! single-antenna users over `N` OFDM subcarriers while detecting a moving
//! target in range-spread clutter. The crate builds the space-time-frequency
//! echo model, lifts it into explicit linear operators over the stacked
//! beamformer vector, and maximizes the radar output SINR under per-user
//! communication SINR and per-subcarrier power constraints with a
//! majorization-minimization loop whose subproblems are second-order cone
//! programs.
//!
//! Module map:
//! - [`signal_model`]: OFDM grid, steering and phase vectors, symbols.
//! - [`comm_channel`]: tapped-delay downlink channel and communication SINR.
//! - [`radar_scene`]: target/clutter signatures, shift matrices, clutter
//!   covariance factors and the unlifted echo model.
//! - [`lifting`]: the operators mapping the stacked beamformer to echo space.
//! - [`socp`]: a small conic program representation backed by Clarabel.
//! - [`optimizer`]: receive filter, radar SINR, MM surrogate, initialization
//!   and the design loop.
//! - [`harness`]: scenario configuration, Monte Carlo sweeps and CSV output.
//! - [`validate`]: randomized model-consistency checks used by the CLI.

pub mod comm_channel;
pub mod error;
pub mod harness;
pub mod io;
pub mod lifting;
pub mod optimizer;
pub mod radar_scene;
pub mod signal_model;
pub mod socp;
pub mod validate;

pub use error::{DfrcError, Result};

use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64 as C64;

/// Complex column vector.
pub type CVector = DVector<C64>;
/// Complex dense matrix.
pub type CMatrix = DMatrix<C64>;

/// Linear power to decibels.
pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Decibels to linear power.
pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
