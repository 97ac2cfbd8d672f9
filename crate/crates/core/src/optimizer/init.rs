//! SINR-balancing initialization.
//!
//! Per subcarrier, `max_{W} min_k SINR_k` under a power bound is found by
//! bisection on the target `γ` (in dB). Each step solves the min-power
//! problem for `γ`, which is a second-order cone program once every
//! `h_k^H w_k` is fixed to be real; the target is attainable iff its minimum
//! power fits the budget.

use nalgebra::DVector;

use super::subproblem::sinr_cone;
use super::{InitPowerRule, OptimizerConfig};
use crate::comm_channel::{comm_sinr, FreqChannel};
use crate::lifting::BeamformerSet;
use crate::signal_model::SymbolFrame;
use crate::socp::{
    complex_from_real, complex_to_real_embedding, real_part_functional, solve, ComplexAffine,
};
use crate::socp::{LinearEquality, SocConstraint, SocProgram, SolveOptions, SolveStatus};
use crate::{from_db, to_db, CMatrix, CVector, DfrcError, Result, C64};

/// Bisection span below the single-user upper bound.
const SEARCH_SPAN_DB: f64 = 60.0;

#[derive(Debug, Clone)]
pub struct BalancedSubcarrier {
    /// `N_t x K`, scaled so the power norm equals the budget.
    pub w: CMatrix,
    /// `min_k SINR_k` of `w` (linear).
    pub sinr: f64,
    /// Bisection steps taken.
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct Initialization {
    pub beams: BeamformerSet,
    pub balanced: Vec<BalancedSubcarrier>,
}

/// Minimum of `||G vec(W)||` subject to `SINR_k >= γ` for all `k`, or
/// `None` when the solver declares the target unattainable.
fn min_power_design(
    hs: &[CVector],
    noise_power: f64,
    gamma: f64,
    norm_map: &CMatrix,
    opts: &SolveOptions,
) -> Result<Option<(CMatrix, f64)>> {
    let users = hs.len();
    let tx = hs[0].len();
    let nb = tx * users;
    let tau = 2 * nb;
    let num_vars = tau + 1;
    let mut objective = DVector::zeros(num_vars);
    objective[tau] = 1.0;
    let mut program = SocProgram::new(num_vars, objective);
    let (ra, rb) = complex_to_real_embedding(&ComplexAffine {
        a: norm_map.clone(),
        b: CVector::zeros(norm_map.nrows()),
    });
    let mut c = DVector::zeros(num_vars);
    c[tau] = 1.0;
    let rows = ra.nrows();
    program.cones.push(SocConstraint {
        a: ra.resize(rows, num_vars, 0.0),
        b: rb,
        c,
        d: 0.0,
    });
    let noise_std = noise_power.sqrt();
    let one = C64::new(1.0, 0.0);
    for (k, h) in hs.iter().enumerate() {
        program.cones.push(sinr_cone(
            0, k, h, one, gamma, noise_std, tx, users, nb, num_vars,
        ));
        // Im(h^H w_k) = Re((j h)^H w_k) = 0
        let mut z = CVector::zeros(nb);
        for t in 0..tx {
            z[k * tx + t] = h[t] * C64::new(0.0, 1.0);
        }
        let row = real_part_functional(&z).resize_vertically(num_vars, 0.0);
        program.equalities.push(LinearEquality {
            a: nalgebra::DMatrix::from_row_slice(1, num_vars, row.as_slice()),
            b: DVector::zeros(1),
        });
    }
    let sol = solve(&program, opts)?;
    match sol.status {
        SolveStatus::Optimal => {
            let w = complex_from_real(&sol.x.as_slice()[..tau]);
            let w = CMatrix::from_column_slice(tx, users, w.as_slice());
            let norm = (norm_map * CVector::from_column_slice(w.as_slice())).norm();
            Ok(Some((w, norm)))
        }
        SolveStatus::Infeasible => Ok(None),
        SolveStatus::NumericalTrouble => {
            log::debug!(
                "balancing step at {:.3} dB treated as unattainable: {}",
                to_db(gamma),
                sol.detail
            );
            Ok(None)
        }
    }
}

fn min_sinr(w: &CMatrix, hs: &[CVector], noise_power: f64) -> f64 {
    (0..hs.len())
        .map(|k| comm_sinr(w, &hs[k], k, noise_power))
        .fold(f64::INFINITY, f64::min)
}

/// Max-min SINR beamformer for one subcarrier with `||G vec(W)||^2 <= cap`.
///
/// `subcarrier` is one-based and only used in error reports.
pub fn balance_subcarrier(
    subcarrier: usize,
    hs: &[CVector],
    noise_power: f64,
    cap: f64,
    norm_map: &CMatrix,
    tol_db: f64,
    opts: &SolveOptions,
) -> Result<BalancedSubcarrier> {
    let degenerate = |reason: String| DfrcError::ChannelDegenerate { subcarrier, reason };
    if hs.is_empty() {
        return Err(degenerate("no users".into()));
    }
    let min_gain = hs
        .iter()
        .map(|h| h.norm_squared())
        .fold(f64::INFINITY, f64::min);
    // G has orthogonal blocks scaled by |s|; its smallest singular value
    // bounds the Frobenius power
    let sv = norm_map.singular_values();
    let sigma_min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min_gain > 0.0) || !(sigma_min > 0.0) {
        return Err(degenerate("a user channel or the power map is zero".into()));
    }
    let hi_db = to_db(cap * min_gain / (noise_power * sigma_min * sigma_min));
    let mut lo_db = hi_db - SEARCH_SPAN_DB;
    let mut hi_db = hi_db;
    let fits = |gamma_db: f64| -> Result<Option<CMatrix>> {
        Ok(
            min_power_design(hs, noise_power, from_db(gamma_db), norm_map, opts)?
                .filter(|(_, norm)| norm * norm <= cap)
                .map(|(w, _)| w),
        )
    };
    let mut best = fits(lo_db)?.ok_or_else(|| {
        degenerate(format!(
            "even {:.1} dB is unattainable for all users at once",
            lo_db
        ))
    })?;
    let mut steps = 1;
    while hi_db - lo_db > tol_db {
        let mid = 0.5 * (lo_db + hi_db);
        steps += 1;
        match fits(mid)? {
            Some(w) => {
                lo_db = mid;
                best = w;
            }
            None => hi_db = mid,
        }
    }
    let norm = (norm_map * CVector::from_column_slice(best.as_slice())).norm();
    let w = best * C64::new(cap.sqrt() / norm, 0.0);
    Ok(BalancedSubcarrier {
        sinr: min_sinr(&w, hs, noise_power),
        w,
        steps,
    })
}

/// Balanced start on every subcarrier under `||W_n||_F^2 <= P_{t,n} / L`
/// (or `/ L^2` under [`InitPowerRule::Literal`]).
pub fn initialize(
    channel: &FreqChannel,
    symbols: &SymbolFrame,
    cfg: &OptimizerConfig,
) -> Result<Initialization> {
    let slots = symbols.frame_length() as f64;
    let opts = cfg.solve_options();
    let mut balanced = Vec::with_capacity(channel.num_subcarriers());
    for n in 0..channel.num_subcarriers() {
        let hs = &channel.response[n];
        let nb = hs.first().map_or(0, |h| h.len()) * hs.len();
        let cap = match cfg.init_power_rule {
            InitPowerRule::PerSlot => cfg.per_subcarrier_power[n] / slots,
            InitPowerRule::Literal => cfg.per_subcarrier_power[n] / (slots * slots),
        };
        let ident = CMatrix::identity(nb, nb);
        balanced.push(balance_subcarrier(
            n + 1,
            hs,
            channel.noise_power,
            cap,
            &ident,
            cfg.balancing_tol_db,
            &opts,
        )?);
    }
    Ok(Initialization {
        beams: BeamformerSet {
            mats: balanced.iter().map(|b| b.w.clone()).collect(),
        },
        balanced,
    })
}

/// Balanced start under the realized-power bound
/// `Σ_l ||W_n s_n[l]||^2 <= P_{t,n}` itself.
pub fn initialize_realized(
    channel: &FreqChannel,
    symbols: &SymbolFrame,
    cfg: &OptimizerConfig,
) -> Result<Initialization> {
    let opts = cfg.solve_options();
    let mut balanced = Vec::with_capacity(channel.num_subcarriers());
    for n in 0..channel.num_subcarriers() {
        let hs = &channel.response[n];
        let tx = hs.first().map_or(0, |h| h.len());
        let g = super::subproblem::power_map(0, &symbols.symbols[n], tx, tx * hs.len());
        balanced.push(balance_subcarrier(
            n + 1,
            hs,
            channel.noise_power,
            cfg.per_subcarrier_power[n],
            &g,
            cfg.balancing_tol_db,
            &opts,
        )?);
    }
    Ok(Initialization {
        beams: BeamformerSet {
            mats: balanced.iter().map(|b| b.w.clone()).collect(),
        },
        balanced,
    })
}
