//! Radar SINR maximization under communication and power constraints.
//!
//! For a fixed transmit design the best receive filter is the generalized
//! Rayleigh quotient solution `w_r = A(w)^{-1} T̄_0 w`, which leaves the
//! transmit problem `max_w w^H T̄_0^H A(w)^{-1} T̄_0 w`. The loop in [`run`]
//! replaces the negated objective by the convex quadratic upper bound from
//! [`surrogate_params`] and minimizes it with a conic subproblem until the
//! iterates settle.

mod init;
mod subproblem;

use std::io::Write;

use nalgebra::Cholesky;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comm_channel::{sinr_table, FreqChannel};
use crate::lifting::{BeamformerSet, LiftedOperators};
use crate::signal_model::SymbolFrame;
use crate::socp::SolveOptions;
use crate::{to_db, CMatrix, CVector, DfrcError, Result, C64};

pub use init::{
    balance_subcarrier, initialize, initialize_realized, BalancedSubcarrier, Initialization,
};
pub use subproblem::{solve_subproblem, SubproblemSolution};

/// Power bound used by the SINR-balancing initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPowerRule {
    /// `||W_n||_F^2 <= P_{t,n} / L`: the expected power of one slot.
    #[default]
    PerSlot,
    /// `||W_n||_F^2 <= P_{t,n} / L^2`, reading the sum over slots literally.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Minimum per-user SINR `Γ_c` (linear). `None` drops the communication
    /// constraints (radar-only design).
    pub comm_sinr_threshold_linear: Option<f64>,
    /// `P_{t,n}` for each subcarrier (linear).
    pub per_subcarrier_power: Vec<f64>,
    /// Receiver noise power `σ_r^2` (linear).
    pub noise_radar: f64,
    pub convergence_tol: f64,
    pub max_iters: usize,
    /// Ridge factor `δ / (tr(U) / dim)` for the objective factorization.
    pub surrogate_ridge: f64,
    pub balancing_tol_db: f64,
    pub init_power_rule: InitPowerRule,
    /// Interior-point stopping tolerance for every conic solve.
    pub solver_tol: f64,
    /// Seed for the tie-breaking perturbation of a target-nulling start.
    pub perturbation_seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            comm_sinr_threshold_linear: Some(10.0),
            per_subcarrier_power: Vec::new(),
            noise_radar: 0.1,
            convergence_tol: 1e-4,
            max_iters: 100,
            surrogate_ridge: 1e-12,
            balancing_tol_db: 0.01,
            init_power_rule: InitPowerRule::PerSlot,
            solver_tol: 1e-8,
            perturbation_seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self, subcarriers: usize) -> Result<()> {
        let bad = |msg: String| Err(DfrcError::InvalidInput(msg));
        if let Some(g) = self.comm_sinr_threshold_linear {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!(
                    "communication SINR threshold must be positive, got {g}"
                ));
            }
        }
        if self.per_subcarrier_power.len() != subcarriers {
            return Err(DfrcError::DimensionMismatch {
                what: "per-subcarrier power list",
                expected: subcarriers,
                found: self.per_subcarrier_power.len(),
            });
        }
        if let Some(p) = self
            .per_subcarrier_power
            .iter()
            .find(|p| !(**p > 0.0 && p.is_finite()))
        {
            return bad(format!("subcarrier power must be positive, got {p}"));
        }
        if !(self.noise_radar > 0.0 && self.noise_radar.is_finite()) {
            return bad(format!(
                "radar noise power must be positive, got {}",
                self.noise_radar
            ));
        }
        if !(self.convergence_tol > 0.0) {
            return bad(format!(
                "convergence tolerance must be positive, got {}",
                self.convergence_tol
            ));
        }
        if !(self.surrogate_ridge >= 0.0) {
            return bad(format!(
                "surrogate ridge must be nonnegative, got {}",
                self.surrogate_ridge
            ));
        }
        if !(self.balancing_tol_db > 0.0) {
            return bad(format!(
                "balancing tolerance must be positive, got {}",
                self.balancing_tol_db
            ));
        }
        if !(self.solver_tol > 0.0 && self.solver_tol < 1e-2) {
            return bad(format!(
                "solver tolerance out of range: {}",
                self.solver_tol
            ));
        }
        Ok(())
    }

    pub(crate) fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.solver_tol,
            ..SolveOptions::default()
        }
    }
}

/// `A(w) = Σ T̄_{m,r} w w^H T̄_{m,r}^H + σ_r^2 I`.
/// `Y Y^H` for complex `Y`, using real products.
fn gram(y: &CMatrix) -> CMatrix {
    let re = y.map(|z| z.re);
    let im = y.map(|z| z.im);
    let sym = &re * re.transpose() + &im * im.transpose();
    let skew = &im * re.transpose() - &re * im.transpose();
    CMatrix::from_fn(y.nrows(), y.nrows(), |i, j| {
        C64::new(sym[(i, j)], skew[(i, j)])
    })
}

pub fn clutter_noise_matrix(w: &CVector, ops: &LiftedOperators, noise_radar: f64) -> CMatrix {
    let len = ops.dims.echo_len();
    let mut y = CMatrix::zeros(len, ops.clutter.len());
    for (j, c) in ops.clutter.iter().enumerate() {
        y.set_column(j, &(&c.op * w));
    }
    let mut a = gram(&y);
    for i in 0..len {
        a[(i, i)].re += noise_radar;
    }
    a
}

/// Receive filter and the SINR it achieves.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSolution {
    pub filter: CVector,
    pub sinr: f64,
}

fn factor_a(
    w: &CVector,
    ops: &LiftedOperators,
    noise_radar: f64,
) -> Result<Cholesky<C64, nalgebra::Dyn>> {
    Cholesky::new(clutter_noise_matrix(w, ops, noise_radar)).ok_or_else(|| {
        DfrcError::DegenerateDesign("clutter-plus-noise matrix is not positive definite".into())
    })
}

/// `w_r = A^{-1} T̄_0 w / (w^H T̄_0^H A^{-1} T̄_0 w)`, whose SINR is the
/// denominator.
pub fn optimal_receive_filter(
    w: &CVector,
    ops: &LiftedOperators,
    noise_radar: f64,
) -> Result<FilterSolution> {
    let x = ops.target_echo(w);
    if x.norm() == 0.0 {
        return Err(DfrcError::DegenerateDesign(
            "the design returns no target echo".into(),
        ));
    }
    let g = factor_a(w, ops, noise_radar)?.solve(&x);
    let sinr = x.dotc(&g).re;
    if !(sinr > 0.0 && sinr.is_finite()) {
        return Err(DfrcError::DegenerateDesign(format!(
            "radar SINR evaluates to {sinr}"
        )));
    }
    Ok(FilterSolution {
        filter: g / C64::new(sinr, 0.0),
        sinr,
    })
}

/// `|w_r^H T̄_0 w|^2 / (w_r^H A(w) w_r)`; zero for a zero filter.
pub fn radar_sinr(w: &CVector, w_r: &CVector, ops: &LiftedOperators, noise_radar: f64) -> f64 {
    let num = w_r.dotc(&ops.target_echo(w)).norm_sqr();
    let mut den = noise_radar * w_r.norm_squared();
    for c in &ops.clutter {
        den += w_r.dotc(&(&c.op * w)).norm_sqr();
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Quadratic upper bound of `-SINR(w)` tangent at `w_t`:
/// `w^H U w - Re(b^H w) + constant`.
///
/// With `g = A(w_t)^{-1} T̄_0 w_t` the bound is `g^H A(w) g - 2 Re(g^H T̄_0 w)`,
/// so `U = Σ T̄^H g g^H T̄`, `b = 2 T̄_0^H g` and `constant = σ_r^2 ||g||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub u: CMatrix,
    pub b: CVector,
    pub constant: f64,
}

impl Surrogate {
    pub fn value(&self, w: &CVector) -> f64 {
        w.dotc(&(&self.u * w)).re - self.b.dotc(w).re + self.constant
    }

    /// The `w`-dependent part, which the subproblem minimizes.
    pub fn variable_part(&self, w: &CVector) -> f64 {
        self.value(w) - self.constant
    }
}

pub fn surrogate_params(
    w_t: &CVector,
    ops: &LiftedOperators,
    noise_radar: f64,
) -> Result<Surrogate> {
    let g = factor_a(w_t, ops, noise_radar)?.solve(&ops.target_echo(w_t));
    Ok(surrogate_at(&g, ops, noise_radar))
}

/// Surrogate from `g = A(w_t)^{-1} T̄_0 w_t`.
fn surrogate_at(g: &CVector, ops: &LiftedOperators, noise_radar: f64) -> Surrogate {
    let mut z = CMatrix::zeros(ops.dims.beam_len(), ops.clutter.len());
    for (j, c) in ops.clutter.iter().enumerate() {
        z.set_column(j, &c.op.ad_mul(g));
    }
    Surrogate {
        u: gram(&z),
        b: ops.t0.ad_mul(g) * C64::new(2.0, 0.0),
        constant: noise_radar * g.norm_squared(),
    }
}

/// Loop state after each accepted iterate.
#[derive(Debug, Clone)]
pub struct MmState {
    pub iteration: usize,
    pub w: CVector,
    pub surrogate: Surrogate,
    /// `-SINR_r` of every accepted iterate, starting with `w_0`.
    pub objective_trace: Vec<f64>,
}

/// One line of the iteration trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// `-SINR_r` (linear) at the iterate.
    pub objective: f64,
    /// Largest relative violation of the communication and power constraints.
    pub max_violation: f64,
}

/// Why the loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    /// The subproblem minimizer did not improve the true objective; the
    /// previous iterate is kept.
    NoDescent,
    /// The conic solver failed on a subproblem; the previous iterate is kept.
    SolverFailure,
}

#[derive(Debug, Clone)]
pub struct DesignResult {
    pub w: CVector,
    pub beamformers: BeamformerSet,
    pub receive_filter: CVector,
    pub radar_sinr: f64,
    /// `comm_sinr[n][k]` (linear).
    pub comm_sinr: Vec<Vec<f64>>,
    pub realized_power: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub initial_radar_sinr: f64,
    /// Max-min SINR reached by the balancing initialization per subcarrier.
    pub balanced_sinr: Vec<f64>,
    pub trace: Vec<IterationRecord>,
}

/// JSON view of a [`DesignResult`]; complex numbers are `[re, im]`.
#[derive(Debug, Clone, Serialize)]
pub struct DesignReport {
    pub radar_sinr_linear: f64,
    pub radar_sinr_db: f64,
    pub initial_radar_sinr_db: f64,
    pub comm_sinr_db: Vec<Vec<f64>>,
    pub min_comm_sinr_db: f64,
    pub balanced_sinr_db: Vec<f64>,
    pub realized_power: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub w: Vec<C64>,
    /// `beamformers[n][t][k]`.
    pub beamformers: Vec<Vec<Vec<C64>>>,
    pub receive_filter: Vec<C64>,
    pub trace: Vec<IterationRecord>,
}

impl DesignResult {
    pub fn radar_sinr_db(&self) -> f64 {
        to_db(self.radar_sinr)
    }

    pub fn min_comm_sinr(&self) -> f64 {
        self.comm_sinr
            .iter()
            .flatten()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn report(&self) -> DesignReport {
        DesignReport {
            radar_sinr_linear: self.radar_sinr,
            radar_sinr_db: self.radar_sinr_db(),
            initial_radar_sinr_db: to_db(self.initial_radar_sinr),
            comm_sinr_db: self
                .comm_sinr
                .iter()
                .map(|row| row.iter().map(|s| to_db(*s)).collect())
                .collect(),
            min_comm_sinr_db: to_db(self.min_comm_sinr()),
            balanced_sinr_db: self.balanced_sinr.iter().map(|s| to_db(*s)).collect(),
            realized_power: self.realized_power.clone(),
            iterations: self.iterations,
            converged: self.converged,
            stop_reason: self.stop_reason,
            w: self.w.iter().cloned().collect(),
            beamformers: self
                .beamformers
                .mats
                .iter()
                .map(|m| m.row_iter().map(|r| r.iter().cloned().collect()).collect())
                .collect(),
            receive_filter: self.receive_filter.iter().cloned().collect(),
            trace: self.trace.clone(),
        }
    }
}

/// Writes the trace as CSV with header `iter,objective,max_violation`.
pub fn write_trace_csv<W: Write>(trace: &[IterationRecord], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for rec in trace {
        wtr.serialize(rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Everything one design run consumes.
#[derive(Debug, Clone, Copy)]
pub struct DesignProblem<'a> {
    pub ops: &'a LiftedOperators,
    pub channel: &'a FreqChannel,
    pub symbols: &'a SymbolFrame,
    pub config: &'a OptimizerConfig,
}

impl DesignProblem<'_> {
    pub fn validate(&self) -> Result<()> {
        let dims = &self.ops.dims;
        self.config.validate(dims.subcarriers)?;
        let check = |what, expected: usize, found: usize| {
            if expected == found {
                Ok(())
            } else {
                Err(DfrcError::DimensionMismatch {
                    what,
                    expected,
                    found,
                })
            }
        };
        check(
            "channel subcarriers",
            dims.subcarriers,
            self.channel.num_subcarriers(),
        )?;
        check("channel users", dims.users, self.channel.num_users())?;
        for row in &self.channel.response {
            for h in row {
                check("channel response length", dims.tx, h.len())?;
            }
        }
        check(
            "symbol subcarriers",
            dims.subcarriers,
            self.symbols.num_subcarriers(),
        )?;
        check("symbol users", dims.users, self.symbols.num_users())?;
        check(
            "symbol frame length",
            dims.slots,
            self.symbols.frame_length(),
        )?;
        if !(self.channel.noise_power > 0.0) {
            return Err(DfrcError::InvalidInput(format!(
                "communication noise power must be positive, got {}",
                self.channel.noise_power
            )));
        }
        Ok(())
    }

    /// Largest relative violation of the SINR and power constraints at `w`.
    pub fn max_violation(&self, w: &CVector) -> Result<f64> {
        let beams = BeamformerSet::from_stacked(w, &self.ops.dims)?;
        let mut worst: f64 = 0.0;
        if let Some(gamma) = self.config.comm_sinr_threshold_linear {
            for row in sinr_table(&beams.mats, self.channel) {
                for s in row {
                    worst = worst.max((gamma - s) / gamma);
                }
            }
        }
        for (p, cap) in beams
            .realized_power(self.symbols)
            .iter()
            .zip(&self.config.per_subcarrier_power)
        {
            worst = worst.max((p - cap) / cap);
        }
        Ok(worst)
    }

    /// Most violated `(n, k)` (zero-based) of the SINR constraints, if any.
    pub(crate) fn sinr_bottleneck(&self, beams: &BeamformerSet) -> Option<(usize, usize, f64)> {
        let gamma = self.config.comm_sinr_threshold_linear?;
        let table = sinr_table(&beams.mats, self.channel);
        let mut worst: Option<(usize, usize, f64)> = None;
        for (n, row) in table.iter().enumerate() {
            for (k, &s) in row.iter().enumerate() {
                if s < gamma && worst.map_or(true, |(_, _, v)| s < v) {
                    worst = Some((n, k, s));
                }
            }
        }
        worst
    }
}

/// Scales each `W_n` so that `Σ_l ||W_n s_n[l]||^2 = P_{t,n}`.
pub fn fit_realized_power(
    beams: &BeamformerSet,
    symbols: &SymbolFrame,
    powers: &[f64],
) -> Result<BeamformerSet> {
    let realized = beams.realized_power(symbols);
    let mats = beams
        .mats
        .iter()
        .zip(realized.iter().zip(powers))
        .enumerate()
        .map(|(n, (w, (p, cap)))| {
            if *p > 0.0 {
                Ok(w * C64::new((cap / p).sqrt(), 0.0))
            } else {
                Err(DfrcError::ChannelDegenerate {
                    subcarrier: n + 1,
                    reason: "beamformer radiates no power with the given symbols".into(),
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BeamformerSet { mats })
}

/// Algorithm 1 without a trace observer.
pub fn run(problem: &DesignProblem) -> Result<DesignResult> {
    run_observed(problem, |_| {})
}

/// Algorithm 1. `observe` is called with every accepted iterate's record.
pub fn run_observed<F: FnMut(&IterationRecord)>(
    problem: &DesignProblem,
    mut observe: F,
) -> Result<DesignResult> {
    problem.validate()?;
    let cfg = problem.config;
    let ops = problem.ops;
    let dims = &ops.dims;

    let mut init = initialize(problem.channel, problem.symbols, cfg)?;
    let mut start = fit_realized_power(&init.beams, problem.symbols, &cfg.per_subcarrier_power)?;
    if problem.sinr_bottleneck(&start).is_some() {
        // the per-slot budget is only the expected power; balance against
        // the realized symbols before giving up
        log::debug!(
            "rescaled balanced start misses the SINR target; rebalancing under the realized power"
        );
        match initialize_realized(problem.channel, problem.symbols, cfg) {
            Ok(realized) => {
                init = realized;
                start = init.beams.clone();
            }
            Err(e) => log::debug!("realized-power balancing unavailable: {e}"),
        }
    }
    if let Some((n, k, achieved)) = problem.sinr_bottleneck(&start) {
        return Err(DfrcError::Infeasible {
            subcarrier: n + 1,
            user: k + 1,
            achieved_db: to_db(achieved),
            required_db: to_db(cfg.comm_sinr_threshold_linear.unwrap_or(0.0)),
        });
    }
    let mut w = start.stack();
    let x0 = ops.target_echo(&w);
    if x0.norm() <= 1e-12 * ops.t0.norm() * w.norm() {
        log::warn!("initial design nulls the target; applying a small perturbation");
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.perturbation_seed);
        let dir = crate::validate::random_complex(w.len(), &mut rng);
        let step = C64::new(1e-6 * w.norm() / dir.norm(), 0.0);
        let perturbed = BeamformerSet::from_stacked(&(&w + dir * step), dims)?;
        let perturbed = fit_realized_power(&perturbed, problem.symbols, &cfg.per_subcarrier_power)?;
        if problem.sinr_bottleneck(&perturbed).is_none() {
            start = perturbed;
            w = start.stack();
        }
    }

    let mut filter = optimal_receive_filter(&w, ops, cfg.noise_radar)?;
    let initial_radar_sinr = filter.sinr;
    let first = IterationRecord {
        iter: 0,
        objective: -filter.sinr,
        max_violation: problem.max_violation(&w)?,
    };
    observe(&first);
    let mut trace = vec![first];
    let mut iterations = 0;
    let mut stop_reason = StopReason::MaxIterations;
    let mut stationary = false;

    for t in 1..=cfg.max_iters {
        let surrogate = surrogate_at(
            &(&filter.filter * C64::new(filter.sinr, 0.0)),
            ops,
            cfg.noise_radar,
        );
        let next = match solve_subproblem(&surrogate, problem, &w) {
            Ok(sol) => sol.w,
            Err(e) => {
                log::warn!("subproblem {t} failed, keeping the previous iterate: {e}");
                stop_reason = StopReason::SolverFailure;
                break;
            }
        };
        let next_filter = match optimal_receive_filter(&next, ops, cfg.noise_radar) {
            Ok(f) => f,
            Err(e) => {
                log::warn!("iterate {t} is degenerate, keeping the previous iterate: {e}");
                stop_reason = StopReason::NoDescent;
                break;
            }
        };
        if next_filter.sinr < filter.sinr {
            stationary = filter.sinr - next_filter.sinr <= 1e-9 * filter.sinr;
            log::debug!(
                "iterate {t} would lower the SINR from {:.6e} to {:.6e}; stopping",
                filter.sinr,
                next_filter.sinr
            );
            stop_reason = StopReason::NoDescent;
            break;
        }
        let change = (&next - &w).norm() / w.norm();
        w = next;
        filter = next_filter;
        iterations = t;
        let rec = IterationRecord {
            iter: t,
            objective: -filter.sinr,
            max_violation: problem.max_violation(&w)?,
        };
        observe(&rec);
        trace.push(rec);
        log::trace!(
            "iter {t}: SINR {:.4} dB, change {change:.3e}",
            to_db(filter.sinr)
        );
        if change <= cfg.convergence_tol {
            stop_reason = StopReason::Converged;
            break;
        }
    }

    let converged = match stop_reason {
        StopReason::Converged => true,
        // a minimizer that cannot improve on its own tangent point is
        // stationary up to solver accuracy
        StopReason::NoDescent => stationary,
        StopReason::MaxIterations | StopReason::SolverFailure => false,
    };
    let beamformers = BeamformerSet::from_stacked(&w, dims)?;
    Ok(DesignResult {
        comm_sinr: sinr_table(&beamformers.mats, problem.channel),
        realized_power: beamformers.realized_power(problem.symbols),
        receive_filter: filter.filter,
        radar_sinr: filter.sinr,
        w,
        beamformers,
        iterations,
        converged,
        stop_reason,
        initial_radar_sinr,
        balanced_sinr: init.balanced.iter().map(|b| b.sinr).collect(),
        trace,
    })
}

#[cfg(test)]
mod tests;
