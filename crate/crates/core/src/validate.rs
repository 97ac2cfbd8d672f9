//! Randomized model-consistency checks.
//!
//! Each check draws small random scenarios, evaluates a library routine and
//! compares it with an independent computation (dense covariance path,
//! direct generalized eigenproblem, random competitors). The CLI `validate`
//! subcommand runs [`run_suite`]; the unit and acceptance tests reuse the
//! instance generator.

use nalgebra::{Cholesky, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::comm_channel::{complex_normal, dft_response, FreqChannel, TapChannel};
use crate::lifting::{BeamformerSet, LiftedOperators};
use crate::optimizer::{
    clutter_noise_matrix, optimal_receive_filter, radar_sinr, surrogate_params,
};
use crate::radar_scene::{
    build_xbar, clutter_factors, lifted_shift, stacked_signature, ClutterField, ClutterStatistics,
    Dims, InnerCcmFactors, Scatterer,
};
use crate::signal_model::{
    generate_symbols, ArrayGeometry, Constellation, OfdmGrid, SymbolFrame, SPEED_OF_LIGHT,
};
use crate::{CMatrix, CVector, Result, C64};

/// Size limits for random instances.
#[derive(Debug, Clone, Copy)]
pub struct InstanceShape {
    pub subcarriers: usize,
    pub slots: usize,
    pub samples: usize,
    pub tx: usize,
    pub rx: usize,
    pub users: usize,
    pub max_offset: usize,
    pub patches_per_cell: usize,
}

impl InstanceShape {
    /// Uniformly random shape within the given upper bounds.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max: &InstanceShape) -> InstanceShape {
        InstanceShape {
            subcarriers: rng.gen_range(1..=max.subcarriers),
            slots: rng.gen_range(1..=max.slots),
            samples: rng.gen_range(1..=max.samples),
            tx: rng.gen_range(1..=max.tx),
            rx: rng.gen_range(1..=max.rx),
            users: rng.gen_range(1..=max.users),
            max_offset: rng.gen_range(0..=max.max_offset),
            patches_per_cell: rng.gen_range(1..=max.patches_per_cell),
        }
    }
}

/// A complete random design problem.
#[derive(Debug, Clone)]
pub struct Instance {
    pub grid: OfdmGrid,
    pub geom: ArrayGeometry,
    pub dims: Dims,
    pub target: Scatterer,
    pub target_signature: CVector,
    pub clutter: ClutterField,
    pub factors: Vec<InnerCcmFactors>,
    pub symbols: SymbolFrame,
    pub channel: FreqChannel,
    pub ops: LiftedOperators,
}

/// Draws a random instance on a 2.4 GHz, 0.2 MHz-spaced grid with
/// half-wavelength arrays, QPSK symbols and two-tap channels.
pub fn random_instance(
    shape: &InstanceShape,
    clutter_power: f64,
    noise_comm: f64,
    seed: u64,
) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = OfdmGrid {
        carrier_freq_hz: 2.4e9,
        subcarrier_spacing_hz: 0.2e6,
        symbol_duration_s: 5e-6,
        cp_duration_s: 2e-6,
        num_subcarriers: shape.subcarriers,
        frame_length: shape.slots,
        samples_per_symbol: shape.samples,
        wave_speed_m_s: SPEED_OF_LIGHT,
        first_subcarrier: 0,
    };
    let half_wave = 0.5 * SPEED_OF_LIGHT / grid.carrier_freq_hz;
    let geom = ArrayGeometry {
        num_tx: shape.tx,
        num_rx: shape.rx,
        tx_spacing_m: half_wave,
        rx_spacing_m: half_wave,
    };
    let dims = Dims::new(&grid, &geom, shape.users);
    let target = Scatterer::uniform(
        rng.gen_range(-1.2..1.2),
        rng.gen_range(0.0..50.0),
        0.1,
        shape.subcarriers,
        0,
    );
    let target_signature = stacked_signature(&target, &grid, &geom)?;
    let clutter = ClutterField::random(
        shape.max_offset,
        shape.patches_per_cell,
        (0.0, std::f64::consts::TAU),
        (0.0, 50.0),
        clutter_power,
        shape.subcarriers,
        &mut rng,
    );
    let factors = clutter_factors(&clutter, &grid, &geom, ClutterStatistics::Coherent)?;
    let symbols = generate_symbols(shape.users, &grid, Constellation::Qpsk, rng.gen());
    let taps = TapChannel::random(
        shape.users,
        2.min(shape.subcarriers),
        shape.tx,
        noise_comm,
        &mut rng,
    );
    let channel = dft_response(&taps, &grid)?;
    let ops = LiftedOperators::build(&target_signature, &factors, &symbols, dims)?;
    Ok(Instance {
        grid,
        geom,
        dims,
        target,
        target_signature,
        clutter,
        factors,
        symbols,
        channel,
        ops,
    })
}

/// CN(0, I) vector.
pub fn random_complex<R: Rng + ?Sized>(len: usize, rng: &mut R) -> CVector {
    CVector::from_fn(len, |_, _| complex_normal(rng))
}

/// Largest eigenvalue of the pencil `(x x^H, A)` for Hermitian PD `A`,
/// computed by whitening with the Cholesky factor and a dense Hermitian
/// eigensolver.
pub fn max_generalized_eigenvalue(x: &CVector, a: &CMatrix) -> Option<f64> {
    let chol = Cholesky::new(a.clone())?;
    let l = chol.l();
    let linv = l.clone().try_inverse()?;
    let y = &linv * x;
    let b = &y * y.adjoint();
    let eig = SymmetricEigen::new(b);
    eig.eigenvalues
        .iter()
        .cloned()
        .fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |m| m.max(v)))
        })
}

/// Outcome of one named check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub instances: usize,
    /// Worst observed error in the check's own metric.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<28} instances={:<4} worst={:.3e} tol={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.instances,
            self.worst,
            self.tolerance
        )
    }
}

/// Shape bounds used by the suite: `N, L <= 4`, `N_s <= 3`, `N_t, N_r <= 4`, `K <= 3`.
pub const SUITE_SHAPE: InstanceShape = InstanceShape {
    subcarriers: 4,
    slots: 4,
    samples: 3,
    tx: 4,
    rx: 4,
    users: 3,
    max_offset: 1,
    patches_per_cell: 4,
};

fn random_beams<R: Rng + ?Sized>(dims: &Dims, rng: &mut R) -> BeamformerSet {
    BeamformerSet {
        mats: (0..dims.subcarriers)
            .map(|_| CMatrix::from_fn(dims.tx, dims.users, |_, _| complex_normal(rng)))
            .collect(),
    }
}

fn rel(a: &CMatrix, b: &CMatrix) -> f64 {
    let scale = b.norm();
    if scale == 0.0 {
        a.norm()
    } else {
        (a - b).norm() / scale
    }
}

/// `||T̄_0 w - X̄ v_0|| / ||X̄ v_0||` and the relative Frobenius error of
/// `Σ T̄_{m,r} w w^H T̄_{m,r}^H` against `Σ_m J̄_m X̄ M_m X̄^H J̄_m^H`, on one
/// instance.
pub fn reformulation_errors(inst: &Instance, beams: &BeamformerSet) -> Result<(f64, f64)> {
    let dims = &inst.dims;
    let w = beams.stack();
    let xbar = build_xbar(&beams.mats, &inst.symbols, dims)?;
    let direct = &xbar * &inst.target_signature;
    let lifted = inst.ops.target_echo(&w);
    let target_err = rel(
        &CMatrix::from_column_slice(lifted.len(), 1, lifted.as_slice()),
        &CMatrix::from_column_slice(direct.len(), 1, direct.as_slice()),
    );
    let len = dims.echo_len();
    let mut dense = CMatrix::zeros(len, len);
    for cell in &inst.factors {
        let m = cell.dense(dims.stacked_len());
        let j =
            lifted_shift(cell.offset, dims.samples, dims.rx, dims.slots).map(|v| C64::new(v, 0.0));
        let jx = &j * &xbar;
        dense += &jx * m * jx.adjoint();
    }
    let mut lifted_cov = CMatrix::zeros(len, len);
    for c in &inst.ops.clutter {
        let y = &c.op * &w;
        lifted_cov.gerc(C64::new(1.0, 0.0), &y, &y, C64::new(1.0, 0.0));
    }
    Ok((target_err, rel(&lifted_cov, &dense)))
}

/// Runs every check on `instances` random instances derived from `seed`.
pub fn run_suite(instances: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut target_worst: f64 = 0.0;
    let mut clutter_worst: f64 = 0.0;
    let mut eig_worst: f64 = 0.0;
    let mut dominance_worst: f64 = 0.0;
    let mut major_worst: f64 = 0.0;
    let mut tangency_worst: f64 = 0.0;
    for _ in 0..instances {
        let shape = InstanceShape::random(&mut rng, &SUITE_SHAPE);
        let noise_radar = 10f64.powf(rng.gen_range(-2.0..0.0));
        let inst = random_instance(&shape, 0.1, 0.01, rng.gen())?;
        let beams = random_beams(&inst.dims, &mut rng);
        let w = beams.stack();
        let (te, ce) = reformulation_errors(&inst, &beams)?;
        target_worst = target_worst.max(te);
        clutter_worst = clutter_worst.max(ce);

        let a = clutter_noise_matrix(&w, &inst.ops, noise_radar);
        let filt = optimal_receive_filter(&w, &inst.ops, noise_radar)?;
        let oracle = max_generalized_eigenvalue(&inst.ops.target_echo(&w), &a).unwrap_or(f64::NAN);
        eig_worst = eig_worst.max((filt.sinr - oracle).abs() / oracle);
        for _ in 0..100 {
            let wr = random_complex(inst.dims.echo_len(), &mut rng);
            let s = radar_sinr(&w, &wr, &inst.ops, noise_radar);
            dominance_worst = dominance_worst.max((s - filt.sinr) / filt.sinr);
        }

        let sur = surrogate_params(&w, &inst.ops, noise_radar)?;
        tangency_worst = tangency_worst.max((sur.value(&w) + filt.sinr).abs());
        for _ in 0..100 {
            let scale = 10f64.powf(rng.gen_range(-1.0..1.0));
            let x = random_complex(w.len(), &mut rng) * C64::new(scale, 0.0);
            let truth = -optimal_receive_filter(&x, &inst.ops, noise_radar).map_or(0.0, |f| f.sinr);
            major_worst = major_worst.max(truth - sur.value(&x));
        }
    }
    let check = |name, worst: f64, tolerance| CheckOutcome {
        name,
        instances,
        worst,
        tolerance,
        passed: worst < tolerance,
    };
    Ok(vec![
        check("target_lifting_identity", target_worst, 1e-9),
        check("clutter_covariance_identity", clutter_worst, 1e-9),
        check("filter_generalized_eigen", eig_worst, 1e-8),
        check("filter_dominates_random", dominance_worst, 1e-12),
        check("surrogate_majorizes", major_worst, 1e-8),
        check("surrogate_tangency", tangency_worst, 1e-8),
    ])
}
