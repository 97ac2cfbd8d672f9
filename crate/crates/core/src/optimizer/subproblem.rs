//! The convex subproblem of one MM step as a second-order cone program.
//!
//! Variables are `x = [Re w; Im w; τ]`. The objective `w^H U w - Re(b^H w)`
//! becomes `τ - Re(b^H w)` with the rotated cone `||[2 C w; τ - 1]|| <= τ + 1`,
//! i.e. `||C w||^2 <= τ`, where `C^H C = U + δ I`.
//!
//! Each SINR constraint `|h^H w_k|^2 >= Γ (Σ_{j≠k} |h^H w_j|^2 + σ^2)` is
//! imposed as `sqrt(1 + 1/Γ) Re(e^{-jφ} h^H w_k) >= ||[h^H W_n, σ]||` with
//! `φ = arg(h^H w_k)` taken from the current iterate. The current iterate
//! satisfies this form whenever it satisfies the original constraint, and
//! every point that satisfies it satisfies the original one, so the MM
//! descent argument is unaffected.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use super::{DesignProblem, Surrogate};
use crate::lifting::BeamformerSet;
use crate::socp::{
    complex_from_real, complex_to_real_embedding, real_part_functional, solve, ComplexAffine,
    SocConstraint, SocProgram, SolveStatus,
};
use crate::{to_db, CMatrix, CVector, DfrcError, Result, C64};

#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub w: CVector,
    /// `w^H U w - Re(b^H w)` at the solution.
    pub objective: f64,
    pub solver_iterations: u32,
    pub max_residual: f64,
}

/// `C` with `C^H C = U + δ I`, `δ = ridge tr(U) / dim`; `None` when `U = 0`.
pub(crate) fn objective_factor(u: &CMatrix, ridge: f64) -> Option<CMatrix> {
    let dim = u.nrows();
    let trace: f64 = (0..dim).map(|i| u[(i, i)].re).sum();
    if !(trace > 0.0) {
        return None;
    }
    let shifted = u + CMatrix::identity(dim, dim) * C64::new(ridge * trace / dim as f64, 0.0);
    if let Some(ch) = Cholesky::new(shifted.clone()) {
        return Some(ch.l().adjoint());
    }
    // rounding can leave tiny negative eigenvalues when the ridge is zero
    let eig = SymmetricEigen::new(shifted);
    let sqrt_vals = eig.eigenvalues.map(|v| C64::new(v.max(0.0).sqrt(), 0.0));
    Some(CMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.adjoint())
}

fn pad_columns(a: DMatrix<f64>, cols: usize) -> DMatrix<f64> {
    let rows = a.nrows();
    a.resize(rows, cols, 0.0)
}

/// Rows mapping `w` to `(S_n^T ⊗ I) vec(W_n)`, i.e. `W_n s_n[l]` stacked over `l`.
pub(crate) fn power_map(n: usize, symbols: &CMatrix, tx: usize, beam_len: usize) -> CMatrix {
    let (users, slots) = symbols.shape();
    let block = tx * users;
    let mut g = CMatrix::zeros(slots * tx, beam_len);
    for l in 0..slots {
        for k in 0..users {
            for t in 0..tx {
                g[(l * tx + t, n * block + k * tx + t)] = symbols[(k, l)];
            }
        }
    }
    g
}

/// Cone for `sqrt(1 + 1/Γ) Re(e^{-jφ} h^H w_{n,k}) >= ||[h^H W_n, σ]||` over
/// `num_vars` real variables, the first `2 * beam_len` being `[Re w; Im w]`.
pub(crate) fn sinr_cone(
    n: usize,
    k: usize,
    h: &CVector,
    phase: C64,
    gamma: f64,
    noise_std: f64,
    tx: usize,
    users: usize,
    beam_len: usize,
    num_vars: usize,
) -> SocConstraint {
    let block = tx * users;
    let mut a = CMatrix::zeros(users + 1, beam_len);
    for j in 0..users {
        for t in 0..tx {
            a[(j, n * block + j * tx + t)] = h[t].conj();
        }
    }
    let mut b = CVector::zeros(users + 1);
    b[users] = C64::new(noise_std, 0.0);
    let (ra, rb) = complex_to_real_embedding(&ComplexAffine { a, b });
    let mut z = CVector::zeros(beam_len);
    for t in 0..tx {
        z[n * block + k * tx + t] = h[t] * phase;
    }
    let c = real_part_functional(&z) * (1.0 + 1.0 / gamma).sqrt();
    SocConstraint {
        a: pad_columns(ra, num_vars),
        b: rb,
        c: c.resize_vertically(num_vars, 0.0),
        d: 0.0,
    }
}

/// Unit phase of `h^H w_k`, or 1 when it vanishes.
pub(crate) fn reference_phase(h: &CVector, w_k: &CVector) -> C64 {
    let z = h.dotc(w_k);
    if z.norm() > 0.0 {
        z / z.norm()
    } else {
        C64::new(1.0, 0.0)
    }
}

/// Minimizes the surrogate over the constraint set linearized at `reference`.
pub fn solve_subproblem(
    surrogate: &Surrogate,
    problem: &DesignProblem,
    reference: &CVector,
) -> Result<SubproblemSolution> {
    let dims = &problem.ops.dims;
    let cfg = problem.config;
    let nb = dims.beam_len();
    let tau = 2 * nb;
    let num_vars = tau + 1;

    let mut objective = DVector::zeros(num_vars);
    objective
        .rows_mut(0, tau)
        .copy_from(&(-real_part_functional(&surrogate.b)));
    let mut program = SocProgram::new(num_vars, objective);

    if let Some(c) = objective_factor(&surrogate.u, cfg.surrogate_ridge) {
        let (ra, _) = complex_to_real_embedding(&ComplexAffine {
            a: c * C64::new(2.0, 0.0),
            b: CVector::zeros(nb),
        });
        let mut a = pad_columns(ra, num_vars).insert_row(2 * nb, 0.0);
        a[(2 * nb, tau)] = 1.0;
        let mut b = DVector::zeros(2 * nb + 1);
        b[2 * nb] = -1.0;
        let mut c = DVector::zeros(num_vars);
        c[tau] = 1.0;
        program.objective[tau] = 1.0;
        program.cones.push(SocConstraint { a, b, c, d: 1.0 });
    }

    for n in 0..dims.subcarriers {
        let g = power_map(n, &problem.symbols.symbols[n], dims.tx, nb);
        let (ra, rb) = complex_to_real_embedding(&ComplexAffine {
            a: g,
            b: CVector::zeros(dims.slots * dims.tx),
        });
        program.cones.push(SocConstraint {
            a: pad_columns(ra, num_vars),
            b: rb,
            c: DVector::zeros(num_vars),
            d: cfg.per_subcarrier_power[n].sqrt(),
        });
    }

    let ref_beams = BeamformerSet::from_stacked(reference, dims)?;
    if let Some(gamma) = cfg.comm_sinr_threshold_linear {
        let noise_std = problem.channel.noise_power.sqrt();
        for n in 0..dims.subcarriers {
            for k in 0..dims.users {
                let h = problem.channel.get(n, k);
                let phase = reference_phase(h, &ref_beams.mats[n].column(k).into_owned());
                program.cones.push(sinr_cone(
                    n, k, h, phase, gamma, noise_std, dims.tx, dims.users, nb, num_vars,
                ));
            }
        }
    }

    let sol = solve(&program, &cfg.solve_options())?;
    match sol.status {
        SolveStatus::Optimal => {
            let w = complex_from_real(&sol.x.as_slice()[..tau]);
            Ok(SubproblemSolution {
                objective: surrogate.variable_part(&w),
                w,
                solver_iterations: sol.iterations,
                max_residual: sol.max_residual,
            })
        }
        SolveStatus::Infeasible => {
            let (n, k, achieved) = problem
                .sinr_bottleneck(&ref_beams)
                .unwrap_or((0, 0, f64::NAN));
            Err(DfrcError::Infeasible {
                subcarrier: n + 1,
                user: k + 1,
                achieved_db: to_db(achieved),
                required_db: to_db(cfg.comm_sinr_threshold_linear.unwrap_or(f64::NAN)),
            })
        }
        SolveStatus::NumericalTrouble => Err(DfrcError::Solver(sol.detail)),
    }
}
