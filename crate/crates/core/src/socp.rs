//! A small second-order cone program representation and its solve contract.
//!
//! Programs are real: callers describe complex affine maps through
//! [`ComplexAffine`] and embed them once with [`complex_to_real_embedding`].
//! The variable layout for `n` complex unknowns is `[Re w; Im w]`.
//!
//! Solving is delegated to Clarabel; every point it reports as optimal is
//! re-checked against the original constraints before being returned.

use std::fmt::Write as _;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::{DMatrix, DVector};

use crate::{CMatrix, CVector, DfrcError, Result};

/// `||A x + b|| <= c^T x + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocConstraint {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d: f64,
}

impl SocConstraint {
    /// Amount by which `x` violates the cone (zero when satisfied).
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        let lhs = (&self.a * x + &self.b).norm();
        let rhs = self.c.dot(x) + self.d;
        (lhs - rhs).max(0.0)
    }

    fn scale(&self, x: &DVector<f64>) -> f64 {
        let lhs = (&self.a * x + &self.b).norm();
        let rhs = (self.c.dot(x) + self.d).abs();
        1.0f64.max(lhs).max(rhs)
    }
}

/// `A x = b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEquality {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Minimize `objective^T x` subject to cones and equalities.
#[derive(Debug, Clone, PartialEq)]
pub struct SocProgram {
    pub num_vars: usize,
    pub objective: DVector<f64>,
    pub cones: Vec<SocConstraint>,
    pub equalities: Vec<LinearEquality>,
}

/// A complex affine map `w ↦ A w + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexAffine {
    pub a: CMatrix,
    pub b: CVector,
}

/// Real rows `[Re A, -Im A; Im A, Re A]` and offset `[Re b; Im b]` acting on
/// `[Re w; Im w]`, so `||A w + b||` is preserved exactly.
pub fn complex_to_real_embedding(map: &ComplexAffine) -> (DMatrix<f64>, DVector<f64>) {
    let (m, n) = map.a.shape();
    let mut a = DMatrix::zeros(2 * m, 2 * n);
    for i in 0..m {
        for j in 0..n {
            let z = map.a[(i, j)];
            a[(i, j)] = z.re;
            a[(i, j + n)] = -z.im;
            a[(i + m, j)] = z.im;
            a[(i + m, j + n)] = z.re;
        }
    }
    let b = DVector::from_fn(
        2 * m,
        |i, _| if i < m { map.b[i].re } else { map.b[i - m].im },
    );
    (a, b)
}

/// Real coefficients `g` with `g^T [Re w; Im w] = Re(c^H w)`.
pub fn real_part_functional(c: &CVector) -> DVector<f64> {
    let n = c.len();
    DVector::from_fn(2 * n, |i, _| if i < n { c[i].re } else { c[i - n].im })
}

/// `[Re w; Im w]` → `w`.
pub fn complex_from_real(x: &[f64]) -> CVector {
    let n = x.len() / 2;
    CVector::from_fn(n, |i, _| crate::C64::new(x[i], x[i + n]))
}

/// `w` → `[Re w; Im w]`.
pub fn real_from_complex(w: &CVector) -> DVector<f64> {
    let n = w.len();
    DVector::from_fn(2 * n, |i, _| if i < n { w[i].re } else { w[i - n].im })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalTrouble,
}

#[derive(Debug, Clone)]
pub struct SocSolution {
    pub status: SolveStatus,
    pub x: DVector<f64>,
    pub objective: f64,
    /// Largest relative cone or equality residual of `x`, recomputed here.
    pub max_residual: f64,
    pub iterations: u32,
    /// Solver diagnostics for non-optimal outcomes.
    pub detail: String,
}

/// Solver knobs. `tol` drives the interior-point stopping criteria;
/// `audit_tol` is the residual an optimal point must pass on re-check.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tol: f64,
    pub audit_tol: f64,
    pub max_iter: u32,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-8,
            audit_tol: 1e-6,
            max_iter: 200,
        }
    }
}

impl SocProgram {
    pub fn new(num_vars: usize, objective: DVector<f64>) -> SocProgram {
        SocProgram {
            num_vars,
            objective,
            cones: Vec::new(),
            equalities: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars;
        let bad = |what: &'static str, expected: usize, found: usize| {
            Err(DfrcError::DimensionMismatch {
                what,
                expected,
                found,
            })
        };
        if self.objective.len() != n {
            return bad("objective", n, self.objective.len());
        }
        for c in &self.cones {
            if c.a.ncols() != n {
                return bad("cone map columns", n, c.a.ncols());
            }
            if c.b.len() != c.a.nrows() {
                return bad("cone offset", c.a.nrows(), c.b.len());
            }
            if c.c.len() != n {
                return bad("cone linear term", n, c.c.len());
            }
        }
        for e in &self.equalities {
            if e.a.ncols() != n {
                return bad("equality columns", n, e.a.ncols());
            }
            if e.b.len() != e.a.nrows() {
                return bad("equality right-hand side", e.a.nrows(), e.b.len());
            }
        }
        if self.cones.is_empty()
            && self.equalities.is_empty()
            && self.objective.iter().any(|&v| v != 0.0)
        {
            return Err(DfrcError::InvalidInput(
                "unconstrained linear objective is unbounded".into(),
            ));
        }
        Ok(())
    }

    /// Largest relative residual of `x` over all constraints.
    pub fn max_residual(&self, x: &DVector<f64>) -> f64 {
        let cones = self
            .cones
            .iter()
            .map(|c| c.violation(x) / c.scale(x))
            .fold(0.0, f64::max);
        let eqs = self
            .equalities
            .iter()
            .map(|e| {
                let r = &e.a * x - &e.b;
                r.amax() / 1.0f64.max(e.b.amax())
            })
            .fold(0.0, f64::max);
        cones.max(eqs)
    }

    /// Conic-form data `A x + s = b`, `s ∈ K` for Clarabel.
    fn conic_form(&self) -> (CscMatrix<f64>, Vec<f64>, Vec<SupportedConeT<f64>>) {
        let n = self.num_vars;
        let mut rows: Vec<usize> = Vec::new();
        let mut cols: Vec<usize> = Vec::new();
        let mut vals: Vec<f64> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        let mut cones = Vec::new();
        let mut push_row =
            |coeffs: &mut dyn Iterator<Item = (usize, f64)>, b: f64, rhs: &mut Vec<f64>| {
                let r = rhs.len();
                for (j, v) in coeffs {
                    if v != 0.0 {
                        rows.push(r);
                        cols.push(j);
                        vals.push(v);
                    }
                }
                rhs.push(b);
            };
        let eq_rows: usize = self.equalities.iter().map(|e| e.a.nrows()).sum();
        for e in &self.equalities {
            for i in 0..e.a.nrows() {
                push_row(&mut (0..n).map(|j| (j, e.a[(i, j)])), e.b[i], &mut rhs);
            }
        }
        if eq_rows > 0 {
            cones.push(SupportedConeT::ZeroConeT(eq_rows));
        }
        for c in &self.cones {
            // s = [c^T x + d; A x + b]  =>  rows [-c^T; -A], offsets [d; b]
            push_row(&mut (0..n).map(|j| (j, -c.c[j])), c.d, &mut rhs);
            for i in 0..c.a.nrows() {
                push_row(&mut (0..n).map(|j| (j, -c.a[(i, j)])), c.b[i], &mut rhs);
            }
            cones.push(SupportedConeT::SecondOrderConeT(c.a.nrows() + 1));
        }
        let m = rhs.len();
        let a = CscMatrix::new_from_triplets(m, n, rows, cols, vals);
        (a, rhs, cones)
    }

    /// Writes the program in the Conic Benchmark Format (CBF, version 3).
    pub fn to_cbf(&self) -> String {
        let n = self.num_vars;
        let mut out = String::new();
        let _ = writeln!(out, "VER\n3\n\nOBJSENSE\nMIN\n\nVAR\n{n} 1\nF {n}\n");
        let mut blocks: Vec<(String, usize)> = Vec::new();
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        let mut offsets: Vec<(usize, f64)> = Vec::new();
        let mut row = 0;
        for c in &self.cones {
            blocks.push(("Q".into(), c.a.nrows() + 1));
            entries.extend((0..n).filter(|&j| c.c[j] != 0.0).map(|j| (row, j, c.c[j])));
            offsets.push((row, c.d));
            for i in 0..c.a.nrows() {
                entries.extend(
                    (0..n)
                        .filter(|&j| c.a[(i, j)] != 0.0)
                        .map(|j| (row + 1 + i, j, c.a[(i, j)])),
                );
                offsets.push((row + 1 + i, c.b[i]));
            }
            row += c.a.nrows() + 1;
        }
        for e in &self.equalities {
            blocks.push(("L=".into(), e.a.nrows()));
            for i in 0..e.a.nrows() {
                entries.extend(
                    (0..n)
                        .filter(|&j| e.a[(i, j)] != 0.0)
                        .map(|j| (row + i, j, e.a[(i, j)])),
                );
                offsets.push((row + i, -e.b[i]));
            }
            row += e.a.nrows();
        }
        let _ = writeln!(out, "CON\n{row} {}", blocks.len());
        for (kind, dim) in &blocks {
            let _ = writeln!(out, "{kind} {dim}");
        }
        let obj: Vec<(usize, f64)> = self
            .objective
            .iter()
            .cloned()
            .enumerate()
            .filter(|(_, v)| *v != 0.0)
            .collect();
        let _ = writeln!(out, "\nOBJACOORD\n{}", obj.len());
        for (j, v) in obj {
            let _ = writeln!(out, "{j} {v:e}");
        }
        let _ = writeln!(out, "\nACOORD\n{}", entries.len());
        for (i, j, v) in entries {
            let _ = writeln!(out, "{i} {j} {v:e}");
        }
        let offsets: Vec<_> = offsets.into_iter().filter(|(_, v)| *v != 0.0).collect();
        let _ = writeln!(out, "\nBCOORD\n{}", offsets.len());
        for (i, v) in offsets {
            let _ = writeln!(out, "{i} {v:e}");
        }
        out
    }
}

/// Solves `p`. Errors are reserved for malformed programs; solver outcomes
/// are reported through [`SolveStatus`].
pub fn solve(p: &SocProgram, opts: &SolveOptions) -> Result<SocSolution> {
    p.validate()?;
    let n = p.num_vars;
    let (a, b, cones) = p.conic_form();
    let q: Vec<f64> = p.objective.iter().cloned().collect();
    let pmat = CscMatrix::zeros((n, n));
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(opts.max_iter)
        .tol_feas(opts.tol)
        .tol_gap_abs(opts.tol)
        .tol_gap_rel(opts.tol)
        .build()
        .map_err(|e| DfrcError::Solver(format!("settings: {e}")))?;
    let mut solver = DefaultSolver::new(&pmat, &q, &a, &b, &cones, settings);
    solver.solve();
    let sol = &solver.solution;
    let x = DVector::from_column_slice(&sol.x);
    let max_residual = if x.iter().all(|v| v.is_finite()) {
        p.max_residual(&x)
    } else {
        f64::INFINITY
    };
    let objective = p.objective.dot(&x);
    let (status, detail) = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved if max_residual <= opts.audit_tol => {
            (SolveStatus::Optimal, String::new())
        }
        SolverStatus::Solved | SolverStatus::AlmostSolved => (
            SolveStatus::NumericalTrouble,
            format!("solver reported {:?} but re-check residual is {max_residual:.3e}", sol.status),
        ),
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => (
            SolveStatus::Infeasible,
            format!("primal infeasibility certificate ({:?})", sol.status),
        ),
        other => (
            SolveStatus::NumericalTrouble,
            format!(
                "solver stopped with {other:?} after {} iterations (primal residual {:.3e}, dual residual {:.3e})",
                sol.iterations, sol.r_prim, sol.r_dual
            ),
        ),
    };
    Ok(SocSolution {
        status,
        x,
        objective,
        max_residual,
        iterations: sol.iterations,
        detail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm_channel::complex_normal;
    use crate::C64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn embedding_trivial_cases() {
        let zero = ComplexAffine {
            a: CMatrix::zeros(2, 3),
            b: CVector::zeros(2),
        };
        let (a, b) = complex_to_real_embedding(&zero);
        assert_eq!(a, DMatrix::zeros(4, 6));
        assert_eq!(b, DVector::zeros(4));
        let one = ComplexAffine {
            a: CMatrix::from_element(1, 1, C64::new(1.0, 0.0)),
            b: CVector::zeros(1),
        };
        let (a, _) = complex_to_real_embedding(&one);
        assert_eq!(a, DMatrix::identity(2, 2));
    }

    #[test]
    fn embedding_preserves_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (m, n) = (rng.gen_range(1..6), rng.gen_range(1..6));
            let map = ComplexAffine {
                a: CMatrix::from_fn(m, n, |_, _| complex_normal(&mut rng)),
                b: CVector::from_fn(m, |_, _| complex_normal(&mut rng)),
            };
            let w = CVector::from_fn(n, |_, _| complex_normal(&mut rng));
            let (a, b) = complex_to_real_embedding(&map);
            let direct = (&map.a * &w + &map.b).norm();
            let embedded = (a * real_from_complex(&w) + b).norm();
            assert!((direct - embedded).abs() < 1e-14 * direct.max(1.0));
            let c = CVector::from_fn(n, |_, _| complex_normal(&mut rng));
            let re = c.dotc(&w).re;
            assert!((real_part_functional(&c).dot(&real_from_complex(&w)) - re).abs() < 1e-13);
        }
    }

    #[test]
    fn unit_ball_minimum() {
        // min x s.t. |x| <= 1
        let mut p = SocProgram::new(1, DVector::from_element(1, 1.0));
        p.cones.push(SocConstraint {
            a: DMatrix::identity(1, 1),
            b: DVector::zeros(1),
            c: DVector::zeros(1),
            d: 1.0,
        });
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] + 1.0).abs() < 1e-7);
    }

    #[test]
    fn point_cone_pins_solution() {
        // min 0 s.t. ||x - c|| <= 0
        let c = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let mut p = SocProgram::new(3, DVector::zeros(3));
        p.cones.push(SocConstraint {
            a: DMatrix::identity(3, 3),
            b: -&c,
            c: DVector::zeros(3),
            d: 0.0,
        });
        let sol = solve(
            &p,
            &SolveOptions {
                audit_tol: 1e-4,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((&sol.x - &c).norm() < 1e-4, "{:?} {}", sol.status, sol.x);
    }

    #[test]
    fn infeasible_program_is_reported() {
        // ||x|| <= 1 and x = 3
        let mut p = SocProgram::new(1, DVector::zeros(1));
        p.cones.push(SocConstraint {
            a: DMatrix::identity(1, 1),
            b: DVector::zeros(1),
            c: DVector::zeros(1),
            d: 1.0,
        });
        p.equalities.push(LinearEquality {
            a: DMatrix::identity(1, 1),
            b: DVector::from_element(1, 3.0),
        });
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn malformed_program_rejected() {
        let p = SocProgram::new(2, DVector::zeros(3));
        assert!(solve(&p, &SolveOptions::default()).is_err());
        let p = SocProgram::new(1, DVector::from_element(1, 1.0));
        assert!(p.validate().is_err());
    }

    /// KKT audit of random feasible programs: min c^T x s.t. ||A_i x + b_i|| <= d_i.
    #[test]
    fn random_programs_pass_residual_audit() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let n = rng.gen_range(2..6);
            let mut p = SocProgram::new(n, DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)));
            for _ in 0..rng.gen_range(1..4) {
                let m = rng.gen_range(n..n + 3);
                let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
                let b = DVector::from_fn(m, |_, _| rng.gen_range(-0.5..0.5));
                // origin strictly feasible
                let d = b.norm() + rng.gen_range(0.5..2.0);
                p.cones.push(SocConstraint {
                    a,
                    b,
                    c: DVector::zeros(n),
                    d,
                });
            }
            // tight gap so that tangential error along active faces is small
            let tight = SolveOptions {
                tol: 1e-11,
                ..Default::default()
            };
            let sol = solve(&p, &tight).unwrap();
            assert_eq!(sol.status, SolveStatus::Optimal, "{}", sol.detail);
            assert!(p.max_residual(&sol.x) <= 1e-7);
            // stationarity: c + Σ λ_i (A_i^T (A_i x + b_i)/||.||) = 0 with λ_i >= 0 only on active cones
            let grad = p.objective.clone();
            let active: Vec<DVector<f64>> = p
                .cones
                .iter()
                .filter(|c| (c.a.clone() * &sol.x + &c.b).norm() > c.d - 1e-5)
                .map(|c| {
                    let r = &c.a * &sol.x + &c.b;
                    c.a.transpose() * (r / c.d)
                })
                .collect();
            assert!(!active.is_empty());
            // least-squares multipliers reproduce -grad
            let g = DMatrix::from_columns(&active);
            let lambda =
                (g.transpose() * &g).pseudo_inverse(1e-12).unwrap() * g.transpose() * (-&grad);
            let resid = &g * &lambda + &grad;
            assert!(
                resid.norm() < 1e-5 * grad.norm().max(1.0),
                "{}",
                resid.norm()
            );
            assert!(lambda.iter().all(|&l| l > -1e-6));
            // determinism
            let again = solve(&p, &SolveOptions::default()).unwrap();
            assert!(
                (again.objective - sol.objective).abs()
                    <= 10.0 * 1e-8 * sol.objective.abs().max(1.0)
            );
        }
    }

    #[test]
    fn cbf_dump_lists_cones() {
        let mut p = SocProgram::new(2, DVector::from_vec(vec![1.0, 0.0]));
        p.cones.push(SocConstraint {
            a: DMatrix::identity(2, 2),
            b: DVector::zeros(2),
            c: DVector::zeros(2),
            d: 1.0,
        });
        p.equalities.push(LinearEquality {
            a: DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            b: DVector::from_element(1, 0.5),
        });
        let cbf = p.to_cbf();
        assert!(cbf.contains("CON\n4 2\nQ 3\nL= 1"));
        assert!(cbf.contains("OBJACOORD\n1\n0 1e0"));
        assert!(cbf.contains("BCOORD\n2\n0 1e0\n3 -5e-1"));
    }
}
