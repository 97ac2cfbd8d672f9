use super::subproblem::{objective_factor, power_map};
use super::*;
use crate::comm_channel::{comm_sinr, complex_normal};
use crate::radar_scene::{build_xbar, lifted_shift};
use crate::validate::{
    max_generalized_eigenvalue, random_complex, random_instance, Instance, InstanceShape,
};
use nalgebra::SymmetricEigen;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn shape(
    n: usize,
    l: usize,
    ns: usize,
    nt: usize,
    nr: usize,
    k: usize,
    m: usize,
    patches: usize,
) -> InstanceShape {
    InstanceShape {
        subcarriers: n,
        slots: l,
        samples: ns,
        tx: nt,
        rx: nr,
        users: k,
        max_offset: m,
        patches_per_cell: patches,
    }
}

fn no_clutter(mut inst: Instance) -> Instance {
    inst.ops.clutter.clear();
    inst.factors.clear();
    inst
}

fn config_for(inst: &Instance, gamma: Option<f64>, power: f64) -> OptimizerConfig {
    OptimizerConfig {
        comm_sinr_threshold_linear: gamma,
        per_subcarrier_power: vec![power; inst.dims.subcarriers],
        noise_radar: 0.1,
        ..OptimizerConfig::default()
    }
}

fn problem<'a>(inst: &'a Instance, cfg: &'a OptimizerConfig) -> DesignProblem<'a> {
    DesignProblem {
        ops: &inst.ops,
        channel: &inst.channel,
        symbols: &inst.symbols,
        config: cfg,
    }
}

fn rel_err(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).norm() / b.norm()
}

#[test]
fn a_matrix_trivial_cases() {
    let inst = random_instance(&shape(2, 2, 2, 2, 2, 2, 1, 2), 0.1, 0.01, 1).unwrap();
    let len = inst.dims.echo_len();
    let zero = CVector::zeros(inst.dims.beam_len());
    assert_eq!(
        clutter_noise_matrix(&zero, &inst.ops, 0.3),
        CMatrix::identity(len, len) * C64::new(0.3, 0.0)
    );
    let mut single = no_clutter(inst.clone());
    single.ops.clutter.push(inst.ops.clutter[0].clone());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = random_complex(inst.dims.beam_len(), &mut rng);
    let tw = &single.ops.clutter[0].op * &w;
    let expected = &tw * tw.adjoint() + CMatrix::identity(len, len);
    assert!(rel_err(&clutter_noise_matrix(&w, &single.ops, 1.0), &expected) < 1e-14);
}

#[test]
fn a_matrix_matches_dense_covariance_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..5 {
        let inst = random_instance(&shape(3, 3, 3, 3, 2, 2, 1, 3), 0.2, 0.01, seed).unwrap();
        let beams = BeamformerSet {
            mats: (0..3)
                .map(|_| CMatrix::from_fn(3, 2, |_, _| complex_normal(&mut rng)))
                .collect(),
        };
        let w = beams.stack();
        let xbar = build_xbar(&beams.mats, &inst.symbols, &inst.dims).unwrap();
        let len = inst.dims.echo_len();
        let mut dense = CMatrix::identity(len, len) * C64::new(0.05, 0.0);
        for cell in &inst.factors {
            let j = lifted_shift(cell.offset, 3, 2, 3).map(|v| C64::new(v, 0.0));
            let jx = &j * &xbar;
            dense += &jx * cell.dense(inst.dims.stacked_len()) * jx.adjoint();
        }
        assert!(rel_err(&clutter_noise_matrix(&w, &inst.ops, 0.05), &dense) < 1e-9);
    }
}

#[test]
fn filter_without_clutter_is_matched() {
    let inst = no_clutter(random_instance(&shape(2, 3, 2, 3, 2, 2, 0, 1), 0.1, 0.01, 4).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = random_complex(inst.dims.beam_len(), &mut rng);
    let sigma = 0.25;
    let sol = optimal_receive_filter(&w, &inst.ops, sigma).unwrap();
    let x = inst.ops.target_echo(&w);
    assert!((sol.sinr - x.norm_squared() / sigma).abs() < 1e-12 * sol.sinr);
    // w_r = (x / σ) / (||x||^2 / σ) = x / ||x||^2
    let expected = &x / C64::new(x.norm_squared(), 0.0);
    assert!((&sol.filter - &expected).norm() < 1e-12 * expected.norm());
}

#[test]
fn filter_attains_generalized_eigenvalue_and_dominates() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..10 {
        let inst = random_instance(&shape(2, 3, 3, 3, 3, 2, 1, 4), 0.3, 0.01, seed).unwrap();
        let w = random_complex(inst.dims.beam_len(), &mut rng);
        let sigma = 0.1;
        let sol = optimal_receive_filter(&w, &inst.ops, sigma).unwrap();
        let a = clutter_noise_matrix(&w, &inst.ops, sigma);
        let oracle = max_generalized_eigenvalue(&inst.ops.target_echo(&w), &a).unwrap();
        assert!(
            (sol.sinr - oracle).abs() < 1e-8 * oracle,
            "{} vs {oracle}",
            sol.sinr
        );
        assert!((radar_sinr(&w, &sol.filter, &inst.ops, sigma) - sol.sinr).abs() < 1e-9 * sol.sinr);
        for _ in 0..100 {
            let wr = random_complex(inst.dims.echo_len(), &mut rng);
            assert!(radar_sinr(&w, &wr, &inst.ops, sigma) <= sol.sinr * (1.0 + 1e-12));
        }
    }
}

#[test]
fn radar_sinr_trivial_cases() {
    let inst = random_instance(&shape(2, 2, 2, 2, 2, 1, 1, 2), 0.1, 0.01, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let w = random_complex(inst.dims.beam_len(), &mut rng);
    let x = inst.ops.target_echo(&w);
    // project a random filter onto the orthogonal complement of x
    let r = random_complex(x.len(), &mut rng);
    let perp = &r - &x * (x.dotc(&r) / C64::new(x.norm_squared(), 0.0));
    assert!(radar_sinr(&w, &perp, &inst.ops, 0.1) < 1e-24);
    assert_eq!(
        radar_sinr(&w, &CVector::zeros(x.len()), &inst.ops, 0.1),
        0.0
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn radar_sinr_is_scale_invariant(seed in 0u64..1000, re in -3.0f64..3.0, im in -3.0f64..3.0) {
        prop_assume!(re.abs() + im.abs() > 1e-3);
        let inst = random_instance(&shape(2, 2, 2, 2, 2, 2, 1, 2), 0.1, 0.01, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_complex(inst.dims.beam_len(), &mut rng);
        let wr = random_complex(inst.dims.echo_len(), &mut rng);
        let a = radar_sinr(&w, &wr, &inst.ops, 0.1);
        let b = radar_sinr(&w, &(&wr * C64::new(re, im)), &inst.ops, 0.1);
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1e-300));
    }

    #[test]
    fn comm_constraints_ignore_column_phases(seed in 0u64..1000, phase in 0.0f64..6.3) {
        let inst = random_instance(&shape(2, 2, 2, 3, 2, 3, 0, 1), 0.1, 0.01, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let beams = BeamformerSet {
            mats: (0..2).map(|_| CMatrix::from_fn(3, 3, |_, _| complex_normal(&mut rng))).collect(),
        };
        let mut rotated = beams.clone();
        for m in &mut rotated.mats {
            for (k, mut col) in m.column_iter_mut().enumerate() {
                col *= C64::from_polar(1.0, phase * (k + 1) as f64);
            }
        }
        let a = sinr_table(&beams.mats, &inst.channel);
        let b = sinr_table(&rotated.mats, &inst.channel);
        for (ra, rb) in a.iter().zip(&b) {
            for (x, y) in ra.iter().zip(rb) {
                prop_assert!((x - y).abs() <= 1e-10 * x);
            }
        }
    }
}

#[test]
fn surrogate_without_clutter() {
    let inst = no_clutter(random_instance(&shape(2, 2, 2, 2, 2, 2, 0, 1), 0.1, 0.01, 7).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = random_complex(inst.dims.beam_len(), &mut rng);
    let sigma = 0.2;
    let s = surrogate_params(&w, &inst.ops, sigma).unwrap();
    assert_eq!(s.u, CMatrix::zeros(w.len(), w.len()));
    let expected = inst.ops.t0.ad_mul(&(&inst.ops.t0 * &w)) * C64::new(2.0 / sigma, 0.0);
    assert!((&s.b - &expected).norm() < 1e-12 * expected.norm());
}

#[test]
fn surrogate_majorizes_and_touches() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..5 {
        let inst = random_instance(&shape(2, 3, 2, 3, 2, 2, 1, 3), 0.3, 0.01, seed).unwrap();
        let sigma = 0.1;
        let wt = random_complex(inst.dims.beam_len(), &mut rng);
        let s = surrogate_params(&wt, &inst.ops, sigma).unwrap();
        let at_t = optimal_receive_filter(&wt, &inst.ops, sigma).unwrap().sinr;
        assert!((s.value(&wt) + at_t).abs() < 1e-8 * at_t.max(1.0));
        for _ in 0..100 {
            let scale = 10f64.powf(rng.gen_range(-1.0..1.0));
            let w = random_complex(wt.len(), &mut rng) * C64::new(scale, 0.0);
            let truth = -optimal_receive_filter(&w, &inst.ops, sigma).unwrap().sinr;
            assert!(
                truth - s.value(&w) < 1e-8,
                "violation {}",
                truth - s.value(&w)
            );
        }
        // the gap to the true objective at w_t does not depend on the
        // variable part: evaluate the constant through w_t and 2 w_t
        let two = &wt * C64::new(2.0, 0.0);
        let quad = wt.dotc(&(&s.u * &wt)).re;
        let lin = s.b.dotc(&wt).re;
        assert!(
            (s.variable_part(&two) - (4.0 * quad - 2.0 * lin)).abs()
                < 1e-9 * quad.abs().max(lin.abs())
        );
        assert!(
            (s.value(&wt) - s.variable_part(&wt) - s.constant).abs() < 1e-12 * s.constant.max(1.0)
        );
        // U Hermitian and PSD
        assert!((&s.u - s.u.adjoint()).norm() <= 1e-12 * s.u.norm());
        let tr: f64 = (0..s.u.nrows()).map(|i| s.u[(i, i)].re).sum();
        let eig = SymmetricEigen::new(s.u.clone());
        assert!(eig.eigenvalues.min() >= -1e-10 * tr);
    }
}

#[test]
fn objective_factor_reproduces_u() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = CMatrix::from_fn(5, 2, |_, _| complex_normal(&mut rng));
    let u = &x * x.adjoint();
    let c = objective_factor(&u, 1e-12).unwrap();
    assert!(rel_err(&(c.adjoint() * &c), &u) < 1e-10);
    assert!(objective_factor(&CMatrix::zeros(3, 3), 1e-12).is_none());
}

#[test]
fn feasibility_only_subproblem_returns_feasible_point() {
    let inst = random_instance(&shape(2, 2, 2, 3, 2, 2, 0, 1), 0.1, 0.01, 10).unwrap();
    let cfg = config_for(&inst, Some(1.0), 10.0);
    let p = problem(&inst, &cfg);
    let init = initialize(&inst.channel, &inst.symbols, &cfg).unwrap();
    let w0 = fit_realized_power(&init.beams, &inst.symbols, &cfg.per_subcarrier_power)
        .unwrap()
        .stack();
    let nb = inst.dims.beam_len();
    let zero = Surrogate {
        u: CMatrix::zeros(nb, nb),
        b: CVector::zeros(nb),
        constant: 0.0,
    };
    let sol = solve_subproblem(&zero, &p, &w0).unwrap();
    assert!(p.max_violation(&sol.w).unwrap() <= 1e-6);
}

/// `max Re(b^H w)` s.t. `||G w|| <= sqrt(P)` has `w = sqrt(P) Q^{-1} b / sqrt(b^H Q^{-1} b)`
/// with `Q = G^H G`.
#[test]
fn single_user_power_bound_matches_kkt() {
    let inst = no_clutter(random_instance(&shape(1, 4, 2, 3, 2, 1, 0, 1), 0.1, 0.01, 11).unwrap());
    let power = 5.0;
    let cfg = config_for(&inst, None, power);
    let p = problem(&inst, &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let wt = random_complex(inst.dims.beam_len(), &mut rng);
    let s = surrogate_params(&wt, &inst.ops, cfg.noise_radar).unwrap();
    let sol = solve_subproblem(&s, &p, &wt).unwrap();
    let g = power_map(0, &inst.symbols.symbols[0], 3, 3);
    let q = g.adjoint() * &g;
    let qinv_b = q.clone().try_inverse().unwrap() * &s.b;
    let scale = (power / s.b.dotc(&qinv_b).re).sqrt();
    let expected = qinv_b * C64::new(scale, 0.0);
    assert!(
        (&sol.w - &expected).norm() < 1e-6 * expected.norm(),
        "{} vs {}",
        sol.w,
        expected
    );
    // unit-modulus symbols make Q a multiple of I, so w is collinear with b
    let cos = s.b.dotc(&sol.w).norm() / (s.b.norm() * sol.w.norm());
    assert!((cos - 1.0).abs() < 1e-8);
}

#[test]
fn subproblem_does_not_exceed_value_at_anchor() {
    let inst = random_instance(&shape(2, 2, 2, 3, 2, 2, 1, 3), 0.2, 0.01, 12).unwrap();
    let cfg = config_for(&inst, Some(2.0), 10.0);
    let p = problem(&inst, &cfg);
    let init = initialize(&inst.channel, &inst.symbols, &cfg).unwrap();
    let w0 = fit_realized_power(&init.beams, &inst.symbols, &cfg.per_subcarrier_power)
        .unwrap()
        .stack();
    let s = surrogate_params(&w0, &inst.ops, cfg.noise_radar).unwrap();
    let sol = solve_subproblem(&s, &p, &w0).unwrap();
    assert!(sol.objective <= s.variable_part(&w0) + 1e-7 * s.variable_part(&w0).abs());
    assert!(p.max_violation(&sol.w).unwrap() <= 1e-6);
}

#[test]
fn single_user_balancing_is_mrt_at_full_power() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let h = random_complex(4, &mut rng);
    let (cap, noise) = (2.0, 0.05);
    let b = balance_subcarrier(
        1,
        &[h.clone()],
        noise,
        cap,
        &CMatrix::identity(4, 4),
        0.01,
        &SolveOptions::default(),
    )
    .unwrap();
    let expected = cap * h.norm_squared() / noise;
    assert!((b.sinr - expected).abs() < 1e-6 * expected);
    let w = b.w.column(0).into_owned();
    assert!((h.dotc(&w).norm() / (h.norm() * w.norm()) - 1.0).abs() < 1e-8);
    assert!((b.w.norm_squared() - cap).abs() < 1e-6 * cap);
}

#[test]
fn orthogonal_users_split_power_evenly() {
    let z = C64::new(0.0, 0.0);
    let h1 = CVector::from_vec(vec![C64::new(1.0, 0.0), z, z]);
    let h2 = CVector::from_vec(vec![z, C64::new(0.0, 1.0), z]);
    let (cap, noise) = (4.0, 0.1);
    let b = balance_subcarrier(
        1,
        &[h1, h2],
        noise,
        cap,
        &CMatrix::identity(6, 6),
        0.01,
        &SolveOptions::default(),
    )
    .unwrap();
    let s1 = comm_sinr(
        &b.w,
        &CVector::from_column_slice(&[C64::new(1.0, 0.0), z, z]),
        0,
        noise,
    );
    // half the budget each, no interference
    let expected = 0.5 * cap / noise;
    assert!((s1 - expected).abs() < 1e-5 * expected);
    assert!((b.sinr - expected).abs() < 1e-5 * expected);
    for k in 0..2 {
        assert!((b.w.column(k).norm_squared() - 0.5 * cap).abs() < 1e-5 * cap);
    }
}

#[test]
fn balanced_start_meets_power_with_equality() {
    for seed in 0..5 {
        let inst = random_instance(&shape(3, 4, 2, 4, 2, 3, 0, 1), 0.1, 0.01, seed).unwrap();
        for rule in [InitPowerRule::PerSlot, InitPowerRule::Literal] {
            let cfg = OptimizerConfig {
                init_power_rule: rule,
                ..config_for(&inst, Some(1.0), 20.0)
            };
            let init = initialize(&inst.channel, &inst.symbols, &cfg).unwrap();
            let cap = match rule {
                InitPowerRule::PerSlot => 20.0 / 4.0,
                InitPowerRule::Literal => 20.0 / 16.0,
            };
            for (b, w) in init.balanced.iter().zip(&init.beams.mats) {
                assert!((w.norm_squared() - cap).abs() <= 1e-6 * cap);
                assert!(b.sinr > 0.0);
            }
        }
    }
}

#[test]
fn run_descends_and_stays_feasible() {
    for seed in 0..3 {
        let inst = random_instance(&shape(2, 3, 2, 3, 2, 2, 1, 4), 0.5, 0.01, seed).unwrap();
        let cfg = config_for(&inst, Some(3.0), 10.0);
        let p = problem(&inst, &cfg);
        let res = run(&p).unwrap();
        for pair in res.trace.windows(2) {
            assert!(pair[1].objective <= pair[0].objective, "{pair:?}");
        }
        assert!(res.radar_sinr >= res.initial_radar_sinr);
        for row in &res.comm_sinr {
            for s in row {
                assert!(to_db(*s) >= to_db(3.0) - 1e-3);
            }
        }
        for (pw, cap) in res.realized_power.iter().zip(&cfg.per_subcarrier_power) {
            assert!(*pw <= cap * (1.0 + 1e-6));
        }
        let filt = optimal_receive_filter(&res.w, &inst.ops, cfg.noise_radar).unwrap();
        assert!((filt.sinr - res.radar_sinr).abs() < 1e-12 * filt.sinr);
    }
}

#[test]
fn relaxing_the_sinr_target_does_not_hurt() {
    for seed in 0..3 {
        let inst = random_instance(&shape(2, 3, 2, 3, 2, 2, 1, 4), 0.5, 0.01, 20 + seed).unwrap();
        let tight = config_for(&inst, Some(10.0), 10.0);
        let loose = config_for(&inst, None, 10.0);
        let a = run(&problem(&inst, &tight)).unwrap();
        let b = run(&problem(&inst, &loose)).unwrap();
        assert!(
            b.radar_sinr >= a.radar_sinr * (1.0 - 1e-6),
            "{} < {}",
            b.radar_sinr,
            a.radar_sinr
        );
    }
}

#[test]
fn unattainable_target_names_bottleneck() {
    let inst = random_instance(&shape(2, 2, 2, 2, 2, 2, 0, 1), 0.1, 0.01, 30).unwrap();
    let cfg = config_for(&inst, Some(1e6), 1.0);
    match run(&problem(&inst, &cfg)) {
        Err(DfrcError::Infeasible {
            subcarrier,
            user,
            achieved_db,
            required_db,
        }) => {
            assert!((1..=2).contains(&subcarrier) && (1..=2).contains(&user));
            assert!(achieved_db < required_db);
        }
        other => panic!("expected infeasibility, got {other:?}"),
    }
}

#[test]
fn zero_target_is_degenerate() {
    let mut inst = random_instance(&shape(1, 2, 2, 2, 2, 1, 0, 1), 0.1, 0.01, 31).unwrap();
    inst.ops.t0.fill(C64::new(0.0, 0.0));
    let cfg = config_for(&inst, Some(1.0), 1.0);
    assert!(matches!(
        run(&problem(&inst, &cfg)),
        Err(DfrcError::DegenerateDesign(_))
    ));
}

#[test]
fn report_serializes_complex_as_pairs() {
    let inst = random_instance(&shape(1, 2, 2, 2, 2, 1, 0, 1), 0.1, 0.01, 32).unwrap();
    let cfg = config_for(&inst, Some(1.0), 1.0);
    let res = run(&problem(&inst, &cfg)).unwrap();
    let json: serde_json::Value = serde_json::to_value(res.report()).unwrap();
    let first = &json["w"][0];
    assert_eq!(first.as_array().unwrap().len(), 2);
    assert!((first[0].as_f64().unwrap() - res.w[0].re).abs() < 1e-15);
    let mut buf = Vec::new();
    write_trace_csv(&res.trace, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("iter,objective,max_violation\n"));
    assert_eq!(text.lines().count(), res.trace.len() + 1);
}

#[test]
fn config_validation() {
    let mut cfg = OptimizerConfig {
        per_subcarrier_power: vec![1.0],
        ..OptimizerConfig::default()
    };
    assert!(cfg.validate(1).is_ok());
    assert!(cfg.validate(2).is_err());
    cfg.comm_sinr_threshold_linear = Some(0.0);
    assert!(cfg.validate(1).is_err());
    cfg.comm_sinr_threshold_linear = None;
    cfg.noise_radar = 0.0;
    assert!(cfg.validate(1).is_err());
}
