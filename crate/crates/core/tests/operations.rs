//! Worked examples for each public operation, checked through the crate API.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use approx::assert_abs_diff_eq;
use gridsync::analysis::{
    decay_time_constant, settling_time, stability_classify, Stability, OSCILLATION_THRESHOLD,
};
use gridsync::frames::{clarke, park, phase_of, wrap_angle, AlphaBeta, Angle, Dq, ThreePhase};
use gridsync::kalman_sync::{
    build_kf_model, error_dynamics, kf_step, GridImpedance, KalmanState, KfVariant,
};
use gridsync::lqr::{
    build_plant, control_step, design_lqr, equilibrium, saturate, LclParams, LqrWeights,
    UnitConvention,
};
use gridsync::numerics::{
    eigvals, expm, kalman_steady_gain, lqr_gain, solve_dare, zoh_discretize, RealMatrix,
};
use gridsync::plant::inertia_for_frequency;
use gridsync::pll_sync::{pll_linearized_poles, pll_step, PllConfig, PllMode, PllState};
use gridsync::scenario::{run_scenario, ScenarioConfig, SyncMethod};
use gridsync::Error;
use nalgebra::{Matrix2, Matrix2x6, Vector6};

const TS: f64 = 1e-4;
const W: f64 = 100.0 * PI;

fn m(r: usize, c: usize, v: &[f64]) -> RealMatrix {
    RealMatrix::from_row_slice(r, c, v)
}

fn z2() -> GridImpedance {
    GridImpedance::from_polar(2.0, 70f64.to_radians())
}

#[test]
fn expm_of_rotation_generator() {
    let e = expm(&m(2, 2, &[0.0, -W, W, 0.0]), TS).unwrap();
    assert_abs_diff_eq!(e[(0, 0)], 0.9995066, epsilon = 1e-7);
    assert_abs_diff_eq!(e[(0, 1)], -0.0314108, epsilon = 1e-7);
    assert_abs_diff_eq!(e[(1, 0)], 0.0314108, epsilon = 1e-7);
    let a = m(3, 3, &[1.0, 2.0, 3.0, -4.0, 0.5, 0.0, 2.0, 2.0, -1.0]);
    assert_eq!(expm(&a, 0.0).unwrap(), RealMatrix::identity(3, 3));
}

#[test]
fn zoh_of_integrator_and_first_order_lag() {
    let (ad, bd) = zoh_discretize(&m(1, 1, &[0.0]), &m(1, 1, &[1.0]), 0.1).unwrap();
    assert_abs_diff_eq!(ad[(0, 0)], 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(bd[(0, 0)], 0.1, epsilon = 1e-15);
    let (ad, bd) = zoh_discretize(&m(1, 1, &[-1.0]), &m(1, 1, &[1.0]), 1.0).unwrap();
    assert_abs_diff_eq!(ad[(0, 0)], 0.3679, epsilon = 1e-4);
    assert_abs_diff_eq!(bd[(0, 0)], 0.6321, epsilon = 1e-4);
    let (_, bd) = zoh_discretize(&m(2, 2, &[0.0, -W, W, 0.0]), &m(2, 1, &[0.0, 0.0]), TS).unwrap();
    assert_eq!(bd, m(2, 1, &[0.0, 0.0]));
}

#[test]
fn eigenvalues_of_small_matrices() {
    let s = eigvals(&m(2, 2, &[0.0, -1.0, 1.0, 0.0])).unwrap();
    assert!(s
        .values()
        .iter()
        .all(|l| (l.norm() - 1.0).abs() < 1e-12 && l.re.abs() < 1e-12));
    let s = eigvals(&m(2, 2, &[0.5, 0.0, 0.0, 0.9])).unwrap().sorted();
    assert_abs_diff_eq!(s[0].re, 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(s[1].re, 0.9, epsilon = 1e-12);
}

#[test]
fn riccati_scalar_and_limits() {
    let one = m(1, 1, &[1.0]);
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    assert_abs_diff_eq!(
        solve_dare(&one, &one, &one, &one).unwrap()[(0, 0)],
        golden,
        epsilon = 1e-9
    );
    assert_abs_diff_eq!(
        lqr_gain(&one, &one, &one, &one).unwrap()[(0, 0)],
        golden - 1.0,
        epsilon = 1e-9
    );
    let zero = m(1, 1, &[0.0]);
    assert_abs_diff_eq!(
        solve_dare(&m(1, 1, &[0.5]), &one, &zero, &one).unwrap()[(0, 0)],
        0.0,
        epsilon = 1e-15
    );
    assert_abs_diff_eq!(
        lqr_gain(&m(1, 1, &[0.5]), &one, &zero, &one).unwrap()[(0, 0)],
        0.0,
        epsilon = 1e-15
    );
    let (k, p) = kalman_steady_gain(&one, &one, &one, &one).unwrap();
    assert_abs_diff_eq!(p[(0, 0)], golden, epsilon = 1e-9);
    assert_abs_diff_eq!(k[(0, 0)], golden - 1.0, epsilon = 1e-9);
}

#[test]
fn kalman_gain_vanishes_for_huge_measurement_noise() {
    let rot = expm(&m(2, 2, &[0.0, -W, W, 0.0]), TS).unwrap();
    let eye = RealMatrix::identity(2, 2);
    let (k, _) = kalman_steady_gain(&rot, &eye, &(&eye * 1e-6), &(&eye * 1e6)).unwrap();
    assert!(k.norm() < 1e-5, "{}", k.norm());
}

#[test]
fn frame_examples() {
    let ab = clarke(ThreePhase {
        a: 1.0,
        b: -0.5,
        c: -0.5,
    });
    assert_abs_diff_eq!(ab.alpha, 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(ab.beta, 0.0, epsilon = 1e-15);
    let h = 3f64.sqrt() / 2.0;
    let ab = clarke(ThreePhase {
        a: 0.0,
        b: h,
        c: -h,
    });
    assert_abs_diff_eq!(ab.beta, 1.0, epsilon = 1e-15);
    let d = park(AlphaBeta::new(0.0, 1.0), Angle::new(FRAC_PI_2));
    assert_abs_diff_eq!(d.d, 1.0, epsilon = 1e-15);
    let d = park(AlphaBeta::new(1.0, 0.0), Angle::new(FRAC_PI_2));
    assert_abs_diff_eq!(d.q, -1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(
        phase_of(AlphaBeta::new(-1.0, -1.0)).unwrap().radians(),
        -3.0 * FRAC_PI_4,
        epsilon = 1e-15
    );
    assert!(matches!(
        phase_of(AlphaBeta::ZERO),
        Err(Error::UndefinedAngle)
    ));
    assert_abs_diff_eq!(wrap_angle(3.0 * PI).radians(), -PI, epsilon = 1e-15);
    assert_abs_diff_eq!(
        wrap_angle(-9.0 * FRAC_PI_4).radians(),
        -FRAC_PI_4,
        epsilon = 1e-12
    );
}

#[test]
fn kf_model_matrices() {
    let mdl = build_kf_model(z2(), W, TS, 1e-6, Matrix2::identity(), KfVariant::Aaekf).unwrap();
    assert_abs_diff_eq!(mdl.ad[(0, 1)], -0.0314108, epsilon = 1e-7);
    assert_abs_diff_eq!(mdl.dd[(0, 0)], 0.6840, epsilon = 1e-4);
    assert_abs_diff_eq!(mdl.dd[(0, 1)], -1.8794, epsilon = 1e-4);
    assert_abs_diff_eq!(mdl.dd[(1, 0)], 1.8794, epsilon = 1e-4);
    let c = build_kf_model(z2(), W, TS, 1e-6, Matrix2::identity(), KfVariant::Caekf).unwrap();
    assert_eq!(c.dd, Matrix2::zeros());
}

#[test]
fn kf_variants_agree_without_current() {
    let a = build_kf_model(z2(), W, TS, 1e-6, Matrix2::identity(), KfVariant::Aaekf).unwrap();
    let c = build_kf_model(z2(), W, TS, 1e-6, Matrix2::identity(), KfVariant::Caekf).unwrap();
    let (mut sa, mut sc) = (KalmanState::flat_start(), KalmanState::flat_start());
    for k in 0..200 {
        let y = AlphaBeta::from_polar(1.0, W * TS * k as f64);
        let (na, pa) = kf_step(&a, &sa, y, AlphaBeta::ZERO).unwrap();
        let (nc, pc) = kf_step(&c, &sc, y, AlphaBeta::ZERO).unwrap();
        assert_eq!(pa, pc);
        (sa, sc) = (na, nc);
    }
}

#[test]
fn error_dynamics_limits() {
    let mdl = build_kf_model(z2(), W, TS, 1e-6, Matrix2::identity(), KfVariant::Aaekf).unwrap();
    let full = error_dynamics(&mdl, &Matrix2::identity()).unwrap();
    assert!(full.spectrum.spectral_radius() < 1e-12);
    let none = error_dynamics(&mdl, &Matrix2::zeros()).unwrap();
    assert_abs_diff_eq!(none.spectrum.spectral_radius(), 1.0, epsilon = 1e-12);
    let (k, _) = mdl.steady_gain().unwrap();
    let rho = error_dynamics(&mdl, &k).unwrap().spectrum.spectral_radius();
    assert!(rho > 0.99 && rho < 1.0, "{rho}");
}

#[test]
fn pll_examples() {
    let cfg = PllConfig::new(PllMode::Cpll, z2(), W);
    let poles = pll_linearized_poles(&cfg, 1.0).sorted();
    assert_abs_diff_eq!(poles[0].re, -(5.0 + 5f64.sqrt()) / 2.0, epsilon = 1e-9);
    assert_abs_diff_eq!(poles[1].re, -(5.0 - 5f64.sqrt()) / 2.0, epsilon = 1e-9);
    let mut p_only = cfg.clone();
    p_only.ki = 0.0;
    let poles = pll_linearized_poles(&p_only, 1.0).sorted();
    assert_abs_diff_eq!(poles[0].re, -5.0, epsilon = 1e-9);
    assert_abs_diff_eq!(poles[1].norm(), 0.0, epsilon = 1e-9);
    assert!(pll_linearized_poles(&cfg, 0.0)
        .values()
        .iter()
        .all(|l| l.norm() < 1e-9));

    let theta = Angle::new(0.7);
    let locked = PllState {
        theta_hat: theta,
        integrator: 0.0,
    };
    let v = AlphaBeta::from_polar(1.0, 0.7);
    let (next, _) = pll_step(&cfg, &locked, v, AlphaBeta::new(0.3, 0.4), TS);
    assert_abs_diff_eq!(next.integrator, 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(
        next.theta_hat.diff(theta).radians(),
        W * TS,
        epsilon = 1e-12
    );
    let (with_i, _) = pll_step(&cfg, &locked, v, AlphaBeta::new(0.3, 0.4), TS);
    let (without_i, _) = pll_step(&cfg, &locked, v, AlphaBeta::ZERO, TS);
    assert_eq!(with_i, without_i);
}

#[test]
fn lcl_plant_structure() {
    let p = LclParams::default();
    let pm = build_plant(&p, UnitConvention::Si);
    assert_eq!(pm.a[(0, 4)], -1.0 / p.l_f1);
    assert_eq!(pm.a[(2, 4)], 1.0 / p.l_f2);
    assert_abs_diff_eq!(p.z_base(), 415.0 * 415.0 / 110_000.0, epsilon = 1e-12);
    assert_abs_diff_eq!(p.x_f2_pu(), 0.1003, epsilon = 1e-4);
    assert_abs_diff_eq!(p.b_c_pu(), 0.0492, epsilon = 1e-4);
}

#[test]
fn equilibrium_examples() {
    let p = LclParams::default();
    let eq = equilibrium(&p, Dq::ZERO, Dq::ZERO).unwrap();
    assert_eq!(eq.x_bar, Vector6::zeros());
    assert_eq!(eq.u_bar, Dq::ZERO);
    let mut no_cap = p;
    no_cap.c_f = 1e-15;
    let i = Dq::from_polar(1.0, 30f64.to_radians());
    let eq = equilibrium(&no_cap, i, Dq::new(1.0, 0.0)).unwrap();
    assert_abs_diff_eq!(eq.x_bar[2], i.d, epsilon = 1e-9);
    assert_abs_diff_eq!(eq.x_bar[3], i.q, epsilon = 1e-9);
}

#[test]
fn designed_gains_are_dq_symmetric_and_shrink_with_input_cost() {
    let p = LclParams::default();
    for w in [LqrWeights::LOW_GAIN, LqrWeights::HIGH_GAIN] {
        let d = design_lqr(&p, w, TS, UnitConvention::PerUnit).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(d.k[(1, 2 * j)], -d.k[(0, 2 * j + 1)], epsilon = 1e-8);
            assert_abs_diff_eq!(d.k[(1, 2 * j + 1)], d.k[(0, 2 * j)], epsilon = 1e-8);
        }
        assert!(d.closed_loop.spectral_radius() < 1.0);
    }
    let norms: Vec<f64> = [1e-2, 1e2, 1e6, 1e10]
        .iter()
        .map(|&r| {
            design_lqr(
                &p,
                LqrWeights {
                    r,
                    ..LqrWeights::LOW_GAIN
                },
                TS,
                UnitConvention::PerUnit,
            )
            .unwrap()
            .k
            .norm()
        })
        .collect();
    assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
    assert!(norms[3] < 1e-4);
}

#[test]
fn control_law_examples() {
    let p = LclParams::default();
    let eq = equilibrium(&p, Dq::new(1.0, 0.0), Dq::new(1.0, 0.0)).unwrap();
    let k = design_lqr(&p, LqrWeights::HIGH_GAIN, TS, UnitConvention::PerUnit)
        .unwrap()
        .k_pu;
    assert_eq!(control_step(&k, &eq.x_bar, &eq, 10.0, true).u, eq.u_bar);
    let out = control_step(&Matrix2x6::zeros(), &Vector6::repeat(3.0), &eq, 10.0, true);
    assert_eq!(out.u, eq.u_bar);
    let s = saturate(Dq::new(1.2, 1.6), 1.0);
    assert!(s.saturated);
    assert_abs_diff_eq!(s.u.norm(), 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(s.u.q / s.u.d, 1.6 / 1.2, epsilon = 1e-12);
}

#[test]
fn inertia_scaling() {
    let h8 = inertia_for_frequency(8.0, 0.8, W).unwrap();
    assert_abs_diff_eq!(
        h8 / inertia_for_frequency(16.0, 0.8, W).unwrap(),
        4.0,
        epsilon = 1e-12
    );
    let ratio =
        inertia_for_frequency(3.0, 0.8, W).unwrap() / inertia_for_frequency(15.0, 0.8, W).unwrap();
    assert_abs_diff_eq!(ratio, 25.0, epsilon = 1e-12);
}

#[test]
fn metric_examples() {
    let t: Vec<f64> = (0..20_000).map(|k| k as f64 * TS).collect();
    assert_eq!(settling_time(&t, &vec![1.0; t.len()], 1.0, 0.02), Some(0.0));
    let tau = 0.01;
    let v: Vec<f64> = t.iter().map(|t| 1.0 - (-t / tau).exp()).collect();
    let ts = settling_time(&t, &v, 1.0, 0.02).unwrap();
    assert_abs_diff_eq!(ts, tau * 50f64.ln(), epsilon = 2.0 * TS);
    let grow: Vec<f64> = t.iter().map(|t| t.exp()).collect();
    assert_eq!(settling_time(&t, &grow, 1.0, 0.02), None);

    for tau in [0.088, 0.563] {
        let t: Vec<f64> = (0..40_000).map(|k| k as f64 * TS).collect();
        let v: Vec<f64> = t
            .iter()
            .map(|&t| (-t / tau).exp() * (2.0 * PI * 8.0 * t).sin())
            .collect();
        let est = decay_time_constant(&t, &v).unwrap().unwrap();
        assert!((est - tau).abs() < 0.05 * tau, "{est}");
    }
    let v: Vec<f64> = t.iter().map(|&t| (2.0 * PI * 8.0 * t).sin()).collect();
    assert_eq!(decay_time_constant(&t, &v).unwrap(), None);

    assert_eq!(
        stability_classify(&[0.0; 100], 0.0, false, OSCILLATION_THRESHOLD),
        Stability::Stable
    );
    assert_eq!(
        stability_classify(&[0.0; 100], 0.0, true, OSCILLATION_THRESHOLD),
        Stability::Diverged
    );
}

#[test]
fn scenario_rejects_zero_duration() {
    let mut c = ScenarioConfig::new(SyncMethod::AaekfLqr);
    c.simulation.duration = 0.0;
    assert!(matches!(run_scenario(&c), Err(Error::Config { .. })));
}
