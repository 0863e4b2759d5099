use std::f64::consts::{PI, TAU};

use derfdd_core::control::{abc_to_dq, dq_to_abc};
use derfdd_core::plant::SimConfig;
use derfdd_core::{CircuitParams, Controller, ControllerGains, Plant, ScenarioSchedule, ThreePhase};
use proptest::prelude::*;

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

proptest! {
    #[test]
    fn park_round_trip(a in -500.0f64..500.0, b in -500.0f64..500.0, theta in -10.0f64..10.0) {
        let x = ThreePhase::new(a, b, -a - b);
        let (d, q) = abc_to_dq(x, theta);
        prop_assert!((dq_to_abc(d, q, theta) - x).max_abs() < 1e-9);
        let back = abc_to_dq(dq_to_abc(d, q, theta), theta);
        prop_assert!((back.0 - d).abs() < 1e-9 && (back.1 - q).abs() < 1e-9);
    }

    #[test]
    fn zero_sequence_is_invisible(z in -100.0f64..100.0, theta in 0.0f64..TAU) {
        let (d, q) = abc_to_dq(ThreePhase::splat(z), theta);
        prop_assert!(d.abs() < 1e-9 && q.abs() < 1e-9);
    }

    #[test]
    fn command_is_finite_and_bounded(
        ia in -100.0f64..100.0, ib in -100.0f64..100.0, ic in -100.0f64..100.0,
        va in -600.0f64..600.0, vb in -600.0f64..600.0, vc in -600.0f64..600.0,
        steps in 1usize..50,
    ) {
        let p = CircuitParams::default();
        let mut c = Controller::new(ControllerGains::default(), &p);
        for _ in 0..steps {
            let out = c.step(ThreePhase::new(ia, ib, ic), ThreePhase::new(va, vb, vc), 5e-6);
            prop_assert!(out.m.is_finite() && out.m.max_abs() <= 1.0);
        }
    }
}

/// Drives the PLL with an ideal grid whose frequency jumps by `df` at `t_step`
/// and returns the worst phase error after `settle`.
fn pll_worst_error(df: f64, t_step: f64, settle: f64, horizon: f64) -> f64 {
    let p = CircuitParams::default();
    let mut c = Controller::new(ControllerGains::default(), &p);
    let dt = 5e-6;
    let n = (horizon / dt).round() as usize;
    let mut phase = 0.0;
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let t = k as f64 * dt;
        c.pll_step(ThreePhase::balanced(p.v_phase_peak(), phase), dt);
        let w = p.omega() + if t >= t_step { TAU * df } else { 0.0 };
        phase += w * dt;
        if t >= settle {
            worst = worst.max(wrap(c.state.pll_theta - phase).abs());
        }
    }
    worst
}

#[test]
fn pll_stays_locked_at_nominal_frequency() {
    let e = pll_worst_error(0.0, f64::INFINITY, 0.0, 1.0);
    assert!(e < 0.01, "phase error {e}");
}

#[test]
fn pll_relocks_after_frequency_step() {
    let e = pll_worst_error(1.0, 0.5, 0.7, 1.5);
    assert!(e < 0.01, "phase error {e}");
}

#[test]
fn current_loop_tracks_reference_with_low_distortion() {
    let p = CircuitParams::default();
    let gains = ControllerGains::default();
    let per_cycle = 3000;
    let sim = SimConfig { sample_period: 1.0 / p.f_grid / per_cycle as f64, ..SimConfig::default() };
    let duration = 0.2;
    let mut plant = Plant::new(p, sim, ScenarioSchedule::normal(duration).unwrap(), 0).unwrap();
    let mut ctrl = Controller::new(gains, &p);
    let n = sim.samples_for(duration);
    let settle = sim.samples_for(0.1);
    let mut last_cycle = Vec::new();
    for k in 0..n {
        let m = plant.measure().unwrap();
        if k >= settle {
            let (d, q) = abc_to_dq(m.i_g, ctrl.state.pll_theta);
            assert!((d - gains.i_ref_d).abs() < 0.02 * gains.i_ref_d, "t = {}: i_d = {d}", m.t);
            assert!(q.abs() < 0.02 * gains.i_ref_d, "t = {}: i_q = {q}", m.t);
        }
        if k >= n - per_cycle {
            last_cycle.push(m.i_g.a);
        }
        let out = ctrl.step(m.i_l, m.v_pcc, sim.sample_period);
        plant.advance(out.m).unwrap();
    }
    let len = last_cycle.len() as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (k, x) in last_cycle.iter().enumerate() {
        let a = TAU * k as f64 / len;
        re += x * a.cos();
        im += x * a.sin();
    }
    let fund_rms_sq = 2.0 * (re * re + im * im) / (len * len);
    let total_rms_sq = last_cycle.iter().map(|x| x * x).sum::<f64>() / len;
    let thd = ((total_rms_sq - fund_rms_sq).max(0.0) / fund_rms_sq).sqrt();
    assert!(thd < 0.01, "THD {thd}");
}
