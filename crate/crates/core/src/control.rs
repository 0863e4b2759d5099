//! Conventional controller: SRF-PLL plus dq-frame PI current control with
//! PCC voltage feedforward.
//!
//! The grid-current setpoint is tracked through the inverter-side inductor
//! current: the filter capacitor current `j w C v_pcc` is added to the
//! setpoint and the PI loop closes on `i_l`. Closing the loop directly on
//! the grid-side current excites the lightly damped LCL resonance at the
//! default gains.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::phase::PHASE_SHIFT;
use crate::{CircuitParams, Error, Result, ThreePhase};

/// Amplitude-invariant Park transform. A balanced cosine set at angle
/// `theta` with amplitude 1 maps to `(1, 0)`.
pub fn abc_to_dq(x: ThreePhase, theta: f64) -> (f64, f64) {
    let (s0, c0) = theta.sin_cos();
    let (s1, c1) = (theta - PHASE_SHIFT).sin_cos();
    let (s2, c2) = (theta + PHASE_SHIFT).sin_cos();
    let d = 2.0 / 3.0 * (x.a * c0 + x.b * c1 + x.c * c2);
    let q = -2.0 / 3.0 * (x.a * s0 + x.b * s1 + x.c * s2);
    (d, q)
}

/// Inverse of [`abc_to_dq`] for zero-sum signals.
pub fn dq_to_abc(d: f64, q: f64, theta: f64) -> ThreePhase {
    let at = |angle: f64| {
        let (s, c) = angle.sin_cos();
        d * c - q * s
    };
    ThreePhase::new(at(theta), at(theta - PHASE_SHIFT), at(theta + PHASE_SHIFT))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerGains {
    pub pll_kp: f64,
    pub pll_ki: f64,
    pub pi_kp: f64,
    pub pi_ki: f64,
    /// Grid current setpoint in the PLL frame, amps.
    pub i_ref_d: f64,
    pub i_ref_q: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        ControllerGains { pll_kp: 50.0, pll_ki: 1000.0, pi_kp: 2.0, pi_ki: 400.0, i_ref_d: 10.0, i_ref_q: 0.0 }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<()> {
        let all = [self.pll_kp, self.pll_ki, self.pi_kp, self.pi_ki, self.i_ref_d, self.i_ref_q];
        if all.iter().any(|v| !v.is_finite()) || all[..4].iter().any(|&v| v < 0.0) {
            return Err(Error::Config(format!("controller gains must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }

    pub fn i_ref_magnitude(&self) -> f64 {
        self.i_ref_d.hypot(self.i_ref_q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    /// Wrapped to `[0, 2 pi)`.
    pub pll_theta: f64,
    pub pll_omega: f64,
    pub pll_integral: f64,
    pub pi_integral: (f64, f64),
    pub i_ref_dq: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    /// Modulation index per phase, in `[-1, 1]`.
    pub m: ThreePhase,
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    gains: ControllerGains,
    omega0: f64,
    /// Nominal phase peak, used to normalize the PLL error to per-unit.
    v_norm: f64,
    vdc: f64,
    /// `w0 * C`, for the capacitor current compensation.
    wc: f64,
    pub state: ControllerState,
}

impl Controller {
    /// PLL locked at angle 0 and nominal frequency, integrators empty.
    pub fn new(gains: ControllerGains, p: &CircuitParams) -> Self {
        Controller {
            gains,
            omega0: p.omega(),
            v_norm: p.v_phase_peak(),
            vdc: p.vdc,
            wc: p.omega() * p.c,
            state: ControllerState {
                pll_theta: 0.0,
                pll_omega: p.omega(),
                pll_integral: 0.0,
                pi_integral: (0.0, 0.0),
                i_ref_dq: (gains.i_ref_d, gains.i_ref_q),
            },
        }
    }

    pub fn gains(&self) -> &ControllerGains {
        &self.gains
    }

    /// One PLL update: PI on the per-unit q voltage sets the frequency, and
    /// the angle advances by `omega dt`.
    pub fn pll_step(&mut self, v_pcc: ThreePhase, dt: f64) {
        let s = &mut self.state;
        let (_, vq) = abc_to_dq(v_pcc, s.pll_theta);
        let e = vq / self.v_norm;
        s.pll_integral += e * dt;
        s.pll_omega = self.omega0 + self.gains.pll_kp * e + self.gains.pll_ki * s.pll_integral;
        s.pll_theta = (s.pll_theta + s.pll_omega * dt).rem_euclid(TAU);
    }

    /// PI regulation of the dq current at the present PLL angle; `i_inv` is
    /// the inverter-side inductor current. The integrators hold while the
    /// output saturates.
    pub fn pi_current_step(&mut self, i_inv: ThreePhase, v_pcc: ThreePhase, dt: f64) -> ControlOutput {
        let s = &mut self.state;
        let theta = s.pll_theta;
        let (vd, vq) = abc_to_dq(v_pcc, theta);
        let (ref_d, ref_q) = (s.i_ref_dq.0 - self.wc * vq, s.i_ref_dq.1 + self.wc * vd);
        let (id, iq) = abc_to_dq(i_inv, theta);
        let (ed, eq) = (ref_d - id, ref_q - iq);
        let int = (s.pi_integral.0 + ed * dt, s.pi_integral.1 + eq * dt);
        let ud = self.gains.pi_kp * ed + self.gains.pi_ki * int.0;
        let uq = self.gains.pi_kp * eq + self.gains.pi_ki * int.1;
        let raw = (v_pcc + dq_to_abc(ud, uq, theta)) * (2.0 / self.vdc);
        let saturated = raw.max_abs() > 1.0;
        if !saturated {
            s.pi_integral = int;
        }
        let m = raw.map(|x| if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) });
        ControlOutput { m, saturated }
    }

    /// Current control at the present angle, then the PLL advance.
    pub fn step(&mut self, i_inv: ThreePhase, v_pcc: ThreePhase, dt: f64) -> ControlOutput {
        let out = self.pi_current_step(i_inv, v_pcc, dt);
        self.pll_step(v_pcc, dt);
        out
    }
}
