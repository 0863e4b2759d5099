//! Lumped model of the inverter, LCL filter and grid connection.
//!
//! Per phase, with the PCC voltage treated as an input:
//!
//! ```text
//! L1 di_l/dt = v_inv - v_c - R1 i_l
//! C  dv_c/dt = i_l - i_g
//! L2 di_g/dt = v_c - v_pcc - R2 i_g
//! ```

use serde::{Deserialize, Serialize};
use std::f64::consts::{SQRT_2, TAU};

use crate::{Error, Result, ThreePhase};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircuitParams {
    pub r1: f64,
    pub r2: f64,
    pub l1: f64,
    pub l2: f64,
    pub c: f64,
    pub vdc: f64,
    pub f_grid: f64,
    /// Grid line-to-line RMS voltage.
    pub v_ll_rms: f64,
    /// PWM carrier frequency.
    pub f_sw: f64,
    pub grid_series_r: f64,
    pub grid_series_l: f64,
}

impl Default for CircuitParams {
    fn default() -> Self {
        CircuitParams {
            r1: 0.5,
            r2: 0.5,
            l1: 0.09e-3,
            l2: 0.09e-3,
            c: 4.5e-6,
            vdc: 500.0,
            f_grid: 60.0,
            v_ll_rms: 220.0,
            f_sw: 1e4,
            grid_series_r: 0.1,
            grid_series_l: 0.05e-3,
        }
    }
}

impl CircuitParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [("r1", self.r1), ("r2", self.r2), ("grid_series_r", self.grid_series_r), ("grid_series_l", self.grid_series_l)];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("circuit.{name} = {v} must be finite and >= 0")));
            }
        }
        let positive = [
            ("l1", self.l1),
            ("l2", self.l2),
            ("c", self.c),
            ("vdc", self.vdc),
            ("f_grid", self.f_grid),
            ("v_ll_rms", self.v_ll_rms),
            ("f_sw", self.f_sw),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("circuit.{name} = {v} must be finite and > 0")));
            }
        }
        if self.series_impedance() <= 0.0 {
            return Err(Error::Config("grid series impedance must be nonzero".into()));
        }
        Ok(())
    }

    pub fn omega(&self) -> f64 {
        TAU * self.f_grid
    }

    /// Peak phase-to-neutral grid voltage, `v_ll_rms * sqrt(2) / sqrt(3)`.
    pub fn v_phase_peak(&self) -> f64 {
        self.v_ll_rms * SQRT_2 / 3f64.sqrt()
    }

    /// Magnitude of the grid series impedance at the nominal frequency. The
    /// fault network solve uses it as a real resistance.
    pub fn series_impedance(&self) -> f64 {
        self.grid_series_r.hypot(self.omega() * self.grid_series_l)
    }

    /// Ideal grid source voltage at time `t` (phase a peaks at t = 0).
    pub fn source_voltage(&self, t: f64) -> ThreePhase {
        ThreePhase::balanced(self.v_phase_peak(), self.omega() * t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CircuitState {
    /// Inverter-side inductor currents.
    pub i_l: ThreePhase,
    /// Filter capacitor voltages.
    pub v_c: ThreePhase,
    /// Grid-side inductor currents, positive towards the grid.
    pub i_g: ThreePhase,
    pub t: f64,
}

/// Time derivatives of the nine state entries.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LclDerivative {
    pub i_l: ThreePhase,
    pub v_c: ThreePhase,
    pub i_g: ThreePhase,
}

impl CircuitState {
    pub fn at_time(t: f64) -> Self {
        CircuitState { t, ..Default::default() }
    }

    pub fn is_finite(&self) -> bool {
        self.i_l.is_finite() && self.v_c.is_finite() && self.i_g.is_finite() && self.t.is_finite()
    }

    /// Energy held in the filter, in joules.
    pub fn stored_energy(&self, p: &CircuitParams) -> f64 {
        0.5 * (p.l1 * self.i_l.norm_sq() + p.c * self.v_c.norm_sq() + p.l2 * self.i_g.norm_sq())
    }

    fn offset(&self, d: &LclDerivative, h: f64) -> CircuitState {
        CircuitState { i_l: self.i_l + d.i_l * h, v_c: self.v_c + d.v_c * h, i_g: self.i_g + d.i_g * h, t: self.t + h }
    }
}

pub fn lcl_derivative(s: &CircuitState, v_inv: ThreePhase, v_pcc: ThreePhase, p: &CircuitParams) -> Result<LclDerivative> {
    if !(s.is_finite() && v_inv.is_finite() && v_pcc.is_finite()) {
        return Err(Error::Numeric(format!("non-finite circuit input at t = {}", s.t)));
    }
    Ok(LclDerivative {
        i_l: (v_inv - s.v_c - s.i_l * p.r1) * (1.0 / p.l1),
        v_c: (s.i_l - s.i_g) * (1.0 / p.c),
        i_g: (s.v_c - v_pcc - s.i_g * p.r2) * (1.0 / p.l2),
    })
}

/// One classical RK4 step with inputs re-evaluated at every stage.
///
/// `inputs(t, state)` returns `(v_inv, v_pcc)`; it may depend on the stage
/// state, which is how the algebraic PCC solve stays consistent.
pub fn step_rk4_with<F>(s: &CircuitState, dt: f64, p: &CircuitParams, mut inputs: F) -> Result<CircuitState>
where
    F: FnMut(f64, &CircuitState) -> Result<(ThreePhase, ThreePhase)>,
{
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Config(format!("integrator step {dt} must be > 0")));
    }
    let mut deriv = |st: &CircuitState| -> Result<LclDerivative> {
        let (v_inv, v_pcc) = inputs(st.t, st)?;
        lcl_derivative(st, v_inv, v_pcc, p)
    };
    let k1 = deriv(s)?;
    let k2 = deriv(&s.offset(&k1, dt / 2.0))?;
    let k3 = deriv(&s.offset(&k2, dt / 2.0))?;
    let k4 = deriv(&s.offset(&k3, dt))?;
    let w = dt / 6.0;
    let comb = |a: ThreePhase, b: ThreePhase, c: ThreePhase, d: ThreePhase| (a + (b + c) * 2.0 + d) * w;
    Ok(CircuitState {
        i_l: s.i_l + comb(k1.i_l, k2.i_l, k3.i_l, k4.i_l),
        v_c: s.v_c + comb(k1.v_c, k2.v_c, k3.v_c, k4.v_c),
        i_g: s.i_g + comb(k1.i_g, k2.i_g, k3.i_g, k4.i_g),
        t: s.t + dt,
    })
}

/// RK4 step with inputs held constant over the step.
pub fn step_rk4(s: &CircuitState, v_inv: ThreePhase, v_pcc: ThreePhase, dt: f64, p: &CircuitParams) -> Result<CircuitState> {
    step_rk4_with(s, dt, p, |_, _| Ok((v_inv, v_pcc)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InverterModel {
    #[default]
    Averaged,
    Spwm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverterOutput {
    pub v: ThreePhase,
    /// At least one modulation entry had to be clamped to +-1.
    pub saturated: bool,
}

fn clamp_modulation(m: ThreePhase) -> Result<(ThreePhase, bool)> {
    if !m.is_finite() {
        return Err(Error::Numeric(format!("non-finite modulation {m:?}")));
    }
    Ok((m.map(|x| x.clamp(-1.0, 1.0)), m.max_abs() > 1.0))
}

/// Switching-cycle average: `v = m * vdc / 2`.
pub fn averaged_inverter(m: ThreePhase, vdc: f64) -> Result<InverterOutput> {
    let (m, saturated) = clamp_modulation(m)?;
    Ok(InverterOutput { v: m * (vdc / 2.0), saturated })
}

/// Symmetric triangle in [-1, 1]: -1 at the start of each carrier period,
/// +1 halfway through.
pub fn carrier(t: f64, f_sw: f64) -> f64 {
    let x = (t * f_sw).rem_euclid(1.0);
    1.0 - 4.0 * (x - 0.5).abs()
}

/// Two-level sine-triangle PWM leg voltages.
pub fn spwm_inverter(m: ThreePhase, t: f64, vdc: f64, f_sw: f64) -> Result<InverterOutput> {
    let (m, saturated) = clamp_modulation(m)?;
    let tri = carrier(t, f_sw);
    let half = vdc / 2.0;
    Ok(InverterOutput { v: m.map(|x| if x >= tri { half } else { -half }), saturated })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let p = CircuitParams::default();
        p.validate().unwrap();
        assert!((p.v_phase_peak() - 179.629).abs() < 1e-3);
    }

    #[test]
    fn invalid_params_rejected() {
        for bad in [
            CircuitParams { r1: -0.1, ..Default::default() },
            CircuitParams { c: 0.0, ..Default::default() },
            CircuitParams { vdc: f64::NAN, ..Default::default() },
            CircuitParams { grid_series_r: 0.0, grid_series_l: 0.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn origin_is_an_equilibrium() {
        let p = CircuitParams::default();
        let d = lcl_derivative(&CircuitState::default(), ThreePhase::ZERO, ThreePhase::ZERO, &p).unwrap();
        assert_eq!(d, LclDerivative::default());
        let s = step_rk4(&CircuitState::default(), ThreePhase::ZERO, ThreePhase::ZERO, 1e-5, &p).unwrap();
        assert_eq!((s.i_l, s.v_c, s.i_g), (ThreePhase::ZERO, ThreePhase::ZERO, ThreePhase::ZERO));
    }

    #[test]
    fn single_inductor_current_term() {
        let p = CircuitParams::default();
        let s = CircuitState { i_l: ThreePhase::new(1.0, 0.0, 0.0), ..Default::default() };
        let d = lcl_derivative(&s, ThreePhase::ZERO, ThreePhase::ZERO, &p).unwrap();
        assert!((d.i_l.a + 5_555.555_555).abs() < 1e-3);
        assert!((d.v_c.a - 1.0 / 4.5e-6).abs() < 1e-6);
    }

    #[test]
    fn nonfinite_input_is_a_numeric_error() {
        let p = CircuitParams::default();
        let r = lcl_derivative(&CircuitState::default(), ThreePhase::new(f64::NAN, 0.0, 0.0), ThreePhase::ZERO, &p);
        assert!(matches!(r, Err(Error::Numeric(_))));
        assert!(matches!(step_rk4(&CircuitState::default(), ThreePhase::ZERO, ThreePhase::ZERO, 0.0, &p), Err(Error::Config(_))));
    }

    #[test]
    fn averaged_inverter_examples() {
        assert_eq!(averaged_inverter(ThreePhase::ZERO, 500.0).unwrap().v, ThreePhase::ZERO);
        let o = averaged_inverter(ThreePhase::new(1.0, -1.0, 0.0), 500.0).unwrap();
        assert_eq!((o.v, o.saturated), (ThreePhase::new(250.0, -250.0, 0.0), false));
        let o = averaged_inverter(ThreePhase::new(1.2, 0.0, 0.0), 500.0).unwrap();
        assert_eq!((o.v, o.saturated), (ThreePhase::new(250.0, 0.0, 0.0), true));
    }

    #[test]
    fn spwm_full_modulation_is_always_high() {
        for i in 0..1000 {
            let o = spwm_inverter(ThreePhase::splat(1.0), i as f64 * 3.7e-7, 500.0, 1e4).unwrap();
            assert_eq!(o.v, ThreePhase::splat(250.0));
        }
    }

    #[test]
    fn carrier_shape() {
        assert_eq!(carrier(0.0, 1e4), -1.0);
        assert!((carrier(0.5e-4, 1e4) - 1.0).abs() < 1e-9);
        assert!((carrier(0.25e-4, 1e4)).abs() < 1e-9);
    }
}
