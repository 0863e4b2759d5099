//! Sampled plant: circuit, grid source and fault network advanced one
//! sample period at a time under a held modulation command.

use serde::{Deserialize, Serialize};

use crate::circuit::{averaged_inverter, spwm_inverter, step_rk4_with, InverterModel};
use crate::fault::{FaultNetwork, FaultSpec};
use crate::{CircuitParams, CircuitState, Error, FaultClass, Result, ScenarioSchedule, ThreePhase};

/// Faults and labels are evaluated this far after a nominal sample instant
/// so that `k * period` landing a rounding error short of a schedule
/// boundary still counts as on the boundary.
pub const TIME_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Recording and control period, seconds.
    pub sample_period: f64,
    /// Integrator step; defaults to the largest even division of the sample
    /// period not above 5 us (averaged inverter) or 1 us (switched).
    pub integrator_dt: Option<f64>,
    pub inverter: InverterModel,
    /// Whole grid cycles simulated before t = 0 and not recorded.
    pub warmup_cycles: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { sample_period: 5e-6, integrator_dt: None, inverter: InverterModel::Averaged, warmup_cycles: 12 }
    }
}

impl SimConfig {
    pub fn integrator_step(&self) -> f64 {
        self.integrator_dt.unwrap_or_else(|| {
            let cap = match self.inverter {
                InverterModel::Averaged => 5e-6,
                InverterModel::Spwm => 1e-6,
            };
            let n = (self.sample_period / cap * (1.0 - 1e-9)).ceil().max(1.0);
            self.sample_period / n
        })
    }

    /// Integrator substeps per sample period.
    pub fn substeps(&self) -> Result<usize> {
        let dt = self.integrator_step();
        if !(self.sample_period.is_finite() && self.sample_period > 0.0 && dt.is_finite() && dt > 0.0) {
            return Err(Error::Config(format!("sample period {} and integrator step {dt} must be > 0", self.sample_period)));
        }
        let ratio = self.sample_period / dt;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio {
            return Err(Error::Config(format!(
                "sample period {} s must be an integer multiple (>= 1) of the integrator step {dt} s",
                self.sample_period
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self, p: &CircuitParams) -> Result<()> {
        self.substeps()?;
        if self.inverter == InverterModel::Spwm && self.integrator_step() > 1.0 / (10.0 * p.f_sw) * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "switched inverter needs an integrator step <= {} s",
                1.0 / (10.0 * p.f_sw)
            )));
        }
        Ok(())
    }

    /// Number of recorded samples for a horizon.
    pub fn samples_for(&self, duration: f64) -> usize {
        (duration / self.sample_period).round() as usize
    }

    pub fn warmup_samples(&self, p: &CircuitParams) -> usize {
        (self.warmup_cycles as f64 / p.f_grid / self.sample_period).round() as usize
    }
}

/// Signals available to a controller at one sample instant (SI units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub t: f64,
    pub v_src: ThreePhase,
    pub v_pcc: ThreePhase,
    pub i_l: ThreePhase,
    pub i_g: ThreePhase,
}

#[derive(Debug, Clone)]
pub struct Plant {
    params: CircuitParams,
    sim: SimConfig,
    substeps: usize,
    z_series: f64,
    schedule: ScenarioSchedule,
    networks: Vec<FaultNetwork>,
    state: CircuitState,
    /// Sample index; t = k * sample_period. Negative during warm-up.
    k: i64,
}

impl Plant {
    pub fn new(params: CircuitParams, sim: SimConfig, schedule: ScenarioSchedule, first_sample: i64) -> Result<Self> {
        params.validate()?;
        sim.validate(&params)?;
        let networks = schedule.faults().iter().map(FaultSpec::network).collect::<Result<Vec<_>>>()?;
        let t0 = first_sample as f64 * sim.sample_period;
        Ok(Plant {
            substeps: sim.substeps()?,
            z_series: params.series_impedance(),
            params,
            sim,
            schedule,
            networks,
            state: CircuitState::at_time(t0),
            k: first_sample,
        })
    }

    pub fn params(&self) -> &CircuitParams {
        &self.params
    }

    pub fn sim(&self) -> &SimConfig {
        &self.sim
    }

    pub fn schedule(&self) -> &ScenarioSchedule {
        &self.schedule
    }

    pub fn state(&self) -> &CircuitState {
        &self.state
    }

    pub fn sample_index(&self) -> i64 {
        self.k
    }

    pub fn time(&self) -> f64 {
        self.state.t
    }

    fn network_at(&self, t: f64) -> &FaultNetwork {
        let faults = self.schedule.faults();
        let tg = t + TIME_GUARD;
        let i = faults.partition_point(|f| f.t_start <= tg);
        match i.checked_sub(1) {
            Some(j) if tg < faults[j].t_end => &self.networks[j],
            _ => &FaultNetwork::EMPTY,
        }
    }

    /// Ground-truth class at the current sample (NORMAL during warm-up).
    pub fn label(&self) -> FaultClass {
        self.schedule.active_at(self.state.t + TIME_GUARD).map_or(FaultClass::Normal, |f| f.class)
    }

    pub fn measure(&self) -> Result<Measurement> {
        let t = self.state.t;
        let v_src = self.params.source_voltage(t);
        let sol = self.network_at(t).solve(v_src, self.state.i_g, self.z_series)?;
        Ok(Measurement { t, v_src, v_pcc: sol.v_pcc, i_l: self.state.i_l, i_g: self.state.i_g })
    }

    /// Applies modulation `m` for one sample period. Returns whether `m`
    /// had to be clamped.
    pub fn advance(&mut self, m: ThreePhase) -> Result<bool> {
        let p = self.params;
        let dt = self.sim.sample_period / self.substeps as f64;
        let avg = averaged_inverter(m, p.vdc)?;
        let mut state = self.state;
        for _ in 0..self.substeps {
            state = step_rk4_with(&state, dt, &p, |t, st| {
                let v_inv = match self.sim.inverter {
                    InverterModel::Averaged => avg.v,
                    InverterModel::Spwm => spwm_inverter(m, t, p.vdc, p.f_sw)?.v,
                };
                let v_src = p.source_voltage(t);
                let sol = self.network_at(t).solve(v_src, st.i_g, self.z_series)?;
                Ok((v_inv, sol.v_pcc))
            })
            .map_err(|e| self.diverged(e.to_string()))?;
        }
        self.k += 1;
        state.t = self.k as f64 * self.sim.sample_period;
        if !state.is_finite() {
            return Err(self.diverged("non-finite circuit state".into()));
        }
        self.state = state;
        Ok(avg.saturated)
    }

    fn diverged(&self, what: String) -> Error {
        Error::Diverged { t: self.state.t, step: self.k.max(0) as usize, what }
    }
}
