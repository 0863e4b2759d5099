//! Grid-connected inverter simulation with short-circuit fault injection,
//! dataset generation, and the integrated fault diagnosis / fault-tolerant
//! control loop built on [`derfdd_ml`].
//!
//! Layering, bottom up:
//!
//! * [`phase`], [`circuit`]: three-phase signals and the LCL filter model.
//! * [`fault`]: fault classes, schedules and the PCC network solve.
//! * [`control`]: PLL and dq current controller (the conventional baseline).
//! * [`plant`], [`dataset`]: sampled closed-loop runs and supervised windows.
//! * [`models`], [`ftc`]: training glue and the diagnosis / correction loop.

pub mod circuit;
pub mod config;
pub mod control;
pub mod dataset;
mod error;
pub mod eval;
pub mod fault;
pub mod ftc;
pub mod models;
pub mod phase;
pub mod pipeline;
pub mod plant;
pub mod plot;

pub use circuit::{CircuitParams, CircuitState, InverterModel};
pub use control::{abc_to_dq, dq_to_abc, Controller, ControllerGains};
pub use dataset::{Dataset, PerUnitBases, RecordedTrace};
pub use error::{Error, Result};
pub use fault::{FaultClass, FaultSpec, Scenario, ScenarioSchedule};
pub use ftc::{ftc_init, ftc_step, run_closed_loop, FtcConfig, FtcModels, FtcState};
pub use phase::ThreePhase;
pub use plant::{Plant, SimConfig};
