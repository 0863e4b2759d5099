//! Run configuration: one TOML file with a section per module.
//!
//! A file may name a `preset` ("default" or "desk"); any keys it sets are
//! merged over that preset, so a config only lists what it changes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use derfdd_ml::TrainConfig;

use crate::dataset::{Excitation, PerUnitBases};
use crate::ftc::FtcConfig;
use crate::models::KnnSettings;
use crate::plant::SimConfig;
use crate::{CircuitParams, ControllerGains, Error, Result, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSettings {
    pub train_schedule: String,
    pub test_schedules: Vec<String>,
    pub lookback: usize,
    /// Window stride for predictor training.
    pub lstm_stride: usize,
    /// Window stride for classifier exemplars and evaluation.
    pub knn_stride: usize,
    /// Row stride for corrector samples.
    pub mlp_stride: usize,
    pub train_fraction: f64,
    pub chronological: bool,
    /// Amps; defaults to twice the current setpoint magnitude.
    pub current_base: Option<f64>,
    pub excitation: ExcitationSettings,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        DatasetSettings {
            train_schedule: "table1-train".into(),
            test_schedules: vec!["table1-test-s1".into(), "table1-test".into()],
            lookback: 20,
            lstm_stride: 20,
            knn_stride: 19,
            mlp_stride: 1,
            train_fraction: 0.7,
            chronological: false,
            current_base: None,
            excitation: ExcitationSettings::default(),
        }
    }
}

/// Command dither for the predictor and corrector training runs; the
/// classifier always uses the undisturbed run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExcitationSettings {
    pub amplitude: f64,
    pub rho: f64,
}

impl Default for ExcitationSettings {
    fn default() -> Self {
        ExcitationSettings { amplitude: 0.02, rho: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl TrainSettings {
    pub fn lstm() -> Self {
        Self::from_config(&TrainConfig::lstm_default())
    }

    pub fn mlp() -> Self {
        Self::from_config(&TrainConfig::mlp_default())
    }

    fn from_config(c: &TrainConfig) -> Self {
        TrainSettings { learning_rate: c.learning_rate, batch_size: c.batch_size, max_epochs: c.max_epochs, patience: c.patience }
    }

    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
            ..TrainConfig::lstm_default()
        }
    }
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self::lstm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Folds for classifier cross-validation in `eval`; 0 disables it.
    pub kfold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub out: PathBuf,
    pub seed: u64,
    pub circuit: CircuitParams,
    pub controller: ControllerGains,
    pub simulation: SimConfig,
    pub dataset: DatasetSettings,
    pub lstm: TrainSettings,
    pub mlp: TrainSettings,
    pub knn: KnnSettings,
    pub ftc: FtcConfig,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: "default".into(),
            out: PathBuf::from("derfdd-out"),
            seed: 1,
            circuit: CircuitParams::default(),
            controller: ControllerGains::default(),
            simulation: SimConfig::default(),
            dataset: DatasetSettings::default(),
            lstm: TrainSettings::lstm(),
            mlp: TrainSettings::mlp(),
            knn: KnnSettings::default(),
            ftc: FtcConfig::default(),
            eval: EvalSettings::default(),
        }
    }
}

pub const PRESETS: [&str; 2] = ["default", "desk"];

impl RunConfig {
    /// Smaller workload for a single desktop core: 50 us sampling, denser
    /// window strides at the lower rate, and a faster predictor schedule.
    pub fn desk() -> Self {
        let d = RunConfig::default();
        RunConfig {
            preset: "desk".into(),
            simulation: SimConfig { sample_period: 5e-5, ..d.simulation },
            dataset: DatasetSettings { lstm_stride: 4, knn_stride: 1, mlp_stride: 2, ..d.dataset },
            lstm: TrainSettings { learning_rate: 1e-3, max_epochs: 8, ..d.lstm },
            ..d
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected one of {PRESETS:?})"))),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        let name = match user.get("preset") {
            None => "default",
            Some(toml::Value::String(s)) => s.as_str(),
            Some(_) => return Err(Error::Config("`preset` must be a string".into())),
        };
        let base = toml::Table::try_from(Self::preset(name)?).map_err(|e| Error::Config(e.to_string()))?;
        let merged = merge(base, user);
        let cfg: RunConfig = merged.try_into().map_err(|e: toml::de::Error| Error::Config(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.circuit.validate()?;
        self.controller.validate()?;
        self.simulation.validate(&self.circuit)?;
        self.bases()?;
        let d = &self.dataset;
        if d.lookback == 0 || d.lstm_stride == 0 || d.knn_stride == 0 || d.mlp_stride == 0 {
            return Err(Error::Config("lookback and strides must be >= 1".into()));
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(Error::Config(format!("train_fraction must be in (0, 1), got {}", d.train_fraction)));
        }
        self.excitation().validate()?;
        Scenario::resolve(&d.train_schedule)?;
        if d.test_schedules.is_empty() {
            return Err(Error::Config("at least one test schedule is required".into()));
        }
        for s in &d.test_schedules {
            Scenario::resolve(s)?;
        }
        for (name, t) in [("lstm", &self.lstm), ("mlp", &self.mlp)] {
            t.to_config(0).validate().map_err(|e| Error::Config(format!("[{name}] {e}")))?;
        }
        let k = &self.knn;
        if k.k == 0 || k.window == 0 || k.window > d.lookback + 1 || k.cap < k.k {
            return Err(Error::Config(format!("knn needs k >= 1, 1 <= window <= lookback + 1 and cap >= k: {k:?}")));
        }
        if self.ftc.debounce == 0 {
            return Err(Error::Config("ftc.debounce must be >= 1".into()));
        }
        if self.eval.kfold == 1 {
            return Err(Error::Config("eval.kfold must be 0 or >= 2".into()));
        }
        Ok(())
    }

    pub fn bases(&self) -> Result<PerUnitBases> {
        PerUnitBases::new(&self.circuit, &self.controller, self.dataset.current_base)
    }

    pub fn excitation(&self) -> Excitation {
        let e = self.dataset.excitation;
        Excitation { amplitude: e.amplitude, rho: e.rho, seed: self.seed_for("excitation") }
    }

    /// Independent seed for one named random stream.
    pub fn seed_for(&self, stream: &str) -> u64 {
        derive_seed(self.seed, stream)
    }
}

fn merge(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                let merged = merge(std::mem::take(b), o);
                *b = merged;
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}

/// FNV-1a over the stream name, mixed with the master seed through the
/// splitmix64 finalizer.
pub fn derive_seed(master: u64, stream: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = master ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
