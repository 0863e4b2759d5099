//! The integrated diagnosis and fault-tolerant control loop.
//!
//! Every sample: the predictor forecasts the next v_star from the last
//! `lookback` samples, the classifier labels the window of recent
//! forecasts, and the emitted v_star is the forecast under NORMAL or the
//! corrector output under any fault class.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use derfdd_ml::{KnnModel, LstmCache, LstmModel, MlpCache, MlpModel};

use crate::dataset::{per_unit3, PerUnitBases, CHANNELS};
use crate::plant::{Plant, SimConfig};
use crate::{CircuitParams, Controller, ControllerGains, Error, FaultClass, Result, ScenarioSchedule, ThreePhase};

pub trait Predictor {
    fn lookback(&self) -> usize;
    /// `window` holds `lookback` time-major rows of nine channels.
    fn predict(&mut self, window: &[f64]) -> Result<ThreePhase>;
}

pub trait Classifier {
    /// Number of forecasts in one feature.
    fn window(&self) -> usize;
    fn classify(&mut self, feature: &[f64]) -> Result<FaultClass>;
}

pub trait Corrector {
    fn correct(&mut self, v_g: ThreePhase, i_inv: ThreePhase) -> Result<ThreePhase>;
}

pub struct LstmPredictor {
    model: LstmModel,
    cache: LstmCache,
}

impl LstmPredictor {
    pub fn new(model: LstmModel) -> Result<Self> {
        let d = model.dims();
        if d.input != CHANNELS || d.output != 3 {
            return Err(Error::Contract(format!("predictor must map {CHANNELS} channels to 3 outputs, model is {d:?}")));
        }
        Ok(LstmPredictor { model, cache: LstmCache::default() })
    }
}

impl Predictor for LstmPredictor {
    fn lookback(&self) -> usize {
        self.model.dims().lookback
    }

    fn predict(&mut self, window: &[f64]) -> Result<ThreePhase> {
        let y = self.model.forward(window, &mut self.cache)?;
        Ok(ThreePhase::new(y[0], y[1], y[2]))
    }
}

pub struct KnnClassifier {
    model: KnnModel,
}

impl KnnClassifier {
    pub fn new(model: KnnModel) -> Result<Self> {
        if !model.dim().is_multiple_of(3) || model.n_classes() != FaultClass::COUNT {
            return Err(Error::Contract(format!(
                "classifier needs 3-phase features and {} classes (dim {}, classes {})",
                FaultClass::COUNT,
                model.dim(),
                model.n_classes()
            )));
        }
        Ok(KnnClassifier { model })
    }
}

impl Classifier for KnnClassifier {
    fn window(&self) -> usize {
        self.model.dim() / 3
    }

    fn classify(&mut self, feature: &[f64]) -> Result<FaultClass> {
        let p = self.model.classify(feature)?;
        FaultClass::from_index(p.label).ok_or_else(|| Error::Contract(format!("class index {} out of range", p.label)))
    }
}

pub struct MlpCorrector {
    model: MlpModel,
    cache: MlpCache,
}

impl MlpCorrector {
    pub fn new(model: MlpModel) -> Result<Self> {
        let s = model.sizes();
        if s.first() != Some(&6) || s.last() != Some(&3) {
            return Err(Error::Contract(format!("corrector must map 6 inputs to 3 outputs, sizes are {s:?}")));
        }
        Ok(MlpCorrector { model, cache: MlpCache::default() })
    }
}

impl Corrector for MlpCorrector {
    fn correct(&mut self, v_g: ThreePhase, i_inv: ThreePhase) -> Result<ThreePhase> {
        let x = [v_g.a, v_g.b, v_g.c, i_inv.a, i_inv.b, i_inv.c];
        let y = self.model.forward(&x, &mut self.cache)?;
        Ok(ThreePhase::new(y[0], y[1], y[2]))
    }
}

pub struct FtcModels {
    pub predictor: Box<dyn Predictor>,
    pub classifier: Box<dyn Classifier>,
    pub corrector: Box<dyn Corrector>,
}

impl FtcModels {
    pub fn from_trained(lstm: LstmModel, knn: KnnModel, mlp: MlpModel) -> Result<Self> {
        Ok(FtcModels {
            predictor: Box::new(LstmPredictor::new(lstm)?),
            classifier: Box::new(KnnClassifier::new(knn)?),
            corrector: Box::new(MlpCorrector::new(mlp)?),
        })
    }
}

/// Which v_star enters the predictor's history ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistorySource {
    /// The v_star actually sent to the inverter.
    #[default]
    Emitted,
    /// The shadow conventional controller's v_star.
    Conventional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FtcConfig {
    /// Consecutive agreeing classifications needed to switch class.
    pub debounce: usize,
    pub history: HistorySource,
}

impl Default for FtcConfig {
    fn default() -> Self {
        FtcConfig { debounce: 3, history: HistorySource::Emitted }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Predictor,
    Corrector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FtcState {
    ring: VecDeque<[f64; CHANNELS]>,
    forecasts: VecDeque<ThreePhase>,
    pub last_prediction: ThreePhase,
    /// Debounced classification.
    pub last_class: FaultClass,
    pub raw_class: FaultClass,
    candidate: FaultClass,
    candidate_run: usize,
    pub correction_active: bool,
}

/// Zero history except the newest v_star, drawn uniformly from [-1, 1].
pub fn ftc_init(seed: u64, lookback: usize, window: usize) -> FtcState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ring: VecDeque<[f64; CHANNELS]> = std::iter::repeat_n([0.0; CHANNELS], lookback).collect();
    if let Some(last) = ring.back_mut() {
        for v in &mut last[6..9] {
            *v = rng.gen_range(-1.0..=1.0);
        }
    }
    FtcState {
        ring,
        forecasts: std::iter::repeat_n(ThreePhase::ZERO, window).collect(),
        last_prediction: ThreePhase::ZERO,
        last_class: FaultClass::Normal,
        raw_class: FaultClass::Normal,
        candidate: FaultClass::Normal,
        candidate_run: 0,
        correction_active: false,
    }
}

impl FtcState {
    pub fn ring_len(&self) -> usize {
        self.ring.len()
    }

    pub fn history(&self) -> impl Iterator<Item = &[f64; CHANNELS]> {
        self.ring.iter()
    }

    fn accept(&mut self, raw: FaultClass, debounce: usize) {
        self.raw_class = raw;
        if raw == self.last_class {
            self.candidate_run = 0;
            return;
        }
        if raw == self.candidate && self.candidate_run > 0 {
            self.candidate_run += 1;
        } else {
            self.candidate = raw;
            self.candidate_run = 1;
        }
        if self.candidate_run >= debounce.max(1) {
            self.last_class = raw;
            self.candidate_run = 0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtcOutput {
    pub v_star: ThreePhase,
    pub predicted: ThreePhase,
    pub class: FaultClass,
    pub raw_class: FaultClass,
    pub source: Source,
}

/// One pass of the loop at the current sample.
///
/// `conventional` is the shadow controller's v_star for this sample; it is
/// only used when the history ring is configured to record it.
pub fn ftc_step(
    s: &mut FtcState,
    v_g: ThreePhase,
    i_inv: ThreePhase,
    conventional: ThreePhase,
    models: &mut FtcModels,
    cfg: &FtcConfig,
) -> Result<FtcOutput> {
    let p = models.predictor.lookback();
    let w = models.classifier.window();
    if s.ring.len() != p || s.forecasts.len() != w {
        return Err(Error::Contract(format!(
            "state holds {} history rows and {} forecasts, models need {p} and {w}",
            s.ring.len(),
            s.forecasts.len()
        )));
    }
    let window: Vec<f64> = s.ring.iter().flatten().copied().collect();
    let predicted = models.predictor.predict(&window)?.map(|x| if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) });
    s.last_prediction = predicted;
    s.forecasts.pop_front();
    s.forecasts.push_back(predicted);
    let feature: Vec<f64> = s.forecasts.iter().flat_map(|f| f.to_array()).collect();
    let raw = models.classifier.classify(&feature)?;
    s.accept(raw, cfg.debounce);
    s.correction_active = s.last_class.is_fault();
    let (v_star, source) = if s.correction_active {
        let c = models.corrector.correct(v_g, i_inv)?;
        (c.map(|x| if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) }), Source::Corrector)
    } else {
        (predicted, Source::Predictor)
    };
    let hist = match cfg.history {
        HistorySource::Emitted => v_star,
        HistorySource::Conventional => conventional,
    };
    s.ring.pop_front();
    s.ring.push_back([v_g.a, v_g.b, v_g.c, i_inv.a, i_inv.b, i_inv.c, hist.a, hist.b, hist.c]);
    Ok(FtcOutput { v_star, predicted, class: s.last_class, raw_class: raw, source })
}

/// Per-sample record of a closed-loop run (per-unit signals).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClosedLoopTrace {
    pub sample_period: f64,
    pub v_g: Vec<ThreePhase>,
    pub i_inv: Vec<ThreePhase>,
    pub v_star: Vec<ThreePhase>,
    pub predicted: Vec<ThreePhase>,
    pub conventional: Vec<ThreePhase>,
    pub class: Vec<FaultClass>,
    pub raw_class: Vec<FaultClass>,
    pub truth: Vec<FaultClass>,
    pub from_corrector: Vec<bool>,
}

impl ClosedLoopTrace {
    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.sample_period
    }
}

/// Simulates one schedule with the FTC loop driving the inverter.
///
/// The warm-up runs under the conventional controller with the FTC loop
/// in shadow mode (its history ring is filled with the applied v_star); the
/// loop takes over at t = 0.
#[allow(clippy::too_many_arguments)]
pub fn run_closed_loop(
    sched: &ScenarioSchedule,
    p: &CircuitParams,
    gains: &ControllerGains,
    sim: &SimConfig,
    bases: &PerUnitBases,
    models: &mut FtcModels,
    cfg: &FtcConfig,
    seed: u64,
) -> Result<ClosedLoopTrace> {
    gains.validate()?;
    bases.validate()?;
    let warm = sim.warmup_samples(p);
    let mut plant = Plant::new(*p, *sim, sched.clone(), -(warm as i64))?;
    let mut ctrl = Controller::new(*gains, p);
    let ts = sim.sample_period;
    let mut state = ftc_init(seed, models.predictor.lookback(), models.classifier.window());
    let shadow = FtcConfig { history: HistorySource::Conventional, ..*cfg };
    let mut clips = 0;
    for _ in 0..warm {
        let m = plant.measure()?;
        let conv = ctrl.step(m.i_l, m.v_pcc, ts).m;
        let v_g = per_unit3(m.v_pcc, bases.voltage, &mut clips)?;
        let i_inv = per_unit3(m.i_l, bases.current, &mut clips)?;
        ftc_step(&mut state, v_g, i_inv, conv, models, &shadow)?;
        plant.advance(conv)?;
    }
    let n = sim.samples_for(sched.duration());
    let mut out = ClosedLoopTrace { sample_period: ts, ..Default::default() };
    for _ in 0..n {
        let m = plant.measure()?;
        let truth = plant.label();
        let conv = ctrl.step(m.i_l, m.v_pcc, ts).m;
        let v_g = per_unit3(m.v_pcc, bases.voltage, &mut clips)?;
        let i_inv = per_unit3(m.i_l, bases.current, &mut clips)?;
        let o = ftc_step(&mut state, v_g, i_inv, conv, models, cfg)?;
        out.v_g.push(v_g);
        out.i_inv.push(i_inv);
        out.v_star.push(o.v_star);
        out.predicted.push(o.predicted);
        out.conventional.push(conv);
        out.class.push(o.class);
        out.raw_class.push(o.raw_class);
        out.truth.push(truth);
        out.from_corrector.push(o.source == Source::Corrector);
        plant.advance(o.v_star)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo(usize);
    impl Predictor for Echo {
        fn lookback(&self) -> usize {
            self.0
        }
        fn predict(&mut self, window: &[f64]) -> Result<ThreePhase> {
            let last = &window[window.len() - CHANNELS..];
            Ok(ThreePhase::new(last[6] * 2.0, last[7], last[8]))
        }
    }

    struct Fixed(FaultClass);
    impl Classifier for Fixed {
        fn window(&self) -> usize {
            4
        }
        fn classify(&mut self, _: &[f64]) -> Result<FaultClass> {
            Ok(self.0)
        }
    }

    struct Half;
    impl Corrector for Half {
        fn correct(&mut self, v_g: ThreePhase, _: ThreePhase) -> Result<ThreePhase> {
            Ok(v_g * 0.5)
        }
    }

    fn stub(class: FaultClass) -> FtcModels {
        FtcModels { predictor: Box::new(Echo(20)), classifier: Box::new(Fixed(class)), corrector: Box::new(Half) }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = ftc_init(7, 20, 20);
        assert_eq!(a, ftc_init(7, 20, 20));
        assert_ne!(a, ftc_init(8, 20, 20));
        assert_eq!(a.ring_len(), 20);
        let last = a.history().last().unwrap();
        assert!(last[6..].iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(a.history().take(19).all(|r| r.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn normal_branch_emits_the_prediction() {
        let mut models = stub(FaultClass::Normal);
        let mut s = ftc_init(1, 20, 4);
        let cfg = FtcConfig::default();
        for _ in 0..30 {
            let o = ftc_step(&mut s, ThreePhase::splat(0.4), ThreePhase::ZERO, ThreePhase::ZERO, &mut models, &cfg).unwrap();
            assert_eq!(o.v_star, o.predicted);
            assert_eq!(o.source, Source::Predictor);
            assert!(o.v_star.max_abs() <= 1.0);
        }
    }

    #[test]
    fn fault_branch_emits_corrector_output_after_debounce() {
        let mut models = stub(FaultClass::AG);
        let mut s = ftc_init(1, 20, 4);
        let cfg = FtcConfig::default();
        let vg = ThreePhase::new(0.2, -0.6, 0.4);
        let sources: Vec<Source> = (0..5)
            .map(|_| ftc_step(&mut s, vg, ThreePhase::ZERO, ThreePhase::ZERO, &mut models, &cfg).unwrap().source)
            .collect();
        assert_eq!(sources, [Source::Predictor, Source::Predictor, Source::Corrector, Source::Corrector, Source::Corrector]);
        let o = ftc_step(&mut s, vg, ThreePhase::ZERO, ThreePhase::ZERO, &mut models, &cfg).unwrap();
        assert_eq!(o.v_star, vg * 0.5);
        assert_eq!(o.class, FaultClass::AG);
        assert!(s.correction_active);

        let literal = FtcConfig { debounce: 1, ..cfg };
        let mut s = ftc_init(1, 20, 4);
        let o = ftc_step(&mut s, vg, ThreePhase::ZERO, ThreePhase::ZERO, &mut models, &literal).unwrap();
        assert_eq!(o.source, Source::Corrector);
    }

    #[test]
    fn history_source_selects_ring_contents() {
        let mut models = stub(FaultClass::Normal);
        let conv = ThreePhase::splat(0.3);
        let mut s = ftc_init(2, 20, 4);
        let cfg = FtcConfig { history: HistorySource::Conventional, ..Default::default() };
        ftc_step(&mut s, ThreePhase::ZERO, ThreePhase::ZERO, conv, &mut models, &cfg).unwrap();
        assert_eq!(&s.history().last().unwrap()[6..], &[0.3, 0.3, 0.3]);
    }

    #[test]
    fn mismatched_state_is_a_contract_error() {
        let mut models = stub(FaultClass::Normal);
        let mut s = ftc_init(2, 10, 4);
        let r = ftc_step(&mut s, ThreePhase::ZERO, ThreePhase::ZERO, ThreePhase::ZERO, &mut models, &FtcConfig::default());
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
