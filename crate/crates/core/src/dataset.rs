//! Recorded per-unit traces, supervised windows, splits and trace files.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use derfdd_ml::SupervisedSet;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::plant::{Plant, SimConfig};
use crate::{CircuitParams, Controller, ControllerGains, Error, FaultClass, Result, ScenarioSchedule, ThreePhase};

/// Channels per timestep in a model window: v_g, i_inv, v_star (a, b, c each).
pub const CHANNELS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerUnitBases {
    pub voltage: f64,
    pub current: f64,
}

impl PerUnitBases {
    /// Phase-peak grid voltage and, unless overridden, twice the current
    /// setpoint magnitude.
    pub fn new(p: &CircuitParams, gains: &ControllerGains, current_override: Option<f64>) -> Result<Self> {
        let current = current_override.unwrap_or(2.0 * gains.i_ref_magnitude());
        let b = PerUnitBases { voltage: p.v_phase_peak(), current };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("voltage", self.voltage), ("current", self.current)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("per-unit {name} base {v} must be > 0")));
            }
        }
        Ok(())
    }
}

/// `x / base` clamped to [-1, 1]; every clamped value bumps `clips`.
pub fn per_unit(x: f64, base: f64, clips: &mut u64) -> Result<f64> {
    if !(base.is_finite() && base > 0.0) {
        return Err(Error::Config(format!("per-unit base {base} must be > 0")));
    }
    if !x.is_finite() {
        return Err(Error::Numeric(format!("non-finite value {x} for per-unit conversion")));
    }
    let v = x / base;
    if v.abs() > 1.0 {
        *clips += 1;
        return Ok(v.clamp(-1.0, 1.0));
    }
    Ok(v)
}

pub fn per_unit3(x: ThreePhase, base: f64, clips: &mut u64) -> Result<ThreePhase> {
    Ok(ThreePhase::new(per_unit(x.a, base, clips)?, per_unit(x.b, base, clips)?, per_unit(x.c, base, clips)?))
}

/// One simulated segment sampled at a fixed period. Row `k` is time
/// `k * sample_period`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedTrace {
    pub sample_period: f64,
    pub bases: PerUnitBases,
    pub v_g: Vec<ThreePhase>,
    pub i_inv: Vec<ThreePhase>,
    pub v_star: Vec<ThreePhase>,
    pub label: Vec<FaultClass>,
    pub clip_count: u64,
}

impl RecordedTrace {
    pub fn new(sample_period: f64, bases: PerUnitBases) -> Self {
        RecordedTrace {
            sample_period,
            bases,
            v_g: Vec::new(),
            i_inv: Vec::new(),
            v_star: Vec::new(),
            label: Vec::new(),
            clip_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.label.len()
    }

    pub fn is_empty(&self) -> bool {
        self.label.is_empty()
    }

    pub fn push(&mut self, v_g: ThreePhase, i_inv: ThreePhase, v_star: ThreePhase, label: FaultClass) {
        self.v_g.push(v_g);
        self.i_inv.push(i_inv);
        self.v_star.push(v_star);
        self.label.push(label);
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.sample_period
    }

    /// The nine channels of row `k`.
    pub fn row(&self, k: usize) -> [f64; CHANNELS] {
        let (g, i, v) = (self.v_g[k], self.i_inv[k], self.v_star[k]);
        [g.a, g.b, g.c, i.a, i.b, i.c, v.a, v.b, v.c]
    }
}

/// Random perturbation added to the controller output during data
/// generation so that the recorded commands are not a fixed function of the
/// grid phase. Each phase follows `d_k = rho d_(k-1) + amplitude u_k` with
/// `u_k` uniform on [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Excitation {
    pub amplitude: f64,
    pub rho: f64,
    pub seed: u64,
}

impl Default for Excitation {
    fn default() -> Self {
        Excitation { amplitude: 0.0, rho: 0.0, seed: 0 }
    }
}

impl Excitation {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0 && (0.0..1.0).contains(&self.rho)) {
            return Err(Error::Config(format!("excitation needs amplitude >= 0 and rho in [0, 1): {self:?}")));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.amplitude > 0.0
    }
}

/// Runs the conventional controller in closed loop over one schedule and
/// records per-unit signals.
///
/// Each row holds the measurements at `t_k` and the modulation the
/// controller computes from them, which is then held until `t_(k+1)`.
pub fn run_scenario(
    sched: &ScenarioSchedule,
    p: &CircuitParams,
    gains: &ControllerGains,
    sim: &SimConfig,
    bases: &PerUnitBases,
) -> Result<RecordedTrace> {
    run_scenario_excited(sched, p, gains, sim, bases, &Excitation::default())
}

/// [`run_scenario`] with `exc` added to the command after warm-up. The
/// recorded v_star is the applied (perturbed, clamped) command.
pub fn run_scenario_excited(
    sched: &ScenarioSchedule,
    p: &CircuitParams,
    gains: &ControllerGains,
    sim: &SimConfig,
    bases: &PerUnitBases,
    exc: &Excitation,
) -> Result<RecordedTrace> {
    gains.validate()?;
    bases.validate()?;
    exc.validate()?;
    let warm = sim.warmup_samples(p);
    let mut plant = Plant::new(*p, *sim, sched.clone(), -(warm as i64))?;
    let mut ctrl = Controller::new(*gains, p);
    let ts = sim.sample_period;
    for _ in 0..warm {
        let m = plant.measure()?;
        let out = ctrl.step(m.i_l, m.v_pcc, ts);
        plant.advance(out.m)?;
    }
    let n = sim.samples_for(sched.duration());
    let mut trace = RecordedTrace::new(ts, *bases);
    trace.v_g.reserve(n);
    trace.i_inv.reserve(n);
    trace.v_star.reserve(n);
    trace.label.reserve(n);
    let mut clips = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(exc.seed);
    let mut d = ThreePhase::ZERO;
    for _ in 0..n {
        let m = plant.measure()?;
        let label = plant.label();
        let mut cmd = ctrl.step(m.i_l, m.v_pcc, ts).m;
        if exc.is_active() {
            let u = ThreePhase::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
            d = d * exc.rho + u * exc.amplitude;
            cmd = (cmd + d).map(|x| x.clamp(-1.0, 1.0));
        }
        let v_g = per_unit3(m.v_pcc, bases.voltage, &mut clips)?;
        let i_inv = per_unit3(m.i_l, bases.current, &mut clips)?;
        trace.push(v_g, i_inv, cmd, label);
        plant.advance(cmd)?;
    }
    trace.clip_count = clips;
    Ok(trace)
}

/// Location of one window: rows `start .. start + lookback` of a trace are
/// the input, row `start + lookback` the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRef {
    pub trace: u32,
    pub start: u32,
}

/// Windows over a shared set of traces. Cloning and subsetting share the
/// trace storage.
#[derive(Debug, Clone)]
pub struct Dataset {
    traces: Arc<Vec<RecordedTrace>>,
    windows: Vec<WindowRef>,
    lookback: usize,
}

/// Start indices `i = 0, s, 2s, ...` with `i + lookback < len`.
pub fn window_count(len: usize, lookback: usize, stride: usize) -> usize {
    if len <= lookback || stride == 0 {
        0
    } else {
        (len - lookback - 1) / stride + 1
    }
}

impl Dataset {
    pub fn from_traces(traces: Vec<RecordedTrace>, lookback: usize, stride: usize) -> Result<Self> {
        if lookback == 0 || stride == 0 {
            return Err(Error::Config(format!("lookback {lookback} and stride {stride} must be >= 1")));
        }
        let mut windows = Vec::new();
        for (ti, tr) in traces.iter().enumerate() {
            let n = window_count(tr.len(), lookback, stride);
            windows.extend((0..n).map(|j| WindowRef { trace: ti as u32, start: (j * stride) as u32 }));
        }
        if windows.is_empty() {
            return Err(Error::EmptyDataset(format!("no trace is longer than the lookback of {lookback} samples")));
        }
        Ok(Dataset { traces: Arc::new(traces), windows, lookback })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn traces(&self) -> &[RecordedTrace] {
        &self.traces
    }

    pub fn windows(&self) -> &[WindowRef] {
        &self.windows
    }

    /// Trace and row index of window `i`'s target.
    pub fn target_row(&self, i: usize) -> (&RecordedTrace, usize) {
        let w = self.windows[i];
        (&self.traces[w.trace as usize], w.start as usize + self.lookback)
    }

    pub fn label(&self, i: usize) -> FaultClass {
        let (tr, k) = self.target_row(i);
        tr.label[k]
    }

    pub fn labels(&self) -> Vec<FaultClass> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }

    pub fn target(&self, i: usize) -> ThreePhase {
        let (tr, k) = self.target_row(i);
        tr.v_star[k]
    }

    /// Time-major inputs: `lookback` rows of nine channels.
    pub fn fill_inputs(&self, i: usize, out: &mut [f64]) {
        let w = self.windows[i];
        let tr = &self.traces[w.trace as usize];
        for (r, chunk) in out.chunks_exact_mut(CHANNELS).enumerate() {
            chunk.copy_from_slice(&tr.row(w.start as usize + r));
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset { traces: Arc::clone(&self.traces), windows: indices.iter().map(|&i| self.windows[i]).collect(), lookback: self.lookback }
    }
}

impl SupervisedSet for Dataset {
    fn len(&self) -> usize {
        self.windows.len()
    }

    fn input(&self, i: usize, out: &mut [f64]) {
        self.fill_inputs(i, out);
    }

    fn target(&self, i: usize, out: &mut [f64]) {
        out.copy_from_slice(&Dataset::target(self, i).to_array());
    }
}

pub fn make_windows(trace: RecordedTrace, lookback: usize, stride: usize) -> Result<Dataset> {
    Dataset::from_traces(vec![trace], lookback, stride)
}

/// Number of training windows for `fraction` of `n`, keeping both parts
/// nonempty when `n >= 2`.
pub fn train_count(n: usize, fraction: f64) -> usize {
    let t = (fraction * n as f64).round() as usize;
    if n >= 2 {
        t.clamp(1, n - 1)
    } else {
        t.min(n)
    }
}

/// Disjoint train/validation index lists. Chronological splits keep window
/// order and put the earliest windows in the training part.
pub fn split_indices(n: usize, fraction: f64, seed: u64, chronological: bool) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {fraction} must lie in (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    if !chronological {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let val = idx.split_off(train_count(n, fraction));
    Ok((idx, val))
}

pub fn split_train_val(d: &Dataset, fraction: f64, seed: u64, chronological: bool) -> Result<(Dataset, Dataset)> {
    let (tr, va) = split_indices(d.len(), fraction, seed, chronological)?;
    Ok((d.subset(&tr), d.subset(&va)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// `k` folds over a seeded shuffle; validation fold sizes differ by at most
/// one, larger folds first.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 || n < k {
        return Err(Error::Config(format!("k-fold needs k >= 2 and at least k items (k = {k}, n = {n})")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let val = idx[at..at + size].to_vec();
        let train = idx[..at].iter().chain(&idx[at + size..]).copied().collect();
        folds.push(Fold { train, val });
        at += size;
    }
    Ok(folds)
}

/// Free-form provenance stored in a trace file header.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceInfo {
    /// Schedule name or path; must not contain whitespace.
    pub schedule: String,
    pub seed: u64,
}

const TRACE_MAGIC: &str = "# derfdd-trace 1";
const TRACE_HEADER: [&str; 12] = ["segment", "t", "vg_a", "vg_b", "vg_c", "ii_a", "ii_b", "ii_c", "vs_a", "vs_b", "vs_c", "label"];

/// Writes traces as CSV: one metadata comment line, a header, then rows.
/// Floats use the shortest round-trip form, so reading back is bit-exact.
pub fn write_traces<W: Write>(mut w: W, traces: &[RecordedTrace], info: &TraceInfo) -> Result<()> {
    let first = traces.first();
    let period = first.map_or(0.0, |t| t.sample_period);
    let bases = first.map(|t| t.bases).unwrap_or(PerUnitBases { voltage: 1.0, current: 1.0 });
    if traces.iter().any(|t| t.sample_period != period || t.bases != bases) {
        return Err(Error::Contract("traces in one file must share sample period and bases".into()));
    }
    let clips: Vec<String> = traces.iter().map(|t| t.clip_count.to_string()).collect();
    writeln!(
        w,
        "{TRACE_MAGIC} sample_period={period} v_base={} i_base={} segments={} clips={} seed={} schedule={}",
        bases.voltage,
        bases.current,
        traces.len(),
        clips.join(","),
        info.seed,
        info.schedule
    )?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRACE_HEADER).map_err(csv_err)?;
    for (s, tr) in traces.iter().enumerate() {
        for k in 0..tr.len() {
            let mut rec: Vec<String> = Vec::with_capacity(12);
            rec.push(s.to_string());
            rec.push(tr.time(k).to_string());
            rec.extend(tr.row(k).iter().map(|v| v.to_string()));
            rec.push(tr.label[k].name().to_string());
            out.write_record(&rec).map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { source_name: "csv".into(), line: 0, msg: format!("{other:?}") },
    }
}

fn meta_value<'a>(meta: &'a str, key: &str) -> Option<&'a str> {
    meta.split_whitespace().find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

pub fn read_traces(path: &Path) -> Result<(Vec<RecordedTrace>, TraceInfo)> {
    let name = path.display().to_string();
    let perr = |line: usize, msg: String| Error::Parse { source_name: name.clone(), line, msg };
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut meta = String::new();
    r.read_line(&mut meta)?;
    if !meta.starts_with(TRACE_MAGIC) {
        return Err(perr(1, "not a derfdd trace file".into()));
    }
    let num = |key: &str| -> Result<f64> {
        meta_value(&meta, key).and_then(|v| v.parse().ok()).ok_or_else(|| perr(1, format!("missing or bad `{key}`")))
    };
    let period = num("sample_period")?;
    let bases = PerUnitBases { voltage: num("v_base")?, current: num("i_base")? };
    let segments = num("segments")? as usize;
    let clips: Vec<u64> = meta_value(&meta, "clips").unwrap_or("").split(',').filter_map(|c| c.parse().ok()).collect();
    let info = TraceInfo {
        schedule: meta_value(&meta, "schedule").unwrap_or("").to_string(),
        seed: meta_value(&meta, "seed").and_then(|s| s.parse().ok()).unwrap_or(0),
    };
    let mut traces: Vec<RecordedTrace> = (0..segments).map(|_| RecordedTrace::new(period, bases)).collect();
    for (i, t) in traces.iter_mut().enumerate() {
        t.clip_count = clips.get(i).copied().unwrap_or(0);
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 3;
        let rec = rec.map_err(|e| perr(line, e.to_string()))?;
        if rec.len() != TRACE_HEADER.len() {
            return Err(perr(line, format!("expected {} fields, found {}", TRACE_HEADER.len(), rec.len())));
        }
        let f = |j: usize| -> Result<f64> { rec[j].parse::<f64>().map_err(|_| perr(line, format!("bad number `{}`", &rec[j]))) };
        let seg = rec[0].parse::<usize>().ok().filter(|&s| s < segments).ok_or_else(|| perr(line, "bad segment index".into()))?;
        let label = rec[11].parse::<FaultClass>().map_err(|e| perr(line, e.to_string()))?;
        let tp = |j: usize| -> Result<ThreePhase> { Ok(ThreePhase::new(f(j)?, f(j + 1)?, f(j + 2)?)) };
        traces[seg].push(tp(2)?, tp(5)?, tp(8)?, label);
    }
    Ok((traces, info))
}

pub fn save_traces(path: &Path, traces: &[RecordedTrace], info: &TraceInfo) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_traces(&mut w, traces, info)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(len: usize) -> RecordedTrace {
        let bases = PerUnitBases { voltage: 1.0, current: 1.0 };
        let mut t = RecordedTrace::new(1e-3, bases);
        for k in 0..len {
            let x = k as f64 * 0.01;
            let label = if k % 7 == 0 { FaultClass::AG } else { FaultClass::Normal };
            t.push(ThreePhase::splat(x.sin()), ThreePhase::splat(x.cos()), ThreePhase::splat(-x.sin()), label);
        }
        t
    }

    #[test]
    fn per_unit_examples() {
        let mut clips = 0;
        let base = CircuitParams::default().v_phase_peak();
        assert!((per_unit(base, base, &mut clips).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(per_unit(0.0, 3.0, &mut clips).unwrap(), 0.0);
        assert_eq!(clips, 0);
        assert_eq!(per_unit(-2.0 * base, base, &mut clips).unwrap(), -1.0);
        assert_eq!(clips, 1);
        assert!(matches!(per_unit(1.0, 0.0, &mut clips), Err(Error::Config(_))));
    }

    #[test]
    fn window_counting_examples() {
        assert_eq!(window_count(25, 20, 1), 5);
        assert_eq!(window_count(21, 20, 1), 1);
        assert_eq!(window_count(800_000, 20, 1), 799_980);
        assert_eq!(window_count(800_000, 20, 20), 39_999);
        assert_eq!(window_count(800_000, 20, 19), 42_105);
        assert_eq!(window_count(20, 20, 1), 0);
    }

    #[test]
    fn shortest_window_targets_last_sample() {
        let d = make_windows(synthetic(21), 20, 1).unwrap();
        assert_eq!(d.len(), 1);
        let (tr, k) = d.target_row(0);
        assert_eq!(k, 20);
        assert_eq!(d.target(0), tr.v_star[20]);
        assert!(matches!(make_windows(synthetic(20), 20, 1), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn split_examples() {
        let (a, b) = split_indices(100, 0.7, 1, false).unwrap();
        assert_eq!((a.len(), b.len()), (70, 30));
        let (a, b) = split_indices(10, 0.7, 1, false).unwrap();
        assert_eq!((a.len(), b.len()), (7, 3));
        assert_eq!(split_indices(10, 0.7, 1, false).unwrap(), split_indices(10, 0.7, 1, false).unwrap());
        let (a, _) = split_indices(10, 0.7, 1, true).unwrap();
        assert_eq!(a, (0..7).collect::<Vec<_>>());
        assert!(split_indices(10, 1.0, 1, false).is_err());
    }

    #[test]
    fn kfold_examples() {
        let folds = kfold(10, 10, 3).unwrap();
        assert!(folds.iter().all(|f| f.val.len() == 1 && f.train.len() == 9));
        let folds = kfold(25, 10, 3).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(|f| f.val.len()).collect();
        sizes.sort();
        assert_eq!(sizes, vec![2, 2, 2, 2, 2, 3, 3, 3, 3, 3]);
        assert!(kfold(5, 10, 0).is_err());
        assert!(kfold(5, 1, 0).is_err());
    }

    #[test]
    fn inputs_are_time_major() {
        let tr = synthetic(30);
        let d = make_windows(tr.clone(), 4, 3).unwrap();
        let mut buf = vec![0.0; 4 * CHANNELS];
        d.fill_inputs(2, &mut buf);
        assert_eq!(&buf[..CHANNELS], &tr.row(6));
        assert_eq!(&buf[3 * CHANNELS..], &tr.row(9));
        assert_eq!(d.label(2), tr.label[10]);
    }

    #[test]
    fn trace_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut a = synthetic(40);
        a.clip_count = 3;
        let b = synthetic(5);
        let info = TraceInfo { schedule: "unit".into(), seed: 42 };
        save_traces(&path, &[a.clone(), b.clone()], &info).unwrap();
        let (back, got) = read_traces(&path).unwrap();
        assert_eq!(back, vec![a, b]);
        assert_eq!(got, info);
    }
}
