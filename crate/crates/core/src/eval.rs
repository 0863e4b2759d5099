//! Closed-loop evaluation records, per-episode MAE tables and confusion
//! matrix files.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use derfdd_ml::ConfusionMatrix;

use crate::dataset::{run_scenario, PerUnitBases};
use crate::ftc::{run_closed_loop, FtcConfig, FtcModels};
use crate::plant::SimConfig;
use crate::{CircuitParams, ControllerGains, Error, FaultClass, Result, Scenario, ScenarioSchedule, ThreePhase};

/// One sample of a closed-loop evaluation run. All signals per-unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtcRow {
    pub segment: u32,
    pub t: f64,
    pub truth: FaultClass,
    /// Debounced classification that selected the source.
    pub class: FaultClass,
    pub raw_class: FaultClass,
    pub from_corrector: bool,
    pub v_g: ThreePhase,
    pub i_inv: ThreePhase,
    /// Emitted command.
    pub v_star: ThreePhase,
    pub predicted: ThreePhase,
    /// Shadow conventional controller inside the loop.
    pub conventional: ThreePhase,
    /// Conventional controller driving the faulted plant on its own.
    pub uncorrected: ThreePhase,
    /// Conventional controller on the same horizon without faults.
    pub reference: ThreePhase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FtcTrace {
    pub scenario: String,
    pub sample_period: f64,
    pub seed: u64,
    pub rows: Vec<FtcRow>,
}

/// Runs every segment of `scn` three times: with the FTC loop in control,
/// with the conventional controller alone, and fault-free.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_scenario(
    scn: &Scenario,
    p: &CircuitParams,
    gains: &ControllerGains,
    sim: &SimConfig,
    bases: &PerUnitBases,
    models: &mut FtcModels,
    cfg: &FtcConfig,
    seed: u64,
) -> Result<FtcTrace> {
    let mut rows = Vec::new();
    for (s, seg) in scn.segments.iter().enumerate() {
        let closed = run_closed_loop(seg, p, gains, sim, bases, models, cfg, seed.wrapping_add(s as u64))?;
        let unc = run_scenario(seg, p, gains, sim, bases)?;
        let reference = run_scenario(&ScenarioSchedule::normal(seg.duration())?, p, gains, sim, bases)?;
        for k in 0..closed.len() {
            rows.push(FtcRow {
                segment: s as u32,
                t: closed.time(k),
                truth: closed.truth[k],
                class: closed.class[k],
                raw_class: closed.raw_class[k],
                from_corrector: closed.from_corrector[k],
                v_g: closed.v_g[k],
                i_inv: closed.i_inv[k],
                v_star: closed.v_star[k],
                predicted: closed.predicted[k],
                conventional: closed.conventional[k],
                uncorrected: unc.v_star[k],
                reference: reference.v_star[k],
            });
        }
    }
    Ok(FtcTrace { scenario: scn.name.clone(), sample_period: sim.sample_period, seed, rows })
}

const FTC_MAGIC: &str = "# derfdd-ftc 1";
const FTC_HEADER: [&str; 27] = [
    "segment", "t", "truth", "class", "raw_class", "source", "vg_a", "vg_b", "vg_c", "ii_a", "ii_b", "ii_c", "vs_a",
    "vs_b", "vs_c", "vp_a", "vp_b", "vp_c", "vc_a", "vc_b", "vc_c", "vu_a", "vu_b", "vu_c", "vr_a", "vr_b", "vr_c",
];

pub fn write_ftc_trace<W: Write>(mut w: W, tr: &FtcTrace) -> Result<()> {
    writeln!(w, "{FTC_MAGIC} sample_period={} seed={} scenario={}", tr.sample_period, tr.seed, tr.scenario)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(FTC_HEADER).map_err(csv_err)?;
    for r in &tr.rows {
        let mut rec: Vec<String> = Vec::with_capacity(FTC_HEADER.len());
        rec.push(r.segment.to_string());
        rec.push(r.t.to_string());
        rec.extend([r.truth, r.class, r.raw_class].map(|c| c.name().to_string()));
        rec.push(if r.from_corrector { "mlp" } else { "lstm" }.to_string());
        for x in [r.v_g, r.i_inv, r.v_star, r.predicted, r.conventional, r.uncorrected, r.reference] {
            rec.extend(x.iter().map(|v| v.to_string()));
        }
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_ftc_trace(path: &Path, tr: &FtcTrace) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_ftc_trace(&mut w, tr)?;
    w.flush()?;
    Ok(())
}

pub fn read_ftc_trace(path: &Path) -> Result<FtcTrace> {
    let name = path.display().to_string();
    let perr = |line: usize, msg: String| Error::Parse { source_name: name.clone(), line, msg };
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut meta = String::new();
    r.read_line(&mut meta)?;
    if !meta.starts_with(FTC_MAGIC) {
        return Err(perr(1, "not a derfdd closed-loop trace".into()));
    }
    let value = |key: &str| meta.split_whitespace().find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')));
    let sample_period = value("sample_period").and_then(|v| v.parse().ok()).ok_or_else(|| perr(1, "missing `sample_period`".into()))?;
    let seed = value("seed").and_then(|v| v.parse().ok()).unwrap_or(0);
    let scenario = value("scenario").unwrap_or("").to_string();
    let mut rows = Vec::new();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 3;
        let rec = rec.map_err(|e| perr(line, e.to_string()))?;
        if rec.len() != FTC_HEADER.len() {
            return Err(perr(line, format!("expected {} fields, found {}", FTC_HEADER.len(), rec.len())));
        }
        let f = |j: usize| -> Result<f64> { rec[j].parse().map_err(|_| perr(line, format!("bad number `{}`", &rec[j]))) };
        let tp = |j: usize| -> Result<ThreePhase> { Ok(ThreePhase::new(f(j)?, f(j + 1)?, f(j + 2)?)) };
        let cls = |j: usize| -> Result<FaultClass> { rec[j].parse().map_err(|e: Error| perr(line, e.to_string())) };
        rows.push(FtcRow {
            segment: rec[0].parse().map_err(|_| perr(line, "bad segment".into()))?,
            t: f(1)?,
            truth: cls(2)?,
            class: cls(3)?,
            raw_class: cls(4)?,
            from_corrector: match &rec[5] {
                "mlp" => true,
                "lstm" => false,
                other => return Err(perr(line, format!("bad source `{other}`"))),
            },
            v_g: tp(6)?,
            i_inv: tp(9)?,
            v_star: tp(12)?,
            predicted: tp(15)?,
            conventional: tp(18)?,
            uncorrected: tp(21)?,
            reference: tp(24)?,
        });
    }
    Ok(FtcTrace { scenario, sample_period, seed, rows })
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { source_name: "csv".into(), line: 0, msg: format!("{other:?}") },
    }
}

/// A maximal run of rows in one segment sharing a fault label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Episode {
    pub segment: u32,
    pub class: FaultClass,
    /// Row range `start..end` into [`FtcTrace::rows`].
    pub start: usize,
    pub end: usize,
}

pub fn episodes(tr: &FtcTrace) -> Vec<Episode> {
    let mut out: Vec<Episode> = Vec::new();
    for (i, r) in tr.rows.iter().enumerate() {
        if !r.truth.is_fault() {
            continue;
        }
        match out.last_mut() {
            Some(e) if e.end == i && e.class == r.truth && e.segment == r.segment => e.end += 1,
            _ => out.push(Episode { segment: r.segment, class: r.truth, start: i, end: i + 1 }),
        }
    }
    out
}

fn phase_mae(rows: &[FtcRow], pick: impl Fn(&FtcRow) -> ThreePhase) -> [f64; 3] {
    let mut s = [0.0; 3];
    for r in rows {
        let d = pick(r) - r.reference;
        for (acc, v) in s.iter_mut().zip(d.iter()) {
            *acc += v.abs();
        }
    }
    s.map(|v| v / rows.len().max(1) as f64)
}

fn mean3(x: &[f64; 3]) -> f64 {
    x.iter().sum::<f64>() / 3.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeReport {
    pub scenario: String,
    pub class: FaultClass,
    pub t_start: f64,
    pub t_end: f64,
    pub samples: usize,
    /// Emitted v_star against the fault-free reference, per phase.
    pub mae: [f64; 3],
    /// Uncorrected conventional v_star against the same reference.
    pub uncorrected: [f64; 3],
    /// Fraction of samples whose debounced class equals the true class.
    pub detection: f64,
    /// Fraction of samples emitted by the corrector.
    pub corrector_share: f64,
}

impl EpisodeReport {
    pub fn mae_mean(&self) -> f64 {
        mean3(&self.mae)
    }

    pub fn uncorrected_mean(&self) -> f64 {
        mean3(&self.uncorrected)
    }

    /// Emitted error strictly below the uncorrected error, phases averaged.
    pub fn improved(&self) -> bool {
        self.mae_mean() < self.uncorrected_mean()
    }
}

pub fn episode_reports(tr: &FtcTrace) -> Vec<EpisodeReport> {
    episodes(tr)
        .into_iter()
        .map(|e| {
            let rows = &tr.rows[e.start..e.end];
            let n = rows.len() as f64;
            EpisodeReport {
                scenario: tr.scenario.clone(),
                class: e.class,
                t_start: rows[0].t,
                t_end: rows[rows.len() - 1].t + tr.sample_period,
                samples: rows.len(),
                mae: phase_mae(rows, |r| r.v_star),
                uncorrected: phase_mae(rows, |r| r.uncorrected),
                detection: rows.iter().filter(|r| r.class == e.class).count() as f64 / n,
                corrector_share: rows.iter().filter(|r| r.from_corrector).count() as f64 / n,
            }
        })
        .collect()
}

/// Per fault class, per phase and per scenario MAE table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaeReport {
    pub scenarios: Vec<String>,
    pub episodes: Vec<EpisodeReport>,
}

impl MaeReport {
    pub fn from_traces(traces: &[FtcTrace]) -> Self {
        MaeReport {
            scenarios: traces.iter().map(|t| t.scenario.clone()).collect(),
            episodes: traces.iter().flat_map(episode_reports).collect(),
        }
    }

    /// Sample-weighted MAE of one class in one scenario.
    pub fn entry(&self, scenario: &str, class: FaultClass) -> Option<[f64; 3]> {
        let eps: Vec<&EpisodeReport> = self.episodes.iter().filter(|e| e.scenario == scenario && e.class == class).collect();
        let n: usize = eps.iter().map(|e| e.samples).sum();
        if n == 0 {
            return None;
        }
        let mut out = [0.0; 3];
        for e in eps {
            for (o, m) in out.iter_mut().zip(e.mae) {
                *o += m * e.samples as f64 / n as f64;
            }
        }
        Some(out)
    }

    /// Checks that every scenario has an entry for all 11 fault classes.
    pub fn check_shape(&self) -> Result<()> {
        for s in &self.scenarios {
            for c in FaultClass::FAULTS {
                if self.entry(s, c).is_none() {
                    return Err(Error::Contract(format!("scenario {s} has no {c} episode")));
                }
            }
        }
        Ok(())
    }

    /// Unweighted mean over the fault classes present in a scenario.
    pub fn scenario_average(&self, scenario: &str) -> Option<[f64; 3]> {
        let rows: Vec<[f64; 3]> = FaultClass::FAULTS.iter().filter_map(|&c| self.entry(scenario, c)).collect();
        if rows.is_empty() {
            return None;
        }
        let mut out = [0.0; 3];
        for r in &rows {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v / rows.len() as f64;
            }
        }
        Some(out)
    }

    pub fn overall_mean(&self) -> f64 {
        let all: Vec<f64> = self.scenarios.iter().filter_map(|s| self.scenario_average(s)).map(|a| mean3(&a)).collect();
        all.iter().sum::<f64>() / all.len().max(1) as f64
    }

    pub fn improved_count(&self) -> usize {
        self.episodes.iter().filter(|e| e.improved()).count()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "scenario", "class", "t_start", "t_end", "samples", "mae_a", "mae_b", "mae_c", "mae_mean", "uncorrected_a",
            "uncorrected_b", "uncorrected_c", "uncorrected_mean", "detection", "corrector_share", "improved",
        ])
        .map_err(csv_err)?;
        let f = |x: f64| format!("{x:.6}");
        for e in &self.episodes {
            let mut rec = vec![e.scenario.clone(), e.class.name().to_string(), f(e.t_start), f(e.t_end), e.samples.to_string()];
            rec.extend(e.mae.iter().map(|&v| f(v)));
            rec.push(f(e.mae_mean()));
            rec.extend(e.uncorrected.iter().map(|&v| f(v)));
            rec.push(f(e.uncorrected_mean()));
            rec.extend([f(e.detection), f(e.corrector_share), e.improved().to_string()]);
            out.write_record(&rec).map_err(csv_err)?;
        }
        for s in &self.scenarios {
            if let Some(a) = self.scenario_average(s) {
                let mut rec = vec![s.clone(), "AVERAGE".into(), String::new(), String::new(), String::new()];
                rec.extend(a.iter().map(|&v| f(v)));
                rec.push(f(mean3(&a)));
                rec.extend(std::iter::repeat_n(String::new(), 7));
                out.write_record(&rec).map_err(csv_err)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Rows are true classes, columns predictions, in enumeration order.
pub fn write_confusion<W: Write>(w: W, cm: &ConfusionMatrix) -> Result<()> {
    if cm.n_classes() != FaultClass::COUNT {
        return Err(Error::Contract(format!("confusion matrix has {} classes", cm.n_classes())));
    }
    let mut out = csv::Writer::from_writer(w);
    let mut head = vec!["truth".to_string()];
    head.extend(FaultClass::ALL.iter().map(|c| c.name().to_string()));
    head.push("recall".into());
    out.write_record(&head).map_err(csv_err)?;
    for t in FaultClass::ALL {
        let mut rec = vec![t.name().to_string()];
        rec.extend(FaultClass::ALL.iter().map(|p| cm.get(t.index(), p.index()).to_string()));
        rec.push(cm.recall(t.index()).map_or(String::new(), |r| format!("{r:.6}")));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(segment: u32, k: usize, truth: FaultClass, v: f64) -> FtcRow {
        FtcRow {
            segment,
            t: k as f64 * 0.5,
            truth,
            class: truth,
            raw_class: FaultClass::Normal,
            from_corrector: truth.is_fault(),
            v_g: ThreePhase::ZERO,
            i_inv: ThreePhase::ZERO,
            v_star: ThreePhase::splat(v),
            predicted: ThreePhase::ZERO,
            conventional: ThreePhase::ZERO,
            uncorrected: ThreePhase::splat(2.0 * v),
            reference: ThreePhase::ZERO,
        }
    }

    fn trace() -> FtcTrace {
        use FaultClass::*;
        let labels = [(0, Normal), (0, AG), (0, AG), (0, BG), (0, Normal), (1, AG), (1, AG)];
        let rows = labels.iter().enumerate().map(|(k, &(s, c))| row(s, k, c, 0.1 * k as f64)).collect();
        FtcTrace { scenario: "s".into(), sample_period: 0.5, seed: 3, rows }
    }

    #[test]
    fn episodes_split_on_class_and_segment() {
        let eps = episodes(&trace());
        let got: Vec<(u32, FaultClass, usize, usize)> = eps.iter().map(|e| (e.segment, e.class, e.start, e.end)).collect();
        assert_eq!(got, vec![(0, FaultClass::AG, 1, 3), (0, FaultClass::BG, 3, 4), (1, FaultClass::AG, 5, 7)]);
    }

    #[test]
    fn report_values() {
        let r = episode_reports(&trace());
        assert!((r[0].mae[0] - 0.15).abs() < 1e-12);
        assert!((r[0].uncorrected[2] - 0.3).abs() < 1e-12);
        assert_eq!(r[0].t_start, 0.5);
        assert_eq!(r[0].t_end, 1.5);
        assert!(r.iter().all(|e| e.improved() && e.detection == 1.0 && e.corrector_share == 1.0));
        let m = MaeReport::from_traces(&[trace()]);
        let ag = m.entry("s", FaultClass::AG).unwrap();
        assert!((ag[1] - (0.1 + 0.2 + 0.5 + 0.6) / 4.0).abs() < 1e-12);
        assert!(m.check_shape().is_err());
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 + 1);
    }

    #[test]
    fn ftc_trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let mut t = trace();
        t.rows[2].v_g = ThreePhase::new(0.1, -1.0 / 3.0, 1e-17);
        save_ftc_trace(&p, &t).unwrap();
        assert_eq!(read_ftc_trace(&p).unwrap(), t);
    }

    #[test]
    fn confusion_file_layout() {
        let mut cm = ConfusionMatrix::new(FaultClass::COUNT);
        cm.record(0, 0).unwrap();
        cm.record(0, 11).unwrap();
        let mut buf = Vec::new();
        write_confusion(&mut buf, &cm).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 13);
        assert!(lines[0].starts_with("truth,AG,BG"));
        assert_eq!(lines[1], "AG,1,0,0,0,0,0,0,0,0,0,0,1,0.500000");
    }
}
