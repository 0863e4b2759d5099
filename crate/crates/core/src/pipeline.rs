//! The command workflow behind the `derfdd` binary. Every command reads
//! and writes artifacts under the configured output directory and returns
//! a one-line summary.

use std::io::Write;
use std::path::{Path, PathBuf};

use derfdd_ml::{accuracy, Checkpoint, ConfusionMatrix, EpochRecord, KnnModel, LstmModel, MlpModel};

use crate::config::RunConfig;
use crate::dataset::{kfold, read_traces, run_scenario, run_scenario_excited, save_traces, split_train_val, TraceInfo};
use crate::eval::{evaluate_scenario, read_ftc_trace, save_ftc_trace, write_confusion, FtcTrace, MaeReport};
use crate::ftc::FtcModels;
use crate::models::{evaluate_knn, normal_samples, train_knn, train_lstm, train_mlp};
use crate::plot::{line_chart, Series};
use crate::{Dataset, Error, RecordedTrace, Result, Scenario};

/// Artifact locations under an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn simulation(&self, scenario: &str) -> PathBuf {
        self.root.join("simulate").join(format!("{}.csv", file_stem(scenario)))
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset").join("train.csv")
    }

    pub fn excited_dataset(&self) -> PathBuf {
        self.root.join("dataset").join("train-excited.csv")
    }

    pub fn checkpoint(&self, which: Model) -> PathBuf {
        self.root.join("models").join(format!("{}.ckpt", which.name()))
    }

    pub fn training_log(&self, which: Model) -> PathBuf {
        self.root.join("models").join(format!("{}-log.csv", which.name()))
    }

    pub fn ftc_trace(&self, scenario: &str) -> PathBuf {
        self.root.join("ftc").join(format!("{}.csv", file_stem(scenario)))
    }

    pub fn confusion(&self) -> PathBuf {
        self.root.join("eval").join("confusion.csv")
    }

    pub fn mae(&self) -> PathBuf {
        self.root.join("eval").join("mae.csv")
    }

    pub fn plots(&self) -> PathBuf {
        self.root.join("plots")
    }
}

/// File-name-safe form of a schedule name or path.
pub fn file_stem(name: &str) -> String {
    let base = Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or(name);
    base.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Lstm,
    Knn,
    Mlp,
}

impl Model {
    pub const ALL: [Model; 3] = [Model::Lstm, Model::Knn, Model::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            Model::Lstm => "lstm",
            Model::Knn => "knn",
            Model::Mlp => "mlp",
        }
    }
}

fn require(path: &Path, what: &str, producer: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact { what: what.into(), path: path.display().to_string(), producer: producer.into() })
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn load_checkpoint(layout: &Layout, which: Model) -> Result<Checkpoint> {
    let path = layout.checkpoint(which);
    require(&path, &format!("{} checkpoint", which.name()), &format!("train {}", which.name()))?;
    Ok(Checkpoint::load(&path)?)
}

fn load_dataset(path: &Path) -> Result<Vec<RecordedTrace>> {
    require(path, "training dataset", "gen-dataset")?;
    Ok(read_traces(path)?.0)
}

fn run_all_segments(cfg: &RunConfig, scn: &Scenario, excited: bool) -> Result<Vec<RecordedTrace>> {
    let bases = cfg.bases()?;
    let mut exc = cfg.excitation();
    scn.segments
        .iter()
        .map(|seg| {
            let tr = if excited {
                run_scenario_excited(seg, &cfg.circuit, &cfg.controller, &cfg.simulation, &bases, &exc)
            } else {
                run_scenario(seg, &cfg.circuit, &cfg.controller, &cfg.simulation, &bases)
            };
            exc.seed = exc.seed.wrapping_add(1);
            tr
        })
        .collect()
}

/// Simulates one schedule under the conventional controller.
pub fn simulate(cfg: &RunConfig, schedule: Option<&str>) -> Result<String> {
    cfg.validate()?;
    let name = schedule.unwrap_or(&cfg.dataset.train_schedule);
    let scn = Scenario::resolve(name)?;
    let traces = run_all_segments(cfg, &scn, false)?;
    let layout = Layout::new(&cfg.out);
    let path = layout.simulation(name);
    create_parent(&path)?;
    save_traces(&path, &traces, &TraceInfo { schedule: file_stem(name), seed: cfg.seed })?;
    let rows: usize = traces.iter().map(RecordedTrace::len).sum();
    let clips: u64 = traces.iter().map(|t| t.clip_count).sum();
    Ok(format!("simulate: wrote {rows} rows ({} segments, {clips} clipped values) to {}", traces.len(), path.display()))
}

/// Records the training schedule, plus a dithered copy when excitation is
/// enabled.
pub fn gen_dataset(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let name = &cfg.dataset.train_schedule;
    let scn = Scenario::resolve(name)?;
    let layout = Layout::new(&cfg.out);
    let info = TraceInfo { schedule: file_stem(name), seed: cfg.seed };
    let clean = run_all_segments(cfg, &scn, false)?;
    create_parent(&layout.dataset())?;
    save_traces(&layout.dataset(), &clean, &info)?;
    let mut rows: usize = clean.iter().map(RecordedTrace::len).sum();
    let excited_path = layout.excited_dataset();
    if cfg.excitation().is_active() {
        let ex = run_all_segments(cfg, &scn, true)?;
        rows += ex.iter().map(RecordedTrace::len).sum::<usize>();
        save_traces(&excited_path, &ex, &info)?;
    } else if excited_path.exists() {
        std::fs::remove_file(&excited_path)?;
    }
    let windows = Dataset::from_traces(clean, cfg.dataset.lookback, cfg.dataset.knn_stride)?.len();
    Ok(format!("gen-dataset: wrote {rows} rows; {windows} classifier windows at stride {}", cfg.dataset.knn_stride))
}

fn predictor_traces(cfg: &RunConfig, layout: &Layout) -> Result<Vec<RecordedTrace>> {
    if cfg.excitation().is_active() {
        load_dataset(&layout.excited_dataset())
    } else {
        load_dataset(&layout.dataset())
    }
}

fn write_log(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch,train_loss,val_loss")?;
    for r in history {
        writeln!(w, "{},{},{}", r.epoch, r.train_loss, r.val_loss)?;
    }
    w.flush()?;
    Ok(())
}

/// The classifier's training and held-out windows.
fn knn_split(cfg: &RunConfig, layout: &Layout) -> Result<(Dataset, Dataset)> {
    let d = Dataset::from_traces(load_dataset(&layout.dataset())?, cfg.dataset.lookback, cfg.dataset.knn_stride)?;
    split_train_val(&d, cfg.dataset.train_fraction, cfg.seed_for("knn-split"), cfg.dataset.chronological)
}

pub fn train(cfg: &RunConfig, which: Model) -> Result<String> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.out);
    let ckpt = layout.checkpoint(which);
    create_parent(&ckpt)?;
    match which {
        Model::Lstm => {
            let d = Dataset::from_traces(predictor_traces(cfg, &layout)?, cfg.dataset.lookback, cfg.dataset.lstm_stride)?;
            let (tr, va) = split_train_val(&d, cfg.dataset.train_fraction, cfg.seed_for("lstm-split"), cfg.dataset.chronological)?;
            let out = train_lstm(&tr, &va, &cfg.lstm.to_config(cfg.seed_for("lstm-shuffle")), cfg.seed_for("lstm-init"))?;
            let mut c = Checkpoint::from(&out.model);
            c.set("seed", cfg.seed);
            c.save(&ckpt)?;
            write_log(&layout.training_log(which), &out.history)?;
            let best = out.history.iter().find(|r| r.epoch == out.best_epoch).map_or(f64::NAN, |r| r.val_loss);
            Ok(format!(
                "train lstm: {} windows, best epoch {} of {}, val mse {best:.3e}",
                d.len(),
                out.best_epoch,
                out.history.len()
            ))
        }
        Model::Knn => {
            let (tr, va) = knn_split(cfg, &layout)?;
            let model = train_knn(&tr, &cfg.knn, cfg.seed_for("knn-cap"))?;
            let mut c = Checkpoint::from(&model);
            c.set("seed", cfg.seed);
            c.save(&ckpt)?;
            Ok(format!("train knn: {} exemplars from {} windows ({} held out)", model.len(), tr.len(), va.len()))
        }
        Model::Mlp => {
            let samples = normal_samples(&predictor_traces(cfg, &layout)?, cfg.dataset.mlp_stride);
            let out = train_mlp(
                &samples,
                cfg.dataset.train_fraction,
                &cfg.mlp.to_config(cfg.seed_for("mlp-shuffle")),
                cfg.seed_for("mlp-init"),
                cfg.seed_for("mlp-split"),
            )?;
            let mut c = Checkpoint::from(&out.model);
            c.set("seed", cfg.seed);
            c.save(&ckpt)?;
            write_log(&layout.training_log(which), &out.history)?;
            let best = out.history.iter().find(|r| r.epoch == out.best_epoch).map_or(f64::NAN, |r| r.val_loss);
            Ok(format!("train mlp: {} NORMAL samples, best epoch {}, val mse {best:.3e}", samples.len(), out.best_epoch))
        }
    }
}

pub fn load_models(cfg: &RunConfig) -> Result<FtcModels> {
    let layout = Layout::new(&cfg.out);
    let lstm = LstmModel::try_from(&load_checkpoint(&layout, Model::Lstm)?)?;
    let knn = KnnModel::try_from(&load_checkpoint(&layout, Model::Knn)?)?;
    let mlp = MlpModel::try_from(&load_checkpoint(&layout, Model::Mlp)?)?;
    if lstm.dims().lookback != cfg.dataset.lookback {
        return Err(Error::Config(format!(
            "predictor lookback {} differs from dataset.lookback {}",
            lstm.dims().lookback,
            cfg.dataset.lookback
        )));
    }
    FtcModels::from_trained(lstm, knn, mlp)
}

/// Runs every test schedule with the trained models in the loop.
pub fn run_ftc(cfg: &RunConfig) -> Result<Vec<FtcTrace>> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.out);
    let mut models = load_models(cfg)?;
    let bases = cfg.bases()?;
    let mut out = Vec::new();
    for name in &cfg.dataset.test_schedules {
        let mut scn = Scenario::resolve(name)?;
        scn.name = file_stem(name);
        let tr = evaluate_scenario(
            &scn,
            &cfg.circuit,
            &cfg.controller,
            &cfg.simulation,
            &bases,
            &mut models,
            &cfg.ftc,
            cfg.seed_for("ftc-init"),
        )?;
        let path = layout.ftc_trace(name);
        create_parent(&path)?;
        save_ftc_trace(&path, &tr)?;
        out.push(tr);
    }
    Ok(out)
}

pub fn run_ftc_command(cfg: &RunConfig) -> Result<String> {
    let traces = run_ftc(cfg)?;
    let rows: usize = traces.iter().map(|t| t.rows.len()).sum();
    let report = MaeReport::from_traces(&traces);
    Ok(format!(
        "run-ftc: {rows} closed-loop rows over {} scenarios; mean MAE {:.4} pu, {}/{} episodes improved",
        traces.len(),
        report.overall_mean(),
        report.improved_count(),
        report.episodes.len()
    ))
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    /// Mean accuracy over cross-validation folds, when enabled.
    pub kfold_accuracy: Option<f64>,
    pub mae: MaeReport,
}

pub fn evaluate(cfg: &RunConfig) -> Result<EvalOutcome> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.out);
    let knn = KnnModel::try_from(&load_checkpoint(&layout, Model::Knn)?)?;
    let traces = cfg
        .dataset
        .test_schedules
        .iter()
        .map(|s| {
            let p = layout.ftc_trace(s);
            require(&p, "closed-loop trace", "run-ftc")?;
            read_ftc_trace(&p)
        })
        .collect::<Result<Vec<_>>>()?;
    let (_, held_out) = knn_split(cfg, &layout)?;
    let confusion = evaluate_knn(&knn, &held_out, cfg.knn.window)?;
    let acc = accuracy(&confusion)?;
    let kfold_accuracy = if cfg.eval.kfold >= 2 {
        let d = Dataset::from_traces(load_dataset(&layout.dataset())?, cfg.dataset.lookback, cfg.dataset.knn_stride)?;
        let folds = kfold(d.len(), cfg.eval.kfold, cfg.seed_for("kfold"))?;
        let mut sum = 0.0;
        for (i, f) in folds.iter().enumerate() {
            let m = train_knn(&d.subset(&f.train), &cfg.knn, cfg.seed_for("knn-cap").wrapping_add(i as u64))?;
            sum += accuracy(&evaluate_knn(&m, &d.subset(&f.val), cfg.knn.window)?)?;
        }
        Some(sum / folds.len() as f64)
    } else {
        None
    };
    let mae = MaeReport::from_traces(&traces);
    create_parent(&layout.confusion())?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(layout.confusion())?);
    write_confusion(&mut w, &confusion)?;
    w.flush()?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(layout.mae())?);
    mae.write_csv(&mut w)?;
    w.flush()?;
    Ok(EvalOutcome { confusion, accuracy: acc, kfold_accuracy, mae })
}

pub fn eval_command(cfg: &RunConfig) -> Result<String> {
    let e = evaluate(cfg)?;
    let kf = e.kfold_accuracy.map_or(String::new(), |a| format!(", {}-fold {a:.4}", cfg.eval.kfold));
    Ok(format!(
        "eval: accuracy {:.4} on {} held-out windows{kf}; mean MAE {:.4} pu over {} episodes ({} improved)",
        e.accuracy,
        e.confusion.total(),
        e.mae.overall_mean(),
        e.mae.episodes.len(),
        e.mae.improved_count()
    ))
}

/// Which rows of a closed-loop trace to plot.
#[derive(Debug, Clone, Default)]
pub struct PlotRequest {
    /// Closed-loop trace file; defaults to the first test schedule's.
    pub trace: Option<PathBuf>,
    /// Start time in seconds; defaults to the first fault onset.
    pub start: Option<f64>,
    pub samples: usize,
    pub segment: u32,
}

/// One SVG per phase comparing the uncorrected and corrected v_star.
pub fn plot(cfg: &RunConfig, req: &PlotRequest) -> Result<String> {
    let layout = Layout::new(&cfg.out);
    let path = match &req.trace {
        Some(p) => p.clone(),
        None => {
            let first = cfg.dataset.test_schedules.first().ok_or_else(|| Error::Config("no test schedule".into()))?;
            layout.ftc_trace(first)
        }
    };
    require(&path, "closed-loop trace", "run-ftc")?;
    let tr = read_ftc_trace(&path)?;
    let rows: Vec<_> = tr.rows.iter().filter(|r| r.segment == req.segment).collect();
    if rows.is_empty() {
        return Err(Error::EmptyDataset(format!("segment {} of {} has no rows", req.segment, path.display())));
    }
    let start_t = req.start.unwrap_or_else(|| rows.iter().find(|r| r.truth.is_fault()).map_or(0.0, |r| r.t));
    let from = rows.partition_point(|r| r.t + 0.5 * tr.sample_period < start_t);
    let n = if req.samples == 0 { 4000 } else { req.samples };
    let sel = &rows[from.min(rows.len())..(from + n).min(rows.len())];
    if sel.is_empty() {
        return Err(Error::Range(format!("start {start_t} s is past the end of the trace")));
    }
    let t: Vec<f64> = sel.iter().map(|r| r.t).collect();
    let dir = layout.plots();
    std::fs::create_dir_all(&dir)?;
    let stem = format!("{}_s{}_{:.4}", file_stem(&tr.scenario), req.segment, start_t);
    let mut written = Vec::new();
    for (j, ph) in ["a", "b", "c"].iter().enumerate() {
        let faulted: Vec<f64> = sel.iter().map(|r| r.uncorrected[j]).collect();
        let corrected: Vec<f64> = sel.iter().map(|r| r.v_star[j]).collect();
        let reference: Vec<f64> = sel.iter().map(|r| r.reference[j]).collect();
        let title = format!("{} phase {ph}: v* from t = {start_t:.4} s ({} samples)", tr.scenario, sel.len());
        let svg = line_chart(&title, "t (s)", "v* (pu)", &t, &[
            Series { label: "fault-free reference", color: "#999999", dashed: true, values: &reference },
            Series { label: "faulted, uncorrected", color: "#d62728", dashed: false, values: &faulted },
            Series { label: "corrected (emitted)", color: "#1f77b4", dashed: false, values: &corrected },
        ]);
        let p = dir.join(format!("{stem}_phase_{ph}.svg"));
        std::fs::write(&p, svg)?;
        written.push(p);
    }
    Ok(format!("plot: wrote {} SVG files ({} samples each) to {}", written.len(), sel.len(), dir.display()))
}
