//! Short-circuit fault classes, fault schedules and the PCC network solve.
//!
//! A fault connects every faulted phase through `r_phase` to a common fault
//! node. Grounded classes tie that node to ground through `r_ground`; for
//! the ungrounded phase-phase classes the node floats.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::{CircuitParams, Error, Result, ThreePhase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaultClass {
    AG,
    BG,
    CG,
    AB,
    BC,
    CA,
    ABG,
    BCG,
    CAG,
    ABC,
    ABCG,
    Normal,
}

impl FaultClass {
    pub const COUNT: usize = 12;

    /// Every label; the position in this array is the class index.
    pub const ALL: [FaultClass; 12] = [
        FaultClass::AG,
        FaultClass::BG,
        FaultClass::CG,
        FaultClass::AB,
        FaultClass::BC,
        FaultClass::CA,
        FaultClass::ABG,
        FaultClass::BCG,
        FaultClass::CAG,
        FaultClass::ABC,
        FaultClass::ABCG,
        FaultClass::Normal,
    ];

    /// The eleven fault classes, without `Normal`.
    pub const FAULTS: [FaultClass; 11] = [
        FaultClass::AG,
        FaultClass::BG,
        FaultClass::CG,
        FaultClass::AB,
        FaultClass::BC,
        FaultClass::CA,
        FaultClass::ABG,
        FaultClass::BCG,
        FaultClass::CAG,
        FaultClass::ABC,
        FaultClass::ABCG,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<FaultClass> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            FaultClass::AG => "AG",
            FaultClass::BG => "BG",
            FaultClass::CG => "CG",
            FaultClass::AB => "AB",
            FaultClass::BC => "BC",
            FaultClass::CA => "CA",
            FaultClass::ABG => "ABG",
            FaultClass::BCG => "BCG",
            FaultClass::CAG => "CAG",
            FaultClass::ABC => "ABC",
            FaultClass::ABCG => "ABCG",
            FaultClass::Normal => "NORMAL",
        }
    }

    /// Which of phases a, b, c the fault touches.
    pub fn phases(self) -> [bool; 3] {
        match self {
            FaultClass::AG => [true, false, false],
            FaultClass::BG => [false, true, false],
            FaultClass::CG => [false, false, true],
            FaultClass::AB | FaultClass::ABG => [true, true, false],
            FaultClass::BC | FaultClass::BCG => [false, true, true],
            FaultClass::CA | FaultClass::CAG => [true, false, true],
            FaultClass::ABC | FaultClass::ABCG => [true, true, true],
            FaultClass::Normal => [false, false, false],
        }
    }

    pub fn is_grounded(self) -> bool {
        matches!(
            self,
            FaultClass::AG | FaultClass::BG | FaultClass::CG | FaultClass::ABG | FaultClass::BCG | FaultClass::CAG | FaultClass::ABCG
        )
    }

    pub fn is_fault(self) -> bool {
        self != FaultClass::Normal
    }
}

impl fmt::Display for FaultClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FaultClass {
    type Err = Error;

    /// Accepts `AG`, `a-g`, `ag`, `NORMAL`, ... in any case.
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| *c != '-').collect::<String>().to_ascii_uppercase();
        FaultClass::ALL
            .into_iter()
            .find(|c| c.name() == key)
            .ok_or_else(|| Error::Schedule(format!("unknown fault class `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultSpec {
    pub class: FaultClass,
    pub t_start: f64,
    pub t_end: f64,
    pub r_phase: Option<f64>,
    pub r_ground: Option<f64>,
}

impl FaultSpec {
    pub fn validate(&self) -> Result<()> {
        let what = format!("{} fault [{}, {})", self.class, self.t_start, self.t_end);
        if self.class == FaultClass::Normal {
            return Err(Error::Schedule(format!("{what}: NORMAL cannot be scheduled as a fault")));
        }
        if !(self.t_start.is_finite() && self.t_end.is_finite() && self.t_start >= 0.0 && self.t_start < self.t_end) {
            return Err(Error::Schedule(format!("{what}: need 0 <= t_start < t_end")));
        }
        match self.r_phase {
            Some(r) if r.is_finite() && r > 0.0 => {}
            _ => return Err(Error::Schedule(format!("{what}: phase resistance must be present and > 0"))),
        }
        match (self.class.is_grounded(), self.r_ground) {
            (true, Some(r)) if r.is_finite() && r > 0.0 => {}
            (false, None) => {}
            (true, _) => return Err(Error::Schedule(format!("{what}: ground resistance must be present and > 0"))),
            (false, Some(_)) => return Err(Error::Schedule(format!("{what}: ungrounded class cannot carry a ground resistance"))),
        }
        Ok(())
    }

    pub fn contains(&self, t: f64) -> bool {
        self.t_start <= t && t < self.t_end
    }

    pub fn network(&self) -> Result<FaultNetwork> {
        fault_admittance(Some(self))
    }
}

/// Resistive shunt network at the PCC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultNetwork {
    pub phases: [bool; 3],
    pub r_phase: f64,
    /// `None` leaves the fault node floating.
    pub r_ground: Option<f64>,
}

/// Node voltages and branch currents from one network solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PccSolution {
    pub v_pcc: ThreePhase,
    /// Current from each PCC node into the fault network.
    pub i_fault: ThreePhase,
    /// Fault node voltage (0 when no fault is active).
    pub v_node: f64,
}

impl FaultNetwork {
    pub const EMPTY: FaultNetwork = FaultNetwork { phases: [false; 3], r_phase: f64::INFINITY, r_ground: None };

    pub fn is_empty(&self) -> bool {
        !self.phases.iter().any(|&p| p)
    }

    /// Solves KCL at the three PCC nodes and the fault node.
    ///
    /// Each PCC node sees the source through `z_series`, the inverter
    /// injection `i_g`, and (if faulted) a branch to the fault node. With
    /// `e = v_src + z i_g` and `h = g / (1 + g z)` the network reduces to
    /// `v_node = sum(h e) / (sum(h) + g_ground)` and `i_f = h (e - v_node)`.
    pub fn solve(&self, v_src: ThreePhase, i_g: ThreePhase, z_series: f64) -> Result<PccSolution> {
        let e = v_src + i_g * z_series;
        if self.is_empty() {
            return Ok(PccSolution { v_pcc: e, i_fault: ThreePhase::ZERO, v_node: 0.0 });
        }
        let g = 1.0 / self.r_phase;
        let h_on = g / (1.0 + g * z_series);
        let h = ThreePhase::from_array(self.phases.map(|on| if on { h_on } else { 0.0 }));
        let g0 = self.r_ground.map_or(0.0, |r| 1.0 / r);
        let denom = h.sum() + g0;
        assert!(denom > 0.0, "fault network with positive resistances cannot be singular");
        let v_node = (h.a * e.a + h.b * e.b + h.c * e.c) / denom;
        let i_fault = h.zip_with(e, |hj, ej| hj * (ej - v_node));
        let v_pcc = e - i_fault * z_series;
        if !v_pcc.is_finite() {
            return Err(Error::Numeric(format!("non-finite PCC solution for source {v_src:?}, i_g {i_g:?}")));
        }
        Ok(PccSolution { v_pcc, i_fault, v_node })
    }
}

/// Network realization of a fault; `None` (or a NORMAL entry) gives the empty
/// network.
pub fn fault_admittance(fault: Option<&FaultSpec>) -> Result<FaultNetwork> {
    let Some(fault) = fault else { return Ok(FaultNetwork::EMPTY) };
    if fault.class == FaultClass::Normal {
        return Ok(FaultNetwork::EMPTY);
    }
    fault.validate()?;
    Ok(FaultNetwork { phases: fault.class.phases(), r_phase: fault.r_phase.unwrap_or(f64::INFINITY), r_ground: fault.r_ground })
}

pub fn solve_pcc_voltage(v_src: ThreePhase, i_g: ThreePhase, active: Option<&FaultSpec>, p: &CircuitParams) -> Result<ThreePhase> {
    Ok(fault_admittance(active)?.solve(v_src, i_g, p.series_impedance())?.v_pcc)
}

/// Non-overlapping faults over `[0, duration]`, sorted by start time.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSchedule {
    faults: Vec<FaultSpec>,
    duration: f64,
}

impl ScenarioSchedule {
    pub fn new(mut faults: Vec<FaultSpec>, duration: f64) -> Result<Self> {
        for f in &faults {
            f.validate()?;
        }
        faults.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
        for w in faults.windows(2) {
            if w[1].t_start < w[0].t_end {
                return Err(Error::Schedule(format!(
                    "{} [{}, {}) overlaps {} [{}, {})",
                    w[0].class, w[0].t_start, w[0].t_end, w[1].class, w[1].t_start, w[1].t_end
                )));
            }
        }
        let last = faults.iter().map(|f| f.t_end).fold(0.0, f64::max);
        if !(duration.is_finite() && duration >= last) {
            return Err(Error::Schedule(format!("duration {duration} s ends before the last fault ({last} s)")));
        }
        Ok(ScenarioSchedule { faults, duration })
    }

    /// No faults at all.
    pub fn normal(duration: f64) -> Result<Self> {
        Self::new(Vec::new(), duration)
    }

    pub fn faults(&self) -> &[FaultSpec] {
        &self.faults
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn with_duration(&self, duration: f64) -> Result<Self> {
        Self::new(self.faults.clone(), duration)
    }

    /// The fault whose `[t_start, t_end)` contains `t`. No range check.
    pub fn active_at(&self, t: f64) -> Option<&FaultSpec> {
        let i = self.faults.partition_point(|f| f.t_start <= t);
        i.checked_sub(1).map(|j| &self.faults[j]).filter(|f| t < f.t_end)
    }

    pub fn label_at(&self, t: f64) -> Result<FaultClass> {
        if !(t >= 0.0 && t <= self.duration) {
            return Err(Error::Range(format!("t = {t} outside [0, {}]", self.duration)));
        }
        Ok(self.active_at(t).map_or(FaultClass::Normal, |f| f.class))
    }
}

pub fn label_at(t: f64, sched: &ScenarioSchedule) -> Result<FaultClass> {
    sched.label_at(t)
}

/// One or more schedules simulated independently, each from a fresh start.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub segments: Vec<ScenarioSchedule>,
}

/// Horizon used when a scenario segment gives no `duration` line.
pub const DEFAULT_DURATION: f64 = 4.0;

impl Scenario {
    /// Parses the line format:
    ///
    /// ```text
    /// # class t_start t_end r_phase r_ground   ('-' = absent)
    /// duration 4.0
    /// a-g 0.4 0.5 0.08 0.08
    /// AB  1.05 1.15 0.3 -
    /// ---                                      (starts a new segment)
    /// ```
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse { source_name: name.to_string(), line, msg };
        let mut segments = Vec::new();
        let mut faults = Vec::new();
        let mut duration: Option<f64> = None;
        let mut close = |faults: &mut Vec<FaultSpec>, duration: &mut Option<f64>, line: usize| -> Result<()> {
            let last = faults.iter().map(|f| f.t_end).fold(0.0, f64::max);
            let d = duration.take().unwrap_or(DEFAULT_DURATION.max(last));
            let seg = ScenarioSchedule::new(std::mem::take(faults), d).map_err(|e| perr(line, e.to_string()))?;
            segments.push(seg);
            Ok(())
        };
        let num = |tok: &str, line: usize| -> Result<f64> {
            tok.parse::<f64>().map_err(|_| perr(line, format!("`{tok}` is not a number")))
        };
        let opt = |tok: &str, line: usize| -> Result<Option<f64>> { if tok == "-" { Ok(None) } else { num(tok, line).map(Some) } };
        let mut last_line = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            last_line = line;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if body == "---" {
                close(&mut faults, &mut duration, line)?;
                continue;
            }
            let toks: Vec<&str> = body.split_whitespace().collect();
            if toks[0] == "duration" {
                if toks.len() != 2 {
                    return Err(perr(line, "expected `duration <seconds>`".into()));
                }
                duration = Some(num(toks[1], line)?);
                continue;
            }
            if toks.len() != 5 {
                return Err(perr(line, format!("expected 5 fields, found {}", toks.len())));
            }
            let class = toks[0].parse::<FaultClass>().map_err(|e| perr(line, e.to_string()))?;
            let entry = FaultSpec {
                class,
                t_start: num(toks[1], line)?,
                t_end: num(toks[2], line)?,
                r_phase: opt(toks[3], line)?,
                r_ground: opt(toks[4], line)?,
            };
            entry.validate().map_err(|e| perr(line, e.to_string()))?;
            faults.push(entry);
        }
        close(&mut faults, &mut duration, last_line)?;
        Ok(Scenario { name: name.to_string(), segments })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&path.display().to_string(), &text)
    }

    /// A built-in name or a path to a scenario file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if let Some(s) = Self::builtin(name_or_path) {
            return Ok(s);
        }
        let path = Path::new(name_or_path);
        if path.exists() {
            return Self::load(path);
        }
        Err(Error::Config(format!(
            "`{name_or_path}` is neither a built-in schedule ({}) nor an existing file",
            BUILTIN_NAMES.join(", ")
        )))
    }

    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name {
            "table1-train" => TABLE1_TRAIN,
            "table1-test" => TABLE1_TEST,
            "table1-test-s1" => TABLE1_TEST_S1,
            _ => return None,
        };
        Some(Self::parse(name, text).expect("built-in schedules are valid"))
    }

    pub fn faults(&self) -> impl Iterator<Item = &FaultSpec> {
        self.segments.iter().flat_map(|s| s.faults().iter())
    }

    /// Same timing with every fault removed.
    pub fn fault_free(&self) -> Scenario {
        Scenario {
            name: format!("{}-fault-free", self.name),
            segments: self.segments.iter().map(|s| ScenarioSchedule::normal(s.duration()).unwrap()).collect(),
        }
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration()).sum()
    }
}

pub const BUILTIN_NAMES: [&str; 3] = ["table1-train", "table1-test", "table1-test-s1"];

pub const TABLE1_TRAIN: &str = "\
# Training set. For ungrounded classes the single resistance is phase-neutral.
duration 4.0
a-g     0.4  0.5  0.08 0.08
b-g     0.6  0.7  0.08 0.08
c-g     0.85 0.95 0.08 0.08
a-b     1.05 1.15 0.3  -
b-c     1.4  1.6  0.1  -
c-a     1.7  1.85 0.6  -
a-b-g   2.0  2.1  0.08 0.08
b-c-g   2.5  2.8  0.1  0.1
c-a-g   3.0  3.15 0.5  0.5
a-b-c   3.5  3.7  0.3  -
a-b-c-g 3.85 3.95 0.3  0.3
";

/// Test set. The a-b row overlaps the a-g row in time, so it runs as a
/// separate segment.
pub const TABLE1_TEST: &str = "\
duration 4.0
a-g     1.0  1.22 0.3  0.3
b-g     2.62 2.75 0.2  0.2
c-g     0.32 0.5  0.1  0.1
b-c     2.22 2.3  0.3  -
c-a     1.89 2.17 0.1  -
a-b-g   0.1  0.18 0.25 0.25
b-c-g   2.41 2.5  0.3  0.3
c-a-g   3.7  3.82 0.08 0.08
a-b-c   1.7  1.81 0.1  -
a-b-c-g 0.72 0.8  0.5  0.5
---
duration 1.5
a-b     1.12 1.19 0.07 -
";

/// Test timings with the training resistances.
pub const TABLE1_TEST_S1: &str = "\
duration 4.0
a-g     1.0  1.22 0.08 0.08
b-g     2.62 2.75 0.08 0.08
c-g     0.32 0.5  0.08 0.08
b-c     2.22 2.3  0.1  -
c-a     1.89 2.17 0.6  -
a-b-g   0.1  0.18 0.08 0.08
b-c-g   2.41 2.5  0.1  0.1
c-a-g   3.7  3.82 0.5  0.5
a-b-c   1.7  1.81 0.3  -
a-b-c-g 0.72 0.8  0.3  0.3
---
duration 1.5
a-b     1.12 1.19 0.3  -
";
