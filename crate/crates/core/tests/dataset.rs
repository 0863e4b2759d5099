use std::collections::BTreeSet;

use derfdd_core::dataset::{
    kfold, make_windows, read_traces, run_scenario, run_scenario_excited, save_traces, split_indices, window_count, Excitation,
    TraceInfo, CHANNELS,
};
use derfdd_core::fault::label_at;
use derfdd_core::{CircuitParams, ControllerGains, FaultClass, PerUnitBases, Scenario, ScenarioSchedule, SimConfig};
use proptest::prelude::*;

const SCHEDULE: &str = "duration 0.3\nag 0.1 0.15 0.08 0.08\nabc 0.2 0.25 0.1 -\n";

fn setup() -> (ScenarioSchedule, CircuitParams, ControllerGains, SimConfig, PerUnitBases) {
    let sched = Scenario::parse("short", SCHEDULE).unwrap().segments.remove(0);
    let p = CircuitParams::default();
    let g = ControllerGains::default();
    let sim = SimConfig { sample_period: 5e-5, ..SimConfig::default() };
    let bases = PerUnitBases::new(&p, &g, None).unwrap();
    (sched, p, g, sim, bases)
}

#[test]
fn recorded_rows_are_per_unit_and_labelled() {
    let (sched, p, g, sim, bases) = setup();
    let tr = run_scenario(&sched, &p, &g, &sim, &bases).unwrap();
    assert_eq!(tr.len(), sim.samples_for(0.3));
    assert_eq!(bases.current, 20.0);
    assert!((bases.voltage - 179.629).abs() < 1e-3);
    for k in 0..tr.len() {
        assert!(tr.row(k).iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        assert_eq!(tr.label[k], label_at(tr.time(k), &sched).unwrap(), "row {k}");
    }
    let faults: BTreeSet<_> = tr.label.iter().copied().collect();
    assert_eq!(faults, BTreeSet::from([FaultClass::AG, FaultClass::ABC, FaultClass::Normal]));
}

#[test]
fn simulation_is_deterministic() {
    let (sched, p, g, sim, bases) = setup();
    let a = run_scenario(&sched, &p, &g, &sim, &bases).unwrap();
    let b = run_scenario(&sched, &p, &g, &sim, &bases).unwrap();
    assert_eq!(a, b);
    let exc = Excitation { amplitude: 0.02, rho: 0.9, seed: 3 };
    let x1 = run_scenario_excited(&sched, &p, &g, &sim, &bases, &exc).unwrap();
    let x2 = run_scenario_excited(&sched, &p, &g, &sim, &bases, &exc).unwrap();
    assert_eq!(x1, x2);
    assert_ne!(x1.v_star, a.v_star);
    let x3 = run_scenario_excited(&sched, &p, &g, &sim, &bases, &Excitation { seed: 4, ..exc }).unwrap();
    assert_ne!(x1.v_star, x3.v_star);
    assert!(x1.v_star.iter().all(|v| v.max_abs() <= 1.0));
}

#[test]
fn trace_file_round_trips_bit_exact() {
    let (sched, p, g, sim, bases) = setup();
    let tr = run_scenario(&sched, &p, &g, &sim, &bases).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let info = TraceInfo { schedule: "short".into(), seed: 7 };
    save_traces(&path, std::slice::from_ref(&tr), &info).unwrap();
    let (back, got) = read_traces(&path).unwrap();
    assert_eq!(back, vec![tr]);
    assert_eq!(got, info);
}

#[test]
fn zero_duration_writes_header_only() {
    let (_, p, g, sim, bases) = setup();
    let tr = run_scenario(&ScenarioSchedule::normal(0.0).unwrap(), &p, &g, &sim, &bases).unwrap();
    assert!(tr.is_empty());
    let mut buf = Vec::new();
    derfdd_core::dataset::write_traces(&mut buf, &[tr], &TraceInfo::default()).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
}

#[test]
fn windows_line_up_with_trace_rows() {
    let (sched, p, g, sim, bases) = setup();
    let tr = run_scenario(&sched, &p, &g, &sim, &bases).unwrap();
    let lookback = 20;
    let d = make_windows(tr.clone(), lookback, 7).unwrap();
    assert_eq!(d.len(), window_count(tr.len(), lookback, 7));
    let mut buf = vec![0.0; lookback * CHANNELS];
    for i in [0, d.len() / 2, d.len() - 1] {
        d.fill_inputs(i, &mut buf);
        let start = i * 7;
        assert_eq!(&buf[..CHANNELS], &tr.row(start));
        assert_eq!(&buf[(lookback - 1) * CHANNELS..], &tr.row(start + lookback - 1));
        assert_eq!(d.target(i), tr.v_star[start + lookback]);
        assert_eq!(d.label(i), tr.label[start + lookback]);
    }
}

proptest! {
    #[test]
    fn window_count_matches_enumeration(len in 0usize..400, lookback in 1usize..40, stride in 1usize..30) {
        let brute = (0..len).step_by(stride).filter(|i| i + lookback < len).count();
        prop_assert_eq!(window_count(len, lookback, stride), brute);
    }

    #[test]
    fn split_partitions_indices(n in 2usize..500, frac in 0.05f64..0.95, seed in any::<u64>(), chrono in any::<bool>()) {
        let (tr, va) = split_indices(n, frac, seed, chrono).unwrap();
        prop_assert!(!tr.is_empty() && !va.is_empty());
        prop_assert!(tr.len().abs_diff((frac * n as f64).round() as usize) <= 1);
        let all: BTreeSet<_> = tr.iter().chain(&va).copied().collect();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(all.iter().next_back().copied(), Some(n - 1));
        if chrono {
            prop_assert!(tr.iter().max() < va.iter().min());
        }
        prop_assert_eq!(split_indices(n, frac, seed, chrono).unwrap(), (tr, va));
    }

    #[test]
    fn folds_cover_every_index_once(n in 10usize..300, k in 2usize..10, seed in any::<u64>()) {
        let folds = kfold(n, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = vec![0u32; n];
        for f in &folds {
            prop_assert_eq!(f.train.len() + f.val.len(), n);
            let val: BTreeSet<_> = f.val.iter().collect();
            prop_assert!(f.train.iter().all(|i| !val.contains(i)));
            for &i in &f.val {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes: Vec<_> = folds.iter().map(|f| f.val.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}
