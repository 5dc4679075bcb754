//! Synthetic 2x2 experiment whose grouped statistics were recomputed by
//! tests/oracles/reports_oracle.py.

use std::collections::BTreeMap;
use std::path::Path;

use sweepherd::env::VariableDesc;
use sweepherd::experiment::{expand_forks, parse_descriptor};
use sweepherd::reports::*;
use sweepherd::runner::log::{EpisodeKind, EpisodeLog, EpisodeSummary, LogRecord};
use sweepherd::runner::{unit_dir, write_experiment, write_log, write_unit_header, RunState, RunStatus, UnitLog};

pub const KINDS: [EpisodeKind; 8] = {
    use EpisodeKind::*;
    [Train, Train, Train, Eval, Train, Train, Train, Eval]
};

pub fn reward(k: usize, e: usize, s: usize) -> f64 {
    ((((k + 1) * (e + 1)) % 7) as f64 + s as f64 * 0.5) * 0.125
}

pub fn xval(k: usize, e: usize, s: usize) -> f64 {
    k as f64 - e as f64 * 0.3 + s as f64 * 0.01
}

pub fn variables() -> Vec<VariableDesc> {
    vec![VariableDesc::new("x", "m", -10.0, 10.0), VariableDesc::new("reward", "", f64::NEG_INFINITY, f64::INFINITY)]
}

pub fn episode(index: usize, kind: EpisodeKind, rows: Vec<(f64, f64)>) -> EpisodeLog {
    let records: Vec<LogRecord> = rows
        .iter()
        .enumerate()
        .map(|(i, (x, r))| LogRecord { step: i as u64 + 1, sim_time: (i + 1) as f64 * 0.5, values: vec![*x, *r] })
        .collect();
    let total_reward = rows.iter().map(|(_, r)| r).sum();
    EpisodeLog {
        summary: EpisodeSummary { episode: index as u64, kind, steps: rows.len() as u64, total_reward, terminal: true },
        records,
        wall_ms: 0,
    }
}

pub fn synthetic_log(k: usize) -> UnitLog {
    let episodes = KINDS
        .iter()
        .enumerate()
        .map(|(e, kind)| episode(e, *kind, (1..=3).map(|s| (xval(k, e, s), reward(k, e, s))).collect()))
        .collect();
    UnitLog {
        variables: variables(),
        episodes,
        status: RunStatus { state: RunState::Finished, progress: 1.0, avg_episode_reward: None, last_eval_reward: None, diagnostic: None },
    }
}

/// Writes the 2x2 synthetic experiment under `root/syn`.
pub fn build(root: &Path) -> Vec<String> {
    let d = parse_descriptor(
        r#"{"name": "syn", "environment": {"class": "mountain-car"},
            "agent": {"class": "q-learning", "alpha": {"$fork": [0.1, 0.5]}, "gamma": {"$fork": [0.9, 0.99]}},
            "run": {"num_episodes": 6, "eval_every": 3}}"#,
    )
    .unwrap();
    write_experiment(root, &d).unwrap();
    let units = expand_forks(&d).unwrap();
    for (k, u) in units.iter().enumerate() {
        let dir = unit_dir(root, &u.unit_id);
        std::fs::create_dir_all(&dir).unwrap();
        write_unit_header(&dir, u).unwrap();
        write_log(&dir, &synthetic_log(k)).unwrap();
    }
    units.into_iter().map(|u| u.unit_id).collect()
}

pub fn query(group_by: Option<&str>) -> ReportQuery {
    ReportQuery {
        variables: vec!["reward".into(), "x".into()],
        group_by: group_by.map(String::from),
        episode_kind: KindFilter::Train,
        resample_points: 4,
    }
}

pub struct Expected {
    pub mean: [f64; 4],
    pub std: [f64; 4],
    pub min: [f64; 4],
    pub max: [f64; 4],
}

pub const ORACLE: [(&str, &str, Expected); 4] = [
    (
        "0.1",
        "reward",
        Expected {
            mean: [0.9375, 1.875, 2.0625, 0.375],
            std: [0.1875, 0.5, 0.3125000000000001, 0.0],
            min: [0.75, 1.375, 1.7499999999999998, 0.375],
            max: [1.125, 2.375, 2.375, 0.375],
        },
    ),
    (
        "0.1",
        "x",
        Expected {
            mean: [0.5200000000000001, 0.0200000000000001, -0.7799999999999998, -1.2799999999999998],
            std: [0.5000000000000001, 0.5, 0.49999999999999994, 0.4999999999999999],
            min: [0.02, -0.4799999999999999, -1.2799999999999998, -1.7799999999999996],
            max: [1.0200000000000002, 0.5200000000000001, -0.27999999999999986, -0.7799999999999998],
        },
    ),
    (
        "0.5",
        "reward",
        Expected {
            mean: [1.6875, 1.6875, 1.6875, 0.375],
            std: [0.1875, 0.06249999999999978, 0.5625000000000004, 0.0],
            min: [1.5, 1.6250000000000002, 1.1249999999999996, 0.375],
            max: [1.875, 1.7499999999999998, 2.2500000000000004, 0.375],
        },
    ),
    (
        "0.5",
        "x",
        Expected {
            mean: [2.5199999999999996, 2.02, 1.2200000000000002, 0.7200000000000003],
            std: [0.5, 0.5, 0.5, 0.5000000000000001],
            min: [2.0199999999999996, 1.52, 0.7200000000000001, 0.2200000000000002],
            max: [3.0199999999999996, 2.52, 1.7200000000000002, 1.2200000000000004],
        },
    ),
];


/// An in-memory unit with one two-step training episode of constant
/// reward and the given eval episodes.
pub fn memory_unit(id: &str, evals: &[f64], train_value: f64) -> UnitResult {
    let mut episodes = vec![episode(0, EpisodeKind::Train, vec![(0.0, train_value); 2])];
    for (i, r) in evals.iter().enumerate() {
        episodes.push(episode(i + 1, EpisodeKind::Eval, vec![(0.0, *r)]));
    }
    UnitResult {
        unit_id: id.into(),
        assignments: BTreeMap::new(),
        resolved: None,
        log: Some(UnitLog { variables: variables(), episodes, status: RunStatus::pending() }),
        unreadable: None,
    }
}

/// Every criterion of the report oracle that fails, empty when all hold.
pub fn problems(root: &Path) -> Vec<String> {
    let mut out = Vec::new();
    build(root);
    let results = load_experiment(&root.join("syn")).unwrap();
    let series = run_query(&results, &query(Some("agent/alpha"))).unwrap();
    if series.len() != ORACLE.len() {
        out.push(format!("{} series", series.len()));
    }
    for (s, (group, var, exp)) in series.iter().zip(ORACLE.iter()) {
        if (s.group.as_str(), s.variable.as_str()) != (*group, *var) || s.mean != exp.mean || s.std != exp.std || s.min != exp.min || s.max != exp.max {
            out.push(format!("{group} {var} differs from the script"));
        }
    }
    let scores: Vec<Option<f64>> = results.units.iter().map(|u| last_eval_score(u, DEFAULT_LAST_K)).collect();
    if scores != [Some(1.3125), Some(0.9375), Some(1.875), Some(1.5)] {
        out.push(format!("scores {scores:?}"));
    }

    let style = PlotStyle { group_by: Some("agent/alpha".into()), title: "syn".into(), ..PlotStyle::default() };
    for pass in ["a", "b"] {
        emit_plot(&series, &style, &root.join(format!("plot-{pass}.svg"))).unwrap();
        emit_table(&series, &root.join(format!("table-{pass}.csv"))).unwrap();
    }
    for f in ["plot", "table"] {
        let ext = if f == "plot" { "svg" } else { "csv" };
        let a = std::fs::read(root.join(format!("{f}-a.{ext}"))).unwrap();
        let b = std::fs::read(root.join(format!("{f}-b.{ext}"))).unwrap();
        if a != b {
            out.push(format!("{f} output not byte-identical"));
        }
    }

    let (a, b) = (memory_unit("a", &[], 0.5), memory_unit("b", &[], 1.5));
    let q = ReportQuery { variables: vec!["reward".into()], group_by: None, episode_kind: KindFilter::Train, resample_points: 5 };
    let s = compute_series("all", &[&a, &b], "reward", &q).unwrap();
    if s.mean != [2.0; 5] || s.std != [1.0; 5] {
        out.push(format!("two constant series gave mean {:?} std {:?}", s.mean, s.std));
    }
    out
}
