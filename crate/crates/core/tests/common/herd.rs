//! Loopback fixtures for the runner and the worker protocol.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use sweepherd::experiment::{expand_forks, parse_descriptor, ExperimentDescriptor};
use sweepherd::herd::{master_run, Worker, WorkerConfig};
use sweepherd::runner::log::DETERMINISTIC_FILES;
use sweepherd::runner::{run_local, unit_dir, CancelRegistry, RunState, RunStatus};

/// Two alphas times `seeds` seeds of sarsa on mountain-car.
pub fn descriptor(episodes: u64, seeds: usize) -> ExperimentDescriptor {
    let seeds: Vec<String> = (0..seeds).map(|s| (s * 7 + 1).to_string()).collect();
    parse_descriptor(&format!(
        r#"{{"name": "loop", "environment": {{"class": "mountain-car"}},
            "agent": {{"class": "sarsa", "alpha": {{"$fork": [0.1, 0.3]}}}},
            "run": {{"num_episodes": {episodes}, "eval_every": 5, "episode_max_steps": 300, "seed": {{"$fork": [{}]}}}}}}"#,
        seeds.join(",")
    ))
    .unwrap()
}

pub async fn worker(dir: &Path, id: &str, cores: u32) -> Worker {
    Worker::start(WorkerConfig {
        bind: "127.0.0.1:0".parse().unwrap(),
        discovery: Some("127.0.0.1:0".parse().unwrap()),
        cores,
        work_dir: dir.join(id),
        worker_id: Some(id.into()),
    })
    .await
    .unwrap()
}

/// `unit/file` for every deterministic log file that differs between the trees.
pub fn log_differences(d: &ExperimentDescriptor, a: &Path, b: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for u in expand_forks(d).unwrap() {
        for f in DETERMINISTIC_FILES {
            let x = std::fs::read(unit_dir(a, &u.unit_id).join(f)).ok();
            let y = std::fs::read(unit_dir(b, &u.unit_id).join(f)).ok();
            if x.is_none() || x != y {
                out.push(format!("{}/{f}", u.unit_id));
            }
        }
    }
    out
}

pub fn all_finished(s: &std::collections::BTreeMap<String, RunStatus>) -> bool {
    s.values().all(|s| s.state == RunState::Finished)
}

pub struct DeterminismOutcome {
    pub units: usize,
    pub finished: bool,
    pub jobs_diff: Vec<String>,
    pub distributed_diff: Vec<String>,
}

/// Runs the 8-unit descriptor with one job, four jobs and two loopback workers.
pub async fn determinism(root: &Path, episodes: u64) -> DeterminismOutcome {
    let d = descriptor(episodes, 4);
    let (one, four, dist) = (root.join("jobs1"), root.join("jobs4"), root.join("dist"));
    let s1 = run_local(&d, &one, 1, &|_| {}, &CancelRegistry::new()).unwrap();
    let s4 = run_local(&d, &four, 4, &|_| {}, &CancelRegistry::new()).unwrap();
    let a = worker(root, "w1", 2).await;
    let b = worker(root, "w2", 1).await;
    let sd = master_run(&d, &[a.job_addr(), b.job_addr()], &dist, &|_| {}, &CancelRegistry::new()).await.unwrap();
    a.shutdown();
    b.shutdown();
    DeterminismOutcome {
        units: sd.len(),
        finished: all_finished(&s1) && all_finished(&s4) && all_finished(&sd) && s1 == s4 && s1 == sd,
        jobs_diff: log_differences(&d, &one, &four),
        distributed_diff: log_differences(&d, &one, &dist),
    }
}

/// Cancels every unit once the first progress arrives. Returns whether all
/// units ended cancelled with a reported cancellation, and the slowest time
/// from request to that report.
pub async fn cancel_latency(root: &Path) -> (bool, Duration) {
    let d = descriptor(100_000, 1);
    let w = worker(root, "c", 2).await;
    let cancel = CancelRegistry::new();
    let started = Mutex::new(None::<Instant>);
    let latencies = Mutex::new(std::collections::BTreeMap::new());
    let r = master_run(
        &d,
        &[w.job_addr()],
        &root.join("out"),
        &|p| {
            if p.state == RunState::Running && p.fraction_done > 0.0 {
                let mut s = started.lock().unwrap();
                if s.is_none() {
                    *s = Some(Instant::now());
                    cancel.cancel_all();
                }
            }
            if p.state == RunState::Cancelled {
                if let Some(t0) = *started.lock().unwrap() {
                    latencies.lock().unwrap().insert(p.unit_id.clone(), t0.elapsed());
                }
            }
        },
        &cancel,
    )
    .await
    .unwrap();
    w.shutdown();
    let latencies = latencies.into_inner().unwrap();
    let ok = !r.is_empty() && r.values().all(|s| s.state == RunState::Cancelled) && latencies.len() == r.len();
    (ok, latencies.into_values().max().unwrap_or(Duration::MAX))
}

pub struct KillOutcome {
    pub units: usize,
    pub finished: bool,
    pub diff: Vec<String>,
}

/// Shuts one of two workers down at the first progress report, then compares
/// the recovered logs with a local run.
pub async fn killed_worker(root: &Path) -> KillOutcome {
    let d = descriptor(40, 4);
    let a = worker(root, "k1", 2).await;
    let b = worker(root, "k2", 2).await;
    let killed = AtomicBool::new(false);
    let out = root.join("out");
    let r = master_run(
        &d,
        &[a.job_addr(), b.job_addr()],
        &out,
        &|p| {
            if p.fraction_done > 0.0 && !killed.swap(true, Ordering::SeqCst) {
                b.shutdown();
            }
        },
        &CancelRegistry::new(),
    )
    .await
    .unwrap();
    a.shutdown();
    let local = root.join("local");
    run_local(&d, &local, 4, &|_| {}, &CancelRegistry::new()).unwrap();
    KillOutcome { units: r.len(), finished: all_finished(&r), diff: log_differences(&d, &local, &out) }
}
