//! Executes experimental units: the train/evaluate schedule, logging and progress.

pub mod log;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{self, Agent, Mode};
use crate::env::{self, Environment, VariableDesc};
use crate::experiment::{canonical_json, expand_forks, serialize_descriptor, splitmix64, ExperimentDescriptor, ExperimentalUnit};
use log::{EpisodeKind, EpisodeLog, EpisodeSummary, LogRecord, LogWriter};

pub use log::{read_log, write_log, LogError, UnitLog};

/// Name of the experiment-level descriptor written next to the unit directories.
pub const EXPERIMENT_FILE: &str = "experiment.simx.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunState {
    Pending,
    Running,
    Finished,
    Failed,
    Cancelled,
}

impl RunState {
    pub fn is_final(self) -> bool {
        matches!(self, RunState::Finished | RunState::Failed | RunState::Cancelled)
    }

    /// pending -> running -> {finished, failed, cancelled}; pending may also
    /// end directly (cancelled before start, or no worker left).
    pub fn can_become(self, next: RunState) -> bool {
        use RunState::*;
        matches!(
            (self, next),
            (Pending, Running) | (Pending, Failed) | (Pending, Cancelled) | (Running, Finished) | (Running, Failed) | (Running, Cancelled)
        ) || self == next && !self.is_final()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub state: RunState,
    pub progress: f64,
    /// Running mean of completed training episodes' total reward.
    pub avg_episode_reward: Option<f64>,
    /// Mean total reward of the most recent evaluation point.
    pub last_eval_reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl RunStatus {
    pub fn pending() -> Self {
        RunStatus { state: RunState::Pending, progress: 0.0, avg_episode_reward: None, last_eval_reward: None, diagnostic: None }
    }

    pub fn failed(reason: impl Into<String>) -> Self {
        RunStatus { state: RunState::Failed, diagnostic: Some(reason.into()), ..RunStatus::pending() }
    }

    pub fn cancelled() -> Self {
        RunStatus { state: RunState::Cancelled, ..RunStatus::pending() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressReport {
    pub unit_id: String,
    pub state: RunState,
    pub fraction_done: f64,
    pub avg_episode_reward: Option<f64>,
    pub last_eval_reward: Option<f64>,
}

impl ProgressReport {
    pub fn new(unit_id: &str, s: &RunStatus) -> Self {
        ProgressReport {
            unit_id: unit_id.to_string(),
            state: s.state,
            fraction_done: s.progress,
            avg_episode_reward: s.avg_episode_reward,
            last_eval_reward: s.last_eval_reward,
        }
    }
}

/// Cooperative cancellation flag. A child token also observes its parent.
#[derive(Debug, Clone, Default)]
pub struct CancelToken {
    own: Arc<AtomicBool>,
    parent: Option<Arc<AtomicBool>>,
}

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn child(&self) -> Self {
        CancelToken { own: Arc::default(), parent: Some(self.own.clone()) }
    }

    pub fn cancel(&self) {
        self.own.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.own.load(Ordering::SeqCst) || self.parent.as_ref().is_some_and(|p| p.load(Ordering::SeqCst))
    }
}

/// Per-unit tokens of one job under a shared cancel-all token.
#[derive(Debug, Default)]
pub struct CancelRegistry {
    all: CancelToken,
    units: Mutex<BTreeMap<String, CancelToken>>,
}

impl CancelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn token(&self, unit_id: &str) -> CancelToken {
        let mut units = self.units.lock().expect("cancel registry");
        units.entry(unit_id.to_string()).or_insert_with(|| self.all.child()).clone()
    }

    pub fn cancel_unit(&self, unit_id: &str) {
        self.token(unit_id).cancel();
    }

    pub fn cancel_all(&self) {
        self.all.cancel();
    }

    pub fn is_cancelled(&self, unit_id: &str) -> bool {
        self.token(unit_id).is_cancelled()
    }

    pub fn all_cancelled(&self) -> bool {
        self.all.is_cancelled()
    }
}

/// One scheduled episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub kind: EpisodeKind,
    /// 1-based count of training episodes completed when this slot runs
    /// (evaluations) or finished by it (training).
    pub train_index: u64,
}

/// Training episodes with `eval_episodes` evaluations after every
/// `eval_every`-th one.
pub fn schedule(run: &crate::experiment::RunSettings) -> Vec<Slot> {
    let mut out = Vec::new();
    for t in 1..=run.num_episodes {
        out.push(Slot { kind: EpisodeKind::Train, train_index: t });
        if t % run.eval_every == 0 {
            for _ in 0..run.eval_episodes {
                out.push(Slot { kind: EpisodeKind::Eval, train_index: t });
            }
        }
    }
    out
}

/// Directory of a unit below the output root.
pub fn unit_dir(root: &Path, unit_id: &str) -> std::path::PathBuf {
    root.join(unit_id)
}

struct Episode<'a> {
    env: &'a mut dyn Environment,
    agent: &'a mut dyn Agent,
    variables: &'a [VariableDesc],
    actions: &'a [VariableDesc],
    max_steps: u64,
    log_every: u64,
}

impl Episode<'_> {
    fn run(&mut self, index: u64, kind: EpisodeKind, reset_seed: u64, rng: &mut ChaCha8Rng) -> Result<EpisodeLog, String> {
        let start = Instant::now();
        let mode = if kind == EpisodeKind::Train { Mode::Train } else { Mode::Eval };
        let dt = self.env.dt();
        let s0 = self.env.reset(reset_seed);
        let mut action = self.agent.begin_episode(&s0, mode, rng).map_err(|e| e.to_string())?;
        let mut records = Vec::new();
        let mut pending_reward = 0.0;
        let mut total = 0.0;
        let mut steps = 0;
        let mut terminal = false;
        for step in 1..=self.max_steps {
            let r = self.env.step(&action).map_err(|e| e.to_string())?;
            steps = step;
            terminal = r.terminal;
            pending_reward += r.reward;
            if step % self.log_every == 0 || terminal || step == self.max_steps {
                let mut values = r.next_state.clone();
                values.extend(action.iter().zip(self.actions).map(|(a, d)| d.clamp(*a)));
                values.push(pending_reward);
                if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                    return Err(format!("non-finite {} at step {step}", self.variables[i].name));
                }
                total += pending_reward;
                pending_reward = 0.0;
                records.push(LogRecord { step, sim_time: step as f64 * dt, values });
            }
            let next = self.agent.step(r.reward, &r.next_state, terminal, mode, rng).map_err(|e| e.to_string())?;
            if terminal {
                break;
            }
            action = next;
        }
        Ok(EpisodeLog {
            summary: EpisodeSummary { episode: index, kind, steps, total_reward: total, terminal },
            records,
            wall_ms: start.elapsed().as_millis() as u64,
        })
    }
}

fn unit_record(unit: &ExperimentalUnit) -> serde_json::Value {
    serde_json::json!({
        "unit_id": unit.unit_id,
        "index": unit.index,
        "seed": unit.seed,
        "assignments": unit.assignments,
    })
}

/// Writes `descriptor.resolved.json` and `unit.json` into `dir`.
pub fn write_unit_header(dir: &Path, unit: &ExperimentalUnit) -> Result<(), LogError> {
    log::write_file(&dir.join(log::RESOLVED_FILE), serialize_descriptor(&unit.resolved).as_bytes())?;
    log::write_file(&dir.join(log::UNIT_FILE), canonical_json(&unit_record(unit)).as_bytes())
}

/// Runs one unit into `unit_dir(root, unit_id)`. Progress is reported at
/// start, after every episode and at the end.
pub fn run_unit(
    unit: &ExperimentalUnit,
    root: &Path,
    progress: &mut dyn FnMut(&ProgressReport),
    cancel: &CancelToken,
) -> RunStatus {
    let dir = unit_dir(root, &unit.unit_id);
    let d = &unit.resolved;
    let mut status = RunStatus { state: RunState::Running, ..RunStatus::pending() };
    let fail = |status: &mut RunStatus, msg: String| {
        status.state = RunState::Failed;
        status.diagnostic = Some(msg);
    };

    if let Err(e) = std::fs::create_dir_all(&dir) {
        return RunStatus::failed(format!("{}: {e}", dir.display()));
    }
    if let Err(e) = write_unit_header(&dir, unit) {
        return RunStatus::failed(e.to_string());
    }

    let mut environment = match env::build(d.environment_class(), &d.environment) {
        Ok(e) => e,
        Err(e) => return finish_empty(&dir, &[], RunStatus::failed(e.to_string())),
    };
    let states = environment.state_vars();
    let actions = environment.action_vars();
    let mut variables = states.clone();
    variables.extend(actions.iter().cloned());
    variables.push(VariableDesc::new("reward", "", f64::NEG_INFINITY, f64::INFINITY));

    let mut writer = match LogWriter::create(&dir, &variables) {
        Ok(w) => w,
        Err(e) => return RunStatus::failed(e.to_string()),
    };
    let mut agent = match agents::build(&d.agent, &states, &actions) {
        Ok(a) => a,
        Err(e) => {
            let s = RunStatus::failed(e.to_string());
            let _ = writer.finish(&s);
            return s;
        }
    };

    let slots = schedule(&d.run);
    let total = slots.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(unit.seed);
    let mut train_sum = 0.0;
    let mut train_count = 0u64;
    let mut eval_block: Vec<f64> = Vec::new();

    if cancel.is_cancelled() {
        status.state = RunState::Cancelled;
    } else {
        progress(&ProgressReport::new(&unit.unit_id, &status));
    }
    let mut episode = Episode {
        env: environment.as_mut(),
        agent: agent.as_mut(),
        variables: &variables,
        actions: &actions,
        max_steps: d.run.episode_max_steps,
        log_every: d.run.log_every,
    };
    for (i, slot) in slots.iter().enumerate() {
        if status.state != RunState::Running {
            break;
        }
        if cancel.is_cancelled() {
            status.state = RunState::Cancelled;
            break;
        }
        let reset_seed = splitmix64(unit.seed.wrapping_add(i as u64 + 1));
        let ep = match episode.run(i as u64, slot.kind, reset_seed, &mut rng) {
            Ok(ep) => ep,
            Err(msg) => {
                fail(&mut status, format!("episode {i}: {msg}"));
                break;
            }
        };
        match slot.kind {
            EpisodeKind::Train => {
                train_sum += ep.summary.total_reward;
                train_count += 1;
                status.avg_episode_reward = Some(train_sum / train_count as f64);
                eval_block.clear();
            }
            EpisodeKind::Eval => {
                eval_block.push(ep.summary.total_reward);
                status.last_eval_reward = Some(eval_block.iter().sum::<f64>() / eval_block.len() as f64);
            }
        }
        if let Err(e) = writer.write_episode(&ep) {
            fail(&mut status, e.to_string());
            break;
        }
        status.progress = (i + 1) as f64 / total;
        progress(&ProgressReport::new(&unit.unit_id, &status));
    }
    if status.state == RunState::Running {
        status.state = RunState::Finished;
    }
    if let Err(e) = writer.finish(&status) {
        fail(&mut status, e.to_string());
    }
    progress(&ProgressReport::new(&unit.unit_id, &status));
    status
}

fn finish_empty(dir: &Path, variables: &[VariableDesc], status: RunStatus) -> RunStatus {
    match LogWriter::create(dir, variables).and_then(|w| w.finish(&status)) {
        Ok(()) => status,
        Err(e) => RunStatus::failed(format!("{}; {e}", status.diagnostic.unwrap_or_default())),
    }
}

/// Writes the experiment-level descriptor under `<root>/<name>/`.
pub fn write_experiment(root: &Path, d: &ExperimentDescriptor) -> Result<(), LogError> {
    let dir = root.join(&d.name);
    std::fs::create_dir_all(&dir).map_err(|source| LogError::Io { path: dir.clone(), source })?;
    log::write_file(&dir.join(EXPERIMENT_FILE), serialize_descriptor(d).as_bytes())
}

/// Runs `units` on `jobs` threads. Results are keyed by unit id.
pub fn run_units(
    units: &[ExperimentalUnit],
    root: &Path,
    jobs: usize,
    progress: &(dyn Fn(&ProgressReport) + Sync),
    cancel: &CancelRegistry,
) -> BTreeMap<String, RunStatus> {
    let next = AtomicUsize::new(0);
    let results = Mutex::new(BTreeMap::new());
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(units.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(unit) = units.get(i) else { break };
                let status = run_unit(unit, root, &mut |r| progress(r), &cancel.token(&unit.unit_id));
                results.lock().expect("results lock").insert(unit.unit_id.clone(), status);
            });
        }
    });
    results.into_inner().expect("results lock")
}

/// Expands and runs a whole descriptor on this machine.
pub fn run_local(
    d: &ExperimentDescriptor,
    root: &Path,
    jobs: usize,
    progress: &(dyn Fn(&ProgressReport) + Sync),
    cancel: &CancelRegistry,
) -> anyhow::Result<BTreeMap<String, RunStatus>> {
    let units = expand_forks(d)?;
    write_experiment(root, d)?;
    Ok(run_units(&units, root, jobs, progress, cancel))
}
