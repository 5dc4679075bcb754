//! Master side of a distributed run.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;

use super::*;
use crate::experiment::{expand_forks, ExperimentDescriptor, ExperimentalUnit};
use crate::runner::{unit_dir, write_experiment, CancelRegistry, ProgressReport, RunState, RunStatus};

const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);
/// A worker silent for this long is treated as lost.
const IDLE_TIMEOUT: Duration = Duration::from_secs(15);
const CANCEL_POLL: Duration = Duration::from_millis(50);
pub const NO_WORKERS: &str = "no_workers";

struct Board<'a> {
    statuses: Mutex<BTreeMap<String, RunStatus>>,
    progress: &'a (dyn Fn(&ProgressReport) + Sync),
}

impl Board<'_> {
    /// Applies an update unless it would move the unit backwards.
    fn update(&self, unit_id: &str, next: RunStatus) -> bool {
        let mut map = self.statuses.lock().expect("status map");
        let Some(cur) = map.get_mut(unit_id) else { return false };
        if cur.state.is_final() || !cur.state.can_become(next.state) || next.progress < cur.progress {
            return false;
        }
        *cur = next;
        let report = ProgressReport::new(unit_id, cur);
        drop(map);
        (self.progress)(&report);
        true
    }

    fn is_final(&self, unit_id: &str) -> bool {
        self.statuses.lock().expect("status map")[unit_id].state.is_final()
    }

    fn current(&self, unit_id: &str) -> RunStatus {
        self.statuses.lock().expect("status map")[unit_id].clone()
    }

    fn finish(&self, unit_id: &str, mut next: RunStatus) {
        let cur = self.current(unit_id);
        next.progress = next.progress.max(cur.progress);
        if cur.state == RunState::Pending && next.state == RunState::Finished {
            self.update(unit_id, RunStatus { state: RunState::Running, ..cur });
        }
        self.update(unit_id, next);
    }
}

/// Runs every unit of `d` on the workers at `workers`, unpacking results
/// under `root`. Units of a lost worker are re-dispatched once.
pub async fn master_run(
    d: &ExperimentDescriptor,
    workers: &[SocketAddr],
    root: &Path,
    progress: &(dyn Fn(&ProgressReport) + Sync),
    cancel: &CancelRegistry,
) -> anyhow::Result<BTreeMap<String, RunStatus>> {
    let units = expand_forks(d)?;
    write_experiment(root, d)?;
    let board = Board {
        statuses: Mutex::new(units.iter().map(|u| (u.unit_id.clone(), RunStatus::pending())).collect()),
        progress,
    };
    let mut attempts: HashMap<String, u32> = HashMap::new();
    let mut alive: Vec<SocketAddr> = workers.to_vec();

    loop {
        let mut pending: Vec<ExperimentalUnit> = Vec::new();
        for u in &units {
            if board.is_final(&u.unit_id) {
                continue;
            }
            if cancel.is_cancelled(&u.unit_id) {
                board.finish(&u.unit_id, RunStatus { state: RunState::Cancelled, ..board.current(&u.unit_id) });
            } else {
                pending.push(u.clone());
            }
        }
        if pending.is_empty() {
            break;
        }

        let mut conns = Vec::new();
        for addr in &alive {
            match handshake(*addr, CONNECT_TIMEOUT).await {
                Ok((c, w)) => conns.push((*addr, c, w)),
                Err(e) => log::warn!("worker {addr}: {e}"),
            }
        }
        let descriptors: Vec<WorkerDescriptor> = conns.iter().map(|(_, _, w)| w.clone()).collect();
        let plan = match schedule(&pending, &descriptors) {
            Ok(p) => p,
            Err(_) => {
                for u in &pending {
                    board.finish(&u.unit_id, RunStatus::failed(NO_WORKERS));
                }
                break;
            }
        };

        let sessions = conns.into_iter().filter_map(|(addr, conn, w)| {
            let assigned: Vec<ExperimentalUnit> = plan.get(&w.worker_id)?.iter().map(|u| (*u).clone()).collect();
            let board = &board;
            Some(async move {
                let ids: Vec<String> = assigned.iter().map(|u| u.unit_id.clone()).collect();
                let r = session(conn, &d.name, d, assigned, board, root, cancel).await;
                (addr, w, ids, r)
            })
        });
        let results = futures::future::join_all(sessions).await;

        alive.clear();
        for (addr, w, ids, r) in results {
            match r {
                Ok(()) => alive.push(addr),
                Err(e) => {
                    log::warn!("worker {} ({addr}) lost: {e}", w.worker_id);
                    for id in ids.iter().filter(|id| !board.is_final(id)) {
                        let n = attempts.entry(id.clone()).or_default();
                        if *n >= 1 {
                            board.finish(id, RunStatus::failed(format!("worker lost after retry: {e}")));
                        } else {
                            *n += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(board.statuses.into_inner().expect("status map"))
}

async fn session(
    mut conn: Connection,
    experiment: &str,
    d: &ExperimentDescriptor,
    units: Vec<ExperimentalUnit>,
    board: &Board<'_>,
    root: &Path,
    cancel: &CancelRegistry,
) -> Result<(), HerdError> {
    let mut remaining: BTreeSet<String> = units.iter().map(|u| u.unit_id.clone()).collect();
    let bundle = JobBundle { experiment: experiment.to_string(), units, run: d.run.clone() };
    conn.send(MessageType::Dispatch, bundle).await?;
    let mut archives: HashMap<String, Vec<u8>> = HashMap::new();
    let mut cancel_sent: BTreeSet<String> = BTreeSet::new();
    let mut poll = tokio::time::interval(CANCEL_POLL);
    let mut deadline = tokio::time::Instant::now() + IDLE_TIMEOUT;

    while !remaining.is_empty() {
        let m = tokio::select! {
            m = conn.recv() => m?,
            _ = poll.tick() => {
                let ids: Vec<String> = remaining
                    .iter()
                    .filter(|id| !cancel_sent.contains(*id) && cancel.is_cancelled(id))
                    .cloned()
                    .collect();
                if !ids.is_empty() {
                    cancel_sent.extend(ids.iter().cloned());
                    conn.send(MessageType::Cancel, UnitsBody { unit_ids: ids }).await?;
                }
                if tokio::time::Instant::now() > deadline {
                    return Err(HerdError::Timeout);
                }
                continue;
            }
        };
        deadline = tokio::time::Instant::now() + IDLE_TIMEOUT;
        match m.kind {
            MessageType::Progress => {
                for r in m.body_as::<ProgressBody>()?.reports {
                    if !remaining.contains(&r.unit_id) || r.state.is_final() {
                        continue;
                    }
                    let cur = board.current(&r.unit_id);
                    let next = RunStatus {
                        state: r.state,
                        progress: r.fraction_done,
                        avg_episode_reward: r.avg_episode_reward,
                        last_eval_reward: r.last_eval_reward,
                        diagnostic: cur.diagnostic.clone(),
                    };
                    board.update(&r.unit_id, next);
                }
            }
            MessageType::Result => {
                let b: ResultBody = m.body_as()?;
                let data = base64::engine::general_purpose::STANDARD
                    .decode(&b.data)
                    .map_err(|e| CodecError::Garbled(format!("result data: {e}")))?;
                archives.entry(b.unit_id.clone()).or_default().extend(data);
                if !b.last {
                    continue;
                }
                let bytes = archives.remove(&b.unit_id).unwrap_or_default();
                if remaining.remove(&b.unit_id) && !board.is_final(&b.unit_id) {
                    let status = if bytes.is_empty() {
                        b.status
                    } else {
                        match unpack_unit(&bytes, &unit_dir(root, &b.unit_id)) {
                            Ok(()) => b.status,
                            Err(e) => RunStatus::failed(format!("unpacking result: {e}")),
                        }
                    };
                    board.finish(&b.unit_id, status);
                }
                conn.send(MessageType::ResultAck, UnitsBody { unit_ids: vec![b.unit_id] }).await?;
            }
            MessageType::Cancelled => {
                for id in m.body_as::<UnitsBody>()?.unit_ids {
                    if remaining.remove(&id) {
                        board.finish(&id, RunStatus { state: RunState::Cancelled, diagnostic: None, ..board.current(&id) });
                    }
                }
            }
            MessageType::Ping => conn.send(MessageType::Pong, serde_json::json!({})).await?,
            MessageType::Pong => {}
            MessageType::Error => {
                let e: ErrorBody = m.body_as()?;
                return Err(HerdError::Peer { code: e.code, message: e.message });
            }
            other => return Err(HerdError::Unexpected(other)),
        }
    }
    Ok(())
}
