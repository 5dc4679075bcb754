//! Worker daemon: answers discovery probes and runs dispatched units within a
//! core budget.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::Engine;
use tokio::net::{TcpListener, TcpStream, UdpSocket};
use tokio::sync::{mpsc, Semaphore};
use tokio::task::JoinSet;
use tokio_util::sync::CancellationToken;

use super::*;
use crate::runner::{run_unit, unit_dir, CancelToken, ProgressReport, RunStatus};

const HELLO_TIMEOUT: Duration = Duration::from_secs(10);
const PROGRESS_PERIOD: Duration = Duration::from_millis(250);

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub bind: SocketAddr,
    /// UDP address for discovery probes; `None` disables discovery.
    pub discovery: Option<SocketAddr>,
    pub cores: u32,
    pub work_dir: PathBuf,
    /// Defaults to an id persisted in `work_dir`.
    pub worker_id: Option<String>,
}

struct Shared {
    worker_id: String,
    hostname: String,
    total: u32,
    job_port: u16,
    cores: Arc<Semaphore>,
    work_dir: PathBuf,
    shutdown: CancellationToken,
    jobs: AtomicU64,
}

impl Shared {
    fn descriptor(&self) -> WorkerDescriptor {
        WorkerDescriptor {
            worker_id: self.worker_id.clone(),
            hostname: self.hostname.clone(),
            os: WorkerDescriptor::host_os(),
            arch: WorkerDescriptor::host_arch(),
            total_cores: self.total,
            free_cores: (self.cores.available_permits() as u32).min(self.total),
            protocol_version: PROTOCOL_VERSION,
            job_port: self.job_port,
        }
    }
}

/// A running worker. Dropping the handle does not stop it; call [`Worker::shutdown`].
pub struct Worker {
    shared: Arc<Shared>,
    job_addr: SocketAddr,
    discovery_addr: Option<SocketAddr>,
    tasks: JoinSet<()>,
}

fn hostname() -> String {
    std::fs::read_to_string("/proc/sys/kernel/hostname")
        .ok()
        .or_else(|| std::env::var("HOSTNAME").ok())
        .or_else(|| std::env::var("COMPUTERNAME").ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "localhost".into())
}

fn stable_id(work_dir: &std::path::Path) -> std::io::Result<String> {
    let path = work_dir.join("worker_id");
    if let Ok(id) = std::fs::read_to_string(&path) {
        let id = id.trim().to_string();
        if !id.is_empty() {
            return Ok(id);
        }
    }
    let id = format!("{:016x}", rand::random::<u64>());
    std::fs::write(&path, format!("{id}\n"))?;
    Ok(id)
}

impl Worker {
    pub async fn start(cfg: WorkerConfig) -> Result<Worker, HerdError> {
        std::fs::create_dir_all(&cfg.work_dir)?;
        let worker_id = match cfg.worker_id {
            Some(id) => id,
            None => stable_id(&cfg.work_dir)?,
        };
        let listener = TcpListener::bind(cfg.bind).await?;
        let job_addr = listener.local_addr()?;
        let total = cfg.cores.max(1);
        let shared = Arc::new(Shared {
            worker_id,
            hostname: hostname(),
            total,
            job_port: job_addr.port(),
            cores: Arc::new(Semaphore::new(total as usize)),
            work_dir: cfg.work_dir,
            shutdown: CancellationToken::new(),
            jobs: AtomicU64::new(0),
        });
        let mut tasks = JoinSet::new();
        let mut discovery_addr = None;
        if let Some(addr) = cfg.discovery {
            let sock = UdpSocket::bind(addr).await?;
            discovery_addr = Some(sock.local_addr()?);
            tasks.spawn(answer_probes(sock, shared.clone()));
        }
        tasks.spawn(accept_loop(listener, shared.clone()));
        log::info!("worker {} listening on {job_addr}", shared.worker_id);
        Ok(Worker { shared, job_addr, discovery_addr, tasks })
    }

    pub fn job_addr(&self) -> SocketAddr {
        self.job_addr
    }

    pub fn discovery_addr(&self) -> Option<SocketAddr> {
        self.discovery_addr
    }

    pub fn descriptor(&self) -> WorkerDescriptor {
        self.shared.descriptor()
    }

    /// Stops accepting, cancels running units and drops every connection.
    pub fn shutdown(&self) {
        self.shared.shutdown.cancel();
    }

    pub async fn wait(mut self) {
        while self.tasks.join_next().await.is_some() {}
    }
}

async fn answer_probes(sock: UdpSocket, shared: Arc<Shared>) {
    let probe = super::discovery::probe_datagram();
    let mut buf = [0u8; 512];
    loop {
        let (n, from) = tokio::select! {
            _ = shared.shutdown.cancelled() => return,
            r = sock.recv_from(&mut buf) => match r {
                Ok(x) => x,
                Err(e) => {
                    log::warn!("discovery socket: {e}");
                    continue;
                }
            },
        };
        if &buf[..n] != probe.as_bytes() {
            continue;
        }
        let reply = serde_json::to_vec(&shared.descriptor()).expect("descriptor serializes");
        let _ = sock.send_to(&reply, from).await;
    }
}

async fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    let mut conns = JoinSet::new();
    loop {
        tokio::select! {
            _ = shared.shutdown.cancelled() => break,
            r = listener.accept() => match r {
                Ok((stream, peer)) => {
                    log::debug!("connection from {peer}");
                    conns.spawn(serve_connection(stream, shared.clone()));
                }
                Err(e) => log::warn!("accept: {e}"),
            },
            Some(_) = conns.join_next(), if !conns.is_empty() => {}
        }
    }
    while conns.join_next().await.is_some() {}
}

struct Active {
    cancel: CancelToken,
    latest: Arc<Mutex<Option<ProgressReport>>>,
}

struct Done {
    unit_id: String,
    status: RunStatus,
    archive: std::io::Result<Vec<u8>>,
}

async fn serve_connection(stream: TcpStream, shared: Arc<Shared>) {
    let mut conn = Connection::new(stream);
    let hello = match tokio::time::timeout(HELLO_TIMEOUT, conn.recv()).await {
        Ok(Ok(m)) => m,
        Ok(Err(HerdError::Codec(e))) => return conn.send_error("frame", e.to_string()).await,
        _ => return,
    };
    if hello.kind != MessageType::Hello {
        return conn.send_error("unexpected", format!("expected HELLO, got {:?}", hello.kind)).await;
    }
    match hello.body_as::<HelloBody>() {
        Ok(h) if h.protocol_version == PROTOCOL_VERSION => {}
        Ok(h) => {
            let msg = format!("worker speaks v{PROTOCOL_VERSION}, master v{}", h.protocol_version);
            return conn.send_error("version", msg).await;
        }
        Err(e) => return conn.send_error("frame", e.to_string()).await,
    }
    if conn.send(MessageType::HelloAck, HelloAckBody { worker: shared.descriptor() }).await.is_err() {
        return;
    }

    let job_root = shared.work_dir.join(format!("job-{}", shared.jobs.fetch_add(1, Ordering::SeqCst)));
    let (tx, mut rx) = mpsc::unbounded_channel::<Done>();
    let mut active: HashMap<String, Active> = HashMap::new();
    let mut ticker = tokio::time::interval(PROGRESS_PERIOD);
    let outcome: Result<(), HerdError> = loop {
        tokio::select! {
            _ = shared.shutdown.cancelled() => break Ok(()),
            m = conn.recv() => {
                let m = match m {
                    Ok(m) => m,
                    Err(HerdError::Closed) => break Ok(()),
                    Err(e) => break Err(e),
                };
                match m.kind {
                    MessageType::Dispatch => match m.body_as::<JobBundle>() {
                        Ok(job) => {
                            for unit in job.units {
                                if active.contains_key(&unit.unit_id) {
                                    continue;
                                }
                                let a = Active { cancel: CancelToken::new(), latest: Arc::default() };
                                spawn_unit(unit.clone(), job_root.clone(), &a, shared.cores.clone(), tx.clone());
                                active.insert(unit.unit_id, a);
                            }
                        }
                        Err(e) => break Err(e.into()),
                    },
                    MessageType::Cancel => {
                        let ids = m.body_as::<UnitsBody>().map(|b| b.unit_ids).unwrap_or_default();
                        let mut done = Vec::new();
                        for id in ids {
                            if let Some(a) = active.remove(&id) {
                                a.cancel.cancel();
                                done.push(id);
                            }
                        }
                        if conn.send(MessageType::Cancelled, UnitsBody { unit_ids: done }).await.is_err() {
                            break Ok(());
                        }
                    }
                    MessageType::ResultAck => {
                        if let Ok(b) = m.body_as::<UnitsBody>() {
                            for id in b.unit_ids {
                                let _ = std::fs::remove_dir_all(unit_dir(&job_root, &id));
                            }
                        }
                    }
                    MessageType::Ping => {
                        let _ = conn.send(MessageType::Pong, serde_json::json!({})).await;
                    }
                    MessageType::Error => break Ok(()),
                    other => conn.send_error("unexpected", format!("{other:?} is not a master message")).await,
                }
            }
            Some(done) = rx.recv() => {
                if active.remove(&done.unit_id).is_none() {
                    continue;
                }
                if let Err(e) = send_result(&mut conn, done).await {
                    break Err(e);
                }
            }
            _ = ticker.tick() => {
                let reports: Vec<ProgressReport> = active
                    .values()
                    .filter_map(|a| a.latest.lock().expect("progress slot").clone())
                    .collect();
                if !reports.is_empty() && conn.send(MessageType::Progress, ProgressBody { reports }).await.is_err() {
                    break Ok(());
                }
            }
        }
    };
    if let Err(e) = outcome {
        log::warn!("connection ended: {e}");
        if matches!(e, HerdError::Codec(_)) {
            conn.send_error("frame", e.to_string()).await;
        }
    }
    for a in active.values() {
        a.cancel.cancel();
    }
}

fn spawn_unit(
    unit: crate::experiment::ExperimentalUnit,
    root: PathBuf,
    a: &Active,
    cores: Arc<Semaphore>,
    tx: mpsc::UnboundedSender<Done>,
) {
    let cancel = a.cancel.clone();
    let latest = a.latest.clone();
    tokio::spawn(async move {
        let Ok(_permit) = cores.acquire_owned().await else { return };
        let unit_id = unit.unit_id.clone();
        let job = tokio::task::spawn_blocking(move || {
            let status = run_unit(&unit, &root, &mut |r| *latest.lock().expect("progress slot") = Some(r.clone()), &cancel);
            let archive = pack_unit(&unit_dir(&root, &unit.unit_id));
            (status, archive)
        });
        let (status, archive) = match job.await {
            Ok(x) => x,
            Err(e) => (RunStatus::failed(format!("runner panicked: {e}")), Ok(Vec::new())),
        };
        let _ = tx.send(Done { unit_id, status, archive });
    });
}

async fn send_result(conn: &mut Connection, done: Done) -> Result<(), HerdError> {
    let (status, bytes) = match done.archive {
        Ok(b) => (done.status, b),
        Err(e) => (RunStatus::failed(format!("packing logs: {e}")), Vec::new()),
    };
    let chunks: Vec<&[u8]> = if bytes.is_empty() { vec![&[][..]] } else { bytes.chunks(RESULT_CHUNK).collect() };
    let n = chunks.len();
    for (i, c) in chunks.into_iter().enumerate() {
        let body = ResultBody {
            unit_id: done.unit_id.clone(),
            status: status.clone(),
            chunk: i as u32,
            last: i + 1 == n,
            data: base64::engine::general_purpose::STANDARD.encode(c),
        };
        conn.send(MessageType::Result, body).await?;
    }
    Ok(())
}
