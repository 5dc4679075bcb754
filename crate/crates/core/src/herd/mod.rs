//! Master/worker execution fabric: discovery, dispatch, progress, cancellation
//! and result collection over length-prefixed JSON frames.

pub mod codec;
pub mod discovery;
pub mod master;
pub mod worker;

use std::collections::BTreeMap;
use std::io::Read;
use std::net::SocketAddr;
use std::path::Path;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio_util::codec::Framed;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment::{ExperimentalUnit, RunSettings};
use crate::runner::{ProgressReport, RunStatus};

pub use codec::{decode_messages, encode_message, CodecError, Message, MessageCodec, MessageType};
pub use discovery::{discover_workers, probe_workers, DiscoveredWorker};
pub use master::master_run;
pub use worker::{Worker, WorkerConfig};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_JOB_PORT: u16 = 47357;
pub const DEFAULT_DISCOVERY_PORT: u16 = 47358;
pub const JOB_PORT_ENV: &str = "SIMION_WORKER_PORT";
pub const DISCOVERY_PORT_ENV: &str = "SIMION_DISCOVERY_PORT";
/// Raw archive bytes per RESULT frame.
pub const RESULT_CHUNK: usize = 4 * 1024 * 1024;

fn port_from_env(var: &str, default: u16) -> u16 {
    std::env::var(var).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

pub fn job_port() -> u16 {
    port_from_env(JOB_PORT_ENV, DEFAULT_JOB_PORT)
}

pub fn discovery_port() -> u16 {
    port_from_env(DISCOVERY_PORT_ENV, DEFAULT_DISCOVERY_PORT)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Os {
    Linux,
    Windows,
    Macos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    X86_64,
    Aarch64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerDescriptor {
    pub worker_id: String,
    pub hostname: String,
    pub os: Os,
    pub arch: Arch,
    pub total_cores: u32,
    pub free_cores: u32,
    pub protocol_version: u32,
    /// TCP port accepting job connections.
    pub job_port: u16,
}

impl WorkerDescriptor {
    pub fn host_os() -> Os {
        match std::env::consts::OS {
            "windows" => Os::Windows,
            "macos" => Os::Macos,
            _ => Os::Linux,
        }
    }

    pub fn host_arch() -> Arch {
        match std::env::consts::ARCH {
            "aarch64" => Arch::Aarch64,
            _ => Arch::X86_64,
        }
    }
}

#[derive(Debug, Error)]
pub enum HerdError {
    #[error("no capacity")]
    NoCapacity,
    #[error("protocol version mismatch: ours {ours}, theirs {theirs}")]
    Version { ours: u32, theirs: u32 },
    #[error("peer error {code}: {message}")]
    Peer { code: String, message: String },
    #[error("unexpected {0:?}")]
    Unexpected(MessageType),
    #[error("connection closed")]
    Closed,
    #[error("timed out")]
    Timeout,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloBody {
    pub protocol_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloAckBody {
    pub worker: WorkerDescriptor,
}

/// Units shipped to one worker for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobBundle {
    pub experiment: String,
    pub units: Vec<ExperimentalUnit>,
    pub run: RunSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressBody {
    pub reports: Vec<ProgressReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitsBody {
    pub unit_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBody {
    pub unit_id: String,
    pub status: RunStatus,
    pub chunk: u32,
    /// Set on the terminal chunk of the archive.
    pub last: bool,
    /// Base64 of at most [`RESULT_CHUNK`] archive bytes.
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

/// One framed TCP connection with per-direction sequence numbers.
pub struct Connection {
    framed: Framed<TcpStream, MessageCodec>,
    seq: codec::SeqState,
}

impl Connection {
    pub fn new(stream: TcpStream) -> Self {
        let _ = stream.set_nodelay(true);
        Connection { framed: Framed::new(stream, MessageCodec::default()), seq: Default::default() }
    }

    pub async fn send(&mut self, kind: MessageType, body: impl Serialize) -> Result<(), HerdError> {
        let m = Message::new(kind, self.seq.next_seq(), body);
        self.framed.send(m).await?;
        Ok(())
    }

    /// Next message; cancel-safe.
    pub async fn recv(&mut self) -> Result<Message, HerdError> {
        let m = self.framed.next().await.ok_or(HerdError::Closed)??;
        self.seq.accept(m.seq)?;
        Ok(m)
    }

    pub async fn send_error(&mut self, code: &str, message: impl Into<String>) {
        let body = ErrorBody { code: code.into(), message: message.into() };
        let _ = self.send(MessageType::Error, body).await;
    }
}

/// Connects and completes the HELLO exchange.
pub async fn handshake(addr: SocketAddr, timeout: Duration) -> Result<(Connection, WorkerDescriptor), HerdError> {
    let fut = async {
        let mut conn = Connection::new(TcpStream::connect(addr).await?);
        conn.send(MessageType::Hello, HelloBody { protocol_version: PROTOCOL_VERSION }).await?;
        let reply = conn.recv().await?;
        match reply.kind {
            MessageType::HelloAck => {
                let ack: HelloAckBody = reply.body_as()?;
                if ack.worker.protocol_version != PROTOCOL_VERSION {
                    return Err(HerdError::Version { ours: PROTOCOL_VERSION, theirs: ack.worker.protocol_version });
                }
                Ok((conn, ack.worker))
            }
            MessageType::Error => {
                let e: ErrorBody = reply.body_as()?;
                Err(HerdError::Peer { code: e.code, message: e.message })
            }
            other => Err(HerdError::Unexpected(other)),
        }
    };
    tokio::time::timeout(timeout, fut).await.map_err(|_| HerdError::Timeout)?
}

/// Assigns units to workers in proportion to their free cores: each unit
/// goes to the worker with the lowest load ratio after taking it, ties to the
/// earlier worker.
pub fn schedule<'u>(
    units: &'u [ExperimentalUnit],
    workers: &[WorkerDescriptor],
) -> Result<BTreeMap<String, Vec<&'u ExperimentalUnit>>, HerdError> {
    let able: Vec<&WorkerDescriptor> = workers.iter().filter(|w| w.free_cores > 0).collect();
    if able.is_empty() {
        return Err(HerdError::NoCapacity);
    }
    let mut load = vec![0u64; able.len()];
    let mut out: BTreeMap<String, Vec<&ExperimentalUnit>> = BTreeMap::new();
    for u in units {
        let best = (0..able.len())
            .min_by(|&a, &b| {
                let ra = (load[a] + 1) * able[b].free_cores as u64;
                let rb = (load[b] + 1) * able[a].free_cores as u64;
                ra.cmp(&rb).then(a.cmp(&b))
            })
            .expect("non-empty");
        load[best] += 1;
        out.entry(able[best].worker_id.clone()).or_default().push(u);
    }
    Ok(out)
}

/// Gzipped tar of the files in a unit directory, in name order.
pub fn pack_unit(dir: &Path) -> std::io::Result<Vec<u8>> {
    let mut names: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_ok_and(|t| t.is_file()))
        .map(|e| e.file_name())
        .collect();
    names.sort();
    let gz = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
    let mut tar = tar::Builder::new(gz);
    tar.mode(tar::HeaderMode::Deterministic);
    for n in names {
        tar.append_path_with_name(dir.join(&n), &n)?;
    }
    tar.into_inner()?.finish()
}

/// Replaces `dir` with the contents of an archive from [`pack_unit`].
pub fn unpack_unit(archive: &[u8], dir: &Path) -> std::io::Result<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir)?;
    }
    std::fs::create_dir_all(dir)?;
    let mut raw = Vec::new();
    flate2::read::GzDecoder::new(archive).read_to_end(&mut raw)?;
    tar::Archive::new(raw.as_slice()).unpack(dir)
}
