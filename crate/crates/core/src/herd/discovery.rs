//! Finding workers: UDP probes for broadcast-capable networks and HELLO
//! handshakes against a static address list.

use std::collections::HashSet;
use std::net::{Ipv4Addr, Ipv6Addr, SocketAddr};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::net::UdpSocket;

use super::{handshake, WorkerDescriptor, PROTOCOL_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscoveredWorker {
    pub descriptor: WorkerDescriptor,
    /// Address of the job port.
    pub addr: SocketAddr,
}

pub fn probe_datagram() -> String {
    format!("SIMION?v{PROTOCOL_VERSION}")
}

fn dedup(found: Vec<DiscoveredWorker>) -> Vec<DiscoveredWorker> {
    let mut seen = HashSet::new();
    found.into_iter().filter(|w| seen.insert(w.descriptor.worker_id.clone())).collect()
}

/// Sends a probe to every target (broadcast or unicast) and collects replies
/// until `timeout` elapses. Workers answering more than once appear once.
pub async fn discover_workers(targets: &[SocketAddr], timeout: Duration) -> std::io::Result<Vec<DiscoveredWorker>> {
    let any: SocketAddr = if targets.iter().all(|t| t.is_ipv6()) && !targets.is_empty() {
        (Ipv6Addr::UNSPECIFIED, 0).into()
    } else {
        (Ipv4Addr::UNSPECIFIED, 0).into()
    };
    let sock = UdpSocket::bind(any).await?;
    sock.set_broadcast(true)?;
    let probe = probe_datagram();
    for t in targets {
        if let Err(e) = sock.send_to(probe.as_bytes(), t).await {
            log::debug!("probe to {t}: {e}");
        }
    }
    let mut found = Vec::new();
    let mut buf = vec![0u8; 64 * 1024];
    let deadline = tokio::time::Instant::now() + timeout;
    while let Ok(r) = tokio::time::timeout_at(deadline, sock.recv_from(&mut buf)).await {
        let Ok((n, from)) = r else { continue };
        match serde_json::from_slice::<WorkerDescriptor>(&buf[..n]) {
            Ok(d) if d.protocol_version == PROTOCOL_VERSION => {
                let addr = SocketAddr::new(from.ip(), d.job_port);
                found.push(DiscoveredWorker { descriptor: d, addr });
            }
            Ok(_) => {}
            Err(e) => log::debug!("bad discovery reply from {from}: {e}"),
        }
    }
    Ok(dedup(found))
}

/// Handshakes with each job address; unreachable workers are skipped.
pub async fn probe_workers(addrs: &[SocketAddr], timeout: Duration) -> Vec<DiscoveredWorker> {
    let probes = addrs.iter().map(|a| async move { (a, handshake(*a, timeout).await) });
    let mut found = Vec::new();
    for (addr, r) in futures::future::join_all(probes).await {
        match r {
            Ok((_, descriptor)) => found.push(DiscoveredWorker { descriptor, addr: *addr }),
            Err(e) => log::debug!("worker {addr}: {e}"),
        }
    }
    dedup(found)
}
