//! Random message streams fed to the frame decoder in random pieces.

use bytes::BytesMut;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sweepherd::herd::codec::MessageCodec;
use sweepherd::herd::{encode_message, Message, MessageType};
use tokio_util::codec::Decoder;

pub const KINDS: [MessageType; 11] = [
    MessageType::Hello,
    MessageType::HelloAck,
    MessageType::Dispatch,
    MessageType::Progress,
    MessageType::Cancel,
    MessageType::Cancelled,
    MessageType::Result,
    MessageType::ResultAck,
    MessageType::Error,
    MessageType::Ping,
    MessageType::Pong,
];

fn random_value(rng: &mut ChaCha8Rng, depth: u32) -> Value {
    match rng.random_range(0..if depth == 0 { 5 } else { 7 }) {
        0 => Value::Null,
        1 => json!(rng.random::<bool>()),
        2 => json!(rng.random::<i64>()),
        3 => json!(rng.random_range(-1e9..1e9)),
        4 => json!((0..rng.random_range(0..10)).map(|_| rng.random_range('a'..='z')).collect::<String>()),
        5 => Value::Array((0..rng.random_range(0..4)).map(|_| random_value(rng, depth - 1)).collect()),
        _ => Value::Object((0..rng.random_range(0..4)).map(|i| (format!("k{i}"), random_value(rng, depth - 1))).collect()),
    }
}

pub fn random_message(rng: &mut ChaCha8Rng) -> Message {
    let body = Value::Object((0..rng.random_range(0..4)).map(|i| (format!("f{i}"), random_value(rng, 2))).collect());
    Message { kind: KINDS[rng.random_range(0..KINDS.len())], seq: rng.random(), body }
}

/// Feeds `bytes` to one decoder in pieces cut at `cuts`.
pub fn decode_chunked(bytes: &[u8], cuts: &[usize]) -> Vec<Message> {
    let mut codec = MessageCodec::default();
    let mut buf = BytesMut::new();
    let mut out = Vec::new();
    let mut points: Vec<usize> = cuts.iter().map(|c| c % (bytes.len() + 1)).collect();
    points.push(bytes.len());
    points.sort();
    let mut at = 0;
    for p in points {
        buf.extend_from_slice(&bytes[at..p]);
        at = p;
        while let Some(m) = codec.decode(&mut buf).unwrap() {
            out.push(m);
        }
    }
    assert!(buf.is_empty());
    out
}

/// Number of `cases` random streams that do not survive re-chunking.
pub fn rechunk_failures(cases: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for _ in 0..cases {
        let msgs: Vec<Message> = (0..rng.random_range(1..5)).map(|_| random_message(&mut rng)).collect();
        let stream: Vec<u8> = msgs.iter().flat_map(|m| encode_message(m).unwrap()).collect();
        let cuts: Vec<usize> = (0..rng.random_range(0..stream.len().min(40) + 1)).map(|_| rng.random::<u32>() as usize).collect();
        if decode_chunked(&stream, &cuts) != msgs {
            failures += 1;
        }
    }
    failures
}
