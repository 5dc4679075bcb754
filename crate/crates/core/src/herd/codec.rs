//! Wire framing: a 4-byte big-endian length followed by a UTF-8 JSON payload
//! `{"type", "seq", "body"}`.

use bytes::{Buf, BytesMut};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tokio_util::codec::{Decoder, Encoder, LengthDelimitedCodec};

pub const MAX_FRAME: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageType {
    Hello,
    HelloAck,
    Dispatch,
    Progress,
    Cancel,
    Cancelled,
    Result,
    ResultAck,
    Error,
    Ping,
    Pong,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    #[serde(rename = "type")]
    pub kind: MessageType,
    pub seq: u64,
    pub body: Value,
}

impl Message {
    pub fn new(kind: MessageType, seq: u64, body: impl Serialize) -> Self {
        let body = serde_json::to_value(body).expect("message body serializes");
        Message { kind, seq, body }
    }

    pub fn body_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T, CodecError> {
        serde_json::from_value(self.body.clone()).map_err(|e| CodecError::Garbled(format!("{:?} body: {e}", self.kind)))
    }
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("frame of {0} bytes exceeds the {MAX_FRAME}-byte limit")]
    Oversized(u64),
    #[error("garbled frame: {0}")]
    Garbled(String),
    #[error("sequence number {got} does not follow {last}")]
    Sequence { last: u64, got: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Frame codec for [`Message`]s; usable with `Framed` or by hand on a `BytesMut`.
#[derive(Debug)]
pub struct MessageCodec {
    inner: LengthDelimitedCodec,
    in_body: bool,
}

impl Default for MessageCodec {
    fn default() -> Self {
        let inner = LengthDelimitedCodec::builder()
            .length_field_length(4)
            .big_endian()
            .max_frame_length(MAX_FRAME)
            .new_codec();
        MessageCodec { inner, in_body: false }
    }
}

impl Decoder for MessageCodec {
    type Item = Message;
    type Error = CodecError;

    fn decode(&mut self, src: &mut BytesMut) -> Result<Option<Message>, CodecError> {
        let header = !self.in_body && src.len() >= 4;
        if header {
            let len = u32::from_be_bytes([src[0], src[1], src[2], src[3]]) as u64;
            if len > MAX_FRAME as u64 {
                return Err(CodecError::Oversized(len));
            }
        }
        let Some(frame) = self.inner.decode(src)? else {
            self.in_body |= header;
            return Ok(None);
        };
        self.in_body = false;
        let msg: Message = serde_json::from_slice(frame.chunk()).map_err(|e| CodecError::Garbled(e.to_string()))?;
        if !msg.body.is_object() {
            return Err(CodecError::Garbled("body is not an object".into()));
        }
        Ok(Some(msg))
    }
}

impl Encoder<Message> for MessageCodec {
    type Error = CodecError;

    fn encode(&mut self, msg: Message, dst: &mut BytesMut) -> Result<(), CodecError> {
        let payload = serde_json::to_vec(&msg).map_err(|e| CodecError::Garbled(e.to_string()))?;
        if payload.len() > MAX_FRAME {
            return Err(CodecError::Oversized(payload.len() as u64));
        }
        self.inner.encode(bytes::Bytes::from(payload), dst)?;
        Ok(())
    }
}

pub fn encode_message(msg: &Message) -> Result<Vec<u8>, CodecError> {
    let mut buf = BytesMut::new();
    MessageCodec::default().encode(msg.clone(), &mut buf)?;
    Ok(buf.to_vec())
}

/// Decodes every complete frame in `bytes`; trailing partial frames are an error.
pub fn decode_messages(bytes: &[u8]) -> Result<Vec<Message>, CodecError> {
    let mut codec = MessageCodec::default();
    let mut buf = BytesMut::from(bytes);
    let mut out = Vec::new();
    while let Some(m) = codec.decode(&mut buf)? {
        out.push(m);
    }
    if !buf.is_empty() {
        return Err(CodecError::Garbled(format!("{} trailing bytes", buf.len())));
    }
    Ok(out)
}

/// Per-direction sequence bookkeeping for one connection.
#[derive(Debug, Default)]
pub struct SeqState {
    next_out: u64,
    last_in: Option<u64>,
}

impl SeqState {
    pub fn next_seq(&mut self) -> u64 {
        self.next_out += 1;
        self.next_out
    }

    pub fn accept(&mut self, seq: u64) -> Result<(), CodecError> {
        match self.last_in {
            Some(last) if seq <= last => Err(CodecError::Sequence { last, got: seq }),
            _ => {
                self.last_in = Some(seq);
                Ok(())
            }
        }
    }
}
