//! Length-prefixed binary framing between host and algorithm.
//!
//! Every message is `u32 length` (little-endian, counts type byte + payload),
//! `u8 type`, payload.

use std::io::{self, Read, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{decode_payload, encode_frame_record, DatasetError, Frame, Payload, Pose, SensorKind, SensorSpec};

pub const MSG_INIT: u8 = 0x01;
pub const MSG_READY: u8 = 0x02;
pub const MSG_FRAME: u8 = 0x03;
pub const MSG_ESTIMATE: u8 = 0x04;
pub const MSG_EVENT: u8 = 0x05;
pub const MSG_SHUTDOWN: u8 = 0x06;

/// Inbound limit used by the host unless configured otherwise.
pub const DEFAULT_MAX_MESSAGE_LEN: u32 = 64 << 20;

const ESTIMATE_PAYLOAD_LEN: usize = 8 + 24 + 32 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrackingStatus {
    Ok,
    Lost,
    NoEstimate,
}

impl TrackingStatus {
    pub fn code(self) -> u8 {
        match self {
            TrackingStatus::Ok => 0,
            TrackingStatus::Lost => 1,
            TrackingStatus::NoEstimate => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(TrackingStatus::Ok),
            1 => Some(TrackingStatus::Lost),
            2 => Some(TrackingStatus::NoEstimate),
            _ => None,
        }
    }
}

/// FRAME body with the payload left encoded; decoding needs the sensor kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFrame {
    pub sensor_id: u32,
    pub timestamp_ns: u64,
    pub payload: Vec<u8>,
}

impl RawFrame {
    pub fn decode(&self, kind: SensorKind) -> Result<Payload, DatasetError> {
        decode_payload(kind, self.timestamp_ns, &self.payload)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub timestamp_ns: u64,
    pub translation: [f64; 3],
    pub wxyz: [f64; 4],
    pub status: TrackingStatus,
}

impl Estimate {
    pub fn from_pose(pose: &Pose, status: TrackingStatus) -> Self {
        Estimate {
            timestamp_ns: pose.timestamp_ns,
            translation: [pose.translation.x, pose.translation.y, pose.translation.z],
            wxyz: pose.wxyz(),
            status,
        }
    }

    pub fn no_estimate(timestamp_ns: u64) -> Self {
        Estimate { timestamp_ns, translation: [0.0; 3], wxyz: [1.0, 0.0, 0.0, 0.0], status: TrackingStatus::NoEstimate }
    }

    pub fn pose(&self) -> Result<Pose, DatasetError> {
        Pose::from_components(self.timestamp_ns, self.translation, self.wxyz)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// JSON `{"sensors": [...]}`.
    Init(String),
    Ready,
    Frame(RawFrame),
    Estimate(Estimate),
    /// UTF-8 JSON.
    Event(String),
    Shutdown,
}

impl Message {
    pub fn type_code(&self) -> u8 {
        match self {
            Message::Init(_) => MSG_INIT,
            Message::Ready => MSG_READY,
            Message::Frame(_) => MSG_FRAME,
            Message::Estimate(_) => MSG_ESTIMATE,
            Message::Event(_) => MSG_EVENT,
            Message::Shutdown => MSG_SHUTDOWN,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::Init(_) => "INIT",
            Message::Ready => "READY",
            Message::Frame(_) => "FRAME",
            Message::Estimate(_) => "ESTIMATE",
            Message::Event(_) => "EVENT",
            Message::Shutdown => "SHUTDOWN",
        }
    }

    pub fn init(sensors: &[SensorSpec]) -> Message {
        Message::Init(serde_json::json!({ "sensors": sensors }).to_string())
    }

    /// A FRAME message carrying a decoded frame.
    pub fn frame(frame: &Frame) -> Result<Message, DatasetError> {
        let mut buf = Vec::new();
        encode_frame_record(frame, &mut buf)?;
        Ok(Message::Frame(RawFrame { sensor_id: frame.sensor_id, timestamp_ns: frame.timestamp_ns, payload: buf.split_off(16) }))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut body = vec![self.type_code()];
        match self {
            Message::Init(s) | Message::Event(s) => body.extend_from_slice(s.as_bytes()),
            Message::Ready | Message::Shutdown => {}
            Message::Frame(f) => {
                body.extend_from_slice(&f.sensor_id.to_le_bytes());
                body.extend_from_slice(&f.timestamp_ns.to_le_bytes());
                body.extend_from_slice(&(f.payload.len() as u32).to_le_bytes());
                body.extend_from_slice(&f.payload);
            }
            Message::Estimate(e) => {
                body.extend_from_slice(&e.timestamp_ns.to_le_bytes());
                for v in e.translation.iter().chain(e.wxyz.iter()) {
                    body.extend_from_slice(&v.to_le_bytes());
                }
                body.push(e.status.code());
            }
        }
        let mut out = Vec::with_capacity(body.len() + 4);
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.extend_from_slice(&body);
        out
    }
}

/// Encodes `frame` as a FRAME message without an intermediate `RawFrame`.
pub fn encode_frame_message(frame: &Frame, out: &mut Vec<u8>) -> Result<(), DatasetError> {
    out.clear();
    out.extend_from_slice(&[0, 0, 0, 0, MSG_FRAME]);
    encode_frame_record(frame, out)?;
    let len = (out.len() - 4) as u32;
    out[..4].copy_from_slice(&len.to_le_bytes());
    Ok(())
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&msg.encode())?;
    w.flush()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolErrorKind {
    #[error("stream ended mid-message")]
    Truncated,
    #[error("declared length {length} exceeds limit {max}")]
    Oversize { length: u32, max: u32 },
    #[error("zero-length message")]
    ZeroLength,
    #[error("unknown message type 0x{0:02X}")]
    UnknownType(u8),
    #[error("malformed {message} payload: {reason}")]
    Malformed { message: &'static str, reason: String },
    #[error("io error: {0}")]
    Io(String),
}

/// A framing or decoding failure at `offset`, the first bad byte in the stream.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("protocol error at byte offset {offset}: {kind}")]
pub struct ProtocolError {
    pub offset: u64,
    pub kind: ProtocolErrorKind,
}

/// Incremental message decoder tracking the stream offset.
pub struct MessageReader<R> {
    input: R,
    offset: u64,
    max_len: u32,
    last_header_at: Option<Instant>,
}

impl<R: Read> MessageReader<R> {
    pub fn new(input: R) -> Self {
        Self::with_limit(input, DEFAULT_MAX_MESSAGE_LEN)
    }

    pub fn with_limit(input: R, max_len: u32) -> Self {
        MessageReader { input, offset: 0, max_len, last_header_at: None }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    /// When the length prefix of the most recent message arrived.
    pub fn last_header_at(&self) -> Option<Instant> {
        self.last_header_at
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<usize, ProtocolError> {
        let mut filled = 0;
        while filled < buf.len() {
            match self.input.read(&mut buf[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(ProtocolError { offset: self.offset + filled as u64, kind: ProtocolErrorKind::Io(e.to_string()) }),
            }
        }
        Ok(filled)
    }

    /// Next message, or `None` on a clean end of stream between messages.
    pub fn read_message(&mut self) -> Result<Option<Message>, ProtocolError> {
        let start = self.offset;
        let mut len = [0u8; 4];
        let n = self.fill(&mut len)?;
        if n == 0 {
            return Ok(None);
        }
        self.last_header_at = Some(Instant::now());
        if n < 4 {
            return Err(ProtocolError { offset: start + n as u64, kind: ProtocolErrorKind::Truncated });
        }
        let length = u32::from_le_bytes(len);
        if length == 0 {
            return Err(ProtocolError { offset: start, kind: ProtocolErrorKind::ZeroLength });
        }
        if length > self.max_len {
            return Err(ProtocolError { offset: start, kind: ProtocolErrorKind::Oversize { length, max: self.max_len } });
        }
        let mut ty = [0u8; 1];
        if self.fill(&mut ty)? == 0 {
            return Err(ProtocolError { offset: start + 4, kind: ProtocolErrorKind::Truncated });
        }
        let type_offset = start + 4;
        if !(MSG_INIT..=MSG_SHUTDOWN).contains(&ty[0]) {
            return Err(ProtocolError { offset: type_offset, kind: ProtocolErrorKind::UnknownType(ty[0]) });
        }
        let payload_len = (length - 1) as u64;
        let mut payload = Vec::new();
        let got = (&mut self.input)
            .take(payload_len)
            .read_to_end(&mut payload)
            .map_err(|e| ProtocolError { offset: type_offset + 1, kind: ProtocolErrorKind::Io(e.to_string()) })?;
        if (got as u64) < payload_len {
            return Err(ProtocolError { offset: type_offset + 1 + got as u64, kind: ProtocolErrorKind::Truncated });
        }
        let payload_offset = type_offset + 1;
        let msg = decode_body(ty[0], payload).map_err(|(rel, message, reason)| ProtocolError {
            offset: payload_offset + rel,
            kind: ProtocolErrorKind::Malformed { message, reason },
        })?;
        self.offset = start + 4 + length as u64;
        Ok(Some(msg))
    }
}

type BodyError = (u64, &'static str, String);

fn decode_body(ty: u8, payload: Vec<u8>) -> Result<Message, BodyError> {
    let utf8 = |name: &'static str, p: Vec<u8>| {
        String::from_utf8(p).map_err(|e| (e.utf8_error().valid_up_to() as u64, name, "invalid UTF-8".to_string()))
    };
    let empty = |name: &'static str, p: &[u8]| {
        if p.is_empty() {
            Ok(())
        } else {
            Err((0, name, format!("expected empty payload, got {} bytes", p.len())))
        }
    };
    match ty {
        MSG_INIT => Ok(Message::Init(utf8("INIT", payload)?)),
        MSG_READY => empty("READY", &payload).map(|_| Message::Ready),
        MSG_SHUTDOWN => empty("SHUTDOWN", &payload).map(|_| Message::Shutdown),
        MSG_EVENT => Ok(Message::Event(utf8("EVENT", payload)?)),
        MSG_FRAME => {
            if payload.len() < 16 {
                return Err((0, "FRAME", format!("header needs 16 bytes, got {}", payload.len())));
            }
            let sensor_id = u32::from_le_bytes(payload[0..4].try_into().unwrap());
            let timestamp_ns = u64::from_le_bytes(payload[4..12].try_into().unwrap());
            let body_len = u32::from_le_bytes(payload[12..16].try_into().unwrap()) as usize;
            if body_len != payload.len() - 16 {
                return Err((12, "FRAME", format!("payload_len {body_len} but {} bytes follow", payload.len() - 16)));
            }
            Ok(Message::Frame(RawFrame { sensor_id, timestamp_ns, payload: payload[16..].to_vec() }))
        }
        MSG_ESTIMATE => {
            if payload.len() != ESTIMATE_PAYLOAD_LEN {
                return Err((0, "ESTIMATE", format!("expected {ESTIMATE_PAYLOAD_LEN} bytes, got {}", payload.len())));
            }
            let f = |i: usize| f64::from_le_bytes(payload[8 + i * 8..16 + i * 8].try_into().unwrap());
            let values = [f(0), f(1), f(2), f(3), f(4), f(5), f(6)];
            if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                return Err((8 + 8 * i as u64, "ESTIMATE", "non-finite value".into()));
            }
            let status = TrackingStatus::from_code(payload[64])
                .ok_or_else(|| (64, "ESTIMATE", format!("unknown status {}", payload[64])))?;
            Ok(Message::Estimate(Estimate {
                timestamp_ns: u64::from_le_bytes(payload[0..8].try_into().unwrap()),
                translation: [values[0], values[1], values[2]],
                wxyz: [values[3], values[4], values[5], values[6]],
                status,
            }))
        }
        _ => unreachable!("type range checked by caller"),
    }
}
