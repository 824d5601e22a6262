//! Joint-state wire protocol: one JSON object per LF-terminated line.
//!
//! Keys appear in a fixed order (`seq`, `timestamp_us`, `gesture`,
//! `confidence`, `features`, `joints`) and reals carry at most nine
//! significant digits, so encoding is byte-stable and golden-testable.

mod server;

use serde::Deserialize;
use thiserror::Error;

use crate::kinematics::N_JOINTS;
use crate::templates::{GestureLabel, UnknownGesture};

pub use server::{NdjsonSubscriber, ServerConfig, ServerStats, StreamServer, Subscription};

#[derive(Debug, Error)]
pub enum WireError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("message is not one LF-terminated line")]
    Framing,
    #[error("malformed message: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{field} has {got} entries, expected {expected}")]
    Length {
        field: &'static str,
        got: usize,
        expected: usize,
    },
    #[error(transparent)]
    Gesture(#[from] UnknownGesture),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("websocket: {0}")]
    WebSocket(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseMessage {
    pub seq: u64,
    pub timestamp_us: u64,
    pub gesture: GestureLabel,
    pub confidence: f64,
    pub features: [f64; 4],
    pub joints: [f64; N_JOINTS],
}

impl PoseMessage {
    /// All-zero joints at rest; the message frozen in `docs/wire/golden.ndjson`.
    pub fn canonical_rest() -> Self {
        Self {
            seq: 0,
            timestamp_us: 0,
            gesture: GestureLabel::Rest,
            confidence: 1.0,
            features: [1.0, 0.25, -0.5, 0.125],
            joints: [0.0; N_JOINTS],
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        encode_message(self)
    }
}

/// Shortest decimal that round-trips the value rounded to nine significant digits.
pub fn format_real(x: f64) -> String {
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    let mut s = format!("{rounded}");
    if s == "-0" {
        s = "0".into();
    }
    s
}

fn push_array(out: &mut String, values: &[f64]) {
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format_real(*v));
    }
    out.push(']');
}

pub fn encode_message(m: &PoseMessage) -> Result<Vec<u8>, WireError> {
    if !m.confidence.is_finite() {
        return Err(WireError::NonFinite("confidence"));
    }
    if !m.features.iter().all(|v| v.is_finite()) {
        return Err(WireError::NonFinite("features"));
    }
    if !m.joints.iter().all(|v| v.is_finite()) {
        return Err(WireError::NonFinite("joints"));
    }
    let mut out = String::with_capacity(256);
    out.push_str("{\"seq\":");
    out.push_str(&m.seq.to_string());
    out.push_str(",\"timestamp_us\":");
    out.push_str(&m.timestamp_us.to_string());
    out.push_str(",\"gesture\":\"");
    out.push_str(m.gesture.name());
    out.push_str("\",\"confidence\":");
    out.push_str(&format_real(m.confidence));
    out.push_str(",\"features\":");
    push_array(&mut out, &m.features);
    out.push_str(",\"joints\":");
    push_array(&mut out, &m.joints);
    out.push_str("}\n");
    Ok(out.into_bytes())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMessage {
    seq: u64,
    timestamp_us: u64,
    gesture: String,
    confidence: f64,
    features: Vec<f64>,
    joints: Vec<f64>,
}

fn fixed<const N: usize>(field: &'static str, v: Vec<f64>) -> Result<[f64; N], WireError> {
    let got = v.len();
    v.try_into().map_err(|_| WireError::Length {
        field,
        got,
        expected: N,
    })
}

/// Parses one line; the trailing LF is optional, any other LF is rejected.
pub fn decode_message(bytes: &[u8]) -> Result<PoseMessage, WireError> {
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    if body.contains(&b'\n') {
        return Err(WireError::Framing);
    }
    let raw: RawMessage = serde_json::from_slice(body)?;
    Ok(PoseMessage {
        seq: raw.seq,
        timestamp_us: raw.timestamp_us,
        gesture: raw.gesture.parse()?,
        confidence: raw.confidence,
        features: fixed("features", raw.features)?,
        joints: fixed("joints", raw.joints)?,
    })
}
