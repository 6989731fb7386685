//! Wire protocol: length-prefixed canonical JSON frames.
//!
//! A frame is a 4-byte big-endian length `N` followed by `N` bytes of UTF-8
//! JSON. Every message object carries its type in `"t"` and the protocol
//! version in `"v"`. Encoding sorts object keys and emits no whitespace, so
//! it is deterministic.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

use crate::event::{Event, EventError, EventType, Payload};
use crate::registry::{Capability, Requirement};
use crate::solver::Derivation;

pub const PROTOCOL_VERSION: u64 = 1;
pub const MAX_FRAME_LEN: usize = 1 << 20;
pub const DEFAULT_PORT: u16 = 4715;
pub const PORT_ENV: &str = "HYPERWIRE_PORT";
pub const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);

/// Message type tags.
pub const MESSAGE_TYPES: [&str; 8] = [
    "HELLO",
    "WELCOME",
    "ANNOUNCE_CAPS",
    "ANNOUNCE_REQS",
    "EVENT",
    "WIRING_SET",
    "HEARTBEAT",
    "ERROR",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Device,
    App,
    Ui,
}

/// One event on the wire. Device events name a capability, deliveries to
/// applications name a requirement; exactly one of the two is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventFrame {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capability_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requirement_id: Option<String>,
    #[serde(rename = "type")]
    pub ty: EventType,
    pub ts_ns: u64,
    pub payload: Payload,
}

impl EventFrame {
    pub fn from_capability(capability_id: &str, e: &Event) -> Self {
        EventFrame {
            capability_id: Some(capability_id.to_string()),
            requirement_id: None,
            ty: e.event_type,
            ts_ns: e.timestamp,
            payload: e.payload.clone(),
        }
    }

    /// Wire form of a delivery; the event's `source_id` is the requirement.
    pub fn delivery(e: &Event) -> Self {
        EventFrame {
            capability_id: None,
            requirement_id: Some(e.source_id.clone()),
            ty: e.event_type,
            ts_ns: e.timestamp,
            payload: e.payload.clone(),
        }
    }

    /// The named capability or requirement.
    pub fn source(&self) -> &str {
        self.capability_id
            .as_deref()
            .or(self.requirement_id.as_deref())
            .unwrap_or_default()
    }

    /// Builds the event, checking the payload against the type.
    pub fn to_event(&self) -> Result<Event, EventError> {
        Event::new(self.source(), self.ty, self.ts_ns, self.payload.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Message {
    Hello {
        role: Role,
        name: String,
    },
    Welcome {
        assigned_id: String,
    },
    AnnounceCaps {
        capabilities: Vec<Capability>,
    },
    AnnounceReqs {
        requirements: Vec<Requirement>,
    },
    Event(EventFrame),
    /// Broker to application: the wiring now feeding a requirement.
    WiringSet {
        requirement_id: String,
        wiring: Derivation,
    },
    Heartbeat {},
    Error {
        code: String,
        detail: String,
    },
}

impl Message {
    pub fn error(code: &str, detail: impl Into<String>) -> Self {
        Message::Error {
            code: code.to_string(),
            detail: detail.into(),
        }
    }

    pub fn type_tag(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "HELLO",
            Message::Welcome { .. } => "WELCOME",
            Message::AnnounceCaps { .. } => "ANNOUNCE_CAPS",
            Message::AnnounceReqs { .. } => "ANNOUNCE_REQS",
            Message::Event(_) => "EVENT",
            Message::WiringSet { .. } => "WIRING_SET",
            Message::Heartbeat {} => "HEARTBEAT",
            Message::Error { .. } => "ERROR",
        }
    }

    /// Canonical JSON body of the frame.
    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("message serializes");
        v.as_object_mut()
            .expect("message is an object")
            .insert("v".into(), PROTOCOL_VERSION.into());
        v.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("frame truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("frame length {0} exceeds the limit")]
    TooLong(u64),
    #[error("{0} bytes after the frame")]
    Trailing(usize),
    #[error("frame is not UTF-8")]
    Utf8,
    #[error("frame is not JSON: {0}")]
    Json(String),
    #[error("unknown message type `{0}`")]
    UnknownType(String),
    #[error("unsupported protocol version {0}")]
    Version(String),
    #[error("schema violation: {0}")]
    Schema(String),
}

impl DecodeError {
    pub fn code(&self) -> &'static str {
        match self {
            DecodeError::Truncated { .. } => "truncated",
            DecodeError::TooLong(_) => "too_long",
            DecodeError::Trailing(_) => "trailing",
            DecodeError::Utf8 => "utf8",
            DecodeError::Json(_) => "json",
            DecodeError::UnknownType(_) => "unknown_type",
            DecodeError::Version(_) => "version",
            DecodeError::Schema(_) => "schema",
        }
    }
}

/// Length prefix followed by the canonical JSON body.
pub fn encode_frame(m: &Message) -> Vec<u8> {
    let body = m.to_json();
    assert!(body.len() <= MAX_FRAME_LEN, "message exceeds the frame limit");
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body.as_bytes());
    out
}

/// Decodes exactly one frame.
pub fn decode_frame(bytes: &[u8]) -> Result<Message, DecodeError> {
    if bytes.len() < 4 {
        return Err(DecodeError::Truncated {
            need: 4,
            have: bytes.len(),
        });
    }
    let n = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    if n > MAX_FRAME_LEN {
        return Err(DecodeError::TooLong(n as u64));
    }
    let have = bytes.len() - 4;
    if have < n {
        return Err(DecodeError::Truncated { need: n, have });
    }
    if have > n {
        return Err(DecodeError::Trailing(have - n));
    }
    decode_body(&bytes[4..])
}

/// Decodes a frame body (the bytes after the length prefix).
pub fn decode_body(body: &[u8]) -> Result<Message, DecodeError> {
    let text = std::str::from_utf8(body).map_err(|_| DecodeError::Utf8)?;
    let value: Value = serde_json::from_str(text).map_err(|e| DecodeError::Json(e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(DecodeError::Schema("frame is not an object".into()));
    };
    match obj.remove("v") {
        Some(Value::Number(n)) if n.as_u64() == Some(PROTOCOL_VERSION) => {}
        Some(v @ Value::Number(_)) => return Err(DecodeError::Version(v.to_string())),
        Some(_) => return Err(DecodeError::Schema("\"v\" is not a number".into())),
        None => return Err(DecodeError::Schema("missing \"v\"".into())),
    }
    match obj.get("t") {
        Some(Value::String(t)) if MESSAGE_TYPES.contains(&t.as_str()) => {}
        Some(Value::String(t)) => return Err(DecodeError::UnknownType(t.clone())),
        Some(_) => return Err(DecodeError::Schema("\"t\" is not a string".into())),
        None => return Err(DecodeError::Schema("missing \"t\"".into())),
    }
    let m: Message = serde_json::from_value(Value::Object(obj)).map_err(|e| DecodeError::Schema(e.to_string()))?;
    check(&m)?;
    Ok(m)
}

fn check(m: &Message) -> Result<(), DecodeError> {
    if let Message::Event(f) = m {
        if f.capability_id.is_some() == f.requirement_id.is_some() {
            return Err(DecodeError::Schema(
                "EVENT needs exactly one of capability_id, requirement_id".into(),
            ));
        }
        if f.payload.len() != usize::from(f.ty.arity()) {
            return Err(DecodeError::Schema(format!(
                "EVENT payload has {} components, {} needs {}",
                f.payload.len(),
                f.ty,
                f.ty.arity()
            )));
        }
        if f.ty.is_text() != matches!(f.payload, Payload::Text(_)) {
            return Err(DecodeError::Schema(format!("EVENT payload kind does not fit {}", f.ty)));
        }
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Reads one frame. `Ok(None)` on a clean end of stream between frames.
pub async fn read_message<R: AsyncRead + Unpin>(r: &mut R) -> Result<Option<Message>, TransportError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let n = r.read(&mut len[got..]).await?;
        if n == 0 {
            if got == 0 {
                return Ok(None);
            }
            return Err(DecodeError::Truncated { need: 4, have: got }.into());
        }
        got += n;
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME_LEN {
        return Err(DecodeError::TooLong(n as u64).into());
    }
    let mut body = vec![0u8; n];
    r.read_exact(&mut body).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => TransportError::Decode(DecodeError::Truncated { need: n, have: 0 }),
        _ => e.into(),
    })?;
    Ok(Some(decode_body(&body)?))
}

pub async fn write_message<W: AsyncWrite + Unpin>(w: &mut W, m: &Message) -> std::io::Result<()> {
    w.write_all(&encode_frame(m)).await?;
    w.flush().await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hello_is_canonical() {
        let m = Message::Hello {
            role: Role::Device,
            name: "x".into(),
        };
        let body = br#"{"name":"x","role":"device","t":"HELLO","v":1}"#;
        let mut want = (body.len() as u32).to_be_bytes().to_vec();
        want.extend_from_slice(body);
        assert_eq!(encode_frame(&m), want);
        assert_eq!(decode_frame(&want).unwrap(), m);
    }

    #[test]
    fn prefix_counts_body_bytes() {
        let body = br#"{"t":"HELLO","v":1}"#;
        assert_eq!((body.len() as u32).to_be_bytes(), [0, 0, 0, 0x13]);
        let mut frame = vec![0, 0, 0, 0x13];
        frame.extend_from_slice(body);
        // the prefix is right but the message lacks its fields
        assert_eq!(decode_frame(&frame).unwrap_err().code(), "schema");
    }

    #[test]
    fn error_codes_are_distinct() {
        let frame = |body: &str| {
            let mut f = (body.len() as u32).to_be_bytes().to_vec();
            f.extend_from_slice(body.as_bytes());
            f
        };
        let cases: Vec<(Vec<u8>, &str)> = vec![
            (vec![0, 0], "truncated"),
            (vec![0, 0, 0, 5, b'{'], "truncated"),
            (vec![0, 0x20, 0, 0, b'{'], "too_long"),
            ([frame("{}"), vec![0]].concat(), "trailing"),
            (vec![0, 0, 0, 1, 0xff], "utf8"),
            (frame("{"), "json"),
            (frame(r#"{"t":"NOPE","v":1}"#), "unknown_type"),
            (frame(r#"{"t":"HEARTBEAT","v":2}"#), "version"),
            (frame(r#"{"t":"HEARTBEAT"}"#), "schema"),
            (frame("[]"), "schema"),
        ];
        for (bytes, code) in cases {
            assert_eq!(decode_frame(&bytes).unwrap_err().code(), code, "{bytes:?}");
        }
    }

    #[test]
    fn event_arity_is_checked() {
        let body = r#"{"capability_id":"a","payload":[0.5],"t":"EVENT","ts_ns":1,"type":"axis/2/unit_signed/absolute","v":1}"#;
        assert_eq!(decode_body(body.as_bytes()).unwrap_err().code(), "schema");
        let body = r#"{"payload":[0.5],"t":"EVENT","ts_ns":1,"type":"axis/1/unit_signed/absolute","v":1}"#;
        assert_eq!(decode_body(body.as_bytes()).unwrap_err().code(), "schema");
    }

    #[test]
    fn heartbeat_round_trips() {
        let f = encode_frame(&Message::Heartbeat {});
        assert_eq!(&f[4..], br#"{"t":"HEARTBEAT","v":1}"#);
        assert_eq!(decode_frame(&f).unwrap(), Message::Heartbeat {});
    }

    #[tokio::test]
    async fn stream_reads_frames_in_order() {
        let mut bytes = encode_frame(&Message::Heartbeat {});
        bytes.extend(encode_frame(&Message::error("handshake", "x")));
        let mut r = &bytes[..];
        assert_eq!(read_message(&mut r).await.unwrap(), Some(Message::Heartbeat {}));
        assert_eq!(read_message(&mut r).await.unwrap(), Some(Message::error("handshake", "x")));
        assert_eq!(read_message(&mut r).await.unwrap(), None);
    }
}
