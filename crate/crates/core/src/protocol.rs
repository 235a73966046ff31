//! Wire format between watch faces, the simulator and the relay.
//!
//! A frame is one JSON object terminated by `\n`. Top-level keys appear in
//! the fixed order `version, kind, msg_id, sender, ts, payload`; `msg_id`
//! and `sender` are omitted when absent. Decoding checks the version first,
//! then the kind, then the payload shape, then domain invariants, and maps
//! each failure onto its own [`ProtocolError`] variant.

use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::engine::{AnimoState, RawAnimoState, Shape};
use crate::ids::{DyadId, MsgId, Timestamp, UserId};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unknown frame kind {0:?}")]
    UnknownKind(String),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u64),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    Hello,
    Paired,
    SendAnimo,
    AnimoDelivered,
    MarkRead,
    ReadAck,
    Expired,
    Error,
}

impl Kind {
    pub const ALL: [Kind; 8] = [
        Kind::Hello,
        Kind::Paired,
        Kind::SendAnimo,
        Kind::AnimoDelivered,
        Kind::MarkRead,
        Kind::ReadAck,
        Kind::Expired,
        Kind::Error,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Hello => "hello",
            Kind::Paired => "paired",
            Kind::SendAnimo => "send_animo",
            Kind::AnimoDelivered => "animo_delivered",
            Kind::MarkRead => "mark_read",
            Kind::ReadAck => "read_ack",
            Kind::Expired => "expired",
            Kind::Error => "error",
        }
    }
}

impl FromStr for Kind {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Kind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ProtocolError::UnknownKind(s.to_owned()))
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Client introduction. Two users presenting the same `token` are paired.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hello {
    pub user_id: UserId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
}

/// Pairing confirmation. `ttl_secs` is the relay's peek lifetime, which
/// clients use for their countdown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paired {
    pub dyad_id: DyadId,
    pub partner: UserId,
    pub shape: Shape,
    pub ttl_secs: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub state: AnimoState,
    pub vibrate: bool,
    /// Last second at which a `mark_read` is still accepted.
    pub expires_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadAck {
    pub read_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpiryNotice {
    pub expired_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    MalformedFrame,
    UnknownKind,
    UnsupportedVersion,
    InvariantViolation,
    NotHello,
    NotPaired,
    AlreadyPaired,
    SelfPair,
    InvalidState,
    UnknownMessage,
    NotRecipient,
    AlreadyTerminal,
    ExpiredMessage,
    Unexpected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Hello(Hello),
    Paired(Paired),
    SendAnimo(AnimoState),
    AnimoDelivered(Delivery),
    MarkRead,
    ReadAck(ReadAck),
    Expired(ExpiryNotice),
    Error(ErrorBody),
}

impl Payload {
    pub fn kind(&self) -> Kind {
        match self {
            Payload::Hello(_) => Kind::Hello,
            Payload::Paired(_) => Kind::Paired,
            Payload::SendAnimo(_) => Kind::SendAnimo,
            Payload::AnimoDelivered(_) => Kind::AnimoDelivered,
            Payload::MarkRead => Kind::MarkRead,
            Payload::ReadAck(_) => Kind::ReadAck,
            Payload::Expired(_) => Kind::Expired,
            Payload::Error(_) => Kind::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub version: u32,
    pub msg_id: Option<MsgId>,
    pub sender: Option<UserId>,
    pub ts: Timestamp,
    pub payload: Payload,
}

impl Envelope {
    pub fn new(payload: Payload, ts: Timestamp) -> Self {
        Self {
            version: PROTOCOL_VERSION,
            msg_id: None,
            sender: None,
            ts,
            payload,
        }
    }

    pub fn with_msg_id(mut self, id: MsgId) -> Self {
        self.msg_id = Some(id);
        self
    }

    pub fn with_sender(mut self, sender: UserId) -> Self {
        self.sender = Some(sender);
        self
    }

    pub fn kind(&self) -> Kind {
        self.payload.kind()
    }

    pub fn hello(user_id: impl Into<UserId>, token: Option<String>, ts: Timestamp) -> Self {
        let user_id = user_id.into();
        Self::new(
            Payload::Hello(Hello {
                user_id: user_id.clone(),
                token,
            }),
            ts,
        )
        .with_sender(user_id)
    }

    pub fn error(code: ErrorCode, message: impl Into<String>, ts: Timestamp) -> Self {
        Self::new(
            Payload::Error(ErrorBody {
                code,
                message: message.into(),
            }),
            ts,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct WireEnvelope {
    version: Value,
    kind: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    msg_id: Option<MsgId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sender: Option<UserId>,
    ts: Timestamp,
    payload: Value,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDelivery {
    state: RawAnimoState,
    vibrate: bool,
    expires_at: Timestamp,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Empty {}

/// Serializes one envelope as a newline-terminated frame.
pub fn encode(envelope: &Envelope) -> Vec<u8> {
    let payload = match &envelope.payload {
        Payload::Hello(p) => serde_json::to_value(p),
        Payload::Paired(p) => serde_json::to_value(p),
        Payload::SendAnimo(p) => serde_json::to_value(p),
        Payload::AnimoDelivered(p) => serde_json::to_value(p),
        Payload::MarkRead => Ok(Value::Object(Default::default())),
        Payload::ReadAck(p) => serde_json::to_value(p),
        Payload::Expired(p) => serde_json::to_value(p),
        Payload::Error(p) => serde_json::to_value(p),
    }
    .expect("payload types serialize infallibly");
    let wire = WireEnvelope {
        version: Value::from(envelope.version),
        kind: Value::from(envelope.kind().as_str()),
        msg_id: envelope.msg_id.clone(),
        sender: envelope.sender.clone(),
        ts: envelope.ts,
        payload,
    };
    let mut out = serde_json::to_vec(&wire).expect("envelope serializes infallibly");
    out.push(b'\n');
    out
}

/// Parses and validates one frame. A single trailing `\n` (or `\r\n`) is
/// accepted; embedded newlines are not.
pub fn decode(frame: &[u8]) -> Result<Envelope, ProtocolError> {
    let text = std::str::from_utf8(frame).map_err(|e| ProtocolError::MalformedFrame(e.to_string()))?;
    let text = text.strip_suffix('\n').unwrap_or(text);
    let text = text.strip_suffix('\r').unwrap_or(text);
    if text.trim().is_empty() {
        return Err(ProtocolError::MalformedFrame("empty frame".into()));
    }
    if text.contains('\n') {
        return Err(ProtocolError::MalformedFrame("frame spans multiple lines".into()));
    }
    let wire: WireEnvelope = serde_json::from_str(text).map_err(malformed)?;

    let version = wire
        .version
        .as_u64()
        .ok_or_else(|| ProtocolError::MalformedFrame("version must be a non-negative integer".into()))?;
    if version != u64::from(PROTOCOL_VERSION) {
        return Err(ProtocolError::UnsupportedVersion(version));
    }
    let kind: Kind = wire
        .kind
        .as_str()
        .ok_or_else(|| ProtocolError::MalformedFrame("kind must be a string".into()))?
        .parse()?;

    let payload = match kind {
        Kind::Hello => Payload::Hello(typed(wire.payload)?),
        Kind::Paired => Payload::Paired(typed(wire.payload)?),
        Kind::SendAnimo => Payload::SendAnimo(checked_state(typed(wire.payload)?)?),
        Kind::AnimoDelivered => {
            let raw: RawDelivery = typed(wire.payload)?;
            Payload::AnimoDelivered(Delivery {
                state: checked_state(raw.state)?,
                vibrate: raw.vibrate,
                expires_at: raw.expires_at,
            })
        }
        Kind::MarkRead => {
            let Empty {} = typed(wire.payload)?;
            Payload::MarkRead
        }
        Kind::ReadAck => Payload::ReadAck(typed(wire.payload)?),
        Kind::Expired => Payload::Expired(typed(wire.payload)?),
        Kind::Error => Payload::Error(typed(wire.payload)?),
    };

    if let (Payload::Hello(h), Some(sender)) = (&payload, &wire.sender) {
        if &h.user_id != sender {
            return Err(ProtocolError::InvariantViolation(format!(
                "hello from {sender} claims user_id {}",
                h.user_id
            )));
        }
    }
    if let Payload::Paired(p) = &payload {
        if p.ttl_secs < 0 {
            return Err(ProtocolError::InvariantViolation("negative ttl".into()));
        }
    }

    Ok(Envelope {
        version: PROTOCOL_VERSION,
        msg_id: wire.msg_id,
        sender: wire.sender,
        ts: wire.ts,
        payload,
    })
}

fn malformed(e: serde_json::Error) -> ProtocolError {
    ProtocolError::MalformedFrame(e.to_string())
}

fn typed<T: DeserializeOwned>(v: Value) -> Result<T, ProtocolError> {
    serde_json::from_value(v).map_err(malformed)
}

fn checked_state(raw: RawAnimoState) -> Result<AnimoState, ProtocolError> {
    AnimoState::try_from(raw).map_err(|e| ProtocolError::InvariantViolation(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Color, EnergyBand};

    fn state() -> AnimoState {
        AnimoState::new("bounce", Shape::Circle, Color::Red, EnergyBand::High, 100).unwrap()
    }

    #[test]
    fn hello_frame_bytes() {
        let frame = encode(&Envelope::hello("alice", Some("t0k".into()), 5));
        assert_eq!(
            std::str::from_utf8(&frame).unwrap(),
            "{\"version\":1,\"kind\":\"hello\",\"sender\":\"alice\",\"ts\":5,\"payload\":{\"user_id\":\"alice\",\"token\":\"t0k\"}}\n"
        );
    }

    #[test]
    fn send_animo_decodes() {
        let frame = br#"{"version":1,"kind":"send_animo","sender":"alice","ts":7,"payload":{"animo_id":"bounce","shape":"circle","color":"red","band":"high","computed_at":100}}"#;
        let env = decode(frame).unwrap();
        assert_eq!(env.kind(), Kind::SendAnimo);
        assert_eq!(env.payload, Payload::SendAnimo(state()));
    }

    #[test]
    fn error_classes() {
        assert!(matches!(decode(b""), Err(ProtocolError::MalformedFrame(_))));
        assert!(matches!(decode(b"\n"), Err(ProtocolError::MalformedFrame(_))));
        assert!(matches!(decode(b"{not json"), Err(ProtocolError::MalformedFrame(_))));
        assert!(matches!(decode(b"[1,2]"), Err(ProtocolError::MalformedFrame(_))));
        assert_eq!(
            decode(br#"{"version":1,"kind":"dance_party","ts":0,"payload":{}}"#),
            Err(ProtocolError::UnknownKind("dance_party".into()))
        );
        assert_eq!(
            decode(br#"{"version":2,"kind":"hello","ts":0,"payload":{}}"#),
            Err(ProtocolError::UnsupportedVersion(2))
        );
        assert!(matches!(
            decode(br#"{"version":1,"kind":"send_animo","ts":0,"payload":{"animo_id":"bounce","shape":"circle","color":"white","band":"high","computed_at":0}}"#),
            Err(ProtocolError::InvariantViolation(_))
        ));
        assert!(matches!(
            decode(br#"{"version":1,"kind":"mark_read","ts":0,"payload":{"extra":1}}"#),
            Err(ProtocolError::MalformedFrame(_))
        ));
        assert!(matches!(
            decode(br#"{"version":1,"kind":"hello","sender":"bob","ts":0,"payload":{"user_id":"alice"}}"#),
            Err(ProtocolError::InvariantViolation(_))
        ));
        assert!(matches!(
            decode(b"{\"version\":1,\"kind\":\"mark_read\",\"ts\":0,\n\"payload\":{}}"),
            Err(ProtocolError::MalformedFrame(_))
        ));
    }

    #[test]
    fn mark_read_round_trips() {
        let env = Envelope::new(Payload::MarkRead, 12)
            .with_msg_id(MsgId::new("m7"))
            .with_sender(UserId::new("bob"));
        assert_eq!(decode(&encode(&env)).unwrap(), env);
    }
}
