use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{AnimoId, Color, EnergyBand};
use crate::ids::{DyadId, MsgId, Timestamp, UserId};

/// One line of the append-only event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub ts: Timestamp,
    pub dyad_id: DyadId,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Paired {
        user_a: UserId,
        user_b: UserId,
    },
    Sent {
        msg_id: MsgId,
        sender: UserId,
        receiver: UserId,
        animo_id: AnimoId,
        band: EnergyBand,
        color: Color,
    },
    Delivered {
        msg_id: MsgId,
        sender: UserId,
        receiver: UserId,
        vibrate: bool,
    },
    Lost {
        msg_id: MsgId,
        sender: UserId,
        receiver: UserId,
    },
    Read {
        msg_id: MsgId,
        sender: UserId,
        receiver: UserId,
    },
    Expired {
        msg_id: MsgId,
        sender: UserId,
        receiver: UserId,
    },
    StateChanged {
        user: UserId,
        band: EnergyBand,
        animo_id: AnimoId,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Paired { .. } => "paired",
            EventKind::Sent { .. } => "sent",
            EventKind::Delivered { .. } => "delivered",
            EventKind::Lost { .. } => "lost",
            EventKind::Read { .. } => "read",
            EventKind::Expired { .. } => "expired",
            EventKind::StateChanged { .. } => "state_changed",
        }
    }

    /// `(msg_id, sender, receiver)` for message lifecycle events.
    pub fn message(&self) -> Option<(&MsgId, &UserId, &UserId)> {
        match self {
            EventKind::Sent {
                msg_id,
                sender,
                receiver,
                ..
            }
            | EventKind::Delivered {
                msg_id,
                sender,
                receiver,
                ..
            }
            | EventKind::Lost {
                msg_id,
                sender,
                receiver,
            }
            | EventKind::Read {
                msg_id,
                sender,
                receiver,
            }
            | EventKind::Expired {
                msg_id,
                sender,
                receiver,
            } => Some((msg_id, sender, receiver)),
            EventKind::Paired { .. } | EventKind::StateChanged { .. } => None,
        }
    }
}

/// Destination for appended events.
pub trait EventSink {
    fn append(&mut self, event: &Event) -> io::Result<()>;
}

impl EventSink for Vec<Event> {
    fn append(&mut self, event: &Event) -> io::Result<()> {
        self.push(event.clone());
        Ok(())
    }
}

impl<S: EventSink + ?Sized> EventSink for Box<S> {
    fn append(&mut self, event: &Event) -> io::Result<()> {
        (**self).append(event)
    }
}

/// Writes each event as one JSON line and flushes after every append.
#[derive(Debug)]
pub struct JsonlSink<W: Write> {
    writer: W,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(writer: W) -> Self {
        Self { writer }
    }

    pub fn into_inner(self) -> W {
        self.writer
    }
}

impl<W: Write> EventSink for JsonlSink<W> {
    fn append(&mut self, event: &Event) -> io::Result<()> {
        write_event(&mut self.writer, event)?;
        self.writer.flush()
    }
}

fn write_event<W: Write>(w: &mut W, event: &Event) -> io::Result<()> {
    let mut line = serde_json::to_vec(event).map_err(io::Error::other)?;
    line.push(b'\n');
    w.write_all(&line)
}

pub fn write_jsonl<W: Write>(mut w: W, events: &[Event]) -> io::Result<()> {
    for e in events {
        write_event(&mut w, e)?;
    }
    w.flush()
}

#[derive(Debug, Error)]
pub enum LogReadError {
    #[error("event log io: {0}")]
    Io(#[from] io::Error),
    #[error("event log line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Parses a JSONL event log. Blank lines are skipped.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<Event>, LogReadError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|e| LogReadError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(event);
    }
    Ok(out)
}
