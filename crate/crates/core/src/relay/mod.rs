//! The relay: pairing registry, partner-only routing, the delivery
//! lifecycle and the event log.
//!
//! [`Relay`] is a single-writer state machine. Every mutation takes the
//! current time as an argument and appends to an [`EventSink`] before the
//! in-memory state changes, so the log is always a superset of what the
//! relay believes. Time must never go backwards across calls.
//!
//! Message lifecycle:
//!
//! ```text
//! Sent ──> Delivered ──> Read
//!   │          └───────> Expired
//!   └────> Lost
//! ```
//!
//! A delivered message is readable while `now - delivered_at <= ttl` and
//! expired strictly after that.

mod event;
mod registry;
mod replay;

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{AnimoState, Catalog};
use crate::ids::{DyadId, MsgId, Timestamp, UserId};

pub use event::{read_jsonl, write_jsonl, Event, EventKind, EventSink, JsonlSink, LogReadError};
pub use registry::{Dyad, Registry};
pub use replay::{replay, CorruptLog, ReplayOptions, ReplayState};

pub const DEFAULT_TTL_SECS: i64 = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelayError {
    #[error("{0} is already paired")]
    AlreadyPaired(UserId),
    #[error("{0} cannot pair with themselves")]
    SelfPair(UserId),
    #[error("{0} has no partner")]
    NotPaired(UserId),
    #[error("invalid animo state: {0}")]
    InvalidState(String),
    #[error("unknown message {0}")]
    UnknownMessage(MsgId),
    #[error("{user} is not the recipient of {msg_id}")]
    NotRecipient { msg_id: MsgId, user: UserId },
    #[error("message {msg_id} is already {state:?}")]
    AlreadyTerminal { msg_id: MsgId, state: DeliveryState },
    #[error("message {msg_id} expired {age}s after delivery")]
    ExpiredMessage { msg_id: MsgId, age: i64 },
    #[error("clock went backwards: {now} < {floor}")]
    ClockWentBackwards { now: Timestamp, floor: Timestamp },
    #[error("invalid relay config: {0}")]
    Config(String),
    #[error("event log: {0}")]
    Io(String),
    #[error("cannot resume from log: {0}")]
    Corrupt(#[from] CorruptLog),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelayConfig {
    pub ttl_secs: i64,
    /// Probability that a sent animo is dropped before delivery.
    pub loss: f64,
    /// Seed for the loss model.
    pub seed: u64,
}

impl Default for RelayConfig {
    fn default() -> Self {
        Self {
            ttl_secs: DEFAULT_TTL_SECS,
            loss: 0.0,
            seed: 0,
        }
    }
}

impl RelayConfig {
    pub fn validate(&self) -> Result<(), RelayError> {
        if self.ttl_secs < 0 {
            return Err(RelayError::Config(format!("ttl_secs {} is negative", self.ttl_secs)));
        }
        if !(0.0..=1.0).contains(&self.loss) {
            return Err(RelayError::Config(format!("loss {} outside [0, 1]", self.loss)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryState {
    Sent,
    Delivered,
    Lost,
    Read,
    Expired,
}

impl DeliveryState {
    pub fn can_become(self, next: DeliveryState) -> bool {
        use DeliveryState::*;
        matches!(
            (self, next),
            (Sent, Delivered) | (Sent, Lost) | (Delivered, Read) | (Delivered, Expired)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, DeliveryState::Lost | DeliveryState::Read | DeliveryState::Expired)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub msg_id: MsgId,
    pub dyad_id: DyadId,
    pub sender: UserId,
    pub receiver: UserId,
    pub state: DeliveryState,
    pub sent_at: Timestamp,
    pub delivered_at: Option<Timestamp>,
    pub read_at: Option<Timestamp>,
    pub expired_at: Option<Timestamp>,
    pub lost_at: Option<Timestamp>,
}

impl DeliveryRecord {
    fn transition(&mut self, next: DeliveryState, at: Timestamp) {
        debug_assert!(self.state.can_become(next), "{:?} -> {next:?}", self.state);
        self.state = next;
        let slot = match next {
            DeliveryState::Sent => return,
            DeliveryState::Delivered => &mut self.delivered_at,
            DeliveryState::Lost => &mut self.lost_at,
            DeliveryState::Read => &mut self.read_at,
            DeliveryState::Expired => &mut self.expired_at,
        };
        *slot = Some(at);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SendOutcome {
    /// The partner's session got the animo and a receive vibration.
    Delivered {
        delivered_at: Timestamp,
        expires_at: Timestamp,
        vibrate: bool,
    },
    Lost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SendReceipt {
    pub msg_id: MsgId,
    pub dyad_id: DyadId,
    pub receiver: UserId,
    pub state: AnimoState,
    pub sent_at: Timestamp,
    pub outcome: SendOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadReceipt {
    pub msg_id: MsgId,
    pub sender: UserId,
    pub read_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpiredMessage {
    pub msg_id: MsgId,
    pub sender: UserId,
    pub receiver: UserId,
    pub expired_at: Timestamp,
}

pub struct Relay<S: EventSink> {
    config: RelayConfig,
    catalog: Catalog,
    registry: Registry,
    records: HashMap<MsgId, DeliveryRecord>,
    /// Delivered and not yet terminal, ordered by delivery time.
    live: BTreeMap<(Timestamp, u64), MsgId>,
    next_msg: u64,
    next_seq: u64,
    clock_floor: Timestamp,
    rng: ChaCha8Rng,
    sink: S,
}

impl<S: EventSink> Relay<S> {
    pub fn new(config: RelayConfig, catalog: Catalog, sink: S) -> Result<Self, RelayError> {
        config.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            catalog,
            registry: Registry::new(),
            records: HashMap::new(),
            live: BTreeMap::new(),
            next_msg: 1,
            next_seq: 1,
            clock_floor: Timestamp::MIN,
            sink,
        })
    }

    /// Rebuilds relay state from an existing log; new events go to `sink`.
    pub fn resume(config: RelayConfig, catalog: Catalog, sink: S, history: &[Event]) -> Result<Self, RelayError> {
        let mut relay = Self::new(config, catalog, sink)?;
        let state = replay(history, ReplayOptions::default())?;
        relay.registry = state.registry;
        relay.next_seq = state.last_seq.map_or(1, |s| s + 1);
        relay.clock_floor = state.last_ts.unwrap_or(Timestamp::MIN);
        relay.next_msg = state.max_msg_number + 1;
        for (id, rec) in state.records {
            if rec.state == DeliveryState::Delivered {
                let n = relay.msg_number(&id);
                relay
                    .live
                    .insert((rec.delivered_at.unwrap_or(rec.sent_at), n), id.clone());
            }
            relay.records.insert(id, rec);
        }
        Ok(relay)
    }

    pub fn config(&self) -> &RelayConfig {
        &self.config
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn record(&self, msg_id: &MsgId) -> Option<&DeliveryRecord> {
        self.records.get(msg_id)
    }

    pub fn sink(&self) -> &S {
        &self.sink
    }

    pub fn into_sink(self) -> S {
        self.sink
    }

    /// Number of delivered messages still waiting to be read or to expire.
    pub fn pending_count(&self) -> usize {
        self.live.len()
    }

    fn msg_number(&self, id: &MsgId) -> u64 {
        id.as_str().strip_prefix('m').and_then(|n| n.parse().ok()).unwrap_or(0)
    }

    fn advance_clock(&mut self, now: Timestamp) -> Result<(), RelayError> {
        if now < self.clock_floor {
            return Err(RelayError::ClockWentBackwards {
                now,
                floor: self.clock_floor,
            });
        }
        self.clock_floor = now;
        Ok(())
    }

    fn append(&mut self, ts: Timestamp, dyad_id: DyadId, kind: EventKind) -> Result<Event, RelayError> {
        let event = Event {
            seq: self.next_seq,
            ts,
            dyad_id,
            kind,
        };
        self.sink.append(&event).map_err(|e| RelayError::Io(e.to_string()))?;
        self.next_seq += 1;
        Ok(event)
    }

    /// Pairs two free users; `user_a` gets circles and `user_b` diamonds.
    pub fn pair_users(&mut self, user_a: UserId, user_b: UserId, now: Timestamp) -> Result<Dyad, RelayError> {
        self.registry.check_pairable(&user_a, &user_b)?;
        self.advance_clock(now)?;
        let dyad = Dyad {
            dyad_id: self.registry.next_dyad_id(),
            user_a,
            user_b,
        };
        self.append(
            now,
            dyad.dyad_id.clone(),
            EventKind::Paired {
                user_a: dyad.user_a.clone(),
                user_b: dyad.user_b.clone(),
            },
        )?;
        self.registry.insert(dyad.clone());
        Ok(dyad)
    }

    /// Sends through the relay's own seeded loss model.
    pub fn send_animo(
        &mut self,
        sender: &UserId,
        state: AnimoState,
        now: Timestamp,
    ) -> Result<SendReceipt, RelayError> {
        let loss = self.config.loss;
        let mut rng = std::mem::replace(&mut self.rng, ChaCha8Rng::seed_from_u64(0));
        let out = self.send_animo_with(sender, state, now, loss, &mut rng);
        self.rng = rng;
        out
    }

    /// Sends with an explicit drop probability and random source.
    pub fn send_animo_with<R: Rng + ?Sized>(
        &mut self,
        sender: &UserId,
        state: AnimoState,
        now: Timestamp,
        loss: f64,
        rng: &mut R,
    ) -> Result<SendReceipt, RelayError> {
        if !(0.0..=1.0).contains(&loss) {
            return Err(RelayError::Config(format!("loss {loss} outside [0, 1]")));
        }
        self.send_inner(sender, state, now, |_| rng.random::<f64>() < loss)
    }

    /// Records a send whose receiver cannot currently be reached.
    pub fn send_animo_undeliverable(
        &mut self,
        sender: &UserId,
        state: AnimoState,
        now: Timestamp,
    ) -> Result<SendReceipt, RelayError> {
        self.send_inner(sender, state, now, |_| true)
    }

    fn send_inner(
        &mut self,
        sender: &UserId,
        state: AnimoState,
        now: Timestamp,
        is_dropped: impl FnOnce(&MsgId) -> bool,
    ) -> Result<SendReceipt, RelayError> {
        let dyad = self
            .registry
            .dyad_of(sender)
            .cloned()
            .ok_or_else(|| RelayError::NotPaired(sender.clone()))?;
        state
            .check_against(&self.catalog)
            .map_err(|e| RelayError::InvalidState(e.to_string()))?;
        if dyad.shape_of(sender) != Some(state.shape()) {
            return Err(RelayError::InvalidState(format!(
                "{sender} sends {:?} animos, got {:?}",
                dyad.shape_of(sender),
                state.shape()
            )));
        }
        self.advance_clock(now)?;
        let receiver = dyad.partner_of(sender).expect("dyad member").clone();
        let msg_id = MsgId::new(format!("m{}", self.next_msg));
        self.append(
            now,
            dyad.dyad_id.clone(),
            EventKind::Sent {
                msg_id: msg_id.clone(),
                sender: sender.clone(),
                receiver: receiver.clone(),
                animo_id: state.animo_id().clone(),
                band: state.band(),
                color: state.color(),
            },
        )?;
        let number = self.next_msg;
        self.next_msg += 1;
        let mut record = DeliveryRecord {
            msg_id: msg_id.clone(),
            dyad_id: dyad.dyad_id.clone(),
            sender: sender.clone(),
            receiver: receiver.clone(),
            state: DeliveryState::Sent,
            sent_at: now,
            delivered_at: None,
            read_at: None,
            expired_at: None,
            lost_at: None,
        };
        let lifecycle = |next| EventKind::message_event(next, &msg_id, sender, &receiver);
        let outcome = if is_dropped(&msg_id) {
            let appended = self.append(now, dyad.dyad_id.clone(), lifecycle(DeliveryState::Lost));
            if appended.is_ok() {
                record.transition(DeliveryState::Lost, now);
            }
            self.records.insert(msg_id.clone(), record);
            appended?;
            SendOutcome::Lost
        } else {
            let appended = self.append(now, dyad.dyad_id.clone(), lifecycle(DeliveryState::Delivered));
            if appended.is_ok() {
                record.transition(DeliveryState::Delivered, now);
                self.live.insert((now, number), msg_id.clone());
            }
            self.records.insert(msg_id.clone(), record);
            appended?;
            SendOutcome::Delivered {
                delivered_at: now,
                expires_at: now + self.config.ttl_secs,
                vibrate: true,
            }
        };
        Ok(SendReceipt {
            msg_id,
            dyad_id: dyad.dyad_id,
            receiver,
            state,
            sent_at: now,
            outcome,
        })
    }

    /// Marks a delivered animo as read by its receiver.
    pub fn mark_read(&mut self, receiver: &UserId, msg_id: &MsgId, now: Timestamp) -> Result<ReadReceipt, RelayError> {
        let rec = self
            .records
            .get(msg_id)
            .ok_or_else(|| RelayError::UnknownMessage(msg_id.clone()))?;
        if &rec.receiver != receiver {
            return Err(RelayError::NotRecipient {
                msg_id: msg_id.clone(),
                user: receiver.clone(),
            });
        }
        match rec.state {
            DeliveryState::Delivered => {}
            DeliveryState::Expired => {
                return Err(RelayError::ExpiredMessage {
                    msg_id: msg_id.clone(),
                    age: now - rec.delivered_at.unwrap_or(rec.sent_at),
                })
            }
            state => {
                return Err(RelayError::AlreadyTerminal {
                    msg_id: msg_id.clone(),
                    state,
                })
            }
        }
        let delivered_at = rec.delivered_at.expect("delivered record has delivered_at");
        let age = now - delivered_at;
        if age > self.config.ttl_secs {
            return Err(RelayError::ExpiredMessage {
                msg_id: msg_id.clone(),
                age,
            });
        }
        let (dyad_id, sender) = (rec.dyad_id.clone(), rec.sender.clone());
        self.advance_clock(now)?;
        self.append(
            now,
            dyad_id,
            EventKind::message_event(DeliveryState::Read, msg_id, &sender, receiver),
        )?;
        let number = self.msg_number(msg_id);
        self.live.remove(&(delivered_at, number));
        let rec = self.records.get_mut(msg_id).expect("record present");
        rec.transition(DeliveryState::Read, now);
        Ok(ReadReceipt {
            msg_id: msg_id.clone(),
            sender,
            read_at: now,
        })
    }

    /// Expires every delivered message older than the TTL and returns how many.
    pub fn expire_sweep(&mut self, now: Timestamp) -> Result<usize, RelayError> {
        self.expire_due(now).map(|v| v.len())
    }

    /// Like [`Relay::expire_sweep`] but reports which messages expired, so a
    /// server can notify receivers.
    pub fn expire_due(&mut self, now: Timestamp) -> Result<Vec<ExpiredMessage>, RelayError> {
        self.advance_clock(now)?;
        let cutoff = now - self.config.ttl_secs;
        let mut expired = Vec::new();
        while let Some((&(delivered_at, n), _)) = self.live.first_key_value() {
            if delivered_at >= cutoff {
                break;
            }
            let msg_id = self.live[&(delivered_at, n)].clone();
            let rec = &self.records[&msg_id];
            let (dyad_id, sender, receiver) = (rec.dyad_id.clone(), rec.sender.clone(), rec.receiver.clone());
            self.append(
                now,
                dyad_id,
                EventKind::message_event(DeliveryState::Expired, &msg_id, &sender, &receiver),
            )?;
            self.live.pop_first();
            self.records
                .get_mut(&msg_id)
                .expect("record present")
                .transition(DeliveryState::Expired, now);
            expired.push(ExpiredMessage {
                msg_id,
                sender,
                receiver,
                expired_at: now,
            });
        }
        Ok(expired)
    }

    /// Logs a state-change vibration for `user`.
    pub fn record_state_change(
        &mut self,
        user: &UserId,
        state: &AnimoState,
        now: Timestamp,
    ) -> Result<Event, RelayError> {
        let dyad_id = self
            .registry
            .dyad_of(user)
            .map(|d| d.dyad_id.clone())
            .ok_or_else(|| RelayError::NotPaired(user.clone()))?;
        self.advance_clock(now)?;
        self.append(
            now,
            dyad_id,
            EventKind::StateChanged {
                user: user.clone(),
                band: state.band(),
                animo_id: state.animo_id().clone(),
            },
        )
    }
}

impl EventKind {
    fn message_event(state: DeliveryState, msg_id: &MsgId, sender: &UserId, receiver: &UserId) -> EventKind {
        let (msg_id, sender, receiver) = (msg_id.clone(), sender.clone(), receiver.clone());
        match state {
            DeliveryState::Delivered => EventKind::Delivered {
                msg_id,
                sender,
                receiver,
                vibrate: true,
            },
            DeliveryState::Lost => EventKind::Lost {
                msg_id,
                sender,
                receiver,
            },
            DeliveryState::Read => EventKind::Read {
                msg_id,
                sender,
                receiver,
            },
            DeliveryState::Expired => EventKind::Expired {
                msg_id,
                sender,
                receiver,
            },
            DeliveryState::Sent => unreachable!("sent events carry the animo"),
        }
    }
}
