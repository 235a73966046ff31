use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use animo::protocol::{Delivery, Envelope, ErrorCode, ExpiryNotice, Paired, Payload, ProtocolError, ReadAck};
use animo::relay::{EventSink, Relay, RelayError, SendOutcome};
use animo::{Timestamp, UserId};
use tokio::sync::{mpsc, oneshot};

use crate::clock::Clock;

pub(crate) type ConnId = u64;
pub(crate) type Outbox = mpsc::UnboundedSender<Envelope>;

pub(crate) enum Command {
    Connect { conn: ConnId, outbox: Outbox },
    Frame { conn: ConnId, envelope: Envelope },
    BadFrame { conn: ConnId, error: ProtocolError },
    Disconnect { conn: ConnId },
    Sweep { done: Option<oneshot::Sender<()>> },
    Shutdown,
}

struct Conn {
    outbox: Outbox,
    user: Option<UserId>,
}

struct Hub<S: EventSink> {
    relay: Relay<S>,
    clock: Arc<dyn Clock>,
    registry_path: Option<PathBuf>,
    conns: HashMap<ConnId, Conn>,
    sessions: HashMap<UserId, ConnId>,
    waiting: HashMap<String, UserId>,
    last_now: Timestamp,
}

pub(crate) async fn run<S: EventSink>(
    relay: Relay<S>,
    clock: Arc<dyn Clock>,
    mut rx: mpsc::UnboundedReceiver<Command>,
    registry_path: Option<PathBuf>,
) -> Relay<S> {
    let mut hub = Hub {
        relay,
        clock,
        registry_path,
        conns: HashMap::new(),
        sessions: HashMap::new(),
        waiting: HashMap::new(),
        last_now: Timestamp::MIN,
    };
    while let Some(cmd) = rx.recv().await {
        match cmd {
            Command::Connect { conn, outbox } => {
                hub.conns.insert(conn, Conn { outbox, user: None });
            }
            Command::Frame { conn, envelope } => hub.on_frame(conn, envelope),
            Command::BadFrame { conn, error } => {
                let code = match error {
                    ProtocolError::MalformedFrame(_) => ErrorCode::MalformedFrame,
                    ProtocolError::UnknownKind(_) => ErrorCode::UnknownKind,
                    ProtocolError::UnsupportedVersion(_) => ErrorCode::UnsupportedVersion,
                    ProtocolError::InvariantViolation(_) => ErrorCode::InvariantViolation,
                };
                hub.reply_error(conn, code, error.to_string());
            }
            Command::Disconnect { conn } => hub.on_disconnect(conn),
            Command::Sweep { done } => {
                hub.sweep();
                if let Some(done) = done {
                    let _ = done.send(());
                }
            }
            Command::Shutdown => break,
        }
    }
    hub.relay
}

fn error_code(err: &RelayError) -> ErrorCode {
    match err {
        RelayError::AlreadyPaired(_) => ErrorCode::AlreadyPaired,
        RelayError::SelfPair(_) => ErrorCode::SelfPair,
        RelayError::NotPaired(_) => ErrorCode::NotPaired,
        RelayError::InvalidState(_) => ErrorCode::InvalidState,
        RelayError::UnknownMessage(_) => ErrorCode::UnknownMessage,
        RelayError::NotRecipient { .. } => ErrorCode::NotRecipient,
        RelayError::AlreadyTerminal { .. } => ErrorCode::AlreadyTerminal,
        RelayError::ExpiredMessage { .. } => ErrorCode::ExpiredMessage,
        _ => ErrorCode::Unexpected,
    }
}

impl<S: EventSink> Hub<S> {
    /// Wall time, held monotone so a stepped system clock cannot wedge the relay.
    fn now(&mut self) -> Timestamp {
        self.last_now = self.last_now.max(self.clock.now());
        self.last_now
    }

    fn send_to_conn(&self, conn: ConnId, envelope: Envelope) {
        if let Some(c) = self.conns.get(&conn) {
            let _ = c.outbox.send(envelope);
        }
    }

    fn send_to_user(&self, user: &UserId, envelope: Envelope) -> bool {
        match self.sessions.get(user) {
            Some(&conn) => {
                self.send_to_conn(conn, envelope);
                true
            }
            None => false,
        }
    }

    fn reply_error(&mut self, conn: ConnId, code: ErrorCode, message: impl Into<String>) {
        let ts = self.now();
        self.send_to_conn(conn, Envelope::error(code, message, ts));
    }

    fn on_frame(&mut self, conn: ConnId, envelope: Envelope) {
        let Some(state) = self.conns.get(&conn) else {
            return;
        };
        let user = state.user.clone();
        match (envelope.payload, user) {
            (Payload::Hello(hello), None) => self.on_hello(conn, hello.user_id, hello.token),
            (Payload::Hello(_), Some(_)) => {
                self.reply_error(conn, ErrorCode::InvalidState, "session already introduced")
            }
            (_, None) => self.reply_error(conn, ErrorCode::NotHello, "send hello first"),
            (Payload::SendAnimo(animo), Some(user)) => self.on_send(conn, user, animo),
            (Payload::MarkRead, Some(user)) => match envelope.msg_id {
                Some(msg_id) => self.on_read(conn, user, msg_id),
                None => self.reply_error(conn, ErrorCode::MalformedFrame, "mark_read needs msg_id"),
            },
            (payload, Some(_)) => self.reply_error(
                conn,
                ErrorCode::Unexpected,
                format!("{} is not accepted from clients", payload.kind()),
            ),
        }
    }

    fn on_hello(&mut self, conn: ConnId, user: UserId, token: Option<String>) {
        if let Some(&old) = self.sessions.get(&user) {
            if let Some(c) = self.conns.get_mut(&old) {
                c.user = None;
            }
        }
        self.conns.get_mut(&conn).expect("live connection").user = Some(user.clone());
        self.sessions.insert(user.clone(), conn);

        if self.relay.registry().dyad_of(&user).is_some() {
            self.announce_pairing(&user);
            return;
        }
        let Some(token) = token else {
            self.reply_error(conn, ErrorCode::NotPaired, "not paired; send hello with a token");
            return;
        };
        match self.waiting.get(&token) {
            Some(first) if *first != user => {
                let first = first.clone();
                let now = self.now();
                match self.relay.pair_users(first.clone(), user.clone(), now) {
                    Ok(_) => {
                        self.waiting.remove(&token);
                        self.save_registry();
                        self.announce_pairing(&first);
                        self.announce_pairing(&user);
                    }
                    Err(err) => self.reply_error(conn, error_code(&err), err.to_string()),
                }
            }
            _ => {
                self.waiting.retain(|_, u| *u != user);
                self.waiting.insert(token, user);
            }
        }
    }

    fn announce_pairing(&mut self, user: &UserId) {
        let ts = self.now();
        let dyad = self.relay.registry().dyad_of(user).expect("paired").clone();
        let partner = dyad.partner_of(user).expect("member").clone();
        let shape = dyad.shape_of(user).expect("member");
        let paired = Paired {
            dyad_id: dyad.dyad_id,
            partner,
            shape,
            ttl_secs: self.relay.config().ttl_secs,
        };
        self.send_to_user(user, Envelope::new(Payload::Paired(paired), ts));
    }

    fn save_registry(&self) {
        if let Some(path) = &self.registry_path {
            if let Err(err) = self.relay.registry().save_snapshot(path) {
                log::warn!("could not write registry snapshot {}: {err}", path.display());
            }
        }
    }

    fn on_send(&mut self, conn: ConnId, user: UserId, animo: animo::engine::AnimoState) {
        let now = self.now();
        let partner_online = self
            .relay
            .registry()
            .dyad_of(&user)
            .and_then(|d| d.partner_of(&user))
            .is_some_and(|p| self.sessions.contains_key(p));
        let result = if partner_online {
            self.relay.send_animo(&user, animo, now)
        } else {
            self.relay.send_animo_undeliverable(&user, animo, now)
        };
        let receipt = match result {
            Ok(r) => r,
            Err(err) => return self.reply_error(conn, error_code(&err), err.to_string()),
        };
        let echo = Envelope::new(Payload::SendAnimo(receipt.state.clone()), now)
            .with_msg_id(receipt.msg_id.clone())
            .with_sender(user.clone());
        self.send_to_conn(conn, echo);
        if let SendOutcome::Delivered {
            expires_at, vibrate, ..
        } = receipt.outcome
        {
            let delivery = Delivery {
                state: receipt.state,
                vibrate,
                expires_at,
            };
            let frame = Envelope::new(Payload::AnimoDelivered(delivery), now)
                .with_msg_id(receipt.msg_id)
                .with_sender(user);
            self.send_to_user(&receipt.receiver, frame);
        }
    }

    fn on_read(&mut self, conn: ConnId, user: UserId, msg_id: animo::MsgId) {
        let now = self.now();
        match self.relay.mark_read(&user, &msg_id, now) {
            Ok(receipt) => {
                let ack = Envelope::new(
                    Payload::ReadAck(ReadAck {
                        read_at: receipt.read_at,
                    }),
                    now,
                )
                .with_msg_id(receipt.msg_id);
                self.send_to_conn(conn, ack);
            }
            Err(err) => self.reply_error(conn, error_code(&err), err.to_string()),
        }
    }

    fn sweep(&mut self) {
        let now = self.now();
        match self.relay.expire_due(now) {
            Ok(expired) => {
                for e in expired {
                    let frame = Envelope::new(
                        Payload::Expired(ExpiryNotice {
                            expired_at: e.expired_at,
                        }),
                        now,
                    )
                    .with_msg_id(e.msg_id)
                    .with_sender(e.sender);
                    self.send_to_user(&e.receiver, frame);
                }
            }
            Err(err) => log::error!("expiry sweep failed: {err}"),
        }
    }

    fn on_disconnect(&mut self, conn: ConnId) {
        if let Some(c) = self.conns.remove(&conn) {
            if let Some(user) = c.user {
                if self.sessions.get(&user) == Some(&conn) {
                    self.sessions.remove(&user);
                }
                self.waiting.retain(|_, u| *u != user);
            }
        }
    }
}
