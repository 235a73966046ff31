//! Log validation: rebuilds registry and delivery records from an event log
//! and rejects anything the relay could not have produced.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{DeliveryRecord, DeliveryState, Dyad, Event, EventKind, Registry};
use crate::ids::{MsgId, Timestamp};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("corrupt log at seq {seq}: {reason}")]
pub struct CorruptLog {
    pub seq: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReplayOptions {
    /// When set, reads must happen within the TTL of delivery and expiries
    /// strictly after it.
    pub ttl_secs: Option<i64>,
}

#[derive(Debug, Clone, Default)]
pub struct ReplayState {
    pub registry: Registry,
    pub records: BTreeMap<MsgId, DeliveryRecord>,
    pub last_seq: Option<u64>,
    pub last_ts: Option<Timestamp>,
    /// Largest numeric suffix seen on an `m<N>` message id.
    pub max_msg_number: u64,
}

pub fn replay(events: &[Event], opts: ReplayOptions) -> Result<ReplayState, CorruptLog> {
    let mut st = ReplayState {
        registry: Registry::new(),
        ..ReplayState::default()
    };
    for e in events {
        let fail = |reason: String| CorruptLog { seq: e.seq, reason };
        if let Some(last) = st.last_seq {
            if e.seq <= last {
                return Err(fail(format!("seq does not increase after {last}")));
            }
        }
        if let Some(last) = st.last_ts {
            if e.ts < last {
                return Err(fail(format!("ts {} precedes {last}", e.ts)));
            }
        }
        st.last_seq = Some(e.seq);
        st.last_ts = Some(e.ts);

        match &e.kind {
            EventKind::Paired { user_a, user_b } => {
                if st.registry.contains(&e.dyad_id) {
                    return Err(fail(format!("dyad {} paired twice", e.dyad_id)));
                }
                st.registry
                    .check_pairable(user_a, user_b)
                    .map_err(|err| fail(err.to_string()))?;
                st.registry.insert(Dyad {
                    dyad_id: e.dyad_id.clone(),
                    user_a: user_a.clone(),
                    user_b: user_b.clone(),
                });
            }
            EventKind::StateChanged { user, .. } => {
                let ok = st.registry.get(&e.dyad_id).is_some_and(|d| d.contains(user));
                if !ok {
                    return Err(fail(format!("state change for {user} outside dyad {}", e.dyad_id)));
                }
            }
            EventKind::Sent {
                msg_id,
                sender,
                receiver,
                ..
            } => {
                let dyad = st
                    .registry
                    .get(&e.dyad_id)
                    .ok_or_else(|| fail(format!("send in unknown dyad {}", e.dyad_id)))?;
                if dyad.partner_of(sender) != Some(receiver) {
                    return Err(fail(format!("{sender} -> {receiver} is not dyad {}", e.dyad_id)));
                }
                if st.records.contains_key(msg_id) {
                    return Err(fail(format!("message {msg_id} sent twice")));
                }
                if let Some(n) = msg_id.as_str().strip_prefix('m').and_then(|n| n.parse::<u64>().ok()) {
                    st.max_msg_number = st.max_msg_number.max(n);
                }
                st.records.insert(
                    msg_id.clone(),
                    DeliveryRecord {
                        msg_id: msg_id.clone(),
                        dyad_id: e.dyad_id.clone(),
                        sender: sender.clone(),
                        receiver: receiver.clone(),
                        state: DeliveryState::Sent,
                        sent_at: e.ts,
                        delivered_at: None,
                        read_at: None,
                        expired_at: None,
                        lost_at: None,
                    },
                );
            }
            kind => {
                let (msg_id, sender, receiver) = kind.message().expect("lifecycle event");
                let next = match kind {
                    EventKind::Delivered { .. } => DeliveryState::Delivered,
                    EventKind::Lost { .. } => DeliveryState::Lost,
                    EventKind::Read { .. } => DeliveryState::Read,
                    EventKind::Expired { .. } => DeliveryState::Expired,
                    _ => unreachable!(),
                };
                let rec = st
                    .records
                    .get_mut(msg_id)
                    .ok_or_else(|| fail(format!("{} for unsent message {msg_id}", kind.name())))?;
                if &rec.sender != sender || &rec.receiver != receiver || rec.dyad_id != e.dyad_id {
                    return Err(fail(format!("{} for {msg_id} disagrees with its send", kind.name())));
                }
                if !rec.state.can_become(next) {
                    return Err(fail(format!(
                        "illegal transition {:?} -> {next:?} for {msg_id}",
                        rec.state
                    )));
                }
                if let (Some(ttl), Some(delivered_at)) = (opts.ttl_secs, rec.delivered_at) {
                    let age = e.ts - delivered_at;
                    match next {
                        DeliveryState::Read if age > ttl => {
                            return Err(fail(format!("{msg_id} read {age}s after delivery, ttl {ttl}")))
                        }
                        DeliveryState::Expired if age <= ttl => {
                            return Err(fail(format!("{msg_id} expired only {age}s after delivery, ttl {ttl}")))
                        }
                        _ => {}
                    }
                }
                rec.transition(next, e.ts);
            }
        }
    }
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Color, EnergyBand};
    use crate::ids::{DyadId, UserId};

    fn ev(seq: u64, ts: i64, kind: EventKind) -> Event {
        Event {
            seq,
            ts,
            dyad_id: DyadId::new("d1"),
            kind,
        }
    }

    fn paired() -> Event {
        ev(
            1,
            0,
            EventKind::Paired {
                user_a: UserId::new("a"),
                user_b: UserId::new("b"),
            },
        )
    }

    fn sent(seq: u64, ts: i64, from: &str, to: &str) -> Event {
        ev(
            seq,
            ts,
            EventKind::Sent {
                msg_id: MsgId::new("m1"),
                sender: UserId::new(from),
                receiver: UserId::new(to),
                animo_id: "sway".into(),
                band: EnergyBand::Low,
                color: Color::Blue,
            },
        )
    }

    fn life(seq: u64, ts: i64, state: DeliveryState) -> Event {
        ev(
            seq,
            ts,
            EventKind::message_event(state, &MsgId::new("m1"), &UserId::new("a"), &UserId::new("b")),
        )
    }

    #[test]
    fn accepts_a_clean_lifecycle() {
        let log = vec![
            paired(),
            sent(2, 5, "a", "b"),
            life(3, 5, DeliveryState::Delivered),
            life(4, 15, DeliveryState::Read),
        ];
        let st = replay(&log, ReplayOptions { ttl_secs: Some(10) }).unwrap();
        assert_eq!(st.records[&MsgId::new("m1")].state, DeliveryState::Read);
        assert_eq!(st.max_msg_number, 1);
    }

    #[test]
    fn rejects_corruption() {
        let bad = |log: Vec<Event>| replay(&log, ReplayOptions { ttl_secs: Some(10) }).unwrap_err();
        bad(vec![paired(), paired()]);
        bad(vec![paired(), sent(2, 5, "a", "c")]);
        bad(vec![paired(), sent(1, 5, "a", "b")]);
        bad(vec![paired(), sent(2, 5, "a", "b"), life(3, 5, DeliveryState::Read)]);
        bad(vec![
            paired(),
            sent(2, 5, "a", "b"),
            life(3, 5, DeliveryState::Delivered),
            life(4, 16, DeliveryState::Read),
        ]);
        bad(vec![
            paired(),
            sent(2, 5, "a", "b"),
            life(3, 5, DeliveryState::Delivered),
            life(4, 15, DeliveryState::Expired),
        ]);
        bad(vec![
            paired(),
            sent(2, 5, "a", "b"),
            life(3, 5, DeliveryState::Delivered),
            life(4, 6, DeliveryState::Read),
            life(5, 20, DeliveryState::Expired),
        ]);
        let err = bad(vec![paired(), sent(2, 5, "a", "b"), life(3, 4, DeliveryState::Lost)]);
        assert_eq!(err.seq, 3);
    }
}
