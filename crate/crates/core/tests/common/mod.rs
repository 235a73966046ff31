#![allow(dead_code)]

use std::collections::HashMap;

use animo::engine::{AnimoState, Catalog, Color, EnergyBand, Shape};
use animo::relay::{Event, EventKind, Relay, RelayConfig};
use animo::{Timestamp, UserId};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn u(s: &str) -> UserId {
    UserId::new(s)
}

pub fn animo_for(shape: Shape, ts: Timestamp) -> AnimoState {
    AnimoState::new("bounce", shape, Color::Yellow, EnergyBand::High, ts).unwrap()
}

/// Maximum number of reads that can each be paired with a distinct later
/// send inside `(read, read + window]`, by exhaustive search over which
/// sends are taken.
pub fn oracle_max_matching(reads: &[Timestamp], sends: &[Timestamp], window: i64) -> usize {
    assert!(sends.len() <= 20);
    fn go(
        i: usize,
        used: u32,
        reads: &[Timestamp],
        sends: &[Timestamp],
        w: i64,
        memo: &mut HashMap<(usize, u32), usize>,
    ) -> usize {
        if i == reads.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, used)) {
            return v;
        }
        let mut best = go(i + 1, used, reads, sends, w, memo);
        for (j, &s) in sends.iter().enumerate() {
            if used & (1 << j) == 0 && s > reads[i] && s <= reads[i] + w {
                best = best.max(1 + go(i + 1, used | (1 << j), reads, sends, w, memo));
            }
        }
        memo.insert((i, used), best);
        best
    }
    go(0, 0, reads, sends, window, &mut HashMap::new())
}

/// Optimal reply count for a whole log, computed per reader from raw events.
pub fn oracle_replied(events: &[Event], window: i64) -> usize {
    let mut reads: HashMap<&UserId, Vec<Timestamp>> = HashMap::new();
    let mut sends: HashMap<&UserId, Vec<Timestamp>> = HashMap::new();
    for e in events {
        match &e.kind {
            EventKind::Read { receiver, .. } => reads.entry(receiver).or_default().push(e.ts),
            EventKind::Sent { sender, .. } => sends.entry(sender).or_default().push(e.ts),
            _ => {}
        }
    }
    reads
        .iter()
        .map(|(user, r)| oracle_max_matching(r, sends.get(user).map(Vec::as_slice).unwrap_or(&[]), window))
        .sum()
}

#[derive(Clone, Copy)]
enum Episode {
    Reply,
    Read,
    Ignored,
}

/// Appends one dyad's history to `relay` so that it has exactly `sent`
/// sends, `read` reads and `replied` answered reads. Episodes are spaced
/// further apart than the reply window and shuffled with `seed`.
pub fn synthesize_dyad<S: animo::relay::EventSink>(
    relay: &mut Relay<S>,
    a: &UserId,
    b: &UserId,
    (sent, read, replied): (u64, u64, u64),
    t: &mut Timestamp,
    seed: u64,
) {
    assert!(replied <= read && replied + read <= sent, "row not constructible");
    *t += 1_000;
    relay.pair_users(a.clone(), b.clone(), *t).unwrap();
    let mut plan = Vec::new();
    plan.extend(std::iter::repeat_n(Episode::Reply, replied as usize));
    plan.extend(std::iter::repeat_n(Episode::Read, (read - replied) as usize));
    plan.extend(std::iter::repeat_n(Episode::Ignored, (sent - read - replied) as usize));
    plan.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (i, ep) in plan.into_iter().enumerate() {
        *t += 1_000;
        let (from, to) = if i % 2 == 0 { (a, b) } else { (b, a) };
        let shape = |who: &UserId| if who == a { Shape::Circle } else { Shape::Diamond };
        let m = relay
            .send_animo_with(from, animo_for(shape(from), *t), *t, 0.0, &mut rng)
            .unwrap()
            .msg_id;
        match ep {
            Episode::Ignored => {}
            Episode::Read | Episode::Reply => {
                relay.mark_read(to, &m, *t + 3).unwrap();
                if let Episode::Reply = ep {
                    relay
                        .send_animo_with(to, animo_for(shape(to), *t + 60), *t + 60, 0.0, &mut rng)
                        .unwrap();
                }
            }
        }
        relay.expire_sweep(*t + 120).unwrap();
    }
}

pub fn fresh_relay(ttl_secs: i64, loss: f64, seed: u64) -> Relay<Vec<Event>> {
    Relay::new(RelayConfig { ttl_secs, loss, seed }, Catalog::builtin(), Vec::new()).unwrap()
}
