//! Discrete-event simulation of dyads using the relay.
//!
//! Each simulated wearer has a synthetic heart-rate trace feeding a
//! [`MoodTracker`]. Spontaneous sends are a Poisson process restricted to the
//! wearer's active hours, and each one ships the tracker's current animo.
//! The partner reads a delivered animo with probability `read_prob`, at a
//! uniformly drawn second within the TTL. After each read the reader either
//! replies within the reply window (probability `reply_prob`) or stays
//! silent for that window:
//!
//! * replying claims the earliest already-planned send in the window, or
//!   plans a new one at a uniform lag if there is none;
//! * staying silent cancels unclaimed planned sends in the window.
//!
//! That keeps the greedy reply matcher in [`crate::analytics`] recovering
//! `reply_prob` rather than `reply_prob` plus background sends. The
//! spontaneous rate is lowered so that spontaneous sends plus replies
//! average `sends_per_user_per_day`.
//!
//! Everything runs on a virtual clock and is reproducible from the seed.

mod hr;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{local_hour, DEFAULT_REPLY_WINDOW_SECS};
use crate::engine::{calibrate_baselines, Catalog, EngineError, MoodTracker, Shape, TrackerConfig};
use crate::ids::{MsgId, Timestamp, UserId};
use crate::relay::{Event, Relay, RelayConfig, RelayError, SendOutcome, DEFAULT_TTL_SECS};

pub use hr::{gen_hr_trace, Episode, HrProfile, HrTrace};

/// 2024-01-01T00:00:00Z, a Monday.
pub const DEFAULT_START: Timestamp = 1_704_067_200;

const CALIBRATION_TASK_SECS: i64 = 120;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid behavior model: {0}")]
    InvalidModel(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Relay(#[from] RelayError),
}

/// Hours of the local day during which a wearer interacts with the watch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActiveHours {
    pub weekday: BTreeSet<u8>,
    pub weekend: BTreeSet<u8>,
}

impl ActiveHours {
    pub fn contains(&self, hour: usize, weekend: bool) -> bool {
        let set = if weekend { &self.weekend } else { &self.weekday };
        u8::try_from(hour).is_ok_and(|h| set.contains(&h))
    }
}

impl Default for ActiveHours {
    /// Work hours on weekdays, a shorter midday window at weekends.
    fn default() -> Self {
        Self {
            weekday: (9..=18).collect(),
            weekend: (11..=16).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorModel {
    /// Mean sends per wearer per simulated day, replies included. Only
    /// reachable while `read_prob * reply_prob` is well below 1; at 1 every
    /// send starts an endless reply chain.
    pub sends_per_user_per_day: f64,
    pub read_prob: f64,
    pub reply_prob: f64,
    pub active_hours: ActiveHours,
    pub loss: f64,
}

impl Default for BehaviorModel {
    fn default() -> Self {
        Self {
            sends_per_user_per_day: 5.0,
            read_prob: 0.41,
            reply_prob: 0.43,
            active_hours: ActiveHours::default(),
            loss: 0.056,
        }
    }
}

impl BehaviorModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidModel(m));
        if !(self.sends_per_user_per_day.is_finite() && self.sends_per_user_per_day >= 0.0) {
            return bad(format!(
                "sends_per_user_per_day {} must be >= 0",
                self.sends_per_user_per_day
            ));
        }
        for (name, p) in [
            ("read_prob", self.read_prob),
            ("reply_prob", self.reply_prob),
            ("loss", self.loss),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        let hours = &self.active_hours;
        if hours.weekday.is_empty() && hours.weekend.is_empty() {
            return bad("active_hours is empty".into());
        }
        if let Some(h) = hours.weekday.iter().chain(&hours.weekend).find(|&&h| h > 23) {
            return bad(format!("active hour {h} outside 0..=23"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub n_dyads: usize,
    pub days: u32,
    pub model: BehaviorModel,
    /// Replaces `model` for the dyad with this zero-based index.
    #[serde(with = "index_keys")]
    pub dyad_overrides: BTreeMap<usize, BehaviorModel>,
    /// Cycled over wearers; random profiles are drawn when empty.
    pub profiles: Vec<HrProfile>,
    pub seed: u64,
    /// Local midnight of the first simulated day.
    pub start: Timestamp,
    pub utc_offset_secs: i64,
    pub ttl_secs: i64,
    pub reply_window_secs: i64,
    pub hr_sample_period_secs: i64,
    pub tracker: TrackerConfig,
    /// Log a `state_changed` event whenever a wearer's watch would vibrate.
    pub record_state_changes: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_dyads: 17,
            days: 14,
            model: BehaviorModel::default(),
            dyad_overrides: BTreeMap::new(),
            profiles: Vec::new(),
            seed: 0,
            start: DEFAULT_START,
            utc_offset_secs: 0,
            ttl_secs: DEFAULT_TTL_SECS,
            reply_window_secs: DEFAULT_REPLY_WINDOW_SECS,
            hr_sample_period_secs: 60,
            tracker: TrackerConfig::default(),
            record_state_changes: false,
        }
    }
}

impl SimulationConfig {
    pub fn model_for(&self, dyad: usize) -> &BehaviorModel {
        self.dyad_overrides.get(&dyad).unwrap_or(&self.model)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.model.validate()?;
        for m in self.dyad_overrides.values() {
            m.validate()?;
        }
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.ttl_secs < 1 {
            return bad(format!("ttl_secs {} must be >= 1", self.ttl_secs));
        }
        if self.reply_window_secs < 2 {
            return bad(format!("reply_window_secs {} must be >= 2", self.reply_window_secs));
        }
        if self.hr_sample_period_secs < 1 {
            return bad(format!(
                "hr_sample_period_secs {} must be >= 1",
                self.hr_sample_period_secs
            ));
        }
        if (self.start + self.utc_offset_secs).rem_euclid(3600) != 0 {
            return bad("start must fall on a local hour boundary".into());
        }
        self.tracker.thresholds.validate()?;
        Ok(())
    }

    fn horizon(&self) -> Timestamp {
        self.start + i64::from(self.days) * 86_400
    }
}

/// Map keys as strings, since TOML tables cannot have integer keys.
mod index_keys {
    use std::collections::BTreeMap;

    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::BehaviorModel;

    pub fn serialize<S: Serializer>(map: &BTreeMap<usize, BehaviorModel>, s: S) -> Result<S::Ok, S::Error> {
        let keyed: BTreeMap<String, &BehaviorModel> = map.iter().map(|(k, v)| (k.to_string(), v)).collect();
        keyed.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, BehaviorModel>, D::Error> {
        BTreeMap::<String, BehaviorModel>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| {
                k.parse()
                    .map(|i| (i, v))
                    .map_err(|_| D::Error::custom(format!("dyad index {k:?} is not a number")))
            })
            .collect()
    }
}

/// Wearer ids are `u01`, `u02`, ...; dyad `i` pairs `u{2i+1}` (circle) with
/// `u{2i+2}` (diamond).
pub fn user_name(index: usize) -> UserId {
    UserId::new(format!("u{:02}", index + 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Action {
    Send { user: usize, plan: u64 },
    Read { user: usize, msg: u64 },
    Sweep,
}

struct Wearer {
    id: UserId,
    dyad: usize,
    partner: usize,
    tracker: MoodTracker,
    trace: std::iter::Peekable<HrTrace>,
    /// Planned sends: (ts, plan id) -> claimed by a read.
    planned: BTreeMap<(Timestamp, u64), bool>,
    silent_until: Timestamp,
}

struct Sim<'a> {
    cfg: &'a SimulationConfig,
    catalog: &'a Catalog,
    relay: Relay<Vec<Event>>,
    wearers: Vec<Wearer>,
    queue: BinaryHeap<Reverse<(Timestamp, u64, Action)>>,
    next_order: u64,
    next_plan: u64,
    plan_time: BTreeMap<u64, (usize, Timestamp)>,
    msg_ids: BTreeMap<u64, MsgId>,
    next_msg_key: u64,
    behavior_rng: ChaCha8Rng,
    loss_rng: ChaCha8Rng,
    engine_rng: ChaCha8Rng,
}

/// Runs the simulation and returns the relay's event log.
pub fn simulate_dyads(cfg: &SimulationConfig, catalog: &Catalog) -> Result<Vec<Event>, SimError> {
    cfg.validate()?;
    let relay_cfg = RelayConfig {
        ttl_secs: cfg.ttl_secs,
        loss: cfg.model.loss,
        seed: cfg.seed,
    };
    let relay = Relay::new(relay_cfg, catalog.clone(), Vec::new())?;
    let stream = |n: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(n);
        r
    };
    let mut sim = Sim {
        cfg,
        catalog,
        relay,
        wearers: Vec::new(),
        queue: BinaryHeap::new(),
        next_order: 0,
        next_plan: 0,
        plan_time: BTreeMap::new(),
        msg_ids: BTreeMap::new(),
        next_msg_key: 0,
        behavior_rng: stream(1),
        loss_rng: stream(2),
        engine_rng: stream(3),
    };
    sim.setup(&mut stream(4), &mut stream(5))?;
    sim.run()?;
    Ok(sim.relay.into_sink())
}

impl Sim<'_> {
    fn push(&mut self, ts: Timestamp, action: Action) {
        self.queue.push(Reverse((ts, self.next_order, action)));
        self.next_order += 1;
    }

    fn plan_send(&mut self, user: usize, ts: Timestamp, claimed: bool) {
        let plan = self.next_plan;
        self.next_plan += 1;
        self.wearers[user].planned.insert((ts, plan), claimed);
        self.plan_time.insert(plan, (user, ts));
        self.push(ts, Action::Send { user, plan });
    }

    fn setup(&mut self, profile_rng: &mut ChaCha8Rng, arrival_rng: &mut ChaCha8Rng) -> Result<(), SimError> {
        let cfg = self.cfg;
        let duration = cfg.horizon() - cfg.start;
        for dyad in 0..cfg.n_dyads {
            let (a, b) = (user_name(2 * dyad), user_name(2 * dyad + 1));
            self.relay.pair_users(a.clone(), b.clone(), cfg.start)?;
            for (slot, (id, shape)) in [(a, Shape::Circle), (b, Shape::Diamond)].into_iter().enumerate() {
                let index = 2 * dyad + slot;
                let profile = if cfg.profiles.is_empty() {
                    HrProfile::random(profile_rng, cfg.days)
                } else {
                    cfg.profiles[index % cfg.profiles.len()].clone()
                };
                let trace_seed = profile_rng.random::<u64>();
                let baselines = calibrate(&id, &profile, cfg.start, trace_seed)?;
                let trace = HrTrace::new(
                    id.clone(),
                    profile,
                    cfg.start,
                    duration,
                    1.0 / cfg.hr_sample_period_secs as f64,
                    trace_seed,
                );
                self.wearers.push(Wearer {
                    id,
                    dyad,
                    partner: 2 * dyad + 1 - slot,
                    tracker: MoodTracker::new(baselines, shape, cfg.tracker),
                    trace: trace.peekable(),
                    planned: BTreeMap::new(),
                    silent_until: Timestamp::MIN,
                });
            }
        }
        for user in 0..self.wearers.len() {
            for ts in self.spontaneous_sends(user, arrival_rng) {
                self.plan_send(user, ts, false);
            }
        }
        Ok(())
    }

    /// Poisson arrivals over the concatenation of the wearer's active hours.
    fn spontaneous_sends(&self, user: usize, rng: &mut ChaCha8Rng) -> Vec<Timestamp> {
        let cfg = self.cfg;
        let model = cfg.model_for(self.wearers[user].dyad);
        let slots = active_slots(cfg, &model.active_hours);
        let active_secs = slots.len() as f64 * 3600.0;
        if model.sends_per_user_per_day == 0.0 || active_secs == 0.0 {
            return Vec::new();
        }
        let total_rate = model.sends_per_user_per_day * f64::from(cfg.days) / active_secs;
        let rate = spontaneous_rate(total_rate, model, cfg.reply_window_secs as f64);
        let exp = Exp::new(rate).expect("positive rate");
        let mut out = Vec::new();
        let mut t = 0.0;
        loop {
            t += exp.sample(rng);
            if t >= active_secs {
                break;
            }
            let slot = (t / 3600.0) as usize;
            out.push(slots[slot] + (t - slot as f64 * 3600.0) as i64);
        }
        out
    }

    fn run(&mut self) -> Result<(), SimError> {
        while let Some(Reverse((ts, _, action))) = self.queue.pop() {
            self.advance_heart_rates(ts)?;
            match action {
                Action::Send { user, plan } => self.send(user, plan, ts)?,
                Action::Read { user, msg } => self.read(user, msg, ts)?,
                Action::Sweep => {
                    self.relay.expire_sweep(ts)?;
                }
            }
        }
        Ok(())
    }

    fn advance_heart_rates(&mut self, now: Timestamp) -> Result<(), SimError> {
        let mut due = Vec::new();
        for (i, w) in self.wearers.iter_mut().enumerate() {
            while let Some(sample) = w.trace.next_if(|s| s.timestamp <= now) {
                due.push((sample.timestamp, i, sample));
            }
        }
        due.sort_by_key(|&(ts, i, _)| (ts, i));
        for (ts, i, sample) in due {
            let w = &mut self.wearers[i];
            let update = w.tracker.ingest(&sample, self.catalog, &mut self.engine_rng)?;
            if update.notify && self.cfg.record_state_changes {
                self.relay.record_state_change(&w.id, &update.state, ts)?;
            }
        }
        Ok(())
    }

    fn send(&mut self, user: usize, plan: u64, now: Timestamp) -> Result<(), SimError> {
        let Some((_, planned_at)) = self.plan_time.remove(&plan) else {
            return Ok(());
        };
        if self.wearers[user].planned.remove(&(planned_at, plan)).is_none() {
            return Ok(());
        }
        let w = &self.wearers[user];
        let state = w.tracker.state().cloned().expect("trace starts at simulation start");
        let model = self.cfg.model_for(w.dyad);
        let (loss, read_prob) = (model.loss, model.read_prob);
        let sender = w.id.clone();
        let receipt = self
            .relay
            .send_animo_with(&sender, state, now, loss, &mut self.loss_rng)?;
        if let SendOutcome::Delivered { delivered_at, .. } = receipt.outcome {
            if self.behavior_rng.random_bool(read_prob) {
                let key = self.next_msg_key;
                self.next_msg_key += 1;
                self.msg_ids.insert(key, receipt.msg_id);
                let lag = self.behavior_rng.random_range(1..=self.cfg.ttl_secs);
                let reader = self.wearers[user].partner;
                self.push(delivered_at + lag, Action::Read { user: reader, msg: key });
            } else {
                self.push(delivered_at + self.cfg.ttl_secs + 1, Action::Sweep);
            }
        }
        Ok(())
    }

    fn read(&mut self, user: usize, key: u64, now: Timestamp) -> Result<(), SimError> {
        let msg = self.msg_ids.remove(&key).expect("scheduled read has a message");
        let reader = self.wearers[user].id.clone();
        self.relay.mark_read(&reader, &msg, now)?;

        let window = self.cfg.reply_window_secs;
        let reply_prob = self.cfg.model_for(self.wearers[user].dyad).reply_prob;
        let replies = self.behavior_rng.random_bool(reply_prob);
        let w = &mut self.wearers[user];
        let in_window: Vec<(Timestamp, u64)> = w
            .planned
            .range((now + 1, 0)..=(now + window, u64::MAX))
            .filter(|(_, &claimed)| !claimed)
            .map(|(&k, _)| k)
            .collect();
        if replies {
            if let Some(&first) = in_window.first() {
                w.planned.insert(first, true);
            } else {
                let earliest = now.max(w.silent_until) + 1;
                let hours = &self.cfg.model_for(w.dyad).active_hours;
                if let Some(ts) =
                    pick_active_second(self.cfg, hours, earliest, now + window - 1, &mut self.behavior_rng)
                {
                    self.plan_send(user, ts, true);
                }
            }
        } else {
            for k in in_window {
                w.planned.remove(&k);
                self.plan_time.remove(&k.1);
            }
            w.silent_until = w.silent_until.max(now + window);
        }
        Ok(())
    }
}

fn calibrate(
    user: &UserId,
    profile: &HrProfile,
    start: Timestamp,
    seed: u64,
) -> Result<crate::engine::Baselines, SimError> {
    let task = |delta: f64, offset: i64| {
        let p = HrProfile {
            circadian_amplitude_bpm: 0.0,
            episodes: vec![Episode {
                start_secs: 0,
                duration_secs: CALIBRATION_TASK_SECS,
                delta_bpm: delta,
            }],
            ..profile.clone()
        };
        gen_hr_trace(
            user.clone(),
            &p,
            start - offset,
            CALIBRATION_TASK_SECS,
            1.0,
            seed ^ offset as u64,
        )
    };
    let calm = task(0.0, 2 * CALIBRATION_TASK_SECS);
    let stress = task(profile.calibration_stress_delta_bpm, CALIBRATION_TASK_SECS);
    Ok(calibrate_baselines(&calm, &stress)?)
}

/// Start timestamps of every active local hour in the simulated period.
fn active_slots(cfg: &SimulationConfig, hours: &ActiveHours) -> Vec<Timestamp> {
    (0..i64::from(cfg.days) * 24)
        .map(|k| cfg.start + k * 3600)
        .filter(|&slot| {
            local_hour(slot, cfg.utc_offset_secs).is_some_and(|(hour, weekend)| hours.contains(hour, weekend))
        })
        .collect()
}

/// Uniform second in `[lo, hi]` that falls in an active hour, if any.
fn pick_active_second<R: Rng + ?Sized>(
    cfg: &SimulationConfig,
    hours: &ActiveHours,
    lo: Timestamp,
    hi: Timestamp,
    rng: &mut R,
) -> Option<Timestamp> {
    if lo > hi {
        return None;
    }
    let active = |ts| local_hour(ts, cfg.utc_offset_secs).is_some_and(|(h, we)| hours.contains(h, we));
    // Split [lo, hi] at hour boundaries and keep the active pieces.
    let mut pieces = Vec::new();
    let mut cur = lo;
    while cur <= hi {
        let hour_end = cur - (cur + cfg.utc_offset_secs).rem_euclid(3600) + 3599;
        let end = hour_end.min(hi);
        if active(cur) {
            pieces.push((cur, end));
        }
        cur = end + 1;
    }
    let total: i64 = pieces.iter().map(|(a, b)| b - a + 1).sum();
    if total == 0 {
        return None;
    }
    let mut k = rng.random_range(0..total);
    for (a, b) in pieces {
        let len = b - a + 1;
        if k < len {
            return Some(a + k);
        }
        k -= len;
    }
    unreachable!()
}

/// Spontaneous send rate such that spontaneous sends plus replies, minus
/// sends cancelled by silent windows, average `total_rate` (per second).
fn spontaneous_rate(total_rate: f64, model: &BehaviorModel, window: f64) -> f64 {
    let reads_per_send = (1.0 - model.loss) * model.read_prob;
    let p = model.reply_prob;
    let mut rate = total_rate;
    for _ in 0..100 {
        let has_planned = 1.0 - (-rate * window).exp();
        let net_per_read = p * (1.0 - has_planned) - (1.0 - p) * rate * window;
        rate = (total_rate * (1.0 - reads_per_send * net_per_read)).max(total_rate * 1e-3);
    }
    rate
}
