//! Usage statistics replayed from relay event logs.
//!
//! * `sent` counts `sent` events, `lost` counts `lost` events and `read`
//!   counts `read` events.
//! * A read is *replied* when the reader sends within the reply window after
//!   reading (`read_at < send_ts <= read_at + window`). Reads are matched to
//!   sends greedily in time order, each read taking the earliest unclaimed
//!   send by the same user, and each send answering at most one read.
//! * Percentages are relative to `sent`, rounded half up, and 0 when nothing
//!   was sent.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{DateTime, Datelike, Timelike, Weekday};
use serde::Serialize;
use thiserror::Error;

use crate::ids::{DyadId, Timestamp, UserId};
use crate::relay::{replay, CorruptLog, Event, EventKind, ReplayOptions};

pub const DEFAULT_REPLY_WINDOW_SECS: i64 = 600;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error(transparent)]
    CorruptLog(#[from] CorruptLog),
    #[error("unknown dyad {0}")]
    UnknownDyad(DyadId),
    #[error("timestamp {0} is out of range")]
    BadTimestamp(Timestamp),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsOptions {
    pub reply_window_secs: i64,
}

impl Default for StatsOptions {
    fn default() -> Self {
        Self {
            reply_window_secs: DEFAULT_REPLY_WINDOW_SECS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UsageStats {
    /// `None` for the whole-log aggregate.
    pub dyad_id: Option<DyadId>,
    pub members: Option<(UserId, UserId)>,
    pub sent: u64,
    pub delivered: u64,
    pub lost: u64,
    pub read: u64,
    pub expired: u64,
    pub replied: u64,
    pub read_pct: u32,
    pub replied_pct: u32,
    pub read_ratio: f64,
    pub replied_ratio: f64,
}

impl UsageStats {
    fn from_counts(dyad_id: Option<DyadId>, members: Option<(UserId, UserId)>, c: Counts) -> Self {
        let ratio = |n: u64| if c.sent == 0 { 0.0 } else { n as f64 / c.sent as f64 };
        Self {
            dyad_id,
            members,
            sent: c.sent,
            delivered: c.delivered,
            lost: c.lost,
            read: c.read,
            expired: c.expired,
            replied: c.replied,
            read_pct: percent_half_up(c.read, c.sent),
            replied_pct: percent_half_up(c.replied, c.sent),
            read_ratio: ratio(c.read),
            replied_ratio: ratio(c.replied),
        }
    }

    /// Reads per delivered animo.
    pub fn read_given_delivered(&self) -> f64 {
        frac(self.read, self.delivered)
    }

    /// Replies per read animo.
    pub fn replied_given_read(&self) -> f64 {
        frac(self.replied, self.read)
    }

    pub fn loss_fraction(&self) -> f64 {
        frac(self.lost, self.sent)
    }
}

fn frac(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// `round(100 * count / total)` with halves rounded up, in integer arithmetic.
pub fn percent_half_up(count: u64, total: u64) -> u32 {
    if total == 0 {
        return 0;
    }
    ((200 * count + total) / (2 * total)) as u32
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Counts {
    sent: u64,
    delivered: u64,
    lost: u64,
    read: u64,
    expired: u64,
    replied: u64,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.sent += o.sent;
        self.delivered += o.delivered;
        self.lost += o.lost;
        self.read += o.read;
        self.expired += o.expired;
        self.replied += o.replied;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub reply_window_secs: i64,
    pub dyads: Vec<UsageStats>,
    pub total: UsageStats,
}

/// Greedy reply matcher. `reads` and `sends` are one user's timestamps in
/// non-decreasing order; returns, per read, whether it was answered.
pub fn match_replies(reads: &[Timestamp], sends: &[Timestamp], window: i64) -> Vec<bool> {
    let mut j = 0;
    reads
        .iter()
        .map(|&r| {
            while j < sends.len() && sends[j] <= r {
                j += 1;
            }
            if j < sends.len() && sends[j] <= r + window {
                j += 1;
                true
            } else {
                false
            }
        })
        .collect()
}

fn count_all(events: &[Event], opts: &StatsOptions) -> Result<(Vec<DyadId>, BTreeMap<DyadId, Counts>), AnalyticsError> {
    replay(events, ReplayOptions::default())?;
    let mut order = Vec::new();
    let mut counts: BTreeMap<DyadId, Counts> = BTreeMap::new();
    // per reader: (read ts, dyad) and send timestamps
    let mut reads: BTreeMap<&UserId, Vec<(Timestamp, &DyadId)>> = BTreeMap::new();
    let mut sends: BTreeMap<&UserId, Vec<Timestamp>> = BTreeMap::new();
    for e in events {
        let c = counts.entry(e.dyad_id.clone()).or_default();
        match &e.kind {
            EventKind::Paired { .. } => order.push(e.dyad_id.clone()),
            EventKind::Sent { sender, .. } => {
                c.sent += 1;
                sends.entry(sender).or_default().push(e.ts);
            }
            EventKind::Delivered { .. } => c.delivered += 1,
            EventKind::Lost { .. } => c.lost += 1,
            EventKind::Read { receiver, .. } => {
                c.read += 1;
                reads.entry(receiver).or_default().push((e.ts, &e.dyad_id));
            }
            EventKind::Expired { .. } => c.expired += 1,
            EventKind::StateChanged { .. } => {}
        }
    }
    for (user, rs) in &reads {
        let ts: Vec<Timestamp> = rs.iter().map(|(t, _)| *t).collect();
        let own_sends = sends.get(user).map(Vec::as_slice).unwrap_or(&[]);
        for (hit, (_, dyad)) in match_replies(&ts, own_sends, opts.reply_window_secs)
            .into_iter()
            .zip(rs)
        {
            if hit {
                counts.get_mut(*dyad).expect("counted dyad").replied += 1;
            }
        }
    }
    Ok((order, counts))
}

fn members(events: &[Event]) -> BTreeMap<&DyadId, (UserId, UserId)> {
    events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Paired { user_a, user_b } => Some((&e.dyad_id, (user_a.clone(), user_b.clone()))),
            _ => None,
        })
        .collect()
}

/// Statistics for one dyad.
pub fn compute_stats(events: &[Event], dyad_id: &DyadId, opts: &StatsOptions) -> Result<UsageStats, AnalyticsError> {
    let (_, counts) = count_all(events, opts)?;
    let c = counts
        .get(dyad_id)
        .copied()
        .ok_or_else(|| AnalyticsError::UnknownDyad(dyad_id.clone()))?;
    let m = members(events).get(dyad_id).cloned();
    Ok(UsageStats::from_counts(Some(dyad_id.clone()), m, c))
}

/// Statistics for every dyad, in pairing order, plus the whole-log total.
pub fn compute_report(events: &[Event], opts: &StatsOptions) -> Result<Report, AnalyticsError> {
    let (order, counts) = count_all(events, opts)?;
    let m = members(events);
    let mut total = Counts::default();
    let dyads = order
        .iter()
        .map(|id| {
            let c = counts.get(id).copied().unwrap_or_default();
            total += c;
            UsageStats::from_counts(Some(id.clone()), m.get(id).cloned(), c)
        })
        .collect();
    Ok(Report {
        reply_window_secs: opts.reply_window_secs,
        dyads,
        total: UsageStats::from_counts(None, None, total),
    })
}

/// Renders a report as an aligned text table with one row per dyad.
pub fn render_table(report: &Report) -> String {
    let mut out = String::new();
    let cell = |n: u64, pct: u32| format!("{n} ({pct}%)");
    let _ = writeln!(
        out,
        "{:<8} {:<24} {:>6} {:>12} {:>12} {:>6}",
        "dyad", "participants", "sent", "read (%)", "replied (%)", "lost"
    );
    for s in &report.dyads {
        let who = s
            .members
            .as_ref()
            .map(|(a, b)| format!("{a} & {b}"))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{:<8} {:<24} {:>6} {:>12} {:>12} {:>6}",
            s.dyad_id.as_ref().map(DyadId::as_str).unwrap_or("-"),
            who,
            s.sent,
            cell(s.read, s.read_pct),
            cell(s.replied, s.replied_pct),
            s.lost
        );
    }
    let t = &report.total;
    let _ = writeln!(
        out,
        "{:<8} {:<24} {:>6} {:>12} {:>12} {:>6}",
        "total",
        format!("{} dyads", report.dyads.len()),
        t.sent,
        cell(t.read, t.read_pct),
        cell(t.replied, t.replied_pct),
        t.lost
    );
    out
}

/// Sent and read counts by local hour of day, split weekday/weekend.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct HourHistogram {
    pub weekday_sent: [u64; 24],
    pub weekday_read: [u64; 24],
    pub weekend_sent: [u64; 24],
    pub weekend_read: [u64; 24],
}

impl HourHistogram {
    pub fn total_sent(&self) -> u64 {
        self.weekday_sent.iter().chain(&self.weekend_sent).sum()
    }

    pub fn total_read(&self) -> u64 {
        self.weekday_read.iter().chain(&self.weekend_read).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("hour,weekday_sent,weekday_read,weekend_sent,weekend_read\n");
        for h in 0..24 {
            let _ = writeln!(
                out,
                "{h},{},{},{},{}",
                self.weekday_sent[h], self.weekday_read[h], self.weekend_sent[h], self.weekend_read[h]
            );
        }
        out
    }
}

/// Local calendar position of a timestamp: `(hour, is_weekend)`.
pub fn local_hour(ts: Timestamp, utc_offset_secs: i64) -> Option<(usize, bool)> {
    let dt = DateTime::from_timestamp(ts.checked_add(utc_offset_secs)?, 0)?;
    let weekend = matches!(dt.weekday(), Weekday::Sat | Weekday::Sun);
    Some((dt.hour() as usize, weekend))
}

pub fn hourly_histogram(events: &[Event], utc_offset_secs: i64) -> Result<HourHistogram, AnalyticsError> {
    replay(events, ReplayOptions::default())?;
    let mut h = HourHistogram::default();
    for e in events {
        let is_sent = matches!(e.kind, EventKind::Sent { .. });
        let is_read = matches!(e.kind, EventKind::Read { .. });
        if !(is_sent || is_read) {
            continue;
        }
        let (hour, weekend) = local_hour(e.ts, utc_offset_secs).ok_or(AnalyticsError::BadTimestamp(e.ts))?;
        let bucket = match (is_sent, weekend) {
            (true, false) => &mut h.weekday_sent,
            (true, true) => &mut h.weekend_sent,
            (false, false) => &mut h.weekday_read,
            (false, true) => &mut h.weekend_read,
        };
        bucket[hour] += 1;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_up_rounding() {
        assert_eq!(percent_half_up(40, 220), 18);
        assert_eq!(percent_half_up(115, 175), 66);
        assert_eq!(percent_half_up(59, 175), 34);
        assert_eq!(percent_half_up(1, 8), 13); // 12.5
        assert_eq!(percent_half_up(1, 200), 1); // 0.5
        assert_eq!(percent_half_up(0, 0), 0);
        assert_eq!(percent_half_up(5, 5), 100);
    }

    #[test]
    fn matcher_window_edges() {
        assert_eq!(match_replies(&[1000], &[1599], 600), vec![true]);
        assert_eq!(match_replies(&[1000], &[1600], 600), vec![true]);
        assert_eq!(match_replies(&[1000], &[1601], 600), vec![false]);
        assert_eq!(match_replies(&[1000], &[1000], 600), vec![false]);
        // one send answers one read
        assert_eq!(match_replies(&[0, 10], &[100], 600), vec![true, false]);
        assert_eq!(match_replies(&[0, 10], &[5, 100], 600), vec![true, true]);
        assert_eq!(match_replies(&[], &[5], 600), Vec::<bool>::new());
    }

    #[test]
    fn empty_log_is_all_zero() {
        let r = compute_report(&[], &StatsOptions::default()).unwrap();
        assert!(r.dyads.is_empty());
        assert_eq!((r.total.sent, r.total.read_pct, r.total.replied_pct), (0, 0, 0));
        assert_eq!(hourly_histogram(&[], 0).unwrap(), HourHistogram::default());
    }

    #[test]
    fn local_hour_applies_offset() {
        // 2024-01-01 was a Monday.
        let monday_10 = 1_704_103_200;
        assert_eq!(local_hour(monday_10, 0), Some((10, false)));
        assert_eq!(local_hour(monday_10, -11 * 3600), Some((23, true)));
        assert_eq!(local_hour(monday_10 + 5 * 86400, 0), Some((10, true)));
    }
}
