use animo::analytics::{compute_report, hourly_histogram, local_hour, StatsOptions};
use animo::engine::Catalog;
use animo::relay::{replay, Event, EventKind, ReplayOptions};
use animo::simulator::{simulate_dyads, BehaviorModel, SimulationConfig};

fn run(cfg: &SimulationConfig) -> Vec<Event> {
    simulate_dyads(cfg, &Catalog::builtin()).unwrap()
}

fn small(seed: u64) -> SimulationConfig {
    SimulationConfig {
        n_dyads: 4,
        days: 7,
        seed,
        ..SimulationConfig::default()
    }
}

#[test]
fn zero_rate_yields_only_pairings() {
    let mut cfg = small(1);
    cfg.model.sends_per_user_per_day = 0.0;
    let events = run(&cfg);
    assert_eq!(events.len(), 4);
    assert!(events.iter().all(|e| matches!(e.kind, EventKind::Paired { .. })));
}

#[test]
fn sends_fall_in_active_hours() {
    for offset in [0, 3_600 * 9, -3_600 * 5] {
        let mut cfg = small(2);
        cfg.utc_offset_secs = offset;
        cfg.start -= offset;
        let events = run(&cfg);
        let mut sends = 0;
        for e in &events {
            if let EventKind::Sent { .. } = e.kind {
                let (hour, weekend) = local_hour(e.ts, offset).unwrap();
                assert!(
                    cfg.model.active_hours.contains(hour, weekend),
                    "send at local {hour}h weekend={weekend}"
                );
                sends += 1;
            }
        }
        assert!(sends > 50);
    }
}

#[test]
fn logs_replay_with_ttl_and_are_ordered() {
    for seed in 0..5 {
        let mut cfg = small(seed);
        cfg.record_state_changes = seed % 2 == 0;
        let events = run(&cfg);
        replay(
            &events,
            ReplayOptions {
                ttl_secs: Some(cfg.ttl_secs),
            },
        )
        .unwrap();
        assert!(events.windows(2).all(|w| w[0].ts <= w[1].ts && w[0].seq < w[1].seq));
        let changes = events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::StateChanged { .. }))
            .count();
        assert_eq!(changes > 0, cfg.record_state_changes);
    }
}

#[test]
fn most_sends_are_weekday_working_hours() {
    let events = run(&SimulationConfig::default());
    let h = hourly_histogram(&events, 0).unwrap();
    let work: u64 = h.weekday_sent[9..=18].iter().sum();
    assert!(
        work as f64 >= 0.7 * h.total_sent() as f64,
        "{work} of {}",
        h.total_sent()
    );
}

#[test]
fn histogram_and_report_conserve_counts() {
    let events = run(&small(3));
    let report = compute_report(&events, &StatsOptions::default()).unwrap();
    let h = hourly_histogram(&events, 0).unwrap();
    let sent: u64 = report.dyads.iter().map(|d| d.sent).sum();
    let read: u64 = report.dyads.iter().map(|d| d.read).sum();
    let replied: u64 = report.dyads.iter().map(|d| d.replied).sum();
    assert_eq!(
        (sent, read, replied),
        (report.total.sent, report.total.read, report.total.replied)
    );
    assert_eq!(h.total_sent(), sent);
    assert_eq!(h.total_read(), read);
    for d in &report.dyads {
        assert_eq!(d.sent, d.delivered + d.lost);
        assert!(d.read + d.expired <= d.delivered);
        assert!(d.replied <= d.read);
    }
}

#[test]
fn dyad_overrides_apply() {
    let mut cfg = small(4);
    cfg.dyad_overrides.insert(
        1,
        BehaviorModel {
            sends_per_user_per_day: 0.0,
            ..BehaviorModel::default()
        },
    );
    let report = compute_report(&run(&cfg), &StatsOptions::default()).unwrap();
    assert_eq!(report.dyads[1].sent, 0);
    assert!(report.dyads.iter().enumerate().all(|(i, d)| i == 1 || d.sent > 0));
}

#[test]
fn no_reads_without_read_probability() {
    let mut cfg = small(5);
    cfg.model.read_prob = 0.0;
    let report = compute_report(&run(&cfg), &StatsOptions::default()).unwrap();
    assert_eq!(report.total.read, 0);
    assert_eq!(report.total.expired, report.total.delivered);
}

#[test]
fn lossless_full_reading() {
    let mut cfg = small(6);
    cfg.n_dyads = 10;
    cfg.model = BehaviorModel {
        read_prob: 1.0,
        reply_prob: 0.5,
        loss: 0.0,
        ..BehaviorModel::default()
    };
    let t = compute_report(&run(&cfg), &StatsOptions::default()).unwrap().total;
    assert_eq!(t.lost, 0);
    assert_eq!(t.read, t.delivered);
    assert!((t.replied_given_read() - 0.5).abs() < 0.05, "{t:?}");
}

#[test]
fn invalid_configs_rejected() {
    let catalog = Catalog::builtin();
    let mut cfg = small(0);
    cfg.model.read_prob = 1.5;
    assert!(simulate_dyads(&cfg, &catalog).is_err());
    let mut cfg = small(0);
    cfg.start += 1;
    assert!(simulate_dyads(&cfg, &catalog).is_err());
    let mut cfg = small(0);
    cfg.model.active_hours.weekday.insert(24);
    assert!(simulate_dyads(&cfg, &catalog).is_err());
}
