use animo::engine::{
    compute_arousal, read_heart_rate_csv, smooth_heart_rate, BandThresholds, Baselines, Catalog, Color, EnergyBand,
    HeartRateSample, MoodTracker, Shape, TrackerConfig,
};
use animo::simulator::{gen_hr_trace, Episode, HrProfile};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn baselines() -> impl Strategy<Value = Baselines> {
    (30.0f64..150.0, 1.0f64..90.0).prop_map(|(low, span)| Baselines::new("u", low, low + span).unwrap())
}

fn thresholds() -> impl Strategy<Value = BandThresholds> {
    (0.0f64..=1.0, 0.0f64..=1.0).prop_map(|(a, b)| BandThresholds::new(a.min(b), a.max(b)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn arousal_is_clamped_and_monotone(b in baselines(), t in thresholds(), x in 21.0f64..249.0, y in 21.0f64..249.0) {
        let (lo, hi) = (x.min(y), x.max(y));
        let a = compute_arousal(lo, &b, &t);
        let c = compute_arousal(hi, &b, &t);
        prop_assert!((0.0..=1.0).contains(&a.value) && (0.0..=1.0).contains(&c.value));
        prop_assert!(a.value <= c.value);
        prop_assert!(a.band <= c.band);
    }

    #[test]
    fn arousal_endpoints(b in baselines(), t in thresholds()) {
        prop_assert_eq!(compute_arousal(b.low_bpm(), &b, &t).value, 0.0);
        prop_assert_eq!(compute_arousal(b.high_bpm(), &b, &t).value, 1.0);
    }

    #[test]
    fn smoothing_stays_between_previous_and_sample(prev in 21.0f64..249.0, bpm in 21.0f64..249.0, alpha in 0.001f64..=1.0) {
        let s = HeartRateSample::new("u", 0, bpm).unwrap();
        let out = smooth_heart_rate(Some(prev), &s, alpha).unwrap();
        prop_assert!(out >= prev.min(bpm) - 1e-9 && out <= prev.max(bpm) + 1e-9);
        prop_assert_eq!(smooth_heart_rate(None, &s, alpha).unwrap(), bpm);
    }

    #[test]
    fn implausible_samples_rejected(bpm in prop_oneof![-1e6f64..=20.0, 250.0f64..1e6]) {
        prop_assert!(HeartRateSample::new("u", 0, bpm).is_err());
    }

    #[test]
    fn tracker_states_are_legal_and_debounced(
        bpms in prop::collection::vec(21.0f64..249.0, 1..200),
        gaps in prop::collection::vec(1i64..400, 200),
        gap in 0i64..3000,
        seed in any::<u64>(),
    ) {
        let catalog = Catalog::builtin();
        let cfg = TrackerConfig { min_notify_gap_secs: gap, ..TrackerConfig::default() };
        let mut tracker = MoodTracker::new(Baselines::new("u", 60.0, 120.0).unwrap(), Shape::Diamond, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ts = 0;
        let mut last_notify: Option<i64> = None;
        let mut prev_band: Option<EnergyBand> = None;
        for (bpm, dt) in bpms.iter().zip(&gaps) {
            ts += dt;
            let up = tracker.ingest(&HeartRateSample::new("u", ts, *bpm).unwrap(), &catalog, &mut rng).unwrap();
            let s = &up.state;
            prop_assert!(s.band().allows(s.color()));
            prop_assert_eq!(s.shape(), Shape::Diamond);
            prop_assert!(s.check_against(&catalog).is_ok());
            let expect = prev_band.is_some_and(|p| p != s.band()) && last_notify.is_none_or(|l| ts - l >= gap);
            prop_assert_eq!(up.notify, expect);
            if up.notify {
                last_notify = Some(ts);
            }
            prev_band = Some(s.band());
        }
    }
}

#[test]
fn low_band_colors_are_balanced() {
    let catalog = Catalog::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let arousal = animo::engine::ArousalLevel {
        value: 0.0,
        band: EnergyBand::Low,
    };
    let blue = (0..10_000)
        .filter(|_| {
            animo::engine::select_animo(&arousal, Shape::Circle, &catalog, &mut rng, 0)
                .unwrap()
                .color()
                == Color::Blue
        })
        .count();
    assert!((blue as f64 / 10_000.0 - 0.5).abs() <= 0.03, "{blue}");
}

#[test]
fn csv_ingest_rejects_bad_input() {
    let good = "user_id,timestamp,bpm\nu1,1,60\nu1,2,61\nu2,1,70\n";
    assert_eq!(read_heart_rate_csv(good.as_bytes()).unwrap().len(), 3);
    for bad in [
        "user,timestamp,bpm\nu1,1,60\n",
        "user_id,timestamp,bpm\nu1,2,60\nu1,2,61\n",
        "user_id,timestamp,bpm\nu1,1,300\n",
        "user_id,timestamp,bpm\nu1,x,60\n",
    ] {
        assert!(read_heart_rate_csv(bad.as_bytes()).is_err(), "{bad:?}");
    }
}

#[test]
fn stress_episode_raises_window_mean() {
    let profile = HrProfile {
        episodes: vec![Episode {
            start_secs: 3_600,
            duration_secs: 1_800,
            delta_bpm: 30.0,
        }],
        noise_std_bpm: 2.0,
        ..HrProfile::constant(65.0)
    };
    let trace = gen_hr_trace("u".into(), &profile, 0, 3 * 3_600, 1.0, 9);
    let mean = |lo: i64, hi: i64| {
        let xs: Vec<f64> = trace
            .iter()
            .filter(|s| s.timestamp >= lo && s.timestamp < hi)
            .map(|s| s.bpm)
            .collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    let inside = mean(3_600, 5_400);
    let outside = mean(0, 3_600);
    assert!(
        (inside - outside - 30.0).abs() <= 1.0,
        "episode delta {}",
        inside - outside
    );
    assert_eq!(trace.len(), 3 * 3_600);
    assert!(trace.windows(2).all(|w| w[1].timestamp == w[0].timestamp + 1));
}
