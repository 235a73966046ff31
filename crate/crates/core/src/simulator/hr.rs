//! Synthetic heart-rate traces.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::engine::{HeartRateSample, MAX_PLAUSIBLE_BPM, MIN_PLAUSIBLE_BPM};
use crate::ids::{Timestamp, UserId};

/// Generated values are clipped this far inside the plausibility gate.
const CLIP_MARGIN_BPM: f64 = 1.0;

/// A calm or stress episode, relative to the start of the trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub start_secs: i64,
    pub duration_secs: i64,
    pub delta_bpm: f64,
}

impl Episode {
    fn covers(&self, offset: i64) -> bool {
        offset >= self.start_secs && offset < self.start_secs + self.duration_secs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrProfile {
    pub resting_bpm: f64,
    /// Peak deviation of the daily cycle, highest at noon and lowest at
    /// midnight (UTC seconds of day).
    pub circadian_amplitude_bpm: f64,
    pub episodes: Vec<Episode>,
    pub noise_std_bpm: f64,
    /// Heart-rate rise during the onboarding stress task.
    #[serde(default = "default_stress_delta")]
    pub calibration_stress_delta_bpm: f64,
}

fn default_stress_delta() -> f64 {
    25.0
}

impl HrProfile {
    pub fn constant(resting_bpm: f64) -> Self {
        Self {
            resting_bpm,
            circadian_amplitude_bpm: 0.0,
            episodes: Vec::new(),
            noise_std_bpm: 0.0,
            calibration_stress_delta_bpm: default_stress_delta(),
        }
    }

    /// A plausible wearer: resting 58-76 bpm, a mild daily cycle and a few
    /// stress and calm episodes per day between 07:00 and 22:00.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, days: u32) -> Self {
        let mut episodes = Vec::new();
        for day in 0..i64::from(days) {
            let base = day * 86_400;
            for _ in 0..3 {
                episodes.push(Episode {
                    start_secs: base + rng.random_range(7 * 3600..22 * 3600),
                    duration_secs: rng.random_range(10 * 60..40 * 60),
                    delta_bpm: rng.random_range(20.0..35.0),
                });
            }
            for _ in 0..2 {
                episodes.push(Episode {
                    start_secs: base + rng.random_range(7 * 3600..22 * 3600),
                    duration_secs: rng.random_range(30 * 60..60 * 60),
                    delta_bpm: -rng.random_range(5.0..10.0),
                });
            }
        }
        Self {
            resting_bpm: rng.random_range(58.0..76.0),
            circadian_amplitude_bpm: 5.0,
            episodes,
            noise_std_bpm: 2.0,
            calibration_stress_delta_bpm: default_stress_delta(),
        }
    }

    /// Noise-free heart rate at `ts` for a trace starting at `start`.
    pub fn mean_bpm(&self, start: Timestamp, ts: Timestamp) -> f64 {
        let offset = ts - start;
        let second_of_day = ts.rem_euclid(86_400) as f64;
        let circadian = self.circadian_amplitude_bpm * (TAU * (second_of_day - 6.0 * 3600.0) / 86_400.0).sin();
        let episodes: f64 = self
            .episodes
            .iter()
            .filter(|e| e.covers(offset))
            .map(|e| e.delta_bpm)
            .sum();
        self.resting_bpm + circadian + episodes
    }
}

/// Lazily generated trace, one sample every `period_secs`.
pub struct HrTrace {
    user_id: UserId,
    profile: HrProfile,
    start: Timestamp,
    end: Timestamp,
    next_ts: Timestamp,
    period_secs: i64,
    noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
}

impl HrTrace {
    /// `hz` above 1 is treated as 1 Hz since timestamps are whole seconds.
    pub fn new(user_id: UserId, profile: HrProfile, start: Timestamp, duration_secs: i64, hz: f64, seed: u64) -> Self {
        let period_secs = if hz > 0.0 {
            (1.0 / hz).round().max(1.0) as i64
        } else {
            i64::MAX
        };
        let noise =
            (profile.noise_std_bpm > 0.0).then(|| Normal::new(0.0, profile.noise_std_bpm).expect("positive std"));
        Self {
            user_id,
            profile,
            start,
            end: start + duration_secs.max(0),
            next_ts: start,
            period_secs,
            noise,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn peek_ts(&self) -> Option<Timestamp> {
        (self.next_ts < self.end).then_some(self.next_ts)
    }
}

impl Iterator for HrTrace {
    type Item = HeartRateSample;

    fn next(&mut self) -> Option<HeartRateSample> {
        let ts = self.peek_ts()?;
        self.next_ts = ts.saturating_add(self.period_secs);
        let noise = self.noise.map_or(0.0, |n| n.sample(&mut self.rng));
        let bpm = (self.profile.mean_bpm(self.start, ts) + noise)
            .clamp(MIN_PLAUSIBLE_BPM + CLIP_MARGIN_BPM, MAX_PLAUSIBLE_BPM - CLIP_MARGIN_BPM);
        Some(HeartRateSample {
            user_id: self.user_id.clone(),
            timestamp: ts,
            bpm,
        })
    }
}

/// Baseline plus daily cycle plus episode deltas plus Gaussian noise,
/// clipped into the plausibility gate. Covers `[start, start + duration)`.
pub fn gen_hr_trace(
    user_id: UserId,
    profile: &HrProfile,
    start: Timestamp,
    duration_secs: i64,
    hz: f64,
    seed: u64,
) -> Vec<HeartRateSample> {
    HrTrace::new(user_id, profile.clone(), start, duration_secs, hz, seed).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_duration_is_empty() {
        assert!(gen_hr_trace("u".into(), &HrProfile::constant(70.0), 0, 0, 1.0, 1).is_empty());
    }

    #[test]
    fn constant_profile_is_flat() {
        let t = gen_hr_trace("u".into(), &HrProfile::constant(70.0), 1000, 300, 1.0, 9);
        assert_eq!(t.len(), 300);
        assert!(t.iter().all(|s| s.bpm == 70.0));
        assert!(t.windows(2).all(|w| w[1].timestamp == w[0].timestamp + 1));
    }

    #[test]
    fn clipped_into_gate() {
        let mut p = HrProfile::constant(240.0);
        p.noise_std_bpm = 30.0;
        let t = gen_hr_trace("u".into(), &p, 0, 2000, 1.0, 4);
        assert!(t.iter().all(|s| crate::engine::is_plausible(s.bpm)));
        assert!(t.iter().any(|s| s.bpm == MAX_PLAUSIBLE_BPM - CLIP_MARGIN_BPM));
    }

    #[test]
    fn slow_sampling_rate() {
        let t = gen_hr_trace("u".into(), &HrProfile::constant(70.0), 0, 600, 1.0 / 60.0, 0);
        assert_eq!(t.len(), 10);
        assert_eq!(t[1].timestamp, 60);
    }
}
