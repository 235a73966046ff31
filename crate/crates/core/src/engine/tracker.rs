use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    compute_arousal, detect_state_change, select_animo, smooth_heart_rate, AnimoState, BandThresholds, Baselines,
    Catalog, EngineError, HeartRateSample, Shape, DEFAULT_EMA_ALPHA, DEFAULT_MIN_NOTIFY_GAP_SECS,
};
use crate::ids::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub alpha: f64,
    pub thresholds: BandThresholds,
    pub min_notify_gap_secs: i64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_EMA_ALPHA,
            thresholds: BandThresholds::default(),
            min_notify_gap_secs: DEFAULT_MIN_NOTIFY_GAP_SECS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerUpdate {
    pub state: AnimoState,
    pub smoothed_bpm: f64,
    /// The watch should vibrate for a state change.
    pub notify: bool,
}

/// Per-wearer streaming state: the smoothed heart rate, the current animo
/// and when the watch last vibrated for a state change.
#[derive(Debug, Clone)]
pub struct MoodTracker {
    baselines: Baselines,
    shape: Shape,
    config: TrackerConfig,
    smoothed: Option<f64>,
    state: Option<AnimoState>,
    last_notify: Option<Timestamp>,
    last_ts: Option<Timestamp>,
}

impl MoodTracker {
    pub fn new(baselines: Baselines, shape: Shape, config: TrackerConfig) -> Self {
        Self {
            baselines,
            shape,
            config,
            smoothed: None,
            state: None,
            last_notify: None,
            last_ts: None,
        }
    }

    pub fn state(&self) -> Option<&AnimoState> {
        self.state.as_ref()
    }

    pub fn baselines(&self) -> &Baselines {
        &self.baselines
    }

    pub fn last_notify(&self) -> Option<Timestamp> {
        self.last_notify
    }

    /// Recomputes the animo from one new sample.
    pub fn ingest<R: Rng + ?Sized>(
        &mut self,
        sample: &HeartRateSample,
        catalog: &Catalog,
        rng: &mut R,
    ) -> Result<TrackerUpdate, EngineError> {
        if let Some(previous) = self.last_ts {
            if sample.timestamp <= previous {
                return Err(EngineError::NonMonotonicTimestamp {
                    user_id: sample.user_id.clone(),
                    previous,
                    timestamp: sample.timestamp,
                });
            }
        }
        let smoothed = smooth_heart_rate(self.smoothed, sample, self.config.alpha)?;
        let arousal = compute_arousal(smoothed, &self.baselines, &self.config.thresholds);
        let next = select_animo(&arousal, self.shape, catalog, rng, sample.timestamp)?;
        let now = sample.timestamp;
        let notify = self.state.as_ref().is_some_and(|prev| {
            detect_state_change(prev, &next, self.last_notify, now, self.config.min_notify_gap_secs)
        });
        if notify {
            self.last_notify = Some(now);
        }
        self.smoothed = Some(smoothed);
        self.last_ts = Some(now);
        self.state = Some(next.clone());
        Ok(TrackerUpdate {
            state: next,
            smoothed_bpm: smoothed,
            notify,
        })
    }
}
