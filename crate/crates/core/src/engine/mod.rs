//! Heart rate to animo classification.
//!
//! Everything here is a pure function of its arguments. Randomness is always
//! an explicit `rng` parameter, so a seeded generator reproduces every draw.
//!
//! The pipeline for one wearer is
//! [`calibrate_baselines`] once, then per sample [`smooth_heart_rate`],
//! [`compute_arousal`], [`select_animo`] and [`detect_state_change`].
//! [`MoodTracker`] strings those together for a live stream.

mod catalog;
mod ingest;
mod tracker;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{Timestamp, UserId};

pub use catalog::{AnimoId, AnimoSpec, Catalog, CatalogError, CategoryTag};
pub use ingest::read_heart_rate_csv;
pub use tracker::{MoodTracker, TrackerConfig, TrackerUpdate};

/// Exclusive lower bound of the physiological plausibility gate.
pub const MIN_PLAUSIBLE_BPM: f64 = 20.0;
/// Exclusive upper bound of the physiological plausibility gate.
pub const MAX_PLAUSIBLE_BPM: f64 = 250.0;

pub const DEFAULT_EMA_ALPHA: f64 = 0.3;
/// Minimum spacing between two state-change vibrations.
pub const DEFAULT_MIN_NOTIFY_GAP_SECS: i64 = 600;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("calibration task has no samples")]
    EmptyTask,
    #[error("stress baseline {high_bpm} bpm is not above calm baseline {low_bpm} bpm; re-run calibration")]
    CalibrationDegenerate { low_bpm: f64, high_bpm: f64 },
    #[error("implausible heart rate {bpm} bpm")]
    ImplausibleSample { bpm: f64 },
    #[error("no catalog entry with energy band {0}")]
    EmptyBand(EnergyBand),
    #[error("color {color} is not allowed for band {band}")]
    IllegalColor { band: EnergyBand, color: Color },
    #[error("smoothing factor {0} outside (0, 1]")]
    InvalidAlpha(f64),
    #[error("band thresholds must satisfy 0 <= low <= high <= 1, got {low}..{high}")]
    InvalidThresholds { low: f64, high: f64 },
    #[error("baselines must satisfy low < high inside the plausibility gate, got {low_bpm}..{high_bpm}")]
    InvalidBaselines { low_bpm: f64, high_bpm: f64 },
    #[error("timestamp {timestamp} for {user_id} does not follow {previous}")]
    NonMonotonicTimestamp {
        user_id: UserId,
        previous: Timestamp,
        timestamp: Timestamp,
    },
    #[error("heart-rate csv: {0}")]
    Csv(String),
}

pub fn is_plausible(bpm: f64) -> bool {
    bpm > MIN_PLAUSIBLE_BPM && bpm < MAX_PLAUSIBLE_BPM
}

/// One timestamped heart-rate reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeartRateSample {
    pub user_id: UserId,
    pub timestamp: Timestamp,
    pub bpm: f64,
}

impl HeartRateSample {
    pub fn new(user_id: impl Into<UserId>, timestamp: Timestamp, bpm: f64) -> Result<Self, EngineError> {
        if !is_plausible(bpm) {
            return Err(EngineError::ImplausibleSample { bpm });
        }
        Ok(Self {
            user_id: user_id.into(),
            timestamp,
            bpm,
        })
    }
}

/// Calibrated calm and stress anchors for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    user_id: UserId,
    low_bpm: f64,
    high_bpm: f64,
}

impl Baselines {
    pub fn new(user_id: impl Into<UserId>, low_bpm: f64, high_bpm: f64) -> Result<Self, EngineError> {
        if !(is_plausible(low_bpm) && is_plausible(high_bpm) && low_bpm < high_bpm) {
            return Err(EngineError::InvalidBaselines { low_bpm, high_bpm });
        }
        Ok(Self {
            user_id: user_id.into(),
            low_bpm,
            high_bpm,
        })
    }

    pub fn user_id(&self) -> &UserId {
        &self.user_id
    }

    pub fn low_bpm(&self) -> f64 {
        self.low_bpm
    }

    pub fn high_bpm(&self) -> f64 {
        self.high_bpm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergyBand {
    Low,
    Mid,
    High,
}

impl EnergyBand {
    pub const ALL: [EnergyBand; 3] = [EnergyBand::Low, EnergyBand::Mid, EnergyBand::High];

    /// Colors an animo of this band may take.
    pub fn palette(self) -> &'static [Color] {
        match self {
            EnergyBand::High => &[Color::Yellow, Color::Red],
            EnergyBand::Mid => &[Color::White],
            EnergyBand::Low => &[Color::Blue, Color::Green],
        }
    }

    pub fn allows(self, color: Color) -> bool {
        self.palette().contains(&color)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EnergyBand::Low => "low",
            EnergyBand::Mid => "mid",
            EnergyBand::High => "high",
        }
    }
}

impl fmt::Display for EnergyBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A dyad member's shape, fixed when the pair is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Diamond,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Yellow,
    Red,
    White,
    Blue,
    Green,
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Color::Yellow => "yellow",
            Color::Red => "red",
            Color::White => "white",
            Color::Blue => "blue",
            Color::Green => "green",
        };
        f.write_str(name)
    }
}

/// Cut points on the normalized arousal scale.
///
/// `value < low` is [`EnergyBand::Low`], `value > high` is
/// [`EnergyBand::High`], anything between (inclusive) is [`EnergyBand::Mid`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandThresholds {
    pub low: f64,
    pub high: f64,
}

impl BandThresholds {
    pub fn new(low: f64, high: f64) -> Result<Self, EngineError> {
        let t = Self { low, high };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if (0.0..=1.0).contains(&self.low) && (0.0..=1.0).contains(&self.high) && self.low <= self.high {
            Ok(())
        } else {
            Err(EngineError::InvalidThresholds {
                low: self.low,
                high: self.high,
            })
        }
    }

    pub fn band(&self, value: f64) -> EnergyBand {
        if value < self.low {
            EnergyBand::Low
        } else if value > self.high {
            EnergyBand::High
        } else {
            EnergyBand::Mid
        }
    }
}

impl Default for BandThresholds {
    fn default() -> Self {
        Self {
            low: 1.0 / 3.0,
            high: 2.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArousalLevel {
    pub value: f64,
    pub band: EnergyBand,
}

/// A concrete, shareable animo.
///
/// Construction checks the band/color rule, so an illegal pairing such as a
/// white high-energy animo cannot exist. Deserialization goes through the
/// same check.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawAnimoState")]
pub struct AnimoState {
    animo_id: AnimoId,
    shape: Shape,
    color: Color,
    band: EnergyBand,
    computed_at: Timestamp,
}

/// Unchecked field bag mirroring [`AnimoState`]'s serialized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAnimoState {
    pub animo_id: AnimoId,
    pub shape: Shape,
    pub color: Color,
    pub band: EnergyBand,
    pub computed_at: Timestamp,
}

impl TryFrom<RawAnimoState> for AnimoState {
    type Error = EngineError;

    fn try_from(raw: RawAnimoState) -> Result<Self, Self::Error> {
        AnimoState::new(raw.animo_id, raw.shape, raw.color, raw.band, raw.computed_at)
    }
}

impl AnimoState {
    pub fn new(
        animo_id: impl Into<AnimoId>,
        shape: Shape,
        color: Color,
        band: EnergyBand,
        computed_at: Timestamp,
    ) -> Result<Self, EngineError> {
        if !band.allows(color) {
            return Err(EngineError::IllegalColor { band, color });
        }
        Ok(Self {
            animo_id: animo_id.into(),
            shape,
            color,
            band,
            computed_at,
        })
    }

    pub fn animo_id(&self) -> &AnimoId {
        &self.animo_id
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn color(&self) -> Color {
        self.color
    }

    pub fn band(&self) -> EnergyBand {
        self.band
    }

    pub fn computed_at(&self) -> Timestamp {
        self.computed_at
    }

    /// Full invariant check including the catalog's energy band for the id.
    pub fn check_against(&self, catalog: &Catalog) -> Result<(), CatalogError> {
        match catalog.get(&self.animo_id) {
            None => Err(CatalogError::UnknownAnimo(self.animo_id.clone())),
            Some(spec) if spec.energy_band != self.band => Err(CatalogError::BandMismatch {
                animo_id: self.animo_id.clone(),
                catalog: spec.energy_band,
                state: self.band,
            }),
            Some(_) => Ok(()),
        }
    }
}

/// Averages the calm and stress calibration tasks into baselines.
pub fn calibrate_baselines(calm: &[HeartRateSample], stress: &[HeartRateSample]) -> Result<Baselines, EngineError> {
    let (Some(first), false) = (calm.first(), stress.is_empty()) else {
        return Err(EngineError::EmptyTask);
    };
    if let Some(bad) = calm.iter().chain(stress).find(|s| !is_plausible(s.bpm)) {
        return Err(EngineError::ImplausibleSample { bpm: bad.bpm });
    }
    let mean = |xs: &[HeartRateSample]| xs.iter().map(|s| s.bpm).sum::<f64>() / xs.len() as f64;
    let low_bpm = mean(calm);
    let high_bpm = mean(stress);
    if high_bpm <= low_bpm {
        return Err(EngineError::CalibrationDegenerate { low_bpm, high_bpm });
    }
    Ok(Baselines {
        user_id: first.user_id.clone(),
        low_bpm,
        high_bpm,
    })
}

/// One exponential-moving-average step. `previous = None` seeds the filter.
pub fn smooth_heart_rate(previous: Option<f64>, sample: &HeartRateSample, alpha: f64) -> Result<f64, EngineError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(EngineError::InvalidAlpha(alpha));
    }
    if !is_plausible(sample.bpm) {
        return Err(EngineError::ImplausibleSample { bpm: sample.bpm });
    }
    Ok(match previous {
        None => sample.bpm,
        Some(prev) => alpha * sample.bpm + (1.0 - alpha) * prev,
    })
}

/// Linear position of `bpm` between the baselines, clamped to `[0, 1]`.
///
/// `bpm` must be finite.
pub fn compute_arousal(bpm: f64, baselines: &Baselines, thresholds: &BandThresholds) -> ArousalLevel {
    let span = baselines.high_bpm - baselines.low_bpm;
    let value = ((bpm - baselines.low_bpm) / span).clamp(0.0, 1.0);
    ArousalLevel {
        value,
        band: thresholds.band(value),
    }
}

/// Draws an animo for the arousal band: uniform over catalog entries of that
/// band, then uniform over the band's palette.
pub fn select_animo<R: Rng + ?Sized>(
    arousal: &ArousalLevel,
    shape: Shape,
    catalog: &Catalog,
    rng: &mut R,
    computed_at: Timestamp,
) -> Result<AnimoState, EngineError> {
    let candidates = catalog.in_band(arousal.band);
    if candidates.is_empty() {
        return Err(EngineError::EmptyBand(arousal.band));
    }
    let spec = candidates[rng.random_range(0..candidates.len())];
    let palette = arousal.band.palette();
    let color = palette[rng.random_range(0..palette.len())];
    Ok(AnimoState {
        animo_id: spec.animo_id.clone(),
        shape,
        color,
        band: arousal.band,
        computed_at,
    })
}

/// Whether a band change should vibrate the wearer's watch, debounced by
/// `min_gap` seconds since the previous vibration.
pub fn detect_state_change(
    prev: &AnimoState,
    next: &AnimoState,
    last_notify: Option<Timestamp>,
    now: Timestamp,
    min_gap: i64,
) -> bool {
    prev.band != next.band && last_notify.is_none_or(|last| now - last >= min_gap)
}
