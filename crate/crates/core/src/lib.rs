//! Heart-rate driven mood sharing between exactly two people.
//!
//! A wearer's heart rate is normalized against calibrated baselines into an
//! arousal band, which picks an *animo*: an animated shape whose motion
//! energy and color follow the band. Animos are sent to a single partner
//! through a relay, where an unread animo vanishes ten seconds after it is
//! delivered.
//!
//! The crate is split by role:
//!
//! * [`engine`] classifies heart-rate streams into [`engine::AnimoState`]s.
//! * [`protocol`] is the newline-delimited JSON wire format.
//! * [`relay`] owns pairing, routing, the delivery lifecycle and the event log.
//! * [`simulator`] drives synthetic dyads through an in-process relay.
//! * [`analytics`] replays event logs into per-dyad usage statistics.
//! * [`config`] loads and range-checks runtime settings.

pub mod analytics;
pub mod config;
pub mod engine;
pub mod ids;
pub mod protocol;
pub mod relay;
pub mod simulator;

pub use ids::{DyadId, MsgId, Timestamp, UserId};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/classification.md")]
    mod classification {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    mod protocol {}
    #[doc = include_str!("../../../book/src/lifecycle.md")]
    mod lifecycle {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/analytics.md")]
    mod analytics {}
}
