//! Simulation and closed-form analysis of multi-packet spreading with
//! rateless coding over mobile networks.
//!
//! * [`meeting`]: Poisson pairwise meeting process.
//! * [`mobility`]: random direction / random waypoint nodes and contact detection.
//! * [`protocol`]: naive and RMPR relay protocols over a meeting stream.
//! * [`analytics`]: closed-form duplication, delay and spreading-time models.
//! * [`experiment`]: seeded Monte Carlo batches, sweeps and export.

pub mod analytics;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod meeting;
pub mod mobility;
pub mod protocol;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use meeting::{MeetingEvent, MeetingRate};
pub use protocol::{DecodeRule, ExchangeMode, PacketId, Protocol, TrialRecord};
pub use scalar::Scalar;

/// Closed-form predictions in double precision.
pub type Prediction = analytics::TheoryPrediction<f64>;
/// Closed-form predictions in single precision.
pub type Prediction32 = analytics::TheoryPrediction<f32>;
pub type Rate = MeetingRate<f64>;
pub type Rate32 = MeetingRate<f32>;
