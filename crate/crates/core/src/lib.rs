//! Core library for a STAR-RIS assisted uplink in which NOMA users and
//! over-the-air federated learning (AirFL) users share the same
//! time-frequency resources.
//!
//! The crate is organized around the pieces needed to study and optimize
//! such a network at desk scale:
//!
//! * [`channel`] — network geometry and fading channel generation,
//! * [`ris`] — STAR-RIS mode-switching configurations and the matrix
//!   liftings used by the semidefinite relaxation,
//! * [`signal`] — successive signal processing (SIC, SINR, aggregation MSE),
//! * [`learning`] — the synthetic strongly convex training task and the
//!   noisy federated training loop,
//! * [`bound`] — closed-form convergence bounds and their gradients,
//! * [`solver`] — small dense convex kernels (barrier QCQP, splitting SDP),
//! * [`alloc`] — trust-region SCA power allocation, penalty-based SDR
//!   STAR-RIS configuration, the alternating loop, and baseline schemes.

pub mod alloc;
pub mod bound;
pub mod channel;
pub mod learning;
pub mod ris;
pub mod rng;
pub mod scenario;
pub mod signal;
pub mod solver;

pub use bound::TaskConstants;
pub use channel::{ChannelParams, ChannelRealization, Side, Topology, UserRole};
pub use learning::{LearningRun, LearningTask, RateSchedule};
pub use ris::{LiftedRis, StarRisConfig};
pub use signal::{PowerSchedule, SinrReport};

/// Complex scalar used throughout the crate.
pub type C64 = num_complex::Complex<f64>;

/// Convert a dB value to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Convert dBm to linear watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}
