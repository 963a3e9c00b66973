//! Desk-scale sandbox for safe, uncertainty-aware imitation of a needle
//! insertion task: a kinematic simulator with a scripted expert, ensemble
//! diffusion policies trained on its demonstrations, a likelihood-ratio
//! out-of-distribution gate, and an ellipsoidal control-barrier velocity
//! filter, plus the scenario harness that exercises them end to end.

pub mod cbf;
pub mod config;
pub mod data;
pub mod ddpm;
pub mod ensemble;
pub mod harness;
pub mod error;
pub mod expert;
pub mod net;
pub mod ood;
pub mod plot;
pub mod sim;
pub mod stats;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
