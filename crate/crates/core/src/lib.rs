//! Parity-space detection of replay attacks on discrete LTI control loops.

pub mod covariance;
pub mod detect;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod optimize;
pub mod parity;
pub mod plant;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
