//! Data-driven cooperative output regulation for leader–follower networks.
//!
//! Followers estimate an unknown harmonic leader with a distributed adaptive
//! observer, then learn feedback and feedforward gains from one logged run by
//! off-policy policy iteration. A model-based oracle provides ground truth.

pub mod datacollect;
pub mod error;
pub mod harness;
pub mod learner;
pub mod linalg;
pub mod matrix_serde;
pub mod observer;
pub mod oracle;
pub mod plant;
pub mod topology;

pub use error::{Error, Result};
