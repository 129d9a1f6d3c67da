//! Capacity simulation for ad hoc networks whose control plane is limited by
//! route discovery (RDP) overhead.

// Negated comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod harness;
pub mod mac;
pub mod par;
pub mod rdp_analysis;
pub mod rdp_flood;
pub mod rng;
pub mod routing;
pub mod simulate;
pub mod topology;

pub use config::NetworkConfig;
pub use error::{Error, Result};
