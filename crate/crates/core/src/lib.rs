//! Two-stage RIS-assisted xURLLC toolkit.
//!
//! Stage one bounds and estimates user positions from mmWave pilots
//! ([`crlb`], [`locest`]). Stage two trades total service cost against
//! transmission latency on THz finite-blocklength links with a
//! preference-conditioned multi-objective SAC agent ([`morl`]) that is
//! meta-trained across user placements ([`meta`]). Fronts and reliability
//! are summarised in [`pareto`]; [`experiments`] wires the pieces into the
//! figure-style pipelines used by the CLI.

pub mod channel;
pub mod crlb;
pub mod error;
pub mod experiments;
pub mod locest;
pub mod meta;
pub mod morl;
pub mod nn;
pub mod pareto;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
