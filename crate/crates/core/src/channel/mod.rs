//! Physical-layer quantities for both stages.
//!
//! [`loc`] models the mmWave localisation band (LBS → user plus the RIS
//! cascade, per subcarrier); [`thz`] models the THz communication links
//! (antenna gains, cascaded and direct gains, SNR, finite-blocklength rate,
//! latency and service cost).

pub mod loc;
pub mod thz;

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng as _;

use crate::error::{Error, Result};

pub use loc::{localisation_channel, rx_signal, ChannelParams, ChannelRealization, LocModel, PositionParams};
pub use thz::{
    antenna_gains, cascaded_gain, fbl_rate, link_snr, pass_flag, path_loss_direct, q_function, q_inv,
    total_service_cost, transmission_latency, Latency, LinkMetrics,
};

/// Uniform linear array response; entry k is `exp(j·k·(2π/λ)·z·sin angle)`.
pub fn steering_vector(n_elems: usize, spacing: f64, wavelength: f64, angle: f64) -> Vec<Complex64> {
    let step = TAU * spacing / wavelength * angle.sin();
    (0..n_elems).map(|k| Complex64::from_polar(1.0, k as f64 * step)).collect()
}

/// RIS reflection phases, one per element, each in `[0, 2π)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RisState {
    pub theta: Vec<f64>,
}

impl RisState {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if let Some((i, t)) = theta.iter().enumerate().find(|(_, t)| !(0.0..TAU).contains(*t)) {
            return Err(Error::Domain(format!("RIS phase {i} = {t} outside [0, 2π)")));
        }
        Ok(Self { theta })
    }

    pub fn zeros(k: usize) -> Self {
        Self { theta: vec![0.0; k] }
    }

    pub fn random(k: usize, rng: &mut crate::rng::Rng) -> Self {
        Self { theta: (0..k).map(|_| rng.random::<f64>() * TAU).collect() }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }
}

/// Wrap an angle into `[0, 2π)`.
pub fn wrap_phase(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}
