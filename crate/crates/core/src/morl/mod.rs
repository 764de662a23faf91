//! Preference-conditioned multi-objective soft actor-critic.
//!
//! Two objectives are carried as vectors throughout: slot cost and
//! worst-user latency, both as improvement rewards. [`env`] wraps the THz
//! links, [`sac`] holds the networks, losses and training loop, and
//! [`tabular`] is a finite multi-objective MDP used to check the operator's
//! contraction and fixed point.

pub mod env;
pub mod replay;
pub mod sac;
pub mod tabular;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use env::{EnvConfig, MoAction, MoEnv, MoState, RewardVector, StepMetrics};
pub use replay::{MoTransition, ReplayBuffer};
pub use sac::{
    policy_loss, q_loss, train_mosac, value_loss, Combine, Episode, LossGrads, MoSac, PolicyLoss, SacHyper,
    SacNets, TrainCurve,
};
pub use tabular::TabularMoMdp;

/// Linear preference over (cost, latency).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preference {
    pub w: [f64; 2],
}

impl Preference {
    pub fn new(w1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w1) {
            return Err(Error::Domain(format!("preference weight {w1} outside [0, 1]")));
        }
        Ok(Self { w: [w1, 1.0 - w1] })
    }

    pub fn scalarise(&self, v: &[f64; 2]) -> f64 {
        self.w[0] * v[0] + self.w[1] * v[1]
    }

    /// `n` evenly spaced preferences from (0, 1) to (1, 0).
    pub fn grid(n: usize) -> Vec<Self> {
        match n {
            0 => Vec::new(),
            1 => vec![Self { w: [0.5, 0.5] }],
            _ => (0..n).map(|i| Self::new(i as f64 / (n - 1) as f64).unwrap()).collect(),
        }
    }
}

pub fn sample_preference(rng: &mut Rng) -> Preference {
    let u: f64 = rng.random();
    Preference { w: [u, 1.0 - u] }
}

/// Scale `g` so its largest magnitude is 1; a zero vector is returned as is.
pub fn unit_max_norm(g: &[f64]) -> Vec<f64> {
    let m = g.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if m > 0.0 {
        g.iter().map(|x| x / m).collect()
    } else {
        g.to_vec()
    }
}

/// Minimum-norm point `ν·g1 + (1 − ν)·g2` on the segment between two
/// gradients.
pub fn min_norm_combine(g1: &[f64], g2: &[f64]) -> Result<(f64, Vec<f64>)> {
    if g1.len() != g2.len() {
        return Err(Error::Shape(format!("gradients of length {} and {}", g1.len(), g2.len())));
    }
    if g1.iter().chain(g2).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("min-norm input".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in g1.iter().zip(g2) {
        num += (b - a) * b;
        den += (a - b) * (a - b);
    }
    let nu = if den > 0.0 { (num / den).clamp(0.0, 1.0) } else { 0.5 };
    Ok((nu, g1.iter().zip(g2).map(|(a, b)| nu * a + (1.0 - nu) * b).collect()))
}
