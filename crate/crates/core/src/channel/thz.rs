//! THz communication links: gains, SNR, finite-blocklength rate, latency
//! and total service cost.

use std::f64::consts::{LN_2, PI, TAU};

use num_complex::Complex64;
use statrs::function::erf::erfc;

use super::{wrap_phase, RisState};
use crate::error::{Error, Result};
use crate::scenario::{PairingMatrix, Scenario, ScenarioConfig, Vec3, SPEED_OF_LIGHT};

/// Sectored antenna gains `G = 4π/(δ+1)·Ω`, `Ω = 4 asin(tan(ψ_H/2) tan(ψ_V/2))`.
///
/// The same beamwidths are used at both ends.
pub fn antenna_gains(delta_tr: f64, delta_re: f64, beamwidth_h: f64, beamwidth_v: f64) -> Result<(f64, f64)> {
    for (name, d) in [("delta_tr", delta_tr), ("delta_re", delta_re)] {
        if !(d >= 0.0) {
            return Err(Error::Domain(format!("{name} = {d} must be ≥ 0")));
        }
    }
    for (name, psi) in [("beamwidth_h", beamwidth_h), ("beamwidth_v", beamwidth_v)] {
        if !(psi > 0.0 && psi < PI) {
            return Err(Error::Domain(format!("{name} = {psi} outside (0, π)")));
        }
    }
    let mut prod = (beamwidth_h / 2.0).tan() * (beamwidth_v / 2.0).tan();
    // asin is ill-conditioned at 1; snap rounding noise from tan(π/4) etc.
    if (prod - 1.0).abs() < 1e-12 {
        prod = 1.0;
    }
    if prod > 1.0 {
        return Err(Error::Domain(format!(
            "tan(ψ_H/2)·tan(ψ_V/2) = {prod} exceeds 1; solid angle undefined"
        )));
    }
    let omega = 4.0 * prod.asin();
    Ok((4.0 * PI / (delta_tr + 1.0) * omega, 4.0 * PI / (delta_re + 1.0) * omega))
}

fn gains(cfg: &ScenarioConfig) -> Result<(f64, f64)> {
    antenna_gains(cfg.delta_gain, cfg.delta_gain, cfg.beamwidth_h, cfg.beamwidth_v)
}

/// Position of RIS element `k`; elements lie on `ris_axis` centred at
/// `ris_pos`, sub-surface `b` owning elements `b·K_b .. (b+1)·K_b`.
pub fn ris_element_pos(cfg: &ScenarioConfig, k: usize) -> Vec3 {
    let offset = k as f64 - (cfg.k_total() as f64 - 1.0) / 2.0;
    cfg.ris_pos + cfg.ris_axis * (offset * cfg.spacing)
}

/// Per-element phase differences (ω_k toward the user, φ_k from the CBS),
/// relative to the first element of sub-surface `b`.
pub fn subsurface_phases(cfg: &ScenarioConfig, b: usize, user_pos: &Vec3) -> (Vec<f64>, Vec<f64>) {
    let wn = TAU * cfg.f_thz / SPEED_OF_LIGHT;
    let first = ris_element_pos(cfg, b * cfg.k_b);
    let (du0, db0) = ((first - user_pos).norm(), (first - cfg.cbs_pos[b]).norm());
    (0..cfg.k_b)
        .map(|i| {
            let p = ris_element_pos(cfg, b * cfg.k_b + i);
            (wn * ((p - user_pos).norm() - du0), wn * ((p - cfg.cbs_pos[b]).norm() - db0))
        })
        .unzip()
}

/// Phases that make every term of sub-surface `b`'s sum real and positive
/// for a user at `pos`.
pub fn cophase(cfg: &ScenarioConfig, b: usize, pos: &Vec3) -> Vec<f64> {
    let (w, f) = subsurface_phases(cfg, b, pos);
    w.iter().zip(&f).map(|(a, c)| wrap_phase(a + c)).collect()
}

/// Cascade prefactor ĝ at path length `d`.
pub fn free_space_gain(cfg: &ScenarioConfig, d: f64) -> Result<Complex64> {
    if !(d > 0.0) {
        return Err(Error::Geometry("zero THz path length".into()));
    }
    let (gt, gr) = gains(cfg)?;
    let amp = (gt * gr).sqrt() * SPEED_OF_LIGHT / (8.0 * PI.powf(1.5) * cfg.f_thz * d) * (-0.5 * cfg.absorption * d).exp();
    Ok(Complex64::from_polar(amp, -TAU * cfg.f_thz * d / SPEED_OF_LIGHT))
}

/// Cascade length `d_{b,b,u}` via the sub-surface's first element.
pub fn cascade_distance(cfg: &ScenarioConfig, b: usize, user_pos: &Vec3) -> f64 {
    let first = ris_element_pos(cfg, b * cfg.k_b);
    (first - user_pos).norm() + (cfg.cbs_pos[b] - first).norm()
}

/// Cascaded gain of CBS `b` to a user at `user_pos` through sub-surface `b`
/// with phases `theta_b` (length K_b), assuming `s_{b,u} = 1`.
pub fn cascaded_gain_at(cfg: &ScenarioConfig, b: usize, user_pos: &Vec3, theta_b: &[f64]) -> Result<Complex64> {
    if theta_b.len() != cfg.k_b {
        return Err(Error::Shape(format!("sub-surface phases: {} given, K_b = {}", theta_b.len(), cfg.k_b)));
    }
    let d = cascade_distance(cfg, b, user_pos);
    let first = ris_element_pos(cfg, b * cfg.k_b);
    if (first - user_pos).norm() < 1e-12 || (first - cfg.cbs_pos[b]).norm() < 1e-12 {
        return Err(Error::Geometry("zero RIS hop distance".into()));
    }
    let g_hat = free_space_gain(cfg, d)?;
    let (w, f) = subsurface_phases(cfg, b, user_pos);
    let sum: Complex64 = (0..cfg.k_b)
        .map(|i| Complex64::from_polar(1.0, theta_b[i] - w[i] - f[i]))
        .sum();
    Ok(g_hat * sum)
}

/// `g_{b,u} = s_{b,u} ĝ a_R Θ_b a_Sᴴ` for the scenario's true user position.
pub fn cascaded_gain(scenario: &Scenario, b: usize, u: usize, ris: &RisState, pairing: &PairingMatrix) -> Result<Complex64> {
    let cfg = &scenario.config;
    if pairing.get(b, u) == 0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    if ris.len() != cfg.k_total() {
        return Err(Error::Shape(format!("RIS has {} phases, expected K = {}", ris.len(), cfg.k_total())));
    }
    let theta = &ris.theta[b * cfg.k_b..(b + 1) * cfg.k_b];
    cascaded_gain_at(cfg, b, &scenario.users[u].true_pos, theta)
}

/// Direct-path amplitude at CBS-user distance `e`.
pub fn direct_gain_at(cfg: &ScenarioConfig, b: usize, user_pos: &Vec3) -> Result<f64> {
    let e = (cfg.cbs_pos[b] - user_pos).norm();
    if !(e > 1e-12) {
        return Err(Error::Geometry("user coincides with a CBS".into()));
    }
    let (gt, gr) = gains(cfg)?;
    Ok((gt * gr).sqrt() * SPEED_OF_LIGHT / (8.0 * PI.powf(1.5) * cfg.f_thz * e) * (-0.5 * cfg.absorption * e).exp())
}

pub fn path_loss_direct(scenario: &Scenario, b: usize, u: usize, pairing: &PairingMatrix) -> Result<Complex64> {
    if pairing.get(b, u) == 0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    Ok(Complex64::new(direct_gain_at(&scenario.config, b, &scenario.users[u].true_pos)?, 0.0))
}

/// `ρ = P|g + L|²/n²`.
pub fn link_snr(p_t: f64, g: Complex64, l: Complex64, noise_power: f64) -> Result<f64> {
    if !(noise_power > 0.0) {
        return Err(Error::Domain(format!("noise power {noise_power} must be > 0")));
    }
    Ok(p_t * (g + l).norm_sqr() / noise_power)
}

/// Gaussian tail `Q(x) = ½ erfc(x/√2)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse Gaussian tail by bisection, polished with Newton steps.
pub fn q_inv(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("ε = {eps} outside (0, 1)")));
    }
    if eps == 0.5 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if q_function(mid) > eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..4 {
        let pdf = (-0.5 * x * x).exp() / (TAU).sqrt();
        if pdf <= 0.0 {
            break;
        }
        let step = (q_function(x) - eps) / pdf;
        x += step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    Ok(x)
}

/// Finite-blocklength rate in bits/symbol with dispersion `1 − (1+ρ)⁻²`,
/// clamped at zero.
pub fn fbl_rate(snr: f64, m_block: usize, eps: f64) -> Result<f64> {
    if !(snr >= 0.0) {
        return Err(Error::Domain(format!("SNR {snr} must be ≥ 0")));
    }
    if m_block < 1 {
        return Err(Error::Domain("m_block must be ≥ 1".into()));
    }
    let qi = q_inv(eps)?;
    let cap = (1.0 + snr).log2();
    let disp = 1.0 - (1.0 + snr).powi(-2);
    Ok((cap - (disp / m_block as f64).sqrt() * qi / LN_2).max(0.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Latency {
    /// Per-user latency; `f64::INFINITY` when a user has no positive rate.
    pub per_user: Vec<f64>,
    /// `J̄`, the maximum over users.
    pub max: f64,
}

impl Latency {
    pub fn flags(&self, dt: f64) -> Vec<bool> {
        self.per_user.iter().map(|&j| pass_flag(j, dt)).collect()
    }
}

/// `J_u = S / (Σ_b D_{b,u} · W)`; `rates[u][b]` is `D_{b,u}`.
pub fn transmission_latency(s_bits: f64, rates: &[Vec<f64>], bandwidth_thz: f64) -> Latency {
    let per_user: Vec<f64> = rates
        .iter()
        .map(|r| {
            let agg: f64 = r.iter().sum::<f64>() * bandwidth_thz;
            if agg > 0.0 {
                s_bits / agg
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let max = per_user.iter().copied().fold(0.0, f64::max);
    Latency { per_user, max }
}

/// `𝒦 = 1` iff `J ≤ Δt`.
pub fn pass_flag(latency: f64, dt: f64) -> bool {
    latency <= dt
}

/// `𝓔 = −C_meta + f_P ΣP_t + f_ε ε`.
pub fn total_service_cost(cfg: &ScenarioConfig, p_series: &[f64], eps: f64) -> Result<f64> {
    if let Some((t, p)) = p_series.iter().enumerate().find(|(_, p)| !(**p > 0.0 && **p <= cfg.p_max)) {
        return Err(Error::Constraint {
            eq: "22a",
            msg: format!("P[{t}] = {p} outside (0, P_max = {}]", cfg.p_max),
        });
    }
    if !(eps > 0.0 && eps <= cfg.eps_max) {
        return Err(Error::Constraint {
            eq: "22f",
            msg: format!("ε = {eps} outside (0, eps_max = {}]", cfg.eps_max),
        });
    }
    Ok(-cfg.c_meta + cfg.f_p * p_series.iter().sum::<f64>() + cfg.f_eps * eps)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkMetrics {
    pub snr: f64,
    pub rate: f64,
    pub latency: f64,
    pub cost: f64,
}
