//! mmWave localisation channel.
//!
//! Per subcarrier m the user sees `hᴴ = h_LUᴴ + h_RUᴴ Θ H_LR`. With pilot
//! `X^m` the noiseless observation is
//!
//! ```text
//! h̃_m = √P0 [ α_L e_m(τ_L) a_Lᴴ(ω_L) X^m + α_c e_m(τ_R) c_R(ω_R) a_Lᴴ(ω_LR) X^m ]
//! ```
//!
//! with `e_m(τ) = exp(−j2π m τ B0 / M)`, `c_R(ω) = a_Rᴴ(ω) Θ a_R(φ_LR)` and the
//! cascade amplitude `α_c = α_LR α_RU`. The clock offset η enters both
//! delays once. A single-antenna user sees `c_R` only as a scalar, so with a
//! fixed RIS profile ω_R would fold into α_c; the RIS therefore steps
//! through one random profile `Θ_m` per pilot symbol, which makes the
//! RIS-user angle identifiable. Path moduli follow free-space decay; the cascade uses the
//! sum distance and a `1/√K` aperture normalisation so a random RIS phase
//! profile gives a reflected path of the same order as the LOS path.

use std::f64::consts::{PI, TAU};

use nalgebra::SMatrix;
use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{steering_vector, RisState};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scenario::{ScenarioConfig, UserState, Vec3, SPEED_OF_LIGHT};

pub type Matrix8 = SMatrix<f64, 8, 8>;

const J: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// q̄ = [τ_L, ω_L, ρ_L, φ_L, τ_R, ω_R, ρ_c, φ_c].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelParams(pub [f64; 8]);

/// q̂ = [x, y, h, ρ_L, φ_L, ρ_c, φ_c, η].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositionParams(pub [f64; 8]);

impl PositionParams {
    pub fn pos(&self) -> Vec3 {
        Vec3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn eta(&self) -> f64 {
        self.0[7]
    }
}

/// One subcarrier's channel for one user.
#[derive(Clone, Debug)]
pub struct ChannelRealization {
    /// LBS → user row `h_LUᴴ` (N entries).
    pub h_lu: Vec<Complex64>,
    /// RIS → user row `h_RUᴴ` (K entries).
    pub h_ru: Vec<Complex64>,
    /// LBS → RIS matrix, K×N row-major.
    pub h_lr: Vec<Complex64>,
    /// Effective row `hᴴ` (N entries).
    pub h: Vec<Complex64>,
    pub params: ChannelParams,
    /// LBS AOD toward the RIS and RIS AOA from the LBS.
    pub omega_lr: f64,
    pub phi_lr: f64,
    pub tau_lr: f64,
    pub tau_ru: f64,
}

fn wrap_pi(x: f64) -> f64 {
    let r = (x + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}

fn safe_asin(s: f64) -> f64 {
    s.clamp(-1.0, 1.0).asin()
}

/// Fixed geometry of the LBS-RIS leg.
#[derive(Clone, Debug)]
struct LegGeometry {
    d_lr: f64,
    sin_omega_lr: f64,
    sin_phi_lr: f64,
}

fn leg_geometry(cfg: &ScenarioConfig) -> Result<LegGeometry> {
    let v = cfg.ris_pos - cfg.lbs_pos;
    let d_lr = v.norm();
    if d_lr < 1e-9 {
        return Err(Error::Geometry("LBS and RIS coincide".into()));
    }
    Ok(LegGeometry {
        d_lr,
        sin_omega_lr: (v / d_lr).dot(&cfg.lbs_axis),
        sin_phi_lr: (-v / d_lr).dot(&cfg.ris_axis),
    })
}

/// Channel parameters of a user at `pos` with clock offset `eta`, moduli and
/// phases from free-space propagation.
pub fn true_channel_params(cfg: &ScenarioConfig, pos: &Vec3, eta: f64) -> Result<ChannelParams> {
    let leg = leg_geometry(cfg)?;
    let vl = pos - cfg.lbs_pos;
    let vr = pos - cfg.ris_pos;
    let (d_l, d_ru) = (vl.norm(), vr.norm());
    if d_l < 1e-9 {
        return Err(Error::Geometry("user coincides with the LBS".into()));
    }
    if d_ru < 1e-9 {
        return Err(Error::Geometry("user coincides with the RIS".into()));
    }
    let lam = cfg.lambda_c;
    let d_c = leg.d_lr + d_ru;
    let k = cfg.k_total() as f64;
    Ok(ChannelParams([
        d_l / SPEED_OF_LIGHT + eta,
        safe_asin((vl / d_l).dot(&cfg.lbs_axis)),
        lam / (4.0 * PI * d_l),
        wrap_pi(-TAU * d_l / lam),
        d_c / SPEED_OF_LIGHT + eta,
        safe_asin((vr / d_ru).dot(&cfg.ris_axis)),
        lam / (4.0 * PI * d_c * k.sqrt()),
        wrap_pi(-TAU * d_c / lam),
    ]))
}

/// Build the per-subcarrier localisation channel for a user.
pub fn localisation_channel(
    cfg: &ScenarioConfig,
    user: &UserState,
    ris: &RisState,
    m: usize,
) -> Result<ChannelRealization> {
    channel_realization(cfg, &user.true_pos, user.clock_offset, ris, m, true)
}

pub(crate) fn channel_realization(
    cfg: &ScenarioConfig,
    pos: &Vec3,
    eta: f64,
    ris: &RisState,
    m: usize,
    with_ris: bool,
) -> Result<ChannelRealization> {
    if m >= cfg.m_subcarriers {
        return Err(Error::Domain(format!("subcarrier {m} ≥ M = {}", cfg.m_subcarriers)));
    }
    let k = cfg.k_total();
    if ris.len() != k {
        return Err(Error::Shape(format!("RIS has {} phases, expected K = {k}", ris.len())));
    }
    let leg = leg_geometry(cfg)?;
    let q = true_channel_params(cfg, pos, eta)?.0;
    let n = cfg.n_antennas;
    let lam = cfg.lambda_c;
    let z = cfg.spacing;
    let delay = |tau: f64| Complex64::from_polar(1.0, -TAU * m as f64 * tau * cfg.bandwidth_mm / cfg.m_subcarriers as f64);

    let alpha_l = Complex64::from_polar(q[2], q[3]);
    let a_l = steering_vector(n, z, lam, q[1]);
    let h_lu: Vec<Complex64> = a_l.iter().map(|a| alpha_l * delay(q[0]) * a.conj()).collect();

    // Split the cascade amplitude evenly between the two legs; only the
    // product is observable.
    let tau_lr = leg.d_lr / SPEED_OF_LIGHT;
    let tau_ru = q[4] - tau_lr;
    let d_ru = (pos - cfg.ris_pos).norm();
    let amp = if with_ris { q[6].sqrt() } else { 0.0 };
    let alpha_lr = Complex64::from_polar(amp, -TAU * leg.d_lr / lam);
    let alpha_ru = Complex64::from_polar(amp, -TAU * d_ru / lam);
    let omega_lr = safe_asin(leg.sin_omega_lr);
    let phi_lr = safe_asin(leg.sin_phi_lr);
    let a_r_in = steering_vector(k, z, lam, phi_lr);
    let a_l_out = steering_vector(n, z, lam, omega_lr);
    let a_r_out = steering_vector(k, z, lam, q[5]);
    let mut h_lr = vec![Complex64::new(0.0, 0.0); k * n];
    for kk in 0..k {
        for nn in 0..n {
            h_lr[kk * n + nn] = alpha_lr * delay(tau_lr) * a_r_in[kk] * a_l_out[nn].conj();
        }
    }
    let h_ru: Vec<Complex64> = a_r_out.iter().map(|a| alpha_ru * delay(tau_ru) * a.conj()).collect();

    let mut h = h_lu.clone();
    for kk in 0..k {
        let w = h_ru[kk] * Complex64::from_polar(1.0, ris.theta[kk]);
        for nn in 0..n {
            h[nn] += w * h_lr[kk * n + nn];
        }
    }
    Ok(ChannelRealization {
        h_lu,
        h_ru,
        h_lr,
        h,
        params: ChannelParams(q),
        omega_lr,
        phi_lr,
        tau_lr,
        tau_ru,
    })
}

/// `Y = hᴴX + n₀` with `n₀ ~ CN(0, ν²)`.
pub fn rx_signal(h: &[Complex64], x: &[Complex64], noise_var: f64, rng: &mut Rng) -> Complex64 {
    let clean: Complex64 = h.iter().zip(x).map(|(a, b)| a * b).sum();
    clean + cn_sample(noise_var, rng)
}

pub(crate) fn cn_sample(var: f64, rng: &mut Rng) -> Complex64 {
    if var == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// `Σ_k e^{−jkκs} c_k` and its derivative in `s`, with the phasor built by
/// recurrence.
fn phased_sum(c: &[Complex64], kappa: f64, s: f64) -> (Complex64, Complex64) {
    let step = Complex64::from_polar(1.0, -kappa * s);
    let mut z = Complex64::new(1.0, 0.0);
    let mut v = Complex64::new(0.0, 0.0);
    let mut dv = Complex64::new(0.0, 0.0);
    for (k, ck) in c.iter().enumerate() {
        let t = z * ck;
        v += t;
        dv += -J * (k as f64 * kappa) * t;
        z *= step;
    }
    (v, dv)
}

/// Precomputed localisation model for a fixed pilot sequence and RIS state.
#[derive(Clone, Debug)]
pub struct LocModel {
    pub cfg: ScenarioConfig,
    /// RIS profile `Θ_m` used while pilot m is sent.
    pub ris: Vec<RisState>,
    /// Pilots `X^m`, M×N.
    pub pilots: Vec<Vec<Complex64>>,
    /// `a_Lᴴ(ω_LR) X^m` per subcarrier.
    beta: Vec<Complex64>,
    /// `e^{jθ_k} e^{jkκ sin φ_LR}` per pilot, so that
    /// `c_R(m, s) = Σ_k e^{−jkκs} ris_k[m][k]`.
    ris_k: Vec<Vec<Complex64>>,
    kappa: f64,
    /// Delay phase slope `2π B0 / M`.
    slope: f64,
}

/// Unit-norm random-phase pilots, M×N.
pub fn default_pilots(cfg: &ScenarioConfig, seed: u64) -> Vec<Vec<Complex64>> {
    let mut r = crate::rng::stream(seed, "pilots", 0);
    let n = cfg.n_antennas;
    let scale = 1.0 / (n as f64).sqrt();
    (0..cfg.m_subcarriers)
        .map(|_| (0..n).map(|_| Complex64::from_polar(scale, r.random::<f64>() * TAU)).collect())
        .collect()
}

/// Random RIS profile used during localisation.
pub fn default_loc_ris(cfg: &ScenarioConfig, seed: u64) -> RisState {
    let mut r = crate::rng::stream(seed, "loc-ris", 0);
    RisState::random(cfg.k_total(), &mut r)
}

/// One random RIS profile per pilot symbol.
pub fn default_loc_ris_profiles(cfg: &ScenarioConfig, seed: u64) -> Vec<RisState> {
    let mut r = crate::rng::stream(seed, "loc-ris", 1);
    (0..cfg.m_subcarriers).map(|_| RisState::random(cfg.k_total(), &mut r)).collect()
}

impl LocModel {
    pub fn new(cfg: &ScenarioConfig, ris: Vec<RisState>, pilots: Vec<Vec<Complex64>>) -> Result<Self> {
        let k = cfg.k_total();
        if ris.len() != cfg.m_subcarriers {
            return Err(Error::Shape(format!("{} RIS profiles given, expected M = {}", ris.len(), cfg.m_subcarriers)));
        }
        if let Some(r) = ris.iter().find(|r| r.len() != k) {
            return Err(Error::Shape(format!("RIS has {} phases, expected K = {k}", r.len())));
        }
        if pilots.len() != cfg.m_subcarriers || pilots.iter().any(|x| x.len() != cfg.n_antennas) {
            return Err(Error::Shape("pilots must be M×N".into()));
        }
        let leg = leg_geometry(cfg)?;
        let kappa = TAU * cfg.spacing / cfg.lambda_c;
        let beta = pilots
            .iter()
            .map(|x| {
                x.iter()
                    .enumerate()
                    .map(|(n, xn)| Complex64::from_polar(1.0, -(n as f64) * kappa * leg.sin_omega_lr) * xn)
                    .sum()
            })
            .collect();
        let ris_k = ris
            .iter()
            .map(|r| {
                r.theta
                    .iter()
                    .enumerate()
                    .map(|(kk, th)| Complex64::from_polar(1.0, th + kk as f64 * kappa * leg.sin_phi_lr))
                    .collect()
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            ris,
            pilots,
            beta,
            ris_k,
            kappa,
            slope: TAU * cfg.bandwidth_mm / cfg.m_subcarriers as f64,
        })
    }

    /// Model with the default pilots and RIS profiles for the config seed.
    pub fn standard(cfg: &ScenarioConfig) -> Result<Self> {
        Self::with_seed(cfg, cfg.seed)
    }

    pub fn with_seed(cfg: &ScenarioConfig, seed: u64) -> Result<Self> {
        Self::new(cfg, default_loc_ris_profiles(cfg, seed), default_pilots(cfg, seed))
    }

    pub fn m(&self) -> usize {
        self.pilots.len()
    }

    /// Noise variance ν² giving `snr_db` for the LOS path at the reference
    /// distance: `P0 ρ_ref² / ν² = SNR`.
    pub fn noise_var(&self, p0: f64, snr_db: f64) -> f64 {
        let rho_ref = self.cfg.lambda_c / (4.0 * PI * self.cfg.snr_ref_dist);
        p0 * rho_ref * rho_ref / 10f64.powf(snr_db / 10.0)
    }

    /// `a_Lᴴ(ω) X^m` and its derivative in `s = sin ω`.
    fn lbs_response(&self, m: usize, s: f64) -> (Complex64, Complex64) {
        phased_sum(&self.pilots[m], self.kappa, s)
    }

    /// `c_R(ω)` under profile `Θ_m` and its derivative in `s = sin ω`.
    pub fn ris_response(&self, m: usize, s: f64) -> (Complex64, Complex64) {
        phased_sum(&self.ris_k[m], self.kappa, s)
    }

    fn delay(&self, m: usize, tau: f64) -> Complex64 {
        Complex64::from_polar(1.0, -self.slope * m as f64 * tau)
    }

    /// Noiseless observation `h̃_m` for all subcarriers.
    pub fn signal(&self, q: &ChannelParams, p0: f64) -> Vec<Complex64> {
        let q = &q.0;
        let sp = p0.sqrt();
        let a_l = Complex64::from_polar(q[2], q[3]);
        let a_c = Complex64::from_polar(q[6], q[7]);
        let s_r = q[5].sin();
        let s_l = q[1].sin();
        (0..self.m())
            .map(|m| {
                let (b, _) = self.lbs_response(m, s_l);
                let (cr, _) = self.ris_response(m, s_r);
                sp * (a_l * self.delay(m, q[0]) * b + a_c * self.delay(m, q[4]) * cr * self.beta[m])
            })
            .collect()
    }

    /// `∂h̃/∂q̄_a` for each of the eight channel parameters.
    pub fn signal_derivatives(&self, q: &ChannelParams, p0: f64) -> [Vec<Complex64>; 8] {
        let q = &q.0;
        let sp = p0.sqrt();
        let e_l = Complex64::from_polar(1.0, q[3]);
        let e_c = Complex64::from_polar(1.0, q[7]);
        let a_l = e_l * q[2];
        let a_c = e_c * q[6];
        let (s_l, c_l, s_r, c_r) = (q[1].sin(), q[1].cos(), q[5].sin(), q[5].cos());
        let mut d: [Vec<Complex64>; 8] = Default::default();
        for v in d.iter_mut() {
            v.reserve(self.m());
        }
        for m in 0..self.m() {
            let (b, db) = self.lbs_response(m, s_l);
            let (cr, dcr) = self.ris_response(m, s_r);
            let dl = self.delay(m, q[0]);
            let dr = self.delay(m, q[4]);
            let w = -J * self.slope * m as f64;
            let los = sp * a_l * dl * b;
            let cas = sp * a_c * dr * cr * self.beta[m];
            d[0].push(w * los);
            d[1].push(sp * a_l * dl * db * c_l);
            d[2].push(sp * e_l * dl * b);
            d[3].push(J * los);
            d[4].push(w * cas);
            d[5].push(sp * a_c * dr * dcr * c_r * self.beta[m]);
            d[6].push(sp * e_c * dr * cr * self.beta[m]);
            d[7].push(J * cas);
        }
        d
    }

    /// The q̂ → q̄ map.
    pub fn channel_params(&self, qh: &PositionParams) -> Result<ChannelParams> {
        let t = true_channel_params(&self.cfg, &qh.pos(), qh.eta())?;
        let h = &qh.0;
        Ok(ChannelParams([t.0[0], t.0[1], h[3], h[4], t.0[4], t.0[5], h[5], h[6]]))
    }

    /// q̂ of a user with free-space nuisance parameters.
    pub fn position_params(&self, pos: &Vec3, eta: f64) -> Result<PositionParams> {
        let t = true_channel_params(&self.cfg, pos, eta)?.0;
        Ok(PositionParams([pos.x, pos.y, pos.z, t[2], t[3], t[6], t[7], eta]))
    }

    /// `T = ∂q̄ᴴ/∂q̂`, so `T[(i, j)] = ∂q̄_j/∂q̂_i`.
    pub fn jacobian(&self, qh: &PositionParams) -> Result<Matrix8> {
        let cfg = &self.cfg;
        let p = qh.pos();
        let vl = p - cfg.lbs_pos;
        let vr = p - cfg.ris_pos;
        let (d_l, d_r) = (vl.norm(), vr.norm());
        if d_l < 1e-9 || d_r < 1e-9 {
            return Err(Error::Geometry("user coincides with the LBS or RIS".into()));
        }
        let (u_l, u_r) = (vl / d_l, vr / d_r);
        let (s_l, s_r) = (u_l.dot(&cfg.lbs_axis), u_r.dot(&cfg.ris_axis));
        let (c_l, c_r) = ((1.0 - s_l * s_l).sqrt(), (1.0 - s_r * s_r).sqrt());
        if c_l < 1e-12 || c_r < 1e-12 {
            return Err(Error::Geometry("user on an array end-fire axis".into()));
        }
        let g_tl = u_l / SPEED_OF_LIGHT;
        let g_wl = (cfg.lbs_axis - s_l * u_l) / (d_l * c_l);
        let g_tr = u_r / SPEED_OF_LIGHT;
        let g_wr = (cfg.ris_axis - s_r * u_r) / (d_r * c_r);
        let mut t = Matrix8::zeros();
        for i in 0..3 {
            t[(i, 0)] = g_tl[i];
            t[(i, 1)] = g_wl[i];
            t[(i, 4)] = g_tr[i];
            t[(i, 5)] = g_wr[i];
        }
        t[(7, 0)] = 1.0;
        t[(7, 4)] = 1.0;
        t[(3, 2)] = 1.0;
        t[(4, 3)] = 1.0;
        t[(5, 6)] = 1.0;
        t[(6, 7)] = 1.0;
        Ok(t)
    }

    /// Regressor columns `ι` (M×2) of `Y = √P0 ι α + n` and their
    /// derivatives in `(x, y, h, η)`.
    pub fn iota(&self, pos: &Vec3, eta: f64) -> Result<(Vec<[Complex64; 2]>, [Vec<[Complex64; 2]>; 4])> {
        let cfg = &self.cfg;
        let leg = leg_geometry(cfg)?;
        let vl = pos - cfg.lbs_pos;
        let vr = pos - cfg.ris_pos;
        let (d_l, d_r) = (vl.norm(), vr.norm());
        if d_l < 1e-9 || d_r < 1e-9 {
            return Err(Error::Geometry("user coincides with the LBS or RIS".into()));
        }
        let (u_l, u_r) = (vl / d_l, vr / d_r);
        let (s_l, s_r) = (u_l.dot(&cfg.lbs_axis), u_r.dot(&cfg.ris_axis));
        let tau_l = d_l / SPEED_OF_LIGHT + eta;
        let tau_r = (leg.d_lr + d_r) / SPEED_OF_LIGHT + eta;
        // Derivatives of (τ, s) in position; η shifts both delays by one.
        let g_tl = u_l / SPEED_OF_LIGHT;
        let g_sl = (cfg.lbs_axis - s_l * u_l) / d_l;
        let g_tr = u_r / SPEED_OF_LIGHT;
        let g_sr = (cfg.ris_axis - s_r * u_r) / d_r;
        let m_n = self.m();
        let mut io = Vec::with_capacity(m_n);
        let mut d: [Vec<[Complex64; 2]>; 4] = Default::default();
        for m in 0..m_n {
            let (b, db) = self.lbs_response(m, s_l);
            let (cr, dcr) = self.ris_response(m, s_r);
            let dl = self.delay(m, tau_l);
            let dr = self.delay(m, tau_r);
            let w = -J * self.slope * m as f64;
            let c0 = dl * b;
            let c1 = dr * cr * self.beta[m];
            io.push([c0, c1]);
            for (i, di) in d.iter_mut().enumerate().take(3) {
                let d0 = w * c0 * g_tl[i] + dl * db * g_sl[i];
                let d1 = w * c1 * g_tr[i] + dr * dcr * self.beta[m] * g_sr[i];
                di.push([d0, d1]);
            }
            d[3].push([w * c0, w * c1]);
        }
        Ok((io, d))
    }
}
