//! Control environment over the THz links.
//!
//! The state is one phase offset per sub-surface, applied on top of the
//! geometric co-phasing toward the paired user's estimated position, plus a
//! common CBS transmit power. The channel is fixed for the lifetime of an
//! environment. Rewards are negated deltas of slot cost and worst-user
//! latency, each divided by its full swing and by the entropy temperature.

use std::f64::consts::{FRAC_PI_4, TAU};

use rand::Rng as _;

use crate::channel::thz::{cascaded_gain_at, cophase, direct_gain_at, fbl_rate, link_snr, total_service_cost, transmission_latency};
use crate::channel::{wrap_phase, Latency};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scenario::{PairingMatrix, Scenario};

#[derive(Clone, Debug, PartialEq)]
pub struct MoState {
    /// Phase offset per sub-surface, radians in `[0, 2π)`.
    pub theta: Vec<f64>,
    /// Common transmit power in watts.
    pub power: f64,
}

/// Raw action in `[−1, 1]^{B+1}`: phase steps then the power step.
pub type MoAction = Vec<f64>;

/// `[r_cost, r_latency]`, higher is better for both.
pub type RewardVector = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvConfig {
    /// DEP used on every link for the run.
    pub eps: f64,
    /// Largest phase step per action, radians.
    pub dtheta_max: f64,
    /// Largest power step as a fraction of `P_max − P_min`.
    pub dp_frac: f64,
    /// Entropy temperature folded into the rewards as `r / temperature`.
    pub temperature: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { eps: 1e-5, dtheta_max: FRAC_PI_4, dp_frac: 0.25, temperature: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    /// Slot cost `−C_meta + f_P·ΣP + f_ε·ε` over the serving CBSs.
    pub cost: f64,
    pub latency: Latency,
    /// Per-user SNR on the paired link.
    pub snr: Vec<f64>,
}

impl StepMetrics {
    /// `J̄` limited to the slot length, so a dead link yields a finite reward.
    pub fn capped_latency(&self, cap: f64) -> f64 {
        self.latency.max.min(cap)
    }
}

#[derive(Clone, Debug)]
pub struct MoEnv {
    pub scenario: Scenario,
    pub pairing: PairingMatrix,
    pub cfg: EnvConfig,
    /// `(b, u)` for every serving CBS.
    links: Vec<(usize, usize)>,
    /// Co-phasing profile per sub-surface (empty when the CBS is idle).
    base: Vec<Vec<f64>>,
    direct: Vec<f64>,
    cost_scale: f64,
    latency_scale: f64,
}

impl MoEnv {
    pub fn new(scenario: Scenario, pairing: PairingMatrix, cfg: EnvConfig) -> Result<Self> {
        let c = &scenario.config;
        if pairing.n_cbs() != c.b || pairing.n_users() != c.u || !pairing.is_valid() {
            return Err(Error::Config("pairing does not match the scenario".into()));
        }
        if !(cfg.eps > 0.0 && cfg.eps <= c.eps_max) {
            return Err(Error::Constraint { eq: "22f", msg: format!("ε = {} outside (0, eps_max = {}]", cfg.eps, c.eps_max) });
        }
        if !(cfg.temperature > 0.0 && cfg.dtheta_max > 0.0 && cfg.dp_frac > 0.0) {
            return Err(Error::Config("temperature and step sizes must be positive".into()));
        }
        let mut links = Vec::new();
        let mut base = vec![Vec::new(); c.b];
        let mut direct = vec![0.0; c.u];
        for u in 0..c.u {
            let b = pairing.cbs_of(u).ok_or_else(|| Error::Config(format!("user {u} is not served")))?;
            links.push((b, u));
            base[b] = cophase(c, b, &scenario.users[u].est_pos);
            direct[u] = direct_gain_at(c, b, &scenario.users[u].true_pos)?;
        }
        let mut env = Self { scenario, pairing, cfg, links, base, direct, cost_scale: 1.0, latency_scale: 1.0 };
        let c = &env.scenario.config;
        env.cost_scale = c.f_p * env.links.len() as f64 * (c.p_max - c.p_min);
        let aligned = |p| MoState { theta: vec![0.0; c.b], power: p };
        let cap = c.slot_len;
        let lo = env.metrics(&aligned(c.p_max))?.capped_latency(cap);
        let hi = env.metrics(&aligned(c.p_min))?.capped_latency(cap);
        env.latency_scale = if hi - lo > 0.0 { hi - lo } else { cap };
        Ok(env)
    }

    pub fn n_cbs(&self) -> usize {
        self.scenario.config.b
    }

    pub fn action_dim(&self) -> usize {
        self.n_cbs() + 1
    }

    /// Width of [`MoEnv::observe`]: cos/sin per offset plus the power.
    pub fn obs_dim(&self) -> usize {
        2 * self.n_cbs() + 1
    }

    /// Normalised network input; raw state is kept for the physics.
    pub fn observe(&self, s: &MoState) -> Vec<f64> {
        let c = &self.scenario.config;
        let mut out = Vec::with_capacity(self.obs_dim());
        for t in &s.theta {
            out.push(t.cos());
            out.push(t.sin());
        }
        out.push(2.0 * (s.power - c.p_min) / (c.p_max - c.p_min) - 1.0);
        out
    }

    pub fn random_state(&self, rng: &mut Rng) -> MoState {
        let c = &self.scenario.config;
        MoState {
            theta: (0..c.b).map(|_| rng.random::<f64>() * TAU).collect(),
            power: c.p_min + rng.random::<f64>() * (c.p_max - c.p_min),
        }
    }

    pub fn check_state(&self, s: &MoState) -> Result<()> {
        let c = &self.scenario.config;
        if s.theta.len() != c.b {
            return Err(Error::Shape(format!("{} phase offsets for B = {}", s.theta.len(), c.b)));
        }
        if s.theta.iter().any(|t| !(0.0..TAU).contains(t)) {
            return Err(Error::Domain("phase offset outside [0, 2π)".into()));
        }
        if !(s.power > 0.0 && s.power <= c.p_max) {
            return Err(Error::Constraint { eq: "22a", msg: format!("P = {} outside (0, P_max]", s.power) });
        }
        Ok(())
    }

    /// RIS phases of sub-surface `b` in state `s`.
    pub fn phases(&self, s: &MoState, b: usize) -> Vec<f64> {
        self.base[b].iter().map(|p| wrap_phase(p + s.theta[b])).collect()
    }

    pub fn metrics(&self, s: &MoState) -> Result<StepMetrics> {
        self.check_state(s)?;
        let c = &self.scenario.config;
        let noise = c.noise_power();
        let mut rates = vec![vec![0.0; c.b]; c.u];
        let mut snr = vec![0.0; c.u];
        for &(b, u) in &self.links {
            let g = cascaded_gain_at(c, b, &self.scenario.users[u].true_pos, &self.phases(s, b))?;
            let rho = link_snr(s.power, g, self.direct[u].into(), noise)?;
            snr[u] = rho;
            rates[u][b] = fbl_rate(rho, c.m_block, self.cfg.eps)?;
        }
        let latency = transmission_latency(c.s_bits, &rates, c.bandwidth_thz);
        let cost = total_service_cost(c, &vec![s.power; self.links.len()], self.cfg.eps)?;
        Ok(StepMetrics { cost, latency, snr })
    }

    /// Largest slot cost and capped latency any state can reach: full
    /// power, and minimum power with every cascade opposing its direct path.
    pub fn worst_case(&self) -> Result<[f64; 2]> {
        let c = &self.scenario.config;
        let s = MoState { theta: vec![0.0; c.b], power: c.p_min };
        let mut rates = vec![vec![0.0; c.b]; c.u];
        for &(b, u) in &self.links {
            let g = cascaded_gain_at(c, b, &self.scenario.users[u].true_pos, &self.phases(&s, b))?.norm();
            let amp = self.direct[u].abs() - g;
            rates[u][b] = fbl_rate(c.p_min * amp * amp / c.noise_power(), c.m_block, self.cfg.eps)?;
        }
        let latency = transmission_latency(c.s_bits, &rates, c.bandwidth_thz).max.min(c.slot_len);
        let cost = total_service_cost(c, &vec![c.p_max; self.links.len()], self.cfg.eps)?;
        Ok([cost, latency])
    }

    /// Apply a raw action: phases wrap, power clips to `[P_min, P_max]`.
    pub fn apply(&self, s: &MoState, a: &[f64]) -> Result<MoState> {
        let c = &self.scenario.config;
        if a.len() != self.action_dim() {
            return Err(Error::Shape(format!("action has {} entries, expected {}", a.len(), self.action_dim())));
        }
        if let Some(x) = a.iter().find(|x| !(-1.0..=1.0).contains(*x)) {
            return Err(Error::Domain(format!("action entry {x} outside [−1, 1]")));
        }
        let theta = s.theta.iter().zip(a).map(|(t, d)| wrap_phase(t + d * self.cfg.dtheta_max)).collect();
        let dp = a[c.b] * self.cfg.dp_frac * (c.p_max - c.p_min);
        Ok(MoState { theta, power: (s.power + dp).clamp(c.p_min, c.p_max) })
    }

    /// Scaled reward for moving between two states with known metrics.
    pub fn reward(&self, before: &StepMetrics, after: &StepMetrics) -> RewardVector {
        let cap = self.scenario.config.slot_len;
        let t = self.cfg.temperature;
        [
            -(after.cost - before.cost) / self.cost_scale / t,
            -(after.capped_latency(cap) - before.capped_latency(cap)) / self.latency_scale / t,
        ]
    }

    /// One transition; the metrics returned belong to the next state.
    pub fn step(&self, s: &MoState, a: &[f64]) -> Result<(MoState, RewardVector, StepMetrics)> {
        let before = self.metrics(s)?;
        let next = self.apply(s, a)?;
        let after = self.metrics(&next)?;
        let r = self.reward(&before, &after);
        Ok((next, r, after))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::thz::cascaded_gain_at;
    use crate::rng;
    use crate::scenario::{make_scenario, pair_users, ScenarioConfig};

    pub(crate) fn env(seed: u64) -> MoEnv {
        let s = make_scenario(ScenarioConfig::default(), seed).unwrap();
        let p = pair_users(&s.config.cbs_pos, &s.est_positions()).unwrap();
        MoEnv::new(s, p, EnvConfig::default()).unwrap()
    }

    #[test]
    fn zero_action_zero_reward() {
        let e = env(3);
        let mut r = rng::seeded(1);
        for _ in 0..20 {
            let s = e.random_state(&mut r);
            let (n, rew, _) = e.step(&s, &vec![0.0; e.action_dim()]).unwrap();
            assert_eq!(n, s);
            assert_eq!(rew, [0.0, 0.0]);
        }
    }

    #[test]
    fn raising_power_costs() {
        let e = env(4);
        let c = &e.scenario.config;
        let s = MoState { theta: vec![0.0; 4], power: 0.05 };
        let mut a = vec![0.0; 5];
        a[4] = 0.5;
        let (n, r, _) = e.step(&s, &a).unwrap();
        assert!(n.power > s.power && n.power <= c.p_max);
        assert!(r[0] < 0.0);
        assert!(r[1] > 0.0, "more power must not raise latency: {r:?}");
    }

    #[test]
    fn reward_matches_recomputed_deltas() {
        let e = env(5);
        let c = e.scenario.config.clone();
        let mut r = rng::seeded(2);
        let n_links = 4.0;
        let cost_scale = c.f_p * n_links * (c.p_max - c.p_min);
        // Latency swing recomputed from scratch with aligned offsets.
        let worst = |p: f64, theta: &[f64]| -> f64 {
            let mut jmax: f64 = 0.0;
            for u in 0..c.u {
                let b = e.pairing.cbs_of(u).unwrap();
                let base = cophase(&c, b, &e.scenario.users[u].est_pos);
                let th: Vec<f64> = base.iter().map(|x| wrap_phase(x + theta[b])).collect();
                let g = cascaded_gain_at(&c, b, &e.scenario.users[u].true_pos, &th).unwrap();
                let l = direct_gain_at(&c, b, &e.scenario.users[u].true_pos).unwrap();
                let snr = p * (g + l).norm_sqr() / c.noise_power();
                let rate = fbl_rate(snr, c.m_block, 1e-5).unwrap();
                let j = if rate > 0.0 { c.s_bits / (rate * c.bandwidth_thz) } else { f64::INFINITY };
                jmax = jmax.max(j);
            }
            jmax.min(c.slot_len)
        };
        let swing = worst(c.p_min, &[0.0; 4]) - worst(c.p_max, &[0.0; 4]);
        for _ in 0..20 {
            let s = e.random_state(&mut r);
            let a: Vec<f64> = (0..5).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
            let (n, rew, _) = e.step(&s, &a).unwrap();
            let dc = f_cost(&c, n.power) - f_cost(&c, s.power);
            let dj = worst(n.power, &n.theta) - worst(s.power, &s.theta);
            assert!((rew[0] + dc / cost_scale / 0.2).abs() < 1e-9 * (1.0 + rew[0].abs()));
            assert!((rew[1] + dj / swing / 0.2).abs() < 1e-9 * (1.0 + rew[1].abs()), "{rew:?} vs {}", -dj / swing / 0.2);
        }

        fn f_cost(c: &ScenarioConfig, p: f64) -> f64 {
            -c.c_meta + c.f_p * 4.0 * p + c.f_eps * 1e-5
        }
    }

    #[test]
    fn worst_case_bounds_every_state() {
        let e = env(8);
        let [cost, lat] = e.worst_case().unwrap();
        let cap = e.scenario.config.slot_len;
        let mut r = rng::seeded(4);
        for _ in 0..300 {
            let m = e.metrics(&e.random_state(&mut r)).unwrap();
            assert!(m.cost <= cost);
            assert!(m.capped_latency(cap) <= lat);
        }
    }

    #[test]
    fn states_stay_in_bounds() {
        let e = env(6);
        let c = &e.scenario.config;
        let mut r = rng::seeded(3);
        let mut s = e.random_state(&mut r);
        for _ in 0..200 {
            let a: Vec<f64> = (0..5).map(|_| if r.random::<bool>() { 1.0 } else { -1.0 }).collect();
            s = e.step(&s, &a).unwrap().0;
            assert!(e.check_state(&s).is_ok());
            assert!(s.power >= c.p_min && s.power <= c.p_max);
        }
        assert!(e.apply(&s, &[2.0, 0.0, 0.0, 0.0, 0.0]).is_err());
        assert!(e.apply(&s, &[0.0; 3]).is_err());
    }

    #[test]
    fn best_offset_adds_paths_coherently() {
        let e = env(7);
        let c = e.scenario.config.clone();
        for u in 0..4 {
            let b = e.pairing.cbs_of(u).unwrap();
            let mut best = 0.0f64;
            let mut worst = f64::INFINITY;
            for k in 0..3600 {
                let mut theta = vec![0.0; 4];
                theta[b] = k as f64 * TAU / 3600.0;
                let snr = e.metrics(&MoState { theta, power: 0.1 }).unwrap().snr[u];
                best = best.max(snr);
                worst = worst.min(snr);
            }
            // Oracle: cascade magnitude at co-phasing plus the direct amplitude.
            let pos = e.scenario.users[u].true_pos;
            let g = cascaded_gain_at(&c, b, &pos, &cophase(&c, b, &pos)).unwrap().norm();
            let l = direct_gain_at(&c, b, &pos).unwrap();
            let ideal = 0.1 * (g + l).powi(2) / c.noise_power();
            assert!((best - ideal).abs() < 1e-5 * ideal, "user {u}: {best} vs {ideal}");
            assert!(worst < 0.9 * best);
        }
    }
}
