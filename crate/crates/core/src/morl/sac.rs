//! Networks, losses and the training loop.
//!
//! All three networks take the normalised observation and the preference
//! as input; the value and Q networks output one head per objective. The
//! policy outputs a mean and a log standard deviation per action dimension
//! and acts through `tanh` of a reparameterised Gaussian sample.
//!
//! Each loss is returned per objective so that the two gradients can be
//! merged by [`min_norm_combine`](super::min_norm_combine). The policy's
//! per-objective parts are `w_m·(log π − Q_m)`, which sum to the
//! preference-scalarised soft objective.

use std::f64::consts::{LN_2, PI};

use rand_distr::{Distribution, StandardNormal};

use super::env::{MoEnv, MoState, StepMetrics};
use super::replay::{MoTransition, ReplayBuffer};
use super::{min_norm_combine, sample_preference, unit_max_norm, Preference};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, ForwardCache, GradTape, Mlp};
use crate::rng::{self, Rng};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Window of the moving-average return.
pub const MA_WINDOW: usize = 10;

/// How the two per-objective gradients of a loss become one update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Combine {
    /// Minimum-norm convex combination.
    MinNorm,
    /// Plain sum, i.e. the gradient of the scalarised loss.
    Scalarised,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SacHyper {
    pub hidden: Vec<usize>,
    pub batch: usize,
    pub buffer: usize,
    pub episodes: usize,
    pub episode_len: usize,
    /// Transitions collected before the first update.
    pub warmup: usize,
    pub updates_per_step: usize,
    pub lr_v: f64,
    pub lr_pi: f64,
    pub lr_q: f64,
    pub gamma: f64,
    pub tau: f64,
    /// Scale each objective gradient to unit max-norm before combining.
    pub unit_scale: bool,
    pub critic_combine: Combine,
    pub policy_combine: Combine,
    /// Train with one frozen preference instead of sampling.
    pub fixed_w: Option<Preference>,
    /// Replace the stored preference of each sampled transition by a fresh
    /// draw; rewards are vectors, so any preference is a valid label.
    pub relabel: bool,
    /// Episodes end at a time limit (bootstrap on the last step) rather
    /// than in a terminal state.
    pub truncate: bool,
    /// Fixed start state; random per episode when `None`.
    pub start: Option<MoState>,
    pub seed: u64,
}

impl Default for SacHyper {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            batch: 32,
            buffer: 10_000,
            episodes: 1000,
            episode_len: 10,
            warmup: 64,
            updates_per_step: 1,
            lr_v: 3e-4,
            lr_pi: 3e-4,
            lr_q: 3e-4,
            gamma: 0.9,
            tau: 0.005,
            unit_scale: true,
            critic_combine: Combine::MinNorm,
            policy_combine: Combine::Scalarised,
            fixed_w: None,
            relabel: true,
            truncate: true,
            start: None,
            seed: 1,
        }
    }
}

/// Value, target value, policy and Q networks.
#[derive(Clone, Debug, PartialEq)]
pub struct SacNets {
    pub v: Mlp,
    pub v_target: Mlp,
    pub pi: Mlp,
    pub q: Mlp,
}

impl SacNets {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let widths = |i: usize, o: usize| {
            let mut w = vec![i];
            w.extend_from_slice(hidden);
            w.push(o);
            w
        };
        let v = Mlp::new(&widths(obs_dim + 2, 2), Activation::Tanh, Activation::Identity, rng)?;
        let pi = Mlp::new(&widths(obs_dim + 2, 2 * act_dim), Activation::Tanh, Activation::Identity, rng)?;
        let q = Mlp::new(&widths(obs_dim + act_dim + 2, 2), Activation::Tanh, Activation::Identity, rng)?;
        Ok(Self { v_target: v.clone(), v, pi, q })
    }

    pub fn act_dim(&self) -> usize {
        self.pi.n_outputs() / 2
    }

    pub fn obs_dim(&self) -> usize {
        self.pi.n_inputs() - 2
    }

    /// `tanh` of the policy mean.
    pub fn act_deterministic(&self, obs: &[f64], w: &Preference) -> Result<Vec<f64>> {
        let out = self.pi.forward(&cat(&[obs, &w.w]))?;
        Ok(out[..self.act_dim()].iter().map(|m| m.tanh()).collect())
    }

    pub fn act(&self, obs: &[f64], w: &Preference, rng: &mut Rng) -> Result<Vec<f64>> {
        let noise = gaussian(self.act_dim(), rng);
        Ok(sample_policy(&self.pi, &cat(&[obs, &w.w]), &noise)?.action)
    }
}

fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

fn gaussian(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `log(1 − tanh²u)` without cancellation.
fn log_sech2(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

struct PolicySample {
    action: Vec<f64>,
    log_prob: f64,
    sigma: Vec<f64>,
    clamped: Vec<bool>,
    cache: ForwardCache,
}

fn sample_policy(pi: &Mlp, x: &[f64], noise: &[f64]) -> Result<PolicySample> {
    let cache = pi.forward_cached(x)?;
    let out = cache.output();
    let n = out.len() / 2;
    if noise.len() != n {
        return Err(Error::Shape(format!("{} noise values for {n} action dimensions", noise.len())));
    }
    let mut action = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut clamped = Vec::with_capacity(n);
    let mut log_prob = 0.0;
    for j in 0..n {
        let raw = out[n + j];
        let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
        clamped.push(ls != raw);
        let s = ls.exp();
        let u = out[j] + s * noise[j];
        action.push(u.tanh());
        sigma.push(s);
        log_prob += -0.5 * noise[j] * noise[j] - ls - 0.5 * (2.0 * PI).ln() - log_sech2(u);
    }
    Ok(PolicySample { action, log_prob, sigma, clamped, cache })
}

/// Per-objective losses and parameter gradients of one network.
#[derive(Clone, Debug)]
pub struct LossGrads {
    pub loss: [f64; 2],
    pub grads: [GradTape; 2],
}

#[derive(Clone, Debug)]
pub struct PolicyLoss {
    /// Scalarised loss, the sum of `parts`.
    pub loss: f64,
    pub parts: [f64; 2],
    pub grads: [GradTape; 2],
    /// Log-std entries that hit the clamp range.
    pub clamped: usize,
}

fn check_batch(batch: &[MoTransition], noise: Option<&[Vec<f64>]>) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if let Some(n) = noise {
        if n.len() != batch.len() {
            return Err(Error::Shape(format!("{} noise rows for {} transitions", n.len(), batch.len())));
        }
    }
    Ok(())
}

/// `½(V_m(s, w) − [Q_m(s, ã, w) − log π(ã|s, w)])²` averaged over the batch,
/// with `ã` drawn from the policy using `noise` and treated as a constant.
pub fn value_loss(v: &Mlp, q: &Mlp, pi: &Mlp, batch: &[MoTransition], noise: &[Vec<f64>]) -> Result<LossGrads> {
    check_batch(batch, Some(noise))?;
    let n = batch.len() as f64;
    let mut loss = [0.0; 2];
    let mut grads = [GradTape::zeros_like(v), GradTape::zeros_like(v)];
    for (t, eps) in batch.iter().zip(noise) {
        let x = cat(&[&t.obs, &t.w.w]);
        let ps = sample_policy(pi, &x, eps)?;
        let qv = q.forward(&cat(&[&t.obs, &ps.action, &t.w.w]))?;
        let cache = v.forward_cached(&x)?;
        let out = cache.output().to_vec();
        for m in 0..2 {
            let resid = out[m] - (qv[m] - ps.log_prob);
            loss[m] += 0.5 * resid * resid / n;
            let mut up = [0.0; 2];
            up[m] = resid / n;
            grads[m].add_assign(&v.backward(&cache, &up)?.0);
        }
    }
    Ok(LossGrads { loss, grads })
}

/// `½(Q_m(s, a, w) − r_m − γ·V̂_m(s', w))²` averaged over the batch; the
/// bootstrap is dropped on terminal transitions.
pub fn q_loss(q: &Mlp, v_target: &Mlp, batch: &[MoTransition], gamma: f64) -> Result<LossGrads> {
    check_batch(batch, None)?;
    let n = batch.len() as f64;
    let mut loss = [0.0; 2];
    let mut grads = [GradTape::zeros_like(q), GradTape::zeros_like(q)];
    for t in batch {
        let boot = if t.terminal { [0.0; 2] } else {
            let v = v_target.forward(&cat(&[&t.next_obs, &t.w.w]))?;
            [v[0], v[1]]
        };
        let cache = q.forward_cached(&cat(&[&t.obs, &t.action, &t.w.w]))?;
        let out = cache.output().to_vec();
        for m in 0..2 {
            let resid = out[m] - t.reward[m] - gamma * boot[m];
            loss[m] += 0.5 * resid * resid / n;
            let mut up = [0.0; 2];
            up[m] = resid / n;
            grads[m].add_assign(&q.backward(&cache, &up)?.0);
        }
    }
    Ok(LossGrads { loss, grads })
}

/// `E[log π(f(ε; s)|s, w) − wᵀQ(s, f(ε; s), w)]` with reparameterised
/// actions `f(ε; s) = tanh(μ + σ·ε)`, split into `w_m·(log π − Q_m)`.
pub fn policy_loss(pi: &Mlp, q: &Mlp, batch: &[MoTransition], noise: &[Vec<f64>]) -> Result<PolicyLoss> {
    check_batch(batch, Some(noise))?;
    let n = batch.len() as f64;
    let mut parts = [0.0; 2];
    let mut grads = [GradTape::zeros_like(pi), GradTape::zeros_like(pi)];
    let mut clamped = 0;
    for (t, eps) in batch.iter().zip(noise) {
        let x = cat(&[&t.obs, &t.w.w]);
        let ps = sample_policy(pi, &x, eps)?;
        clamped += ps.clamped.iter().filter(|c| **c).count();
        let qc = q.forward_cached(&cat(&[&t.obs, &ps.action, &t.w.w]))?;
        let qv = qc.output().to_vec();
        let na = ps.action.len();
        let off = t.obs.len();
        for m in 0..2 {
            let wm = t.w.w[m];
            parts[m] += wm * (ps.log_prob - qv[m]) / n;
            let mut up = [0.0; 2];
            up[m] = 1.0;
            let (_, dq_dx) = q.backward(&qc, &up)?;
            let mut d_out = vec![0.0; 2 * na];
            for j in 0..na {
                let a = ps.action[j];
                let du = 2.0 * a - dq_dx[off + j] * (1.0 - a * a);
                d_out[j] = wm * du / n;
                if !ps.clamped[j] {
                    d_out[na + j] = wm * (-1.0 + du * ps.sigma[j] * eps[j]) / n;
                }
            }
            grads[m].add_assign(&pi.backward(&ps.cache, &d_out)?.0);
        }
    }
    Ok(PolicyLoss { loss: parts[0] + parts[1], parts, grads, clamped })
}

/// Merge two per-objective tapes into one update direction.
pub fn combine(like: &Mlp, grads: &[GradTape; 2], how: Combine, unit_scale: bool) -> Result<(f64, GradTape)> {
    let (mut g1, mut g2) = (grads[0].flat(), grads[1].flat());
    if unit_scale {
        g1 = unit_max_norm(&g1);
        g2 = unit_max_norm(&g2);
    }
    match how {
        Combine::MinNorm => {
            let (nu, c) = min_norm_combine(&g1, &g2)?;
            Ok((nu, GradTape::from_flat(like, &c)?))
        }
        Combine::Scalarised => {
            let c: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a + b).collect();
            Ok((f64::NAN, GradTape::from_flat(like, &c)?))
        }
    }
}

/// Update directions for the three trained networks.
#[derive(Clone, Debug)]
pub struct SacGrads {
    pub v: GradTape,
    pub pi: GradTape,
    pub q: GradTape,
    pub nu: [f64; 3],
    pub losses: [f64; 3],
    pub clamped: usize,
}

/// Losses on `batch` and their combined gradients. Noise rows are drawn
/// from `rng` in a fixed order (value loss, then policy loss).
pub fn sac_grads(nets: &SacNets, batch: &[MoTransition], hyper: &SacHyper, rng: &mut Rng) -> Result<SacGrads> {
    let na = nets.act_dim();
    let nv: Vec<Vec<f64>> = (0..batch.len()).map(|_| gaussian(na, rng)).collect();
    let np: Vec<Vec<f64>> = (0..batch.len()).map(|_| gaussian(na, rng)).collect();
    let lv = value_loss(&nets.v, &nets.q, &nets.pi, batch, &nv)?;
    let lq = q_loss(&nets.q, &nets.v_target, batch, hyper.gamma)?;
    let lp = policy_loss(&nets.pi, &nets.q, batch, &np)?;
    let losses = [lv.loss[0] + lv.loss[1], lq.loss[0] + lq.loss[1], lp.loss];
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Diverged(format!("non-finite loss (value, q, policy) = {losses:?}")));
    }
    let (nu_v, v) = combine(&nets.v, &lv.grads, hyper.critic_combine, hyper.unit_scale)?;
    let (nu_q, q) = combine(&nets.q, &lq.grads, hyper.critic_combine, hyper.unit_scale)?;
    let (nu_p, pi) = combine(&nets.pi, &lp.grads, hyper.policy_combine, hyper.unit_scale)?;
    Ok(SacGrads { v, pi, q, nu: [nu_v, nu_p, nu_q], losses, clamped: lp.clamped })
}

/// Episode summary; returns are undiscounted sums of the scaled rewards.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub episode: usize,
    pub w: Preference,
    pub ret: [f64; 2],
    pub scalarised: f64,
    pub moving_avg: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainCurve {
    pub episodes: Vec<Episode>,
}

impl TrainCurve {
    fn push(&mut self, episode: usize, w: Preference, ret: [f64; 2]) {
        let scalarised = w.scalarise(&ret);
        let lo = (self.episodes.len() + 1).saturating_sub(MA_WINDOW);
        let sum: f64 = self.episodes[lo..].iter().map(|e| e.scalarised).sum::<f64>() + scalarised;
        let moving_avg = sum / (self.episodes.len() + 1 - lo) as f64;
        self.episodes.push(Episode { episode, w, ret, scalarised, moving_avg });
    }

    pub fn moving_avg(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.moving_avg).collect()
    }
}

/// Agent state: networks, optimisers and replay.
#[derive(Clone, Debug)]
pub struct MoSac {
    pub nets: SacNets,
    pub hyper: SacHyper,
    pub buffer: ReplayBuffer,
    opt_v: Adam,
    opt_pi: Adam,
    opt_q: Adam,
    rng: Rng,
    episodes_done: usize,
}

impl MoSac {
    pub fn new(nets: SacNets, hyper: SacHyper) -> Self {
        Self {
            opt_v: Adam::new(&nets.v),
            opt_pi: Adam::new(&nets.pi),
            opt_q: Adam::new(&nets.q),
            buffer: ReplayBuffer::new(hyper.buffer),
            rng: rng::stream(hyper.seed, "agent", 0),
            nets,
            hyper,
            episodes_done: 0,
        }
    }

    /// Fresh networks for `env`, initialised from the hyper seed.
    pub fn for_env(env: &MoEnv, hyper: SacHyper) -> Result<Self> {
        let mut r = rng::stream(hyper.seed, "init", 0);
        let nets = SacNets::new(env.obs_dim(), env.action_dim(), &hyper.hidden, &mut r)?;
        Ok(Self::new(nets, hyper))
    }

    /// One gradient update on a minibatch from the replay.
    pub fn update(&mut self) -> Result<SacGrads> {
        let mut batch = self.buffer.sample(self.hyper.batch, &mut self.rng);
        if self.hyper.relabel && self.hyper.fixed_w.is_none() {
            for t in &mut batch {
                t.w = sample_preference(&mut self.rng);
            }
        }
        let g = sac_grads(&self.nets, &batch, &self.hyper, &mut self.rng)?;
        self.opt_v.step(&mut self.nets.v, &g.v, self.hyper.lr_v)?;
        self.opt_pi.step(&mut self.nets.pi, &g.pi, self.hyper.lr_pi)?;
        self.opt_q.step(&mut self.nets.q, &g.q, self.hyper.lr_q)?;
        let v = self.nets.v.clone();
        self.nets.v_target.soft_update(&v, self.hyper.tau)?;
        Ok(g)
    }

    /// Run `episodes` more training episodes on `env`. Episode `k` (counted
    /// over the agent's lifetime) draws its preference and start state from
    /// a stream keyed by `k`, so agents sharing a seed see the same tasks.
    pub fn train(&mut self, env: &MoEnv, episodes: usize, curve: &mut TrainCurve) -> Result<()> {
        for _ in 0..episodes {
            let k = self.episodes_done;
            let mut er = rng::stream(self.hyper.seed, "episode", k as u64);
            let w = self.hyper.fixed_w.unwrap_or_else(|| sample_preference(&mut er));
            let mut s = self.hyper.start.clone().unwrap_or_else(|| env.random_state(&mut er));
            let mut ret = [0.0; 2];
            for t in 0..self.hyper.episode_len {
                let obs = env.observe(&s);
                let a = self.nets.act(&obs, &w, &mut self.rng)?;
                let (next, r, _) = env.step(&s, &a)?;
                ret[0] += r[0];
                ret[1] += r[1];
                self.buffer.push(MoTransition {
                    obs,
                    action: a,
                    reward: r,
                    next_obs: env.observe(&next),
                    w,
                    terminal: !self.hyper.truncate && t + 1 == self.hyper.episode_len,
                });
                s = next;
                if self.buffer.len() >= self.hyper.warmup.max(1) {
                    for _ in 0..self.hyper.updates_per_step {
                        self.update()
                            .map_err(|e| Error::Diverged(format!("episode {k}, step {t}: {e}")))?;
                    }
                }
            }
            if !(ret[0].is_finite() && ret[1].is_finite()) {
                return Err(Error::Diverged(format!("episode {k}: return {ret:?}")));
            }
            curve.push(k, w, ret);
            self.episodes_done += 1;
        }
        Ok(())
    }
}

/// Train a fresh agent for `hyper.episodes` episodes.
pub fn train_mosac(env: &MoEnv, hyper: &SacHyper) -> Result<(MoSac, TrainCurve)> {
    let mut agent = MoSac::for_env(env, hyper.clone())?;
    let mut curve = TrainCurve::default();
    agent.train(env, hyper.episodes, &mut curve)?;
    Ok((agent, curve))
}

/// Deterministic rollout; returns every visited state after `s0` with its
/// metrics, and the summed scaled reward.
pub fn rollout(env: &MoEnv, nets: &SacNets, w: &Preference, s0: &MoState, steps: usize) -> Result<(Vec<(MoState, StepMetrics)>, [f64; 2])> {
    let mut s = s0.clone();
    let mut out = Vec::with_capacity(steps);
    let mut ret = [0.0; 2];
    for _ in 0..steps {
        let a = nets.act_deterministic(&env.observe(&s), w)?;
        let (next, r, m) = env.step(&s, &a)?;
        ret[0] += r[0];
        ret[1] += r[1];
        out.push((next.clone(), m));
        s = next;
    }
    Ok((out, ret))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::rel_err;
    use crate::rng;
    use rand::Rng as _;

    const OBS: usize = 5;
    const ACT: usize = 3;

    fn nets(seed: u64) -> SacNets {
        SacNets::new(OBS, ACT, &[8, 6], &mut rng::seeded(seed)).unwrap()
    }

    fn batch(n: usize, r: &mut Rng) -> Vec<MoTransition> {
        (0..n)
            .map(|i| MoTransition {
                obs: (0..OBS).map(|_| r.random::<f64>() * 2.0 - 1.0).collect(),
                action: (0..ACT).map(|_| r.random::<f64>() * 2.0 - 1.0).collect(),
                reward: [r.random::<f64>() - 0.5, r.random::<f64>() - 0.5],
                next_obs: (0..OBS).map(|_| r.random::<f64>() * 2.0 - 1.0).collect(),
                w: sample_preference(r),
                terminal: i % 3 == 0,
            })
            .collect()
    }

    fn noise(n: usize, r: &mut Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| gaussian(ACT, r)).collect()
    }

    /// Central differences of `f` over every parameter of `net`.
    fn fd_check(net: &Mlp, tape: &GradTape, f: impl Fn(&Mlp) -> f64) -> f64 {
        let g = tape.flat();
        let p = net.params();
        let mut worst: f64 = 0.0;
        for i in 0..p.len() {
            let h = 1e-5;
            let mut a = net.clone();
            let mut pp = p.clone();
            pp[i] += h;
            a.set_params(&pp).unwrap();
            let up = f(&a);
            pp[i] -= 2.0 * h;
            a.set_params(&pp).unwrap();
            let dn = f(&a);
            worst = worst.max(rel_err((up - dn) / (2.0 * h), g[i]));
        }
        worst
    }

    #[test]
    fn value_loss_gradient() {
        let mut r = rng::seeded(1);
        let n = nets(2);
        let b = batch(6, &mut r);
        let z = noise(6, &mut r);
        let l = value_loss(&n.v, &n.q, &n.pi, &b, &z).unwrap();
        for m in 0..2 {
            let e = fd_check(&n.v, &l.grads[m], |v| value_loss(v, &n.q, &n.pi, &b, &z).unwrap().loss[m]);
            assert!(e < 1e-4, "objective {m}: {e}");
            assert!(l.loss[m] >= 0.0);
        }
    }

    #[test]
    fn q_loss_gradient() {
        let mut r = rng::seeded(3);
        let n = nets(4);
        let b = batch(6, &mut r);
        let l = q_loss(&n.q, &n.v_target, &b, 0.9).unwrap();
        for m in 0..2 {
            let e = fd_check(&n.q, &l.grads[m], |q| q_loss(q, &n.v_target, &b, 0.9).unwrap().loss[m]);
            assert!(e < 1e-4, "objective {m}: {e}");
        }
    }

    #[test]
    fn policy_loss_gradient() {
        let mut r = rng::seeded(5);
        let n = nets(6);
        let b = batch(6, &mut r);
        let z = noise(6, &mut r);
        let l = policy_loss(&n.pi, &n.q, &b, &z).unwrap();
        assert_eq!(l.clamped, 0);
        for m in 0..2 {
            let e = fd_check(&n.pi, &l.grads[m], |p| policy_loss(p, &n.q, &b, &z).unwrap().parts[m]);
            assert!(e < 1e-4, "objective {m}: {e}");
        }
    }

    #[test]
    fn value_loss_vanishes_at_its_target() {
        let mut r = rng::seeded(7);
        let mut n = nets(8);
        // A single transition: set the output bias so V equals the target.
        let b = batch(1, &mut r);
        let z = noise(1, &mut r);
        let x = cat(&[&b[0].obs, &b[0].w.w]);
        let ps = sample_policy(&n.pi, &x, &z[0]).unwrap();
        let qv = n.q.forward(&cat(&[&b[0].obs, &ps.action, &b[0].w.w])).unwrap();
        let v = n.v.forward(&x).unwrap();
        let last = n.v.layers.last_mut().unwrap();
        for m in 0..2 {
            last.b[m] += qv[m] - ps.log_prob - v[m];
        }
        let l = value_loss(&n.v, &n.q, &n.pi, &b, &z).unwrap();
        for m in 0..2 {
            assert!(l.loss[m] < 1e-20);
            assert!(l.grads[m].max_abs() < 1e-9);
        }
    }

    #[test]
    fn q_loss_terminal_and_scaling() {
        let mut r = rng::seeded(9);
        let mut n = nets(10);
        let mut b = batch(1, &mut r);
        b[0].terminal = true;
        let qv = n.q.forward(&cat(&[&b[0].obs, &b[0].action, &b[0].w.w])).unwrap();
        b[0].reward = [qv[0], qv[1]];
        let l = q_loss(&n.q, &n.v_target, &b, 0.9).unwrap();
        assert!(l.loss[0] < 1e-25 && l.loss[1] < 1e-25);
        // Shift the output so the residual is d, then 2d.
        let base = l.loss;
        let last = n.q.layers.last_mut().unwrap();
        last.b[0] += 0.3;
        let l1 = q_loss(&n.q, &n.v_target, &b, 0.9).unwrap().loss[0];
        n.q.layers.last_mut().unwrap().b[0] += 0.3;
        let l2 = q_loss(&n.q, &n.v_target, &b, 0.9).unwrap().loss[0];
        assert!((l2 - 4.0 * l1).abs() < 1e-12, "{base:?} {l1} {l2}");
    }

    #[test]
    fn zero_critic_leaves_entropy() {
        let mut r = rng::seeded(11);
        let n = nets(12);
        let zero_q = Mlp::zeros(&n.q.widths(), Activation::Tanh, Activation::Identity).unwrap();
        let b = batch(5, &mut r);
        let z = noise(5, &mut r);
        let l = policy_loss(&n.pi, &zero_q, &b, &z).unwrap();
        let mean_logp: f64 = b
            .iter()
            .zip(&z)
            .map(|(t, e)| sample_policy(&n.pi, &cat(&[&t.obs, &t.w.w]), e).unwrap().log_prob)
            .sum::<f64>()
            / 5.0;
        assert!((l.loss - mean_logp).abs() < 1e-12);
    }

    #[test]
    fn deterministic_limit() {
        let mut r = rng::seeded(13);
        let mut n = nets(14);
        // Drive every log-std output far below the clamp.
        let last = n.pi.layers.last_mut().unwrap();
        for j in ACT..2 * ACT {
            last.b[j] = -50.0;
        }
        let b = batch(4, &mut r);
        let z = noise(4, &mut r);
        let l = policy_loss(&n.pi, &n.q, &b, &z).unwrap();
        assert_eq!(l.clamped, 4 * ACT);
        let mut q_mean = 0.0;
        let mut logp = 0.0;
        for (t, e) in b.iter().zip(&z) {
            let a = n.act_deterministic(&t.obs, &t.w).unwrap();
            q_mean += t.w.scalarise(&{
                let v = n.q.forward(&cat(&[&t.obs, &a, &t.w.w])).unwrap();
                [v[0], v[1]]
            }) / 4.0;
            logp += sample_policy(&n.pi, &cat(&[&t.obs, &t.w.w]), e).unwrap().log_prob / 4.0;
        }
        // What remains after removing the entropy term is −wᵀQ at the mean.
        assert!((l.loss - logp + q_mean).abs() < 1e-2, "{} vs {}", l.loss - logp, -q_mean);
    }

    #[test]
    fn log_sech2_is_stable() {
        for u in [-40.0, -3.0, 0.0, 0.5, 3.0, 40.0] {
            let direct = (1.0 - f64::tanh(u).powi(2)).ln();
            if direct.is_finite() && u.abs() < 10.0 {
                assert!((log_sech2(u) - direct).abs() < 1e-12);
            }
            assert!(log_sech2(u).is_finite());
        }
    }

    #[test]
    fn combine_modes() {
        let n = nets(15);
        let mut a = GradTape::zeros_like(&n.v);
        let mut b = GradTape::zeros_like(&n.v);
        a.db[0][0] = 2.0;
        b.db[0][1] = 4.0;
        let (nu, c) = combine(&n.v, &[a.clone(), b.clone()], Combine::MinNorm, true).unwrap();
        assert_eq!(nu, 0.5);
        assert_eq!((c.db[0][0], c.db[0][1]), (0.5, 0.5));
        let (_, s) = combine(&n.v, &[a, b], Combine::Scalarised, false).unwrap();
        assert_eq!((s.db[0][0], s.db[0][1]), (2.0, 4.0));
    }

}
