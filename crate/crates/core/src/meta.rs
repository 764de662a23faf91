//! First-order MAML over user placements.
//!
//! A task is one user placement. Each meta-iteration rolls the current
//! meta-policy out on every training task, takes a few plain gradient
//! steps on the task's support transitions, and evaluates the combined
//! loss gradients on its query transitions at the adapted parameters. The
//! meta-parameters then move against the sum of those query gradients.
//! Second-order terms through the inner steps are dropped.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::morl::sac::{rollout, sac_grads, SacGrads, MA_WINDOW};
use crate::morl::{
    sample_preference, EnvConfig, MoEnv, MoSac, MoState, MoTransition, Preference, SacHyper, SacNets, TrainCurve,
};
use crate::nn::sgd_step;
use crate::rng::{self, Rng};
use crate::scenario::{make_scenario, pair_users, ScenarioConfig};

/// Step sizes for the value, policy and Q networks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lrs {
    pub v: f64,
    pub pi: f64,
    pub q: f64,
}

impl Lrs {
    pub fn all(lr: f64) -> Self {
        Self { v: lr, pi: lr, q: lr }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaConfig {
    pub meta_iters: usize,
    pub inner_iters: usize,
    pub inner_lr: Lrs,
    pub outer_lr: Lrs,
    /// Episodes rolled out per task and meta-iteration.
    pub episodes_per_iter: usize,
    /// Target-network smoothing applied once per outer step.
    pub target_tau: f64,
    /// Network sizes, batch, discount and combining rules.
    pub sac: SacHyper,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            meta_iters: 200,
            inner_iters: 20,
            inner_lr: Lrs::all(3e-4),
            outer_lr: Lrs::all(3e-3),
            episodes_per_iter: 1,
            target_tau: 0.05,
            sac: SacHyper::default(),
        }
    }
}

/// Meta-learned initialisation for all four networks.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaPolicy {
    pub nets: SacNets,
}

/// One user placement with its collected transitions.
#[derive(Clone, Debug)]
pub struct Task {
    pub seed: u64,
    pub env: MoEnv,
    pub support: Vec<MoTransition>,
    pub query: Vec<MoTransition>,
    seen: usize,
}

impl Task {
    /// Placement drawn from `seed`; estimated positions equal the true ones.
    pub fn new(config: &ScenarioConfig, env_cfg: EnvConfig, seed: u64) -> Result<Self> {
        let s = make_scenario(config.clone(), seed)?;
        let p = pair_users(&s.config.cbs_pos, &s.est_positions())?;
        Ok(Self::from_env(MoEnv::new(s, p, env_cfg)?, seed))
    }

    pub fn from_env(env: MoEnv, seed: u64) -> Self {
        Self { seed, env, support: Vec::new(), query: Vec::new(), seen: 0 }
    }

    /// Every fifth transition goes to the query set, the rest to support.
    pub fn push(&mut self, t: MoTransition) {
        if self.seen % 5 == 4 {
            self.query.push(t);
        } else {
            self.support.push(t);
        }
        self.seen += 1;
    }
}

/// Minibatch of `n` draws with replacement, or the whole set when it is no
/// larger than `n`. Preferences are redrawn when `relabel` is set.
fn draw(set: &[MoTransition], n: usize, relabel: bool, rng: &mut Rng) -> Vec<MoTransition> {
    use rand::Rng as _;
    let mut b: Vec<MoTransition> = if set.len() <= n {
        set.to_vec()
    } else {
        (0..n).map(|_| set[rng.random_range(0..set.len())].clone()).collect()
    };
    if relabel {
        for t in &mut b {
            t.w = sample_preference(rng);
        }
    }
    b
}

fn step_all(nets: &mut SacNets, g: &SacGrads, lr: &Lrs) -> Result<()> {
    sgd_step(&mut nets.v, &g.v, lr.v)?;
    sgd_step(&mut nets.pi, &g.pi, lr.pi)?;
    sgd_step(&mut nets.q, &g.q, lr.q)
}

/// `iters` gradient steps on support batches, starting from a copy of
/// `meta`. The target network is left as it is.
pub fn inner_update(meta: &SacNets, support: &[MoTransition], lr: &Lrs, iters: usize, hyper: &SacHyper, rng: &mut Rng) -> Result<SacNets> {
    if support.is_empty() {
        return Err(Error::Empty("support set"));
    }
    let mut nets = meta.clone();
    for _ in 0..iters {
        let batch = draw(support, hyper.batch, hyper.relabel, rng);
        let g = sac_grads(&nets, &batch, hyper, rng)?;
        step_all(&mut nets, &g, lr)?;
    }
    Ok(nets)
}

/// Combined loss gradients on a query batch at the adapted parameters.
pub fn query_grads(adapted: &SacNets, query: &[MoTransition], hyper: &SacHyper, rng: &mut Rng) -> Result<SacGrads> {
    if query.is_empty() {
        return Err(Error::Empty("query set"));
    }
    let batch = draw(query, hyper.batch, hyper.relabel, rng);
    sac_grads(adapted, &batch, hyper, rng)
}

/// `χ̂ ← χ̂ − ẑ·Σ_n g_n`, summing the task gradients in the given order.
pub fn outer_update(meta: &mut SacNets, grads: &[SacGrads], lr: &Lrs) -> Result<()> {
    let Some(first) = grads.first() else {
        return Ok(());
    };
    let mut sum = first.clone();
    for g in &grads[1..] {
        sum.v.add_assign(&g.v);
        sum.pi.add_assign(&g.pi);
        sum.q.add_assign(&g.q);
    }
    step_all(meta, &sum, lr)
}

/// Collect one stochastic episode without learning.
pub fn collect_episode(env: &MoEnv, nets: &SacNets, hyper: &SacHyper, rng: &mut Rng) -> Result<(Vec<MoTransition>, Preference, [f64; 2])> {
    let w = hyper.fixed_w.unwrap_or_else(|| sample_preference(rng));
    let mut s = hyper.start.clone().unwrap_or_else(|| env.random_state(rng));
    let mut out = Vec::with_capacity(hyper.episode_len);
    let mut ret = [0.0; 2];
    for t in 0..hyper.episode_len {
        let obs = env.observe(&s);
        let a = nets.act(&obs, &w, rng)?;
        let (next, r, _) = env.step(&s, &a)?;
        ret[0] += r[0];
        ret[1] += r[1];
        out.push(MoTransition {
            obs,
            action: a,
            reward: r,
            next_obs: env.observe(&next),
            w,
            terminal: !hyper.truncate && t + 1 == hyper.episode_len,
        });
        s = next;
    }
    Ok((out, w, ret))
}

/// Progress of one meta-iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaIter {
    pub iter: usize,
    /// Mean scalarised return of the collected episodes.
    pub mean_return: f64,
    /// Mean query loss (value, Q, policy) over the tasks.
    pub query_loss: [f64; 3],
}

/// Meta-train a fresh initialisation on `tasks`. Tasks are processed in
/// parallel, each from its own random stream; the reduction is sequential
/// in task order.
pub fn meta_train(tasks: &mut [Task], cfg: &MetaConfig, seed: u64) -> Result<(MetaPolicy, Vec<MetaIter>)> {
    let env = &tasks.first().ok_or(Error::Empty("task list"))?.env;
    let mut init = rng::stream(seed, "meta-init", 0);
    let mut nets = SacNets::new(env.obs_dim(), env.action_dim(), &cfg.sac.hidden, &mut init)?;
    let n_tasks = tasks.len() as u64;
    let mut log = Vec::with_capacity(cfg.meta_iters);
    for it in 0..cfg.meta_iters {
        let results: Vec<Result<(f64, Option<SacGrads>)>> = tasks
            .par_iter_mut()
            .enumerate()
            .map(|(n, task)| {
                let mut r = rng::stream(seed, "meta-task", it as u64 * n_tasks + n as u64);
                let mut ret = 0.0;
                for _ in 0..cfg.episodes_per_iter {
                    let (ts, w, er) = collect_episode(&task.env, &nets, &cfg.sac, &mut r)?;
                    ret += w.scalarise(&er);
                    ts.into_iter().for_each(|t| task.push(t));
                }
                if task.support.is_empty() || task.query.is_empty() {
                    return Ok((ret, None));
                }
                let adapted = inner_update(&nets, &task.support, &cfg.inner_lr, cfg.inner_iters, &cfg.sac, &mut r)
                    .map_err(|e| Error::Diverged(format!("task {} inner loop: {e}", task.seed)))?;
                let g = query_grads(&adapted, &task.query, &cfg.sac, &mut r)
                    .map_err(|e| Error::Diverged(format!("task {} query: {e}", task.seed)))?;
                Ok((ret, Some(g)))
            })
            .collect();
        let mut grads = Vec::with_capacity(tasks.len());
        let mut ret = 0.0;
        for res in results {
            let (r, g) = res?;
            ret += r;
            grads.extend(g);
        }
        let mut query_loss = [0.0; 3];
        for g in &grads {
            for k in 0..3 {
                query_loss[k] += g.losses[k] / grads.len() as f64;
            }
        }
        outer_update(&mut nets, &grads, &cfg.outer_lr)?;
        let v = nets.v.clone();
        nets.v_target.soft_update(&v, cfg.target_tau)?;
        log.push(MetaIter {
            iter: it,
            mean_return: ret / (tasks.len() * cfg.episodes_per_iter.max(1)) as f64,
            query_loss,
        });
    }
    Ok((MetaPolicy { nets }, log))
}

/// Continue training from the meta-initialisation on a new task with the
/// usual MO-SAC updates and fresh optimiser state.
pub fn adapt(meta: &MetaPolicy, env: &MoEnv, hyper: &SacHyper, episodes: usize) -> Result<(MoSac, TrainCurve)> {
    let mut agent = MoSac::new(meta.nets.clone(), hyper.clone());
    let mut curve = TrainCurve::default();
    agent.train(env, episodes, &mut curve)?;
    Ok((agent, curve))
}

/// Fixed preferences and start states on which a policy is scored
/// deterministically.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet {
    pub prefs: Vec<Preference>,
    pub starts: Vec<MoState>,
    pub steps: usize,
}

impl EvalSet {
    /// `n_prefs` grid preferences and `n_starts` random states from `seed`.
    pub fn new(env: &MoEnv, n_prefs: usize, n_starts: usize, steps: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "eval-set", 0);
        Self { prefs: Preference::grid(n_prefs), starts: (0..n_starts).map(|_| env.random_state(&mut r)).collect(), steps }
    }

    /// Mean scalarised return of deterministic rollouts.
    pub fn score(&self, env: &MoEnv, nets: &SacNets) -> Result<f64> {
        let mut total = 0.0;
        for w in &self.prefs {
            for s0 in &self.starts {
                let (_, ret) = rollout(env, nets, w, s0, self.steps)?;
                total += w.scalarise(&ret);
            }
        }
        Ok(total / (self.prefs.len() * self.starts.len()).max(1) as f64)
    }
}

/// One adaptation episode: training return and the evaluation score after
/// the episode's updates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptRow {
    pub episode: usize,
    pub train_return: f64,
    pub eval_return: f64,
    pub moving_avg: f64,
}

/// Train for `episodes` episodes from `init` (fresh networks when `None`),
/// scoring the policy on `eval` after each one.
pub fn adapt_curve(init: Option<&MetaPolicy>, env: &MoEnv, hyper: &SacHyper, episodes: usize, eval: &EvalSet) -> Result<(MoSac, Vec<AdaptRow>)> {
    let mut agent = match init {
        Some(m) => MoSac::new(m.nets.clone(), hyper.clone()),
        None => MoSac::for_env(env, hyper.clone())?,
    };
    let mut curve = TrainCurve::default();
    let mut rows: Vec<AdaptRow> = Vec::with_capacity(episodes);
    for k in 0..episodes {
        agent.train(env, 1, &mut curve)?;
        let eval_return = eval.score(env, &agent.nets)?;
        let lo = (k + 1).saturating_sub(MA_WINDOW);
        let moving_avg = (rows[lo..].iter().map(|r| r.eval_return).sum::<f64>() + eval_return) / (k + 1 - lo) as f64;
        rows.push(AdaptRow { episode: k, train_return: curve.episodes[k].scalarised, eval_return, moving_avg });
    }
    Ok((agent, rows))
}

/// First episode whose moving average is within `1 − frac` of the final
/// moving average, measured relative to its magnitude (so `frac = 0.9`
/// means 90% of a positive final value).
pub fn episodes_to_fraction(moving_avg: &[f64], frac: f64) -> Option<usize> {
    let last = *moving_avg.last()?;
    let target = last - (1.0 - frac) * last.abs();
    moving_avg.iter().position(|&m| m >= target)
}
