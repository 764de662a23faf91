//! End-to-end pipelines behind the CLI recipes.
//!
//! Each function is a pure function of its configuration, budgets and seed.
//! Meta-models are trained once per task count and shared by the recipes
//! that need them; see [`MetaBank`].

use rayon::prelude::*;

use crate::crlb::{self, Heatmap};
use crate::error::{Error, Result};
use crate::locest::{self, Algorithm, RmseRow};
use crate::meta::{adapt_curve, episodes_to_fraction, meta_train, AdaptRow, EvalSet, MetaConfig, MetaIter, MetaPolicy, Task};
use crate::morl::sac::{rollout, MA_WINDOW};
use crate::morl::{EnvConfig, MoEnv, MoSac, MoState, Preference, SacHyper, SacNets, TrainCurve};
use crate::pareto::{self, Decision, LatencyTrace, ParetoPoint, SweepCell};
use crate::rng;
use crate::scenario::ScenarioConfig;

/// Run sizes. `desk` fits a laptop; `paper` restores the full-size values.
#[derive(Clone, Debug, PartialEq)]
pub struct Budgets {
    pub loc_trials: usize,
    pub meta_iters: usize,
    pub inner_iters: usize,
    pub meta_batch: usize,
    /// Task counts of the meta-models.
    pub tasks: Vec<usize>,
    /// Episodes of plain MO-SAC training.
    pub train_episodes: usize,
    pub adapt_episodes: usize,
    pub hidden: Vec<usize>,
    /// Preferences per approximate front.
    pub front_prefs: usize,
    /// Adaptation repeats (unseen tasks) per recipe.
    pub repeats: usize,
}

impl Budgets {
    pub fn desk() -> Self {
        Self {
            loc_trials: 100,
            meta_iters: 200,
            inner_iters: 20,
            meta_batch: 32,
            tasks: vec![2, 10],
            train_episodes: 200,
            adapt_episodes: 100,
            hidden: vec![64, 64],
            front_prefs: 21,
            repeats: 1,
        }
    }

    pub fn paper() -> Self {
        Self {
            loc_trials: 1000,
            meta_iters: 10_000,
            inner_iters: 10_000,
            meta_batch: 64,
            train_episodes: 1000,
            adapt_episodes: 1000,
            ..Self::desk()
        }
    }
}

pub const SNR_LIST_DB: [f64; 4] = [-5.0, 0.0, 5.0, 10.0];
pub const ETA_BARS: [f64; 4] = [0.5e-9, 1e-9, 1.5e-9, 2e-9];
pub const EPS_SWEEP: [f64; 3] = [1e-7, 1e-5, 1e-3];
pub const K_SWEEP: [usize; 3] = [64, 128, 256];
/// Preference of the fixed-weight baseline.
pub const FIXED_W1: f64 = 0.5;

/// Maximum tolerable latency grid for the reliability sweep, seconds.
pub fn dt_grid() -> Vec<f64> {
    (0..=12).map(|i| i as f64 * 1e-5).collect()
}

pub fn peb_heatmap(cfg: &ScenarioConfig) -> Result<Heatmap> {
    crlb::peb_heatmap(cfg, cfg.grid_len, cfg.snr_db)
}

pub fn rmse_curve(cfg: &ScenarioConfig, budgets: &Budgets, seed: u64) -> Result<Vec<RmseRow>> {
    let h = locest::Hyper { seed, ..Default::default() };
    locest::rmse_curve(cfg, &SNR_LIST_DB, &Algorithm::ALL, &ETA_BARS, budgets.loc_trials, &h, seed)
}

/// Seed of the `k`-th task of a role (`"train"` or `"adapt"`).
pub fn task_seed(seed: u64, role: &str, k: u64) -> u64 {
    use rand::Rng as _;
    rng::stream(seed, role, k).random()
}

fn env_cfg(cfg: &ScenarioConfig) -> EnvConfig {
    EnvConfig { eps: cfg.eps_max, ..Default::default() }
}

pub fn sac_hyper(cfg: &ScenarioConfig, budgets: &Budgets, seed: u64) -> SacHyper {
    SacHyper {
        hidden: budgets.hidden.clone(),
        episodes: budgets.train_episodes,
        episode_len: cfg.t_slots,
        seed,
        ..Default::default()
    }
}

/// One meta-model per task count in `budgets.tasks`.
#[derive(Clone, Debug)]
pub struct MetaBank {
    /// Task count, model and per-iteration meta-training log.
    pub models: Vec<(usize, MetaPolicy, Vec<MetaIter>)>,
}

impl MetaBank {
    pub fn get(&self, n: usize) -> Option<&MetaPolicy> {
        self.models.iter().find(|m| m.0 == n).map(|m| &m.1)
    }
}

pub fn train_meta_bank(cfg: &ScenarioConfig, budgets: &Budgets, seed: u64) -> Result<MetaBank> {
    let mcfg = MetaConfig {
        meta_iters: budgets.meta_iters,
        inner_iters: budgets.inner_iters,
        sac: SacHyper { batch: budgets.meta_batch, ..sac_hyper(cfg, budgets, seed) },
        ..Default::default()
    };
    let mut models = Vec::new();
    for &n in &budgets.tasks {
        let mut tasks = (0..n as u64)
            .map(|k| Task::new(cfg, env_cfg(cfg), task_seed(seed, "train", k)))
            .collect::<Result<Vec<_>>>()?;
        let (m, log) = meta_train(&mut tasks, &mcfg, seed)?;
        models.push((n, m, log));
    }
    Ok(MetaBank { models })
}

/// Training curves of plain and fixed-weight MO-SAC on the first training
/// task, next to the meta-training progress of each meta-model.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub episode: usize,
    pub algorithm: String,
    pub ret: f64,
    pub moving_avg: f64,
}

/// Also returns the per-episode curve of plain MO-SAC.
pub fn train_compare(cfg: &ScenarioConfig, budgets: &Budgets, bank: &MetaBank, seed: u64) -> Result<(Vec<CurveRow>, TrainCurve)> {
    let task = Task::new(cfg, env_cfg(cfg), task_seed(seed, "train", 0))?;
    let h = sac_hyper(cfg, budgets, seed);
    let fixed = SacHyper { fixed_w: Some(Preference::new(FIXED_W1)?), ..h.clone() };
    let mut rows = Vec::new();
    for (n, _, log) in &bank.models {
        let name = format!("meta_mosac_{n}");
        let ret: Vec<f64> = log.iter().map(|it| it.mean_return).collect();
        let ma = moving_average(&ret, MA_WINDOW);
        rows.extend(log.iter().zip(ma).map(|(it, m)| CurveRow { episode: it.iter, algorithm: name.clone(), ret: it.mean_return, moving_avg: m }));
    }
    let runs: Vec<Result<TrainCurve>> =
        [&h, &fixed].par_iter().map(|hh| MoSac::for_env(&task.env, (*hh).clone()).and_then(|a| run(a, &task.env, hh.episodes))).collect();
    let mut runs = runs.into_iter();
    let plain = runs.next().unwrap()?;
    rows.extend(curve_rows("mosac", &plain));
    rows.extend(curve_rows("fixed_w", &runs.next().unwrap()?));
    Ok((rows, plain))
}

fn run(mut agent: MoSac, env: &MoEnv, episodes: usize) -> Result<TrainCurve> {
    let mut c = TrainCurve::default();
    agent.train(env, episodes, &mut c)?;
    Ok(c)
}

/// Trailing mean over up to `window` values.
pub fn moving_average(v: &[f64], window: usize) -> Vec<f64> {
    (0..v.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window.max(1));
            v[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

fn curve_rows(name: &str, c: &TrainCurve) -> Vec<CurveRow> {
    c.episodes
        .iter()
        .map(|e| CurveRow { episode: e.episode, algorithm: name.to_string(), ret: e.scalarised, moving_avg: e.moving_avg })
        .collect()
}

/// Start state of every front rollout: zero offsets at mid power.
pub fn front_start(env: &MoEnv) -> MoState {
    let c = &env.scenario.config;
    MoState { theta: vec![0.0; c.b], power: 0.5 * (c.p_min + c.p_max) }
}

/// Deterministic rollouts over a preference grid; each point is the slot
/// cost and capped worst-user latency of the final state.
pub fn approximate_front(env: &MoEnv, nets: &SacNets, n_prefs: usize, steps: usize) -> Result<(Vec<ParetoPoint>, Vec<LatencyTrace>)> {
    let cap = env.scenario.config.slot_len;
    let s0 = front_start(env);
    let mut points = Vec::with_capacity(n_prefs);
    let mut traces = Vec::with_capacity(n_prefs);
    for w in Preference::grid(n_prefs) {
        let (path, _) = rollout(env, nets, &w, &s0, steps)?;
        let (last, m) = path.last().ok_or(Error::Empty("rollout"))?;
        points.push(ParetoPoint {
            cost: m.cost,
            latency: m.capped_latency(cap),
            record: Decision {
                w1: w.w[0],
                power: path.iter().map(|(s, _)| s.power).collect(),
                theta: last.theta.clone(),
                eps: env.cfg.eps,
            },
        });
        traces.push(path.iter().map(|(_, m)| m.latency.per_user.clone()).collect());
    }
    Ok((points, traces))
}

/// Adaptation outcome of one algorithm on one unseen task.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptRun {
    pub algorithm: String,
    pub rows: Vec<AdaptRow>,
    pub episodes_to_90: usize,
    pub front: Vec<ParetoPoint>,
    pub hypervolume: f64,
}

/// Adapt every meta-model, plain MO-SAC and the fixed-weight baseline on
/// the `repeat`-th unseen task. All agents share the agent seed, so they
/// see the same preferences and start states.
pub fn adapt_task(cfg: &ScenarioConfig, budgets: &Budgets, bank: &MetaBank, seed: u64, repeat: u64) -> Result<Vec<AdaptRun>> {
    let task = Task::new(cfg, env_cfg(cfg), task_seed(seed, "adapt", repeat))?;
    let env = &task.env;
    let agent_seed = task_seed(seed, "adapt-agent", repeat);
    let h = sac_hyper(cfg, budgets, agent_seed);
    let eval = EvalSet::new(env, 5, 2, cfg.t_slots, agent_seed);
    let mut jobs: Vec<(String, Option<&MetaPolicy>, SacHyper)> =
        bank.models.iter().map(|(n, m, _)| (format!("meta_mosac_{n}"), Some(m), h.clone())).collect();
    jobs.push(("mosac".into(), None, h.clone()));
    jobs.push(("fixed_w".into(), None, SacHyper { fixed_w: Some(Preference::new(FIXED_W1)?), ..h.clone() }));
    let reference = env.worst_case()?;
    jobs.par_iter()
        .map(|(name, init, hh)| {
            let (agent, rows) = adapt_curve(*init, env, hh, budgets.adapt_episodes, &eval)?;
            let ma: Vec<f64> = rows.iter().map(|r| r.moving_avg).collect();
            let (points, _) = approximate_front(env, &agent.nets, budgets.front_prefs, cfg.t_slots)?;
            let front = pareto::pareto_filter(&points);
            Ok(AdaptRun {
                algorithm: name.clone(),
                episodes_to_90: episodes_to_fraction(&ma, 0.9).unwrap_or(rows.len()),
                hypervolume: pareto::hypervolume(&front, reference)?,
                rows,
                front,
            })
        })
        .collect()
}

pub fn adapt_compare(cfg: &ScenarioConfig, budgets: &Budgets, bank: &MetaBank, seed: u64) -> Result<Vec<Vec<AdaptRun>>> {
    (0..budgets.repeats as u64).map(|r| adapt_task(cfg, budgets, bank, seed, r)).collect()
}

/// Front of one algorithm at one maximum DEP.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontRun {
    pub algorithm: String,
    pub eps: f64,
    pub k: usize,
    pub points: Vec<ParetoPoint>,
    pub front: Vec<ParetoPoint>,
    pub hypervolume: f64,
}

/// Adapted fronts of the largest meta-model and the fixed-weight baseline
/// for each maximum DEP in `eps_list`. Hypervolumes share one reference
/// point across the sweep (worst cost and latency over all runs).
pub fn pareto_fronts(cfg: &ScenarioConfig, budgets: &Budgets, bank: &MetaBank, eps_list: &[f64], seed: u64, repeat: u64) -> Result<Vec<FrontRun>> {
    let n_max = *budgets.tasks.iter().max().ok_or(Error::Empty("task counts"))?;
    let meta = bank.get(n_max).ok_or(Error::Empty("meta-model"))?;
    let agent_seed = task_seed(seed, "adapt-agent", repeat);
    let placement = task_seed(seed, "adapt", repeat);
    let h = sac_hyper(cfg, budgets, agent_seed);
    let fixed = SacHyper { fixed_w: Some(Preference::new(FIXED_W1)?), ..h.clone() };
    let mut jobs = Vec::new();
    for &eps in eps_list {
        let c = ScenarioConfig { eps_max: eps, ..cfg.clone() };
        let env = Task::new(&c, env_cfg(&c), placement)?.env;
        jobs.push(("meta_mosac".to_string(), Some(meta), h.clone(), env.clone()));
        jobs.push(("fixed_w".to_string(), None, fixed.clone(), env));
    }
    let runs: Vec<(String, MoEnv, Vec<ParetoPoint>)> = jobs
        .par_iter()
        .map(|(name, init, hh, env)| {
            let eval = EvalSet::new(env, 5, 2, cfg.t_slots, agent_seed);
            let (agent, _) = adapt_curve(*init, env, hh, budgets.adapt_episodes, &eval)?;
            let (points, _) = approximate_front(env, &agent.nets, budgets.front_prefs, cfg.t_slots)?;
            Ok((name.clone(), env.clone(), points))
        })
        .collect::<Result<_>>()?;
    let mut reference = [f64::NEG_INFINITY; 2];
    for (_, env, _) in &runs {
        let w = env.worst_case()?;
        reference = [reference[0].max(w[0]), reference[1].max(w[1])];
    }
    runs.into_iter()
        .map(|(algorithm, env, points)| {
            let front = pareto::pareto_filter(&points);
            Ok(FrontRun {
                algorithm,
                eps: env.cfg.eps,
                k: env.scenario.config.k_total(),
                hypervolume: pareto::hypervolume(&front, reference)?,
                points,
                front,
            })
        })
        .collect()
}

/// Train plain MO-SAC at each total element count and sweep the latency
/// threshold over the resulting front's traces.
pub fn reliability_sweep(cfg: &ScenarioConfig, budgets: &Budgets, ks: &[usize], dts: &[f64], seed: u64) -> Result<Vec<SweepCell>> {
    let placement = task_seed(seed, "adapt", 0);
    let traces: Vec<Vec<LatencyTrace>> = ks
        .par_iter()
        .map(|&k| {
            if k % cfg.b != 0 {
                return Err(Error::Config(format!("K = {k} is not a multiple of B = {}", cfg.b)));
            }
            let c = ScenarioConfig { k_b: k / cfg.b, ..cfg.clone() };
            let env = Task::new(&c, env_cfg(&c), placement)?.env;
            let h = sac_hyper(&c, budgets, seed);
            let mut agent = MoSac::for_env(&env, h.clone())?;
            agent.train(&env, h.episodes, &mut TrainCurve::default())?;
            Ok(approximate_front(&env, &agent.nets, budgets.front_prefs, c.t_slots)?.1)
        })
        .collect::<Result<_>>()?;
    pareto::reliability_sweep(ks, &traces, dts)
}
