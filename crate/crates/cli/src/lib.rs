//! Recipe runner behind the `pareto-xurllc` binary.
//!
//! A run resolves the scenario and budgets, executes one recipe, and writes
//! CSV tables, SVG plots and a `manifest.json` into the output directory.
//! The manifest holds everything needed to repeat the run byte for byte.

pub mod svg;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use xurllc_core::experiments::{self as exp, Budgets};
use xurllc_core::pareto::ParetoPoint;
use xurllc_core::scenario::ScenarioConfig;

use crate::svg::{emit_svg, PlotKind};

pub const RECIPES: [&str; 6] = ["peb_heatmap", "rmse_curve", "train_compare", "adapt_compare", "pareto_front", "reliability_sweep"];

pub const THREADS_VAR: &str = "PARETO_XURLLC_THREADS";

const BUDGET_KEYS: [&str; 10] =
    ["loc_trials", "meta_iters", "inner_iters", "meta_batch", "tasks", "train_episodes", "adapt_episodes", "hidden", "front_prefs", "repeats"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScenarioSource {
    Default,
    File(PathBuf),
    /// Inline `key = value` text, as stored in a manifest.
    Text(String),
}

impl ScenarioSource {
    pub fn from_arg(arg: &str) -> Self {
        if arg == "default" { Self::Default } else { Self::File(arg.into()) }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExperimentSpec {
    pub recipe: String,
    pub scenario: ScenarioSource,
    /// `key=value` pairs applied in order; scenario keys first match, then
    /// budget keys.
    pub overrides: Vec<String>,
    pub out: PathBuf,
    pub seed: u64,
    pub paper_scale: bool,
}

fn split_kv(s: &str) -> Result<(&str, &str)> {
    let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("override `{s}`: expected key=value"))?;
    Ok((k.trim(), v.trim()))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse().with_context(|| format!("{key}: `{s}` is not a count")))
        .collect()
}

fn set_budget(b: &mut Budgets, key: &str, v: &str) -> Result<()> {
    let n = || v.parse::<usize>().with_context(|| format!("{key}: `{v}` is not a count"));
    match key {
        "loc_trials" => b.loc_trials = n()?,
        "meta_iters" => b.meta_iters = n()?,
        "inner_iters" => b.inner_iters = n()?,
        "meta_batch" => b.meta_batch = n()?,
        "tasks" => b.tasks = parse_list(key, v)?,
        "train_episodes" => b.train_episodes = n()?,
        "adapt_episodes" => b.adapt_episodes = n()?,
        "hidden" => b.hidden = parse_list(key, v)?,
        "front_prefs" => b.front_prefs = n()?,
        "repeats" => b.repeats = n()?,
        _ => bail!("unknown override key `{key}`"),
    }
    Ok(())
}

fn budget_pairs(b: &Budgets) -> Vec<(&'static str, String)> {
    let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    BUDGET_KEYS
        .iter()
        .map(|&k| {
            let v = match k {
                "loc_trials" => b.loc_trials.to_string(),
                "meta_iters" => b.meta_iters.to_string(),
                "inner_iters" => b.inner_iters.to_string(),
                "meta_batch" => b.meta_batch.to_string(),
                "tasks" => list(&b.tasks),
                "train_episodes" => b.train_episodes.to_string(),
                "adapt_episodes" => b.adapt_episodes.to_string(),
                "hidden" => list(&b.hidden),
                "front_prefs" => b.front_prefs.to_string(),
                _ => b.repeats.to_string(),
            };
            (k, v)
        })
        .collect()
}

/// Scenario and budgets after applying every override.
pub fn resolve(spec: &ExperimentSpec) -> Result<(ScenarioConfig, Budgets)> {
    let mut cfg = match &spec.scenario {
        ScenarioSource::Default => ScenarioConfig::default(),
        ScenarioSource::File(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading scenario {}", p.display()))?;
            ScenarioConfig::parse(&text)?
        }
        ScenarioSource::Text(t) => ScenarioConfig::parse(t)?,
    };
    let mut budgets = if spec.paper_scale { Budgets::paper() } else { Budgets::desk() };
    for o in &spec.overrides {
        let (k, v) = split_kv(o)?;
        if ScenarioConfig::knows(k) {
            cfg.set(k, v)?;
        } else {
            set_budget(&mut budgets, k, v)?;
        }
    }
    cfg.validate()?;
    if budgets.tasks.is_empty() {
        bail!("tasks: need at least one task count");
    }
    Ok((cfg, budgets))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// An output file: name, bytes.
type Artifact = (String, Vec<u8>);

struct Table {
    text: String,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self { text: header.join(",") + "\n" }
    }

    fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }
}

/// Shortest round-trip decimal; `inf`/`NaN` for non-finite values.
fn f(x: f64) -> String {
    x.to_string()
}

fn front_rows(t: &mut Table, lead: &[String], points: &[ParetoPoint], eps: f64, k: usize, algorithm: &str) {
    for p in points {
        let mut cells = lead.to_vec();
        cells.extend([f(p.record.w1), f(p.cost), f(p.latency), f(eps), k.to_string(), algorithm.to_string()]);
        t.row(&cells);
    }
}

fn plot(files: &mut Vec<Artifact>, name: &str, csv: &str, kind: PlotKind) -> Result<()> {
    files.push((name.to_string(), emit_svg(csv, &kind)?.into_bytes()));
    Ok(())
}

/// Rows of `csv` whose `col` equals `value`, header kept.
fn select(csv: &str, col: usize, value: &str) -> String {
    let mut lines = csv.lines();
    let mut out = lines.next().unwrap_or("").to_string() + "\n";
    for l in lines.filter(|l| l.split(',').nth(col) == Some(value)) {
        out.push_str(l);
        out.push('\n');
    }
    out
}

fn execute(recipe: &str, cfg: &ScenarioConfig, b: &Budgets, seed: u64) -> Result<Vec<Artifact>> {
    let mut files: Vec<Artifact> = Vec::new();
    match recipe {
        "peb_heatmap" => {
            let h = exp::peb_heatmap(cfg)?;
            let mut t = Table::new(&["x", "y", "peb_m"]);
            for (iy, y) in h.ys.iter().enumerate() {
                for (ix, x) in h.xs.iter().enumerate() {
                    t.row(&[f(*x), f(*y), f(h.get(ix, iy))]);
                }
            }
            plot(&mut files, "peb_heatmap.svg", &t.text, PlotKind::heatmap("x", "y", "peb_m"))?;
            files.push(("peb_heatmap.csv".into(), t.text.into_bytes()));
        }
        "rmse_curve" => {
            let rows = exp::rmse_curve(cfg, b, seed)?;
            let mut t = Table::new(&["algorithm", "snr_db", "eta_bar", "rmse_m", "stderr"]);
            let mut p = Table::new(&["snr_db", "rmse_m", "series"]);
            for r in &rows {
                t.row(&[r.algorithm.name().into(), f(r.snr_db), f(r.eta_bar), f(r.rmse_m), f(r.stderr)]);
                p.row(&[f(r.snr_db), f(r.rmse_m), format!("{} eta={}ns", r.algorithm.name(), r.eta_bar * 1e9)]);
            }
            plot(&mut files, "rmse_curve.svg", &p.text, PlotKind::line("snr_db", "rmse_m", "series"))?;
            files.push(("rmse_curve.csv".into(), t.text.into_bytes()));
        }
        "train_compare" => {
            let bank = exp::train_meta_bank(cfg, b, seed)?;
            let (rows, plain) = exp::train_compare(cfg, b, &bank, seed)?;
            let mut t = Table::new(&["episode", "algorithm", "return", "moving_avg"]);
            for r in &rows {
                t.row(&[r.episode.to_string(), r.algorithm.clone(), f(r.ret), f(r.moving_avg)]);
            }
            let mut c = Table::new(&["episode", "w1", "return_cost", "return_latency", "scalarised_return", "moving_avg"]);
            for e in &plain.episodes {
                c.row(&[e.episode.to_string(), f(e.w.w[0]), f(e.ret[0]), f(e.ret[1]), f(e.scalarised), f(e.moving_avg)]);
            }
            plot(&mut files, "train_compare.svg", &t.text, PlotKind::line("episode", "moving_avg", "algorithm"))?;
            files.push(("train_compare.csv".into(), t.text.into_bytes()));
            files.push(("train_curve.csv".into(), c.text.into_bytes()));
        }
        "adapt_compare" => {
            let bank = exp::train_meta_bank(cfg, b, seed)?;
            let runs = exp::adapt_compare(cfg, b, &bank, seed)?;
            let mut curve = Table::new(&["task", "episode", "algorithm", "return", "moving_avg"]);
            let mut summary = Table::new(&["task", "algorithm", "episodes_to_90", "hypervolume"]);
            let mut front = Table::new(&["task", "w1", "cost", "latency", "eps", "K", "algorithm"]);
            for (task, set) in runs.iter().enumerate() {
                for r in set {
                    for row in &r.rows {
                        curve.row(&[task.to_string(), row.episode.to_string(), r.algorithm.clone(), f(row.eval_return), f(row.moving_avg)]);
                    }
                    summary.row(&[task.to_string(), r.algorithm.clone(), r.episodes_to_90.to_string(), f(r.hypervolume)]);
                    front_rows(&mut front, &[task.to_string()], &r.front, cfg.eps_max, cfg.k_total(), &r.algorithm);
                }
            }
            plot(&mut files, "adapt_compare.svg", &select(&curve.text, 0, "0"), PlotKind::line("episode", "moving_avg", "algorithm"))?;
            plot(&mut files, "adapt_front.svg", &select(&front.text, 0, "0"), PlotKind::scatter("cost", "latency", "algorithm"))?;
            files.push(("adapt_compare.csv".into(), curve.text.into_bytes()));
            files.push(("adapt_summary.csv".into(), summary.text.into_bytes()));
            files.push(("adapt_front.csv".into(), front.text.into_bytes()));
        }
        "pareto_front" => {
            let bank = exp::train_meta_bank(cfg, b, seed)?;
            let mut front = Table::new(&["task", "w1", "cost", "latency", "eps", "K", "algorithm"]);
            let mut hv = Table::new(&["task", "algorithm", "eps", "K", "hypervolume"]);
            let mut p = Table::new(&["cost", "latency", "series"]);
            for task in 0..b.repeats as u64 {
                for r in exp::pareto_fronts(cfg, b, &bank, &exp::EPS_SWEEP, seed, task)? {
                    front_rows(&mut front, &[task.to_string()], &r.front, r.eps, r.k, &r.algorithm);
                    hv.row(&[task.to_string(), r.algorithm.clone(), f(r.eps), r.k.to_string(), f(r.hypervolume)]);
                    if task == 0 {
                        for q in &r.front {
                            p.row(&[f(q.cost), f(q.latency), format!("{} eps={:e}", r.algorithm, r.eps)]);
                        }
                    }
                }
            }
            plot(&mut files, "pareto_front.svg", &p.text, PlotKind::scatter("cost", "latency", "series"))?;
            files.push(("pareto_front.csv".into(), front.text.into_bytes()));
            files.push(("hypervolume.csv".into(), hv.text.into_bytes()));
        }
        "reliability_sweep" => {
            let cells = exp::reliability_sweep(cfg, b, &exp::K_SWEEP, &exp::dt_grid(), seed)?;
            let mut t = Table::new(&["K", "dt", "xi", "distinct_users"]);
            for c in &cells {
                t.row(&[c.k.to_string(), f(c.dt), c.xi.to_string(), c.distinct.to_string()]);
            }
            plot(&mut files, "reliability_sweep.svg", &t.text, PlotKind::line("dt", "xi", "K"))?;
            files.push(("reliability_sweep.csv".into(), t.text.into_bytes()));
        }
        other => bail!("unknown recipe `{other}`; valid recipes: {}", RECIPES.join(", ")),
    }
    Ok(files)
}

fn manifest(spec: &ExperimentSpec, cfg: &ScenarioConfig, b: &Budgets, files: &[Artifact]) -> String {
    let scenario = cfg.to_text();
    let budgets: serde_json::Map<String, Value> = budget_pairs(b).into_iter().map(|(k, v)| (k.to_string(), Value::String(v))).collect();
    let artifacts: serde_json::Map<String, Value> = files.iter().map(|(n, bytes)| (n.clone(), Value::String(sha256_hex(bytes)))).collect();
    let m = json!({
        "recipe": spec.recipe,
        "seed": spec.seed,
        "paper_scale": spec.paper_scale,
        "config_hash": sha256_hex(scenario.as_bytes()),
        "scenario": scenario,
        "overrides": spec.overrides,
        "budgets": budgets,
        "artifacts": artifacts,
        "versions": {
            "xurllc-cli": env!("CARGO_PKG_VERSION"),
            "xurllc-core": xurllc_core::VERSION,
        },
    });
    let mut s = serde_json::to_string_pretty(&m).expect("manifest serialises");
    s.push('\n');
    s
}

/// Rebuild the spec of a previous run from its manifest, writing to `out`.
/// The stored scenario already carries the scenario overrides; replaying
/// them on top is a no-op, and the budget overrides rebuild the budgets.
pub fn spec_from_manifest(path: &Path, out: PathBuf) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let m: Value = serde_json::from_str(&text).context("parsing manifest")?;
    let field = |k: &str| m.get(k).ok_or_else(|| anyhow!("manifest: missing `{k}`"));
    let recipe = field("recipe")?.as_str().ok_or_else(|| anyhow!("manifest: `recipe` is not a string"))?.to_string();
    let seed = field("seed")?.as_u64().ok_or_else(|| anyhow!("manifest: `seed` is not an integer"))?;
    let scenario = field("scenario")?.as_str().ok_or_else(|| anyhow!("manifest: `scenario` is not a string"))?.to_string();
    let paper_scale = field("paper_scale")?.as_bool().unwrap_or(false);
    let overrides = field("overrides")?
        .as_array()
        .ok_or_else(|| anyhow!("manifest: `overrides` is not a list"))?
        .iter()
        .map(|v| v.as_str().map(String::from).ok_or_else(|| anyhow!("manifest: override is not a string")))
        .collect::<Result<_>>()?;
    Ok(ExperimentSpec { recipe, scenario: ScenarioSource::Text(scenario), overrides, out, seed, paper_scale })
}

/// Worker count from `PARETO_XURLLC_THREADS`, if set.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("{THREADS_VAR}: `{v}` is not a count"))?;
            if n == 0 {
                bail!("{THREADS_VAR} must be at least 1");
            }
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

/// Execute `spec` and write its artifacts. Returns the written paths,
/// manifest last. On failure nothing written by this call is left behind.
pub fn run(spec: &ExperimentSpec) -> Result<Vec<PathBuf>> {
    if !RECIPES.contains(&spec.recipe.as_str()) {
        bail!("unknown recipe `{}`; valid recipes: {}", spec.recipe, RECIPES.join(", "));
    }
    let (cfg, budgets) = resolve(spec)?;
    let files = match thread_cap()? {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(|| execute(&spec.recipe, &cfg, &budgets, spec.seed))?,
        None => execute(&spec.recipe, &cfg, &budgets, spec.seed)?,
    };
    let man = manifest(spec, &cfg, &budgets, &files);

    let created_dir = !spec.out.exists();
    fs::create_dir_all(&spec.out).with_context(|| format!("creating {}", spec.out.display()))?;
    let mut written = Vec::new();
    let result = (|| -> Result<()> {
        for (name, bytes) in files.iter().chain([("manifest.json".to_string(), man.into_bytes())].iter()) {
            let p = spec.out.join(name);
            fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
            written.push(p);
        }
        Ok(())
    })();
    if let Err(e) = result {
        for p in &written {
            let _ = fs::remove_file(p);
        }
        if created_dir {
            let _ = fs::remove_dir(&spec.out);
        }
        return Err(e);
    }
    Ok(written)
}

/// One line per artifact: name and SHA-256.
pub fn summary(paths: &[PathBuf]) -> Result<String> {
    let mut s = String::new();
    for p in paths {
        let bytes = fs::read(p)?;
        let _ = writeln!(s, "{}  {}", sha256_hex(&bytes), p.display());
    }
    Ok(s)
}
