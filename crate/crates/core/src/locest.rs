//! Direct maximum-likelihood localisation by stochastic gradient descent.
//!
//! Each observation is `Y = √P0 ι(p, η) α + n` with the two complex path
//! amplitudes α as nuisance. Substituting the least-squares α̂ leaves the
//! concentrated loss `‖Y − P_ι Y‖²` in `(x, y, h, η)` only. The training
//! set is a batch of independent pilot re-draws of the same user; the
//! optimisers run in coordinates whitened by the equivalent Fisher
//! information at the initial point, so one unit of step is one
//! single-snapshot standard deviation in every direction.

use nalgebra::{Cholesky, Matrix4, Vector4};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::channel::loc::{cn_sample, true_channel_params};
use crate::channel::LocModel;
use crate::crlb;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::scenario::{ScenarioConfig, Vec3};

type C = Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    /// Minibatches with a cosine-decayed step.
    MinibatchSgd,
    /// One observation per step, constant step.
    Sgd,
    /// Full training set per step, constant step.
    Bgd,
    /// Adam on minibatches, constant step.
    Adam,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::MinibatchSgd, Algorithm::Sgd, Algorithm::Bgd, Algorithm::Adam];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::MinibatchSgd => "minibatch_sgd",
            Algorithm::Sgd => "sgd",
            Algorithm::Bgd => "bgd",
            Algorithm::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown localisation algorithm `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hyper {
    pub algorithm: Algorithm,
    /// Step size in whitened coordinates.
    pub lr: f64,
    /// Minibatch size for the minibatch and Adam variants.
    pub batch: usize,
    pub epochs: usize,
    /// Number of pilot re-draws in the training set.
    pub train_size: usize,
    pub grad_tol: f64,
    pub adam_betas: (f64, f64),
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::MinibatchSgd,
            lr: 0.3,
            batch: 16,
            epochs: 20,
            train_size: 64,
            grad_tol: 1e-8,
            adam_betas: (0.9, 0.999),
            seed: 0,
        }
    }
}

impl Hyper {
    pub fn with_algorithm(&self, algorithm: Algorithm) -> Self {
        Self { algorithm, ..self.clone() }
    }

    fn effective_batch(&self, n: usize) -> usize {
        match self.algorithm {
            Algorithm::Sgd => 1,
            Algorithm::Bgd => n,
            Algorithm::MinibatchSgd | Algorithm::Adam => self.batch.clamp(1, n),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub pos: Vec3,
    pub eta: f64,
    /// Mean concentrated loss over the training set, in units of ν².
    pub loss: f64,
    /// Clock offset strictly below η̄.
    pub accepted: bool,
    /// Gradient norm fell below the tolerance; otherwise the best epoch-end
    /// iterate is returned.
    pub converged: bool,
    /// Training-set loss at the end of each epoch.
    pub loss_curve: Vec<f64>,
}

fn gram(io: &[[C; 2]]) -> [[C; 2]; 2] {
    let mut g = [[C::new(0.0, 0.0); 2]; 2];
    for r in io {
        for a in 0..2 {
            for b in 0..2 {
                g[a][b] += r[a].conj() * r[b];
            }
        }
    }
    g
}

/// Solve the 2×2 Hermitian system `g x = rhs`, with a small ridge when `g`
/// is numerically singular. Returns the solution and whether the ridge
/// was needed.
fn solve2(g: &[[C; 2]; 2], rhs: [C; 2]) -> ([C; 2], bool) {
    let tr = g[0][0].re + g[1][1].re;
    let mut m = *g;
    let mut det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let flag = det.norm() <= 1e-12 * g[0][0].re * g[1][1].re || !(tr > 0.0);
    if flag {
        let ridge = 1e-12 * tr.max(f64::MIN_POSITIVE);
        m[0][0] += ridge;
        m[1][1] += ridge;
        det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    }
    let x0 = (m[1][1] * rhs[0] - m[0][1] * rhs[1]) / det;
    let x1 = (m[0][0] * rhs[1] - m[1][0] * rhs[0]) / det;
    ([x0, x1], flag)
}

/// `α̂ = (ιᴴι)⁻¹ ιᴴ Y / √P0` and a flag set when ιᴴι had to be regularised.
pub fn nuisance_closed_form(iota: &[[C; 2]], y: &[C], p0: f64) -> Result<([C; 2], bool)> {
    if iota.len() != y.len() {
        return Err(Error::Shape(format!("ι has {} rows, Y has {}", iota.len(), y.len())));
    }
    if !(p0 > 0.0) {
        return Err(Error::Domain(format!("P0 = {p0} must be > 0")));
    }
    let mut rhs = [C::new(0.0, 0.0); 2];
    for (r, yi) in iota.iter().zip(y) {
        rhs[0] += r[0].conj() * yi;
        rhs[1] += r[1].conj() * yi;
    }
    let (x, flag) = solve2(&gram(iota), rhs);
    let s = p0.sqrt();
    Ok(([x[0] / s, x[1] / s], flag))
}

/// Concentrated loss and its gradient in `(x, y, h, η)` for one observation,
/// given the regressors at the evaluation point.
fn loss_grad(io: &[[C; 2]], dio: &[Vec<[C; 2]>; 4], y: &[C], p0: f64) -> (f64, [f64; 4]) {
    let (a, _) = nuisance_closed_form(io, y, p0).expect("shapes checked by caller");
    let s = p0.sqrt();
    let beta = [a[0] * s, a[1] * s];
    let mut loss = 0.0;
    let mut g = [0.0; 4];
    for m in 0..y.len() {
        let r = y[m] - io[m][0] * beta[0] - io[m][1] * beta[1];
        loss += r.norm_sqr();
        for (i, gi) in g.iter_mut().enumerate() {
            let d = dio[i][m][0] * beta[0] + dio[i][m][1] * beta[1];
            *gi += -2.0 * (r.conj() * d).re;
        }
    }
    (loss, g)
}

/// `‖Y − P_ι Y‖²` at `(pos, eta)`.
pub fn concentrated_loss(model: &LocModel, pos: &Vec3, eta: f64, y: &[C], p0: f64) -> Result<f64> {
    Ok(concentrated_loss_grad(model, pos, eta, y, p0)?.0)
}

/// Concentrated loss and its gradient in `(x, y, h, η)`.
pub fn concentrated_loss_grad(model: &LocModel, pos: &Vec3, eta: f64, y: &[C], p0: f64) -> Result<(f64, [f64; 4])> {
    if y.len() != model.m() {
        return Err(Error::Shape(format!("observation has {} entries, M = {}", y.len(), model.m())));
    }
    let (io, dio) = model.iota(pos, eta)?;
    Ok(loss_grad(&io, &dio, y, p0))
}

/// Independent noisy pilot observations of a user.
pub fn simulate_observations(
    model: &LocModel,
    pos: &Vec3,
    eta: f64,
    p0: f64,
    noise_var: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<C>>> {
    let q = true_channel_params(&model.cfg, pos, eta)?;
    let clean = model.signal(&q, p0);
    Ok((0..n)
        .map(|_| clean.iter().map(|s| s + cn_sample(noise_var, rng)).collect())
        .collect())
}

/// Equivalent per-observation information on `(x, y, h, η)` with the path
/// amplitudes profiled out, in units of the ν²-normalised loss.
fn equivalent_fim(io: &[[C; 2]], dio: &[Vec<[C; 2]>; 4], alpha: [C; 2], p0: f64, noise_var: f64) -> Matrix4<f64> {
    let s = p0.sqrt();
    let g = gram(io);
    let cols: Vec<Vec<C>> = (0..4)
        .map(|i| {
            let col: Vec<C> = (0..io.len())
                .map(|m| s * (dio[i][m][0] * alpha[0] + dio[i][m][1] * alpha[1]))
                .collect();
            let mut rhs = [C::new(0.0, 0.0); 2];
            for (r, c) in io.iter().zip(&col) {
                rhs[0] += r[0].conj() * c;
                rhs[1] += r[1].conj() * c;
            }
            let (x, _) = solve2(&g, rhs);
            col.iter().zip(io).map(|(c, r)| c - r[0] * x[0] - r[1] * x[1]).collect()
        })
        .collect();
    Matrix4::from_fn(|a, b| {
        2.0 / noise_var * cols[a].iter().zip(&cols[b]).map(|(x, y)| (x.conj() * y).re).sum::<f64>()
    })
}

fn whitening(f: &Matrix4<f64>) -> Matrix4<f64> {
    let sym = (f + f.transpose()) * 0.5;
    let mut ridge = 0.0;
    loop {
        let m = sym + Matrix4::from_diagonal(&Vector4::repeat(ridge));
        if let Some(ch) = Cholesky::new(m) {
            return ch.l();
        }
        let scale = sym.diagonal().iter().map(|d| d.abs()).fold(0.0, f64::max).max(1.0);
        ridge = if ridge == 0.0 { 1e-10 * scale } else { ridge * 10.0 };
    }
}

fn metric_at(prob: &Problem, p: &Vector4<f64>) -> Result<Matrix4<f64>> {
    let pos = Vec3::new(p[0], p[1], p[2]);
    let (io, dio) = prob.model.iota(&pos, p[3])?;
    let q = prob.model.position_params(&pos, p[3])?.0;
    let alpha = [C::from_polar(q[3], q[4]), C::from_polar(q[5], q[6])];
    Ok(equivalent_fim(&io, &dio, alpha, prob.p0, prob.noise_var))
}

struct Problem<'a> {
    model: &'a LocModel,
    obs: &'a [Vec<C>],
    p0: f64,
    noise_var: f64,
    eta_bar: f64,
}

impl Problem<'_> {
    fn project(&self, p: Vector4<f64>) -> Vector4<f64> {
        let pos = self.model.cfg.project_into_room(&Vec3::new(p[0], p[1], p[2]));
        Vector4::new(pos.x, pos.y, pos.z, p[3].clamp(0.0, self.eta_bar))
    }

    fn bounds(&self) -> (Vector4<f64>, Vector4<f64>) {
        let c = &self.model.cfg;
        (
            Vector4::new(-c.room_x / 2.0, -c.room_y / 2.0, 0.0, 0.0),
            Vector4::new(c.room_x / 2.0, c.room_y / 2.0, c.ceiling_h, self.eta_bar),
        )
    }

    /// Whitening factor `L` and whitened gradient `L⁻¹g` for a projected
    /// step. Coordinates sitting on a bound with the gradient pushing
    /// outward are decoupled from the metric and frozen, otherwise the
    /// preconditioned step need not descend after projection.
    fn precondition(&self, metric: &Matrix4<f64>, p: &Vector4<f64>, g: &Vector4<f64>) -> (Matrix4<f64>, Vector4<f64>) {
        let (lo, hi) = self.bounds();
        let active: [bool; 4] = std::array::from_fn(|i| (p[i] <= lo[i] && g[i] > 0.0) || (p[i] >= hi[i] && g[i] < 0.0));
        let mut h = *metric;
        let mut g = *g;
        for i in (0..4).filter(|&i| active[i]) {
            let d = h[(i, i)].abs().max(f64::MIN_POSITIVE);
            h.row_mut(i).fill(0.0);
            h.column_mut(i).fill(0.0);
            h[(i, i)] = d;
            g[i] = 0.0;
        }
        let l = whitening(&h);
        let gz = l.solve_lower_triangular(&g).unwrap_or_else(Vector4::zeros);
        (l, gz)
    }

    /// Mean ν²-normalised loss and gradient over the given observations.
    fn batch(&self, p: &Vector4<f64>, idx: &[usize]) -> Result<(f64, Vector4<f64>)> {
        let (io, dio) = self.model.iota(&Vec3::new(p[0], p[1], p[2]), p[3])?;
        let mut loss = 0.0;
        let mut g = Vector4::zeros();
        for &i in idx {
            let (l, gi) = loss_grad(&io, &dio, &self.obs[i], self.p0);
            loss += l;
            g += Vector4::from(gi);
        }
        let k = idx.len() as f64 * self.noise_var;
        Ok((loss / k, g / k))
    }
}

/// Minimise the mean concentrated loss over `obs` from `(init_pos, init_eta)`,
/// projecting the position into the room and η into `[0, η̄]` every step.
#[allow(clippy::too_many_arguments)]
pub fn sgd_estimate(
    model: &LocModel,
    obs: &[Vec<C>],
    init_pos: &Vec3,
    init_eta: f64,
    p0: f64,
    noise_var: f64,
    eta_bar: f64,
    hyper: &Hyper,
) -> Result<Estimate> {
    if obs.is_empty() {
        return Err(Error::Empty("observations"));
    }
    if let Some(o) = obs.iter().find(|o| o.len() != model.m()) {
        return Err(Error::Shape(format!("observation has {} entries, M = {}", o.len(), model.m())));
    }
    if !(noise_var > 0.0 && p0 > 0.0 && eta_bar > 0.0) {
        return Err(Error::Domain("P0, ν² and η̄ must be positive".into()));
    }
    let prob = Problem { model, obs, p0, noise_var, eta_bar };
    let start = prob.project(Vector4::new(init_pos.x, init_pos.y, init_pos.z, init_eta));

    let n = obs.len();
    let b = hyper.effective_batch(n);
    let steps_per_epoch = n.div_ceil(b);
    let total = (hyper.epochs * steps_per_epoch).max(1);
    let mut rng = rng::stream(hyper.seed, "locest-order", 0);
    let mut order: Vec<usize> = (0..n).collect();
    let (b1, b2) = hyper.adam_betas;
    let (mut m1, mut m2) = (Vector4::zeros(), Vector4::zeros());

    let mut p = start;
    let (loss0, _) = prob.batch(&start, &order)?;
    let mut best = (loss0, start);
    let mut curve = Vec::with_capacity(hyper.epochs);
    let mut converged = false;
    let mut step = 0usize;
    for _ in 0..hyper.epochs {
        if b < n {
            order.shuffle(&mut rng);
        }
        // Metric from the free-space path amplitudes at the current iterate,
        // refreshed each epoch; amplitudes fitted to the data shrink when the
        // iterate is off and would make the steps too long.
        let metric = metric_at(&prob, &p)?;
        for chunk in order.chunks(b) {
            let (_, g) = prob.batch(&p, chunk)?;
            let (l, gz) = prob.precondition(&metric, &p, &g);
            let lr = match hyper.algorithm {
                Algorithm::MinibatchSgd => hyper.lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos()),
                _ => hyper.lr,
            };
            let dir = match hyper.algorithm {
                Algorithm::Adam => {
                    let t = (step + 1) as i32;
                    m1 = m1 * b1 + gz * (1.0 - b1);
                    m2 = m2 * b2 + gz.component_mul(&gz) * (1.0 - b2);
                    let mh = m1 / (1.0 - b1.powi(t));
                    let vh = m2 / (1.0 - b2.powi(t));
                    mh.zip_map(&vh, |a, v| a / (v.sqrt() + 1e-8))
                }
                _ => gz,
            };
            let dp = l.transpose().solve_upper_triangular(&(dir * lr)).unwrap_or_else(Vector4::zeros);
            p = prob.project(p - dp);
            step += 1;
        }
        let (loss, g) = prob.batch(&p, &order)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("localisation loss became {loss}")));
        }
        curve.push(loss);
        if loss < best.0 {
            best = (loss, p);
        }
        if prob.precondition(&metric_at(&prob, &p)?, &p, &g).1.norm() < hyper.grad_tol {
            converged = true;
            break;
        }
    }
    let (loss, p) = best;
    Ok(Estimate {
        pos: Vec3::new(p[0], p[1], p[2]),
        eta: p[3],
        loss,
        accepted: p[3] < eta_bar,
        converged,
        loss_curve: curve,
    })
}

/// Starting point inside the bound box around the truth. The offset on
/// `(x, y, h, η)` is Gaussian with the CRLB covariance for `n_obs`
/// snapshots, the error of an efficient coarse fix, then clipped to ±PEB
/// per position coordinate and ±the η bound, and projected into the room.
#[allow(clippy::too_many_arguments)]
pub fn init_from_peb(
    model: &LocModel,
    pos: &Vec3,
    eta: f64,
    p0: f64,
    noise_var: f64,
    n_obs: usize,
    eta_bar: f64,
    rng: &mut Rng,
) -> Result<(Vec3, f64)> {
    let f = crlb::fisher_info(model, pos, eta, p0, noise_var / n_obs.max(1) as f64)?;
    let d = nalgebra::DMatrix::from_iterator(8, 8, f.j_position.iter().copied());
    let (inv, _) = crlb::regularised_inverse(&d);
    const IDX: [usize; 4] = [0, 1, 2, 7];
    let cov = Matrix4::from_fn(|a, b| inv[(IDX[a], IDX[b])]);
    let l = whitening(&cov);
    let z = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    let off = l * z;
    let bound = Vector4::new(f.peb, f.peb, f.peb, cov[(3, 3)].max(0.0).sqrt());
    let off = off.zip_map(&bound, |o, b| o.clamp(-b, b));
    let p = Vec3::new(pos.x + off[0], pos.y + off[1], pos.z + off[2]);
    Ok((model.cfg.project_into_room(&p), (eta + off[3]).clamp(0.0, eta_bar)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RmseRow {
    pub algorithm: Algorithm,
    pub snr_db: f64,
    pub eta_bar: f64,
    /// Mean over trials of the per-trial position error norm.
    pub rmse_m: f64,
    pub stderr: f64,
    pub mean_loss: f64,
}

/// One Monte-Carlo trial: truth, observations and starting point.
struct Trial {
    pos: Vec3,
    obs: Vec<Vec<C>>,
    init_pos: Vec3,
    /// Starting η before clamping to a particular η̄.
    init_eta: f64,
}

fn draw_trial(model: &LocModel, cfg: &ScenarioConfig, p0: f64, noise: f64, n: usize, seed: u64, idx: u64) -> Result<Trial> {
    let mut r = rng::stream(seed, "locest-trial", idx);
    let pos = Vec3::new(
        (r.random::<f64>() - 0.5) * cfg.room_x,
        (r.random::<f64>() - 0.5) * cfg.room_y,
        cfg.user_h,
    );
    let eta = r.random::<f64>() * cfg.clock_offset_max;
    let obs = simulate_observations(model, &pos, eta, p0, noise, n, &mut r)?;
    // Draw the η jitter independently of η̄ so sweeps share random numbers.
    let (init_pos, e) = init_from_peb(model, &pos, eta, p0, noise, 1, f64::INFINITY, &mut r)?;
    Ok(Trial { pos, obs, init_pos, init_eta: e })
}

/// Mean position error per (algorithm, SNR, η̄) over `trials` Monte-Carlo
/// trials. Trials use common random numbers across algorithms, η̄ and SNR
/// (the noise draws are the same standard normals, rescaled).
pub fn rmse_curve(
    cfg: &ScenarioConfig,
    snr_list_db: &[f64],
    algorithms: &[Algorithm],
    eta_bars: &[f64],
    trials: usize,
    hyper: &Hyper,
    seed: u64,
) -> Result<Vec<RmseRow>> {
    if trials == 0 {
        return Err(Error::Empty("trials"));
    }
    let model = LocModel::standard(cfg)?;
    let p0 = cfg.loc_p0;
    let mut rows = Vec::new();
    for &snr in snr_list_db {
        let noise = model.noise_var(p0, snr);
        let draws: Vec<Trial> = (0..trials as u64)
            .into_par_iter()
            .map(|t| draw_trial(&model, cfg, p0, noise, hyper.train_size, seed, t))
            .collect::<Result<_>>()?;
        for &eta_bar in eta_bars {
            for &alg in algorithms {
                let h = hyper.with_algorithm(alg);
                let res: Vec<(f64, f64)> = draws
                    .par_iter()
                    .enumerate()
                    .map(|(t, tr)| {
                        let h = Hyper { seed: hyper.seed.wrapping_add(t as u64), ..h.clone() };
                        let init_eta = tr.init_eta.clamp(0.0, eta_bar);
                        let est = sgd_estimate(&model, &tr.obs, &tr.init_pos, init_eta, p0, noise, eta_bar, &h)?;
                        Ok(((est.pos - tr.pos).norm(), est.loss))
                    })
                    .collect::<Result<_>>()?;
                let n = res.len() as f64;
                let mean = res.iter().map(|r| r.0).sum::<f64>() / n;
                let var = if res.len() > 1 {
                    res.iter().map(|r| (r.0 - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                rows.push(RmseRow {
                    algorithm: alg,
                    snr_db: snr,
                    eta_bar,
                    rmse_m: mean,
                    stderr: (var / n).sqrt(),
                    mean_loss: res.iter().map(|r| r.1).sum::<f64>() / n,
                });
            }
        }
    }
    Ok(rows)
}
