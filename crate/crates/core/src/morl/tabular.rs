//! Finite multi-objective MDP with a preference-indexed vector Q table.
//!
//! The backup is
//! `𝒟Q(s, a, w) = r(s, a) + γ Σ_{s'} p(s'|s, a) 𝒢Q(s', w)` where the filter
//! `𝒢Q(s', w)` returns `Q(s', a*, w*) − log π(a*|s')·1` at the action and
//! grid preference maximising `wᵀQ(s', a, w') − log π(a|s')`. The entropy
//! bonus comes from a fixed behaviour policy `π`.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use super::Preference;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct TabularMoMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `p[(s·A + a)·S + s']`.
    pub kernel: Vec<f64>,
    /// `r[s·A + a]`.
    pub reward: Vec<[f64; 2]>,
    /// `π(a|s)` at `[s·A + a]`, strictly positive.
    pub policy: Vec<f64>,
    pub gamma: f64,
}

/// Vector Q values over states × actions × a preference grid.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub grid: Vec<Preference>,
    /// `q[(s·A + a)·W + i]`.
    pub q: Vec<[f64; 2]>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize, grid: Vec<Preference>) -> Self {
        let n = n_states * n_actions * grid.len();
        Self { n_states, n_actions, grid, q: vec![[0.0; 2]; n] }
    }

    pub fn random(n_states: usize, n_actions: usize, grid: Vec<Preference>, scale: f64, rng: &mut Rng) -> Self {
        let mut t = Self::zeros(n_states, n_actions, grid);
        for v in &mut t.q {
            *v = [scale * (2.0 * rng.random::<f64>() - 1.0), scale * (2.0 * rng.random::<f64>() - 1.0)];
        }
        t
    }

    pub fn at(&self, s: usize, a: usize, i: usize) -> [f64; 2] {
        self.q[(s * self.n_actions + a) * self.grid.len() + i]
    }

    fn same_shape(&self, o: &QTable) -> Result<()> {
        if self.n_states != o.n_states || self.n_actions != o.n_actions || self.grid != o.grid {
            return Err(Error::Shape("Q tables over different spaces".into()));
        }
        Ok(())
    }
}

/// `sup_{s,a,w} |wᵀ(Q(s,a,w) − Q̂(s,a,w))|`, scalarising each entry by the
/// preference it is indexed by.
pub fn d_bar(q: &QTable, qh: &QTable) -> Result<f64> {
    q.same_shape(qh)?;
    let nw = q.grid.len();
    Ok(q.q
        .iter()
        .zip(&qh.q)
        .enumerate()
        .map(|(k, (a, b))| {
            let w = q.grid[k % nw];
            (w.w[0] * (a[0] - b[0]) + w.w[1] * (a[1] - b[1])).abs()
        })
        .fold(0.0, f64::max))
}

/// `d̄_w(Q, Q̂) = sup_{s,a,w'} |wᵀ(Q(s,a,w') − Q̂(s,a,w'))|` for a fixed
/// scalarising preference `w`, with the table preference `w'` free.
pub fn d_bar_w(q: &QTable, qh: &QTable, w: &Preference) -> Result<f64> {
    q.same_shape(qh)?;
    Ok(q.q
        .iter()
        .zip(&qh.q)
        .map(|(a, b)| (w.w[0] * (a[0] - b[0]) + w.w[1] * (a[1] - b[1])).abs())
        .fold(0.0, f64::max))
}

/// `max_w sup_w' |wᵀ(Q − Q̂)|`; over the two-objective simplex this is the
/// max-norm of the entry differences.
pub fn d_bar_cross(q: &QTable, qh: &QTable) -> Result<f64> {
    q.same_shape(qh)?;
    Ok(q.q
        .iter()
        .zip(&qh.q)
        .map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs()))
        .fold(0.0, f64::max))
}

impl TabularMoMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        kernel: Vec<f64>,
        reward: Vec<[f64; 2]>,
        policy: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Empty("state or action set"));
        }
        let sa = n_states * n_actions;
        if kernel.len() != sa * n_states || reward.len() != sa || policy.len() != sa {
            return Err(Error::Shape("kernel, reward or policy size".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Domain(format!("γ₀ = {gamma} outside [0, 1)")));
        }
        for row in kernel.chunks(n_states) {
            if row.iter().any(|p| !(*p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::Domain("kernel row is not a distribution".into()));
            }
        }
        for row in policy.chunks(n_actions) {
            if row.iter().any(|p| !(*p > 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::Domain("policy row is not a positive distribution".into()));
            }
        }
        if reward.iter().flatten().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("reward table".into()));
        }
        Ok(Self { n_states, n_actions, kernel, reward, policy, gamma })
    }

    /// Random instance: kernel rows and (optionally) the policy from
    /// normalised uniforms, rewards uniform in `[−1, 1]²`.
    pub fn random(n_states: usize, n_actions: usize, gamma: f64, uniform_policy: bool, rng: &mut Rng) -> Result<Self> {
        let dist = |n: usize, rng: &mut Rng| {
            let v: Vec<f64> = (0..n).map(|_| 0.05 + rng.random::<f64>()).collect();
            let s: f64 = v.iter().sum();
            let mut v: Vec<f64> = v.iter().map(|x| x / s).collect();
            // Absorb rounding so the row sums to one exactly enough.
            let rest: f64 = v[..n - 1].iter().sum();
            v[n - 1] = 1.0 - rest;
            v
        };
        let sa = n_states * n_actions;
        let kernel: Vec<f64> = (0..sa).flat_map(|_| dist(n_states, rng)).collect();
        let reward = (0..sa)
            .map(|_| [2.0 * rng.random::<f64>() - 1.0, 2.0 * rng.random::<f64>() - 1.0])
            .collect();
        let policy = if uniform_policy {
            vec![1.0 / n_actions as f64; sa]
        } else {
            (0..n_states).flat_map(|_| dist(n_actions, rng)).collect()
        };
        Self::new(n_states, n_actions, kernel, reward, policy, gamma)
    }

    fn p(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.kernel[(s * self.n_actions + a) * self.n_states + s2]
    }

    fn log_pi(&self, s: usize, a: usize) -> f64 {
        self.policy[s * self.n_actions + a].ln()
    }

    /// `𝒢Q(s, w)` for grid preference `w`.
    pub fn filter(&self, q: &QTable, s: usize, w: &Preference) -> [f64; 2] {
        let mut best = f64::NEG_INFINITY;
        let mut arg = [0.0; 2];
        for a in 0..self.n_actions {
            let h = self.log_pi(s, a);
            for i in 0..q.grid.len() {
                let v = q.at(s, a, i);
                let score = w.scalarise(&v) - h;
                if score > best {
                    best = score;
                    arg = [v[0] - h, v[1] - h];
                }
            }
        }
        arg
    }

    /// One synchronous application of the backup to every entry.
    pub fn apply(&self, q: &QTable) -> Result<QTable> {
        if q.n_states != self.n_states || q.n_actions != self.n_actions || q.grid.is_empty() {
            return Err(Error::Shape("Q table does not match the MDP".into()));
        }
        let nw = q.grid.len();
        let mut g = vec![[0.0; 2]; self.n_states * nw];
        for s in 0..self.n_states {
            for (i, w) in q.grid.iter().enumerate() {
                g[s * nw + i] = self.filter(q, s, w);
            }
        }
        let mut out = QTable::zeros(self.n_states, self.n_actions, q.grid.clone());
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let r = self.reward[s * self.n_actions + a];
                for i in 0..nw {
                    let mut v = r;
                    for s2 in 0..self.n_states {
                        let p = self.p(s, a, s2) * self.gamma;
                        v[0] += p * g[s2 * nw + i][0];
                        v[1] += p * g[s2 * nw + i][1];
                    }
                    out.q[(s * self.n_actions + a) * nw + i] = v;
                }
            }
        }
        Ok(out)
    }

    /// Iterate from `q0` until successive tables are within `tol` in
    /// [`d_bar`]; returns the last table and the number of applications.
    pub fn iterate(&self, q0: &QTable, tol: f64, max_iter: usize) -> Result<(QTable, usize, bool)> {
        let mut q = q0.clone();
        for t in 1..=max_iter {
            let next = self.apply(&q)?;
            let d = d_bar(&q, &next)?;
            q = next;
            if d < tol {
                return Ok((q, t, true));
            }
        }
        Ok((q, max_iter, false))
    }

    /// Largest `sup_{s,a} |wᵀ(𝒟Q − 𝒟Q̂)(s,a,w)| − γ·d̄_w(Q, Q̂)` over the
    /// grid preferences `w`; the backup for preference `w` filters with `w`,
    /// so the bound holds with the table preference free on the right.
    pub fn lipschitz_margin(&self, q: &QTable, qh: &QTable) -> Result<f64> {
        let (a, b) = (self.apply(q)?, self.apply(qh)?);
        let nw = q.grid.len();
        let mut worst = f64::NEG_INFINITY;
        for (i, w) in q.grid.iter().enumerate() {
            let mut lhs: f64 = 0.0;
            for sa in 0..self.n_states * self.n_actions {
                let (x, y) = (a.q[sa * nw + i], b.q[sa * nw + i]);
                lhs = lhs.max((w.w[0] * (x[0] - y[0]) + w.w[1] * (x[1] - y[1])).abs());
            }
            worst = worst.max(lhs - self.gamma * d_bar_w(q, qh, w)?);
        }
        Ok(worst)
    }

    /// Optimal scalarised values `q*(s, a)` for a fixed preference by
    /// evaluating every deterministic stationary policy exactly.
    pub fn scalarised_optimum(&self, w: &Preference) -> Result<Vec<f64>> {
        let (ns, na) = (self.n_states, self.n_actions);
        let n_pol = na.checked_pow(ns as u32).filter(|n| *n <= 1 << 16).ok_or(Error::Domain("too many policies to enumerate".into()))?;
        let mut best = vec![f64::NEG_INFINITY; ns * na];
        for code in 0..n_pol {
            let sigma: Vec<usize> = (0..ns).map(|s| (code / na.pow(s as u32)) % na).collect();
            // v(s) = wᵀr(s,σ) − log π(σ|s) + γ Σ p(s'|s,σ) v(s').
            let mut m = DMatrix::<f64>::identity(ns, ns);
            let mut c = DVector::<f64>::zeros(ns);
            for s in 0..ns {
                let a = sigma[s];
                c[s] = w.scalarise(&self.reward[s * na + a]) - self.log_pi(s, a);
                for s2 in 0..ns {
                    m[(s, s2)] -= self.gamma * self.p(s, a, s2);
                }
            }
            let v = m.lu().solve(&c).ok_or(Error::Domain("singular policy evaluation".into()))?;
            for s in 0..ns {
                for a in 0..na {
                    let mut q = w.scalarise(&self.reward[s * na + a]);
                    for s2 in 0..ns {
                        q += self.gamma * self.p(s, a, s2) * v[s2];
                    }
                    best[s * na + a] = best[s * na + a].max(q);
                }
            }
        }
        Ok(best)
    }
}
