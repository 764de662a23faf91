//! Fisher information and position error bounds.
//!
//! The noise covariance does not depend on the parameters, so the
//! Slepian-Bangs formula reduces to its mean term:
//! `J_ab = (2/ν²) Σ_m Re{conj(∂h̃_m/∂q̄_a) ∂h̃_m/∂q̄_b}`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::channel::loc::Matrix8;
use crate::channel::{ChannelParams, LocModel};
use crate::error::{Error, Result};
use crate::scenario::{ScenarioConfig, Vec3};

#[derive(Clone, Debug)]
pub struct FisherInfo {
    pub j_channel: Matrix8,
    pub j_position: Matrix8,
    pub peb: f64,
    /// Set when the position FIM needed regularising before inversion.
    pub degenerate: bool,
}

/// FIM from precomputed signal derivatives.
pub fn fim_from_derivatives(d: &[Vec<Complex64>; 8], noise_var: f64) -> Result<Matrix8> {
    if !(noise_var > 0.0) {
        return Err(Error::Domain(format!("noise variance {noise_var} must be > 0")));
    }
    let mut j = Matrix8::zeros();
    for a in 0..8 {
        for b in a..8 {
            let s: f64 = d[a].iter().zip(&d[b]).map(|(x, y)| (x.conj() * y).re).sum();
            j[(a, b)] = 2.0 * s / noise_var;
            j[(b, a)] = j[(a, b)];
        }
    }
    Ok(j)
}

/// Channel-domain FIM at `q` for pilot power `p0` and noise variance ν².
pub fn fim_channel(model: &LocModel, q: &ChannelParams, p0: f64, noise_var: f64) -> Result<Matrix8> {
    fim_from_derivatives(&model.signal_derivatives(q, p0), noise_var)
}

/// `J_pos = T J Tᵀ`, symmetrised.
pub fn fim_position(j_channel: &Matrix8, jacobian: &Matrix8) -> Matrix8 {
    let m = jacobian * j_channel * jacobian.transpose();
    (m + m.transpose()) * 0.5
}

/// Inverse of a symmetric PSD matrix. The matrix is first equilibrated by
/// its diagonal (the parameters mix seconds, metres and radians), then
/// eigenvalues below `1e−12·trace/n` are floored. Returns the inverse and
/// whether flooring was needed.
pub fn regularised_inverse(j: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let n = j.nrows();
    let scale: Vec<f64> = (0..n)
        .map(|i| {
            let d = j[(i, i)];
            if d > 0.0 && d.is_finite() {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let s = DMatrix::from_fn(n, n, |a, b| j[(a, b)] * scale[a] * scale[b]);
    let floor = 1e-12 * s.trace() / n as f64;
    let eig = SymmetricEigen::new(s.clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let (inv_s, degenerate) = match s.clone().cholesky() {
        Some(ch) if min > floor => (ch.inverse(), false),
        _ => {
            let lam = eig.eigenvalues.map(|l| 1.0 / l.max(floor.max(f64::MIN_POSITIVE)));
            let v = &eig.eigenvectors;
            (v * DMatrix::from_diagonal(&lam) * v.transpose(), true)
        }
    };
    (DMatrix::from_fn(n, n, |a, b| inv_s[(a, b)] * scale[a] * scale[b]), degenerate)
}

/// `sqrt(tr([J⁻¹]_{1:3,1:3}))` and the degeneracy flag.
pub fn peb(j_position: &Matrix8) -> (f64, bool) {
    let d = DMatrix::from_iterator(8, 8, j_position.iter().copied());
    let (inv, flag) = regularised_inverse(&d);
    let tr = inv[(0, 0)] + inv[(1, 1)] + inv[(2, 2)];
    (tr.max(0.0).sqrt(), flag)
}

/// Full FIM chain for a user at `pos` with clock offset `eta`.
pub fn fisher_info(model: &LocModel, pos: &Vec3, eta: f64, p0: f64, noise_var: f64) -> Result<FisherInfo> {
    let qh = model.position_params(pos, eta)?;
    let q = model.channel_params(&qh)?;
    let j_channel = fim_channel(model, &q, p0, noise_var)?;
    let t = model.jacobian(&qh)?;
    let j_position = fim_position(&j_channel, &t);
    let (p, degenerate) = peb(&j_position);
    Ok(FisherInfo { j_channel, j_position, peb: p, degenerate })
}

/// PEB over a square grid at user height.
#[derive(Clone, Debug)]
pub struct Heatmap {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major by y then x: `peb[iy * xs.len() + ix]`. Cells on singular
    /// geometry hold `f64::INFINITY`.
    pub peb: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl Heatmap {
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.peb[iy * self.xs.len() + ix]
    }

    /// `(ix, iy)` of the smallest finite bound.
    pub fn argmin(&self) -> Option<(usize, usize)> {
        let nx = self.xs.len();
        self.peb
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| (i % nx, i / nx))
    }
}

/// Cell centres `−L/2 + (i + ½)·g` covering `[−L/2, L/2]`.
pub fn grid_centres(len: f64, grid_len: f64) -> Vec<f64> {
    let n = (len / grid_len).round().max(1.0) as usize;
    (0..n).map(|i| -len / 2.0 + (i as f64 + 0.5) * grid_len).collect()
}

/// PEB per grid cell with zero clock offset, pilot power `loc_p0` and the
/// noise level that gives `snr_db` at the reference distance.
pub fn peb_heatmap(cfg: &ScenarioConfig, grid_len: f64, snr_db: f64) -> Result<Heatmap> {
    cfg.validate()?;
    if !(grid_len > 0.0) {
        return Err(Error::Config("grid_len must be positive".into()));
    }
    let model = LocModel::standard(cfg)?;
    let noise = model.noise_var(cfg.loc_p0, snr_db);
    let xs = grid_centres(cfg.room_x, grid_len);
    let ys = grid_centres(cfg.room_y, grid_len);
    let cells: Vec<(f64, bool)> = ys
        .par_iter()
        .flat_map_iter(|&y| {
            let model = &model;
            xs.iter().map(move |&x| {
                match fisher_info(model, &Vec3::new(x, y, cfg.user_h), 0.0, cfg.loc_p0, noise) {
                    Ok(f) => (f.peb, f.degenerate),
                    Err(_) => (f64::INFINITY, true),
                }
            })
        })
        .collect();
    let (peb, degenerate) = cells.into_iter().unzip();
    Ok(Heatmap { xs, ys, peb, degenerate })
}
