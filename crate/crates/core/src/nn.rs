//! Dense feed-forward networks with hand-derived reverse-mode gradients.
//!
//! Weights are stored per layer as `out × in` matrices. A forward pass can
//! record a [`ForwardCache`]; [`Mlp::backward`] consumes it together with an
//! upstream gradient and returns the parameter gradients in a [`GradTape`]
//! plus the gradient with respect to the input.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative given the pre-activation `x` and the output `y`.
    fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Relu => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Relu),
            _ => Err(Error::Snapshot(format!("unknown activation tag {t}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub act: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Inputs and outputs of every layer from one forward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache {
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    acts: Vec<DVector<f64>>,
    pre: Vec<DVector<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Per-parameter gradients, shaped like the network.
#[derive(Clone, Debug, PartialEq)]
pub struct GradTape {
    pub dw: Vec<DMatrix<f64>>,
    pub db: Vec<DVector<f64>>,
}

impl GradTape {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            dw: mlp.layers.iter().map(|l| DMatrix::zeros(l.w.nrows(), l.w.ncols())).collect(),
            db: mlp.layers.iter().map(|l| DVector::zeros(l.b.len())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradTape) {
        for (a, b) in self.dw.iter_mut().zip(&other.dw) {
            *a += b;
        }
        for (a, b) in self.db.iter_mut().zip(&other.db) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.dw.iter_mut().for_each(|m| *m *= s);
        self.db.iter_mut().for_each(|v| *v *= s);
    }

    /// Parameters in the same order as [`Mlp::params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.dw.iter().zip(&self.db) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }

    pub fn from_flat(like: &Mlp, flat: &[f64]) -> Result<Self> {
        let mut t = GradTape::zeros_like(like);
        if flat.len() != like.n_params() {
            return Err(Error::Shape(format!("{} gradient entries for {} parameters", flat.len(), like.n_params())));
        }
        let mut i = 0;
        for (w, b) in t.dw.iter_mut().zip(t.db.iter_mut()) {
            let n = w.len();
            w.as_mut_slice().copy_from_slice(&flat[i..i + n]);
            i += n;
            let n = b.len();
            b.as_mut_slice().copy_from_slice(&flat[i..i + n]);
            i += n;
        }
        Ok(t)
    }

    pub fn max_abs(&self) -> f64 {
        self.flat().iter().fold(0.0, |m, g| m.max(g.abs()))
    }

    fn check_finite(&self) -> Result<()> {
        for (l, (w, b)) in self.dw.iter().zip(&self.db).enumerate() {
            if let Some(i) = w.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("layers[{l}].w[{},{}]", i % w.nrows(), i / w.nrows())));
            }
            if let Some(i) = b.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("layers[{l}].b[{i}]")));
            }
        }
        Ok(())
    }
}

const MAGIC: &[u8; 4] = b"XMLP";
const VERSION: u32 = 1;

impl Mlp {
    /// Widths `[in, h1, …, out]`; hidden layers use `hidden`, the last
    /// layer `output`. Weights and biases uniform in ±1/√fan_in.
    pub fn new(widths: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Result<Self> {
        let mut mlp = Self::zeros(widths, hidden, output)?;
        for l in &mut mlp.layers {
            let r = 1.0 / (l.w.ncols() as f64).sqrt();
            l.w.iter_mut().for_each(|x| *x = rng.random_range(-r..r));
            l.b.iter_mut().for_each(|x| *x = rng.random_range(-r..r));
        }
        Ok(mlp)
    }

    pub fn zeros(widths: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Shape(format!("need at least two positive widths, got {widths:?}")));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| Layer {
                w: DMatrix::zeros(widths[i + 1], widths[i]),
                b: DVector::zeros(widths[i + 1]),
                act: if i + 1 == n { output } else { hidden },
            })
            .collect();
        Ok(Self { layers })
    }

    /// Single linear layer computing the identity map on `n` inputs.
    pub fn identity(n: usize) -> Result<Self> {
        let mut m = Self::zeros(&[n, n], Activation::Identity, Activation::Identity)?;
        m.layers[0].w = DMatrix::identity(n, n);
        Ok(m)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].w.ncols()];
        w.extend(self.layers.iter().map(|l| l.w.nrows()));
        w
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map(|l| l.w.nrows()).unwrap_or(0)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.acts.pop().unwrap_or_default().as_slice().to_vec())
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.n_inputs() {
            return Err(Error::Shape(format!("input has {} entries, network expects {}", x.len(), self.n_inputs())));
        }
        let mut cache = ForwardCache { acts: vec![DVector::from_column_slice(x)], pre: Vec::new() };
        for l in &self.layers {
            let z = &l.w * cache.acts.last().unwrap() + &l.b;
            let a = z.map(|v| l.act.apply(v));
            cache.pre.push(z);
            cache.acts.push(a);
        }
        Ok(cache)
    }

    /// Gradient of `upstream · output` with respect to every parameter and
    /// to the input.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<(GradTape, Vec<f64>)> {
        if cache.pre.is_empty() {
            return Err(Error::NoForward);
        }
        if cache.pre.len() != self.layers.len()
            || cache.pre.iter().zip(&self.layers).any(|(p, l)| p.len() != l.b.len())
            || cache.acts[0].len() != self.n_inputs()
        {
            return Err(Error::Shape("forward cache does not match this network".into()));
        }
        if upstream.len() != self.n_outputs() {
            return Err(Error::Shape(format!("upstream has {} entries, network outputs {}", upstream.len(), self.n_outputs())));
        }
        let mut tape = GradTape::zeros_like(self);
        let mut delta = DVector::from_column_slice(upstream);
        for (i, l) in self.layers.iter().enumerate().rev() {
            let dz = delta.zip_zip_map(&cache.pre[i], &cache.acts[i + 1], |d, x, y| d * l.act.deriv(x, y));
            tape.dw[i] = &dz * cache.acts[i].transpose();
            tape.db[i] = dz.clone();
            delta = l.w.tr_mul(&dz);
        }
        Ok((tape, delta.as_slice().to_vec()))
    }

    /// All parameters, layer by layer: weights column-major, then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.w.as_slice());
            out.extend_from_slice(l.b.as_slice());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape(format!("{} values for {} parameters", flat.len(), self.n_params())));
        }
        let mut i = 0;
        for l in &mut self.layers {
            let n = l.w.len();
            l.w.as_mut_slice().copy_from_slice(&flat[i..i + n]);
            i += n;
            let n = l.b.len();
            l.b.as_mut_slice().copy_from_slice(&flat[i..i + n]);
            i += n;
        }
        Ok(())
    }

    /// `self ← τ·other + (1 − τ)·self`.
    pub fn soft_update(&mut self, other: &Mlp, tau: f64) -> Result<()> {
        if self.widths() != other.widths() {
            return Err(Error::Shape("soft update between different architectures".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w = &b.w * tau + &a.w * (1.0 - tau);
            a.b = &b.b * tau + &a.b * (1.0 - tau);
        }
        Ok(())
    }

    /// Little-endian snapshot: magic, version, layer count, widths,
    /// activation tags, then every parameter as `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let widths = self.widths();
        let mut out = Vec::with_capacity(16 + 8 * (widths.len() + self.n_params()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for w in widths {
            out.extend_from_slice(&(w as u64).to_le_bytes());
        }
        out.extend(self.layers.iter().map(|l| l.act.tag()));
        for p in self.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader { buf: bytes, pos: 0 };
        if rd.take(4)? != MAGIC {
            return Err(Error::Snapshot("bad magic".into()));
        }
        let version = u32::from_le_bytes(rd.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Snapshot(format!("unsupported version {version}")));
        }
        let n = u32::from_le_bytes(rd.take(4)?.try_into().unwrap()) as usize;
        if n == 0 || n > 1024 {
            return Err(Error::Snapshot(format!("implausible layer count {n}")));
        }
        let widths: Vec<usize> = (0..=n)
            .map(|_| rd.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()) as usize))
            .collect::<Result<_>>()?;
        let acts: Vec<Activation> = rd.take(n)?.iter().map(|&t| Activation::from_tag(t)).collect::<Result<_>>()?;
        let mut mlp = Self::zeros(&widths, Activation::Identity, Activation::Identity)?;
        for (l, a) in mlp.layers.iter_mut().zip(acts) {
            l.act = a;
        }
        let params: Vec<f64> = (0..mlp.n_params())
            .map(|_| rd.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())))
            .collect::<Result<_>>()?;
        if rd.pos != bytes.len() {
            return Err(Error::Snapshot(format!("{} trailing bytes", bytes.len() - rd.pos)));
        }
        mlp.set_params(&params)?;
        Ok(mlp)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Snapshot("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

/// Plain gradient descent: `θ ← θ − lr·g`.
pub fn sgd_step(mlp: &mut Mlp, tape: &GradTape, lr: f64) -> Result<()> {
    tape.check_finite()?;
    for (l, (dw, db)) in mlp.layers.iter_mut().zip(tape.dw.iter().zip(&tape.db)) {
        l.w -= dw * lr;
        l.b -= db * lr;
    }
    Ok(())
}

/// Adam optimiser state for one network.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(mlp: &Mlp) -> Self {
        let n = mlp.n_params();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, mlp: &mut Mlp, tape: &GradTape, lr: f64) -> Result<()> {
        tape.check_finite()?;
        let g = tape.flat();
        if g.len() != self.m.len() {
            return Err(Error::Shape("optimiser state does not match the network".into()));
        }
        self.t += 1;
        let (c1, c2) = (1.0 - self.beta1.powi(self.t), 1.0 - self.beta2.powi(self.t));
        let mut p = mlp.params();
        for i in 0..p.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            p[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
        mlp.set_params(&p)
    }
}
