//! Non-dominated filtering, 2-D hypervolume and the served-user
//! reliability count.
//!
//! Both objectives are minimised: `cost` is the total service cost and
//! `latency` the worst-user transmission latency.

use crate::error::{Error, Result};

/// One outcome and the decisions that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct ParetoPoint {
    pub cost: f64,
    pub latency: f64,
    pub record: Decision,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Decision {
    pub w1: f64,
    /// Transmit power per slot.
    pub power: Vec<f64>,
    /// Final per-sub-surface phase offsets.
    pub theta: Vec<f64>,
    pub eps: f64,
}

impl ParetoPoint {
    pub fn new(cost: f64, latency: f64) -> Self {
        Self { cost, latency, record: Decision::default() }
    }

    pub fn objectives(&self) -> [f64; 2] {
        [self.cost, self.latency]
    }
}

/// `a` is no worse in both objectives and strictly better in one.
pub fn dominates(a: &ParetoPoint, b: &ParetoPoint) -> bool {
    let (x, y) = (a.objectives(), b.objectives());
    x[0] <= y[0] && x[1] <= y[1] && (x[0] < y[0] || x[1] < y[1])
}

/// Points not dominated by any other, in input order. Exact duplicates do
/// not dominate each other, so all copies survive.
pub fn pareto_filter(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    if points.len() < 2 {
        return points.to_vec();
    }
    // Sweep in (cost, latency) order keeping the running best latency; a
    // point survives if no earlier point in the sweep beats it.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&points[i], &points[j]);
        a.cost.total_cmp(&b.cost).then(a.latency.total_cmp(&b.latency))
    });
    let mut keep = vec![false; points.len()];
    let mut best = f64::INFINITY;
    let mut k = 0;
    while k < order.len() {
        // Group equal costs: only the group's lowest latency can survive.
        let cost = points[order[k]].cost;
        let lo = points[order[k]].latency;
        let mut end = k;
        while end < order.len() && points[order[end]].cost == cost {
            end += 1;
        }
        if lo < best {
            for &i in &order[k..end] {
                if points[i].latency == lo {
                    keep[i] = true;
                }
            }
            best = lo;
        }
        k = end;
    }
    points.iter().zip(&keep).filter(|(_, k)| **k).map(|(p, _)| p.clone()).collect()
}

/// Area dominated by `front` and bounded by `reference`. Points on the
/// reference boundary add nothing; points beyond it are an error.
pub fn hypervolume(front: &[ParetoPoint], reference: [f64; 2]) -> Result<f64> {
    if let Some(p) = front.iter().find(|p| !(p.cost <= reference[0] && p.latency <= reference[1])) {
        return Err(Error::Domain(format!(
            "point ({}, {}) lies beyond the reference ({}, {})",
            p.cost, p.latency, reference[0], reference[1]
        )));
    }
    let mut f = pareto_filter(front);
    f.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    f.dedup_by(|a, b| a.objectives() == b.objectives());
    let mut area = 0.0;
    for (i, p) in f.iter().enumerate() {
        let right = f.get(i + 1).map_or(reference[0], |q| q.cost);
        area += (right - p.cost) * (reference[1] - p.latency);
    }
    Ok(area)
}

/// Served-user counts over a `U × T` pass-flag matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ReliabilityRecord {
    /// Smoothed flags `υ_{u,t} = 𝒦_{u,t} ∨ 𝒦_{u,t−1}`, with `𝒦_{u,0} = 0`.
    pub upsilon: Vec<Vec<bool>>,
    /// Rising edges of `υ` summed over users and slots.
    pub xi: usize,
    /// Users with at least one passing slot.
    pub distinct: usize,
}

pub fn reliability(flags: &[Vec<bool>]) -> ReliabilityRecord {
    let mut xi = 0;
    let mut distinct = 0;
    let upsilon: Vec<Vec<bool>> = flags
        .iter()
        .map(|row| {
            let ups: Vec<bool> = (0..row.len()).map(|t| row[t] || (t > 0 && row[t - 1])).collect();
            let mut prev = false;
            for &v in &ups {
                if v && !prev {
                    xi += 1;
                }
                prev = v;
            }
            if row.iter().any(|&k| k) {
                distinct += 1;
            }
            ups
        })
        .collect();
    ReliabilityRecord { upsilon, xi, distinct }
}

/// Per-slot, per-user latencies of one operating point (`[t][u]`).
pub type LatencyTrace = Vec<Vec<f64>>;

/// Reliability of one `(K, Δt)` cell: the best `Ξ` over a front's traces.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub k: usize,
    pub dt: f64,
    pub xi: usize,
    pub distinct: usize,
}

/// `traces_by_k[i]` holds one latency trace per front point for `ks[i]`.
pub fn reliability_sweep(ks: &[usize], traces_by_k: &[Vec<LatencyTrace>], dts: &[f64]) -> Result<Vec<SweepCell>> {
    if ks.len() != traces_by_k.len() {
        return Err(Error::Shape(format!("{} element counts for {} trace sets", ks.len(), traces_by_k.len())));
    }
    let mut out = Vec::with_capacity(ks.len() * dts.len());
    for (&k, traces) in ks.iter().zip(traces_by_k) {
        for &dt in dts {
            let (mut xi, mut distinct) = (0, 0);
            for tr in traces {
                let rec = reliability(&flags_of(tr, dt));
                xi = xi.max(rec.xi);
                distinct = distinct.max(rec.distinct);
            }
            out.push(SweepCell { k, dt, xi, distinct });
        }
    }
    Ok(out)
}

/// Transpose a `[t][u]` latency trace into `[u][t]` pass flags.
pub fn flags_of(trace: &LatencyTrace, dt: f64) -> Vec<Vec<bool>> {
    let users = trace.first().map_or(0, Vec::len);
    (0..users).map(|u| trace.iter().map(|slot| slot[u] <= dt).collect()).collect()
}
