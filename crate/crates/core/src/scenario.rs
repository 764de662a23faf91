//! Static geometry, run configuration and CBS-to-user pairing.
//!
//! Coordinates are metres with the origin at the centre of the floor, so the
//! room spans `[-room_x/2, room_x/2] × [-room_y/2, room_y/2] × [0, ceiling_h]`.

use std::fmt::Write as _;

use nalgebra::Vector3;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

pub type Vec3 = Vector3<f64>;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub room_x: f64,
    pub room_y: f64,
    pub ceiling_h: f64,
    pub user_h: f64,
    pub lbs_pos: Vec3,
    /// Unit vector along the LBS uniform linear array.
    pub lbs_axis: Vec3,
    pub ris_pos: Vec3,
    /// Unit vector along the RIS element line.
    pub ris_axis: Vec3,
    pub cbs_pos: Vec<Vec3>,
    pub n_antennas: usize,
    pub b: usize,
    pub k_b: usize,
    pub u: usize,
    pub m_subcarriers: usize,
    pub lambda_c: f64,
    pub f_thz: f64,
    pub bandwidth_mm: f64,
    pub bandwidth_thz: f64,
    /// Element spacing of both arrays.
    pub spacing: f64,
    pub p_max: f64,
    /// Lower clip for the transmit power state; keeps `P > 0`.
    pub p_min: f64,
    pub eps_max: f64,
    pub noise_dbm: f64,
    pub t_slots: usize,
    pub slot_len: f64,
    pub c_meta: f64,
    pub f_p: f64,
    pub f_eps: f64,
    pub s_bits: f64,
    pub m_block: usize,
    pub eta_bar: f64,
    /// True clock offsets are drawn uniformly from `[0, clock_offset_max)`.
    pub clock_offset_max: f64,
    pub grid_len: f64,
    /// Molecular absorption coefficient V(f) in 1/m.
    pub absorption: f64,
    /// Side-lobe to main-lobe power ratio δ for both THz ends.
    pub delta_gain: f64,
    pub beamwidth_h: f64,
    pub beamwidth_v: f64,
    /// Localisation SNR in dB, referenced to the LOS free-space modulus at
    /// `snr_ref_dist`.
    pub snr_db: f64,
    pub snr_ref_dist: f64,
    pub loc_p0: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let lambda_c = 5e-3;
        Self {
            room_x: 10.0,
            room_y: 10.0,
            ceiling_h: 6.0,
            user_h: 1.7,
            lbs_pos: Vec3::new(-5.0, -2.5, 2.0),
            lbs_axis: Vec3::new(0.0, 1.0, 0.0),
            ris_pos: Vec3::new(0.0, 0.0, 6.0),
            ris_axis: Vec3::new(1.0, 0.0, 0.0),
            cbs_pos: vec![
                Vec3::new(-2.5, -5.0, 2.5),
                Vec3::new(5.0, -2.5, 2.5),
                Vec3::new(2.5, 5.0, 2.5),
                Vec3::new(-5.0, 2.5, 2.5),
            ],
            n_antennas: 8,
            b: 4,
            k_b: 32,
            u: 4,
            m_subcarriers: 64,
            lambda_c,
            f_thz: 0.2e12,
            bandwidth_mm: 400e6,
            bandwidth_thz: 1e9,
            spacing: lambda_c / 2.0,
            p_max: 0.2,
            p_min: 0.002,
            eps_max: 1e-5,
            noise_dbm: -110.0,
            t_slots: 10,
            slot_len: 2e-3,
            c_meta: 150.0,
            f_p: 1.0,
            f_eps: 1e5,
            s_bits: 1e6,
            m_block: 128,
            eta_bar: 2e-9,
            clock_offset_max: 2e-9,
            grid_len: 0.05,
            absorption: 0.0033,
            delta_gain: 0.0,
            beamwidth_h: std::f64::consts::FRAC_PI_3,
            beamwidth_v: std::f64::consts::FRAC_PI_3,
            snr_db: 5.0,
            snr_ref_dist: 10.0,
            loc_p0: 0.1,
            seed: 1,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("{key}: expected a number, got `{v}`")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse::<usize>()
        .map_err(|_| Error::Config(format!("{key}: expected a count, got `{v}`")))
}

fn parse_vec3(key: &str, v: &str) -> Result<Vec3> {
    let parts: Vec<&str> = v.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("{key}: expected `x, y, z`, got `{v}`")));
    }
    Ok(Vec3::new(
        parse_f64(key, parts[0])?,
        parse_f64(key, parts[1])?,
        parse_f64(key, parts[2])?,
    ))
}

fn fmt_vec3(v: &Vec3) -> String {
    format!("{}, {}, {}", v.x, v.y, v.z)
}

impl ScenarioConfig {
    /// Total RIS element count K = B·K_b.
    pub fn k_total(&self) -> usize {
        self.b * self.k_b
    }

    pub fn noise_power(&self) -> f64 {
        10f64.powf((self.noise_dbm - 30.0) / 10.0)
    }

    pub fn lambda_thz(&self) -> f64 {
        SPEED_OF_LIGHT / self.f_thz
    }

    pub fn inside_room(&self, p: &Vec3) -> bool {
        let tol = 1e-9;
        p.x.abs() <= self.room_x / 2.0 + tol
            && p.y.abs() <= self.room_y / 2.0 + tol
            && p.z >= -tol
            && p.z <= self.ceiling_h + tol
    }

    /// Clamp a point into the room box.
    pub fn project_into_room(&self, p: &Vec3) -> Vec3 {
        Vec3::new(
            p.x.clamp(-self.room_x / 2.0, self.room_x / 2.0),
            p.y.clamp(-self.room_y / 2.0, self.room_y / 2.0),
            p.z.clamp(0.0, self.ceiling_h),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.u > self.b {
            return bad("U ≤ B violated: each CBS serves at most one user");
        }
        if self.u == 0 || self.b == 0 || self.k_b == 0 {
            return bad("U, B and K_b must be positive");
        }
        if self.cbs_pos.len() != self.b {
            return Err(Error::Config(format!(
                "cbs_pos lists {} positions but B = {}",
                self.cbs_pos.len(),
                self.b
            )));
        }
        if !(self.ceiling_h > self.user_h) || self.user_h <= 0.0 {
            return bad("ceiling_h > user_h > 0 violated");
        }
        if !(self.room_x > 0.0 && self.room_y > 0.0) {
            return bad("room dimensions must be positive");
        }
        for (name, p) in [("lbs_pos", &self.lbs_pos), ("ris_pos", &self.ris_pos)] {
            if !self.inside_room(p) {
                return Err(Error::Config(format!("{name} lies outside the room box")));
            }
        }
        for (i, p) in self.cbs_pos.iter().enumerate() {
            if !self.inside_room(p) {
                return Err(Error::Config(format!("cbs_pos[{i}] lies outside the room box")));
            }
        }
        for (name, a) in [("lbs_axis", &self.lbs_axis), ("ris_axis", &self.ris_axis)] {
            if (a.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("{name} must be a unit vector")));
            }
        }
        if !(self.p_max > 0.0) {
            return bad("P_max > 0 violated");
        }
        if !(self.p_min > 0.0 && self.p_min < self.p_max) {
            return bad("0 < p_min < P_max violated");
        }
        if !(self.eps_max > 0.0 && self.eps_max < 1.0) {
            return bad("0 < eps_max < 1 violated");
        }
        if self.m_block < 1 {
            return bad("m_block ≥ 1 violated");
        }
        if self.n_antennas == 0 || self.m_subcarriers == 0 || self.t_slots == 0 {
            return bad("N, M and T must be positive");
        }
        for (name, v) in [
            ("lambda_c", self.lambda_c),
            ("f_thz", self.f_thz),
            ("bandwidth_mm", self.bandwidth_mm),
            ("bandwidth_thz", self.bandwidth_thz),
            ("spacing", self.spacing),
            ("slot_len", self.slot_len),
            ("s_bits", self.s_bits),
            ("eta_bar", self.eta_bar),
            ("grid_len", self.grid_len),
            ("snr_ref_dist", self.snr_ref_dist),
            ("loc_p0", self.loc_p0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite")));
            }
        }
        if self.clock_offset_max < 0.0 || self.absorption < 0.0 || self.delta_gain < 0.0 {
            return bad("clock_offset_max, absorption and delta_gain must be nonnegative");
        }
        Ok(())
    }

    /// Set one field from its `key = value` text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = key.trim();
        match k {
            "room_x" => self.room_x = parse_f64(k, value)?,
            "room_y" => self.room_y = parse_f64(k, value)?,
            "ceiling_h" => self.ceiling_h = parse_f64(k, value)?,
            "user_h" => self.user_h = parse_f64(k, value)?,
            "lbs_pos" => self.lbs_pos = parse_vec3(k, value)?,
            "lbs_axis" => self.lbs_axis = parse_vec3(k, value)?,
            "ris_pos" => self.ris_pos = parse_vec3(k, value)?,
            "ris_axis" => self.ris_axis = parse_vec3(k, value)?,
            "cbs_pos" => {
                self.cbs_pos = value
                    .split(';')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_vec3(k, s))
                    .collect::<Result<_>>()?
            }
            "N" => self.n_antennas = parse_usize(k, value)?,
            "B" => self.b = parse_usize(k, value)?,
            "K_b" => self.k_b = parse_usize(k, value)?,
            "U" => self.u = parse_usize(k, value)?,
            "M" => self.m_subcarriers = parse_usize(k, value)?,
            "lambda_c" => self.lambda_c = parse_f64(k, value)?,
            "f_thz" => self.f_thz = parse_f64(k, value)?,
            "bandwidth_mm" => self.bandwidth_mm = parse_f64(k, value)?,
            "bandwidth_thz" => self.bandwidth_thz = parse_f64(k, value)?,
            "spacing" => self.spacing = parse_f64(k, value)?,
            "P_max" => self.p_max = parse_f64(k, value)?,
            "p_min" => self.p_min = parse_f64(k, value)?,
            "eps_max" => self.eps_max = parse_f64(k, value)?,
            "noise_dbm" => self.noise_dbm = parse_f64(k, value)?,
            "T" => self.t_slots = parse_usize(k, value)?,
            "slot_len" => self.slot_len = parse_f64(k, value)?,
            "C_meta" => self.c_meta = parse_f64(k, value)?,
            "f_P" => self.f_p = parse_f64(k, value)?,
            "f_eps" => self.f_eps = parse_f64(k, value)?,
            "S_bits" => self.s_bits = parse_f64(k, value)?,
            "m_block" => self.m_block = parse_usize(k, value)?,
            "eta_bar" => self.eta_bar = parse_f64(k, value)?,
            "clock_offset_max" => self.clock_offset_max = parse_f64(k, value)?,
            "grid_len" => self.grid_len = parse_f64(k, value)?,
            "absorption" => self.absorption = parse_f64(k, value)?,
            "delta_gain" => self.delta_gain = parse_f64(k, value)?,
            "beamwidth_h" => self.beamwidth_h = parse_f64(k, value)?,
            "beamwidth_v" => self.beamwidth_v = parse_f64(k, value)?,
            "snr_db" => self.snr_db = parse_f64(k, value)?,
            "snr_ref_dist" => self.snr_ref_dist = parse_f64(k, value)?,
            "loc_p0" => self.loc_p0 = parse_f64(k, value)?,
            "seed" => {
                self.seed = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("seed: expected an integer, got `{value}`")))?
            }
            _ => return Err(Error::Config(format!("unknown key `{k}`"))),
        }
        Ok(())
    }

    pub fn knows(key: &str) -> bool {
        let mut probe = Self::default();
        !matches!(probe.set(key, "x"), Err(Error::Config(m)) if m.starts_with("unknown key"))
    }

    /// Parse `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Canonical text form; `parse(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("room_x", self.room_x.to_string());
        put("room_y", self.room_y.to_string());
        put("ceiling_h", self.ceiling_h.to_string());
        put("user_h", self.user_h.to_string());
        put("lbs_pos", fmt_vec3(&self.lbs_pos));
        put("lbs_axis", fmt_vec3(&self.lbs_axis));
        put("ris_pos", fmt_vec3(&self.ris_pos));
        put("ris_axis", fmt_vec3(&self.ris_axis));
        put(
            "cbs_pos",
            self.cbs_pos.iter().map(fmt_vec3).collect::<Vec<_>>().join("; "),
        );
        put("N", self.n_antennas.to_string());
        put("B", self.b.to_string());
        put("K_b", self.k_b.to_string());
        put("U", self.u.to_string());
        put("M", self.m_subcarriers.to_string());
        put("lambda_c", self.lambda_c.to_string());
        put("f_thz", self.f_thz.to_string());
        put("bandwidth_mm", self.bandwidth_mm.to_string());
        put("bandwidth_thz", self.bandwidth_thz.to_string());
        put("spacing", self.spacing.to_string());
        put("P_max", self.p_max.to_string());
        put("p_min", self.p_min.to_string());
        put("eps_max", self.eps_max.to_string());
        put("noise_dbm", self.noise_dbm.to_string());
        put("T", self.t_slots.to_string());
        put("slot_len", self.slot_len.to_string());
        put("C_meta", self.c_meta.to_string());
        put("f_P", self.f_p.to_string());
        put("f_eps", self.f_eps.to_string());
        put("S_bits", self.s_bits.to_string());
        put("m_block", self.m_block.to_string());
        put("eta_bar", self.eta_bar.to_string());
        put("clock_offset_max", self.clock_offset_max.to_string());
        put("grid_len", self.grid_len.to_string());
        put("absorption", self.absorption.to_string());
        put("delta_gain", self.delta_gain.to_string());
        put("beamwidth_h", self.beamwidth_h.to_string());
        put("beamwidth_v", self.beamwidth_v.to_string());
        put("snr_db", self.snr_db.to_string());
        put("snr_ref_dist", self.snr_ref_dist.to_string());
        put("loc_p0", self.loc_p0.to_string());
        put("seed", self.seed.to_string());
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserState {
    pub true_pos: Vec3,
    /// Position estimate from the localisation stage; equals `true_pos`
    /// until an estimator overwrites it.
    pub est_pos: Vec3,
    pub clock_offset: f64,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub users: Vec<UserState>,
    pub seed: u64,
}

impl Scenario {
    pub fn est_positions(&self) -> Vec<Vec3> {
        self.users.iter().map(|u| u.est_pos).collect()
    }
}

/// Draw a user placement uniformly over the floor area at `user_h`.
pub fn make_scenario(config: ScenarioConfig, rng_seed: u64) -> Result<Scenario> {
    config.validate()?;
    let mut r = rng::stream(rng_seed, "placement", 0);
    let users = (0..config.u)
        .map(|_| {
            let p = Vec3::new(
                (r.random::<f64>() - 0.5) * config.room_x,
                (r.random::<f64>() - 0.5) * config.room_y,
                config.user_h,
            );
            UserState {
                true_pos: p,
                est_pos: p,
                clock_offset: r.random::<f64>() * config.clock_offset_max,
            }
        })
        .collect();
    Ok(Scenario { config, users, seed: rng_seed })
}

/// Binary B×U pairing `s_{b,u}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairingMatrix {
    b: usize,
    u: usize,
    s: Vec<u8>,
}

impl PairingMatrix {
    pub fn from_assignment(b: usize, user_to_cbs: &[usize]) -> Self {
        let u = user_to_cbs.len();
        let mut s = vec![0u8; b * u];
        for (ui, &bi) in user_to_cbs.iter().enumerate() {
            s[bi * u + ui] = 1;
        }
        Self { b, u, s }
    }

    pub fn n_cbs(&self) -> usize {
        self.b
    }

    pub fn n_users(&self) -> usize {
        self.u
    }

    pub fn get(&self, b: usize, u: usize) -> u8 {
        self.s[b * self.u + u]
    }

    pub fn cbs_of(&self, u: usize) -> Option<usize> {
        (0..self.b).find(|&b| self.get(b, u) == 1)
    }

    /// Rows sum to at most one, columns to exactly one.
    pub fn is_valid(&self) -> bool {
        let rows_ok = (0..self.b).all(|b| (0..self.u).map(|u| self.get(b, u) as usize).sum::<usize>() <= 1);
        let cols_ok = (0..self.u).all(|u| (0..self.b).map(|b| self.get(b, u) as usize).sum::<usize>() == 1);
        rows_ok && cols_ok
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        (0..self.b).map(|b| (0..self.u).map(|u| self.get(b, u)).collect()).collect()
    }
}

/// Total CBS-user distance of an assignment `user -> cbs`.
pub fn assignment_cost(cbs_pos: &[Vec3], est_pos: &[Vec3], user_to_cbs: &[usize]) -> f64 {
    user_to_cbs
        .iter()
        .enumerate()
        .map(|(u, &b)| (cbs_pos[b] - est_pos[u]).norm())
        .sum()
}

/// Minimum-total-distance one-to-one pairing.
///
/// Exhaustive over injections for small instances, so ties resolve to the
/// lexicographically smallest assignment; Hungarian beyond that.
pub fn pair_users(cbs_pos: &[Vec3], est_pos: &[Vec3]) -> Result<PairingMatrix> {
    if cbs_pos.is_empty() {
        return Err(Error::Empty("cbs_pos"));
    }
    if est_pos.is_empty() {
        return Err(Error::Empty("est_pos"));
    }
    let (b, u) = (cbs_pos.len(), est_pos.len());
    if u > b {
        return Err(Error::Config("U ≤ B violated".into()));
    }
    let cost: Vec<Vec<f64>> = est_pos
        .iter()
        .map(|p| cbs_pos.iter().map(|c| (c - p).norm()).collect())
        .collect();
    let assign = if u <= 6 && b <= 8 {
        exhaustive_assignment(&cost, b)
    } else {
        hungarian(&cost, b)
    };
    Ok(PairingMatrix::from_assignment(b, &assign))
}

fn exhaustive_assignment(cost: &[Vec<f64>], b: usize) -> Vec<usize> {
    let u = cost.len();
    let mut best = (f64::INFINITY, Vec::new());
    let mut cur = Vec::with_capacity(u);
    let mut used = vec![false; b];
    fn rec(
        cost: &[Vec<f64>],
        used: &mut [bool],
        cur: &mut Vec<usize>,
        acc: f64,
        best: &mut (f64, Vec<usize>),
    ) {
        let ui = cur.len();
        if ui == cost.len() {
            // Strict improvement keeps the first (lexicographically smallest) tie.
            if acc < best.0 - 1e-12 {
                *best = (acc, cur.clone());
            }
            return;
        }
        for bi in 0..used.len() {
            if !used[bi] {
                used[bi] = true;
                cur.push(bi);
                rec(cost, used, cur, acc + cost[ui][bi], best);
                cur.pop();
                used[bi] = false;
            }
        }
    }
    rec(cost, &mut used, &mut cur, 0.0, &mut best);
    let _ = u;
    best.1
}

/// Rectangular Hungarian algorithm (rows = users ≤ columns = CBSs).
fn hungarian(cost: &[Vec<f64>], b: usize) -> Vec<usize> {
    let n = cost.len();
    let m = b;
    let inf = f64::INFINITY;
    let mut uu = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - uu[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    uu[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn permutations(n: usize, k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n, k - 1) {
            for x in 0..n {
                if !p.contains(&x) {
                    let mut q = p.clone();
                    q.push(x);
                    out.push(q);
                }
            }
        }
        out
    }

    #[test]
    fn default_scenario_places_users_at_height() {
        let s = make_scenario(ScenarioConfig::default(), 3).unwrap();
        assert_eq!(s.users.len(), 4);
        for u in &s.users {
            assert_eq!(u.true_pos.z, 1.7);
            assert!(s.config.inside_room(&u.true_pos));
            assert!(u.clock_offset < s.config.eta_bar);
        }
    }

    #[test]
    fn placement_is_deterministic() {
        let a = make_scenario(ScenarioConfig::default(), 11).unwrap();
        let b = make_scenario(ScenarioConfig::default(), 11).unwrap();
        assert_eq!(a.users, b.users);
        let c = make_scenario(ScenarioConfig::default(), 12).unwrap();
        assert_ne!(a.users, c.users);
    }

    #[test]
    fn more_users_than_cbs_is_rejected() {
        let cfg = ScenarioConfig { u: 5, ..Default::default() };
        let err = make_scenario(cfg, 0).unwrap_err();
        assert!(err.to_string().contains("U ≤ B"), "{err}");
    }

    #[test]
    fn config_text_round_trips() {
        let mut cfg = ScenarioConfig::default();
        cfg.set("P_max", "0.1").unwrap();
        cfg.set("cbs_pos", "1,2,2.5; 3,4,2.5; -1,-1,2.5; 0,4,2.5").unwrap();
        let back = ScenarioConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(cfg, back);
        assert!(ScenarioConfig::parse("nonsense = 1").is_err());
        assert!(ScenarioConfig::parse("P_max 1").is_err());
        assert!(ScenarioConfig::knows("K_b"));
        assert!(!ScenarioConfig::knows("K_c"));
    }

    #[test]
    fn validation_names_the_invariant() {
        let cfg = ScenarioConfig { user_h: 7.0, ..Default::default() };
        assert!(cfg.validate().unwrap_err().to_string().contains("ceiling_h"));
        let cfg = ScenarioConfig { eps_max: 1.0, ..Default::default() };
        assert!(cfg.validate().unwrap_err().to_string().contains("eps_max"));
        let cfg = ScenarioConfig { lbs_pos: Vec3::new(9.0, 0.0, 2.0), ..Default::default() };
        assert!(cfg.validate().unwrap_err().to_string().contains("lbs_pos"));
    }

    #[test]
    fn unambiguous_pairing_is_identity() {
        let cbs = [Vec3::new(0.0, 0.0, 2.5), Vec3::new(10.0, 0.0, 2.5)];
        let users = [Vec3::new(1.0, 0.0, 1.7), Vec3::new(9.0, 0.0, 1.7)];
        let s = pair_users(&cbs, &users).unwrap();
        assert_eq!(s.rows(), vec![vec![1, 0], vec![0, 1]]);
    }

    #[test]
    fn single_pair() {
        let s = pair_users(&[Vec3::zeros()], &[Vec3::new(1.0, 1.0, 1.0)]).unwrap();
        assert_eq!(s.rows(), vec![vec![1]]);
        assert!(pair_users(&[], &[Vec3::zeros()]).is_err());
        assert!(pair_users(&[Vec3::zeros()], &[]).is_err());
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let cbs = [Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)];
        let users = [Vec3::zeros(), Vec3::zeros()];
        let s = pair_users(&cbs, &users).unwrap();
        assert_eq!(s.cbs_of(0), Some(0));
        assert_eq!(s.cbs_of(1), Some(1));
    }

    #[test]
    fn hungarian_matches_exhaustive_on_larger_instances() {
        let mut r = rng::seeded(5);
        for _ in 0..50 {
            let n = 7;
            let cbs: Vec<Vec3> = (0..n).map(|_| Vec3::new(r.random(), r.random(), r.random())).collect();
            let users: Vec<Vec3> = (0..n).map(|_| Vec3::new(r.random(), r.random(), r.random())).collect();
            let cost: Vec<Vec<f64>> = users.iter().map(|p| cbs.iter().map(|c| (c - p).norm()).collect()).collect();
            let h = hungarian(&cost, n);
            let e = exhaustive_assignment(&cost, n);
            let ch = assignment_cost(&cbs, &users, &h);
            let ce = assignment_cost(&cbs, &users, &e);
            assert!((ch - ce).abs() < 1e-9, "{ch} vs {ce}");
        }
    }

    fn arb_points(n: usize) -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
        prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, 0.0..6.0f64), n)
    }

    proptest! {
        #[test]
        fn pairing_is_optimal_and_valid(
            b in 1usize..=6,
            extra in 0usize..=6,
            seed in any::<u64>(),
        ) {
            let u = b.min(1 + extra % b.max(1));
            let mut r = rng::seeded(seed);
            let cbs: Vec<Vec3> = (0..b).map(|_| Vec3::new(r.random(), r.random(), r.random())).collect();
            let users: Vec<Vec3> = (0..u).map(|_| Vec3::new(r.random(), r.random(), r.random())).collect();
            let s = pair_users(&cbs, &users).unwrap();
            prop_assert!(s.is_valid());
            let assign: Vec<usize> = (0..u).map(|ui| s.cbs_of(ui).unwrap()).collect();
            let c = assignment_cost(&cbs, &users, &assign);
            for p in permutations(b, u) {
                prop_assert!(c <= assignment_cost(&cbs, &users, &p) + 1e-12);
            }
        }

        #[test]
        fn four_by_four_matches_brute_force(pts in arb_points(8)) {
            let cbs: Vec<Vec3> = pts[..4].iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let users: Vec<Vec3> = pts[4..].iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let s = pair_users(&cbs, &users).unwrap();
            let assign: Vec<usize> = (0..4).map(|ui| s.cbs_of(ui).unwrap()).collect();
            let best = permutations(4, 4)
                .iter()
                .map(|p| assignment_cost(&cbs, &users, p))
                .fold(f64::INFINITY, f64::min);
            prop_assert!((assignment_cost(&cbs, &users, &assign) - best).abs() < 1e-12);
        }
    }
}
