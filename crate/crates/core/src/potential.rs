//! The lattice potential kernel `a` of ℤ², normalized so that `Δa = δ₀` with
//! `Δf(x) = Σ_{y~x} [f(y) − f(x)]`, and the constants governing its growth.
//!
//! For `x ≠ 0`,
//!
//! ```text
//! a(x) = 1/(4π²) ∫∫_{(0,π)²} (1 − cos(k₁x₁) cos(k₂x₂)) / (sin²(k₁/2) + sin²(k₂/2)) dk
//! ```
//!
//! and `a(x) = g log|x| + c₀ + O(|x|⁻²)` with `g = 1/(2π)` and `c₀ = (2γ + log 8)/(4π)`.

use crate::lattice::Site;
use crate::quadrature::GaussLegendre;
use rayon::prelude::*;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{OnceLock, RwLock};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_860_61;

/// `g = 1/(2π)`.
pub const G: f64 = 0.5 * std::f64::consts::FRAC_1_PI;

/// `c₀ = (2γ + log 8)/(4π) ≈ 0.257343`.
pub fn c0() -> f64 {
    (2.0 * EULER_GAMMA + 8f64.ln()) / (4.0 * PI)
}

/// `g log|x| + c₀`.
pub fn asymptotic(x: Site) -> f64 {
    let r = f64::from(x.x).hypot(f64::from(x.y));
    G * r.ln() + c0()
}

const RULE_POINTS: usize = 64;
const BASE_PANELS: usize = 8;
const MAX_PANELS: usize = 32;
const CORNER_LEVELS: usize = 30;
const REFINE_TOL: f64 = 1e-11;
pub const DEFAULT_CUTOFF: f64 = 64.0;

/// Tensor rule on one rectangle with `W_ij = w_i w_j / den(k₁_i, k₂_j)` precomputed.
struct Panel {
    k1: Vec<f64>,
    k2: Vec<f64>,
    weights: Vec<f64>,
    row_sums: Vec<f64>,
}

impl Panel {
    fn new(rule: &GaussLegendre, a1: f64, b1: f64, a2: f64, b2: f64) -> Self {
        let (k1, w1): (Vec<f64>, Vec<f64>) = rule.mapped(a1, b1).unzip();
        let (k2, w2): (Vec<f64>, Vec<f64>) = rule.mapped(a2, b2).unzip();
        let s2: Vec<f64> = k2.iter().map(|k| (0.5 * k).sin().powi(2)).collect();
        let mut weights = Vec::with_capacity(k1.len() * k2.len());
        let mut row_sums = Vec::with_capacity(k1.len());
        for (i, &ki) in k1.iter().enumerate() {
            let s1 = (0.5 * ki).sin().powi(2);
            let mut row = 0.0;
            for j in 0..k2.len() {
                let w = w1[i] * w2[j] / (s1 + s2[j]);
                row += w;
                weights.push(w);
            }
            row_sums.push(row);
        }
        Panel {
            k1,
            k2,
            weights,
            row_sums,
        }
    }

    fn integrate(&self, x1: f64, x2: f64, c2: &mut Vec<f64>) -> f64 {
        c2.clear();
        c2.extend(self.k2.iter().map(|k| (k * x2).cos()));
        let m = self.k2.len();
        let mut total = 0.0;
        for (i, &ki) in self.k1.iter().enumerate() {
            let row = &self.weights[i * m..(i + 1) * m];
            let dot: f64 = row.iter().zip(c2.iter()).map(|(w, c)| w * c).sum();
            total += self.row_sums[i] - (ki * x1).cos() * dot;
        }
        total
    }
}

/// Panels covering (0,π)² on a `p × p` grid; the corner cell is split geometrically
/// toward the origin, where the denominator vanishes.
fn build_panels(p: usize, rule: &GaussLegendre) -> Vec<Panel> {
    let h = PI / p as f64;
    let mut panels = Vec::new();
    for i in 0..p {
        for j in 0..p {
            if i == 0 && j == 0 {
                continue;
            }
            let (a1, a2) = (i as f64 * h, j as f64 * h);
            panels.push(Panel::new(rule, a1, a1 + h, a2, a2 + h));
        }
    }
    let mut s = h;
    for _ in 0..CORNER_LEVELS {
        let m = 0.5 * s;
        panels.push(Panel::new(rule, m, s, 0.0, m));
        panels.push(Panel::new(rule, 0.0, m, m, s));
        panels.push(Panel::new(rule, m, s, m, s));
        s = m;
    }
    panels
}

fn canonical(x: Site) -> (i32, i32) {
    let (a, b) = (x.x.abs(), x.y.abs());
    if a >= b {
        (a, b)
    } else {
        (b, a)
    }
}

pub struct PotentialKernel {
    cutoff_radius: f64,
    cache: RwLock<HashMap<(i32, i32), f64>>,
    grids: Vec<OnceLock<Vec<Panel>>>,
    rule: GaussLegendre,
}

impl Default for PotentialKernel {
    fn default() -> Self {
        Self::new()
    }
}

impl PotentialKernel {
    pub fn new() -> Self {
        Self::with_cutoff(DEFAULT_CUTOFF)
    }

    pub fn with_cutoff(cutoff_radius: f64) -> Self {
        let levels = (MAX_PANELS / BASE_PANELS).trailing_zeros() as usize + 1;
        PotentialKernel {
            cutoff_radius,
            cache: RwLock::new(HashMap::new()),
            grids: (0..levels).map(|_| OnceLock::new()).collect(),
            rule: GaussLegendre::new(RULE_POINTS),
        }
    }

    pub fn cutoff_radius(&self) -> f64 {
        self.cutoff_radius
    }

    pub fn g(&self) -> f64 {
        G
    }

    pub fn c0(&self) -> f64 {
        c0()
    }

    fn grid(&self, level: usize) -> &[Panel] {
        self.grids[level].get_or_init(|| build_panels(BASE_PANELS << level, &self.rule))
    }

    fn integrate_on(&self, level: usize, x1: f64, x2: f64) -> f64 {
        let mut scratch = Vec::with_capacity(RULE_POINTS);
        let total: f64 = self
            .grid(level)
            .iter()
            .map(|p| p.integrate(x1, x2, &mut scratch))
            .sum();
        total / (4.0 * PI * PI)
    }

    /// Quadrature value regardless of the cutoff, refined until two successive
    /// panel grids agree to `1e-11`.
    pub fn eval_quadrature(&self, x: Site) -> f64 {
        let key = canonical(x);
        if key == (0, 0) {
            return 0.0;
        }
        if let Some(&v) = self.cache.read().expect("cache lock").get(&key) {
            return v;
        }
        let (x1, x2) = (f64::from(key.0), f64::from(key.1));
        let mut coarse = self.integrate_on(0, x1, x2);
        let mut value = coarse;
        for level in 1..self.grids.len() {
            value = self.integrate_on(level, x1, x2);
            if (value - coarse).abs() < REFINE_TOL {
                break;
            }
            coarse = value;
        }
        self.cache.write().expect("cache lock").insert(key, value);
        value
    }

    /// `a(x)`: quadrature inside the cutoff radius, `g log|x| + c₀` beyond it.
    pub fn eval(&self, x: Site) -> f64 {
        let r = f64::from(x.x).hypot(f64::from(x.y));
        if r > self.cutoff_radius {
            asymptotic(x)
        } else {
            self.eval_quadrature(x)
        }
    }

    /// Fills the cache for all given points in parallel.
    pub fn precompute(&self, points: &[Site]) {
        let mut keys: Vec<(i32, i32)> = points
            .iter()
            .filter(|p| f64::from(p.x).hypot(f64::from(p.y)) <= self.cutoff_radius)
            .map(|&p| canonical(p))
            .collect();
        keys.sort_unstable();
        keys.dedup();
        {
            let cache = self.cache.read().expect("cache lock");
            keys.retain(|k| !cache.contains_key(k));
        }
        // force panel construction before fanning out
        self.grid(0);
        keys.par_iter().for_each(|&(a, b)| {
            self.eval_quadrature(Site::new(a, b));
        });
    }

    /// `max_{|x|_∞ ≤ R} |Δa(x) − δ₀(x)|`.
    pub fn check_harmonicity(&self, window_radius: i32) -> f64 {
        let r = window_radius.max(1);
        let mut pts = Vec::new();
        for x in -(r + 1)..=(r + 1) {
            for y in -(r + 1)..=(r + 1) {
                pts.push(Site::new(x, y));
            }
        }
        self.precompute(&pts);
        let mut worst: f64 = 0.0;
        for x in -r..=r {
            for y in -r..=r {
                let s = Site::new(x, y);
                let centre = self.eval(s);
                let lap: f64 = (0..4).map(|d| self.eval(s.step(d)) - centre).sum();
                let delta = if x == 0 && y == 0 { 1.0 } else { 0.0 };
                worst = worst.max((lap - delta).abs());
            }
        }
        worst
    }

    pub fn cached_len(&self) -> usize {
        self.cache.read().expect("cache lock").len()
    }
}
