//! The Dirichlet Green function `G = A⁻¹` of a wired domain, the discrete harmonic
//! measure, and the continuum quantities they converge to.

use crate::error::{Error, Result};
use crate::export::{num, Table};
use crate::lattice::{discretize, BoundarySlot, ContinuumDomain, Site, WiredDomain};
use crate::potential::{PotentialKernel, G};
use crate::sparse::{conjugate_gradient, Factorization};
use rayon::prelude::*;
use std::sync::OnceLock;

const CG_TOL: f64 = 1e-14;

/// Factorized Laplacian of a wired domain answering exact Green-function queries.
#[derive(Debug)]
pub struct GreenOperator {
    domain: WiredDomain,
    factor: Factorization,
    diagonal: OnceLock<Vec<f64>>,
}

/// Factors the Laplacian of `domain` once.
pub fn solve_green(domain: &WiredDomain) -> Result<GreenOperator> {
    GreenOperator::with_factorization(domain, Factorization::new(domain)?)
}

impl GreenOperator {
    pub fn with_factorization(domain: &WiredDomain, factor: Factorization) -> Result<Self> {
        if factor.len() != domain.len() {
            return Err(Error::InvariantViolation("factor size differs from domain size".into()));
        }
        Ok(GreenOperator {
            domain: domain.clone(),
            factor,
            diagonal: OnceLock::new(),
        })
    }

    pub fn domain(&self) -> &WiredDomain {
        &self.domain
    }

    pub fn factorization(&self) -> &Factorization {
        &self.factor
    }

    pub fn len(&self) -> usize {
        self.domain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domain.is_empty()
    }

    /// `G(·, z)`.
    pub fn column(&self, z: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.len()];
        e[z] = 1.0;
        self.factor.solve(&e)
    }

    pub fn entry(&self, x: usize, y: usize) -> f64 {
        self.column(y)[x]
    }

    /// `G f`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.factor.solve(f)
    }

    /// `G(x, x)` for every site, computed once.
    pub fn diagonal(&self) -> &[f64] {
        self.diagonal.get_or_init(|| self.factor.inverse_diagonal())
    }

    pub fn diag(&self, x: usize) -> f64 {
        self.diagonal()[x]
    }

    /// Exit distribution from `x` over [`WiredDomain::boundary_slots`]:
    /// leaving through the edge `(s, z)` has probability `G(x, s)`.
    pub fn exit_distribution(&self, x: usize) -> Vec<f64> {
        let col = self.column(x);
        self.domain
            .boundary_slots()
            .iter()
            .map(|s| col[s.site as usize])
            .collect()
    }

    /// CSV `ix,iy,Gxx`.
    pub fn diagonal_table(&self) -> Table {
        let mut t = Table::new(&["ix", "iy", "Gxx"]);
        for (i, s) in self.domain.sites().iter().enumerate() {
            t.push(vec![s.x.to_string(), s.y.to_string(), num(self.diag(i))]);
        }
        t
    }
}

/// Exit distributions `H(x, ·)` for a list of sources.
#[derive(Clone, Debug)]
pub struct HarmonicMeasureTable {
    pub sources: Vec<usize>,
    pub slots: Vec<BoundarySlot>,
    pub exit_points: Vec<Site>,
    pub rows: Vec<Vec<f64>>,
}

impl HarmonicMeasureTable {
    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k]
    }

    /// Largest `|Σ_z H(x,z) − 1|` over rows.
    pub fn max_row_defect(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// CSV `source_ix,source_iy,exit_ix,exit_iy,H`.
    pub fn to_table(&self, domain: &WiredDomain) -> Table {
        let mut t = Table::new(&["source_ix", "source_iy", "exit_ix", "exit_iy", "H"]);
        for (k, &x) in self.sources.iter().enumerate() {
            let s = domain.site(x);
            for (z, h) in self.exit_points.iter().zip(&self.rows[k]) {
                t.push(vec![s.x.to_string(), s.y.to_string(), z.x.to_string(), z.y.to_string(), num(*h)]);
            }
        }
        t
    }
}

/// Harmonic measure by Dirichlet solves that do not touch any factorization:
/// the solution `u_z` of the Dirichlet problem with unit data on slot `z` satisfies
/// `u_z(x) = G(x, s_z)`, so one transposed conjugate-gradient solve per source
/// yields every slot at once.
pub fn harmonic_measure(domain: &WiredDomain, sources: &[usize]) -> Result<HarmonicMeasureTable> {
    for &x in sources {
        if x >= domain.len() {
            return Err(Error::InvariantViolation(format!("source index {x} out of range")));
        }
    }
    let slots = domain.boundary_slots().to_vec();
    let rows = sources
        .par_iter()
        .map(|&x| {
            let mut e = vec![0.0; domain.len()];
            e[x] = 1.0;
            let g = conjugate_gradient(domain, &e, CG_TOL, 50 * domain.len() + 100);
            slots.iter().map(|s| g[s.site as usize]).collect()
        })
        .collect();
    Ok(HarmonicMeasureTable {
        sources: sources.to_vec(),
        exit_points: slots.iter().map(|&s| domain.exit_point(s)).collect(),
        slots,
        rows,
    })
}

fn diff(a: Site, b: Site) -> Site {
    Site::new(a.x - b.x, a.y - b.y)
}

/// `G(x, y) = −a(x − y) + Σ_z H(x, z) a(z − y)`.
pub fn green_via_kernel(domain: &WiredDomain, kernel: &PotentialKernel, x: usize, y: usize) -> Result<f64> {
    Ok(green_via_kernel_row(domain, kernel, x, &[y])?[0])
}

/// The same representation for one source and many targets, sharing `H(x, ·)`.
pub fn green_via_kernel_row(domain: &WiredDomain, kernel: &PotentialKernel, x: usize, targets: &[usize]) -> Result<Vec<f64>> {
    let h = harmonic_measure(domain, &[x])?;
    let sx = domain.site(x);
    let mut diffs = Vec::new();
    for &y in targets {
        let sy = domain.site(y);
        diffs.push(diff(sx, sy));
        diffs.extend(h.exit_points.iter().map(|&z| diff(z, sy)));
    }
    kernel.precompute(&diffs);
    Ok(targets
        .iter()
        .map(|&y| {
            let sy = domain.site(y);
            let boundary: f64 = h
                .exit_points
                .iter()
                .zip(h.row(0))
                .map(|(&z, &p)| p * kernel.eval(diff(z, sy)))
                .sum();
            boundary - kernel.eval(diff(sx, sy))
        })
        .collect())
}

fn log_distance(z: Site, x: Site, scale: f64) -> f64 {
    (f64::from(z.x - x.x).hypot(f64::from(z.y - x.y)) / scale).ln()
}

/// `exp Σ_z H(⌊xN⌋, z) log(|z − ⌊xN⌋| / N)`.
pub fn conformal_radius(domain: &ContinuumDomain, scale: u32, x: [f64; 2]) -> Result<f64> {
    domain.validate()?;
    let n = f64::from(scale);
    if domain.boundary_distance(x) <= 2.0 / n {
        return Err(Error::PointTooCloseToBoundary { x: x[0], y: x[1] });
    }
    let wired = discretize(domain, scale)?;
    let site = wired
        .site_at(x)
        .ok_or(Error::PointTooCloseToBoundary { x: x[0], y: x[1] })?;
    let green = solve_green(&wired)?;
    Ok(conformal_radius_at(&green, site))
}

/// Discrete conformal radius at one site from an existing factorization.
pub fn conformal_radius_at(green: &GreenOperator, x: usize) -> f64 {
    let d = green.domain();
    let sx = d.site(x);
    let n = f64::from(d.scale());
    let exponent: f64 = d
        .boundary_slots()
        .iter()
        .zip(green.exit_distribution(x))
        .map(|(&s, p)| p * log_distance(d.exit_point(s), sx, n))
        .sum();
    exponent.exp()
}

/// Discrete conformal radius at every site, via one solve per boundary-adjacent site:
/// `log r(x) = Σ_s G(x, s) Σ_{d exits of s} log(|s + e_d − x| / N)`.
pub fn conformal_radius_field(green: &GreenOperator) -> Vec<f64> {
    let d = green.domain();
    let n = f64::from(d.scale());
    let mut boundary_sites: Vec<u32> = d.boundary_slots().iter().map(|s| s.site).collect();
    boundary_sites.dedup();
    let slots = d.boundary_slots();
    let contributions: Vec<Vec<f64>> = boundary_sites
        .par_iter()
        .map(|&s| {
            let col = green.column(s as usize);
            let exits: Vec<Site> = slots.iter().filter(|b| b.site == s).map(|&b| d.exit_point(b)).collect();
            (0..d.len())
                .map(|x| {
                    let sx = d.site(x);
                    col[x] * exits.iter().map(|&z| log_distance(z, sx, n)).sum::<f64>()
                })
                .collect()
        })
        .collect();
    let mut log_r = vec![0.0; d.len()];
    for c in &contributions {
        for (acc, v) in log_r.iter_mut().zip(c) {
            *acc += v;
        }
    }
    log_r.into_iter().map(f64::exp).collect()
}

/// Conformal radius of the unit disc, `1 − |x|²`.
pub fn disc_conformal_radius(x: [f64; 2]) -> f64 {
    1.0 - x[0] * x[0] - x[1] * x[1]
}

/// Continuum Green function of the unit disc,
/// `Ĝ(x, y) = −g log|x − y| + g ∫ Π(x, dz) log|y − z|`, with the boundary integral
/// done by the periodic trapezoidal rule against the Poisson kernel.
pub fn continuum_green_disc(x: [f64; 2], y: [f64; 2]) -> Result<f64> {
    let inside = |p: [f64; 2]| p[0].hypot(p[1]) < 1.0;
    if !inside(x) || !inside(y) {
        return Err(Error::InvalidDomain("points must lie in the open unit disc".into()));
    }
    let dxy = (x[0] - y[0]).hypot(x[1] - y[1]);
    if dxy == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    let r2 = x[0] * x[0] + x[1] * x[1];
    let boundary = |m: usize| {
        let mut s = 0.0;
        for k in 0..m {
            let th = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
            let (c, sn) = (th.cos(), th.sin());
            let poisson = (1.0 - r2) / ((c - x[0]).powi(2) + (sn - x[1]).powi(2));
            s += poisson * 0.5 * ((c - y[0]).powi(2) + (sn - y[1]).powi(2)).ln();
        }
        s / m as f64
    };
    let mut m = 64;
    let mut prev = boundary(m);
    while m < 1 << 22 {
        m *= 2;
        let next = boundary(m);
        let done = (next - prev).abs() < 1e-14 * (1.0 + next.abs());
        prev = next;
        if done {
            break;
        }
    }
    Ok(G * (prev - dxy.ln()))
}

/// `max_{x,y} [G(x, y) − g log(N / (1 + |x − y|))]` over the given sources.
pub fn fit_upper_bound_constant(green: &GreenOperator, sources: &[usize]) -> f64 {
    let d = green.domain();
    let n = f64::from(d.scale());
    sources
        .par_iter()
        .map(|&x| {
            let col = green.column(x);
            let sx = d.site(x);
            col.iter()
                .enumerate()
                .map(|(y, &gxy)| {
                    let sy = d.site(y);
                    let r = f64::from(sx.x - sy.x).hypot(f64::from(sx.y - sy.y));
                    gxy - G * (n / (1.0 + r)).ln()
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
}
