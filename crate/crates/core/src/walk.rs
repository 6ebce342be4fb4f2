//! Random walk on the wired graph, excursion by excursion from ρ.
//!
//! The walk jumps in discrete steps; continuous time enters only through
//! independent `Exp(1)/π` holding times, drawn per visit when needed.

use crate::error::{Error, Result};
use crate::export::{num, site_heatmap, Pgm, Table};
use crate::green::GreenOperator;
use crate::lattice::{WiredDomain, RHO};
use crate::rng::{CounterRng, Stream};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp1, Gamma, Poisson};
use rayon::prelude::*;

pub const DEFAULT_STEP_LIMIT: u64 = 10_000_000_000;

/// How `L(x)` is obtained from visit counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HoldingMode {
    /// `L(x) = Gamma(visits, 1)/π(x)`: one `Exp(1)` holding time per visit.
    Exponential,
    /// `L(x) = visits/π(x)`. Changes the law of `L`; for quick exploration only.
    VisitCount,
}

/// Uniform directions in {0,1,2,3}, two bits at a time.
struct Directions {
    buf: u64,
    left: u32,
}

impl Directions {
    fn new() -> Self {
        Directions { buf: 0, left: 0 }
    }

    #[inline]
    fn next(&mut self, rng: &mut CounterRng) -> usize {
        if self.left == 0 {
            self.buf = rng.next_u64();
            self.left = 32;
        }
        let d = (self.buf & 3) as usize;
        self.buf >>= 2;
        self.left -= 1;
        d
    }
}

/// Walk parameters shared by all simulations.
#[derive(Clone, Copy, Debug)]
pub struct Walker<'a> {
    pub domain: &'a WiredDomain,
    pub step_limit: u64,
}

/// One excursion from ρ back to ρ.
#[derive(Clone, Debug, PartialEq)]
pub struct ExcursionRecord {
    pub visits: Vec<u64>,
    pub steps: u64,
}

/// Local time in the ρ-parametrization: `L_t` read off when ρ's local time is `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalTimeProfile {
    pub t: f64,
    pub local_time: Vec<f64>,
    pub visits: Vec<u64>,
    pub n_excursions: u64,
    pub steps: u64,
    pub mode: HoldingMode,
}

/// Result of a cover-time run.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverTime {
    /// ρ-local time at the end of the covering excursion.
    pub t_cover: f64,
    /// Discrete jumps over all excursions.
    pub natural_steps: u64,
    pub excursions: u64,
    /// ρ-local time at which the last unvisited site was first reached.
    pub last_discovery: f64,
}

impl<'a> Walker<'a> {
    pub fn new(domain: &'a WiredDomain) -> Self {
        Walker {
            domain,
            step_limit: DEFAULT_STEP_LIMIT,
        }
    }

    pub fn with_step_limit(mut self, limit: u64) -> Self {
        self.step_limit = limit;
        self
    }

    /// Entry site: a boundary edge chosen uniformly.
    fn entry(&self, rng: &mut CounterRng) -> usize {
        let slots = self.domain.boundary_slots();
        slots[rng.random_range(0..slots.len())].site as usize
    }

    /// Runs one excursion, calling `visit(x)` on each arrival. Returns the jump count
    /// (entry and exit included).
    fn excursion_with<F: FnMut(usize)>(&self, rng: &mut CounterRng, mut visit: F) -> Result<u64> {
        let mut dirs = Directions::new();
        let mut x = self.entry(rng);
        let mut steps = 1u64;
        loop {
            visit(x);
            let y = self.domain.neighbors(x)[dirs.next(rng)];
            steps += 1;
            if y == RHO {
                return Ok(steps);
            }
            if steps >= self.step_limit {
                return Err(Error::StepLimitExceeded { limit: self.step_limit });
            }
            x = y as usize;
        }
    }

    pub fn excursion(&self, rng: &mut CounterRng) -> Result<ExcursionRecord> {
        let mut visits = vec![0u64; self.domain.len()];
        let steps = self.excursion_with(rng, |x| visits[x] += 1)?;
        Ok(ExcursionRecord { visits, steps })
    }

    /// `Σ_x f(x) · visits(x)` over one excursion, without allocating.
    pub fn excursion_pairing(&self, rng: &mut CounterRng, f: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        self.excursion_with(rng, |x| acc += f[x])?;
        Ok(acc)
    }

    /// `⟨ℓ, f⟩` for the local time `ℓ` of one excursion: each visit to `x` holds for
    /// `Exp(1)` and contributes `f(x) · Exp(1)/π(x)`.
    pub fn excursion_local_time_pairing(&self, rng: &mut CounterRng, f: &[f64]) -> Result<f64> {
        let mut visited = Vec::new();
        self.excursion_with(rng, |x| visited.push(x))?;
        Ok(visited
            .into_iter()
            .map(|x| f[x] * rng.sample::<f64, _>(Exp1) / 4.0)
            .sum())
    }

    /// Does an excursion visit `target`?
    pub fn excursion_hits(&self, rng: &mut CounterRng, target: usize) -> Result<bool> {
        let mut hit = false;
        self.excursion_with(rng, |x| hit |= x == target)?;
        Ok(hit)
    }

    /// From `y`, does the walk reach ρ before returning to `y`?
    pub fn escapes(&self, rng: &mut CounterRng, y: usize) -> Result<bool> {
        let mut dirs = Directions::new();
        let mut x = y;
        let mut steps = 0u64;
        loop {
            let z = self.domain.neighbors(x)[dirs.next(rng)];
            steps += 1;
            if z == RHO {
                return Ok(true);
            }
            if z as usize == y {
                return Ok(false);
            }
            if steps >= self.step_limit {
                return Err(Error::StepLimitExceeded { limit: self.step_limit });
            }
            x = z as usize;
        }
    }

    /// `N_t ~ Poisson(π(ρ) t)` excursions, visit counts summed, then holding times.
    pub fn local_time(&self, t: f64, mode: HoldingMode, stream: Stream) -> Result<LocalTimeProfile> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::BadParameterRange(format!("t = {t} must be finite and ≥ 0")));
        }
        let n = self.domain.len();
        let mut rng = stream.rng();
        let rate = self.domain.pi_rho() as f64 * t;
        let n_exc = if rate > 0.0 {
            Poisson::new(rate)
                .map_err(|e| Error::BadParameterRange(e.to_string()))?
                .sample(&mut rng) as u64
        } else {
            0
        };
        let mut visits = vec![0u64; n];
        let mut steps = 0u64;
        for _ in 0..n_exc {
            steps += self.excursion_with(&mut rng, |x| visits[x] += 1)?;
        }
        let local_time = holding_times(&visits, mode, &mut rng);
        Ok(LocalTimeProfile {
            t,
            local_time,
            visits,
            n_excursions: n_exc,
            steps,
            mode,
        })
    }

    /// Excursions until every site is visited, with an `Exp(1)/π(ρ)` holding at ρ
    /// before each one.
    pub fn cover_time(&self, stream: Stream) -> Result<CoverTime> {
        let n = self.domain.len();
        let pi_rho = self.domain.pi_rho() as f64;
        let mut rng = stream.rng();
        let mut seen = vec![false; n];
        let mut remaining = n;
        let mut t = 0.0;
        let mut steps = 0u64;
        let mut excursions = 0u64;
        let mut last_discovery = 0.0;
        while remaining > 0 {
            let hold: f64 = rng.sample(Exp1);
            t += hold / pi_rho;
            let before = remaining;
            steps += self.excursion_with(&mut rng, |x| {
                if !seen[x] {
                    seen[x] = true;
                    remaining -= 1;
                }
            })?;
            excursions += 1;
            if remaining < before {
                last_discovery = t;
            }
            if steps > self.step_limit {
                return Err(Error::StepLimitExceeded { limit: self.step_limit });
            }
        }
        Ok(CoverTime {
            t_cover: t,
            natural_steps: steps,
            excursions,
            last_discovery,
        })
    }
}

fn holding_times(visits: &[u64], mode: HoldingMode, rng: &mut CounterRng) -> Vec<f64> {
    let pi = 4.0;
    match mode {
        HoldingMode::VisitCount => visits.iter().map(|&v| v as f64 / pi).collect(),
        HoldingMode::Exponential => visits
            .iter()
            .map(|&v| match v {
                0 => 0.0,
                1 => rng.sample::<f64, _>(Exp1) / pi,
                k => Gamma::new(k as f64, 1.0).expect("positive shape").sample(rng) / pi,
            })
            .collect(),
    }
}

pub fn run_excursion(domain: &WiredDomain, stream: Stream) -> Result<ExcursionRecord> {
    Walker::new(domain).excursion(&mut stream.rng())
}

pub fn sample_local_time(domain: &WiredDomain, t: f64, mode: HoldingMode, stream: Stream) -> Result<LocalTimeProfile> {
    Walker::new(domain).local_time(t, mode, stream)
}

/// Independent profiles on `stream.child(0..replicas)`, in replica order.
pub fn sample_local_times(domain: &WiredDomain, t: f64, mode: HoldingMode, stream: Stream, replicas: usize) -> Result<Vec<LocalTimeProfile>> {
    let w = Walker::new(domain);
    (0..replicas as u64)
        .into_par_iter()
        .map(|i| w.local_time(t, mode, stream.child(i)))
        .collect()
}

pub fn cover_time(domain: &WiredDomain, stream: Stream) -> Result<CoverTime> {
    Walker::new(domain).cover_time(stream)
}

/// Sites with no visit, in canonical order.
pub fn avoided_set(profile: &LocalTimeProfile) -> Vec<usize> {
    profile
        .visits
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == 0)
        .map(|(i, _)| i)
        .collect()
}

/// `P(L_t(x) = 0) = exp(−t / G(x, x))` for every site.
pub fn avoidance_prob_exact(green: &GreenOperator, t: f64) -> Vec<f64> {
    green.diagonal().iter().map(|g| (-t / g).exp()).collect()
}

/// Upper bound `exp(−(t/G) e^{−b/G})` on `P(L_t(x) ≤ b)`.
pub fn light_point_bound(green: &GreenOperator, t: f64, b: f64) -> Vec<f64> {
    green
        .diagonal()
        .iter()
        .map(|g| (-(t / g) * (-b / g).exp()).exp())
        .collect()
}

impl LocalTimeProfile {
    /// `⟨L_t, f⟩`.
    pub fn pair(&self, f: &[f64]) -> f64 {
        self.local_time.iter().zip(f).map(|(l, f)| l * f).sum()
    }

    /// CSV `ix,iy,visits,L`.
    pub fn to_table(&self, domain: &WiredDomain) -> Table {
        let mut t = Table::new(&["ix", "iy", "visits", "L"]);
        for (i, s) in domain.sites().iter().enumerate() {
            t.push(vec![s.x.to_string(), s.y.to_string(), self.visits[i].to_string(), num(self.local_time[i])]);
        }
        t
    }

    pub fn heatmap(&self, domain: &WiredDomain) -> Pgm {
        site_heatmap(domain, &self.local_time)
    }
}

/// CSV `ix,iy` of the avoided sites.
pub fn avoided_table(domain: &WiredDomain, avoided: &[usize]) -> Table {
    let mut t = Table::new(&["ix", "iy"]);
    for &i in avoided {
        let s = domain.site(i);
        t.push(vec![s.x.to_string(), s.y.to_string()]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::solve_green;
    use crate::lattice::Site;
    use crate::stats::{ks_two_sample, mean, variance};

    #[test]
    fn single_site_excursion() {
        let d = WiredDomain::square(1);
        for i in 0..50 {
            let e = run_excursion(&d, Stream::root(1).child(i)).unwrap();
            assert_eq!(e.visits, vec![1]);
            assert_eq!(e.steps, 2);
        }
    }

    #[test]
    fn zero_time_profile() {
        let d = WiredDomain::square(4);
        let p = sample_local_time(&d, 0.0, HoldingMode::Exponential, Stream::root(1)).unwrap();
        assert_eq!(p.n_excursions, 0);
        assert!(p.local_time.iter().all(|&l| l == 0.0));
        assert_eq!(avoided_set(&p), (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn visits_per_excursion() {
        // E[visits(x)] = π(x)/π(ρ) per excursion
        let d = WiredDomain::from_sites(4, [Site::new(1, 1), Site::new(2, 1)]).unwrap();
        let w = Walker::new(&d);
        let mut rng = Stream::root(2).rng();
        let n = 200_000;
        let counts: Vec<f64> = (0..n)
            .map(|_| w.excursion(&mut rng).unwrap().visits[0] as f64)
            .collect();
        let target = 4.0 / 6.0;
        let se = (variance(&counts) / n as f64).sqrt();
        assert!((mean(&counts) - target).abs() < 4.0 * se);
    }

    #[test]
    fn hit_probability_from_rho() {
        // P^ρ(H_x < Ĥ_ρ) = 1/(π(ρ) G(x,x))
        let d = WiredDomain::square(5);
        let g = solve_green(&d).unwrap();
        let x = d.require_index(Site::new(3, 3)).unwrap();
        let w = Walker::new(&d);
        let mut rng = Stream::root(4).rng();
        let n = 200_000;
        let hits = (0..n).filter(|_| w.excursion_hits(&mut rng, x).unwrap()).count() as f64;
        let p = 1.0 / (d.pi_rho() as f64 * g.diag(x));
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits / n as f64 - p).abs() < 4.0 * se);
    }

    #[test]
    fn escape_identity() {
        // 1/P^y(H_ρ < Ĥ_y) = π(y) G(y,y)
        let d = WiredDomain::square(9);
        let g = solve_green(&d).unwrap();
        let w = Walker::new(&d);
        let mut rng = Stream::root(5).rng();
        for s in [Site::new(5, 5), Site::new(1, 1), Site::new(2, 7)] {
            let y = d.require_index(s).unwrap();
            let n = 100_000;
            let esc = (0..n).filter(|_| w.escapes(&mut rng, y).unwrap()).count() as f64 / n as f64;
            let p = 1.0 / (4.0 * g.diag(y));
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((esc - p).abs() < 4.0 * se, "{s:?}");
        }
    }

    #[test]
    fn mean_local_time_is_t() {
        let d = WiredDomain::square(4);
        let t = 1.5;
        let reps = sample_local_times(&d, t, HoldingMode::Exponential, Stream::root(6), 4000).unwrap();
        for x in [0, 5, 15] {
            let v: Vec<f64> = reps.iter().map(|p| p.local_time[x]).collect();
            let se = (variance(&v) / v.len() as f64).sqrt();
            assert!((mean(&v) - t).abs() < 4.0 * se);
        }
        // excursion counts are Poisson(π(ρ) t): dispersion ≈ 1
        let counts: Vec<f64> = reps.iter().map(|p| p.n_excursions as f64).collect();
        let disp = variance(&counts) / mean(&counts);
        // sd of the dispersion index is ≈ √(2/(n−1))
        assert!((disp - 1.0).abs() < 4.0 * (2.0 / 3999.0f64).sqrt());
    }

    #[test]
    fn single_site_avoidance() {
        let d = WiredDomain::square(1);
        let reps = sample_local_times(&d, 1.0, HoldingMode::Exponential, Stream::root(7), 100_000).unwrap();
        let freq = reps.iter().filter(|p| !avoided_set(p).is_empty()).count() as f64 / 1e5;
        let p = (-4.0f64).exp();
        assert!((freq - p).abs() < 4.0 * (p * (1.0 - p) / 1e5).sqrt());
        let g = solve_green(&d).unwrap();
        assert!((avoidance_prob_exact(&g, 1.0)[0] - p).abs() < 1e-15);
        assert_eq!(avoidance_prob_exact(&g, 0.0), vec![1.0]);
    }

    #[test]
    fn compound_poisson_representation() {
        // L_t(x) π(x) is a Poisson(t π(x) q) sum of Exp(q) blocks, q = 1/(π(x) G(x,x))
        let d = WiredDomain::from_sites(4, [Site::new(1, 1), Site::new(2, 1)]).unwrap();
        let g = solve_green(&d).unwrap();
        let t = 0.7;
        let reps = sample_local_times(&d, t, HoldingMode::Exponential, Stream::root(8), 20_000).unwrap();
        let walk: Vec<f64> = reps.iter().map(|p| 4.0 * p.local_time[0]).collect();
        let q = 1.0 / (4.0 * g.diag(0));
        let mut rng = Stream::root(9).rng();
        let oracle: Vec<f64> = (0..20_000)
            .map(|_| {
                let k = Poisson::new(t * 4.0 * q).unwrap().sample(&mut rng) as u64;
                (0..k).map(|_| rng.sample::<f64, _>(Exp1) / q).sum()
            })
            .collect();
        let ks = ks_two_sample(&walk, &oracle).unwrap();
        assert!(ks.p_value > 0.001, "{ks:?}");
    }

    #[test]
    fn cover_time_single_site() {
        let d = WiredDomain::square(1);
        let n = 50_000;
        let ts: Vec<f64> = (0..n)
            .map(|i| cover_time(&d, Stream::root(10).child(i)).unwrap().t_cover)
            .collect();
        let se = (variance(&ts) / n as f64).sqrt();
        assert!((mean(&ts) - 0.25).abs() < 4.0 * se);
    }

    #[test]
    fn cover_time_properties() {
        let d = WiredDomain::square(6);
        let c = cover_time(&d, Stream::root(12)).unwrap();
        assert!(c.t_cover >= c.last_discovery);
        assert!(c.natural_steps >= d.len() as u64);
        let w = Walker::new(&d).with_step_limit(3);
        assert!(matches!(w.cover_time(Stream::root(12)), Err(Error::StepLimitExceeded { limit: 3 })));
    }

    #[test]
    fn light_bound_reduces_to_avoidance() {
        let d = WiredDomain::square(3);
        let g = solve_green(&d).unwrap();
        assert_eq!(light_point_bound(&g, 0.8, 0.0), avoidance_prob_exact(&g, 0.8));
        let b = light_point_bound(&g, 0.8, 0.5);
        assert!(b.iter().zip(avoidance_prob_exact(&g, 0.8)).all(|(x, y)| *x >= y));
    }

    #[test]
    fn profile_tables() {
        let d = WiredDomain::square(3);
        let p = sample_local_time(&d, 0.0, HoldingMode::Exponential, Stream::root(1)).unwrap();
        let t = p.to_table(&d);
        assert_eq!(t.len(), 9);
        assert_eq!(avoided_table(&d, &[]).to_bytes(), b"ix,iy\r\n");
    }
}
