//! Exact moment formulas for local time and Monte-Carlo datasets for the
//! isomorphism checks (Kac moments, exponential moments, Ray–Knight, CLT,
//! hitting identities).

use crate::dgff::sample_field;
use crate::error::{Error, Result};
use crate::export::{num, Table};
use crate::green::GreenOperator;
use crate::lattice::WiredDomain;
use crate::rng::Stream;
use crate::sparse::{apply_laplacian, conjugate_gradient_with};
use crate::stats::SampleSet;
use crate::walk::{HoldingMode, Walker};
use rayon::prelude::*;

const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITER: usize = 10_000;

/// A function on the sites; its value at ρ is implicitly 0.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFunction {
    values: Vec<f64>,
}

impl TestFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadParameterRange("test function must be finite".into()));
        }
        Ok(TestFunction { values })
    }

    /// `scale · δ_x` on a domain of `n` sites.
    pub fn point(n: usize, x: usize, scale: f64) -> Self {
        let mut values = vec![0.0; n];
        values[x] = scale;
        TestFunction { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if self.values.len() != n {
            return Err(Error::InvariantViolation(format!(
                "test function has {} values for {n} sites",
                self.values.len()
            )));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `E^ρ ⟨ℓ₁, f⟩ⁿ = n! / π(ρ) · ⟨f, (G M_f)^{n−1} 1⟩`, by repeated solves.
pub fn kac_moment(green: &GreenOperator, f: &TestFunction, n: u32) -> Result<f64> {
    if n == 0 {
        return Err(Error::BadParameterRange("moment order must be ≥ 1".into()));
    }
    f.check_len(green.len())?;
    let fv = f.values();
    let mut v = vec![1.0; green.len()];
    for _ in 1..n {
        let fw: Vec<f64> = fv.iter().zip(&v).map(|(a, b)| a * b).collect();
        v = green.apply(&fw);
    }
    let factorial: f64 = (1..=n).map(f64::from).product();
    Ok(factorial * dot(fv, &v) / green.domain().pi_rho() as f64)
}

/// Spectral radius of `G M_f` by power iteration. The eigenvalues are real, so the
/// two-step growth `|(G M_f)² v| / |v|` converges to `ρ²` even when `±ρ` both occur.
pub fn spectral_radius(green: &GreenOperator, f: &TestFunction) -> Result<f64> {
    f.check_len(green.len())?;
    let fv = f.values();
    if fv.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let step = |v: &[f64]| {
        let fw: Vec<f64> = fv.iter().zip(v).map(|(a, b)| a * b).collect();
        green.apply(&fw)
    };
    let mut v: Vec<f64> = fv.iter().map(|a| 1.0 + 0.1 * a.abs()).collect();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut estimate = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let w = step(&step(&v));
        let growth = norm(&w);
        if growth == 0.0 {
            return Ok(0.0);
        }
        let next = growth.sqrt();
        v = w.into_iter().map(|x| x / growth).collect();
        if (next - estimate).abs() <= POWER_TOL * next {
            return Ok(next);
        }
        estimate = next;
    }
    Ok(estimate)
}

/// `log E^ρ e^{⟨L_t, f⟩} = t ⟨f, (1 − G M_f)⁻¹ 1⟩`, solved as `(A − M_f) u = A 1`.
pub fn exp_moment(green: &GreenOperator, f: &TestFunction, t: f64) -> Result<f64> {
    let radius = spectral_radius(green, f)?;
    if radius >= 1.0 {
        return Err(Error::ContractionViolated { radius });
    }
    let d = green.domain();
    let fv = f.values();
    let ones = vec![1.0; d.len()];
    let mut rhs = vec![0.0; d.len()];
    apply_laplacian(d, &ones, &mut rhs);
    let u = conjugate_gradient_with(
        |x, y| {
            apply_laplacian(d, x, y);
            for i in 0..y.len() {
                y[i] -= fv[i] * x[i];
            }
        },
        &rhs,
        1e-15,
        50 * d.len() + 100,
    );
    Ok(t * dot(fv, &u))
}

/// Monte-Carlo estimate of `E^ρ ⟨ℓ₁, f⟩ⁿ` for `n = 1..=max_n` from `excursions`
/// independent excursions: `(mean, standard error)` per order.
pub fn kac_monte_carlo(domain: &WiredDomain, f: &TestFunction, max_n: u32, excursions: usize, stream: Stream) -> Result<Vec<(f64, f64)>> {
    f.check_len(domain.len())?;
    let w = Walker::new(domain);
    let chunks = 256usize;
    let per = excursions.div_ceil(chunks);
    let partial: Vec<Result<Vec<(f64, f64)>>> = (0..chunks as u64)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream.child(c).rng();
            let count = per.min(excursions.saturating_sub(c as usize * per));
            let mut sums = vec![(0.0, 0.0); max_n as usize];
            for _ in 0..count {
                let v = w.excursion_local_time_pairing(&mut rng, f.values())?;
                let mut p = 1.0;
                for s in sums.iter_mut() {
                    p *= v;
                    s.0 += p;
                    s.1 += p * p;
                }
            }
            Ok(sums)
        })
        .collect();
    let mut total = vec![(0.0, 0.0); max_n as usize];
    for part in partial {
        for (t, p) in total.iter_mut().zip(part?) {
            t.0 += p.0;
            t.1 += p.1;
        }
    }
    let m = excursions as f64;
    Ok(total
        .into_iter()
        .map(|(s, s2)| {
            let mean = s / m;
            let var = (s2 / m - mean * mean).max(0.0) * m / (m - 1.0);
            (mean, (var / m).sqrt())
        })
        .collect())
}

/// Paired samples for one probe: `A = ⟨p, L_t + h²/2⟩`, `B = ⟨p, (h̃ + √(2t))²/2⟩`.
#[derive(Clone, Debug)]
pub struct RayKnightData {
    pub probe: usize,
    pub a: SampleSet,
    pub b: SampleSet,
}

/// Draws `L_t`, an independent DGFF `h`, and a fresh DGFF `h̃` per replica; the
/// coupling is not constructed, only the two laws are sampled.
pub fn ray_knight_datasets(
    green: &GreenOperator,
    t: f64,
    replicas: usize,
    probes: &[TestFunction],
    stream: Stream,
) -> Result<Vec<RayKnightData>> {
    if !(t > 0.0) {
        return Err(Error::BadParameterRange(format!("t = {t} must be positive")));
    }
    if replicas < 1000 {
        return Err(Error::TooFewSamples { needed: 1000, got: replicas });
    }
    let d = green.domain();
    for p in probes {
        p.check_len(d.len())?;
    }
    let w = Walker::new(d);
    let shift = (2.0 * t).sqrt();
    let rows: Vec<Result<Vec<(f64, f64)>>> = (0..replicas as u64)
        .into_par_iter()
        .map(|i| {
            let s = stream.child(i);
            let l = w.local_time(t, HoldingMode::Exponential, s.tagged("walk"))?;
            let h = sample_field(green, s.tagged("h"));
            let ht = sample_field(green, s.tagged("h-tilde"));
            let lhs: Vec<f64> = l.local_time.iter().zip(&h.values).map(|(l, h)| l + 0.5 * h * h).collect();
            let rhs: Vec<f64> = ht.values.iter().map(|h| 0.5 * (h + shift).powi(2)).collect();
            Ok(probes.iter().map(|p| (dot(p.values(), &lhs), dot(p.values(), &rhs))).collect())
        })
        .collect();
    let mut out: Vec<RayKnightData> = (0..probes.len())
        .map(|k| RayKnightData {
            probe: k,
            a: SampleSet::new(Vec::with_capacity(replicas), format!("ray-knight/A/{k}")),
            b: SampleSet::new(Vec::with_capacity(replicas), format!("ray-knight/B/{k}")),
        })
        .collect();
    for row in rows {
        for (k, (a, b)) in row?.into_iter().enumerate() {
            out[k].a.values.push(a);
            out[k].b.values.push(b);
        }
    }
    Ok(out)
}

/// `⟨p, (L_t − t)/√(2t)⟩` samples for each `t`; the limit law is `N(0, ⟨p, G p⟩)`.
pub fn clt_datasets(domain: &WiredDomain, t_list: &[f64], probe: &TestFunction, replicas: usize, stream: Stream) -> Result<Vec<(f64, SampleSet)>> {
    if t_list.windows(2).any(|w| w[1] <= w[0]) || t_list.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::BadParameterRange("t_list must be positive and increasing".into()));
    }
    if replicas < 1000 {
        return Err(Error::TooFewSamples { needed: 1000, got: replicas });
    }
    probe.check_len(domain.len())?;
    let w = Walker::new(domain);
    t_list
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let scale = (2.0 * t).sqrt();
            let base = stream.child(k as u64);
            let vals: Result<Vec<f64>> = (0..replicas as u64)
                .into_par_iter()
                .map(|i| {
                    let l = w.local_time(t, HoldingMode::Exponential, base.child(i))?;
                    Ok(l.local_time
                        .iter()
                        .zip(probe.values())
                        .map(|(l, p)| p * (l - t) / scale)
                        .sum())
                })
                .collect();
            Ok((t, SampleSet::new(vals?, format!("clt/{t}"))))
        })
        .collect()
}

/// Hitting estimates at one site.
#[derive(Clone, Debug, PartialEq)]
pub struct HittingRow {
    pub site: usize,
    /// `P̂^y(H_ρ < Ĥ_y)` and its standard error.
    pub escape: f64,
    pub escape_se: f64,
    /// `π(y) G(y, y) P̂^y(H_ρ < Ĥ_y)`, which should be 1.
    pub product: f64,
    pub product_se: f64,
    /// `P̂^ρ(H_y < Ĥ_ρ)` and its standard error.
    pub from_rho: f64,
    pub from_rho_se: f64,
}

impl HittingRow {
    /// `|π G P̂ − 1|` in units of its standard error.
    pub fn product_z(&self) -> f64 {
        (self.product - 1.0).abs() / self.product_se.max(f64::MIN_POSITIVE)
    }

    /// Reversibility `π(ρ) P^ρ(H_y < Ĥ_ρ) = π(y) P^y(H_ρ < Ĥ_y)` as a z-score.
    pub fn reversibility_z(&self, pi_rho: f64) -> f64 {
        let lhs = pi_rho * self.from_rho;
        let rhs = 4.0 * self.escape;
        let se = (pi_rho * self.from_rho_se).hypot(4.0 * self.escape_se);
        (lhs - rhs).abs() / se.max(f64::MIN_POSITIVE)
    }
}

pub fn hitting_identity(green: &GreenOperator, sites: &[usize], replicas: usize, stream: Stream) -> Result<Vec<HittingRow>> {
    if sites.is_empty() {
        return Err(Error::BadParameterRange("need at least one site".into()));
    }
    let d = green.domain();
    let w = Walker::new(d);
    sites
        .iter()
        .map(|&y| {
            if y >= d.len() {
                return Err(Error::InvariantViolation(format!("site index {y} out of range")));
            }
            let s = stream.child(y as u64);
            let count = |tag: &str, trial: &(dyn Fn(&mut crate::rng::CounterRng) -> Result<bool> + Sync)| -> Result<f64> {
                let chunks = 64u64;
                let per = replicas.div_ceil(chunks as usize);
                let hits: Result<Vec<usize>> = (0..chunks)
                    .into_par_iter()
                    .map(|c| {
                        let mut rng = s.tagged(tag).child(c).rng();
                        let todo = per.min(replicas.saturating_sub(c as usize * per));
                        let mut k = 0;
                        for _ in 0..todo {
                            k += usize::from(trial(&mut rng)?);
                        }
                        Ok(k)
                    })
                    .collect();
                Ok(hits?.into_iter().sum::<usize>() as f64 / replicas as f64)
            };
            let escape = count("escape", &|rng| w.escapes(rng, y))?;
            let from_rho = count("from-rho", &|rng| w.excursion_hits(rng, y))?;
            let m = replicas as f64;
            let escape_se = (escape * (1.0 - escape) / m).sqrt();
            let factor = 4.0 * green.diag(y);
            Ok(HittingRow {
                site: y,
                escape,
                escape_se,
                product: factor * escape,
                product_se: factor * escape_se,
                from_rho,
                from_rho_se: (from_rho * (1.0 - from_rho) / m).sqrt(),
            })
        })
        .collect()
}

/// One line of a verification report.
#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub check: String,
    pub statistic: String,
    pub value: f64,
    pub target: f64,
    pub sigma: f64,
    pub pass: bool,
}

impl Verdict {
    /// Passes when `|value − target| ≤ k · sigma`.
    pub fn within_sigma(check: impl Into<String>, value: f64, target: f64, sigma: f64, k: f64) -> Self {
        Verdict {
            check: check.into(),
            statistic: format!("|value-target|/sigma<={k}"),
            value,
            target,
            sigma,
            pass: (value - target).abs() <= k * sigma,
        }
    }

    /// Passes when `|value − target| ≤ tol`.
    pub fn within_tol(check: impl Into<String>, value: f64, target: f64, tol: f64) -> Self {
        Verdict {
            check: check.into(),
            statistic: format!("|value-target|<={tol:e}"),
            value,
            target,
            sigma: 0.0,
            pass: (value - target).abs() <= tol,
        }
    }

    /// Passes when a p-value exceeds `alpha`.
    pub fn p_value_above(check: impl Into<String>, p: f64, alpha: f64) -> Self {
        Verdict {
            check: check.into(),
            statistic: format!("p>{alpha}"),
            value: p,
            target: alpha,
            sigma: 0.0,
            pass: p > alpha,
        }
    }
}

/// CSV `check,statistic,value,target,sigma,pass`.
pub fn verdict_table(rows: &[Verdict]) -> Table {
    let mut t = Table::new(&["check", "statistic", "value", "target", "sigma", "pass"]);
    for r in rows {
        t.push(vec![
            r.check.clone(),
            r.statistic.clone(),
            num(r.value),
            num(r.target),
            num(r.sigma),
            r.pass.to_string(),
        ]);
    }
    t
}
