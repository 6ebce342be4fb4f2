//! Scaling constants, thick/avoided/light point measures, exact first moments and
//! the limit value measure μ of light points.

use crate::dgff::FieldSample;
use crate::error::{Error, Result};
use crate::export::{num, Table};
use crate::green::{conformal_radius_field, GreenOperator};
use crate::lattice::ContinuumDomain;
use crate::potential::{c0, G};
use crate::quadrature::AdaptiveIntegrator;
use crate::stats::normal_sf;
use crate::walk::LocalTimeProfile;
use std::f64::consts::PI;

/// Grid resolution per axis for the conformal-radius integral.
pub const LIMIT_GRID: usize = 200;

/// `α = 2/√g`.
pub fn alpha() -> f64 {
    2.0 / G.sqrt()
}

/// Optional replacements for the default centering sequences.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Overrides {
    pub a_n: Option<f64>,
    pub t_n: Option<f64>,
}

/// Normalizing constants at scale `N` for one exponent (`λ` for thick points,
/// `θ` for avoided and light points).
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleParams {
    pub n: u32,
    pub lambda: Option<f64>,
    pub theta: Option<f64>,
    pub g: f64,
    pub c0: f64,
    pub alpha: f64,
    pub a_n: Option<f64>,
    pub k_n: Option<f64>,
    pub c_hat: Option<f64>,
    pub t_n: Option<f64>,
    pub hat_k_n: Option<f64>,
    /// `2√g log N − (3/4)√g log log N`.
    pub m_n: f64,
}

/// Which exponent the constants are built for.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Exponent {
    Lambda(f64),
    Theta(f64),
}

pub fn scale_params(n: u32, exponent: Exponent, overrides: Overrides) -> Result<ScaleParams> {
    if n < 4 {
        return Err(Error::BadParameterRange(format!("N = {n} must be at least 4")));
    }
    let nf = f64::from(n);
    let log_n = nf.ln();
    let sg = G.sqrt();
    let mut p = ScaleParams {
        n,
        lambda: None,
        theta: None,
        g: G,
        c0: c0(),
        alpha: alpha(),
        a_n: None,
        k_n: None,
        c_hat: None,
        t_n: None,
        hat_k_n: None,
        m_n: 2.0 * sg * log_n - 0.75 * sg * log_n.ln(),
    };
    match exponent {
        Exponent::Lambda(lambda) => {
            if !(lambda > 0.0 && lambda < 1.0) {
                return Err(Error::BadParameterRange(format!("λ = {lambda} must lie in (0, 1)")));
            }
            let a = overrides.a_n.unwrap_or(2.0 * sg * lambda * log_n);
            p.lambda = Some(lambda);
            p.a_n = Some(a);
            p.k_n = Some(nf * nf * (-a * a / (2.0 * G * log_n)).exp() / log_n.sqrt());
            p.c_hat = Some(c_hat(lambda));
        }
        Exponent::Theta(theta) => {
            if !(theta > 0.0) || !theta.is_finite() {
                return Err(Error::BadParameterRange(format!("θ = {theta} must be positive")));
            }
            let t = overrides.t_n.unwrap_or(2.0 * G * theta * log_n * log_n);
            p.theta = Some(theta);
            p.t_n = Some(t);
            p.hat_k_n = Some(nf * nf * (-t / (G * log_n)).exp());
        }
    }
    Ok(p)
}

/// `ĉ = e^{2 c0 λ²/g} / √(2πg)`.
pub fn c_hat(lambda: f64) -> f64 {
    (2.0 * c0() * lambda * lambda / G).exp() / (2.0 * PI * G).sqrt()
}

impl ScaleParams {
    fn need(v: Option<f64>, what: &str) -> Result<f64> {
        v.ok_or_else(|| Error::KindMismatch(format!("{what} requires the other exponent")))
    }

    pub fn lambda(&self) -> Result<f64> {
        Self::need(self.lambda, "λ")
    }

    pub fn theta(&self) -> Result<f64> {
        Self::need(self.theta, "θ")
    }

    pub fn a_n(&self) -> Result<f64> {
        Self::need(self.a_n, "a_N")
    }

    pub fn k_n(&self) -> Result<f64> {
        Self::need(self.k_n, "K_N")
    }

    pub fn t_n(&self) -> Result<f64> {
        Self::need(self.t_n, "t_N")
    }

    pub fn hat_k_n(&self) -> Result<f64> {
        Self::need(self.hat_k_n, "K̂_N")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PointKind {
    Thick,
    Avoided,
    /// Light points with local time at most `cap`.
    Light { cap: f64 },
}

/// The sample a point measure is read from.
#[derive(Clone, Copy, Debug)]
pub enum PointSource<'a> {
    Field(&'a FieldSample),
    LocalTime(&'a LocalTimeProfile),
}

/// Atoms `(x/N, value)` with a common weight.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMeasure {
    pub atoms: Vec<([f64; 2], f64)>,
    pub weight: f64,
    pub kind: PointKind,
}

impl PointMeasure {
    /// Total mass of atoms with value in `[lo, hi]`.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        match self.atoms.iter().filter(|(_, v)| *v >= lo && *v <= hi).count() {
            0 => 0.0,
            k => k as f64 * self.weight,
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.len() as f64 * self.weight
    }

    /// CSV `x,y,value,weight`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["x", "y", "value", "weight"]);
        for (p, v) in &self.atoms {
            t.push(vec![num(p[0]), num(p[1]), num(*v), num(self.weight)]);
        }
        t
    }
}

/// Thick: every site with value `h_x − a_N`, weight `1/K_N`. Avoided: unvisited sites
/// with value 0, weight `1/K̂_N`. Light: sites with `L_t(x) ≤ cap`, weight `1/K̂_N`.
pub fn build_point_measure(
    domain: &crate::lattice::WiredDomain,
    source: PointSource<'_>,
    params: &ScaleParams,
    kind: PointKind,
) -> Result<PointMeasure> {
    let atoms: Vec<([f64; 2], f64)>;
    let weight;
    match (kind, source) {
        (PointKind::Thick, PointSource::Field(h)) => {
            check_len(domain.len(), h.values.len())?;
            let a = params.a_n()?;
            weight = 1.0 / params.k_n()?;
            atoms = h.values.iter().enumerate().map(|(i, v)| (domain.position(i), v - a)).collect();
        }
        (PointKind::Avoided, PointSource::LocalTime(l)) => {
            check_len(domain.len(), l.visits.len())?;
            weight = 1.0 / params.hat_k_n()?;
            atoms = l
                .visits
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == 0)
                .map(|(i, _)| (domain.position(i), 0.0))
                .collect();
        }
        (PointKind::Light { cap }, PointSource::LocalTime(l)) => {
            if !(cap >= 0.0) {
                return Err(Error::BadParameterRange(format!("cap = {cap} must be non-negative")));
            }
            check_len(domain.len(), l.local_time.len())?;
            weight = 1.0 / params.hat_k_n()?;
            atoms = l
                .local_time
                .iter()
                .enumerate()
                .filter(|(_, &v)| v <= cap)
                .map(|(i, &v)| (domain.position(i), v))
                .collect();
        }
        (k, _) => {
            return Err(Error::KindMismatch(format!("{k:?} points cannot be read from this sample")));
        }
    }
    Ok(PointMeasure { atoms, weight, kind })
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::InvariantViolation(format!("sample has {got} values for {expected} sites")));
    }
    Ok(())
}

/// Exact expectation of the thick-point mass and its continuum limit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThickMoment {
    pub exact: f64,
    pub limit: f64,
}

impl ThickMoment {
    pub fn relative_error(&self) -> f64 {
        (self.exact / self.limit - 1.0).abs()
    }
}

/// `exact = (1/K_N) Σ_{x/N ∈ A} Q((a_N + b)/√G(x,x))` and
/// `limit = ĉ (αλ)⁻¹ e^{−αλb} ∫_A r^D(x)^{2λ²} dx`.
///
/// For a disc `r^D` is the closed form; otherwise the discrete conformal radius of
/// `green`'s domain is used. `region = None` means `A = D`.
pub fn thick_first_moment(
    green: &GreenOperator,
    params: &ScaleParams,
    domain: &ContinuumDomain,
    region: Option<&ContinuumDomain>,
    b: f64,
) -> Result<ThickMoment> {
    let lambda = params.lambda()?;
    let a = params.a_n()?;
    let d = green.domain();
    let region = region.unwrap_or(domain);
    let exact = green
        .diagonal()
        .iter()
        .enumerate()
        .filter(|&(i, _)| region.contains(d.position(i)))
        .map(|(_, g)| normal_sf((a + b) / g.sqrt()))
        .sum::<f64>()
        / params.k_n()?;
    let al = params.alpha * lambda;
    let prefactor = params.c_hat.unwrap_or_else(|| c_hat(lambda)) / al * (-al * b).exp();
    let cutoff = 2.0 / f64::from(params.n);
    let integral = match *domain {
        ContinuumDomain::Disc { center, radius } => conformal_power_integral(region, domain, cutoff, lambda, |p| {
            let r2 = (p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2);
            Some((radius * radius - r2) / radius)
        }),
        _ => {
            let field = conformal_radius_field(green);
            conformal_power_integral(region, domain, cutoff, lambda, |p| d.site_at(p).map(|i| field[i]))
        }
    };
    Ok(ThickMoment {
        exact,
        limit: prefactor * integral,
    })
}

/// Midpoint rule for `∫_A r(x)^{2λ²} dx` on a `LIMIT_GRID²` grid over `A`'s bounding
/// box, dropping points within `cutoff` of `∂D`.
pub fn conformal_power_integral<F: Fn([f64; 2]) -> Option<f64>>(
    region: &ContinuumDomain,
    domain: &ContinuumDomain,
    cutoff: f64,
    lambda: f64,
    radius: F,
) -> f64 {
    let (lo, hi) = region.bounding_box();
    let hx = (hi[0] - lo[0]) / LIMIT_GRID as f64;
    let hy = (hi[1] - lo[1]) / LIMIT_GRID as f64;
    let power = 2.0 * lambda * lambda;
    let mut sum = 0.0;
    for i in 0..LIMIT_GRID {
        for j in 0..LIMIT_GRID {
            let p = [lo[0] + (i as f64 + 0.5) * hx, lo[1] + (j as f64 + 0.5) * hy];
            if !region.contains(p) || domain.boundary_distance(p) <= cutoff {
                continue;
            }
            if let Some(r) = radius(p) {
                sum += r.powf(power);
            }
        }
    }
    sum * hx * hy
}

/// `(1/K̂) Σ_x exp(−t / G(x,x))`, the mean normalized number of unvisited sites.
pub fn avoided_mean(green: &GreenOperator, t: f64, hat_k: f64) -> f64 {
    green.diagonal().iter().map(|g| (-t / g).exp()).sum::<f64>() / hat_k
}

/// [`avoided_mean`] at `t_N` and `K̂_N`.
pub fn avoided_first_moment(green: &GreenOperator, params: &ScaleParams) -> Result<f64> {
    Ok(avoided_mean(green, params.t_n()?, params.hat_k_n()?))
}

/// `μ = δ₀ + Σ_n c_n ℓⁿ dℓ` with `c_n = (α²θ/2)^{n+1} / (n!(n+1)!)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MuMeasure {
    pub theta: f64,
}

const SERIES_TOL: f64 = 1e-14;

impl MuMeasure {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(Error::BadParameterRange(format!("θ = {theta} must be positive")));
        }
        Ok(MuMeasure { theta })
    }

    /// `α²θ/2 = 4πθ`.
    pub fn rate(&self) -> f64 {
        alpha().powi(2) * self.theta / 2.0
    }

    pub fn coefficient(&self, n: u32) -> f64 {
        let a = self.rate();
        (0..=n).fold(a, |c, k| if k == 0 { c } else { c * a / (f64::from(k) * f64::from(k + 1)) })
    }

    pub fn density(&self, l: f64) -> f64 {
        if l < 0.0 {
            return 0.0;
        }
        let a = self.rate();
        let mut term = a;
        let mut sum = term;
        let mut n = 0.0;
        loop {
            let ratio = a * l / ((n + 1.0) * (n + 2.0));
            term *= ratio;
            n += 1.0;
            if ratio < 1.0 && term < SERIES_TOL * sum {
                return sum;
            }
            sum += term;
        }
    }

    /// `∫ e^{−sℓ} μ(dℓ) = e^{α²θ/(2s)}`.
    pub fn laplace(&self, s: f64) -> f64 {
        (self.rate() / s).exp()
    }

    /// Atom plus the quadrature of `e^{−sℓ}` against the density.
    pub fn laplace_by_quadrature(&self, s: f64) -> f64 {
        let quad = AdaptiveIntegrator::default();
        let f = |l: f64| (-s * l).exp() * self.density(l);
        let width = 4.0 / s;
        let mut total = 0.0;
        let mut k = 0.0;
        loop {
            let piece = quad.integrate(k * width, (k + 1.0) * width, &f);
            total += piece;
            k += 1.0;
            if piece < 1e-17 * total && k * width * s > 50.0 {
                break;
            }
        }
        1.0 + total
    }

    /// `μ([0, ℓ])`.
    pub fn cdf(&self, l: f64) -> f64 {
        if l < 0.0 {
            return 0.0;
        }
        1.0 + self.density_mass(0.0, l)
    }

    /// `∫_lo^hi` of the density, without the atom.
    pub fn density_mass(&self, lo: f64, hi: f64) -> f64 {
        AdaptiveIntegrator::default().integrate(lo.max(0.0), hi, &|l| self.density(l))
    }
}

/// A light-point value histogram with its μ comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct LightHistogram {
    /// `(lo, hi, empirical, μ target)`; the first bin is the atom `[0, 0]`.
    pub bins: Vec<(f64, f64, f64, f64)>,
    /// Empirical atom mass divided by μ's atom weight.
    pub zero_ratio: f64,
    /// Fitted `c` in `E ϑ(D × [0, b]) ≤ c |D_N| / N²`.
    pub bound_constant: f64,
}

impl LightHistogram {
    /// CSV `bin_lo,bin_hi,empirical,mu_target`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["bin_lo", "bin_hi", "empirical", "mu_target"]);
        for &(lo, hi, e, m) in &self.bins {
            t.push(vec![num(lo), num(hi), num(e), num(m)]);
        }
        t
    }
}

/// Histogram of `L_t(x) ≤ b` over all sites and replicas, normalized by `K̂_N · replicas`.
pub fn light_point_histogram(
    profiles: &[LocalTimeProfile],
    params: &ScaleParams,
    cap: f64,
    bins: usize,
) -> Result<LightHistogram> {
    if profiles.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    if !(cap > 0.0) || bins == 0 {
        return Err(Error::BadParameterRange("need b > 0 and at least one bin".into()));
    }
    let sites = profiles[0].local_time.len();
    if profiles.iter().any(|p| p.local_time.len() != sites || p.t != profiles[0].t) {
        return Err(Error::InvariantViolation("profiles must share domain and t".into()));
    }
    let norm = params.hat_k_n()? * profiles.len() as f64;
    let width = cap / bins as f64;
    let mut zero = 0usize;
    let mut counts = vec![0usize; bins];
    for p in profiles {
        for &v in &p.local_time {
            if v == 0.0 {
                zero += 1;
            } else if v <= cap {
                counts[(((v / width).ceil() as usize).max(1) - 1).min(bins - 1)] += 1;
            }
        }
    }
    let mu = MuMeasure::new(params.theta()?)?;
    let mut out = vec![(0.0, 0.0, zero as f64 / norm, 1.0)];
    for (k, &c) in counts.iter().enumerate() {
        let lo = k as f64 * width;
        let hi = if k + 1 == bins { cap } else { (k + 1) as f64 * width };
        out.push((lo, hi, c as f64 / norm, mu.density_mass(lo, hi)));
    }
    let total: f64 = out.iter().map(|b| b.2).sum();
    let n = f64::from(params.n);
    Ok(LightHistogram {
        zero_ratio: out[0].2,
        bound_constant: total * n * n / sites as f64,
        bins: out,
    })
}

/// Normalized mean mass of light points with value in `(0, ε]`, for each `ε`.
pub fn small_value_masses(profiles: &[LocalTimeProfile], params: &ScaleParams, eps: &[f64]) -> Result<Vec<f64>> {
    if profiles.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let norm = params.hat_k_n()? * profiles.len() as f64;
    Ok(eps
        .iter()
        .map(|&e| {
            profiles
                .iter()
                .flat_map(|p| &p.local_time)
                .filter(|&&v| v > 0.0 && v <= e)
                .count() as f64
                / norm
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgff::sample_fields;
    use crate::green::solve_green;
    use crate::lattice::{discretize, WiredDomain};
    use crate::rng::Stream;
    use crate::stats::{mean, variance};
    use crate::walk::{sample_local_times, HoldingMode};

    fn rel(a: f64, b: f64) -> f64 {
        (a / b - 1.0).abs()
    }

    #[test]
    fn scale_constants() {
        let p = scale_params(100, Exponent::Lambda(0.5), Overrides::default()).unwrap();
        let k = p.k_n.unwrap();
        assert!(rel(k, 100f64.powf(1.5) / 100f64.ln().sqrt()) < 1e-12);
        assert!((k - 465.99).abs() < 0.01);
        assert!(rel(k * 100f64.ln().sqrt() / 1e4, (-2.0 * 0.25 * 100f64.ln()).exp()) < 1e-12);
        let q = scale_params(100, Exponent::Theta(0.3), Overrides::default()).unwrap();
        assert!(rel(q.hat_k_n.unwrap(), 100f64.powf(1.4)) < 1e-12);
        assert!((q.hat_k_n.unwrap() - 630.96).abs() < 0.01);
        let m = scale_params(512, Exponent::Theta(1.0), Overrides::default()).unwrap();
        assert!((m.m_n - 4.4297).abs() < 1e-4);
        assert!(scale_params(3, Exponent::Theta(1.0), Overrides::default()).is_err());
        assert!(scale_params(100, Exponent::Lambda(1.0), Overrides::default()).is_err());
        assert!(matches!(q.k_n(), Err(Error::KindMismatch(_))));
    }

    #[test]
    fn overrides_reproduce_from_fields() {
        let o = Overrides { a_n: Some(3.0), t_n: Some(5.0) };
        let p = scale_params(64, Exponent::Lambda(0.4), o).unwrap();
        let l = 64f64.ln();
        assert!(rel(p.k_n.unwrap(), 4096.0 * (-9.0 / (2.0 * G * l)).exp() / l.sqrt()) < 1e-12);
        let q = scale_params(64, Exponent::Theta(0.4), o).unwrap();
        assert!(rel(q.hat_k_n.unwrap(), 4096.0 * (-5.0 / (G * l)).exp()) < 1e-12);
    }

    #[test]
    fn point_measures() {
        let d = WiredDomain::square(6);
        let g = solve_green(&d).unwrap();
        let h = &sample_fields(&g, Stream::root(3), 1)[0];
        let huge = Overrides { a_n: Some(1e300), t_n: None };
        let p = scale_params(7, Exponent::Lambda(0.3), huge).unwrap();
        let m = build_point_measure(&d, PointSource::Field(h), &p, PointKind::Thick).unwrap();
        assert_eq!(m.atoms.len(), 36);
        assert_eq!(m.mass_between(0.0, f64::INFINITY), 0.0);

        let q = scale_params(7, Exponent::Theta(0.3), Overrides::default()).unwrap();
        let l0 = &sample_local_times(&d, 0.0, HoldingMode::Exponential, Stream::root(4), 1).unwrap()[0];
        let a = build_point_measure(&d, PointSource::LocalTime(l0), &q, PointKind::Avoided).unwrap();
        assert!(rel(a.total_mass(), 36.0 / q.hat_k_n.unwrap()) < 1e-15);
        assert!(matches!(
            build_point_measure(&d, PointSource::Field(h), &q, PointKind::Avoided),
            Err(Error::KindMismatch(_))
        ));
        let light = build_point_measure(&d, PointSource::LocalTime(l0), &q, PointKind::Light { cap: 1.0 }).unwrap();
        let text = String::from_utf8(light.to_table().to_bytes()).unwrap();
        assert!(text.starts_with("x,y,value,weight\r\n"));
        assert_eq!(text.lines().count(), 37);
    }

    #[test]
    fn thick_mass_matches_exact_mean() {
        let d = WiredDomain::square(64);
        let g = solve_green(&d).unwrap();
        let p = scale_params(65, Exponent::Lambda(0.3), Overrides::default()).unwrap();
        let square = ContinuumDomain::unit_square();
        let exact = thick_first_moment(&g, &p, &square, None, 0.0).unwrap().exact;
        let masses: Vec<f64> = sample_fields(&g, Stream::root(8), 200)
            .iter()
            .map(|h| {
                build_point_measure(&d, PointSource::Field(h), &p, PointKind::Thick)
                    .unwrap()
                    .mass_between(0.0, f64::INFINITY)
            })
            .collect();
        let se = (variance(&masses) / 200.0).sqrt();
        assert!((mean(&masses) - exact).abs() < 4.0 * se, "{} {exact} {se}", mean(&masses));
        assert!(rel(mean(&masses), exact) < 0.25);
    }

    #[test]
    fn thick_small_lambda_edge() {
        let d = WiredDomain::square(8);
        let g = solve_green(&d).unwrap();
        let p = scale_params(9, Exponent::Lambda(1e-9), Overrides::default()).unwrap();
        let m = thick_first_moment(&g, &p, &ContinuumDomain::unit_square(), None, 0.0).unwrap();
        assert!(rel(m.exact, 32.0 / p.k_n.unwrap()) < 1e-6);
    }

    #[test]
    fn thick_shift_law() {
        let disc = ContinuumDomain::unit_disc();
        let target = (-alpha() * 0.3).exp();
        let mut gaps = Vec::new();
        for n in [32, 64] {
            let d = discretize(&disc, n).unwrap();
            let g = solve_green(&d).unwrap();
            let p = scale_params(n, Exponent::Lambda(0.3), Overrides::default()).unwrap();
            let m0 = thick_first_moment(&g, &p, &disc, None, 0.0).unwrap();
            let m1 = thick_first_moment(&g, &p, &disc, None, 1.0).unwrap();
            assert!(rel(m1.limit / m0.limit, target) < 1e-12);
            gaps.push((m1.exact / m0.exact - target).abs());
            if n == 64 {
                // the sub-region {x > 0} carries half the mass by symmetry
                let half = ContinuumDomain::Rectangle { lower: [0.0, -1.0], upper: [1.0, 1.0] };
                let mh = thick_first_moment(&g, &p, &disc, Some(&half), 0.0).unwrap();
                assert!(rel(mh.limit, m0.limit / 2.0) < 1e-3);
                assert!(rel(mh.exact, m0.exact / 2.0) < 0.05);
            }
        }
        assert!(gaps[1] < gaps[0], "{gaps:?}");
    }

    #[test]
    fn limit_integral_of_disc_power() {
        // ∫_disc (1 − |x|²)^{2λ²} dx = π / (2λ² + 1)
        let disc = ContinuumDomain::unit_disc();
        let v = conformal_power_integral(&disc, &disc, 0.0, 0.5, |p| Some(1.0 - p[0] * p[0] - p[1] * p[1]));
        assert!(rel(v, PI / 1.5) < 1e-3);
    }

    #[test]
    fn avoided_single_site() {
        let d = WiredDomain::square(1);
        let g = solve_green(&d).unwrap();
        assert!(rel(avoided_mean(&g, 1.0, 1.0), (-4.0f64).exp()) < 1e-15);
    }

    #[test]
    fn avoided_count_decreases_in_theta() {
        let d = WiredDomain::square(31);
        let g = solve_green(&d).unwrap();
        let raw = |theta: f64| {
            let p = scale_params(32, Exponent::Theta(theta), Overrides::default()).unwrap();
            avoided_first_moment(&g, &p).unwrap() * p.hat_k_n.unwrap()
        };
        assert!(raw(1.5) < raw(0.3));
        let direct: f64 = crate::walk::avoidance_prob_exact(&g, raw_t(32, 0.3)).iter().sum();
        assert!(rel(raw(0.3), direct) < 1e-12);
    }

    fn raw_t(n: u32, theta: f64) -> f64 {
        2.0 * G * theta * f64::from(n).ln().powi(2)
    }

    #[test]
    fn mu_series_and_laplace() {
        let mu = MuMeasure::new(0.1).unwrap();
        assert!((mu.density(0.0) - 4.0 * PI * 0.1).abs() < 1e-12);
        assert!((mu.laplace(1.0) - 3.5136).abs() < 1e-4);
        for s in [0.5, 1.0, 2.0] {
            assert!((mu.laplace_by_quadrature(s) - mu.laplace(s)).abs() < 1e-6 * mu.laplace(s));
        }
        assert!((mu.laplace(1e9) - 1.0).abs() < 1e-8);
        assert!(mu.laplace(1e-3) > 1e100);
        assert!((mu.coefficient(2) - mu.rate().powi(3) / 12.0).abs() < 1e-15);
        // series against its own coefficients at moderate ℓ
        let l: f64 = 0.7;
        let direct: f64 = (0..40).map(|n| mu.coefficient(n) * l.powi(n as i32)).sum();
        assert!(rel(mu.density(l), direct) < 1e-13);
        assert_eq!(mu.cdf(0.0), 1.0);
        assert!(mu.cdf(2.0) > mu.cdf(1.0));
        assert!(mu.density(50.0) > 0.0);
    }

    #[test]
    fn light_histogram_degenerate_and_layout() {
        let d = WiredDomain::square(5);
        let q = scale_params(6, Exponent::Theta(0.3), Overrides::default()).unwrap();
        let prof = sample_local_times(&d, 0.0, HoldingMode::Exponential, Stream::root(5), 3).unwrap();
        let h = light_point_histogram(&prof, &q, 1.0, 4).unwrap();
        assert_eq!(h.bins.len(), 5);
        assert!(rel(h.bins[0].2, 25.0 / q.hat_k_n.unwrap()) < 1e-15);
        assert!(h.bins[1..].iter().all(|b| b.2 == 0.0));
        let text = String::from_utf8(h.to_table().to_bytes()).unwrap();
        assert!(text.starts_with("bin_lo,bin_hi,empirical,mu_target\r\n"));

        let prof = sample_local_times(&d, 2.0, HoldingMode::Exponential, Stream::root(6), 50).unwrap();
        let h = light_point_histogram(&prof, &q, 10.0, 10).unwrap();
        let small = small_value_masses(&prof, &q, &[0.25, 0.5, 1.0]).unwrap();
        assert!(small[0] <= small[1] && small[1] <= small[2]);
        let binned: f64 = h.bins.iter().map(|b| b.2).sum();
        let total = prof.iter().flat_map(|p| &p.local_time).filter(|&&v| v <= 10.0).count() as f64;
        assert!(rel(binned, total / (50.0 * q.hat_k_n.unwrap())) < 1e-12);
    }
}
