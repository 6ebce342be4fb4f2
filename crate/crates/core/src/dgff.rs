//! Exact sampling of the discrete Gaussian free field and the Gibbs–Markov split.

use crate::error::{Error, Result};
use crate::export::{num, site_heatmap, Pgm, Table};
use crate::green::GreenOperator;
use crate::lattice::{WiredDomain, RHO};
use crate::rng::Stream;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// One DGFF realization; `h_ρ = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    pub values: Vec<f64>,
    pub rho_value: f64,
    pub stream_key: u64,
}

impl FieldSample {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `⟨f, h⟩`.
    pub fn pair(&self, f: &[f64]) -> f64 {
        self.values.iter().zip(f).map(|(h, f)| h * f).sum()
    }

    /// CSV `ix,iy,h`.
    pub fn to_table(&self, domain: &WiredDomain) -> Table {
        let mut t = Table::new(&["ix", "iy", "h"]);
        for (s, &h) in domain.sites().iter().zip(&self.values) {
            t.push(vec![s.x.to_string(), s.y.to_string(), num(h)]);
        }
        t
    }

    pub fn heatmap(&self, domain: &WiredDomain) -> Pgm {
        site_heatmap(domain, &self.values)
    }
}

/// `h = L⁻ᵀ ξ` with `ξ` i.i.d. standard normal drawn from `stream`, so `Cov(h) = G`.
pub fn sample_field(green: &GreenOperator, stream: Stream) -> FieldSample {
    let mut rng = stream.rng();
    let xi: Vec<f64> = (0..green.len()).map(|_| rng.sample(StandardNormal)).collect();
    FieldSample {
        values: green.factorization().correlate(&xi),
        rho_value: 0.0,
        stream_key: stream.key(),
    }
}

/// `count` independent draws on streams `stream.child(0..count)`, in index order.
pub fn sample_fields(green: &GreenOperator, stream: Stream, count: usize) -> Vec<FieldSample> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| sample_field(green, stream.child(i)))
        .collect()
}

/// `φ^{V,U}` on the sites of `U`, in `U`'s site order.
#[derive(Clone, Debug, PartialEq)]
pub struct BindingField {
    pub values: Vec<f64>,
}

/// Position in `V` of every site of `U`.
fn embedding(v: &WiredDomain, u: &WiredDomain) -> Result<Vec<usize>> {
    u.sites()
        .iter()
        .map(|&s| {
            v.index_of(s)
                .ok_or_else(|| Error::NotASubdomain(format!("site ({}, {}) of U is not in V", s.x, s.y)))
        })
        .collect()
}

/// Boundary data of the Dirichlet problem on `U`: for `x ∈ U`, the sum of `h(y)` over
/// neighbors `y ∈ V ∖ U` (neighbors outside `V` are ρ and contribute 0).
fn boundary_data(v: &WiredDomain, u: &WiredDomain, embed: &[usize], h: &[f64]) -> Vec<f64> {
    (0..u.len())
        .map(|x| {
            let vx = embed[x];
            let mut acc = 0.0;
            for (d, &un) in u.neighbors(x).iter().enumerate() {
                if un == RHO {
                    let vn = v.neighbors(vx)[d];
                    if vn != RHO {
                        acc += h[vn as usize];
                    }
                }
            }
            acc
        })
        .collect()
}

/// Splits `h = h^V` into the binding field `φ` (harmonic on `U`, equal to `h` off `U`)
/// and the residual `h − φ` on `U`.
pub fn gibbs_markov_split(v: &WiredDomain, u: &GreenOperator, h: &FieldSample) -> Result<(BindingField, FieldSample)> {
    if h.len() != v.len() {
        return Err(Error::InvariantViolation("field length differs from V".into()));
    }
    let ud = u.domain();
    let embed = embedding(v, ud)?;
    let phi = u.apply(&boundary_data(v, ud, &embed, &h.values));
    let residual = embed.iter().zip(&phi).map(|(&i, p)| h.values[i] - p).collect();
    Ok((
        BindingField { values: phi },
        FieldSample {
            values: residual,
            rho_value: 0.0,
            stream_key: h.stream_key,
        },
    ))
}

impl BindingField {
    /// `max_{x∈U} |φ(x) − ¼ Σ_{y~x} φ(y)|` with `φ = h` on `V ∖ U` and 0 at ρ.
    pub fn harmonic_defect(&self, v: &WiredDomain, u: &WiredDomain, h: &FieldSample) -> Result<f64> {
        let embed = embedding(v, u)?;
        let b = boundary_data(v, u, &embed, &h.values);
        Ok((0..u.len())
            .map(|x| {
                let inner: f64 = u
                    .neighbors(x)
                    .iter()
                    .filter(|&&y| y != RHO)
                    .map(|&y| self.values[y as usize])
                    .sum();
                (self.values[x] - 0.25 * (inner + b[x])).abs()
            })
            .fold(0.0, f64::max))
    }
}

/// Exact covariances implied by the split, computed without sampling.
#[derive(Clone, Debug)]
pub struct SplitCovariances {
    pub n_u: usize,
    /// `Cov(h − φ)`, row-major `n_u × n_u`.
    pub residual: Vec<f64>,
    /// `Cov(φ)` on `U × U`.
    pub binding: Vec<f64>,
    /// `G^U`.
    pub green_u: Vec<f64>,
    /// `G^V` restricted to `U × U`.
    pub green_v: Vec<f64>,
}

impl SplitCovariances {
    /// `max |Cov(h − φ) − G^U|`.
    pub fn residual_error(&self) -> f64 {
        max_gap(&self.residual, &self.green_u)
    }

    /// `max |Cov(φ) − (G^V − G^U)|`.
    pub fn binding_error(&self) -> f64 {
        let target: Vec<f64> = self.green_v.iter().zip(&self.green_u).map(|(a, b)| a - b).collect();
        max_gap(&self.binding, &target)
    }
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// With `φ = K h`, `K = G^U B` (B couples `U` to `V ∖ U`), forms `Cov(φ) = K G^V Kᵀ`
/// and `Cov(h − φ) = (E − K) G^V (E − K)ᵀ` densely. Intended for small domains.
pub fn gibbs_markov_covariances(v: &GreenOperator, u: &GreenOperator) -> Result<SplitCovariances> {
    let vd = v.domain();
    let ud = u.domain();
    let embed = embedding(vd, ud)?;
    let (nv, nu) = (vd.len(), ud.len());
    let gv: Vec<Vec<f64>> = (0..nv).map(|z| v.column(z)).collect();
    let gu: Vec<Vec<f64>> = (0..nu).map(|z| u.column(z)).collect();
    // K row-major nu × nv: φ(x) = Σ_y K[x][y] h(y)
    let mut k = vec![0.0; nu * nv];
    for y in 0..nv {
        let mut e = vec![0.0; nv];
        e[y] = 1.0;
        let b = boundary_data(vd, ud, &embed, &e);
        if b.iter().all(|&t| t == 0.0) {
            continue;
        }
        let col = u.apply(&b);
        for x in 0..nu {
            k[x * nv + y] = col[x];
        }
    }
    let mut m = vec![0.0; nu * nv];
    for x in 0..nu {
        for y in 0..nv {
            m[x * nv + y] = -k[x * nv + y];
        }
        m[x * nv + embed[x]] += 1.0;
    }
    let congruence = |op: &[f64]| {
        // op G^V opᵀ
        let mut tmp = vec![0.0; nu * nv];
        for x in 0..nu {
            for (z, gz) in gv.iter().enumerate() {
                tmp[x * nv + z] = op[x * nv..(x + 1) * nv].iter().zip(gz).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; nu * nu];
        for x in 0..nu {
            for y in 0..nu {
                out[x * nu + y] = tmp[x * nv..(x + 1) * nv]
                    .iter()
                    .zip(&op[y * nv..(y + 1) * nv])
                    .map(|(a, b)| a * b)
                    .sum();
            }
        }
        out
    };
    let residual = congruence(&m);
    let binding = congruence(&k);
    let mut green_u = vec![0.0; nu * nu];
    let mut green_v = vec![0.0; nu * nu];
    for x in 0..nu {
        for y in 0..nu {
            green_u[x * nu + y] = gu[y][x];
            green_v[x * nu + y] = gv[embed[y]][embed[x]];
        }
    }
    Ok(SplitCovariances {
        n_u: nu,
        residual,
        binding,
        green_u,
        green_v,
    })
}

/// `𝔤_x(y) = G(x, y) / G(x, x)`.
pub fn coarse_field_gx(green: &GreenOperator, x: usize) -> Vec<f64> {
    let col = green.column(x);
    let gxx = col[x];
    let mut out: Vec<f64> = col.iter().map(|g| g / gxx).collect();
    out[x] = 1.0;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::solve_green;
    use crate::lattice::Site;
    use crate::stats::{ks_one_sample, normal_cdf};

    fn sub_square(lo: i32, hi: i32, scale: u32) -> WiredDomain {
        WiredDomain::from_sites(scale, (lo..=hi).flat_map(|x| (lo..=hi).map(move |y| Site::new(x, y)))).unwrap()
    }

    #[test]
    fn single_site_variance() {
        let d = WiredDomain::square(1);
        let g = solve_green(&d).unwrap();
        let n = 100_000;
        let draws = sample_fields(&g, Stream::root(11).tagged("dgff"), n);
        let var = draws.iter().map(|h| h.values[0].powi(2)).sum::<f64>() / n as f64;
        // Var of the sample second moment is 2σ⁴/n
        let se = (2.0 * 0.25f64.powi(2) / n as f64).sqrt();
        assert!((var - 0.25).abs() < 4.0 * se, "{var}");
        assert!(draws.iter().all(|h| h.rho_value == 0.0));
    }

    #[test]
    fn reproducible_draws() {
        let d = WiredDomain::square(6);
        let g = solve_green(&d).unwrap();
        let a = sample_field(&g, Stream::root(3).child(9));
        let b = sample_field(&g, Stream::root(3).child(9));
        assert_eq!(a, b);
    }

    #[test]
    fn linear_functional_is_normal() {
        let d = WiredDomain::square(6);
        let g = solve_green(&d).unwrap();
        let f: Vec<f64> = (0..d.len()).map(|i| ((i % 5) as f64 - 2.0) * 0.3).collect();
        let var: f64 = f.iter().zip(g.apply(&f)).map(|(a, b)| a * b).sum();
        let draws = sample_fields(&g, Stream::root(5), 20_000);
        let vals: Vec<f64> = draws.iter().map(|h| h.pair(&f)).collect();
        let sd = var.sqrt();
        let ks = ks_one_sample(&vals, |x| normal_cdf(x / sd)).unwrap();
        assert!(ks.p_value > 0.001, "{ks:?}");
    }

    #[test]
    fn split_degenerate_when_u_equals_v() {
        let v = WiredDomain::square(5);
        let gv = solve_green(&v).unwrap();
        let h = sample_field(&gv, Stream::root(1));
        let (phi, res) = gibbs_markov_split(&v, &gv, &h).unwrap();
        assert!(phi.values.iter().all(|&p| p == 0.0));
        assert_eq!(res.values, h.values);
    }

    #[test]
    fn split_is_harmonic_and_rejects_non_subsets() {
        let v = WiredDomain::square(9);
        let u = sub_square(3, 7, 10);
        let gv = solve_green(&v).unwrap();
        let gu = solve_green(&u).unwrap();
        let h = sample_field(&gv, Stream::root(2));
        let (phi, _) = gibbs_markov_split(&v, &gu, &h).unwrap();
        assert!(phi.harmonic_defect(&v, &u, &h).unwrap() < 1e-12);
        let outside = sub_square(8, 11, 12);
        let go = solve_green(&outside).unwrap();
        assert!(matches!(gibbs_markov_split(&v, &go, &h), Err(Error::NotASubdomain(_))));
    }

    #[test]
    fn split_covariances_exact() {
        let v = WiredDomain::square(7);
        let u = sub_square(3, 5, 8);
        let cov = gibbs_markov_covariances(&solve_green(&v).unwrap(), &solve_green(&u).unwrap()).unwrap();
        assert!(cov.residual_error() < 1e-9);
        assert!(cov.binding_error() < 1e-9);
    }

    #[test]
    fn coarse_field() {
        let d = WiredDomain::square(9);
        let g = solve_green(&d).unwrap();
        let x = d.require_index(Site::new(3, 6)).unwrap();
        let gx = coarse_field_gx(&g, x);
        assert_eq!(gx[x], 1.0);
        assert!(gx.iter().all(|&v| (0.0..=1.0).contains(&v)));
        for y in 0..d.len() {
            if y == x {
                continue;
            }
            let nb: f64 = d.neighbors(y).iter().filter(|&&z| z != RHO).map(|&z| gx[z as usize]).sum();
            assert!((gx[y] - 0.25 * nb).abs() < 1e-9);
        }
        let single = WiredDomain::square(1);
        assert_eq!(coarse_field_gx(&solve_green(&single).unwrap(), 0), vec![1.0]);
    }
}
