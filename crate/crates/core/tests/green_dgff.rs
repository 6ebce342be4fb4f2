use gfflab_core::dgff::{gibbs_markov_split, sample_field};
use gfflab_core::green::{conformal_radius, continuum_green_disc, green_via_kernel, harmonic_measure, solve_green};
use gfflab_core::lattice::{discretize, ContinuumDomain, Site, WiredDomain, RHO};
use gfflab_core::potential::{c0, PotentialKernel};
use gfflab_core::rng::Stream;
use gfflab_core::stats::correlation;
use rand::Rng;
use rayon::prelude::*;
use std::f64::consts::PI;

const G: f64 = 1.0 / (2.0 * PI);

#[test]
fn harmonic_measure_matches_exit_frequencies() {
    let d = WiredDomain::square(15);
    let c = d.require_index(Site::new(8, 8)).unwrap();
    let table = harmonic_measure(&d, &[c]).unwrap();
    let slot_of = |site: usize, dir: usize| {
        table
            .slots
            .iter()
            .position(|s| s.site as usize == site && s.direction as usize == dir)
            .unwrap()
    };
    let walks = 1_000_000u64;
    let chunks = 100u64;
    let root = Stream::root(21);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = root.child(k).rng();
            let mut counts = vec![0u64; table.slots.len()];
            for _ in 0..walks / chunks {
                let mut x = c;
                loop {
                    let dir = rng.random_range(0..4usize);
                    let next = d.neighbors(x)[dir];
                    if next == RHO {
                        counts[slot_of(x, dir)] += 1;
                        break;
                    }
                    x = next as usize;
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; table.slots.len()],
            |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect(),
        );
    let n = walks as f64;
    for (z, &h) in table.row(0).iter().enumerate() {
        let freq = counts[z] as f64 / n;
        let sigma = (h * (1.0 - h) / n).sqrt();
        assert!((freq - h).abs() <= 4.0 * sigma, "slot {z}: H={h} freq={freq}");
    }
}

#[test]
fn square_conformal_radius_refines() {
    let square = ContinuumDomain::unit_square();
    let coarse = conformal_radius(&square, 64, [0.5, 0.5]).unwrap();
    let fine = conformal_radius(&square, 256, [0.5, 0.5]).unwrap();
    assert!((coarse / fine - 1.0).abs() < 0.02, "{coarse} vs {fine}");
}

#[test]
fn disc_green_converges_to_continuum() {
    let disc = ContinuumDomain::unit_disc();
    let (x, y) = ([0.2, 0.1], [-0.3, 0.25]);
    let target = continuum_green_disc(x, y).unwrap();
    let gap = |n: u32| {
        let d = discretize(&disc, n).unwrap();
        let g = solve_green(&d).unwrap();
        let site = |p: [f64; 2]| {
            d.require_index(Site::new((p[0] * f64::from(n)).floor() as i32, (p[1] * f64::from(n)).floor() as i32))
                .unwrap()
        };
        (g.entry(site(x), site(y)) - target).abs()
    };
    let (coarse, fine) = (gap(64), gap(256));
    assert!(fine < coarse, "gap {coarse} at N=64, {fine} at N=256");
}

#[test]
fn square_center_follows_log_trend() {
    let d = WiredDomain::square(31);
    let c = d.require_index(Site::new(16, 16)).unwrap();
    let via_kernel = green_via_kernel(&d, &PotentialKernel::new(), c, c).unwrap();
    let direct = solve_green(&d).unwrap().diag(c);
    let radius = conformal_radius(&ContinuumDomain::unit_square(), 256, [0.5, 0.5]).unwrap();
    let trend = G * 32f64.ln() + c0() + G * radius.ln();
    assert!((via_kernel - direct).abs() < 1e-9);
    assert!((via_kernel - trend).abs() < 2e-3, "G(c,c)={via_kernel} trend={trend}");
}

fn cross_domains() -> (WiredDomain, WiredDomain) {
    let v = WiredDomain::square(15);
    let u = WiredDomain::from_sites(
        16,
        v.sites().iter().copied().filter(|s| s.x != 8 && s.y != 8),
    )
    .unwrap();
    (v, u)
}

#[test]
fn cross_residual_covariance_matches_subdomain_green() {
    let (v, u) = cross_domains();
    let gv = solve_green(&v).unwrap();
    let gu = solve_green(&u).unwrap();
    let nu = u.len();
    let draws = 100_000u64;
    let chunks = 50u64;
    let root = Stream::root(22);
    let pairs = nu * (nu + 1) / 2;
    let (sum, sum2) = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut sum = vec![0.0; pairs];
            let mut sum2 = vec![0.0; pairs];
            for i in 0..draws / chunks {
                let h = sample_field(&gv, root.child(k * draws + i));
                let (_, r) = gibbs_markov_split(&v, &gu, &h).unwrap();
                let mut p = 0;
                for x in 0..nu {
                    for y in x..nu {
                        let q = r.values[x] * r.values[y];
                        sum[p] += q;
                        sum2[p] += q * q;
                        p += 1;
                    }
                }
            }
            (sum, sum2)
        })
        .reduce(
            || (vec![0.0; pairs], vec![0.0; pairs]),
            |a, b| {
                (
                    a.0.iter().zip(&b.0).map(|(x, y)| x + y).collect(),
                    a.1.iter().zip(&b.1).map(|(x, y)| x + y).collect(),
                )
            },
        );
    let m = draws as f64;
    let mut p = 0;
    let mut worst: f64 = 0.0;
    for x in 0..nu {
        for y in x..nu {
            let cov = sum[p] / m;
            let se = ((sum2[p] / m - cov * cov) / (m - 1.0)).sqrt();
            worst = worst.max((cov - gu.entry(x, y)).abs() / se);
            p += 1;
        }
    }
    assert!(worst <= 5.0, "max |Cov - G^U| / SE = {worst}");
}

#[test]
fn binding_field_and_residual_are_uncorrelated() {
    let (v, u) = cross_domains();
    let gv = solve_green(&v).unwrap();
    let gu = solve_green(&u).unwrap();
    let nu = u.len();
    let draws = 100_000u64;
    let root = Stream::root(23);
    let mut coef = Stream::root(24).rng();
    let tests: Vec<(Vec<f64>, Vec<f64>)> = (0..5)
        .map(|_| {
            let f = (0..nu).map(|_| coef.random::<f64>() - 0.5).collect();
            let g = (0..nu).map(|_| coef.random::<f64>() - 0.5).collect();
            (f, g)
        })
        .collect();
    let pairings: Vec<Vec<(f64, f64)>> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let h = sample_field(&gv, root.child(i));
            let (phi, r) = gibbs_markov_split(&v, &gu, &h).unwrap();
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
            tests.iter().map(|(f, g)| (dot(f, &phi.values), dot(g, &r.values))).collect()
        })
        .collect();
    for k in 0..tests.len() {
        let a: Vec<f64> = pairings.iter().map(|p| p[k].0).collect();
        let b: Vec<f64> = pairings.iter().map(|p| p[k].1).collect();
        let rho = correlation(&a, &b);
        assert!(rho.abs() <= 4.0 / (draws as f64).sqrt(), "pair {k}: correlation {rho}");
    }
}
