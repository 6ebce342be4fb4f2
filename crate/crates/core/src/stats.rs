//! Shared statistical checks: Kolmogorov–Smirnov tests, confidence intervals
//! and a few moment helpers.

use crate::error::{Error, Result};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use std::f64::consts::{PI, SQRT_2};

/// A batch of scalar observations together with the stream that produced it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleSet {
    pub values: Vec<f64>,
    pub stream_tag: String,
}

impl SampleSet {
    pub fn new(values: Vec<f64>, stream_tag: impl Into<String>) -> Self {
        SampleSet {
            values,
            stream_tag: stream_tag.into(),
        }
    }
}

impl AsRef<[f64]> for SampleSet {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanCi {
    pub mean: f64,
    pub halfwidth: f64,
    pub std_error: f64,
    pub n: usize,
}

const KS_MIN_SAMPLES: usize = 25;
const KOLMOGOROV_TERMS: usize = 100;
const KOLMOGOROV_TOL: f64 = 1e-10;

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::BadParameterRange("sample contains non-finite values".into()))
    }
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// P(K > lambda) for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-theta form converges fast for small arguments.
        let mut cdf = 0.0;
        let pref = (2.0 * PI).sqrt() / lambda;
        for k in 1..=KOLMOGOROV_TERMS {
            let odd = (2 * k - 1) as f64;
            let term = (-(odd * odd) * PI * PI / (8.0 * lambda * lambda)).exp();
            cdf += term;
            if term < KOLMOGOROV_TOL * cdf.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        (1.0 - pref * cdf).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        for k in 1..=KOLMOGOROV_TERMS {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += if k % 2 == 1 { term } else { -term };
            if term < KOLMOGOROV_TOL * sum.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: impl AsRef<[f64]>, b: impl AsRef<[f64]>) -> Result<KsResult> {
    let (a, b) = (a.as_ref(), b.as_ref());
    for s in [a, b] {
        if s.len() < KS_MIN_SAMPLES {
            return Err(Error::TooFewSamples {
                needed: KS_MIN_SAMPLES,
                got: s.len(),
            });
        }
        check_finite(s)?;
    }
    let (xa, xb) = (sorted(a), sorted(b));
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let v = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= v {
            i += 1;
        }
        while j < xb.len() && xb[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(ne.sqrt() * d),
    })
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(a: impl AsRef<[f64]>, cdf: F) -> Result<KsResult> {
    let a = a.as_ref();
    if a.len() < KS_MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: KS_MIN_SAMPLES,
            got: a.len(),
        });
    }
    check_finite(a)?;
    let xs = sorted(a);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(n.sqrt() * d),
    })
}

/// Sample mean with a normal-approximation confidence interval at `level`.
pub fn mean_ci(a: impl AsRef<[f64]>, level: f64) -> Result<MeanCi> {
    let a = a.as_ref();
    if a.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: a.len() });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::BadParameterRange(format!("confidence level {level} not in (0,1)")));
    }
    check_finite(a)?;
    let n = a.len();
    let m = mean(a);
    let se = (variance(a) / n as f64).sqrt();
    let z = normal_quantile(0.5 + 0.5 * level);
    Ok(MeanCi {
        mean: m,
        halfwidth: z * se,
        std_error: se,
        n,
    })
}

pub fn mean(a: &[f64]) -> f64 {
    a.iter().sum::<f64>() / a.len() as f64
}

/// Unbiased sample variance.
pub fn variance(a: &[f64]) -> f64 {
    let m = mean(a);
    a.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (a.len() as f64 - 1.0)
}

/// Unbiased sample covariance.
pub fn covariance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ma, mb) = (mean(a), mean(b));
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / (a.len() as f64 - 1.0)
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    covariance(a, b) / (variance(a) * variance(b)).sqrt()
}

/// Sample skewness (moment estimator).
pub fn skewness(a: &[f64]) -> f64 {
    let n = a.len() as f64;
    let m = mean(a);
    let m2 = a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = a.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

/// Standard error of the unbiased sample variance, from the fourth central moment.
pub fn variance_std_error(a: &[f64]) -> f64 {
    let n = a.len() as f64;
    let m = mean(a);
    let m2 = a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = a.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    ((m4 - m2 * m2 * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Upper tail P(Z >= x) of the standard normal, accurate far into the tail.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Two-sided p-value of a z-score.
pub fn z_p_value(z: f64) -> f64 {
    2.0 * normal_sf(z.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use rand::Rng;
    use rand_distr::{Distribution, Exp1, StandardNormal};

    fn normals(seed: u64, n: usize, shift: f64) -> Vec<f64> {
        let mut rng = Stream::root(seed).rng();
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z + shift
            })
            .collect()
    }

    #[test]
    fn identical_samples() {
        let a = normals(1, 100, 0.0);
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn shifted_normals_are_rejected() {
        let r = ks_two_sample(normals(2, 1000, 0.0), normals(3, 1000, 3.0)).unwrap();
        assert!(r.p_value < 1e-6, "{r:?}");
    }

    #[test]
    fn null_rejection_rate_is_calibrated() {
        let rejections = (0..100)
            .filter(|&k| {
                let r = ks_two_sample(normals(100 + 2 * k, 1000, 0.0), normals(101 + 2 * k, 1000, 0.0)).unwrap();
                r.p_value < 0.05
            })
            .count();
        let frac = rejections as f64 / 100.0;
        assert!((0.01..=0.12).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn too_few_samples() {
        let a = vec![0.0; 10];
        let b = vec![0.0; 100];
        assert_eq!(
            ks_two_sample(&a, &b),
            Err(Error::TooFewSamples { needed: 25, got: 10 })
        );
        assert!(mean_ci([1.0], 0.95).is_err());
    }

    #[test]
    fn kolmogorov_branches_agree() {
        // both series are valid at the switch point
        let lam: f64 = 1.18;
        let mut alt = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let t = (-2.0 * kf * kf * lam * lam).exp();
            alt += if k % 2 == 1 { t } else { -t };
        }
        assert!((kolmogorov_survival(lam - 1e-12) - 2.0 * alt).abs() < 1e-9);
        // classic critical value: P(K > 1.358) ≈ 0.05
        assert!((kolmogorov_survival(1.358) - 0.05).abs() < 5e-4);
    }

    #[test]
    fn one_sample_against_normal() {
        let r = ks_one_sample(normals(9, 5000, 0.0), normal_cdf).unwrap();
        assert!(r.p_value > 0.01);
        let r = ks_one_sample(normals(9, 5000, 0.2), normal_cdf).unwrap();
        assert!(r.p_value < 1e-6);
    }

    #[test]
    fn mean_ci_cases() {
        let c = mean_ci([2.5; 10], 0.95).unwrap();
        assert_eq!(c.mean, 2.5);
        assert_eq!(c.halfwidth, 0.0);

        let mut rng = Stream::root(5).rng();
        let e: Vec<f64> = (0..10_000).map(|_| Exp1.sample(&mut rng)).collect();
        let c = mean_ci(&e, 0.95).unwrap();
        assert!((c.mean - 1.0).abs() < 4.0 * c.std_error);

        let c99 = mean_ci(&e, 0.99).unwrap();
        assert!(c99.halfwidth > c.halfwidth);
    }

    #[test]
    fn ci_shrinks_like_inverse_sqrt_n() {
        let mut rng = Stream::root(11).rng();
        let a: Vec<f64> = (0..4000).map(|_| rng.random::<f64>()).collect();
        let h1 = mean_ci(&a[..1000], 0.95).unwrap().halfwidth;
        let h4 = mean_ci(&a, 0.95).unwrap().halfwidth;
        assert!((h4 / h1 - 0.5).abs() < 0.1);
    }

    #[test]
    fn normal_tail_is_accurate() {
        assert!((normal_sf(0.0) - 0.5).abs() < 1e-15);
        // Q(5) = 2.866515718791939e-7
        assert!((normal_sf(5.0) / 2.866515718791939e-7 - 1.0).abs() < 1e-10);
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-9);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn statistic_in_unit_interval(a in prop::collection::vec(-10.0f64..10.0, 25..80),
                                          b in prop::collection::vec(-10.0f64..10.0, 25..80)) {
                let r = ks_two_sample(&a, &b).unwrap();
                prop_assert!((0.0..=1.0).contains(&r.statistic));
                prop_assert!((0.0..=1.0).contains(&r.p_value));
            }

            #[test]
            fn survival_is_monotone(x in 0.0f64..3.0, dx in 0.0f64..1.0) {
                prop_assert!(kolmogorov_survival(x + dx) <= kolmogorov_survival(x) + 1e-12);
            }
        }
    }
}
