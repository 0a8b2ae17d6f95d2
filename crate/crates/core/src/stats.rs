//! Statistical backend: Kolmogorov–Smirnov tests, moment estimates with
//! standard errors, weighted regression and bootstrap.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const KS_MIN_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub n: usize,
    /// `sup |F_n - F|`.
    pub distance: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov–Smirnov test against a continuous `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult> {
    if samples.len() < KS_MIN_SAMPLES {
        return Err(Error::TooFewSamples { got: samples.len(), min: KS_MIN_SAMPLES });
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("KS samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let distance = sup_distance_sorted(&sorted, cdf);
    let n = sorted.len();
    Ok(KsResult { n, distance, p_value: kolmogorov_p_value(n, distance) })
}

/// `sup_x |F_n(x) - F(x)|` for sorted samples, checking both one-sided
/// limits at every jump.
pub fn sup_distance_sorted<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> f64 {
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        // Ties jump together.
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let f = cdf(sorted[i]);
        d = d.max(f - i as f64 / n).max((j + 1) as f64 / n - f);
        i = j + 1;
    }
    d
}

/// Asymptotic Kolmogorov p-value with Stephens' finite-sample correction.
pub fn kolmogorov_p_value(n: usize, d: f64) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    kolmogorov_survival(lambda)
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // Theta-function form converges fast for small arguments.
        let c = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let sum: f64 = (1..=20).map(|k| ((2 * k - 1) as f64).powi(2) * c).map(f64::exp).sum();
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * sum).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Empirical CDF of sorted samples at `x`.
pub fn ecdf(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|v| *v <= x) as f64 / sorted.len() as f64
}

pub fn mean(x: &[f64]) -> f64 {
    crate::nodal::compensated_sum(x.iter().copied()) / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    crate::nodal::compensated_sum(x.iter().map(|v| (v - m).powi(2))) / (x.len() as f64 - 1.0)
}

/// Estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

pub fn mean_estimate(x: &[f64]) -> Estimate {
    Estimate { value: mean(x), se: (variance(x) / x.len() as f64).sqrt() }
}

/// Sample variance with the standard error of `(x - mean)^2` averages.
pub fn variance_estimate(x: &[f64]) -> Estimate {
    let m = mean(x);
    let sq: Vec<f64> = x.iter().map(|v| (v - m).powi(2)).collect();
    let n = x.len() as f64;
    Estimate { value: mean(&sq) * n / (n - 1.0), se: (variance(&sq) / n).sqrt() * n / (n - 1.0) }
}

/// Sample covariance with the standard error of the centred products.
pub fn covariance_estimate(x: &[f64], y: &[f64]) -> Estimate {
    let (mx, my) = (mean(x), mean(y));
    let prod: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let n = x.len() as f64;
    Estimate { value: mean(&prod) * n / (n - 1.0), se: (variance(&prod) / n).sqrt() * n / (n - 1.0) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Model-based standard error of the slope.
    pub slope_se: f64,
}

/// Weighted least squares `y ~ intercept + slope x`.
pub fn weighted_regression(x: &[f64], y: &[f64], w: &[f64]) -> Result<LinearFit> {
    if x.len() < 3 || x.len() != y.len() || x.len() != w.len() {
        return Err(Error::TooFewSamples { got: x.len().min(y.len()).min(w.len()), min: 3 });
    }
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientRange("regressor has no spread".into()));
    }
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (a - mx) * (c - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((a, c), b)| b * (c - intercept - slope * a).powi(2))
        .sum();
    let dof = x.len() as f64 - 2.0;
    Ok(LinearFit { slope, intercept, slope_se: (rss / dof / sxx).sqrt() })
}

/// Evaluates `stat` on `resamples` bootstrap index sets of `0..n`.
pub fn bootstrap<F: FnMut(&[usize]) -> f64>(n: usize, resamples: usize, seed: u64, mut stat: F) -> Vec<f64> {
    let mut stream = rng::stream(seed);
    let mut idx = vec![0usize; n];
    (0..resamples)
        .map(|_| {
            for slot in idx.iter_mut() {
                *slot = stream.gen_range(0..n);
            }
            stat(&idx)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sheet::normal_cdf;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn point_mass_at_median() {
        let r = ks_statistic(&[0.0; 50], normal_cdf).unwrap();
        assert!((r.distance - 0.5).abs() < 1e-15);
        assert!(r.p_value < 1e-10);
        assert!(matches!(ks_statistic(&[0.0; 19], normal_cdf), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn sorted_sweep_matches_brute_force() {
        let mut s = rng::stream(5);
        let u: Vec<f64> = (0..300).map(|_| s.gen::<f64>()).collect();
        let fast = ks_statistic(&u, normal_cdf).unwrap().distance;
        // Brute force over a fine grid plus the sample points themselves.
        let mut brute: f64 = 0.0;
        for &x in &u {
            let below = u.iter().filter(|v| **v < x).count() as f64 / 300.0;
            let at = u.iter().filter(|v| **v <= x).count() as f64 / 300.0;
            brute = brute.max((normal_cdf(x) - below).abs()).max((at - normal_cdf(x)).abs());
        }
        assert_eq!(fast, brute);
    }

    #[test]
    fn null_calibration() {
        let mut passes = 0;
        for rep in 0..100 {
            let mut s = rng::stream(rng::derive_seed(17, rep));
            let x: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut s)).collect();
            if ks_statistic(&x, normal_cdf).unwrap().p_value > 0.01 {
                passes += 1;
            }
        }
        assert!(passes >= 98, "{passes}");
    }

    #[test]
    fn kolmogorov_branches_agree() {
        let a = kolmogorov_survival(1.0 - 1e-12);
        let b = kolmogorov_survival(1.0);
        assert!((a - b).abs() < 1e-10);
        // Classical critical value: P(K > 1.6276) = 0.01
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-4);
    }

    #[test]
    fn regression_recovers_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 1.5 * v).collect();
        let fit = weighted_regression(&x, &y, &[1.0; 10]).unwrap();
        assert!((fit.slope + 1.5).abs() < 1e-12 && (fit.intercept - 2.0).abs() < 1e-12);
        assert!(fit.slope_se < 1e-10);
    }

    #[test]
    fn estimates() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&x), 2.5);
        assert!((variance(&x) - 5.0 / 3.0).abs() < 1e-15);
        assert!((variance_estimate(&x).value - 5.0 / 3.0).abs() < 1e-15);
        assert!((covariance_estimate(&x, &x).value - 5.0 / 3.0).abs() < 1e-15);
        let boot = bootstrap(4, 10, 1, |idx| idx.iter().map(|&i| x[i]).sum::<f64>());
        assert_eq!(boot.len(), 10);
        assert_eq!(boot, bootstrap(4, 10, 1, |idx| idx.iter().map(|&i| x[i]).sum::<f64>()));
    }
}
