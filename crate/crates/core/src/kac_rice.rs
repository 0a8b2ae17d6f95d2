//! Kac densities `rho1`, `rho2`, the cumulant density `F2 = rho2 - rho1^2`
//! and the asymptotic variance constant `gamma2`.
//!
//! `rho2` at a lag `x` is
//! `E[|grad f(0)| |grad f(x)| | f(0) = f(x) = 0] * p_{(f(0), f(x))}(0, 0)`.
//! The conditional expectation is a Gaussian expectation in dimension `2d`;
//! it is evaluated by fixed-seed Monte Carlo with a control variate (the same
//! draws pushed through the unconditional law, whose mean is `rho1^2`), by
//! tensor Gauss–Hermite quadrature, and by a projection rule: writing
//! `|a| = (1/4) int_0^{2 pi} |a . e_t| dt` in the plane turns the expectation
//! into a smooth periodic double integral of the closed form
//! `E|XY| = (2 s1 s2 / pi) (sqrt(1 - c^2) + c asin c)`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceModel, ModelKind};
use crate::error::{Error, Result};
use crate::quadrature::{gauss_hermite, integrate};
use crate::rng;

/// Seed of the fixed Monte Carlo draws.
pub const KAC_SEED: u64 = 0x4b41_4352_4943_4532;
pub const DEFAULT_DRAWS: usize = 200_000;
/// Reject lags with `1 - r(x)^2` below this.
pub const DEGENERACY_GAP: f64 = 1e-12;
/// `gamma2` integrates out to the first radius where `|F2| < F2_CUTOFF`.
pub const F2_CUTOFF: f64 = 1e-8;
const RADIUS_STEP: f64 = 0.5;
const MAX_RADIUS: f64 = 40.0;

/// Near-diagonal exponent: `0` when `d = k`, `k` when `k < d`.
pub fn beta(dim: usize) -> f64 {
    if dim == 1 {
        0.0
    } else {
        1.0
    }
}

/// Supremum of the admissible tightness exponents `alpha`:
/// `1/2` for `d = 1`, `(d - k) / (2d)` otherwise.
pub fn alpha_bound(dim: usize) -> f64 {
    if dim == 1 {
        0.5
    } else {
        (dim as f64 - 1.0) / (2.0 * dim as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MonteCarlo,
    GaussHermite,
    Projection,
}

/// One evaluation of the two-point densities at a lag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KacEstimate {
    /// Separation `|x|`.
    pub r: f64,
    pub rho2: f64,
    pub f2: f64,
    /// One standard error (Monte Carlo) or `|Q_n - Q_{n/2}|` (quadrature rules).
    pub err: f64,
    pub method: Method,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KacOptions {
    pub draws: usize,
    pub seed: u64,
    /// Gauss–Hermite points per axis; `0` picks 64 (d = 1) or 24 (d = 2).
    pub gh_order: usize,
}

impl Default for KacOptions {
    fn default() -> Self {
        KacOptions { draws: DEFAULT_DRAWS, seed: KAC_SEED, gh_order: 0 }
    }
}

/// Law of `(grad f(0), grad f(x))` given `f(0) = f(x) = 0`.
#[derive(Debug, Clone)]
pub struct ConditionalLaw {
    /// `r(x)`.
    pub correlation: f64,
    /// `1 - r(x)^2`.
    pub gap: f64,
    /// Density of `(f(0), f(x))` at the origin.
    pub density: f64,
    /// `2d x 2d` conditional covariance.
    pub covariance: DMatrix<f64>,
}

/// Joint covariance of `(f(0), f(x), grad f(0), grad f(x))`.
pub fn joint_covariance(model: &CovarianceModel, lag: &[f64]) -> Result<DMatrix<f64>> {
    let d = model.dim();
    if lag.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: lag.len() });
    }
    let not_isotropic = || Error::InvalidParameter(format!("model `{}` has no analytic covariance derivatives", model.name()));
    let grad = model.covariance_gradient(lag).ok_or_else(not_isotropic)?;
    let hess = model.covariance_hessian(lag).ok_or_else(not_isotropic)?;
    let lambda = model.spectral_moments();
    let n = 2 + 2 * d;
    let (g0, gx) = (2, 2 + d);
    let mut s = DMatrix::<f64>::zeros(n, n);
    s[(0, 0)] = 1.0;
    s[(1, 1)] = 1.0;
    let r = model.covariance(lag);
    s[(0, 1)] = r;
    s[(1, 0)] = r;
    for i in 0..d {
        // Cov(f(0), d_i f(x)) = d_i r(x); Cov(d_i f(0), f(x)) = -d_i r(x)
        s[(0, gx + i)] = grad[i];
        s[(gx + i, 0)] = grad[i];
        s[(1, g0 + i)] = -grad[i];
        s[(g0 + i, 1)] = -grad[i];
        for j in 0..d {
            s[(g0 + i, g0 + j)] = lambda[(i, j)];
            s[(gx + i, gx + j)] = lambda[(i, j)];
            s[(g0 + i, gx + j)] = -hess[(i, j)];
            s[(gx + j, g0 + i)] = -hess[(i, j)];
        }
    }
    Ok(s)
}

/// Schur complement of the joint covariance on the zero event.
pub fn conditional_law(model: &CovarianceModel, lag: &[f64]) -> Result<ConditionalLaw> {
    let s = joint_covariance(model, lag)?;
    let d = model.dim();
    let r = s[(0, 1)];
    let gap = 1.0 - r * r;
    if !(gap >= DEGENERACY_GAP) {
        return Err(Error::DegenerateJoint { r: crate::covariance::norm(lag), gap });
    }
    let ff_inv = DMatrix::from_row_slice(2, 2, &[1.0, -r, -r, 1.0]) / gap;
    let gf = s.view((2, 0), (2 * d, 2)).into_owned();
    let gg = s.view((2, 2), (2 * d, 2 * d)).into_owned();
    let mut cov = gg - &gf * ff_inv * gf.transpose();
    cov = 0.5 * (&cov + cov.transpose());
    Ok(ConditionalLaw { correlation: r, gap, density: 1.0 / (2.0 * PI * gap.sqrt()), covariance: cov })
}

/// Symmetric positive semidefinite square root, negative eigenvalues clipped.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `E|N(0, Lambda)| / sqrt(2 pi)`.
fn gradient_norm_mean(lambda: &DMatrix<f64>) -> Result<f64> {
    let d = lambda.nrows();
    let eig = lambda.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::NotPositiveDefinite);
    }
    if d == 1 {
        return Ok(eig.eigenvalues[0].sqrt() * (2.0 / PI).sqrt());
    }
    // |Lambda^{1/2} Z| = |Z| sqrt(l1 cos^2 + l2 sin^2) with |Z| ~ chi_2
    let (l1, l2) = (eig.eigenvalues[0], eig.eigenvalues[1]);
    let n = 512;
    let angular = (0..n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            (l1 * t.cos().powi(2) + l2 * t.sin().powi(2)).sqrt()
        })
        .sum::<f64>()
        / n as f64;
    Ok((PI / 2.0).sqrt() * angular)
}

/// One-point Kac density.
pub fn rho1(model: &CovarianceModel) -> Result<f64> {
    let lambda = model.spectral_moments();
    let mean = gradient_norm_mean(&lambda)?;
    Ok(mean / (2.0 * PI).sqrt())
}

/// Fixed draws and the control-variate baseline shared across lags.
pub struct KacEngine {
    model: CovarianceModel,
    options: KacOptions,
    rho1: f64,
    /// `draws x 2d`, row-major.
    normals: Vec<f64>,
    /// Unconditional product `|A0| |B0| / (2 pi)` per draw; mean `rho1^2`.
    baseline: Vec<f64>,
}

impl std::fmt::Debug for KacEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KacEngine")
            .field("model", &self.model)
            .field("options", &self.options)
            .field("rho1", &self.rho1)
            .finish()
    }
}

fn norm_product(d: usize, y: &[f64]) -> f64 {
    if d == 1 {
        (y[0] * y[1]).abs()
    } else {
        y[0].hypot(y[1]) * y[2].hypot(y[3])
    }
}

fn apply(s: &[f64], n: usize, z: &[f64], out: &mut [f64]) {
    for i in 0..n {
        out[i] = (0..n).map(|j| s[i * n + j] * z[j]).sum();
    }
}

const MAX_PROJECTION_ORDER: usize = 2048;

/// `E|XY|` for a centred Gaussian pair with variances `v1`, `v2` and
/// covariance `c12`.
fn abs_product_mean(v1: f64, v2: f64, c12: f64) -> f64 {
    let (s1, s2) = (v1.max(0.0).sqrt(), v2.max(0.0).sqrt());
    if s1 == 0.0 || s2 == 0.0 {
        return 0.0;
    }
    let c = (c12 / (s1 * s2)).clamp(-1.0, 1.0);
    2.0 * s1 * s2 / PI * ((1.0 - c * c).sqrt() + c * c.asin())
}

/// `E[|A| |B|]` for `(A, B)` in the plane with joint covariance `cov`,
/// by the `n x n` midpoint rule over projection angles in `[0, pi)`.
fn projection_rule(cov: &DMatrix<f64>, n: usize) -> f64 {
    let dirs: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let t = PI * (i as f64 + 0.5) / n as f64;
            [t.cos(), t.sin()]
        })
        .collect();
    let quad = |e: &[f64; 2], f: &[f64; 2], off_a: usize, off_b: usize| {
        (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| e[i] * cov[(off_a + i, off_b + j)] * f[j])
            .sum::<f64>()
    };
    let va: Vec<f64> = dirs.iter().map(|e| quad(e, e, 0, 0)).collect();
    let vb: Vec<f64> = dirs.iter().map(|e| quad(e, e, 2, 2)).collect();
    let mut total = 0.0;
    for (a, ea) in dirs.iter().enumerate() {
        for (b, eb) in dirs.iter().enumerate() {
            total += abs_product_mean(va[a], vb[b], quad(ea, eb, 0, 2));
        }
    }
    PI * PI / 4.0 * total / (n * n) as f64
}

fn flat(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    (0..n * n).map(|k| m[(k / n, k % n)]).collect()
}

impl KacEngine {
    pub fn new(model: &CovarianceModel, options: KacOptions) -> Result<Self> {
        if !model.is_isotropic() {
            return Err(Error::InvalidParameter(format!(
                "Kac–Rice densities need an isotropic model, got `{}`",
                model.name()
            )));
        }
        if options.draws < 2 {
            return Err(Error::TooFewSamples { got: options.draws, min: 2 });
        }
        let d = model.dim();
        let n = 2 * d;
        let rho1 = rho1(model)?;
        let mut stream = rng::stream(options.seed);
        let normals: Vec<f64> =
            (0..options.draws * n).map(|_| StandardNormal.sample(&mut stream)).collect();
        let root = flat(&psd_sqrt(&model.spectral_moments()));
        let mut y = vec![0.0; n];
        let baseline = normals
            .chunks_exact(n)
            .map(|z| {
                apply(&root, d, &z[..d], &mut y[..d]);
                apply(&root, d, &z[d..], &mut y[d..]);
                norm_product(d, &y) / (2.0 * PI)
            })
            .collect();
        Ok(KacEngine { model: model.clone(), options, rho1, normals, baseline })
    }

    pub fn model(&self) -> &CovarianceModel {
        &self.model
    }

    pub fn options(&self) -> KacOptions {
        self.options
    }

    pub fn rho1(&self) -> f64 {
        self.rho1
    }

    fn lag(&self, r: f64) -> Vec<f64> {
        let mut lag = vec![0.0; self.model.dim()];
        lag[0] = r;
        lag
    }

    /// Calls `sink(j, v_j, v_j - baseline_j)` for every draw, where
    /// `v_j = p(0, 0) |A_j| |B_j|`.
    fn for_each_draw<F: FnMut(usize, f64, f64)>(&self, lag: &[f64], mut sink: F) -> Result<()> {
        let law = conditional_law(&self.model, lag)?;
        let n = 2 * self.model.dim();
        let root = flat(&psd_sqrt(&law.covariance));
        let mut y = vec![0.0; n];
        for (j, z) in self.normals.chunks_exact(n).enumerate() {
            apply(&root, n, z, &mut y);
            let v = law.density * norm_product(self.model.dim(), &y);
            sink(j, v, v - self.baseline[j]);
        }
        Ok(())
    }

    /// Monte Carlo evaluation at an arbitrary lag vector.
    pub fn estimate_at(&self, lag: &[f64]) -> Result<KacEstimate> {
        let mut direct = 0.0;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        self.for_each_draw(lag, |_, v, diff| {
            direct += v;
            sum += diff;
            sum_sq += diff * diff;
        })?;
        let n = self.options.draws as f64;
        let mean = sum / n;
        let var = (sum_sq - n * mean * mean).max(0.0) / (n - 1.0);
        Ok(KacEstimate {
            r: crate::covariance::norm(lag),
            rho2: direct / n,
            f2: mean,
            err: (var / n).sqrt(),
            method: Method::MonteCarlo,
        })
    }

    /// Monte Carlo evaluation at separation `r` along the first axis.
    pub fn estimate(&self, r: f64) -> Result<KacEstimate> {
        self.estimate_at(&self.lag(r))
    }

    pub fn f2(&self, r: f64) -> Result<f64> {
        Ok(self.estimate(r)?.f2)
    }

    pub fn rho2(&self, r: f64) -> Result<f64> {
        Ok(self.estimate(r)?.rho2)
    }

    fn gh_order(&self) -> usize {
        match self.options.gh_order {
            0 if self.model.dim() == 1 => 64,
            0 => 24,
            n => n.max(2),
        }
    }

    fn tensor_rule(&self, lag: &[f64], order: usize) -> Result<(f64, f64)> {
        let law = conditional_law(&self.model, lag)?;
        let d = self.model.dim();
        let n = 2 * d;
        let root = flat(&psd_sqrt(&law.covariance));
        let base_root = flat(&psd_sqrt(&self.model.spectral_moments()));
        let (x, w) = gauss_hermite(order);
        let total = order.pow(n as u32);
        let mut idx = vec![0usize; n];
        let mut z = vec![0.0; n];
        let mut y = vec![0.0; n];
        let (mut direct, mut diff) = (0.0, 0.0);
        for k in 0..total {
            let mut rem = k;
            let mut weight = 1.0;
            for a in 0..n {
                idx[a] = rem % order;
                rem /= order;
                z[a] = x[idx[a]];
                weight *= w[idx[a]];
            }
            apply(&root, n, &z, &mut y);
            let v = law.density * norm_product(d, &y);
            apply(&base_root, d, &z[..d], &mut y[..d]);
            apply(&base_root, d, &z[d..], &mut y[d..]);
            let v0 = norm_product(d, &y) / (2.0 * PI);
            direct += weight * v;
            diff += weight * (v - v0);
        }
        Ok((direct, diff))
    }

    /// Tensor Gauss–Hermite evaluation in whitened coordinates.
    pub fn gauss_hermite_at(&self, lag: &[f64]) -> Result<KacEstimate> {
        let order = self.gh_order();
        let (rho2, f2) = self.tensor_rule(lag, order)?;
        let (_, coarse) = self.tensor_rule(lag, (order / 2).max(1))?;
        Ok(KacEstimate {
            r: crate::covariance::norm(lag),
            rho2,
            f2,
            err: (f2 - coarse).abs(),
            method: Method::GaussHermite,
        })
    }

    pub fn gauss_hermite(&self, r: f64) -> Result<KacEstimate> {
        self.gauss_hermite_at(&self.lag(r))
    }

    /// Projection-rule evaluation; midpoint rule in both angles, doubled
    /// until two successive orders agree to `1e-12` relative.
    pub fn projection_at(&self, lag: &[f64]) -> Result<KacEstimate> {
        let law = conditional_law(&self.model, lag)?;
        let c = &law.covariance;
        let rho1_sq = self.rho1 * self.rho1;
        let (value, err) = if self.model.dim() == 1 {
            (abs_product_mean(c[(0, 0)], c[(1, 1)], c[(0, 1)]), 0.0)
        } else {
            let mut previous = projection_rule(c, 16);
            let mut n = 32;
            loop {
                let q = projection_rule(c, n);
                let delta = (q - previous).abs();
                if delta <= 1e-12 * q.abs().max(1.0) || n >= MAX_PROJECTION_ORDER {
                    break (q, delta);
                }
                previous = q;
                n *= 2;
            }
        };
        let rho2 = law.density * value;
        Ok(KacEstimate {
            r: crate::covariance::norm(lag),
            rho2,
            f2: rho2 - rho1_sq,
            err: law.density * err,
            method: Method::Projection,
        })
    }

    pub fn projection(&self, r: f64) -> Result<KacEstimate> {
        self.projection_at(&self.lag(r))
    }

    /// Radial weight of `int_{R^d} F2(|x|) dx`.
    fn jacobian(&self, r: f64) -> f64 {
        if self.model.dim() == 1 {
            2.0
        } else {
            2.0 * PI * r
        }
    }

    /// First radius on a `0.5` grid where `|F2| < F2_CUTOFF` (and stays below
    /// at the next step).
    pub fn find_r_max(&self) -> Result<f64> {
        let mut r = RADIUS_STEP;
        let mut below = false;
        while r <= MAX_RADIUS {
            if self.projection(r)?.f2.abs() < F2_CUTOFF {
                if below {
                    return Ok(r - RADIUS_STEP);
                }
                below = true;
            } else {
                below = false;
            }
            r += RADIUS_STEP;
        }
        Err(Error::Quadrature(format!(
            "|F2| does not fall below {F2_CUTOFF:e} before r = {MAX_RADIUS}; pass an explicit r_max"
        )))
    }

    /// `gamma2 = int F2 + rho1 1_{d = k}`, integrating out to `r_max`
    /// (searched when `None`).
    pub fn gamma2(&self, r_max: Option<f64>) -> Result<Gamma2Result> {
        let r_max = match r_max {
            Some(r) if r > 0.0 => r,
            Some(r) => return Err(Error::InvalidParameter(format!("r_max must be positive, got {r}"))),
            None => self.find_r_max()?,
        };
        let mut failure = None;
        let mut evaluator_error = 0.0f64;
        let integral = integrate(
            |r| match self.projection(r) {
                Ok(e) => {
                    evaluator_error = evaluator_error.max(self.jacobian(r) * e.err);
                    self.jacobian(r) * e.f2
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            },
            0.0,
            r_max,
            1e-10,
            1e-9,
            4000,
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        let rho1_term = (self.model.dim() == 1).then_some(self.rho1);
        let gamma2 = integral.value + rho1_term.unwrap_or(0.0);
        if !(gamma2 > 0.0) {
            return Err(Error::NonPositiveGamma2(gamma2));
        }
        Ok(Gamma2Result {
            model: self.model.name().to_string(),
            dim: self.model.dim(),
            rho1: self.rho1,
            gamma2,
            integral_f2: integral.value,
            rho1_term,
            quadrature_error: integral.error + evaluator_error * r_max,
            r_max,
            f2_at_r_max: self.projection(r_max)?.f2,
            evaluations: integral.evaluations,
        })
    }

    /// Radial table on a log grid of `points` radii in `[r_min, r_max]`,
    /// evaluated by `method`.
    pub fn profile(&self, r_min: f64, r_max: f64, points: usize, method: Method) -> Result<KacDensityProfile> {
        if !(r_min > 0.0 && r_max > r_min) || points < 2 {
            return Err(Error::InvalidParameter(format!(
                "profile grid [{r_min}, {r_max}] with {points} points"
            )));
        }
        let step = (r_max / r_min).ln() / (points - 1) as f64;
        let entries = (0..points)
            .into_par_iter()
            .map(|i| {
                let r = r_min * (step * i as f64).exp();
                match method {
                    Method::MonteCarlo => self.estimate(r),
                    Method::GaussHermite => self.gauss_hermite(r),
                    Method::Projection => self.projection(r),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(KacDensityProfile {
            model: self.model.name().to_string(),
            dim: self.model.dim(),
            rho1: self.rho1,
            beta: beta(self.model.dim()),
            draws: self.options.draws,
            entries,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KacDensityProfile {
    pub model: String,
    pub dim: usize,
    pub rho1: f64,
    pub beta: f64,
    pub draws: usize,
    pub entries: Vec<KacEstimate>,
}

impl KacDensityProfile {
    /// Least-squares slope of `log(r^beta |F2|)` against `log r`.
    pub fn near_diagonal_slope(&self, r_lo: f64, r_hi: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .entries
            .iter()
            .filter(|e| e.r >= r_lo && e.r <= r_hi && e.f2 != 0.0)
            .map(|e| (e.r.ln(), (e.r.powf(self.beta) * e.f2.abs()).ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gamma2Result {
    pub model: String,
    pub dim: usize,
    pub rho1: f64,
    pub gamma2: f64,
    pub integral_f2: f64,
    /// `rho1`, present when `d = k`.
    pub rho1_term: Option<f64>,
    /// Adaptive-quadrature error plus the projection-rule error bound.
    pub quadrature_error: f64,
    pub r_max: f64,
    pub f2_at_r_max: f64,
    pub evaluations: usize,
}

type CacheKey = (String, usize, usize, u64, u64);

fn cache() -> &'static Mutex<HashMap<CacheKey, Arc<Gamma2Result>>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<Gamma2Result>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// `gamma2` with default options, memoized per model, dimension and options.
pub fn gamma2(model: &CovarianceModel) -> Result<Arc<Gamma2Result>> {
    gamma2_with(model, KacOptions::default(), None)
}

pub fn gamma2_with(model: &CovarianceModel, options: KacOptions, r_max: Option<f64>) -> Result<Arc<Gamma2Result>> {
    let cacheable = !matches!(model.kind(), ModelKind::Synthetic(_));
    let key = (
        model.name().to_string(),
        model.dim(),
        options.draws,
        options.seed,
        r_max.map_or(u64::MAX, f64::to_bits),
    );
    if cacheable {
        if let Some(hit) = cache().lock().expect("cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
    }
    let result = Arc::new(KacEngine::new(model, options)?.gamma2(r_max)?);
    if cacheable {
        cache().lock().expect("cache poisoned").insert(key, result.clone());
    }
    Ok(result)
}

/// `rho2` at separation `r` with default options.
pub fn rho2(model: &CovarianceModel, r: f64) -> Result<f64> {
    KacEngine::new(model, KacOptions::default())?.rho2(r)
}

/// `F2 = rho2 - rho1^2` at separation `r` with default options.
pub fn f2(model: &CovarianceModel, r: f64) -> Result<f64> {
    KacEngine::new(model, KacOptions::default())?.f2(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{make_model, BARGMANN_FOCK};
    use nalgebra::dmatrix;

    fn small(model: &CovarianceModel) -> KacEngine {
        KacEngine::new(model, KacOptions { draws: 40_000, ..Default::default() }).unwrap()
    }

    /// `E|XY|` for a centred Gaussian pair with correlation `rho`.
    fn abs_product_oracle(s1: f64, s2: f64, rho: f64) -> f64 {
        2.0 * s1 * s2 / PI * ((1.0 - rho * rho).sqrt() + rho * rho.asin())
    }

    #[test]
    fn rho1_closed_forms() {
        let bf1 = make_model(BARGMANN_FOCK, 1).unwrap();
        assert!((rho1(&bf1).unwrap() - 2f64.sqrt() / PI).abs() < 1e-15);
        let bf2 = make_model(BARGMANN_FOCK, 2).unwrap();
        assert!((rho1(&bf2).unwrap() - 0.5f64.sqrt()).abs() < 1e-14);
        let unit = CovarianceModel::synthetic(2);
        assert!((rho1(&unit).unwrap() - 0.5).abs() < 1e-14);
        let bad = CovarianceModel::synthetic(2).with_spectral_moments(dmatrix![1.0, 0.0; 0.0, -1.0]);
        assert!(matches!(rho1(&bad), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn anisotropic_rho1_matches_monte_carlo() {
        let lambda = dmatrix![3.0, 0.5; 0.5, 0.7];
        let model = CovarianceModel::synthetic(2).with_spectral_moments(lambda.clone());
        let root = psd_sqrt(&lambda);
        let mut s = rng::stream(9);
        let n = 400_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let z = nalgebra::DVector::from_fn(2, |_, _| StandardNormal.sample(&mut s));
            sum += (&root * z).norm();
        }
        let mc = sum / n as f64 / (2.0 * PI).sqrt();
        assert!((rho1(&model).unwrap() - mc).abs() < 3e-3);
    }

    #[test]
    fn one_dimensional_against_closed_form() {
        // For d = 1 the conditional expectation is E|XY| of a Gaussian pair.
        let model = make_model(BARGMANN_FOCK, 1).unwrap();
        let engine = small(&model);
        for r in [0.1, 0.5, 1.0, 2.0] {
            let law = conditional_law(&model, &[r]).unwrap();
            let c = &law.covariance;
            let (s1, s2) = (c[(0, 0)].sqrt(), c[(1, 1)].sqrt());
            let exact = law.density * abs_product_oracle(s1, s2, c[(0, 1)] / (s1 * s2)) - engine.rho1().powi(2);
            let mc = engine.estimate(r).unwrap();
            assert!((mc.f2 - exact).abs() < 4.0 * mc.err + 1e-12, "r={r}: {} vs {exact}", mc.f2);
        }
    }

    #[test]
    fn projection_rule_matches_monte_carlo() {
        let model = make_model(BARGMANN_FOCK, 2).unwrap();
        let engine = small(&model);
        for r in [0.05, 0.5, 1.0, 2.0] {
            let p = engine.projection(r).unwrap();
            let mc = engine.estimate(r).unwrap();
            assert!((p.f2 - mc.f2).abs() < 4.0 * mc.err, "r={r}: {} vs {}", p.f2, mc.f2);
            assert!(p.err < 1e-8 * p.f2.abs().max(1.0));
        }
        // Separable case: independent coordinates give E|A||B| = E|A| E|B|.
        let cov = DMatrix::<f64>::identity(4, 4);
        let expected = PI / 2.0;
        assert!((projection_rule(&cov, 64) - expected).abs() < 1e-12);
    }

    #[test]
    fn independence_far_away() {
        let model = make_model(BARGMANN_FOCK, 2).unwrap();
        let e = small(&model).estimate(6.0).unwrap();
        assert!(e.f2.abs() < 1e-12);
        assert!((e.rho2 - 0.5).abs() < 0.02);
    }

    #[test]
    fn degenerate_lag_rejected() {
        let model = make_model(BARGMANN_FOCK, 2).unwrap();
        assert!(matches!(conditional_law(&model, &[1e-8, 0.0]), Err(Error::DegenerateJoint { .. })));
        assert!(KacEngine::new(&CovarianceModel::synthetic(2), KacOptions::default()).is_err());
    }

    #[test]
    fn one_dimensional_repulsion() {
        let model = make_model(BARGMANN_FOCK, 1).unwrap();
        let engine = small(&model);
        let e = engine.estimate(0.1).unwrap();
        assert!(e.rho2 < engine.rho1().powi(2), "{e:?}");
        assert!(e.f2 < 0.0);
    }

    #[test]
    fn exponents() {
        assert_eq!(beta(1), 0.0);
        assert_eq!(beta(2), 1.0);
        assert_eq!(alpha_bound(1), 0.5);
        assert_eq!(alpha_bound(2), 0.25);
    }
}
