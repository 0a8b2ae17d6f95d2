//! Brownian sheet, Yeh's polygonal curves `L(a, b)` and the closed-form law
//! `H(a, b, lambda)` of the supremum of the sheet over them.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nodal::Lattice;
use crate::rng;
use crate::special::{exp_times_phi, phi};

/// Standard normal distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    phi(z)
}

/// `exp(theta) * Phi(z)`, evaluated in scaled form in the lower tail.
pub fn exp_times_normal_cdf(theta: f64, z: f64) -> f64 {
    exp_times_phi(theta, z)
}

/// A slope parameter of `L(a, b)`: a real number above 1 or infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum CurveParam {
    Finite(f64),
    Infinite,
}

impl CurveParam {
    /// `1 / a`, zero at infinity.
    pub fn reciprocal(self) -> f64 {
        match self {
            CurveParam::Finite(a) => 1.0 / a,
            CurveParam::Infinite => 0.0,
        }
    }

    fn check(self) -> Result<Self> {
        match self {
            CurveParam::Finite(a) if !(a > 1.0) || a.is_infinite() => {
                Err(Error::InvalidParameter(format!("curve parameter must lie in (1, inf], got {a}")))
            }
            p => Ok(p),
        }
    }
}

impl fmt::Display for CurveParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CurveParam::Finite(a) => write!(f, "{a}"),
            CurveParam::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for CurveParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if matches!(t.to_ascii_lowercase().as_str(), "inf" | "infinity" | "+inf" | "∞") {
            return Ok(CurveParam::Infinite);
        }
        let v: f64 = t.parse().map_err(|_| Error::Config(format!("cannot parse curve parameter `{s}`")))?;
        CurveParam::Finite(v).check()
    }
}

impl TryFrom<String> for CurveParam {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CurveParam> for String {
    fn from(p: CurveParam) -> String {
        p.to_string()
    }
}

/// `k = a(b-1)/(ab-1)` and `c = a(b-1)/(b(a-1))`, with their limits when
/// `a` and/or `b` is infinite.
pub fn yeh_constants(a: CurveParam, b: CurveParam) -> Result<(f64, f64)> {
    let (ia, ib) = (a.check()?.reciprocal(), b.check()?.reciprocal());
    Ok(((1.0 - ib) / (1.0 - ia * ib), (1.0 - ib) / (1.0 - ia)))
}

/// The polygonal curve `L(a, b)` from `(0, 1)` through `(k, 1 - k/a)` to `(1, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    pub a: CurveParam,
    pub b: CurveParam,
    pub k: f64,
    pub c: f64,
}

impl CurveSpec {
    pub fn new(a: CurveParam, b: CurveParam) -> Result<Self> {
        let (k, c) = yeh_constants(a, b)?;
        Ok(CurveSpec { a, b, k, c })
    }

    /// The upper and right edges of the unit square, `L(inf, inf)`.
    pub fn boundary() -> Self {
        CurveSpec::new(CurveParam::Infinite, CurveParam::Infinite).expect("valid")
    }

    pub fn breakpoint(&self) -> [f64; 2] {
        [self.k, 1.0 - self.k * self.a.reciprocal()]
    }

    pub fn vertices(&self) -> [[f64; 2]; 3] {
        [[0.0, 1.0], self.breakpoint(), [1.0, 0.0]]
    }
}

/// `H(a, b, lambda) = P(sup_{L(a,b)} W <= lambda)`.
pub fn yeh_h(a: CurveParam, b: CurveParam, lambda: f64) -> Result<f64> {
    let terms = yeh_terms(a, b, lambda)?;
    Ok((terms[0] - terms[1] - terms[2] + terms[3]).clamp(0.0, 1.0))
}

/// `1 - H(a, b, lambda)` without cancellation against 1.
pub fn yeh_tail(a: CurveParam, b: CurveParam, lambda: f64) -> Result<f64> {
    let terms = yeh_terms(a, b, lambda)?;
    let c = yeh_constants(a, b)?.1;
    let upper = phi(-lambda * (1.0 + c * a.reciprocal()) / c.sqrt());
    Ok((upper + terms[1] + terms[2] - terms[3]).clamp(0.0, 1.0))
}

fn yeh_terms(a: CurveParam, b: CurveParam, lambda: f64) -> Result<[f64; 4]> {
    if !(lambda >= 0.0) || lambda.is_infinite() {
        return Err(Error::InvalidParameter(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    let (_, c) = yeh_constants(a, b)?;
    let (ia, ib) = (a.reciprocal(), b.reciprocal());
    let l2 = lambda * lambda;
    let sc = c.sqrt();
    Ok([
        phi(lambda * (1.0 + c * ia) / sc),
        exp_times_phi(-2.0 * l2 * ia, lambda * (c * ia - 1.0) / sc),
        exp_times_phi(-2.0 * l2 * ib, lambda * (ib - c) / sc),
        exp_times_phi(-2.0 * l2 * (ia + ib - 2.0), lambda * (ib - c - 2.0) / sc),
    ])
}

/// `1 - 3 Phi(-lambda) + exp(4 lambda^2) Phi(-3 lambda)`, the law of the
/// supremum over the upper and right edges.
pub fn boundary_sup_cdf(lambda: f64) -> f64 {
    (1.0 - 3.0 * phi(-lambda) + exp_times_phi(4.0 * lambda * lambda, -3.0 * lambda)).clamp(0.0, 1.0)
}

/// Brownian sheet on the lattice `{0, 1/n, ..., 1}^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SheetSample {
    pub n: usize,
    pub dim: usize,
    pub seed: u64,
    pub lattice: Lattice,
}

impl SheetSample {
    pub fn values(&self) -> &[f64] {
        &self.lattice.values
    }

    /// The same sheet restricted to every `factor`-th lattice node.
    pub fn coarsen(&self, factor: usize) -> Result<SheetSample> {
        if factor == 0 || self.n % factor != 0 {
            return Err(Error::Misaligned { m: factor, cells: self.n });
        }
        let m = self.n / factor;
        let s = self.n + 1;
        let values = match self.dim {
            1 => (0..=m).map(|i| self.lattice.values[i * factor]).collect(),
            _ => (0..=m)
                .flat_map(|i| (0..=m).map(move |j| (i, j)))
                .map(|(i, j)| self.lattice.values[i * factor * s + j * factor])
                .collect(),
        };
        Ok(SheetSample { n: m, dim: self.dim, seed: self.seed, lattice: Lattice { dim: self.dim, m, values } })
    }
}

/// I.i.d. `N(0, n^-d)` cell increments, accumulated.
pub fn sample_sheet(n: usize, dim: usize, seed: u64) -> Result<SheetSample> {
    if n == 0 {
        return Err(Error::InvalidParameter("sheet resolution must be at least 1".into()));
    }
    if !(1..=2).contains(&dim) {
        return Err(Error::UnsupportedDimension { model: "brownian-sheet".into(), dim });
    }
    let mut stream = rng::stream(seed);
    let sd = (n as f64).powf(-(dim as f64) / 2.0);
    let s = n + 1;
    let mut values = vec![0.0; s.pow(dim as u32)];
    match dim {
        1 => {
            for i in 1..s {
                let z: f64 = StandardNormal.sample(&mut stream);
                values[i] = values[i - 1] + sd * z;
            }
        }
        _ => {
            for i in 1..s {
                let mut row = 0.0;
                for j in 1..s {
                    let z: f64 = StandardNormal.sample(&mut stream);
                    row += sd * z;
                    values[i * s + j] = values[(i - 1) * s + j] + row;
                }
            }
        }
    }
    Ok(SheetSample { n, dim, seed, lattice: Lattice { dim, m: n, values } })
}

/// Supremum over `[0, 1]` of the piecewise-linear path through the lattice
/// values of a one-dimensional sheet.
pub fn sup_1d(sample: &SheetSample) -> f64 {
    sample.lattice.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn lerp(p: [f64; 2], q: [f64; 2], s: f64) -> [f64; 2] {
    [p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])]
}

/// Parameters in `(0, 1)` where the segment `p -> q` crosses a lattice line.
fn lattice_crossings(p: [f64; 2], q: [f64; 2], m: usize, out: &mut Vec<f64>) {
    for axis in 0..2 {
        let (a, b) = (p[axis] * m as f64, q[axis] * m as f64);
        if (b - a).abs() < 1e-15 {
            continue;
        }
        let (lo, hi) = (a.min(b), a.max(b));
        let mut k = lo.floor() + 1.0;
        while k < hi {
            out.push((k - a) / (b - a));
            k += 1.0;
        }
    }
}

/// Maximum of the bilinear interpolant of `field` along the polyline `L(a, b)`.
///
/// Between lattice crossings the interpolant restricted to a segment is a
/// quadratic in the segment parameter, so its maximum is found exactly;
/// `samples_per_segment` adds uniformly spaced evaluation points on top.
pub fn sup_on_curve(field: &Lattice, curve: &CurveSpec, samples_per_segment: usize) -> Result<f64> {
    if field.dim != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: field.dim });
    }
    let eval = |p: [f64; 2]| field.bilinear(p[0], p[1]);
    let vertices = curve.vertices();
    let mut best = f64::NEG_INFINITY;
    let mut params = Vec::new();
    for seg in vertices.windows(2) {
        let (p, q) = (seg[0], seg[1]);
        params.clear();
        params.extend([0.0, 1.0]);
        lattice_crossings(p, q, field.m, &mut params);
        params.extend((1..samples_per_segment).map(|i| i as f64 / samples_per_segment as f64));
        params.sort_by(f64::total_cmp);
        params.dedup_by(|x, y| (*x - *y).abs() < 1e-15);
        for w in params.windows(2) {
            let (s0, s1) = (w[0], w[1]);
            let f0 = eval(lerp(p, q, s0));
            let f1 = eval(lerp(p, q, s1));
            let fm = eval(lerp(p, q, 0.5 * (s0 + s1)));
            best = best.max(f0).max(f1);
            // Vertex of the parabola through the three values.
            let curvature = f0 - 2.0 * fm + f1;
            if curvature < 0.0 {
                let t = 0.5 + 0.25 * (f0 - f1) / curvature;
                if t > 0.0 && t < 1.0 {
                    best = best.max(eval(lerp(p, q, s0 + t * (s1 - s0))));
                }
            }
        }
    }
    Ok(best)
}

/// Maximum of a Brownian bridge from `a` to `b` with total variance `v`,
/// by inversion of `P(M > m) = exp(-2 (m - a)(m - b) / v)` at uniform `u`.
pub fn bridge_max(a: f64, b: f64, v: f64, u: f64) -> f64 {
    if v <= 0.0 {
        return a.max(b);
    }
    0.5 * (a + b + ((a - b).powi(2) - 2.0 * v * u.ln()).sqrt())
}

/// Points along `L(a, b)`, excluding the end `(1, 0)`.
fn curve_points(curve: &CurveSpec, per_segment: usize) -> Vec<[f64; 2]> {
    let v = curve.vertices();
    let mut pts = Vec::with_capacity(2 * per_segment);
    for seg in v.windows(2) {
        for i in 0..per_segment {
            pts.push(lerp(seg[0], seg[1], i as f64 / per_segment as f64));
        }
    }
    pts.dedup_by(|x, y| (x[0] - y[0]).abs() < 1e-15 && (x[1] - y[1]).abs() < 1e-15);
    pts
}

/// Sampler of `sup_{L(a,b)} W` that draws the sheet only along the curve.
///
/// Along a curve with `x` increasing and `y` decreasing the sheet is
/// Gauss–Markov, `W(x, y) = y B(x / y)` for a Brownian motion `B`. The path
/// is drawn exactly at the discretization points and the maximum between
/// neighbours comes from the Brownian-bridge law with variance
/// `x_{k+1} y_k - x_k y_{k+1}`; this is exact on axis-parallel segments.
#[derive(Debug, Clone)]
pub struct CurveSupSampler {
    points: Vec<[f64; 2]>,
    /// `sqrt(Var(B(tau_k) - B(tau_{k-1})))`.
    steps: Vec<f64>,
    bridge_var: Vec<f64>,
}

impl CurveSupSampler {
    pub fn new(curve: &CurveSpec, per_segment: usize) -> Result<Self> {
        if per_segment == 0 {
            return Err(Error::InvalidParameter("need at least one point per segment".into()));
        }
        let mut points = curve_points(curve, per_segment);
        points.push([1.0, 0.0]);
        let tau: Vec<f64> = points[..points.len() - 1].iter().map(|p| p[0] / p[1]).collect();
        let steps = tau
            .iter()
            .enumerate()
            .map(|(i, t)| (t - if i == 0 { 0.0 } else { tau[i - 1] }).max(0.0).sqrt())
            .collect();
        let bridge_var = points
            .windows(2)
            .map(|w| (w[1][0] * w[0][1] - w[0][0] * w[1][1]).max(0.0))
            .collect();
        Ok(CurveSupSampler { points, steps, bridge_var })
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> f64 {
        let mut b = 0.0;
        let mut prev = 0.0;
        let mut best: f64 = 0.0;
        let last = self.points.len() - 1;
        for k in 1..=last {
            let x = if k < last {
                let z: f64 = StandardNormal.sample(rng);
                b += self.steps[k] * z;
                self.points[k][1] * b
            } else {
                0.0
            };
            let u: f64 = 1.0 - rng.gen::<f64>();
            best = best.max(bridge_max(prev, x, self.bridge_var[k - 1], u));
            prev = x;
        }
        best
    }

    /// `count` independent suprema; sample `i` uses `derive_seed(seed, i)`.
    pub fn sample_many(&self, count: usize, seed: u64) -> Vec<f64> {
        (0..count)
            .into_par_iter()
            .map(|i| self.sample(&mut rng::stream(rng::derive_seed(seed, i as u64))))
            .collect()
    }
}

/// Supremum over `[0, 1]` of a standard Brownian motion, drawn on `n` steps
/// with bridge-corrected maxima between nodes.
pub fn brownian_sup_1d<R: rand::Rng>(n: usize, rng: &mut R) -> f64 {
    let v = 1.0 / n as f64;
    let sd = v.sqrt();
    let mut b = 0.0;
    let mut best: f64 = 0.0;
    for _ in 0..n {
        let z: f64 = StandardNormal.sample(rng);
        let next = b + sd * z;
        let u: f64 = 1.0 - rng.gen::<f64>();
        best = best.max(bridge_max(b, next, v, u));
        b = next;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use CurveParam::{Finite, Infinite};

    #[test]
    fn normal_cdf_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        for i in 0..1000 {
            let z = -8.0 + 16.0 * i as f64 / 999.0;
            assert!((normal_cdf(z) + normal_cdf(-z) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn constants_and_conventions() {
        assert_eq!(yeh_constants(Infinite, Infinite).unwrap(), (1.0, 1.0));
        let (k, c) = yeh_constants(Infinite, Finite(3.0)).unwrap();
        assert!((k - 2.0 / 3.0).abs() < 1e-15 && (c - 2.0 / 3.0).abs() < 1e-15);
        let (k, c) = yeh_constants(Finite(2.0), Finite(3.0)).unwrap();
        assert!((k - 0.8).abs() < 1e-15 && (c - 4.0 / 3.0).abs() < 1e-15);
        let (k, c) = yeh_constants(Finite(2.0), Infinite).unwrap();
        assert!((k - 1.0).abs() < 1e-15 && (c - 2.0).abs() < 1e-15);
        assert!(yeh_constants(Finite(1.0), Infinite).is_err());
        assert!(yeh_constants(Finite(0.5), Finite(2.0)).is_err());
    }

    #[test]
    fn breakpoint_on_both_segments() {
        for (a, b) in [(2.0, 3.0), (1.5, 7.0), (10.0, 1.1)] {
            let curve = CurveSpec::new(Finite(a), Finite(b)).unwrap();
            let [x, y] = curve.breakpoint();
            assert!((y - (1.0 - x / a)).abs() < 1e-12);
            assert!((y - (b - b * x)).abs() < 1e-12);
            assert!(curve.k > 0.0 && curve.k <= 1.0 && curve.c > 0.0);
        }
    }

    #[test]
    fn parse_params() {
        assert_eq!("inf".parse::<CurveParam>().unwrap(), Infinite);
        assert_eq!("2.5".parse::<CurveParam>().unwrap(), Finite(2.5));
        assert!("1".parse::<CurveParam>().is_err());
        assert!("abc".parse::<CurveParam>().is_err());
    }

    #[test]
    fn h_endpoints_and_corollary() {
        assert!(yeh_h(Infinite, Infinite, 0.0).unwrap().abs() < 1e-16);
        for i in 0..=60 {
            let l = i as f64 * 0.1;
            let h = yeh_h(Infinite, Infinite, l).unwrap();
            assert!((h - boundary_sup_cdf(l)).abs() < 1e-15);
        }
        assert!(yeh_h(Finite(2.0), Finite(3.0), -0.1).is_err());
        assert!(yeh_h(Finite(2.0), Finite(3.0), f64::NAN).is_err());
        let tail = yeh_tail(Finite(2.0), Finite(3.0), 1.0).unwrap();
        assert!((tail + yeh_h(Finite(2.0), Finite(3.0), 1.0).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sheet_boundary_and_coarsening() {
        let s = sample_sheet(8, 2, 3).unwrap();
        for i in 0..9 {
            assert_eq!(s.lattice.at(&[0, i]), 0.0);
            assert_eq!(s.lattice.at(&[i, 0]), 0.0);
        }
        let c = s.coarsen(2).unwrap();
        assert_eq!(c.lattice.at(&[4, 4]), s.lattice.at(&[8, 8]));
        assert_eq!(c.lattice.at(&[1, 3]), s.lattice.at(&[2, 6]));
        assert!(s.coarsen(3).is_err());
        assert_eq!(sample_sheet(8, 2, 3).unwrap(), s);
    }

    #[test]
    fn sup_of_simple_fields() {
        let m = 4;
        let constant = Lattice { dim: 2, m, values: vec![1.5; 25] };
        assert_eq!(sup_on_curve(&constant, &CurveSpec::boundary(), 0).unwrap(), 1.5);
        // Breakpoint (0.8, 0.6) is the lattice node (4, 3) when m = 5.
        let curve = CurveSpec::new(Finite(2.0), Finite(3.0)).unwrap();
        let mut bump = vec![0.0; 36];
        bump[4 * 6 + 3] = 2.0;
        let field = Lattice { dim: 2, m: 5, values: bump };
        let s = sup_on_curve(&field, &curve, 0).unwrap();
        assert!((s - 2.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn exact_sup_beats_sampling() {
        let sheet = sample_sheet(16, 2, 11).unwrap();
        let curve = CurveSpec::new(Finite(2.0), Finite(3.0)).unwrap();
        let exact = sup_on_curve(&sheet.lattice, &curve, 0).unwrap();
        let dense = sup_on_curve(&sheet.lattice, &curve, 20_000).unwrap();
        assert!((exact - dense).abs() < 1e-9);
        let eval_max = (0..=20_000)
            .map(|i| {
                let s = i as f64 / 20_000.0;
                let p = lerp(curve.breakpoint(), [1.0, 0.0], s);
                sheet.lattice.bilinear(p[0], p[1])
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(exact >= eval_max - 1e-12);
    }

    #[test]
    fn bridge_max_bounds() {
        assert_eq!(bridge_max(0.3, 0.1, 0.0, 0.5), 0.3);
        assert!(bridge_max(0.3, 0.1, 0.01, 0.5) > 0.3);
        assert!((bridge_max(0.0, 0.0, 1.0, 1.0)).abs() < 1e-15);
    }
}
