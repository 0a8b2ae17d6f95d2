//! Nodal measure extraction and the centered, rescaled partition field.
//!
//! A partition of `[0, R]^d` into `m^d` half-open cells receives the nodal
//! measure of a sampled field: zero counts when `d = 1`, marching-squares
//! curve length when `d = 2`. Each zero or segment lands in exactly one cell,
//! so increments over adjacent rectangles add up exactly.

use crate::error::{Error, Result};
use crate::sampler::FieldSample;

/// Grid nodes with `|f|` below this are counted as degenerate.
pub const DEGENERATE_LEVEL: f64 = 1e-9;

/// Nodal measure per partition cell.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementGrid {
    pub dim: usize,
    pub m: usize,
    /// Row-major, first coordinate slowest.
    pub cells: Vec<f64>,
    pub side: f64,
    pub model: String,
    pub seed: u64,
    /// Grid nodes with `|f| < DEGENERATE_LEVEL`.
    pub degenerate_nodes: usize,
}

impl IncrementGrid {
    pub fn total(&self) -> f64 {
        compensated_sum(self.cells.iter().copied())
    }

    /// Volume of one cell in field coordinates.
    pub fn cell_volume(&self) -> f64 {
        (self.side / self.m as f64).powi(self.dim as i32)
    }
}

/// Values on the `(m+1)^d` lattice `{0, 1/m, ..., 1}^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub dim: usize,
    pub m: usize,
    pub values: Vec<f64>,
}

impl Lattice {
    pub fn side(&self) -> usize {
        self.m + 1
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        let s = self.side();
        match self.dim {
            1 => self.values[index[0]],
            _ => self.values[index[0] * s + index[1]],
        }
    }

    /// Value at the lattice point nearest to `t`, which must lie on the lattice.
    pub fn value_at(&self, t: &[f64]) -> Result<f64> {
        let idx = t.iter().map(|&x| lattice_index(x, self.m)).collect::<Result<Vec<_>>>()?;
        Ok(self.at(&idx))
    }

    /// Bilinear interpolation at `t` in `[0, 1]^2`.
    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        debug_assert_eq!(self.dim, 2);
        let m = self.m as f64;
        let fx = (x.clamp(0.0, 1.0) * m).min(m);
        let fy = (y.clamp(0.0, 1.0) * m).min(m);
        let i = (fx.floor() as usize).min(self.m - 1);
        let j = (fy.floor() as usize).min(self.m - 1);
        let u = fx - i as f64;
        let v = fy - j as f64;
        let s = self.side();
        let v00 = self.values[i * s + j];
        let v10 = self.values[(i + 1) * s + j];
        let v01 = self.values[i * s + j + 1];
        let v11 = self.values[(i + 1) * s + j + 1];
        (1.0 - u) * ((1.0 - v) * v00 + v * v01) + u * ((1.0 - v) * v10 + v * v11)
    }
}

/// Centered, rescaled partition field `xi_R` on `{0, 1/m, ..., 1}^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct XiField {
    pub lattice: Lattice,
    /// Centered rescaled measure of each cell.
    pub cells: Vec<f64>,
    pub gamma2: f64,
    pub rho1: f64,
    pub side: f64,
}

impl XiField {
    pub fn dim(&self) -> usize {
        self.lattice.dim
    }

    pub fn m(&self) -> usize {
        self.lattice.m
    }

    pub fn value_at(&self, t: &[f64]) -> Result<f64> {
        self.lattice.value_at(t)
    }
}

/// Axis-aligned rectangle `[lo, hi]` in `[0, 1]^d`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Rect {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Rect { lo, hi }
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| (b - a).max(0.0)).product()
    }
}

fn lattice_index(t: f64, m: usize) -> Result<usize> {
    let x = t * m as f64;
    let k = x.round();
    if (x - k).abs() > 1e-9 * (m as f64).max(1.0) || k < 0.0 || k > m as f64 {
        return Err(Error::OffLattice(t));
    }
    Ok(k as usize)
}

pub(crate) fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    // Neumaier summation
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn positive(v: f64) -> bool {
    v > 0.0
}

/// Result of counting zeros of a one-dimensional path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZeroCount {
    pub count: usize,
    pub degenerate_nodes: usize,
}

/// Zero of the linear interpolant on `[x0, x0 + h]` between values `a` and `b`
/// of opposite sign.
fn interpolated_zero(x0: f64, h: f64, a: f64, b: f64) -> f64 {
    x0 + h * (a / (a - b))
}

/// Number of sign changes of the sampled path with the zero of the linear
/// interpolant in the half-open interval `[lo, hi)`.
pub fn zero_count_1d(sample: &FieldSample, interval: (f64, f64)) -> Result<ZeroCount> {
    if sample.grid.dim != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: sample.grid.dim });
    }
    let h = sample.grid.spacing;
    let v = &sample.values;
    let mut count = 0;
    for i in 0..v.len() - 1 {
        if positive(v[i]) != positive(v[i + 1]) {
            let z = interpolated_zero(sample.grid.coord(i), h, v[i], v[i + 1]);
            if z >= interval.0 && z < interval.1 {
                count += 1;
            }
        }
    }
    let degenerate_nodes = v.iter().filter(|x| x.abs() < DEGENERATE_LEVEL).count();
    Ok(ZeroCount { count, degenerate_nodes })
}

fn check_alignment(sample: &FieldSample, m: usize) -> Result<usize> {
    let cells = sample.grid.cells();
    if m == 0 || cells % m != 0 {
        return Err(Error::Misaligned { m, cells });
    }
    Ok(cells / m)
}

/// Zero counts per partition cell (`d = 1`). Each crossing belongs to the
/// fine interval holding it.
pub fn zero_count_cells(sample: &FieldSample, m: usize) -> Result<IncrementGrid> {
    if sample.grid.dim != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: sample.grid.dim });
    }
    let stride = check_alignment(sample, m)?;
    let v = &sample.values;
    let mut cells = vec![0.0; m];
    for i in 0..v.len() - 1 {
        if positive(v[i]) != positive(v[i + 1]) {
            cells[i / stride] += 1.0;
        }
    }
    Ok(IncrementGrid {
        dim: 1,
        m,
        cells,
        side: sample.grid.side,
        model: sample.model.clone(),
        seed: sample.seed,
        degenerate_nodes: v.iter().filter(|x| x.abs() < DEGENERATE_LEVEL).count(),
    })
}

/// Length of the marching-squares zero set inside one square cell of side
/// `h`, corners listed counter-clockwise from the lower left:
/// `v00 (x, y)`, `v10 (x + h, y)`, `v11 (x + h, y + h)`, `v01 (x, y + h)`.
pub fn marching_square_length(v00: f64, v10: f64, v11: f64, v01: f64, h: f64) -> f64 {
    let p00 = positive(v00);
    let p10 = positive(v10);
    let p11 = positive(v11);
    let p01 = positive(v01);
    if p00 == p10 && p10 == p11 && p11 == p01 {
        return 0.0;
    }
    // Crossing points in cell units on edges bottom, right, top, left.
    let bottom = (p00 != p10).then(|| (v00 / (v00 - v10), 0.0));
    let right = (p10 != p11).then(|| (1.0, v10 / (v10 - v11)));
    let top = (p01 != p11).then(|| (v01 / (v01 - v11), 1.0));
    let left = (p00 != p01).then(|| (0.0, v00 / (v00 - v01)));
    let dist = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).hypot(a.1 - b.1);

    let crossings: Vec<(f64, f64)> = [bottom, right, top, left].into_iter().flatten().collect();
    let units = match crossings.len() {
        2 => dist(crossings[0], crossings[1]),
        4 => {
            let (b, r, t, l) = (bottom.unwrap(), right.unwrap(), top.unwrap(), left.unwrap());
            let centre = 0.25 * (v00 + v10 + v11 + v01);
            if positive(centre) == p00 {
                // v00 and v11 connected through the centre: cut off v10 and v01.
                dist(b, r) + dist(t, l)
            } else {
                dist(b, l) + dist(r, t)
            }
        }
        _ => unreachable!("a square has an even number of sign changes"),
    };
    units * h
}

/// Nodal length per partition cell (`d = 2`).
pub fn nodal_length_cells(sample: &FieldSample, m: usize) -> Result<IncrementGrid> {
    if sample.grid.dim != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: sample.grid.dim });
    }
    let stride = check_alignment(sample, m)?;
    let n = sample.grid.points;
    let h = sample.grid.spacing;
    let v = &sample.values;
    let mut cells = vec![0.0; m * m];
    for i in 0..n - 1 {
        let row0 = &v[i * n..(i + 1) * n];
        let row1 = &v[(i + 1) * n..(i + 2) * n];
        let ci = i / stride;
        for j in 0..n - 1 {
            // First coordinate is i (x), second is j (y).
            let len = marching_square_length(row0[j], row1[j], row1[j + 1], row0[j + 1], h);
            if len != 0.0 {
                cells[ci * m + j / stride] += len;
            }
        }
    }
    Ok(IncrementGrid {
        dim: 2,
        m,
        cells,
        side: sample.grid.side,
        model: sample.model.clone(),
        seed: sample.seed,
        degenerate_nodes: v.iter().filter(|x| x.abs() < DEGENERATE_LEVEL).count(),
    })
}

/// Nodal increments of a sample in any supported dimension.
pub fn nodal_cells(sample: &FieldSample, m: usize) -> Result<IncrementGrid> {
    match sample.grid.dim {
        1 => zero_count_cells(sample, m),
        _ => nodal_length_cells(sample, m),
    }
}

fn prefix_lattice(dim: usize, m: usize, cells: &[f64]) -> Lattice {
    let s = m + 1;
    match dim {
        1 => {
            let mut values = Vec::with_capacity(s);
            values.push(0.0);
            let mut acc = 0.0;
            for c in cells {
                acc += c;
                values.push(acc);
            }
            Lattice { dim, m, values }
        }
        _ => {
            let mut values = vec![0.0; s * s];
            // Row prefix sums, then accumulate rows.
            for i in 0..m {
                let mut acc = 0.0;
                for j in 0..m {
                    acc += cells[i * m + j];
                    values[(i + 1) * s + j + 1] = acc;
                }
            }
            for i in 1..s {
                for j in 1..s {
                    values[i * s + j] += values[(i - 1) * s + j];
                }
            }
            Lattice { dim, m, values }
        }
    }
}

/// Partition function `t -> nu([0, t] R)` on the lattice.
pub fn cumulative(inc: &IncrementGrid) -> Lattice {
    prefix_lattice(inc.dim, inc.m, &inc.cells)
}

/// Inclusion–exclusion increment of a lattice function over `rect`.
pub fn rectangle_increment(lattice: &Lattice, rect: &Rect) -> Result<f64> {
    if rect.lo.len() != lattice.dim || rect.hi.len() != lattice.dim {
        return Err(Error::ShapeMismatch(format!(
            "rectangle of dimension {} on a {}-dimensional lattice",
            rect.lo.len(),
            lattice.dim
        )));
    }
    let lo = rect.lo.iter().map(|&t| lattice_index(t, lattice.m)).collect::<Result<Vec<_>>>()?;
    let hi = rect.hi.iter().map(|&t| lattice_index(t, lattice.m)).collect::<Result<Vec<_>>>()?;
    if lo.iter().zip(&hi).any(|(a, b)| a > b) {
        return Err(Error::InvalidParameter("rectangle with lo > hi".into()));
    }
    Ok(match lattice.dim {
        1 => lattice.at(&[hi[0]]) - lattice.at(&[lo[0]]),
        _ => {
            (lattice.at(&[hi[0], hi[1]]) - lattice.at(&[lo[0], hi[1]]))
                - (lattice.at(&[hi[0], lo[1]]) - lattice.at(&[lo[0], lo[1]]))
        }
    })
}

/// Direct sum of the cells inside a lattice-aligned rectangle.
pub fn rectangle_sum(dim: usize, m: usize, cells: &[f64], rect: &Rect) -> Result<f64> {
    let lo = rect.lo.iter().map(|&t| lattice_index(t, m)).collect::<Result<Vec<_>>>()?;
    let hi = rect.hi.iter().map(|&t| lattice_index(t, m)).collect::<Result<Vec<_>>>()?;
    Ok(match dim {
        1 => compensated_sum(cells[lo[0]..hi[0]].iter().copied()),
        _ => compensated_sum(
            (lo[0]..hi[0]).flat_map(|i| (lo[1]..hi[1]).map(move |j| cells[i * m + j])),
        ),
    })
}

fn centered_cells(inc: &IncrementGrid, rho1: f64, gamma2: f64) -> Result<Vec<f64>> {
    if !(gamma2 > 0.0) {
        return Err(Error::NonPositiveGamma2(gamma2));
    }
    let expected = rho1 * inc.cell_volume();
    let scale = 1.0 / (gamma2.sqrt() * inc.side.powf(inc.dim as f64 / 2.0));
    Ok(inc.cells.iter().map(|c| (c - expected) * scale).collect())
}

/// Centers each cell by its expected measure `rho1 * Vol`, rescales by
/// `sqrt(gamma2) R^{d/2}`, and accumulates.
pub fn center_and_rescale(inc: &IncrementGrid, rho1: f64, gamma2: f64) -> Result<XiField> {
    let cells = centered_cells(inc, rho1, gamma2)?;
    let lattice = prefix_lattice(inc.dim, inc.m, &cells);
    Ok(XiField { lattice, cells, gamma2, rho1, side: inc.side })
}

/// Riemann-sum pairing of the normalized signed measure with a test function
/// sampled at cell centres.
pub fn pair_with_test_function(inc: &IncrementGrid, phi: &[f64], rho1: f64, gamma2: f64) -> Result<f64> {
    if phi.len() != inc.cells.len() {
        return Err(Error::ShapeMismatch(format!(
            "test function has {} samples for {} cells",
            phi.len(),
            inc.cells.len()
        )));
    }
    let cells = centered_cells(inc, rho1, gamma2)?;
    Ok(compensated_sum(cells.iter().zip(phi).map(|(c, p)| c * p)))
}

/// Samples `phi` at the centres of the `m^d` partition cells of `[0, 1]^d`.
pub fn sample_at_cell_centres<F: Fn(&[f64]) -> f64>(dim: usize, m: usize, phi: F) -> Vec<f64> {
    let c = |i: usize| (i as f64 + 0.5) / m as f64;
    match dim {
        1 => (0..m).map(|i| phi(&[c(i)])).collect(),
        _ => (0..m * m).map(|k| phi(&[c(k / m), c(k % m)])).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::CovarianceModel;
    use crate::sampler::{sample_deterministic, GridSpec};

    fn synthetic_2d<F: Fn(&[f64]) -> f64 + Send + Sync + 'static>(side: f64, h: f64, f: F) -> FieldSample {
        let model = CovarianceModel::synthetic(2).with_field(f);
        sample_deterministic(&model, &GridSpec::new(2, side, h).unwrap()).unwrap()
    }

    #[test]
    fn sine_zeros_half_open() {
        let model = CovarianceModel::synthetic(1).with_field(|x| (std::f64::consts::TAU * x[0]).sin());
        let s = sample_deterministic(&model, &GridSpec::new(1, 1.0, 0.001).unwrap()).unwrap();
        let z = zero_count_1d(&s, (0.0, 1.0)).unwrap();
        assert_eq!(z.count, 2);
        assert!(z.degenerate_nodes >= 2);
    }

    #[test]
    fn constant_sign_has_no_zeros() {
        let model = CovarianceModel::synthetic(1).with_field(|x| 1.0 + x[0]);
        let s = sample_deterministic(&model, &GridSpec::new(1, 3.0, 0.01).unwrap()).unwrap();
        assert_eq!(zero_count_1d(&s, (0.0, 3.0)).unwrap().count, 0);
        assert_eq!(zero_count_cells(&s, 3).unwrap().total(), 0.0);
    }

    #[test]
    fn straight_line_is_exact() {
        let side = 10.0;
        let s = synthetic_2d(side, 0.05, move |x| x[0] - 0.5 * side);
        for m in [1, 4, 20, 200] {
            let inc = nodal_length_cells(&s, m).unwrap();
            assert!((inc.total() - side).abs() < 1e-9, "m={m}: {}", inc.total());
        }
        let tilted = synthetic_2d(side, 0.05, |x| x[0] - 0.3 * x[1] - 2.1);
        let inc = nodal_length_cells(&tilted, 10).unwrap();
        assert!((inc.total() - side * (1.0f64 + 0.09).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn saddle_uses_centre_rule() {
        // Positive on the diagonal v00, v11; centre positive -> cuts around v10, v01.
        let a = marching_square_length(1.0, -1.0, 1.0, -1.0, 1.0);
        let expected = 2.0 * (0.5f64).hypot(0.5);
        assert!((a - expected).abs() < 1e-15);
        let b = marching_square_length(1.0, -2.0, 1.0, -2.0, 1.0);
        let p: f64 = 1.0 / 3.0;
        let expected_b = 2.0 * p.hypot(p);
        assert!((b - expected_b).abs() < 1e-15);
    }

    #[test]
    fn misaligned_partition_rejected() {
        let s = synthetic_2d(1.0, 0.1, |x| x[0] - 0.5);
        assert!(matches!(nodal_length_cells(&s, 3), Err(Error::Misaligned { .. })));
        let one_d = CovarianceModel::synthetic(1).with_field(|x| x[0] - 0.5);
        let s1 = sample_deterministic(&one_d, &GridSpec::new(1, 1.0, 0.1).unwrap()).unwrap();
        assert!(matches!(nodal_length_cells(&s1, 2), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(zero_count_1d(&s, (0.0, 1.0)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn cumulative_single_cell() {
        let m = 4;
        let mut cells = vec![0.0; m * m];
        cells[0] = 1.0;
        let inc = IncrementGrid { dim: 2, m, cells, side: 1.0, model: String::new(), seed: 0, degenerate_nodes: 0 };
        let lat = cumulative(&inc);
        for i in 0..=m {
            for j in 0..=m {
                let expected = if i >= 1 && j >= 1 { 1.0 } else { 0.0 };
                assert_eq!(lat.at(&[i, j]), expected);
            }
        }
        let zero = IncrementGrid { cells: vec![0.0; m * m], ..inc };
        assert!(cumulative(&zero).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rectangle_increment_cases() {
        let m = 4;
        let cells: Vec<f64> = (0..m * m).map(|k| k as f64 * 0.5 + 1.0).collect();
        let inc = IncrementGrid { dim: 2, m, cells: cells.clone(), side: 1.0, model: String::new(), seed: 0, degenerate_nodes: 0 };
        let lat = cumulative(&inc);
        let full = Rect::new(vec![0.0, 0.0], vec![1.0, 1.0]);
        assert!((rectangle_increment(&lat, &full).unwrap() - inc.total()).abs() < 1e-12);
        let flat = Rect::new(vec![0.25, 0.5], vec![0.25, 1.0]);
        assert_eq!(rectangle_increment(&lat, &flat).unwrap(), 0.0);
        let off = Rect::new(vec![0.1, 0.0], vec![0.5, 0.5]);
        assert!(matches!(rectangle_increment(&lat, &off), Err(Error::OffLattice(_))));
    }

    #[test]
    fn perfect_centering_gives_zero_field() {
        let m = 5;
        let side = 10.0;
        let rho1 = 0.7;
        let vol = (side / m as f64).powi(2);
        let inc = IncrementGrid {
            dim: 2,
            m,
            cells: vec![rho1 * vol; m * m],
            side,
            model: String::new(),
            seed: 0,
            degenerate_nodes: 0,
        };
        let xi = center_and_rescale(&inc, rho1, 0.3).unwrap();
        assert!(xi.lattice.values.iter().all(|v| v.abs() < 1e-12));
        assert!(matches!(center_and_rescale(&inc, rho1, 0.0), Err(Error::NonPositiveGamma2(_))));
        assert!(matches!(center_and_rescale(&inc, rho1, -1.0), Err(Error::NonPositiveGamma2(_))));
    }

    #[test]
    fn pairing_with_constants() {
        let m = 6;
        let inc = IncrementGrid {
            dim: 2,
            m,
            cells: (0..m * m).map(|k| (k % 7) as f64).collect(),
            side: 12.0,
            model: String::new(),
            seed: 0,
            degenerate_nodes: 0,
        };
        let xi = center_and_rescale(&inc, 0.8, 0.4).unwrap();
        let ones = sample_at_cell_centres(2, m, |_| 1.0);
        let p = pair_with_test_function(&inc, &ones, 0.8, 0.4).unwrap();
        assert!((p - xi.value_at(&[1.0, 1.0]).unwrap()).abs() < 1e-12);
        let zeros = sample_at_cell_centres(2, m, |_| 0.0);
        assert_eq!(pair_with_test_function(&inc, &zeros, 0.8, 0.4).unwrap(), 0.0);
        assert!(matches!(pair_with_test_function(&inc, &ones[1..], 0.8, 0.4), Err(Error::ShapeMismatch(_))));
        assert_eq!(xi.value_at(&[0.0, 0.5]).unwrap(), 0.0);
    }
}
