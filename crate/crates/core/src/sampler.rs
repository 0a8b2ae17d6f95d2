//! Exact grid sampling of stationary Gaussian fields by circulant embedding,
//! plus a random-wave sampler used as an independent cross-check.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::covariance::{CovarianceModel, ModelKind};
use crate::error::{Error, Result};
use crate::rng;

/// Relative clipped-eigenvalue mass above which an embedding is rejected.
pub const CLIP_LIMIT: f64 = 1e-8;
/// Wrap-around covariance target used to size the torus.
pub const WRAP_TOLERANCE: f64 = 1e-14;

/// Regular grid over `[0, side]^dim` with `points` nodes per side.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub side: f64,
    pub spacing: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn new(dim: usize, side: f64, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) || !(side > 0.0) {
            return Err(Error::InvalidGrid(format!("side {side} and spacing {spacing} must be positive")));
        }
        let cells = (side / spacing).round();
        if (cells * spacing - side).abs() > 1e-9 * side.max(1.0) {
            return Err(Error::InvalidGrid(format!("side {side} is not a multiple of spacing {spacing}")));
        }
        Self::from_points(dim, cells as usize + 1, side / cells)
    }

    pub fn from_points(dim: usize, points: usize, spacing: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in {{1, 2}}")));
        }
        if points < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 points per side, got {points}")));
        }
        if !(spacing > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing {spacing} must be positive")));
        }
        Ok(GridSpec { dim, side: (points - 1) as f64 * spacing, spacing, points })
    }

    /// Fine cells per side.
    pub fn cells(&self) -> usize {
        self.points - 1
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coord(&self, i: usize) -> f64 {
        i as f64 * self.spacing
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct ClipReport {
    pub count: usize,
    pub most_negative: f64,
    pub clipped_mass: f64,
    pub max_eigenvalue: f64,
}

impl ClipReport {
    pub fn relative(&self) -> f64 {
        if self.max_eigenvalue > 0.0 {
            self.clipped_mass / self.max_eigenvalue
        } else {
            0.0
        }
    }
}

/// Diagonalized periodic embedding of a grid covariance.
#[derive(Clone)]
pub struct EmbeddingPlan {
    pub grid: GridSpec,
    pub model: String,
    /// Torus points per side.
    pub size: usize,
    pub eigenvalues: Vec<f64>,
    pub clip: ClipReport,
    amplitudes: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for EmbeddingPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EmbeddingPlan")
            .field("grid", &self.grid)
            .field("model", &self.model)
            .field("size", &self.size)
            .field("clip", &self.clip)
            .finish()
    }
}

/// One realization on a grid. `part` tells which half (real or imaginary) of
/// a complex circulant draw produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub grid: GridSpec,
    /// Row-major, first coordinate slowest.
    pub values: Vec<f64>,
    pub seed: u64,
    pub part: u8,
    pub model: String,
}

impl FieldSample {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.points + j]
    }
}

/// Smallest integer `>= n` whose only prime factors are 2, 3 and 5.
pub fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

fn torus_lag(k: usize, size: usize) -> f64 {
    if k <= size / 2 {
        k as f64
    } else {
        k as f64 - size as f64
    }
}

pub fn plan_embedding(model: &CovarianceModel, grid: &GridSpec) -> Result<EmbeddingPlan> {
    if model.dim() != grid.dim {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: grid.dim });
    }
    let cells = grid.cells();
    let pad = model
        .decay_radius(WRAP_TOLERANCE, 4.0 * grid.side)
        .map(|r| ((r / grid.spacing).ceil() as usize).max(1))
        .unwrap_or(cells);
    let size = smooth_size((cells + pad).max(2 * pad));
    let total = size.pow(grid.dim as u32);

    let mut buf: Vec<Complex64> = Vec::with_capacity(total);
    match grid.dim {
        1 => {
            for k in 0..size {
                let lag = [torus_lag(k, size) * grid.spacing];
                buf.push(Complex64::new(model.covariance(&lag), 0.0));
            }
        }
        _ => {
            for k1 in 0..size {
                let l1 = torus_lag(k1, size) * grid.spacing;
                for k2 in 0..size {
                    let lag = [l1, torus_lag(k2, size) * grid.spacing];
                    buf.push(Complex64::new(model.covariance(&lag), 0.0));
                }
            }
        }
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(size);
    transform(&fft, &mut buf, grid.dim, size, size);

    let eigenvalues: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let max_eigenvalue = eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut clip = ClipReport { max_eigenvalue, ..Default::default() };
    for &l in &eigenvalues {
        if l < 0.0 {
            clip.count += 1;
            clip.clipped_mass += -l;
            clip.most_negative = clip.most_negative.min(l);
        }
    }
    if clip.relative() > CLIP_LIMIT {
        return Err(Error::EmbeddingNotPsd { clipped: clip.clipped_mass, limit: CLIP_LIMIT * max_eigenvalue });
    }
    let amplitudes = eigenvalues.iter().map(|&l| (l.max(0.0) / total as f64).sqrt()).collect();
    Ok(EmbeddingPlan {
        grid: *grid,
        model: model.name().to_string(),
        size,
        eigenvalues,
        clip,
        amplitudes,
        fft,
    })
}

/// In-place forward DFT along every axis; for `dim == 2` only the first
/// `keep` columns receive the second pass.
fn transform(fft: &Arc<dyn Fft<f64>>, buf: &mut [Complex64], dim: usize, size: usize, keep: usize) {
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(buf, &mut scratch);
    if dim == 2 {
        let mut cols = vec![Complex64::default(); keep * size];
        for i in 0..size {
            let row = &buf[i * size..i * size + keep];
            for (j, v) in row.iter().enumerate() {
                cols[j * size + i] = *v;
            }
        }
        fft.process_with_scratch(&mut cols, &mut scratch);
        for j in 0..keep {
            for i in 0..size {
                buf[i * size + j] = cols[j * size + i];
            }
        }
    }
}

/// Two independent fields from one complex draw (real and imaginary parts).
pub fn sample_field_pair(plan: &EmbeddingPlan, seed: u64) -> [FieldSample; 2] {
    let n = plan.grid.points;
    let size = plan.size;
    let mut rng = rng::stream(seed);
    let mut buf: Vec<Complex64> = plan
        .amplitudes
        .iter()
        .map(|&a| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(a * re, a * im)
        })
        .collect();
    transform(&plan.fft, &mut buf, plan.grid.dim, size, n);

    let count = plan.grid.len();
    let mut re = Vec::with_capacity(count);
    let mut im = Vec::with_capacity(count);
    match plan.grid.dim {
        1 => {
            for c in &buf[..n] {
                re.push(c.re);
                im.push(c.im);
            }
        }
        _ => {
            for i in 0..n {
                for c in &buf[i * size..i * size + n] {
                    re.push(c.re);
                    im.push(c.im);
                }
            }
        }
    }
    let make = |values, part| FieldSample { grid: plan.grid, values, seed, part, model: plan.model.clone() };
    [make(re, 0), make(im, 1)]
}

pub fn sample_field(plan: &EmbeddingPlan, seed: u64) -> FieldSample {
    let [first, _] = sample_field_pair(plan, seed);
    first
}

/// Field for replication `rep`: pairs of replications share one complex draw.
pub fn sample_replication(plan: &EmbeddingPlan, base_seed: u64, rep: usize) -> FieldSample {
    let seed = rng::derive_seed(base_seed, (rep / 2) as u64);
    let [a, b] = sample_field_pair(plan, seed);
    if rep % 2 == 0 {
        a
    } else {
        b
    }
}

/// Evaluate a synthetic model's deterministic field on the grid.
pub fn sample_deterministic(model: &CovarianceModel, grid: &GridSpec) -> Result<FieldSample> {
    if model.dim() != grid.dim {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: grid.dim });
    }
    let field = model
        .deterministic_field()
        .ok_or_else(|| Error::InvalidParameter(format!("model `{}` has no deterministic field", model.name())))?;
    let n = grid.points;
    let values = match grid.dim {
        1 => (0..n).map(|i| field(&[grid.coord(i)])).collect(),
        _ => (0..n * n).map(|k| field(&[grid.coord(k / n), grid.coord(k % n)])).collect(),
    };
    Ok(FieldSample { grid: *grid, values, seed: 0, part: 0, model: model.name().to_string() })
}

/// Sum of `waves` random cosine waves with frequencies drawn from the
/// spectral density; the covariance converges to the model's as `waves`
/// grows.
pub fn sample_field_spectral(
    model: &CovarianceModel,
    grid: &GridSpec,
    waves: usize,
    seed: u64,
) -> Result<FieldSample> {
    if model.dim() != grid.dim {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: grid.dim });
    }
    if waves == 0 {
        return Err(Error::InvalidParameter("number of waves must be at least 1".into()));
    }
    let d = grid.dim;
    let n = grid.points;
    let mut rng = rng::stream(seed);
    let draw_frequency = |rng: &mut rng::Rng| -> Result<Vec<f64>> {
        match model.kind() {
            ModelKind::BargmannFock => Ok((0..d)
                .map(|_| std::f64::consts::SQRT_2 * rng.sample::<f64, _>(StandardNormal))
                .collect()),
            ModelKind::LargeBand => {
                let radius = rng.gen::<f64>().sqrt();
                let angle = std::f64::consts::TAU * rng.gen::<f64>();
                Ok(vec![radius * angle.cos(), radius * angle.sin()])
            }
            ModelKind::Synthetic(_) => {
                Err(Error::InvalidParameter("synthetic models have no spectral density".into()))
            }
        }
    };
    let scale = 1.0 / (waves as f64).sqrt();
    let mut values = vec![0.0; grid.len()];
    let mut u = vec![Complex64::default(); n];
    let mut v = vec![Complex64::default(); n];
    for _ in 0..waves {
        let w = draw_frequency(&mut rng)?;
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        // a cos(t) + b sin(t) = Re[(a - ib) e^{it}]
        let amp = Complex64::new(a * scale, -b * scale);
        for i in 0..n {
            u[i] = amp * Complex64::from_polar(1.0, w[0] * grid.coord(i));
        }
        if d == 1 {
            for (out, ui) in values.iter_mut().zip(&u) {
                *out += ui.re;
            }
        } else {
            for j in 0..n {
                v[j] = Complex64::from_polar(1.0, w[1] * grid.coord(j));
            }
            for i in 0..n {
                let ui = u[i];
                let row = &mut values[i * n..(i + 1) * n];
                for (out, vj) in row.iter_mut().zip(&v) {
                    *out += ui.re * vj.re - ui.im * vj.im;
                }
            }
        }
    }
    Ok(FieldSample { grid: *grid, values, seed, part: 0, model: model.name().to_string() })
}

pub const FIELD_MAGIC: &[u8; 4] = b"NSLF";
pub const FIELD_VERSION: u8 = 1;

/// Writes the raw dump: 32-byte header (magic, version u8, dim u8, points
/// u16, spacing f64, side f64, seed u64; little endian) then the values as
/// little-endian f64 in row-major order.
pub fn write_field_binary<W: Write>(sample: &FieldSample, mut out: W) -> Result<()> {
    let points = u16::try_from(sample.grid.points)
        .map_err(|_| Error::InvalidGrid("more than 65535 points per side cannot be dumped".into()))?;
    let mut header = [0u8; 32];
    header[..4].copy_from_slice(FIELD_MAGIC);
    header[4] = FIELD_VERSION;
    header[5] = sample.grid.dim as u8;
    header[6..8].copy_from_slice(&points.to_le_bytes());
    header[8..16].copy_from_slice(&sample.grid.spacing.to_le_bytes());
    header[16..24].copy_from_slice(&sample.grid.side.to_le_bytes());
    header[24..32].copy_from_slice(&sample.seed.to_le_bytes());
    out.write_all(&header)?;
    let mut body = Vec::with_capacity(8 * sample.values.len());
    for v in &sample.values {
        body.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&body)?;
    Ok(())
}

pub fn read_field_binary<R: Read>(mut input: R) -> Result<FieldSample> {
    let mut header = [0u8; 32];
    input.read_exact(&mut header)?;
    if &header[..4] != FIELD_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    if header[4] != FIELD_VERSION {
        return Err(Error::Format(format!("unsupported version {}", header[4])));
    }
    let dim = header[5] as usize;
    let points = u16::from_le_bytes([header[6], header[7]]) as usize;
    let spacing = f64::from_le_bytes(header[8..16].try_into().unwrap());
    let side = f64::from_le_bytes(header[16..24].try_into().unwrap());
    let seed = u64::from_le_bytes(header[24..32].try_into().unwrap());
    let grid = GridSpec::from_points(dim, points, spacing)?;
    if (grid.side - side).abs() > 1e-9 * side.max(1.0) {
        return Err(Error::Format("side inconsistent with points and spacing".into()));
    }
    let mut body = vec![0u8; 8 * grid.len()];
    input.read_exact(&mut body)?;
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(FieldSample { grid: GridSpec { side, ..grid }, values, seed, part: 0, model: String::new() })
}

pub fn write_field_file(sample: &FieldSample, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_field_binary(sample, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{make_model, BARGMANN_FOCK, LARGE_BAND};

    #[test]
    fn grid_invariants() {
        let g = GridSpec::new(2, 20.0, 0.05).unwrap();
        assert_eq!(g.points, 401);
        assert!((g.side - (g.points - 1) as f64 * g.spacing).abs() < 1e-12);
        assert!(GridSpec::new(2, 1.0, 0.3).is_err());
        assert!(GridSpec::from_points(2, 1, 0.1).is_err());
        assert!(GridSpec::new(1, 1.0, -0.1).is_err());
    }

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_size(1121), 1125);
        assert_eq!(smooth_size(7), 8);
        assert_eq!(smooth_size(31), 32);
    }

    #[test]
    fn bargmann_fock_embedding_needs_no_clipping() {
        let model = make_model(BARGMANN_FOCK, 2).unwrap();
        let grid = GridSpec::new(2, 20.0, 0.05).unwrap();
        let plan = plan_embedding(&model, &grid).unwrap();
        assert!(plan.clip.relative() <= 1e-12, "{:?}", plan.clip);
        assert!(plan.size >= grid.points);
    }

    #[test]
    fn delta_covariance_has_flat_spectrum() {
        let model = CovarianceModel::synthetic(2);
        let grid = GridSpec::from_points(2, 9, 1.0).unwrap();
        let plan = plan_embedding(&model, &grid).unwrap();
        assert!(plan.eigenvalues.iter().all(|&l| (l - 1.0).abs() < 1e-12));
        assert_eq!(plan.clip.count, 0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let model = make_model(BARGMANN_FOCK, 1).unwrap();
        let grid = GridSpec::new(2, 5.0, 0.1).unwrap();
        assert!(matches!(plan_embedding(&model, &grid), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn large_band_circulant_is_rejected_or_clean() {
        // Slow |x|^{-3/2} decay: either the clipped mass is reported under the
        // limit or construction fails loudly.
        let model = make_model(LARGE_BAND, 2).unwrap();
        let grid = GridSpec::new(2, 10.0, 0.25).unwrap();
        match plan_embedding(&model, &grid) {
            Ok(plan) => assert!(plan.clip.relative() <= CLIP_LIMIT),
            Err(e) => assert!(matches!(e, Error::EmbeddingNotPsd { .. })),
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let model = make_model(BARGMANN_FOCK, 2).unwrap();
        let grid = GridSpec::new(2, 4.0, 0.1).unwrap();
        let plan = plan_embedding(&model, &grid).unwrap();
        let a = sample_field(&plan, 42);
        let b = sample_field(&plan, 42);
        assert_eq!(a, b);
        assert_ne!(a.values, sample_field(&plan, 43).values);
        let s1 = sample_field_spectral(&model, &grid, 64, 5).unwrap();
        let s2 = sample_field_spectral(&model, &grid, 64, 5).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn binary_dump_layout() {
        let model = make_model(BARGMANN_FOCK, 1).unwrap();
        let grid = GridSpec::new(1, 2.0, 0.5).unwrap();
        let sample = sample_field(&plan_embedding(&model, &grid).unwrap(), 9);
        let mut bytes = Vec::new();
        write_field_binary(&sample, &mut bytes).unwrap();
        assert_eq!(bytes.len(), 32 + 8 * 5);
        assert_eq!(&bytes[..4], b"NSLF");
        assert_eq!(bytes[5], 1);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 5);
        let back = read_field_binary(bytes.as_slice()).unwrap();
        assert_eq!(back.values, sample.values);
        assert_eq!(back.seed, 9);
        assert!(read_field_binary(&b"XXXX"[..]).is_err());
    }
}
