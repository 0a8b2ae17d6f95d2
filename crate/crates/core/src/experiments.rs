//! Monte Carlo drivers: finite-dimensional CLT, sup laws over Yeh curves,
//! the adjacent-rectangle moment scan and the `gamma2` cross-check.
//!
//! Replications run in parallel; results are collected in replication order
//! and reduced sequentially, so reports do not depend on the worker count.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{make_model, CovarianceModel};
use crate::error::{Error, Result};
use crate::kac_rice::{self, alpha_bound};
use crate::nodal::{self, Lattice};
use crate::rng::derive_seed;
use crate::sampler::{plan_embedding, sample_deterministic, sample_field_pair, EmbeddingPlan, FieldSample, GridSpec};
use crate::sheet::{self, boundary_sup_cdf, normal_cdf, yeh_h, CurveParam, CurveSpec, CurveSupSampler};
use crate::stats::{self, covariance_estimate, ks_statistic, mean_estimate, variance_estimate, weighted_regression};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "NODAL_SHEET_THREADS";
pub const MIN_REPLICATIONS: usize = 100;

/// Smooth test functions on `[0, 1]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestFunction {
    One,
    /// `prod_j cos(pi t_j)`.
    CosProduct,
    /// `prod_j sin(pi t_j)`.
    SinProduct,
}

impl TestFunction {
    pub fn eval(self, t: &[f64]) -> f64 {
        match self {
            TestFunction::One => 1.0,
            TestFunction::CosProduct => t.iter().map(|x| (PI * x).cos()).product(),
            TestFunction::SinProduct => t.iter().map(|x| (PI * x).sin()).product(),
        }
    }

    /// `int_{[0,1]^d} phi^2`.
    pub fn squared_norm(self, dim: usize) -> f64 {
        match self {
            TestFunction::One => 1.0,
            _ => 0.5f64.powi(dim as i32),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TestFunction::One => "one",
            TestFunction::CosProduct => "cos-product",
            TestFunction::SinProduct => "sin-product",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "one" => Ok(TestFunction::One),
            "cos-product" => Ok(TestFunction::CosProduct),
            "sin-product" => Ok(TestFunction::SinProduct),
            other => Err(Error::Config(format!("unknown test function `{other}`"))),
        }
    }
}

/// Pass/fail thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub ks_alpha: f64,
    pub covariance_se: f64,
    pub phi_variance_rel: f64,
    pub sup_distance: f64,
    pub self_test_sup_distance: f64,
    pub gamma2_rel: f64,
    pub moment_slope_min: f64,
    pub cauchy_schwarz_se: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            ks_alpha: 0.01,
            covariance_se: 3.0,
            phi_variance_rel: 0.15,
            sup_distance: 0.05,
            self_test_sup_distance: 0.01,
            gamma2_rel: 0.05,
            moment_slope_min: 1.05,
            cauchy_schwarz_se: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: String,
    pub dim: usize,
    /// Side lengths `R`, processed in increasing order.
    pub radii: Vec<f64>,
    /// Fine grid spacing `h`.
    pub spacing: f64,
    /// Partition resolution `m`; `0` uses every fine cell.
    pub partition: usize,
    pub replications: usize,
    pub seed: u64,
    pub lambda_grid: Vec<f64>,
    pub curves: Vec<(CurveParam, CurveParam)>,
    /// Points `t` where the law of `xi_R(t)` is tested.
    pub points: Vec<Vec<f64>>,
    /// Pairs `(s, t)` where `Cov(xi_R(s), xi_R(t))` is tested.
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
    pub test_functions: Vec<TestFunction>,
    /// Dyadic depth of the moment-scan rectangle family.
    pub moment_levels: usize,
    pub bootstrap: usize,
    /// Substitute Brownian sheet samples for `xi_R`.
    pub self_test: bool,
    pub sheet_resolution: usize,
    /// Points per curve segment for the exact sheet sup sampler.
    pub curve_points: usize,
    /// Replications whose `xi_R` lattice is kept for heatmaps.
    pub heatmaps: Vec<usize>,
    pub tolerances: Tolerances,
}

impl ExperimentConfig {
    pub fn defaults(dim: usize) -> Self {
        let (points, pairs) = if dim == 1 {
            (
                vec![vec![1.0], vec![0.5], vec![0.0]],
                vec![
                    (vec![0.5], vec![1.0]),
                    (vec![0.25], vec![0.75]),
                    (vec![0.5], vec![0.5]),
                    (vec![0.25], vec![1.0]),
                    (vec![0.75], vec![1.0]),
                ],
            )
        } else {
            (
                vec![vec![1.0, 1.0], vec![0.5, 0.5], vec![0.0, 1.0]],
                vec![
                    (vec![0.5, 1.0], vec![1.0, 0.5]),
                    (vec![1.0, 1.0], vec![0.5, 0.5]),
                    (vec![0.5, 1.0], vec![1.0, 1.0]),
                    (vec![0.25, 0.5], vec![0.5, 0.25]),
                    (vec![0.75, 0.25], vec![0.25, 0.75]),
                ],
            )
        };
        ExperimentConfig {
            model: crate::covariance::BARGMANN_FOCK.into(),
            dim,
            radii: vec![if dim == 1 { 200.0 } else { 50.0 }],
            spacing: 0.05,
            partition: 0,
            replications: 2000,
            seed: 1,
            lambda_grid: (0..=60).map(|i| i as f64 * 0.05).collect(),
            curves: vec![(CurveParam::Infinite, CurveParam::Infinite)],
            points,
            pairs,
            test_functions: vec![TestFunction::CosProduct],
            moment_levels: 6,
            bootstrap: 500,
            self_test: false,
            sheet_resolution: 64,
            curve_points: 1024,
            heatmaps: Vec::new(),
            tolerances: Tolerances::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.dim) {
            return Err(Error::UnsupportedDimension { model: self.model.clone(), dim: self.dim });
        }
        if self.replications < MIN_REPLICATIONS {
            return Err(Error::TooFewSamples { got: self.replications, min: MIN_REPLICATIONS });
        }
        if self.radii.is_empty() || self.radii.iter().any(|r| !(*r >= 1.0) || r.is_infinite()) {
            return Err(Error::Config(format!("radii must be finite and at least 1, got {:?}", self.radii)));
        }
        if !(self.spacing > 0.0) {
            return Err(Error::Config(format!("spacing must be positive, got {}", self.spacing)));
        }
        let in_unit_cube = |t: &Vec<f64>| t.len() == self.dim && t.iter().all(|x| (0.0..=1.0).contains(x));
        if !self.points.iter().all(in_unit_cube) || !self.pairs.iter().all(|(s, t)| in_unit_cube(s) && in_unit_cube(t)) {
            return Err(Error::Config(format!("evaluation points must lie in [0, 1]^{}", self.dim)));
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config("lambda grid must be nonnegative".into()));
        }
        for r in &self.radii {
            self.grid(*r)?;
        }
        Ok(())
    }

    fn sorted_radii(&self) -> Vec<f64> {
        let mut r = self.radii.clone();
        r.sort_by(f64::total_cmp);
        r.dedup();
        r
    }

    fn grid(&self, side: f64) -> Result<GridSpec> {
        GridSpec::new(self.dim, side, self.spacing)
    }

    fn partition_for(&self, grid: &GridSpec) -> Result<usize> {
        let m = if self.partition == 0 { grid.cells() } else { self.partition };
        if grid.cells() % m != 0 {
            return Err(Error::Misaligned { m, cells: grid.cells() });
        }
        Ok(m)
    }
}

/// Rule deciding a check from its recorded numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Criterion {
    /// `|estimate - reference| <= k * std_error`.
    WithinSe { k: f64 },
    /// `|estimate - reference| <= tol * |reference|`.
    Relative { tol: f64 },
    /// `|estimate - reference| <= tol`.
    Absolute { tol: f64 },
    /// `p_value > alpha`.
    PValueAbove { alpha: f64 },
    /// `statistic <= bound`.
    StatisticAtMost { bound: f64 },
    /// `estimate >= bound`.
    AtLeast { bound: f64 },
    /// `values` strictly decreasing.
    Decreasing { values: Vec<f64> },
    /// Reported only.
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub reference: f64,
    pub provenance: String,
    pub criterion: Criterion,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, estimate: f64, std_error: f64, reference: f64, criterion: Criterion) -> Self {
        let mut c = Check {
            name: name.into(),
            estimate,
            std_error,
            statistic: None,
            p_value: None,
            reference,
            provenance: String::new(),
            criterion,
            passed: false,
        };
        c.passed = c.evaluate();
        c
    }

    pub fn with_test(mut self, statistic: f64, p_value: Option<f64>) -> Self {
        self.statistic = Some(statistic);
        self.p_value = p_value;
        self.passed = self.evaluate();
        self
    }

    pub fn from(mut self, provenance: &str) -> Self {
        self.provenance = provenance.into();
        self
    }

    /// Pass/fail from the recorded numbers alone.
    pub fn evaluate(&self) -> bool {
        let gap = (self.estimate - self.reference).abs();
        match &self.criterion {
            Criterion::WithinSe { k } => gap <= k * self.std_error,
            Criterion::Relative { tol } => gap <= tol * self.reference.abs(),
            Criterion::Absolute { tol } => gap <= *tol,
            Criterion::PValueAbove { alpha } => self.p_value.is_some_and(|p| p > *alpha),
            Criterion::StatisticAtMost { bound } => self.statistic.is_some_and(|s| s <= *bound),
            Criterion::AtLeast { bound } => self.estimate >= *bound,
            Criterion::Decreasing { values } => values.windows(2).all(|w| w[1] < w[0]),
            Criterion::Info => true,
        }
    }
}

/// One per-replication statistic, a row of `samples.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub rep: usize,
    pub seed: u64,
    pub stat: String,
    pub value: f64,
}

/// Empirical against theoretical CDF on the lambda grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfTable {
    pub name: String,
    /// `(lambda, empirical, theoretical)`.
    pub rows: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub experiment: String,
    pub model: String,
    pub dim: usize,
    pub seed: u64,
    pub replications: usize,
    pub mode: String,
    pub config: ExperimentConfig,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub passed: bool,
    #[serde(skip)]
    pub samples: Vec<SampleRow>,
    #[serde(skip)]
    pub cdf_tables: Vec<CdfTable>,
    #[serde(skip)]
    pub heatmaps: Vec<(usize, Lattice)>,
}

impl StatsReport {
    fn new(experiment: &str, config: &ExperimentConfig) -> Self {
        StatsReport {
            experiment: experiment.into(),
            model: config.model.clone(),
            dim: config.dim,
            seed: config.seed,
            replications: config.replications,
            mode: if config.self_test { "self-test" } else { "field" }.into(),
            config: config.clone(),
            checks: Vec::new(),
            notes: Vec::new(),
            passed: false,
            samples: Vec::new(),
            cdf_tables: Vec::new(),
            heatmaps: Vec::new(),
        }
    }

    fn finish(mut self) -> Self {
        self.passed = self.checks.iter().all(|c| c.passed);
        self
    }

    /// Re-derives every verdict from the recorded numbers.
    pub fn verify(&self) -> bool {
        self.checks.iter().all(|c| c.passed == c.evaluate()) && self.passed == self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Runs `f` on a pool capped by `NODAL_SHEET_THREADS` when it is set.
pub fn with_thread_cap<T: Send, F: FnOnce() -> T + Send>(f: F) -> T {
    let cap = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|n| *n > 0);
    match cap.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

enum Source {
    Plan(EmbeddingPlan),
    Fixed(FieldSample),
}

fn field_source(model: &CovarianceModel, grid: &GridSpec) -> Result<Source> {
    if model.deterministic_field().is_some() {
        Ok(Source::Fixed(sample_deterministic(model, grid)?))
    } else {
        Ok(Source::Plan(plan_embedding(model, grid)?))
    }
}

/// `f(rep, field)` for `n` replications; replications `2p` and `2p + 1`
/// share the complex draw seeded by `derive_seed(base, p)`.
fn replicate<T, F>(source: &Source, base: u64, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &FieldSample) -> Result<T> + Sync,
{
    let nested: Vec<Result<Vec<T>>> = (0..n.div_ceil(2))
        .into_par_iter()
        .map(|p| match source {
            Source::Plan(plan) => {
                let fields = sample_field_pair(plan, derive_seed(base, p as u64));
                fields
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| 2 * p + k < n)
                    .map(|(k, field)| f(2 * p + k, field))
                    .collect()
            }
            Source::Fixed(field) => (2 * p..(2 * p + 2).min(n)).map(|rep| f(rep, field)).collect(),
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for chunk in nested {
        out.extend(chunk?);
    }
    Ok(out)
}

struct Normalization {
    rho1: f64,
    gamma2: f64,
}

fn normalization(model: &CovarianceModel) -> Result<Normalization> {
    let g = kac_rice::gamma2(model)?;
    Ok(Normalization { rho1: g.rho1, gamma2: g.gamma2 })
}

fn label(t: &[f64]) -> String {
    let parts: Vec<String> = t.iter().map(|x| format!("{x}")).collect();
    format!("({})", parts.join(","))
}

fn lattice_index(t: f64, m: usize) -> Result<usize> {
    let x = t * m as f64;
    let k = x.round();
    if (x - k).abs() > 1e-9 * m as f64 {
        return Err(Error::OffLattice(t));
    }
    Ok(k as usize)
}

fn lattice_value(lattice: &Lattice, t: &[f64]) -> Result<f64> {
    let idx = t.iter().map(|&x| lattice_index(x, lattice.m)).collect::<Result<Vec<_>>>()?;
    Ok(lattice.at(&idx))
}

/// Cell increments of a lattice function (inclusion–exclusion per cell).
fn cell_increments(lattice: &Lattice) -> Vec<f64> {
    let m = lattice.m;
    match lattice.dim {
        1 => (0..m).map(|i| lattice.values[i + 1] - lattice.values[i]).collect(),
        _ => (0..m * m)
            .map(|k| {
                let (i, j) = (k / m, k % m);
                (lattice.at(&[i + 1, j + 1]) - lattice.at(&[i, j + 1])) - (lattice.at(&[i + 1, j]) - lattice.at(&[i, j]))
            })
            .collect(),
    }
}

/// Per-replication `xi_R` lattice and centered rescaled cell measures.
struct XiDraw {
    lattice: Lattice,
    cells: Vec<f64>,
}

fn xi_from_field(field: &FieldSample, m: usize, norm: &Normalization) -> Result<XiDraw> {
    let inc = nodal::nodal_cells(field, m)?;
    let xi = nodal::center_and_rescale(&inc, norm.rho1, norm.gamma2)?;
    Ok(XiDraw { lattice: xi.lattice, cells: xi.cells })
}

fn xi_from_sheet(n: usize, dim: usize, seed: u64) -> Result<XiDraw> {
    let sample = sheet::sample_sheet(n, dim, seed)?;
    let cells = cell_increments(&sample.lattice);
    Ok(XiDraw { lattice: sample.lattice, cells })
}

/// Finite-dimensional CLT: Gaussian marginals, sheet covariance and
/// variance of smooth pairings.
pub fn run_clt_experiment(config: &ExperimentConfig) -> Result<StatsReport> {
    config.validate()?;
    with_thread_cap(|| clt_inner(config))
}

fn clt_inner(config: &ExperimentConfig) -> Result<StatsReport> {
    let tol = config.tolerances;
    let mut report = StatsReport::new("clt", config);
    let ones = vec![1.0; config.dim];
    let mut total_gaps = Vec::new();
    let radii: Vec<Option<f64>> = if config.self_test { vec![None] } else { config.sorted_radii().into_iter().map(Some).collect() };
    let model = make_model(&config.model, config.dim)?;
    for (ir, side) in radii.iter().enumerate() {
        let tag = match side {
            Some(r) => format!("R={r}"),
            None => format!("sheet n={}", config.sheet_resolution),
        };
        let base = derive_seed(config.seed, ir as u64);
        let (m, norm) = match side {
            Some(r) => (config.partition_for(&config.grid(*r)?)?, Some(normalization(&model)?)),
            None => (config.sheet_resolution, None),
        };
        let phis: Vec<Vec<f64>> = config
            .test_functions
            .iter()
            .map(|phi| nodal::sample_at_cell_centres(config.dim, m, |t| phi.eval(t)))
            .collect();
        let stat = |rep: usize, seed: u64, draw: XiDraw| -> Result<(u64, Vec<f64>, Option<Lattice>)> {
            let mut v = Vec::new();
            for t in &config.points {
                v.push(lattice_value(&draw.lattice, t)?);
            }
            for (s, t) in &config.pairs {
                v.push(lattice_value(&draw.lattice, s)?);
                v.push(lattice_value(&draw.lattice, t)?);
            }
            v.push(lattice_value(&draw.lattice, &ones)?);
            for phi in &phis {
                v.push(nodal::compensated_sum(draw.cells.iter().zip(phi).map(|(c, p)| c * p)));
            }
            let keep = config.heatmaps.contains(&rep).then_some(draw.lattice);
            Ok((seed, v, keep))
        };
        let draws: Vec<(u64, Vec<f64>, Option<Lattice>)> = match (side, &norm) {
            (Some(r), Some(norm)) => {
                let source = field_source(&model, &config.grid(*r)?)?;
                replicate(&source, base, config.replications, |rep, field| {
                    stat(rep, field.seed, xi_from_field(field, m, norm)?)
                })?
            }
            _ => (0..config.replications)
                .into_par_iter()
                .map(|rep| {
                    let seed = derive_seed(base, rep as u64);
                    stat(rep, seed, xi_from_sheet(m, config.dim, seed)?)
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let column = |k: usize| -> Vec<f64> { draws.iter().map(|d| d.1[k]).collect() };
        let mut names = Vec::new();
        let mut k = 0;
        for t in &config.points {
            let values = column(k);
            let expected: f64 = t.iter().product();
            let name = format!("xi{} {tag}", label(t));
            let var = variance_estimate(&values);
            if expected == 0.0 {
                report.checks.push(
                    Check::new(format!("variance {name}"), var.value, var.se, 0.0, Criterion::Absolute { tol: 0.0 })
                        .from("empty box: xi vanishes on coordinate hyperplanes"),
                );
            } else {
                let sd = expected.sqrt();
                let ks = ks_statistic(&values, |x| normal_cdf(x / sd))?;
                report.checks.push(
                    Check::new(format!("normality {name}"), var.value, var.se, expected, Criterion::PValueAbove { alpha: tol.ks_alpha })
                        .with_test(ks.distance, Some(ks.p_value))
                        .from("Brownian sheet marginal N(0, prod t_j)"),
                );
            }
            names.push(name);
            k += 1;
        }
        for (s, t) in &config.pairs {
            let (x, y) = (column(k), column(k + 1));
            let expected: f64 = s.iter().zip(t).map(|(a, b)| a.min(*b)).product();
            let cov = covariance_estimate(&x, &y);
            report.checks.push(
                Check::new(
                    format!("covariance xi{} xi{} {tag}", label(s), label(t)),
                    cov.value,
                    cov.se,
                    expected,
                    Criterion::WithinSe { k: tol.covariance_se },
                )
                .from("Brownian sheet covariance prod min(s_j, t_j)"),
            );
            names.push(format!("xi{} {tag}", label(s)));
            names.push(format!("xi{} {tag}", label(t)));
            k += 2;
        }
        let total = column(k);
        let total_mean = mean_estimate(&total);
        let total_var = variance_estimate(&total);
        report.checks.push(
            Check::new(format!("mean xi(1) {tag}"), total_mean.value, total_mean.se, 0.0, Criterion::Info)
                .from("centering by rho1 Vol"),
        );
        report.checks.push(
            Check::new(format!("variance xi(1) {tag}"), total_var.value, total_var.se, 1.0, Criterion::Info)
                .from("Brownian sheet variance at (1, ..., 1)"),
        );
        total_gaps.push((total_var.value - 1.0).abs());
        names.push(format!("xi(1) {tag}"));
        k += 1;
        for phi in &config.test_functions {
            let values = column(k);
            let var = variance_estimate(&values);
            let expected = phi.squared_norm(config.dim);
            report.checks.push(
                Check::new(
                    format!("pairing variance {} {tag}", phi.name()),
                    var.value,
                    var.se,
                    expected,
                    Criterion::Relative { tol: tol.phi_variance_rel },
                )
                .from("limit variance ||phi||_2^2"),
            );
            names.push(format!("<nu,{}> {tag}", phi.name()));
            k += 1;
        }
        let first: Vec<usize> = (0..names.len()).filter(|&i| !names[..i].contains(&names[i])).collect();
        for (rep, (seed, values, keep)) in draws.into_iter().enumerate() {
            for &i in &first {
                report.samples.push(SampleRow { rep, seed, stat: names[i].clone(), value: values[i] });
            }
            if let Some(lattice) = keep {
                report.heatmaps.push((rep, lattice));
            }
        }
    }
    if total_gaps.len() >= 2 {
        let last = *total_gaps.last().expect("nonempty");
        report.checks.push(
            Check::new("variance gap decreasing in R", last, 0.0, 0.0, Criterion::Decreasing { values: total_gaps })
                .from("|Var xi_R(1) - 1| across increasing R"),
        );
    }
    report.notes.push(
        "Finite-R tolerances are engineering choices: the limit theorems carry no convergence rate.".into(),
    );
    Ok(report.finish())
}

/// Suprema of `xi_R` over Yeh curves against `H(a, b, lambda)`.
pub fn run_sup_experiment(config: &ExperimentConfig) -> Result<StatsReport> {
    config.validate()?;
    if config.dim != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: config.dim });
    }
    with_thread_cap(|| sup_inner(config))
}

fn sup_inner(config: &ExperimentConfig) -> Result<StatsReport> {
    let tol = config.tolerances;
    let mut report = StatsReport::new("sup", config);
    let curves = config
        .curves
        .iter()
        .map(|&(a, b)| CurveSpec::new(a, b))
        .collect::<Result<Vec<_>>>()?;
    let curve_name = |c: &CurveSpec| format!("L({},{})", c.a, c.b);
    let mut runs: Vec<(String, Vec<(u64, Vec<f64>)>)> = Vec::new();
    if config.self_test {
        for (ci, curve) in curves.iter().enumerate() {
            let sampler = CurveSupSampler::new(curve, config.curve_points)?;
            let base = derive_seed(config.seed, 1000 + ci as u64);
            let sups = sampler.sample_many(config.replications, base);
            let rows = sups
                .into_iter()
                .enumerate()
                .map(|(rep, s)| (derive_seed(base, rep as u64), vec![s]))
                .collect::<Vec<_>>();
            // One column per run; regroup below.
            runs.push((format!("sheet {}", curve_name(curve)), rows));
        }
    } else {
        let model = make_model(&config.model, config.dim)?;
        let norm = normalization(&model)?;
        for (ir, side) in config.sorted_radii().into_iter().enumerate() {
            let grid = config.grid(side)?;
            let m = config.partition_for(&grid)?;
            let source = field_source(&model, &grid)?;
            let base = derive_seed(config.seed, ir as u64);
            let rows = replicate(&source, base, config.replications, |_, field| {
                let draw = xi_from_field(field, m, &norm)?;
                let sups = curves
                    .iter()
                    .map(|c| sheet::sup_on_curve(&draw.lattice, c, 0))
                    .collect::<Result<Vec<_>>>()?;
                Ok((field.seed, sups))
            })?;
            runs.push((format!("R={side}"), rows));
        }
    }
    for (run_name, rows) in &runs {
        let curve_list: Vec<&CurveSpec> = if config.self_test {
            let idx = runs.iter().position(|(n, _)| n == run_name).expect("present");
            vec![&curves[idx]]
        } else {
            curves.iter().collect()
        };
        for (ci, curve) in curve_list.iter().enumerate() {
            let values: Vec<f64> = rows.iter().map(|r| r.1[ci]).collect();
            let name = if config.self_test { run_name.clone() } else { format!("{} {run_name}", curve_name(curve)) };
            let (a, b) = (curve.a, curve.b);
            let cdf = |x: f64| if x <= 0.0 { 0.0 } else { yeh_h(a, b, x).unwrap_or(f64::NAN) };
            let ks = ks_statistic(&values, cdf)?;
            let bound = if config.self_test { tol.self_test_sup_distance } else { tol.sup_distance };
            let n = values.len() as f64;
            report.checks.push(
                Check::new(format!("sup-distance {name}"), ks.distance, 0.5 / n.sqrt(), 0.0, Criterion::StatisticAtMost { bound })
                    .with_test(ks.distance, Some(ks.p_value))
                    .from("Yeh closed form H(a, b, lambda)"),
            );
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let at_zero = stats::ecdf(&sorted, 0.0);
            report.checks.push(
                Check::new(format!("ecdf(0) {name}"), at_zero, (at_zero * (1.0 - at_zero) / n).sqrt(), 0.0, Criterion::Info)
                    .from("H(a, b, 0) = 0"),
            );
            let table = config
                .lambda_grid
                .iter()
                .map(|&l| Ok((l, stats::ecdf(&sorted, l), yeh_h(a, b, l)?)))
                .collect::<Result<Vec<_>>>()?;
            report.cdf_tables.push(CdfTable { name: name.clone(), rows: table });
            if matches!((a, b), (CurveParam::Infinite, CurveParam::Infinite)) {
                let gap = (yeh_h(a, b, 1.0)? - boundary_sup_cdf(1.0)).abs();
                report.checks.push(
                    Check::new(format!("corollary form {name}"), gap, 0.0, 0.0, Criterion::Absolute { tol: 1e-12 })
                        .from("1 - 3 Phi(-lambda) + exp(4 lambda^2) Phi(-3 lambda)"),
                );
            }
            for (rep, (seed, v)) in rows.iter().enumerate() {
                report.samples.push(SampleRow { rep, seed: *seed, stat: format!("sup {name}"), value: v[ci] });
            }
        }
    }
    Ok(report.finish())
}

/// Adjacent pair `A | B` with `A` at the origin, split along `axis`;
/// `sizes` are the side lengths of `A u B` in cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PairShape {
    sizes: [usize; 2],
    axis: usize,
}

fn pair_family(dim: usize, m: usize, levels: usize) -> Result<Vec<PairShape>> {
    if m % (1 << (levels + 1)) != 0 {
        return Err(Error::Misaligned { m: 1 << (levels + 1), cells: m });
    }
    let mut out = Vec::new();
    let side = |i: usize| m >> i;
    if dim == 1 {
        for i in 0..=levels {
            out.push(PairShape { sizes: [side(i), 1], axis: 0 });
        }
    } else {
        for i in 0..=levels + 1 {
            for j in 0..=levels + 1 {
                for axis in 0..2 {
                    let split = if axis == 0 { i } else { j };
                    if split <= levels {
                        out.push(PairShape { sizes: [side(i), side(j)], axis });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Averages over tiles of `(|a|^{3/2} |b|^{3/2}, |ab|, (ab)^2)`.
fn pair_moments(prefix: &[f64], dim: usize, m: usize, shape: PairShape) -> [f64; 3] {
    let s = m + 1;
    let sum = |lo: [usize; 2], hi: [usize; 2]| -> f64 {
        if dim == 1 {
            prefix[hi[0]] - prefix[lo[0]]
        } else {
            (prefix[hi[0] * s + hi[1]] - prefix[lo[0] * s + hi[1]]) - (prefix[hi[0] * s + lo[1]] - prefix[lo[0] * s + lo[1]])
        }
    };
    let [sx, sy] = shape.sizes;
    let tiles_y = if dim == 1 { 1 } else { m / sy };
    let mut acc = [0.0; 3];
    let mut count = 0usize;
    for tx in 0..m / sx {
        for ty in 0..tiles_y {
            let lo = [tx * sx, ty * sy];
            let hi = [lo[0] + sx, lo[1] + sy];
            let mut mid = hi;
            mid[shape.axis] = lo[shape.axis] + shape.sizes[shape.axis] / 2;
            let mut lo_b = lo;
            lo_b[shape.axis] = mid[shape.axis];
            let a = sum(lo, mid);
            let b = sum(lo_b, hi);
            let ab = (a * b).abs();
            acc[0] += ab.powf(1.5);
            acc[1] += ab;
            acc[2] += ab * ab;
            count += 1;
        }
    }
    acc.map(|v| v / count as f64)
}

fn prefix_sums(dim: usize, m: usize, cells: &[f64]) -> Vec<f64> {
    let lattice = nodal::cumulative(&nodal::IncrementGrid {
        dim,
        m,
        cells: cells.to_vec(),
        side: 1.0,
        model: String::new(),
        seed: 0,
        degenerate_nodes: 0,
    });
    lattice.values
}

/// Mixed `3/2` moments of increments over adjacent rectangles against their
/// union volume.
pub fn run_moment_scan(config: &ExperimentConfig) -> Result<StatsReport> {
    config.validate()?;
    with_thread_cap(|| moment_inner(config))
}

fn moment_inner(config: &ExperimentConfig) -> Result<StatsReport> {
    let tol = config.tolerances;
    let mut report = StatsReport::new("moment-scan", config);
    let model = make_model(&config.model, config.dim)?;
    let side = *config.sorted_radii().last().expect("validated");
    if config.radii.len() > 1 {
        report.notes.push(format!("moment scan uses the largest radius R = {side}"));
    }
    let (m, base) = if config.self_test {
        (config.sheet_resolution, derive_seed(config.seed, 2000))
    } else {
        (config.partition_for(&config.grid(side)?)?, derive_seed(config.seed, 0))
    };
    let shapes = pair_family(config.dim, m, config.moment_levels)?;
    let volume = |s: &PairShape| {
        let cells = if config.dim == 1 { s.sizes[0] } else { s.sizes[0] * s.sizes[1] };
        cells as f64 / (m as f64).powi(config.dim as i32)
    };
    let shapes: Vec<PairShape> = shapes
        .into_iter()
        .filter(|s| {
            let keep = volume(s) > 0.0;
            if !keep {
                report.notes.push(format!("pair {s:?} has zero volume and is excluded"));
            }
            keep
        })
        .collect();
    let volumes: Vec<f64> = shapes.iter().map(volume).collect();
    let (vmin, vmax) = volumes.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    if !(vmax / vmin >= 100.0) {
        return Err(Error::InsufficientRange(format!("union volumes span {vmin:e}..{vmax:e}, need two decades")));
    }
    let per_rep = |cells: &[f64]| -> Vec<[f64; 3]> {
        let prefix = prefix_sums(config.dim, m, cells);
        shapes.iter().map(|s| pair_moments(&prefix, config.dim, m, *s)).collect()
    };
    let rows: Vec<(u64, Vec<[f64; 3]>)> = if config.self_test {
        (0..config.replications)
            .into_par_iter()
            .map(|rep| {
                let seed = derive_seed(base, rep as u64);
                let draw = xi_from_sheet(m, config.dim, seed)?;
                Ok((seed, per_rep(&draw.cells)))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        let norm = normalization(&model)?;
        let source = field_source(&model, &config.grid(side)?)?;
        replicate(&source, base, config.replications, |_, field| {
            let draw = xi_from_field(field, m, &norm)?;
            Ok((field.seed, per_rep(&draw.cells)))
        })?
    };
    let n = rows.len();
    let column = |p: usize, k: usize| -> Vec<f64> { rows.iter().map(|r| r.1[p][k]).collect() };
    let mut log_v = Vec::new();
    let mut log_e = Vec::new();
    let mut weights = Vec::new();
    let mut kept = Vec::new();
    let mut worst_cs = f64::NEG_INFINITY;
    for (p, shape) in shapes.iter().enumerate() {
        let mixed = mean_estimate(&column(p, 0));
        let first = mean_estimate(&column(p, 1));
        let fourth = mean_estimate(&column(p, 2));
        let rhs = first.value.sqrt() * fourth.value.sqrt();
        let rel = |e: &stats::Estimate| if e.value > 0.0 { e.se / e.value } else { 0.0 };
        let rhs_se = 0.5 * rhs * rel(&first).hypot(rel(&fourth));
        let combined = mixed.se.hypot(rhs_se);
        let margin = if combined > 0.0 { (mixed.value - rhs) / combined } else if mixed.value <= rhs { 0.0 } else { f64::MAX };
        worst_cs = worst_cs.max(margin);
        report.checks.push(
            Check::new(
                format!("moment {}x{} split {} vol={:e}", shape.sizes[0], shape.sizes[1], shape.axis, volumes[p]),
                mixed.value,
                mixed.se,
                rhs,
                Criterion::Info,
            )
            .from("empirical E|a|^{3/2}|b|^{3/2}; reference sqrt(E|ab|) sqrt(E(ab)^2)"),
        );
        if mixed.value > 0.0 && mixed.se > 0.0 {
            log_v.push(volumes[p].ln());
            log_e.push(mixed.value.ln());
            weights.push((mixed.value / mixed.se).powi(2));
            kept.push(p);
        } else {
            report.notes.push(format!("pair {}x{} split {} has a zero moment estimate and is excluded", shape.sizes[0], shape.sizes[1], shape.axis));
        }
    }
    let fit = weighted_regression(&log_v, &log_e, &weights)?;
    let slopes = stats::bootstrap(n, config.bootstrap, derive_seed(config.seed, 3000), |idx| {
        let y: Vec<f64> = kept
            .iter()
            .map(|&p| (idx.iter().map(|&i| rows[i].1[p][0]).sum::<f64>() / n as f64).max(f64::MIN_POSITIVE).ln())
            .collect();
        weighted_regression(&log_v, &y, &weights).map(|f| f.slope).unwrap_or(f64::NAN)
    });
    let finite: Vec<f64> = slopes.into_iter().filter(|s| s.is_finite()).collect();
    let boot_se = if finite.len() >= 2 { stats::variance(&finite).sqrt() } else { fit.slope_se };
    report.checks.push(
        Check::new("regression slope", fit.slope, boot_se, 1.0 + alpha_bound(config.dim), Criterion::AtLeast { bound: tol.moment_slope_min })
            .with_test(fit.slope_se, None)
            .from("moment bound C Vol(A u B)^{1 + alpha}; reference 1 + sup alpha"),
    );
    report.checks.push(
        Check::new("cauchy-schwarz worst margin", worst_cs, 1.0, 0.0, Criterion::StatisticAtMost { bound: tol.cauchy_schwarz_se })
            .with_test(worst_cs, None)
            .from("(E|a|^{3/2}|b|^{3/2})^2 <= E|ab| E(ab)^2, in combined standard errors"),
    );
    report.notes.push(format!(
        "{} adjacent pairs on an m = {m} lattice, union volumes {vmin:e} to {vmax:e}; statistic of the slope check is its model-based standard error",
        kept.len()
    ));
    for (rep, (seed, moments)) in rows.iter().enumerate() {
        for (p, shape) in shapes.iter().enumerate() {
            report.samples.push(SampleRow {
                rep,
                seed: *seed,
                stat: format!("mixed {}x{}/{}", shape.sizes[0], shape.sizes[1], shape.axis),
                value: moments[p][0],
            });
        }
    }
    Ok(report.finish())
}

/// Empirical `Var(nu([0, R]^d)) / R^d` against the Kac–Rice `gamma2`.
pub fn run_gamma2_crosscheck(config: &ExperimentConfig) -> Result<StatsReport> {
    config.validate()?;
    let model = make_model(&config.model, config.dim)?;
    with_thread_cap(|| gamma2_inner(config, &model))
}

/// As [`run_gamma2_crosscheck`] with an explicit model, e.g. a synthetic one.
pub fn run_gamma2_crosscheck_with(config: &ExperimentConfig, model: &CovarianceModel) -> Result<StatsReport> {
    config.validate()?;
    with_thread_cap(|| gamma2_inner(config, model))
}

fn gamma2_inner(config: &ExperimentConfig, model: &CovarianceModel) -> Result<StatsReport> {
    let tol = config.tolerances;
    let mut report = StatsReport::new("gamma2-crosscheck", config);
    report.model = model.name().to_string();
    let degenerate = model.deterministic_field().is_some();
    let reference = if degenerate { None } else { Some(kac_rice::gamma2(model)?) };
    let radii = config.sorted_radii();
    for (ir, side) in radii.iter().enumerate() {
        let grid = config.grid(*side)?;
        let source = field_source(model, &grid)?;
        let base = derive_seed(config.seed, ir as u64);
        let totals = replicate(&source, base, config.replications, |_, field| {
            Ok((field.seed, nodal::nodal_cells(field, 1)?.total()))
        })?;
        let values: Vec<f64> = totals.iter().map(|t| t.1).collect();
        let vol = side.powi(config.dim as i32);
        let var = variance_estimate(&values);
        let (est, se) = (var.value / vol, var.se / vol);
        let tag = format!("R={side}");
        match &reference {
            None => {
                report.checks.push(
                    Check::new(format!("Var(nu)/Vol {tag}"), est, se, 0.0, Criterion::Info)
                        .from("deterministic field: degenerate"),
                );
                report.notes.push(format!("{tag}: deterministic field, variance {est:e}; reported as degenerate"));
            }
            Some(g) => {
                let last = ir + 1 == radii.len();
                let criterion = if last { Criterion::Relative { tol: tol.gamma2_rel } } else { Criterion::Info };
                report.checks.push(
                    Check::new(format!("Var(nu)/Vol {tag}"), est, se, g.gamma2, criterion)
                        .from("Kac-Rice gamma2 = int F2 (+ rho1 when d = k)"),
                );
                report.notes.push(format!("{tag}: relative gap {:+.4}", est / g.gamma2 - 1.0));
            }
        }
        for (rep, (seed, v)) in totals.iter().enumerate() {
            report.samples.push(SampleRow { rep, seed: *seed, stat: format!("nu total {tag}"), value: *v });
        }
    }
    if let Some(g) = &reference {
        report.notes.push(format!(
            "gamma2 = {:.8} (integral of F2 {:.8}, rho1 term {:?}, r_max {})",
            g.gamma2, g.integral_f2, g.rho1_term, g.r_max
        ));
    }
    Ok(report.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checks_are_pure_functions_of_numbers() {
        let c = Check::new("x", 1.1, 0.05, 1.0, Criterion::WithinSe { k: 3.0 });
        assert!(c.passed);
        let c = Check::new("x", 1.2, 0.05, 1.0, Criterion::WithinSe { k: 3.0 });
        assert!(!c.passed);
        let c = Check::new("x", 0.0, 0.0, 0.0, Criterion::PValueAbove { alpha: 0.01 }).with_test(0.02, Some(0.3));
        assert!(c.passed);
        let c = Check::new("x", 0.0, 0.0, 0.0, Criterion::Decreasing { values: vec![0.3, 0.2, 0.25] });
        assert!(!c.passed);
        let c = Check::new("x", 0.0, 0.0, 0.0, Criterion::Decreasing { values: vec![0.3, 0.2, 0.1] });
        assert!(c.passed);
    }

    #[test]
    fn dyadic_family_spans_decades() {
        let family = pair_family(2, 128, 6).unwrap();
        assert!(family.iter().any(|s| s.sizes == [128, 1]));
        assert!(family.iter().all(|s| s.sizes[s.axis] >= 2));
        assert!(pair_family(2, 96, 6).is_err());
        assert_eq!(pair_family(1, 64, 5).unwrap().len(), 6);
    }

    #[test]
    fn tile_moments_of_constant_cells() {
        let m = 8;
        let cells = vec![0.5; m * m];
        let prefix = prefix_sums(2, m, &cells);
        let mo = pair_moments(&prefix, 2, m, PairShape { sizes: [4, 2], axis: 0 });
        // A and B each hold 4 cells: a = b = 2.
        assert!((mo[0] - 8.0).abs() < 1e-12 && (mo[1] - 4.0).abs() < 1e-12 && (mo[2] - 16.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::defaults(2);
        assert!(c.validate().is_ok());
        c.replications = 50;
        assert!(matches!(c.validate(), Err(Error::TooFewSamples { .. })));
        let mut c = ExperimentConfig::defaults(2);
        c.radii = vec![0.5];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::defaults(1);
        c.points = vec![vec![0.5, 0.5]];
        assert!(c.validate().is_err());
    }

    #[test]
    fn increments_invert_cumulation() {
        let sheet = sheet::sample_sheet(6, 2, 4).unwrap();
        let cells = cell_increments(&sheet.lattice);
        let back = prefix_sums(2, 6, &cells);
        for (a, b) in back.iter().zip(&sheet.lattice.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
