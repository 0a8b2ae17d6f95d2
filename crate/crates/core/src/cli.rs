//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{self, ConfigMap, RunManifest};
use crate::covariance::make_model;
use crate::error::{Error, Result};
use crate::experiments::{self, ExperimentConfig, StatsReport};
use crate::io;
use crate::kac_rice::{self, KacEngine, KacOptions, Method};
use crate::nodal;
use crate::rng;
use crate::sampler::{self, FieldSample, GridSpec};
use crate::sheet::{self, yeh_h, CurveParam, CurveSpec, CurveSupSampler};
use crate::stats;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_ACCEPTANCE: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "nodal-sheet", version, about = "Nodal measures of stationary Gaussian fields and their Brownian sheet limit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a field on [0, R]^d and dump it in binary form.
    SimulateField(SimulateArgs),
    /// Nodal measure increments and the rescaled field xi_R of one sample.
    NodalField(NodalArgs),
    /// Kac-Rice radial profile and gamma2.
    Gamma2(Gamma2Args),
    /// Finite-dimensional CLT experiment.
    CltTest(ExperimentArgs),
    /// Sup law over Yeh curves.
    SupTest(ExperimentArgs),
    /// Mixed-moment scaling over adjacent rectangles.
    MomentScan(ExperimentArgs),
    /// Empirical Var(nu)/Vol against gamma2.
    Gamma2Test(ExperimentArgs),
    /// Brownian sheet on a lattice.
    SheetSample(SheetArgs),
    /// Empirical CDF of the sheet supremum over a Yeh curve.
    SheetSup(SheetSupArgs),
    /// Yeh's H(a, b, lambda).
    Yeh(YehArgs),
    /// Heatmaps and surface data in the layout of the published figures.
    ReproFigures(ReproArgs),
}

#[derive(Args, Debug, Clone)]
struct FieldArgs {
    #[arg(long, default_value = crate::covariance::BARGMANN_FOCK)]
    model: String,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long = "R", default_value_t = 20.0)]
    radius: f64,
    #[arg(long, default_value_t = 0.05)]
    h: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    field: FieldArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also render the field (d = 2).
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct NodalArgs {
    #[command(flatten)]
    field: FieldArgs,
    /// Partition resolution; defaults to every fine cell.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value = "nodal-field")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Projection,
    MonteCarlo,
    GaussHermite,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Projection => Method::Projection,
            MethodArg::MonteCarlo => Method::MonteCarlo,
            MethodArg::GaussHermite => Method::GaussHermite,
        }
    }
}

#[derive(Args, Debug)]
struct Gamma2Args {
    #[arg(long, default_value = crate::covariance::BARGMANN_FOCK)]
    model: String,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Integration cutoff; searched when absent.
    #[arg(long)]
    r_max: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    r_min: f64,
    #[arg(long, default_value_t = 60)]
    points: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Projection)]
    method: MethodArg,
    #[arg(long, default_value = "gamma2")]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Default)]
struct ExperimentArgs {
    /// key=value file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    /// Comma-separated side lengths.
    #[arg(long = "R")]
    radii: Option<String>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long = "N")]
    replications: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda_grid: Option<String>,
    /// Yeh curves as `a:b` pairs, e.g. `inf:inf,2:3`.
    #[arg(long)]
    curves: Option<String>,
    /// Use Brownian sheet samples in place of xi_R.
    #[arg(long)]
    self_test: bool,
    /// Any config key, e.g. `--set tolerance.ks_alpha=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SheetArgs {
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "sheet-sample")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct SheetSupArgs {
    /// Points per curve segment.
    #[arg(long, default_value_t = 1024)]
    n: usize,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value = "inf")]
    a: CurveParam,
    #[arg(long, default_value = "inf")]
    b: CurveParam,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "0:3:0.05")]
    lambda_grid: String,
    #[arg(long, default_value = "sheet_sup.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct YehArgs {
    #[arg(long, default_value = "inf")]
    a: CurveParam,
    #[arg(long, default_value = "inf")]
    b: CurveParam,
    #[arg(long, conflicts_with = "lambda_grid")]
    lambda: Option<f64>,
    #[arg(long)]
    lambda_grid: Option<String>,
    /// CSV destination for a grid; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Figure {
    Fig1,
    Fig2,
    Fig3,
}

#[derive(Args, Debug)]
struct ReproArgs {
    #[arg(long, value_enum)]
    which: Figure,
    #[arg(long = "R", default_value_t = 20.0)]
    radius: f64,
    #[arg(long, default_value_t = 0.05)]
    h: f64,
    /// Sheet resolution for fig1.
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "figures")]
    out_dir: PathBuf,
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    dispatch(cli.command)
}

fn dispatch(command: Command) -> i32 {
    match command {
        Command::SimulateField(a) => {
            let dir = parent_dir(&a.out);
            managed("simulate-field", Some(dir), |m| simulate_field(a, m))
        }
        Command::NodalField(a) => {
            let dir = a.out_dir.clone();
            managed("nodal-field", Some(dir), |m| nodal_field(a, m))
        }
        Command::Gamma2(a) => {
            let dir = a.out_dir.clone();
            managed("gamma2", Some(dir), |m| gamma2(a, m))
        }
        Command::CltTest(a) => experiment("clt-test", a, experiments::run_clt_experiment),
        Command::SupTest(a) => experiment("sup-test", a, experiments::run_sup_experiment),
        Command::MomentScan(a) => experiment("moment-scan", a, experiments::run_moment_scan),
        Command::Gamma2Test(a) => experiment("gamma2-test", a, experiments::run_gamma2_crosscheck),
        Command::SheetSample(a) => {
            let dir = a.out_dir.clone();
            managed("sheet-sample", Some(dir), |m| sheet_sample(a, m))
        }
        Command::SheetSup(a) => {
            let dir = parent_dir(&a.out);
            managed("sheet-sup", Some(dir), |m| sheet_sup(a, m))
        }
        Command::Yeh(a) => {
            let dir = a.out.as_deref().map(parent_dir);
            managed("yeh", dir, |m| yeh(a, m))
        }
        Command::ReproFigures(a) => {
            let dir = a.out_dir.clone();
            managed("repro-figures", Some(dir), |m| repro(a, m))
        }
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Runs `body`, then writes the manifest (also on failure) into `dir`.
fn managed<F>(command: &str, dir: Option<PathBuf>, body: F) -> i32
where
    F: FnOnce(&mut RunManifest) -> Result<i32>,
{
    let mut manifest = RunManifest::start(command);
    let (code, error) = match body(&mut manifest) {
        Ok(code) => (code, None),
        Err(e) => {
            eprintln!("error: {e}");
            (e.exit_code(), Some(e.to_string()))
        }
    };
    manifest.finish(code, error);
    if let Some(dir) = dir {
        manifest.artifacts.push(dir.join("manifest.json"));
        if let Err(e) = manifest.write(&dir) {
            eprintln!("error: cannot write manifest: {e}");
            return if code == EXIT_OK { EXIT_NUMERICAL } else { code };
        }
    }
    code
}

fn seed_for(requested: Option<u64>, manifest: &mut RunManifest) -> u64 {
    let seed = requested.unwrap_or_else(|| {
        manifest.seed_from_entropy = true;
        rng::entropy_seed()
    });
    manifest.seed = Some(seed);
    seed
}

fn record<T: Serialize>(manifest: &mut RunManifest, config: &T) -> Result<()> {
    manifest.config = serde_json::to_value(config)?;
    Ok(())
}

fn simulate(field: &FieldArgs, seed: u64) -> Result<FieldSample> {
    let model = make_model(&field.model, field.dim)?;
    let grid = GridSpec::new(field.dim, field.radius, field.h)?;
    if model.deterministic_field().is_some() {
        let mut sample = sampler::sample_deterministic(&model, &grid)?;
        sample.seed = seed;
        return Ok(sample);
    }
    let plan = sampler::plan_embedding(&model, &grid)?;
    Ok(sampler::sample_field(&plan, seed))
}

fn field_heatmap(sample: &FieldSample, path: &Path, manifest: &mut RunManifest) -> Result<()> {
    let n = sample.grid.points;
    let files = io::render_heatmap(&io::image_rows(&sample.values, n), n, n, path)?;
    manifest.artifacts.extend(files);
    Ok(())
}

fn simulate_field(a: SimulateArgs, manifest: &mut RunManifest) -> Result<i32> {
    let seed = seed_for(a.field.seed, manifest);
    record(manifest, &serde_json::json!({
        "model": a.field.model, "dim": a.field.dim, "R": a.field.radius, "h": a.field.h, "seed": seed,
    }))?;
    let sample = simulate(&a.field, seed)?;
    std::fs::create_dir_all(parent_dir(&a.out))?;
    sampler::write_field_file(&sample, &a.out)?;
    manifest.artifacts.push(a.out.clone());
    if let Some(path) = &a.heatmap {
        if a.field.dim != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: a.field.dim });
        }
        field_heatmap(&sample, path, manifest)?;
    }
    Ok(EXIT_OK)
}

fn xi_of(sample: &FieldSample, m: Option<usize>) -> Result<nodal::XiField> {
    let model = make_model(&sample.model, sample.grid.dim)?;
    let m = m.unwrap_or(sample.grid.cells());
    let inc = nodal::nodal_cells(sample, m)?;
    let g = kac_rice::gamma2(&model)?;
    nodal::center_and_rescale(&inc, g.rho1, g.gamma2)
}

fn nodal_field(a: NodalArgs, manifest: &mut RunManifest) -> Result<i32> {
    let seed = seed_for(a.field.seed, manifest);
    record(manifest, &serde_json::json!({
        "model": a.field.model, "dim": a.field.dim, "R": a.field.radius, "h": a.field.h, "m": a.m, "seed": seed,
    }))?;
    let sample = simulate(&a.field, seed)?;
    let xi = xi_of(&sample, a.m)?;
    let csv = a.out_dir.join("xi.csv");
    io::write_lattice_csv(&xi.lattice, "xi", &csv)?;
    manifest.artifacts.push(csv);
    if a.field.dim == 2 {
        manifest.artifacts.extend(io::render_lattice(&xi.lattice, &a.out_dir.join("xi_heatmap.png"))?);
        field_heatmap(&sample, &a.out_dir.join("field_heatmap.png"), manifest)?;
    }
    println!("xi(1) = {}", xi.lattice.values.last().copied().unwrap_or(0.0));
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct Gamma2Summary {
    model: String,
    dim: usize,
    rho1: f64,
    gamma2: f64,
    #[serde(rename = "integral_F2")]
    integral_f2: f64,
    rho1_term: Option<f64>,
    r_max: f64,
    quadrature_error: f64,
}

fn gamma2(a: Gamma2Args, manifest: &mut RunManifest) -> Result<i32> {
    record(manifest, &serde_json::json!({
        "model": a.model, "dim": a.dim, "r_max": a.r_max, "r_min": a.r_min, "points": a.points, "method": Method::from(a.method),
    }))?;
    let model = make_model(&a.model, a.dim)?;
    let result = kac_rice::gamma2_with(&model, KacOptions::default(), a.r_max)?;
    let engine = KacEngine::new(&model, KacOptions::default())?;
    let profile = engine.profile(a.r_min, result.r_max, a.points, a.method.into())?;
    let csv = a.out_dir.join("profile.csv");
    io::write_profile_csv(&profile, &csv)?;
    manifest.artifacts.push(csv);
    let summary = Gamma2Summary {
        model: result.model.clone(),
        dim: result.dim,
        rho1: result.rho1,
        gamma2: result.gamma2,
        integral_f2: result.integral_f2,
        rho1_term: result.rho1_term,
        r_max: result.r_max,
        quadrature_error: result.quadrature_error,
    };
    let json = a.out_dir.join("gamma2.json");
    let text = serde_json::to_string_pretty(&summary)?;
    std::fs::write(&json, format!("{text}\n"))?;
    manifest.artifacts.push(json);
    println!("{text}");
    Ok(EXIT_OK)
}

/// Layers defaults, the config file and flags.
fn experiment_map(a: &ExperimentArgs) -> Result<ConfigMap> {
    let file = match &a.config {
        Some(path) => ConfigMap::load(path)?,
        None => ConfigMap::new(),
    };
    let mut flags = ConfigMap::new();
    let mut put = |k: &str, v: Option<String>| v.map_or(Ok(()), |v| flags.set(k, &v));
    put("experiment.model", a.model.clone())?;
    put("experiment.dim", a.dim.map(|v| v.to_string()))?;
    put("experiment.R", a.radii.clone())?;
    put("experiment.h", a.h.map(|v| v.to_string()))?;
    put("experiment.m", a.m.map(|v| v.to_string()))?;
    put("experiment.N", a.replications.map(|v| v.to_string()))?;
    put("experiment.seed", a.seed.map(|v| v.to_string()))?;
    put("experiment.lambda_grid", a.lambda_grid.clone())?;
    put("experiment.curves", a.curves.clone())?;
    put("experiment.self_test", a.self_test.then(|| "true".to_string()))?;
    for kv in &a.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        flags.set(k.trim(), v.trim())?;
    }
    Ok(file.merged(&flags))
}

fn experiment(command: &str, a: ExperimentArgs, run: fn(&ExperimentConfig) -> Result<StatsReport>) -> i32 {
    let map = experiment_map(&a);
    let dir = a
        .out_dir
        .clone()
        .or_else(|| map.as_ref().ok().and_then(|m| m.get("output.dir").map(PathBuf::from)))
        .unwrap_or_else(|| PathBuf::from(command));
    managed(command, Some(dir.clone()), |manifest| {
        let mut map = map?;
        if map.get("experiment.seed").is_none() {
            let seed = seed_for(None, manifest);
            map.set("experiment.seed", &seed.to_string())?;
        }
        let config = config::resolve(&map)?;
        manifest.seed = Some(config.seed);
        record(manifest, &config)?;
        let report = run(&config)?;
        manifest.artifacts.extend(io::write_report(&report, &dir)?);
        for c in &report.checks {
            println!("{} {} estimate={} se={} reference={}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.estimate, c.std_error, c.reference);
        }
        Ok(if report.passed { EXIT_OK } else { EXIT_ACCEPTANCE })
    })
}

fn sheet_sample(a: SheetArgs, manifest: &mut RunManifest) -> Result<i32> {
    let seed = seed_for(a.seed, manifest);
    record(manifest, &serde_json::json!({ "n": a.n, "dim": a.dim, "seed": seed }))?;
    let s = sheet::sample_sheet(a.n, a.dim, seed)?;
    let csv = a.out_dir.join("sheet.csv");
    io::write_lattice_csv(&s.lattice, "W", &csv)?;
    manifest.artifacts.push(csv);
    if a.dim == 2 {
        manifest.artifacts.extend(io::render_lattice(&s.lattice, &a.out_dir.join("sheet_heatmap.png"))?);
    }
    Ok(EXIT_OK)
}

fn sheet_sup(a: SheetSupArgs, manifest: &mut RunManifest) -> Result<i32> {
    let seed = seed_for(a.seed, manifest);
    record(manifest, &serde_json::json!({
        "n": a.n, "samples": a.samples, "a": a.a, "b": a.b, "seed": seed, "lambda_grid": a.lambda_grid,
    }))?;
    let grid = config::parse_grid(&a.lambda_grid)?;
    let curve = CurveSpec::new(a.a, a.b)?;
    let sampler = CurveSupSampler::new(&curve, a.n)?;
    let mut sups = experiments::with_thread_cap(|| sampler.sample_many(a.samples, seed));
    let ks = stats::ks_statistic(&sups, |x| if x <= 0.0 { 0.0 } else { yeh_h(a.a, a.b, x).unwrap_or(f64::NAN) })?;
    sups.sort_by(f64::total_cmp);
    let rows = grid
        .iter()
        .map(|&l| Ok((l, stats::ecdf(&sups, l), yeh_h(a.a, a.b, l)?)))
        .collect::<Result<Vec<_>>>()?;
    io::write_cdf_csv(&rows, &a.out)?;
    manifest.artifacts.push(a.out.clone());
    println!("sup-distance {} p-value {}", ks.distance, ks.p_value);
    Ok(EXIT_OK)
}

fn yeh(a: YehArgs, manifest: &mut RunManifest) -> Result<i32> {
    record(manifest, &serde_json::json!({ "a": a.a, "b": a.b, "lambda": a.lambda, "lambda_grid": a.lambda_grid }))?;
    match (a.lambda, &a.lambda_grid) {
        (Some(l), _) => {
            println!("{}", yeh_h(a.a, a.b, l)?);
        }
        (None, Some(g)) => {
            let rows = config::parse_grid(g)?
                .into_iter()
                .map(|l| Ok((l, yeh_h(a.a, a.b, l)?)))
                .collect::<Result<Vec<_>>>()?;
            match &a.out {
                Some(path) => {
                    io::write_h_csv(&rows, path)?;
                    manifest.artifacts.push(path.clone());
                }
                None => {
                    println!("{}", io::H_HEADER);
                    for (l, h) in rows {
                        println!("{l},{h}");
                    }
                }
            }
        }
        (None, None) => return Err(Error::Config("yeh needs --lambda or --lambda-grid".into())),
    }
    Ok(EXIT_OK)
}

/// Largest divisor of `cells` not above `cap`.
fn display_partition(cells: usize, cap: usize) -> usize {
    (1..=cap.min(cells)).rev().find(|m| cells % m == 0).unwrap_or(1)
}

fn repro(a: ReproArgs, manifest: &mut RunManifest) -> Result<i32> {
    let seed = seed_for(a.seed, manifest);
    record(manifest, &serde_json::json!({
        "which": format!("{:?}", a.which).to_lowercase(), "R": a.radius, "h": a.h, "n": a.n, "seed": seed,
    }))?;
    let out = &a.out_dir;
    match a.which {
        Figure::Fig1 => {
            let s = sheet::sample_sheet(a.n, 2, seed)?;
            manifest.artifacts.extend(io::render_lattice(&s.lattice, &out.join("fig1_sheet_heatmap.png"))?);
            let csv = out.join("fig1_sheet_surface.csv");
            io::write_lattice_csv(&s.lattice, "W", &csv)?;
            manifest.artifacts.push(csv);
        }
        Figure::Fig2 => {
            let field = FieldArgs { model: crate::covariance::BARGMANN_FOCK.into(), dim: 2, radius: a.radius, h: a.h, seed: Some(seed) };
            let sample = simulate(&field, seed)?;
            let tag = format!("R{}", a.radius);
            field_heatmap(&sample, &out.join(format!("fig2_{tag}_field.png")), manifest)?;
            let xi = xi_of(&sample, Some(display_partition(sample.grid.cells(), 200)))?;
            manifest.artifacts.extend(io::render_lattice(&xi.lattice, &out.join(format!("fig2_{tag}_xi_heatmap.png")))?);
            let csv = out.join(format!("fig2_{tag}_xi_surface.csv"));
            io::write_lattice_csv(&xi.lattice, "xi", &csv)?;
            manifest.artifacts.push(csv);
        }
        Figure::Fig3 => {
            let (two, three) = (CurveParam::Finite(2.0), CurveParam::Finite(3.0));
            let curve = CurveSpec::new(two, three)?;
            let path = out.join("fig3_curve_L_2_3.csv");
            let mut text = String::from("x,y\n");
            for [x, y] in curve.vertices() {
                text.push_str(&format!("{x},{y}\n"));
            }
            std::fs::create_dir_all(out)?;
            std::fs::write(&path, text)?;
            manifest.artifacts.push(path);
            let grid = config::parse_grid("0:3:0.05")?;
            let rows = grid.iter().map(|&l| Ok((l, yeh_h(two, three, l)?))).collect::<Result<Vec<_>>>()?;
            let h = out.join("fig3_H_2_3.csv");
            io::write_h_csv(&rows, &h)?;
            manifest.artifacts.push(h);
        }
    }
    Ok(EXIT_OK)
}
