//! Flat `key=value` configuration with section prefixes, layered
//! CLI > file > defaults, and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{ExperimentConfig, TestFunction};
use crate::sheet::CurveParam;

/// Parsed `key=value` pairs; later insertions win.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Lines are `section.key=value`; blank lines and `#` comments skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = ConfigMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{raw}`", no + 1)))?;
            map.set(key.trim(), value.trim())?;
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// `key` without a section goes under `experiment.`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key.is_empty() {
            return Err(Error::Config("empty key".into()));
        }
        let key = if key.contains('.') { key.to_string() } else { format!("experiment.{key}") };
        self.entries.insert(key, value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Overlays `other` on top of `self`.
    pub fn merged(&self, other: &ConfigMap) -> ConfigMap {
        let mut out = self.clone();
        out.entries.extend(other.entries.iter().map(|(k, v)| (k.clone(), v.clone())));
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("invalid value `{value}` for {key}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| bad(key, value))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').filter(|s| !s.trim().is_empty()).map(|s| num(key, s)).collect()
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, value)),
    }
}

/// `start:stop:step` (inclusive) or a comma list.
pub fn parse_grid(value: &str) -> Result<Vec<f64>> {
    let key = "lambda grid";
    let parts: Vec<&str> = value.split(':').collect();
    match parts.as_slice() {
        [lo, hi, step] => {
            let (lo, hi, step): (f64, f64, f64) = (num(key, lo)?, num(key, hi)?, num(key, step)?);
            if !(step > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(bad(key, value));
            }
            let count = ((hi - lo) / step + 1e-9).floor() as usize;
            Ok((0..=count).map(|i| lo + i as f64 * step).collect())
        }
        [_] => list(key, value),
        _ => Err(bad(key, value)),
    }
}

/// `a:b` pairs separated by commas, e.g. `inf:inf,2:3`.
pub fn parse_curves(value: &str) -> Result<Vec<(CurveParam, CurveParam)>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let (a, b) = pair.split_once(':').ok_or_else(|| bad("curves", value))?;
            Ok((a.trim().parse().map_err(|_| bad("curves", value))?, b.trim().parse().map_err(|_| bad("curves", value))?))
        })
        .collect()
}

/// Points separated by `;`, coordinates by `,`.
pub fn parse_points(value: &str) -> Result<Vec<Vec<f64>>> {
    value.split(';').filter(|s| !s.trim().is_empty()).map(|p| list("points", p)).collect()
}

/// Pairs separated by `;`, the two points by `|`.
pub fn parse_pairs(value: &str) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    value
        .split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|p| {
            let (s, t) = p.split_once('|').ok_or_else(|| bad("pairs", value))?;
            Ok((list("pairs", s)?, list("pairs", t)?))
        })
        .collect()
}

/// Defaults for the resolved dimension, then every key of `map` applied.
pub fn resolve(map: &ConfigMap) -> Result<ExperimentConfig> {
    let dim = match map.get("experiment.dim") {
        Some(v) => num("experiment.dim", v)?,
        None => 2,
    };
    if !(1..=2).contains(&dim) {
        return Err(Error::Config(format!("experiment.dim must be 1 or 2, got {dim}")));
    }
    let mut c = ExperimentConfig::defaults(dim);
    for (key, value) in map.iter() {
        apply(&mut c, key, value)?;
    }
    Ok(c)
}

fn apply(c: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    let t = &mut c.tolerances;
    match key {
        "experiment.model" => c.model = value.to_string(),
        "experiment.dim" => c.dim = num(key, value)?,
        "experiment.R" => c.radii = list(key, value)?,
        "experiment.h" => c.spacing = num(key, value)?,
        "experiment.m" => c.partition = num(key, value)?,
        "experiment.N" => c.replications = num(key, value)?,
        "experiment.seed" => c.seed = num(key, value)?,
        "experiment.lambda_grid" => c.lambda_grid = parse_grid(value)?,
        "experiment.curves" => c.curves = parse_curves(value)?,
        "experiment.points" => c.points = parse_points(value)?,
        "experiment.pairs" => c.pairs = parse_pairs(value)?,
        "experiment.test_functions" => {
            c.test_functions = value.split(',').filter(|s| !s.trim().is_empty()).map(TestFunction::parse).collect::<Result<_>>()?
        }
        "experiment.moment_levels" => c.moment_levels = num(key, value)?,
        "experiment.bootstrap" => c.bootstrap = num(key, value)?,
        "experiment.self_test" => c.self_test = boolean(key, value)?,
        "experiment.sheet_n" => c.sheet_resolution = num(key, value)?,
        "experiment.curve_points" => c.curve_points = num(key, value)?,
        "experiment.heatmaps" => c.heatmaps = list(key, value)?,
        "tolerance.ks_alpha" => t.ks_alpha = num(key, value)?,
        "tolerance.covariance_se" => t.covariance_se = num(key, value)?,
        "tolerance.phi_variance_rel" => t.phi_variance_rel = num(key, value)?,
        "tolerance.sup_distance" => t.sup_distance = num(key, value)?,
        "tolerance.self_test_sup_distance" => t.self_test_sup_distance = num(key, value)?,
        "tolerance.gamma2_rel" => t.gamma2_rel = num(key, value)?,
        "tolerance.moment_slope_min" => t.moment_slope_min = num(key, value)?,
        "tolerance.cauchy_schwarz_se" => t.cauchy_schwarz_se = num(key, value)?,
        // Consumed by the CLI.
        k if k.starts_with("output.") => {}
        _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
    }
    Ok(())
}

/// Record of one CLI invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub seed_from_entropy: bool,
    pub artifacts: Vec<PathBuf>,
    pub version: String,
    pub started: String,
    pub finished: Option<String>,
    pub wall_time_seconds: Option<f64>,
    pub exit_code: Option<i32>,
    pub error: Option<String>,
    #[serde(skip)]
    start: Option<SystemTime>,
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        let now = SystemTime::now();
        RunManifest {
            command: command.into(),
            config: serde_json::Value::Null,
            seed: None,
            seed_from_entropy: false,
            artifacts: Vec::new(),
            version: env!("CARGO_PKG_VERSION").into(),
            started: humantime::format_rfc3339_millis(now).to_string(),
            finished: None,
            wall_time_seconds: None,
            exit_code: None,
            error: None,
            start: Some(now),
        }
    }

    pub fn finish(&mut self, exit_code: i32, error: Option<String>) {
        let now = SystemTime::now();
        self.finished = Some(humantime::format_rfc3339_millis(now).to_string());
        self.wall_time_seconds = self.start.and_then(|s| now.duration_since(s).ok()).map(|d| d.as_secs_f64());
        self.exit_code = Some(exit_code);
        self.error = error;
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let map = ConfigMap::parse("# run\nexperiment.N=2000\n\nR = 10,20 # radii\ntolerance.ks_alpha=0.05\n").unwrap();
        let c = resolve(&map).unwrap();
        assert_eq!(c.replications, 2000);
        assert_eq!(c.radii, vec![10.0, 20.0]);
        assert_eq!(c.tolerances.ks_alpha, 0.05);
        assert!(ConfigMap::parse("experiment.N").is_err());
        assert!(resolve(&ConfigMap::parse("experiment.bogus=1").unwrap()).is_err());
        assert!(resolve(&ConfigMap::parse("experiment.N=many").unwrap()).is_err());
    }

    #[test]
    fn grids_and_lists() {
        let g = parse_grid("0:3:0.05").unwrap();
        assert_eq!(g.len(), 61);
        assert!((g[60] - 3.0).abs() < 1e-12);
        assert_eq!(parse_grid("0.5,1").unwrap(), vec![0.5, 1.0]);
        assert!(parse_grid("1:0:0.1").is_err());
        let curves = parse_curves("inf:inf,2:3").unwrap();
        assert_eq!(curves[1], (CurveParam::Finite(2.0), CurveParam::Finite(3.0)));
        let pairs = parse_pairs("0.5,1|1,0.5;1,1|0.5,0.5").unwrap();
        assert_eq!(pairs[0], (vec![0.5, 1.0], vec![1.0, 0.5]));
        assert_eq!(parse_points("1,1;0,1").unwrap()[1], vec![0.0, 1.0]);
    }

    #[test]
    fn dimension_selects_defaults() {
        let c = resolve(&ConfigMap::parse("experiment.dim=1").unwrap()).unwrap();
        assert!(c.points.iter().all(|p| p.len() == 1));
    }
}
