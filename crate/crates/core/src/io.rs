//! CSV, JSON and PNG artifacts.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{Criterion, SampleRow, StatsReport};
use crate::kac_rice::KacDensityProfile;
use crate::nodal::Lattice;

pub const SAMPLES_HEADER: &str = "rep,seed,stat_name,value";
pub const PROFILE_HEADER: &str = "r,rho2,F2,err";
pub const CDF_HEADER: &str = "lambda,empirical,theoretical";
pub const H_HEADER: &str = "lambda,H";

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn finite(what: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// Rejects any non-finite number in the report.
pub fn check_finite(report: &StatsReport) -> Result<()> {
    for c in &report.checks {
        let what = format!("check `{}`", c.name);
        finite(&what, c.estimate)?;
        finite(&what, c.std_error)?;
        finite(&what, c.reference)?;
        for x in c.statistic.iter().chain(&c.p_value) {
            finite(&what, *x)?;
        }
        if let Criterion::Decreasing { values } = &c.criterion {
            for x in values {
                finite(&what, *x)?;
            }
        }
    }
    for s in &report.samples {
        finite(&format!("sample `{}` rep {}", s.stat, s.rep), s.value)?;
    }
    Ok(())
}

/// CSV fields never contain commas here; quote defensively anyway.
fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn split_csv(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(ch) = chars.next() {
        match ch {
            '"' if quoted && chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            '"' => quoted = !quoted,
            ',' if !quoted => out.push(std::mem::take(&mut cur)),
            _ => cur.push(ch),
        }
    }
    out.push(cur);
    out
}

pub fn write_samples_csv(rows: &[SampleRow], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{SAMPLES_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.rep, r.seed, field(&r.stat), r.value)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<SampleRow>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    match lines.next() {
        Some(Ok(h)) if h == SAMPLES_HEADER => {}
        _ => return Err(Error::Format(format!("{}: missing header `{SAMPLES_HEADER}`", path.display()))),
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        let f = split_csv(&line);
        let bad = || Error::Format(format!("{}: bad row `{line}`", path.display()));
        if f.len() != 4 {
            return Err(bad());
        }
        rows.push(SampleRow {
            rep: f[0].parse().map_err(|_| bad())?,
            seed: f[1].parse().map_err(|_| bad())?,
            stat: f[2].clone(),
            value: f[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

fn slug(name: &str) -> String {
    let mut s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c.to_ascii_lowercase() } else { '_' })
        .collect();
    while s.contains("__") {
        s = s.replace("__", "_");
    }
    s.trim_matches('_').to_string()
}

/// Writes `report.json`, `samples.csv`, one `cdf_<name>.csv` per CDF table and
/// `xi_heatmap_<rep>.png` for kept lattices. Returns the files written.
pub fn write_report(report: &StatsReport, dir: &Path) -> Result<Vec<PathBuf>> {
    check_finite(report)?;
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let json = dir.join("report.json");
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(&json, text)?;
    files.push(json);
    let samples = dir.join("samples.csv");
    write_samples_csv(&report.samples, &samples)?;
    files.push(samples);
    for table in &report.cdf_tables {
        let path = dir.join(format!("cdf_{}.csv", slug(&table.name)));
        write_cdf_csv(&table.rows, &path)?;
        files.push(path);
    }
    for (rep, lattice) in &report.heatmaps {
        if lattice.dim == 2 {
            let path = dir.join(format!("xi_heatmap_{rep}.png"));
            files.extend(render_lattice(lattice, &path)?);
        }
    }
    Ok(files)
}

/// Reads `report.json` and `samples.csv` back.
pub fn read_report(dir: &Path) -> Result<StatsReport> {
    let text = std::fs::read_to_string(dir.join("report.json"))?;
    let mut report: StatsReport = serde_json::from_str(&text)?;
    report.samples = read_samples_csv(&dir.join("samples.csv"))?;
    Ok(report)
}

pub fn write_profile_csv(profile: &KacDensityProfile, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{PROFILE_HEADER}")?;
    for e in &profile.entries {
        writeln!(w, "{},{},{},{}", e.r, e.rho2, e.f2, e.err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cdf_csv(rows: &[(f64, f64, f64)], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{CDF_HEADER}")?;
    for (l, e, t) in rows {
        writeln!(w, "{l},{e},{t}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_h_csv(rows: &[(f64, f64)], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{H_HEADER}")?;
    for (l, h) in rows {
        writeln!(w, "{l},{h}")?;
    }
    w.flush()?;
    Ok(())
}

/// Lattice dump with header `t1,...,td,<value_name>`, first coordinate outermost.
pub fn write_lattice_csv(lattice: &Lattice, value_name: &str, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let header: Vec<String> = (1..=lattice.dim).map(|k| format!("t{k}")).collect();
    writeln!(w, "{},{value_name}", header.join(","))?;
    let m = lattice.m as f64;
    let s = lattice.side();
    for (k, v) in lattice.values.iter().enumerate() {
        if lattice.dim == 1 {
            writeln!(w, "{},{v}", k as f64 / m)?;
        } else {
            writeln!(w, "{},{},{v}", (k / s) as f64 / m, (k % s) as f64 / m)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Sidecar metadata of a heatmap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapInfo {
    pub rows: usize,
    pub cols: usize,
    pub min: f64,
    pub max: f64,
    pub pixels_per_cell: usize,
    pub colormap: String,
}

const COLD: [f64; 3] = [33.0, 102.0, 172.0];
const MID: [f64; 3] = [247.0, 247.0, 247.0];
const HOT: [f64; 3] = [178.0, 24.0, 43.0];

/// Linear blue-white-red map of `t` in `[0, 1]`.
pub fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.5 };
    let (a, b, u) = if t < 0.5 { (COLD, MID, 2.0 * t) } else { (MID, HOT, 2.0 * t - 1.0) };
    [0, 1, 2].map(|k| (a[k] + (b[k] - a[k]) * u).round() as u8)
}

/// PNG of a row-major `rows x cols` array, first row on top, each cell a
/// square block; min and max go to `<path>.json`.
pub fn render_heatmap(values: &[f64], rows: usize, cols: usize, path: &Path) -> Result<Vec<PathBuf>> {
    if rows == 0 || cols == 0 || values.len() != rows * cols {
        return Err(Error::ShapeMismatch(format!("{} values for a {rows}x{cols} heatmap", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("heatmap values".into()));
    }
    let (min, max) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let scale = (512 / rows.max(cols)).max(1);
    let (w, h) = (cols * scale, rows * scale);
    let span = max - min;
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let v = values[(y / scale) * cols + x / scale];
            let t = if span > 0.0 { (v - min) / span } else { 0.5 };
            data.extend_from_slice(&colormap(t));
        }
    }
    let file = create(path)?;
    let mut enc = png::Encoder::new(file, w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
    writer.write_image_data(&data).map_err(|e| Error::Format(e.to_string()))?;
    writer.finish().map_err(|e| Error::Format(e.to_string()))?;
    let info = HeatmapInfo { rows, cols, min, max, pixels_per_cell: scale, colormap: "linear blue-white-red".into() };
    let sidecar = sidecar_path(path);
    let mut text = serde_json::to_string_pretty(&info)?;
    text.push('\n');
    std::fs::write(&sidecar, text)?;
    Ok(vec![path.to_path_buf(), sidecar])
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Rows of a 2-d grid indexed `[x][y]` arranged with `y` decreasing downwards.
pub fn image_rows(values: &[f64], side: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    for y in (0..side).rev() {
        for x in 0..side {
            out.push(values[x * side + y]);
        }
    }
    out
}

/// Heatmap of a 2-d lattice in plot orientation.
pub fn render_lattice(lattice: &Lattice, path: &Path) -> Result<Vec<PathBuf>> {
    if lattice.dim != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: lattice.dim });
    }
    let s = lattice.side();
    render_heatmap(&image_rows(&lattice.values, s), s, s, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{Check, ExperimentConfig};

    fn decode(path: &Path) -> (u32, u32, Vec<u8>) {
        let dec = png::Decoder::new(File::open(path).unwrap());
        let mut reader = dec.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size()];
        let info = reader.next_frame(&mut buf).unwrap();
        buf.truncate(info.buffer_size());
        (info.width, info.height, buf)
    }

    #[test]
    fn constant_lattice_is_one_colour() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        render_heatmap(&[3.0; 12], 3, 4, &p).unwrap();
        let (_, _, px) = decode(&p);
        assert!(px.chunks(3).all(|c| c == px[..3].to_vec().as_slice()));
    }

    #[test]
    fn two_by_two_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.png");
        render_heatmap(&[0.0, 1.0, 1.0, 0.0], 2, 2, &p).unwrap();
        let (w, h, px) = decode(&p);
        let at = |x: u32, y: u32| px[((y * w + x) * 3) as usize..((y * w + x) * 3 + 3) as usize].to_vec();
        let (q, r) = (w / 4, 3 * h / 4);
        assert_eq!(at(q, q), colormap(0.0).to_vec());
        assert_eq!(at(r, q), colormap(1.0).to_vec());
        assert_eq!(at(q, r), colormap(1.0).to_vec());
        assert_eq!(at(r, r), colormap(0.0).to_vec());
        let info: HeatmapInfo = serde_json::from_str(&std::fs::read_to_string(sidecar_path(&p)).unwrap()).unwrap();
        assert_eq!((info.min, info.max), (0.0, 1.0));
    }

    fn report() -> StatsReport {
        let config = ExperimentConfig::defaults(2);
        let mut r: StatsReport = serde_json::from_value(serde_json::json!({
            "experiment": "clt", "model": "bargmann-fock", "dim": 2, "seed": 7, "replications": 100,
            "mode": "field", "config": config, "checks": [], "notes": ["n"], "passed": true
        }))
        .unwrap();
        r.checks.push(Check::new("a", 0.1 + 0.2, 1e-17, 1.0 / 3.0, Criterion::Info).with_test(0.5, Some(0.25)));
        r
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = report();
        write_report(&r, dir.path()).unwrap();
        let header_only = std::fs::read_to_string(dir.path().join("samples.csv")).unwrap();
        assert_eq!(header_only, format!("{SAMPLES_HEADER}\n"));
        assert_eq!(read_report(dir.path()).unwrap(), r);
        r.samples = vec![
            SampleRow { rep: 0, seed: u64::MAX, stat: "xi(1,1) R=50".into(), value: -1.0 / 3.0 },
            SampleRow { rep: 1, seed: 3, stat: "plain".into(), value: 5e-324 },
        ];
        write_report(&r, dir.path()).unwrap();
        assert_eq!(read_report(dir.path()).unwrap(), r);
    }

    #[test]
    fn nan_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = report();
        r.checks[0].estimate = f64::NAN;
        let err = write_report(&r, dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(!dir.path().join("report.json").exists());
    }
}
