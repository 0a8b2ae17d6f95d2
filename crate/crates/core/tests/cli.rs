use std::fs;
use std::path::Path;

use nodal_sheet::cli::{run, EXIT_CONFIG, EXIT_OK};
use nodal_sheet::config::RunManifest;
use nodal_sheet::sampler::read_field_binary;

fn run_in(dir: &Path, args: &[&str]) -> i32 {
    let mut argv = vec!["nodal-sheet".to_string()];
    argv.extend(args.iter().map(|a| a.replace("{dir}", dir.to_str().unwrap())));
    run(argv)
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn yeh_point_and_grid() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(dir.path(), &["yeh", "--a", "inf", "--b", "inf", "--lambda", "1"]), EXIT_OK);
    assert_eq!(run_in(dir.path(), &["yeh", "--a", "2", "--b", "3", "--lambda-grid", "0:3:0.05", "--out", "{dir}/h.csv"]), EXIT_OK);
    let text = fs::read_to_string(dir.path().join("h.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("lambda,H"));
    assert_eq!(lines.count(), 61);
    assert_eq!(run_in(dir.path(), &["yeh", "--a", "0.5", "--lambda", "1"]), EXIT_CONFIG);
}

#[test]
fn usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(dir.path(), &["clt-test", "--no-such-flag"]), EXIT_CONFIG);
    assert_eq!(run_in(dir.path(), &["no-such-command"]), EXIT_CONFIG);
}

#[test]
fn config_error_still_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let code = run_in(dir.path(), &["clt-test", "--N", "5", "--seed", "1", "--out-dir", "{dir}/run"]);
    assert_eq!(code, EXIT_CONFIG);
    let m = manifest(&out);
    assert_eq!(m.exit_code, Some(EXIT_CONFIG));
    assert!(m.error.unwrap().contains("too few samples"));
}

#[test]
fn experiment_artifacts_are_listed_and_seed_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "experiment.N=200\nexperiment.sheet_n=16\n").unwrap();
    let code = run_in(dir.path(), &["clt-test", "--self-test", "--config", "{dir}/run.cfg", "--out-dir", "{dir}/out"]);
    assert!(code == 0 || code == 4, "exit {code}");
    let out = dir.path().join("out");
    let m = manifest(&out);
    assert!(m.seed_from_entropy);
    assert_eq!(m.config["seed"].as_u64(), m.seed);
    assert_eq!(m.config["replications"].as_u64(), Some(200));
    let mut on_disk: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    let mut listed: Vec<String> = m.artifacts.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    on_disk.sort();
    listed.sort();
    assert_eq!(on_disk, listed);
    let samples = fs::read_to_string(out.join("samples.csv")).unwrap();
    assert!(samples.starts_with("rep,seed,stat_name,value\n"));
}

#[test]
fn gamma2_outputs() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(dir.path(), &["gamma2", "--model", "bargmann-fock", "--dim", "1", "--points", "8", "--out-dir", "{dir}/g"]), EXIT_OK);
    let profile = fs::read_to_string(dir.path().join("g/profile.csv")).unwrap();
    assert!(profile.starts_with("r,rho2,F2,err\n"));
    assert_eq!(profile.lines().count(), 9);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("g/gamma2.json")).unwrap()).unwrap();
    for key in ["rho1", "gamma2", "integral_F2", "rho1_term", "r_max"] {
        assert!(summary.get(key).is_some(), "{key}");
    }
    let g = summary["gamma2"].as_f64().unwrap();
    assert!((g - 0.257369).abs() < 1e-5);
}

#[test]
fn field_dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["simulate-field", "--R", "4", "--h", "0.1", "--seed", "8", "--out", "{dir}/f/field.bin"];
    assert_eq!(run_in(dir.path(), &args), EXIT_OK);
    let bytes = fs::read(dir.path().join("f/field.bin")).unwrap();
    assert_eq!(&bytes[..4], b"NSLF");
    assert_eq!(bytes.len(), 32 + 8 * 41 * 41);
    let sample = read_field_binary(bytes.as_slice()).unwrap();
    assert_eq!(sample.seed, 8);
    assert_eq!(sample.grid.points, 41);
}

#[test]
fn figures_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let out_dir = format!("{{dir}}/{out}");
        assert_eq!(run_in(dir.path(), &["repro-figures", "--which", "fig2", "--R", "10", "--seed", "3", "--out-dir", &out_dir]), EXIT_OK);
    }
    for name in ["fig2_R10_field.png", "fig2_R10_xi_heatmap.png", "fig2_R10_xi_surface.csv"] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name}");
    }
    let surface = fs::read_to_string(dir.path().join("a/fig2_R10_xi_surface.csv")).unwrap();
    assert!(surface.starts_with("t1,t2,xi\n"));
    assert_eq!(run_in(dir.path(), &["repro-figures", "--which", "fig1", "--n", "32", "--seed", "1", "--out-dir", "{dir}/c"]), EXIT_OK);
    assert_eq!(run_in(dir.path(), &["repro-figures", "--which", "fig3", "--out-dir", "{dir}/c"]), EXIT_OK);
    assert!(dir.path().join("c/fig1_sheet_heatmap.png").exists());
    assert!(dir.path().join("c/fig3_curve_L_2_3.csv").exists());
}

#[test]
fn sheet_commands() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["sheet-sup", "--n", "64", "--samples", "500", "--seed", "2", "--lambda-grid", "0:2:0.5", "--out", "{dir}/s/cdf.csv"];
    assert_eq!(run_in(dir.path(), &args), EXIT_OK);
    let text = fs::read_to_string(dir.path().join("s/cdf.csv")).unwrap();
    assert!(text.starts_with("lambda,empirical,theoretical\n"));
    assert_eq!(text.lines().count(), 6);
    assert_eq!(run_in(dir.path(), &["sheet-sample", "--n", "8", "--seed", "1", "--out-dir", "{dir}/w"]), EXIT_OK);
    let sheet = fs::read_to_string(dir.path().join("w/sheet.csv")).unwrap();
    assert!(sheet.starts_with("t1,t2,W\n"));
    assert_eq!(sheet.lines().count(), 1 + 81);
}
