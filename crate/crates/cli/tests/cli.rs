use eddylab::config::KEYS;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn eddylab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eddylab")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.cfg");
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn validate_reference_config_is_admissible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "lattice_density_n = 200\nclass_period_m = 30\ndelta_boundary_layer = 0.1\nvortex_radius_r = 0.07\n",
    );
    let out = dir.path().join("out");
    let o = eddylab(&["validate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("admissible"));
    assert!(out.join("manifest.json").exists());
    assert!(out.join("report.json").exists());
}

#[test]
fn inadmissible_config_lists_violations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "vortex_radius_r = 0.5\n");
    let out = dir.path().join("out");
    let o = eddylab(&["validate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let s = stdout(&o);
    assert!(s.starts_with("inadmissible"));
    assert!(s.lines().count() >= 2);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    assert_eq!(eddylab(&["theorem1", "--paths", "0", "--out", out]).status.code(), Some(2));
    assert_eq!(eddylab(&["theorem1", "--bogus"]).status.code(), Some(2));
    let bad = write_config(dir.path(), "no_such_key = 1\n");
    assert_eq!(eddylab(&["validate", "--config", &bad, "--out", out]).status.code(), Some(2));
    let bad = write_config(dir.path(), "kappa_diffusivity = fast\n");
    assert_eq!(eddylab(&["theorem1", "--config", &bad, "--out", out]).status.code(), Some(2));
    assert_eq!(eddylab(&["validate", "--paths", "3", "--out", out]).status.code(), Some(2));
}

#[test]
fn help_lists_every_key_with_units() {
    for sub in ["theorem1", "validate"] {
        let s = stdout(&eddylab(&[sub, "--help"]));
        for k in KEYS {
            let line = s.lines().find(|l| l.trim_start().starts_with(k.key)).unwrap_or_else(|| panic!("{}", k.key));
            assert!(line.contains(&format!("[{}]", k.units)), "{line}");
        }
    }
}

#[test]
fn eigen_sweep_without_noise_reproduces_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "kappa_list = 0.01,0.1\nsigma2_list = 0\ndelta_list = 0.1\ninclude_2d = false\nradial_cells = 2048\n",
    );
    let out = dir.path().join("out");
    let o = eddylab(&["eigen-sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let kappa: f64 = f[0].parse().unwrap();
        let lambda: f64 = f[4].parse().unwrap();
        assert!((lambda / (kappa * 5.783_185_962_946_784) - 1.0).abs() < 1e-5, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 2);
}

#[test]
fn theorem1_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "paths_count = 6\nstudy_paths_count = 2\ncheckpoint_times = 0.0005,0.001\nseed = 7\n",
    );
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = eddylab(&["theorem1", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", threads]);
        assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        (
            fs::read(out.join("report.json")).unwrap(),
            fs::read(out.join("observables.csv")).unwrap(),
            m["config_hash"].as_str().unwrap().to_string(),
        )
    };
    let a = run("a", "1");
    let b = run("b", "2");
    assert!(a.0 == b.0, "report.json differs");
    assert!(a.1 == b.1, "observables.csv differs");
    assert_eq!(a.2, b.2);
    let lines = String::from_utf8(a.1).unwrap().lines().count();
    assert_eq!(lines, 1 + 6 * 2);

    let out = dir.path().join("c");
    let o = eddylab(&["theorem1", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "8"]);
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(fs::read(out.join("observables.csv")).unwrap(), fs::read(dir.path().join("a/observables.csv")).unwrap());
}
