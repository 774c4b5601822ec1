use std::path::Path;
use std::process::{Command, Output};

use magcap_core::config::RunConfig;

fn magcap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magcap"))
        .args(args)
        .current_dir(dir)
        .env("MAGCAP_LOG", "error")
        .output()
        .expect("binary runs")
}

fn sidecar_config(path: &Path) -> RunConfig {
    let text = std::fs::read_to_string(path).unwrap();
    let table: toml::Table = toml::from_str(&text).unwrap();
    assert_eq!(table["format_version"].as_integer(), Some(1));
    RunConfig::from_toml(&toml::to_string(&table["config"]).unwrap()).unwrap()
}

#[test]
fn help_lists_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let out = magcap(dir.path(), &["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in [
        "force-profile",
        "risk-sweep",
        "normal-force-sweep",
        "localize-bench",
        "propel",
        "approx-check",
    ] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn invalid_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 5] = [
        &["force-profile", "--theta-ar-deg", "120"],
        &["force-profile", "--alpha-deg", "95"],
        &["risk-sweep", "--modes", "spin"],
        &["risk-sweep", "--modes", "dma"],
        &["propel", "--dt", "1.0", "--seeds", "1"],
    ];
    for args in cases {
        let out = magcap(dir.path(), args);
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(!out.stderr.is_empty(), "{args:?} should explain the failure");
    }
    let missing = magcap(dir.path(), &["--config", "nope.toml", "force-profile"]);
    assert!(!missing.status.success());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "alpha_deg = 20.0\nd_m = 0.2\nseed = 3\n").unwrap();
    let out = magcap(
        dir.path(),
        &[
            "--config",
            "run.toml",
            "--seed",
            "11",
            "force-profile",
            "--alpha-deg",
            "15",
            "--out",
            "fp.csv",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = sidecar_config(&dir.path().join("fp.csv.config.toml"));
    assert_eq!(cfg.alpha_deg, 15.0);
    assert_eq!(cfg.d_m, 0.2);
    assert_eq!(cfg.seed, 11);

    let rows = csv::Reader::from_path(dir.path().join("fp.csv"))
        .unwrap()
        .records()
        .count();
    assert_eq!(rows, cfg.profile_samples);
}

#[test]
fn propel_accepts_environment_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("tube.toml"),
        "centerline = [[0.15, 0.27, 0.08], [0.20, 0.27, 0.08]]\n\
         inner_radius_m = 0.009\nmu_static = 1.0\nmu_kinetic = 0.5\n\
         rotation_friction_factor = 0.3\nhoop_resistance_n = 0.003\n\
         twist_compliance = 20.0\nvolvulus_threshold_rad = 6.283185307179586\n\
         gravity_load_n = 0.005\n",
    )
    .unwrap();
    let out = magcap(
        dir.path(),
        &[
            "propel",
            "--env",
            "tube.toml",
            "--modes",
            "rrma",
            "--seeds",
            "1",
            "--ground-truth",
            "--out",
            "p.csv",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(dir.path().join("p.summary.csv")).unwrap();
    let line = summary.lines().nth(1).unwrap();
    assert!(line.starts_with("rrma,1,1,"), "{line}");

    std::fs::write(dir.path().join("bad.toml"), "inner_radius_m = 0.009\n").unwrap();
    let bad = magcap(dir.path(), &["propel", "--env", "bad.toml", "--seeds", "1"]);
    assert!(!bad.status.success());
}
