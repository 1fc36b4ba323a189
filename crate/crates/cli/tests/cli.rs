use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", name]
        .iter()
        .collect()
}

fn cavsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cavsim"))
        .args(args)
        .env_remove("CAVSIM_LOG")
        .output()
        .expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// The two-vehicle scenario with `edit` applied, written into `dir`.
fn variant(dir: &Path, edit: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let mut v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(scenario("two_vehicle.json")).unwrap()).unwrap();
    edit(&mut v);
    let path = dir.join("variant.json");
    fs::write(&path, v.to_string()).unwrap();
    path
}

#[test]
fn run_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = cavsim(&[
        "run",
        "--config",
        arg(&scenario("two_vehicle.json")),
        "--out",
        arg(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trajectory.csv", "metrics.csv", "summary.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn misspelled_section_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant(dir.path(), |v| {
        let channel = v.as_object_mut().unwrap().remove("channel").unwrap();
        v["chanel"] = channel;
    });
    for cmd in ["run", "validate"] {
        let mut args = vec![cmd, "--config", arg(&cfg)];
        let out = dir.path().join("out");
        if cmd == "run" {
            args.extend(["--out", arg(&out)]);
        }
        let o = cavsim(&args);
        assert_eq!(o.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&o.stderr).contains("chanel"));
    }
}

#[test]
fn seed_override_is_deterministic_and_matters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("five_vehicle_blackout.json");
    let traj = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let o = cavsim(&["run", "--config", arg(&cfg), "--seed", seed, "--out", arg(&out)]);
        assert!(o.status.success());
        fs::read(out.join("trajectory.csv")).unwrap()
    };
    let a = traj("11", "a");
    assert_eq!(a, traj("11", "b"));
    assert_ne!(a, traj("12", "c"));
}

#[test]
fn sweep_rows_follow_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = cavsim(&[
        "sweep",
        "--config",
        arg(&scenario("five_vehicle_blackout.json")),
        "--steps",
        "0.01,0.1,0.5,1.0",
        "--out",
        arg(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("prediction_step_s,max_abs_pos_err_m,rms_pos_err_m,mean_step_wallclock_ms")
    );
    let steps: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["0.010000", "0.100000", "0.500000", "1.000000"]);
    for d in ["dt_0.01", "dt_0.1", "dt_0.5", "dt_1"] {
        assert!(out.join(d).join("trajectory.csv").is_file(), "{d}");
    }

    let out = dir.path().join("reversed");
    let cfg = scenario("two_vehicle.json");
    let o = cavsim(&["sweep", "--config", arg(&cfg), "--steps", "0.5,0.1", "--out", arg(&out)]);
    assert!(o.status.success());
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let steps: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["0.500000", "0.100000"]);
}

#[test]
fn empty_step_list_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("two_vehicle.json");
    let out = dir.path().join("sweep");
    let o = cavsim(&["sweep", "--config", arg(&cfg), "--steps", "", "--out", arg(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join("sweep.csv").exists());
}

#[test]
fn indivisible_steps_fail_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant(dir.path(), |v| {
        v["engine"]["sim_step_s"] = 0.02.into();
        v["estimator"]["prediction_step_s"] = 0.03.into();
    });
    let o = cavsim(&["validate", "--config", arg(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("prediction_step_s"));
}

#[test]
fn overlapping_nlos_windows_fail_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant(dir.path(), |v| {
        v["channel"]["nlos_windows"] = serde_json::json!([[1.0, 3.0], [2.0, 4.0]]);
    });
    let o = cavsim(&["validate", "--config", arg(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nlos_windows"));
}

#[test]
fn validate_echoes_resolved_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("minimal.json");
    fs::write(&cfg, "{}").unwrap();
    let o = cavsim(&["validate", "--config", arg(&cfg)]);
    assert!(o.status.success());
    let echo: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(echo["channel"]["delay_mean_s"], 0.04);
    assert_eq!(echo["channel"]["delay_std_s"], 0.0259);
    assert_eq!(echo["estimator"]["a_max"], 0.73);
    assert_eq!(echo["estimator"]["sigma"], 4.0);
    assert_eq!(echo["control"]["time_gap_s"], 1.5);
}

#[test]
fn numeric_fault_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant(dir.path(), |v| {
        v["control"] = serde_json::json!({ "gains": { "k": 1e308, "gamma": 0.8 } });
    });
    let out = dir.path().join("out");
    let o = cavsim(&["run", "--config", arg(&cfg), "--out", arg(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("numeric fault"));
}

#[test]
fn missing_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = cavsim(&["validate", "--config", arg(&dir.path().join("absent.json"))]);
    assert_eq!(o.status.code(), Some(1));
}
