use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ltlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltlab")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.cfg");
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn list_is_stable_and_filterable() {
    let all = ltlab(&["list"]);
    assert!(all.status.success());
    let text = stdout(&all);
    for name in [
        "localtime_maximum",
        "joint_identity",
        "abs_w_factor2",
        "ito_tanaka_square",
        "occupation_density",
        "regulated_unit",
        "timechange_standardize",
        "deterministic_ramp",
    ] {
        assert!(text.contains(name), "{name}");
    }
    assert_eq!(stdout(&ltlab(&["list"])), text);
    let filtered = stdout(&ltlab(&["list", "regulated"]));
    assert_eq!(filtered.lines().count(), 1);
    let none = ltlab(&["list", "no_such_thing"]);
    assert!(none.status.success());
    assert!(stdout(&none).is_empty());
}

#[test]
fn skorohod_run_writes_pair_csv_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "experiment = skorohod_unit\nsteps = 512\nreplicates = 100\n");
    let out = tmp.path().join("out");
    let o = ltlab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let pair = fs::read_to_string(out.join("reflected_pair_0.csv")).unwrap();
    assert!(pair.starts_with("t,x,z,f\n"));
    assert_eq!(pair.lines().count(), 514);
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report.starts_with("check,statistic,threshold,pass,n,seed\n"));
    let summary = fs::read_to_string(out.join("summary")).unwrap();
    assert!(summary.contains("check.minimality_mismatches.pass = true"));
    assert!(summary.ends_with("pass = true\n"));
}

#[test]
fn localtime_maximum_summary_reports_ks() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "experiment = localtime_maximum\nsteps = 1024\nreplicates = 2000\n");
    let out = tmp.path().join("out");
    let o = ltlab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(matches!(o.status.code(), Some(0) | Some(1)));
    let summary = fs::read_to_string(out.join("summary")).unwrap();
    assert!(summary.contains("check.identity.two_sample_ks.statistic = "));
    assert!(summary.contains("check.identity.two_sample_ks.pass = "));
}

#[test]
fn identical_configs_give_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "experiment = regulated_unit\nsteps = 256\nreplicates = 300\n");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(ltlab(&["run", "--config", &cfg, "--out", a.to_str().unwrap()]).status.code().is_some());
    assert!(ltlab(&["run", "--config", &cfg, "--out", b.to_str().unwrap()]).status.code().is_some());
    for name in ["summary", "report.csv", "regulated_pair_0.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let ra = fs::read_to_string(a.join("config.resolved")).unwrap();
    let rb = fs::read_to_string(b.join("config.resolved")).unwrap();
    assert_eq!(ra.replace(a.to_str().unwrap(), ""), rb.replace(b.to_str().unwrap(), ""));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "experiment = skorohod_unit\nseed = 1\nsteps = 64\nreplicates = 10\n");
    let out = tmp.path().join("out");
    ltlab(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "99"]);
    let resolved = fs::read_to_string(out.join("config.resolved")).unwrap();
    assert!(resolved.contains("seed = 99\n"));
}

#[test]
fn failing_check_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    // a coarse grid makes the band far wider than the 2% tolerance allows
    let cfg = write_config(tmp.path(), "experiment = expected_localtime\nsteps = 64\nreplicates = 200\n");
    let out = tmp.path().join("out");
    let o = ltlab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(fs::read_to_string(out.join("summary")).unwrap().ends_with("pass = false\n"));
}

#[test]
fn malformed_config_exits_two_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    for (text, key) in [
        ("experiment = skorohod_unit\nsteps = 0\n", "steps"),
        ("experiment = skorohod_unit\nsigma = 2\n", "sigma"),
        ("experiment = nonexistent\n", "nonexistent"),
    ] {
        let cfg = write_config(tmp.path(), text);
        let out = tmp.path().join("never");
        let o = ltlab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&o.stderr).contains(key));
        assert!(!out.exists());
    }
    let o = ltlab(&["run", "--config", tmp.path().join("missing.cfg").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
