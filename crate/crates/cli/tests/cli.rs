use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/nominal.conf")
}

fn fwmpair(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fwmpair"))
        .args(args)
        .env_remove("FWMPAIR_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn run_in(dir: &Path, sub: &str, extra: &[&str]) -> Output {
    let cfg = config();
    let mut args = vec![sub, "-c", cfg.to_str().unwrap(), "-o", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    fwmpair(&args)
}

const SHORT_ZWM: [&str; 4] = [
    "--set",
    "zwm.powers_mW = 0.6, 1.0",
    "--set",
    "integration.fixed_seconds = 1",
];

#[test]
fn analytic_sweep_has_no_mc_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), "sweep-power", &["--analytic-only"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("power-sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(!csv.lines().next().unwrap().contains("mc_"));
    assert!(dir.path().join("power-sweep.json").exists());
}

#[test]
fn zwm_violation_is_positive_and_reruns_are_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut first = SHORT_ZWM.to_vec();
    first.extend(["--workers", "1"]);
    let mut second = SHORT_ZWM.to_vec();
    second.extend(["--workers", "3"]);
    assert!(run_in(a.path(), "zwm-test", &first).status.success());
    assert!(run_in(b.path(), "zwm-test", &second).status.success());
    let csv_a = std::fs::read(a.path().join("zwm-test.csv")).unwrap();
    let csv_b = std::fs::read(b.path().join("zwm-test.csv")).unwrap();
    assert_eq!(csv_a, csv_b);

    let text = String::from_utf8(csv_a).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "mc_V_over_sigma").unwrap();
    for line in text.lines().skip(1) {
        let ratio: f64 = line.split(',').nth(col).unwrap().parse().unwrap();
        assert!(ratio > 0.0, "{line}");
    }
    assert_eq!(header.last(), Some(&"an_V_over_sigma"));
}

#[test]
fn seed_changes_output_and_overrides_are_recorded() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut args = SHORT_ZWM.to_vec();
    args.extend(["--seed", "9"]);
    assert!(run_in(a.path(), "zwm-test", &SHORT_ZWM).status.success());
    assert!(run_in(b.path(), "zwm-test", &args).status.success());
    let read = |d: &Path| std::fs::read_to_string(d.join("zwm-test.csv")).unwrap();
    assert_ne!(read(a.path()), read(b.path()));
    let meta = std::fs::read_to_string(b.path().join("zwm-test.json")).unwrap();
    assert!(meta.contains("\"seed\": 9"));
    assert!(meta.contains("integration.fixed_seconds"));
}

#[test]
fn calibrate_is_idempotent() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let out = run_in(a.path(), "calibrate", &[]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("κ 0.22"), "{stdout}");
    let derived = a.path().join("derived.conf");
    let again = fwmpair(&["calibrate", "-c", derived.to_str().unwrap(), "-o", b.path().to_str().unwrap()]);
    assert!(again.status.success());
    assert_eq!(
        std::fs::read_to_string(&derived).unwrap(),
        std::fs::read_to_string(b.path().join("derived.conf")).unwrap()
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad_ratio = run_in(dir.path(), "calibrate", &["--set", "calibration.pair_ratio_signal=1.2"]);
    assert_eq!(bad_ratio.status.code(), Some(3));
    let unknown = run_in(dir.path(), "sweep-power", &["--set", "pump.colour=red"]);
    assert_eq!(unknown.status.code(), Some(2));
    let missing = fwmpair(&["sweep-power", "-c", "/nonexistent.conf"]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(fwmpair(&["selftest"]).status.code(), Some(0));
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let out = Command::new(env!("CARGO_BIN_EXE_fwmpair"))
        .args(["scan-spectrum", "--analytic-only", "-c", cfg.to_str().unwrap()])
        .env("FWMPAIR_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("spectral-scan.csv")).unwrap();
    assert!(csv.starts_with("offset_nm,seconds,spectral_weight,"));
    assert_eq!(csv.lines().count(), 42);
}
