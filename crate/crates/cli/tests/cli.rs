use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hpoed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hpoed"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("hpoed-test-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

/// Parsed CSV: header and rows of fields.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(rows: &[Vec<String>], i: usize) -> Vec<f64> {
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_lf_writes_signals_and_magnetization() {
    let dir = scratch("lf");
    let out = dir.to_str().unwrap();
    let o = hpoed(&["simulate-lf", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_csv(&dir.join("signals.csv"));
    assert_eq!(header, ["t", "sP", "sL"]);
    assert_eq!(rows.len(), 30);
    let sp = column(&rows, 1);
    let peak = sp.iter().cloned().fold(f64::MIN, f64::max);
    let (base, _) = hpmri_oed::simulate_lf(
        &Default::default(),
        &hpmri_oed::AcquisitionDesign::default(),
    )
    .unwrap();
    assert_eq!(peak, base.peak_pyruvate());
    let (header, rows) = read_csv(&dir.join("magnetization.csv"));
    assert_eq!(header, ["t", "phiP", "phiL"]);
    assert_eq!(rows.len(), 30);
    assert!(dir.join("signals.svg").exists());
    assert!(dir.join("magnetization.svg").exists());
    assert!(fs::read_to_string(dir.join("signals.csv")).unwrap().ends_with('\n'));
}

#[test]
fn zero_angle_design_gives_zero_signals() {
    let dir = scratch("zero");
    let cfg = write_config(&dir, "[design]\ntheta_p = 0\ntheta_l = 0\n");
    let o = hpoed(&["simulate-lf", "--config", &cfg, "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, rows) = read_csv(&dir.join("signals.csv"));
    assert!(column(&rows, 1).iter().chain(&column(&rows, 2)).all(|&v| v == 0.0));
}

#[test]
fn reruns_are_byte_identical() {
    let a = scratch("rerun-a");
    let b = scratch("rerun-b");
    for d in [&a, &b] {
        let o = hpoed(&["simulate-lf", "--out", d.to_str().unwrap()]);
        assert!(o.status.success());
        let o = hpoed(&[
            "validate", "--replicates", "3", "--out", d.to_str().unwrap(),
        ]);
        assert!(o.status.code().is_some_and(|c| c == 0 || c == 2), "{}", stderr(&o));
    }
    for f in [
        "signals.csv",
        "magnetization.csv",
        "validate_lf_oed2.csv",
        "validate_lf_clinical.csv",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn unknown_key_is_rejected_with_line_number() {
    let dir = scratch("badkey");
    let cfg = write_config(&dir, "[model]\nkpl = 0.15\nkpll = 0.2\n");
    let o = hpoed(&["simulate-lf", "--config", &cfg, "--out", dir.to_str().unwrap()]);
    assert!(!o.status.success());
    let msg = stderr(&o);
    assert!(msg.contains("kpll") && msg.contains("line 3"), "{msg}");
}

#[test]
fn zero_replicates_is_a_config_error() {
    let dir = scratch("r0");
    let cfg = write_config(&dir, "[validate]\nreplicates = 0\n");
    let o = hpoed(&["validate", "--config", &cfg, "--out", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("replicates"), "{}", stderr(&o));
}

#[test]
fn optimize_constant_at_high_snr() {
    let dir = scratch("opt20");
    let o = hpoed(&[
        "optimize", "--scheme", "constant", "--snr", "20", "--out", dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_csv(&dir.join("schedule_constant_snr20.csv"));
    assert_eq!(header, ["k", "t", "thetaP_deg", "thetaL_deg"]);
    assert_eq!(rows.len(), 30);
    for r in &rows {
        let p: f64 = r[2].parse().unwrap();
        let l: f64 = r[3].parse().unwrap();
        assert!((p - 3.0).abs() <= 3.0 && (l - 28.0).abs() <= 3.0, "{p} {l}");
    }
    let (header, rows) = read_csv(&dir.join("summary_constant.csv"));
    assert_eq!(header, ["snr", "scheme", "MI_nats", "H_z", "H_z_given_P", "converged"]);
    assert_eq!(rows[0][5], "true");
}

#[test]
fn varying_scheme_is_at_least_as_informative() {
    let dir = scratch("opt2");
    let out = dir.to_str().unwrap();
    for scheme in ["constant", "varying"] {
        let o = hpoed(&["optimize", "--scheme", scheme, "--snr", "2", "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mi = |s: &str| -> f64 {
        let (_, rows) = read_csv(&dir.join(format!("summary_{s}.csv")));
        rows[0][2].parse().unwrap()
    };
    assert!(mi("varying") >= mi("constant") - 1e-8);
}

#[test]
fn validate_lf_reports_every_snr() {
    let dir = scratch("vlf");
    let cfg = write_config(
        &dir,
        "[[validate.designs]]\nname = \"oed2\"\ntheta_p = 35\ntheta_l = 28\n",
    );
    let o = hpoed(&["validate", "--source", "lf", "--config", &cfg, "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_csv(&dir.join("validate_lf_oed2.csv"));
    assert_eq!(header, ["snr_data", "mean_kPL", "std_kPL", "n_converged"]);
    assert_eq!(column(&rows, 0), [2.0, 5.0, 10.0, 15.0, 20.0]);
    let std = column(&rows, 2);
    let inversions = std.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(inversions <= 1, "{std:?}");
    assert!(dir.join("validate_lf_oed2.svg").exists());
}

#[test]
fn schedule_file_round_trips_into_simulation() {
    let dir = scratch("sched");
    let out = dir.to_str().unwrap();
    let o = hpoed(&["optimize", "--snr", "20", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = write_config(&dir, "[design]\nschedule = \"schedule_constant_snr20.csv\"\n");
    let o = hpoed(&["simulate-lf", "--config", &cfg, "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, rows) = read_csv(&dir.join("signals.csv"));
    assert_eq!(rows.len(), 30);
}

#[test]
fn phantom_without_input_has_zero_signals() {
    let dir = scratch("hf0");
    let cfg = write_config(&dir, "[model]\nsigma_p = 0\n[phantom]\ndims = [16, 16, 16]\ndt = 0.6\n");
    let o = hpoed(&["simulate-hf", "--config", &cfg, "--out", dir.to_str().unwrap()]);
    let (header, rows) = read_csv(&dir.join("cells.csv"));
    assert_eq!(header, ["cell", "k", "t", "sP", "sL", "peak_phiPV"]);
    assert_eq!(rows.len(), 4096 * 30);
    for i in [3, 4, 5] {
        assert!(column(&rows, i).iter().all(|&v| v == 0.0));
    }
    // No cell reaches any peak band, so selection cannot be written.
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("band"), "{}", stderr(&o));
}

#[test]
fn phantom_cells_fill_every_band_and_validate() {
    let dir = scratch("hf");
    let cfg = write_config(
        &dir,
        "[validate]\nreplicates = 4\n[[validate.designs]]\nname = \"oed2\"\ntheta_p = 35\ntheta_l = 28\n",
    );
    let out = dir.to_str().unwrap();
    let o = hpoed(&["simulate-hf", "--config", &cfg, "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_csv(&dir.join("selected_cells.csv"));
    assert_eq!(header, ["cell", "band", "peak_phiPV"]);
    let count = |b: &str| rows.iter().filter(|r| r[1] == b).count();
    assert_eq!([count("1"), count("2"), count("3"), count("4")], [7, 12, 4, 2]);

    let o = hpoed(&["validate", "--source", "hf", "--config", &cfg, "--out", out]);
    assert!(o.status.code().is_some_and(|c| c == 0 || c == 2), "{}", stderr(&o));
    let (header, rows) = read_csv(&dir.join("validate_hf_oed2.csv"));
    assert_eq!(header, ["cell", "band", "snr_data", "mean_kPL", "std_kPL", "noiseless_kPL"]);
    assert_eq!(rows.len(), 25 * 5);
    let mut cells: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    cells.dedup();
    assert_eq!(cells.len(), 25);
}
