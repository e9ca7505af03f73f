use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qsi_core::config::ScenarioConfig;
use qsi_core::format::{self, parse_report};

fn qsi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsi"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn report(path: &Path) -> Vec<(String, f64)> {
    parse_report(&fs::read_to_string(path).unwrap()).unwrap()
}

fn value(r: &[(String, f64)], key: &str) -> f64 {
    r.iter().find(|(k, _)| k == key).unwrap_or_else(|| panic!("no `{key}`")).1
}

const SMALL: &str = "\
seed = 4
psf.sigma_nm = 150
emitter.0.x_nm = -150
emitter.0.y_nm = 0
emitter.0.alpha_cps = 20000
emitter.1.x_nm = 150
emitter.1.y_nm = 0
emitter.1.alpha_cps = 14000
grid.nx = 20
grid.pitch_nm = 40
grid.coincidence_budget = 5000
fit.resamples = 4
";

#[test]
fn simulate_reconstruct_fit_chain() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("small.cfg"), SMALL).unwrap();

    let o = qsi(tmp.path(), &["simulate", "--config", "small.cfg", "--out", "scan"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let scan = tmp.path().join("scan");
    for f in [format::SINGLES_D1, format::SINGLES_D2, "coinc_m2.txt", format::MANIFEST] {
        assert!(scan.join(f).exists(), "{f}");
    }
    // the manifest spells out the defaults that were filled in
    let manifest = fs::read_to_string(scan.join(format::MANIFEST)).unwrap();
    assert!(manifest.contains("detector.r = "));
    assert!(manifest.contains("detector.tw_ns = "));

    let o = qsi(tmp.path(), &["reconstruct", "scan"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(scan.join("image_0.txt").exists() && scan.join("image_1.txt").exists());
    assert!(!scan.join("image_2.txt").exists());

    let o = qsi(tmp.path(), &["fit", "scan"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&scan.join(format::REPORT));
    assert!((value(&r, "distance_nm") - 300.0).abs() < 30.0);
    assert_eq!(value(&r, "bootstrap.resamples"), 4.0);

    let o = qsi(tmp.path(), &["fit", "scan", "--resamples", "0", "--out", "fit0"]);
    assert_eq!(code(&o), 0);
    assert!(report(&tmp.path().join("fit0").join(format::REPORT))
        .iter()
        .all(|(k, _)| !k.starts_with("bootstrap")));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("small.cfg"), SMALL).unwrap();
    for (out, seed) in [("a", "9"), ("b", "9"), ("c", "10")] {
        assert_eq!(code(&qsi(tmp.path(), &["simulate", "--config", "small.cfg", "--out", out, "--seed", seed])), 0);
    }
    let read = |d: &str| fs::read(tmp.path().join(d).join(format::SINGLES_D1)).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    let m = ScenarioConfig::load(&tmp.path().join("a").join(format::MANIFEST)).unwrap();
    assert_eq!(m.seed, 9);
}

#[test]
fn pipeline_is_byte_identical_on_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("small.cfg"), SMALL).unwrap();
    for out in ["p1", "p2"] {
        let o = qsi(tmp.path(), &["pipeline", "--config", "small.cfg", "--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |d: &str, f: &str| fs::read(tmp.path().join(d).join(f)).unwrap();
    for f in [format::REPORT, "image_0.txt", format::FLAGS, format::VARIANCE, format::MANIFEST] {
        assert_eq!(read("p1", f), read("p2", f), "{f}");
    }
    let r = report(&tmp.path().join("p1").join(format::REPORT));
    assert!(value(&r, "bootstrap.distance_std_nm") > 0.0);
}

#[test]
fn bundled_pair_pipeline_lands_in_band() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qsi(tmp.path(), &["pipeline", "--config", "pair366", "--out", "out", "--resamples", "0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&tmp.path().join("out").join(format::REPORT));
    assert!((value(&r, "distance_nm") - 366.1).abs() < 10.0);
}

#[test]
fn axes_from_config_and_from_directory_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qsi(tmp.path(), &["axes", "--config", "axes", "--out", "ax"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let first = fs::read(tmp.path().join("ax").join("axes_report.txt")).unwrap();
    let o = qsi(tmp.path(), &["axes", "ax"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(first, fs::read(tmp.path().join("ax").join("axes_report.txt")).unwrap());
    let r = report(&tmp.path().join("ax").join("axes_report.txt"));
    assert!((value(&r, "pol.0.alpha_cps") - 37500.0).abs() < 3.0 * value(&r, "pol.0.alpha_cps.err"));
}

#[test]
fn g2_reports_and_rereads() {
    let tmp = tempfile::tempdir().unwrap();
    let text = ScenarioConfig::bundled("g2").unwrap().to_text().replace("g2.duration_s = 5000", "g2.duration_s = 300");
    assert!(text.contains("g2.duration_s = 300"));
    fs::write(tmp.path().join("g2.cfg"), text).unwrap();
    let o = qsi(tmp.path(), &["g2", "--config", "g2.cfg", "--out", "g"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&tmp.path().join("g").join("g2_report.txt"));
    assert!((value(&r, "g2.zero") - 0.5).abs() < 0.25);
    assert_eq!(code(&qsi(tmp.path(), &["g2", "g"])), 0);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();

    // validation: missing seed names the field
    fs::write(t.join("noseed.cfg"), SMALL.replace("seed = 4\n", "")).unwrap();
    let o = qsi(t, &["simulate", "--config", "noseed.cfg"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));

    // validation: parse error carries the line
    fs::write(t.join("typo.cfg"), SMALL.replace("psf.sigma_nm", "psf.sigma_mn")).unwrap();
    let o = qsi(t, &["simulate", "--config", "typo.cfg"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("typo.cfg:2"));

    assert_eq!(code(&qsi(t, &["simulate", "--config", "absent.cfg"])), 1);
    assert_eq!(code(&qsi(t, &["frobnicate"])), 1);
    assert_eq!(code(&qsi(t, &["axes"])), 1);
    assert_eq!(code(&qsi(t, &["--help"])), 0);

    // a one-pixel grid is fine
    fs::write(t.join("one.cfg"), SMALL.replace("grid.nx = 20", "grid.nx = 1")).unwrap();
    assert_eq!(code(&qsi(t, &["simulate", "--config", "one.cfg", "--out", "one"])), 0);

    // validation: corrupted grid header
    fs::write(t.join("small.cfg"), SMALL).unwrap();
    assert_eq!(code(&qsi(t, &["simulate", "--config", "small.cfg", "--out", "s"])), 0);
    let p = t.join("s").join(format::SINGLES_D2);
    fs::write(&p, fs::read_to_string(&p).unwrap().replace("# nx = 20", "# nx = 21")).unwrap();
    let o = qsi(t, &["reconstruct", "s"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("mismatch"));

    // validation: asking for more emitters than recorded orders
    assert_eq!(code(&qsi(t, &["simulate", "--config", "small.cfg", "--out", "s2"])), 0);
    assert_eq!(code(&qsi(t, &["reconstruct", "s2", "--emitters", "3"])), 1);

    // non-convergence: a short, noisy histogram the fit cannot settle on
    let text = ScenarioConfig::bundled("g2").unwrap().to_text().replace("g2.duration_s = 5000", "g2.duration_s = 100");
    fs::write(t.join("short.cfg"), text).unwrap();
    let o = qsi(t, &["g2", "--config", "short.cfg", "--seed", "3", "--out", "g"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));

    // runtime: output path blocked by a file
    fs::write(t.join("blocked"), "").unwrap();
    assert_eq!(code(&qsi(t, &["simulate", "--config", "small.cfg", "--out", "blocked"])), 2);
}
