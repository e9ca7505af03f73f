use qsi_core::config::ScenarioConfig;
use qsi_core::format::{self, read_images, read_scan, report_text, write_images, write_scan};
use qsi_core::pipeline;
use qsi_core::reconstruction::reconstruct;
use qsi_core::simulator::simulate_scan;

fn small() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::bundled("scaling").unwrap();
    cfg.resamples = 3;
    cfg
}

#[test]
fn scan_and_images_survive_disk() {
    let cfg = small();
    let grid = cfg.require_grid().unwrap();
    let sd = simulate_scan(&cfg.scene, &grid, &cfg.orders, cfg.seed).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_scan(dir.path(), &sd, &cfg).unwrap();
    let (back, cfg_back) = read_scan(dir.path()).unwrap();
    assert_eq!(back, sd);
    assert_eq!(cfg_back, cfg);

    let images = reconstruct(&sd, &cfg.scene.detector, 2).unwrap();
    write_images(dir.path(), &images).unwrap();
    let read = read_images(dir.path()).unwrap();
    assert_eq!(read.images, images.images);
    assert_eq!(read.flags, images.flags);
    assert_eq!(read.variance, images.variance);
    assert_eq!(read.grid, images.grid);
}

#[test]
fn pipeline_reports_are_reproducible() {
    let cfg = small();
    let a = pipeline::run(&cfg, None).unwrap();
    let b = pipeline::run(&cfg, None).unwrap();
    assert_eq!(report_text(&a.report), report_text(&b.report));
    assert!(a.report.bootstrap.is_some());

    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    pipeline::write(d1.path(), &cfg, &a).unwrap();
    pipeline::write(d2.path(), &cfg, &b).unwrap();
    for f in [format::REPORT, format::MANIFEST, format::SINGLES_D1, "image_1.txt", format::VARIANCE] {
        assert_eq!(
            std::fs::read(d1.path().join(f)).unwrap(),
            std::fs::read(d2.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn stage_errors_name_the_stage() {
    let mut cfg = small();
    cfg.scene.emitters.truncate(1);
    cfg.orders = vec![2];
    let err = pipeline::run(&cfg, Some(2)).unwrap_err();
    assert!(err.to_string().starts_with("simulate:"), "{err}");
    assert!(err.is_validation());
}
