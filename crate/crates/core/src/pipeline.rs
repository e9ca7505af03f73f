//! Simulate, reconstruct, fit and report in one pass.

use std::path::Path;

use crate::config::ScenarioConfig;
use crate::error::Result;
use crate::estimation::{bootstrap_uncertainty, fit_axes, fit_g2, localize_scan, FitReport, Localization};
use crate::format;
use crate::simulator::{simulate_g2, simulate_polarization_sweep, simulate_scan, G2Histogram, ScanData, SweepPoint};

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub scan: Option<ScanData>,
    pub localization: Option<Localization>,
    pub sweep: Option<Vec<SweepPoint>>,
    pub g2: Option<G2Histogram>,
    pub report: FitReport,
}

/// Emitter count used for reconstruction unless overridden.
pub fn emitters_of(cfg: &ScenarioConfig) -> usize {
    cfg.scene.emitters.len()
}

/// Runs every stage the config enables. Errors carry the stage name.
pub fn run(cfg: &ScenarioConfig, n_emitters: Option<usize>) -> Result<PipelineOutput> {
    let n = n_emitters.unwrap_or_else(|| emitters_of(cfg));
    let mut report = FitReport::default();
    let mut out = PipelineOutput {
        scan: None,
        localization: None,
        sweep: None,
        g2: None,
        report: FitReport::default(),
    };

    if let Some(grid) = cfg.grid {
        let sd = simulate_scan(&cfg.scene, &grid, &cfg.orders, cfg.seed).map_err(|e| e.in_stage("simulate"))?;
        if n >= 2 {
            let loc = localize_scan(&sd, &cfg.scene.detector, n)?;
            let boot = if cfg.resamples > 0 {
                Some(
                    bootstrap_uncertainty(&sd, &cfg.scene.detector, n, cfg.resamples, cfg.seed)
                        .map_err(|e| e.in_stage("bootstrap"))?,
                )
            } else {
                None
            };
            report = FitReport::from_localization(&loc, boot);
            out.localization = Some(loc);
        }
        out.scan = Some(sd);
    }

    if let Some(sw) = &cfg.sweep {
        let points = simulate_polarization_sweep(&cfg.scene, sw.x_nm, sw.y_nm, &sw.angles_deg, sw.dwell_s, cfg.seed)
            .map_err(|e| e.in_stage("sweep"))?;
        if cfg.scene.emitters.len() == 2 {
            report.pol_params = fit_axes(&points, &cfg.scene.detector, sw.dwell_s)
                .map_err(|e| e.in_stage("axes"))?
                .to_vec();
        }
        out.sweep = Some(points);
    }

    if let Some(g) = &cfg.g2 {
        let h = simulate_g2(&cfg.scene, g.x_nm, g.y_nm, g.duration_s, g.bin_width_ns, cfg.seed)
            .map_err(|e| e.in_stage("g2"))?;
        report.g2 = Some(fit_g2(&h).map_err(|e| e.in_stage("g2 fit"))?);
        out.g2 = Some(h);
    }

    out.report = report;
    Ok(out)
}

/// Writes every intermediate and the report under `dir`.
pub fn write(dir: &Path, cfg: &ScenarioConfig, out: &PipelineOutput) -> Result<()> {
    format::write_text(&dir.join(format::MANIFEST), &cfg.to_text())?;
    if let Some(sd) = &out.scan {
        format::write_scan(dir, sd, cfg)?;
    }
    if let Some(loc) = &out.localization {
        format::write_images(dir, &loc.images)?;
    }
    if let (Some(points), Some(sw)) = (&out.sweep, &cfg.sweep) {
        format::write_text(&dir.join(format::SWEEP), &format::sweep_text(points, sw.dwell_s))?;
    }
    if let Some(h) = &out.g2 {
        format::write_text(&dir.join(format::G2), &format::g2_text(h))?;
    }
    format::write_text(&dir.join(format::REPORT), &format::report_text(&out.report))
}
