use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

use qsi_core::config::ScenarioConfig;
use qsi_core::estimation::{
    bootstrap_uncertainty, estimate_distance, fit_axes, fit_g2, localize, FitReport, Localization,
};
use qsi_core::format;
use qsi_core::pipeline;
use qsi_core::reconstruction::reconstruct;
use qsi_core::simulator::{simulate_g2, simulate_polarization_sweep, simulate_scan, SweepPoint};
use qsi_core::{Error, Result};

/// Quantum statistical imaging: simulate antibunching scans and resolve
/// emitters closer than the diffraction limit.
#[derive(Parser)]
#[command(name = "qsi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the scan, sweep and g2 histogram a scenario enables.
    Simulate(Scenario),
    /// Split a simulated scan into per-emitter images.
    Reconstruct {
        /// Directory written by `simulate`.
        scan_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Defaults to the emitter count in the scan's manifest.
        #[arg(long)]
        emitters: Option<usize>,
    },
    /// Fit Gaussians to reconstructed images and report the separation.
    Fit {
        /// Directory written by `reconstruct`.
        image_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Bootstrap resamples; needs the scan files in the same directory.
        #[arg(long)]
        resamples: Option<usize>,
    },
    /// Fit dipole axes to a polarization sweep.
    Axes(Source),
    /// Fit a g2 histogram.
    G2(Source),
    /// Simulate, reconstruct, fit and report in one go.
    Pipeline {
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long)]
        emitters: Option<usize>,
        /// Overrides `fit.resamples` from the config.
        #[arg(long)]
        resamples: Option<usize>,
    },
}

#[derive(Args)]
struct Scenario {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    config: PathBuf,
    /// Defaults to the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

/// Either a scenario to simulate from or a directory holding saved data.
#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["dir", "config"])))]
struct Source {
    /// Directory written by `simulate`.
    dir: Option<PathBuf>,
    /// Scenario to simulate instead.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Scenario {
    fn load(&self) -> Result<(ScenarioConfig, PathBuf)> {
        load(&self.config, self.seed, self.out.as_deref())
    }
}

fn load(config: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<(ScenarioConfig, PathBuf)> {
    let mut cfg = ScenarioConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    Ok((cfg, out))
}

fn write_report(dir: &Path, name: &str, report: &FitReport) -> Result<()> {
    let text = format::report_text(report);
    format::write_text(&dir.join(name), &text)?;
    print!("{text}");
    Ok(())
}

fn simulate(s: &Scenario) -> Result<()> {
    let (cfg, out) = s.load()?;
    if cfg.grid.is_none() && cfg.sweep.is_none() && cfg.g2.is_none() {
        return Err(Error::MissingField("grid, sweep or g2 section".into()));
    }
    format::write_text(&out.join(format::MANIFEST), &cfg.to_text())?;
    if let Some(grid) = cfg.grid {
        let sd = simulate_scan(&cfg.scene, &grid, &cfg.orders, cfg.seed)?;
        format::write_scan(&out, &sd, &cfg)?;
    }
    if let Some(sw) = &cfg.sweep {
        let pts = simulate_polarization_sweep(&cfg.scene, sw.x_nm, sw.y_nm, &sw.angles_deg, sw.dwell_s, cfg.seed)?;
        format::write_text(&out.join(format::SWEEP), &format::sweep_text(&pts, sw.dwell_s))?;
    }
    if let Some(g) = &cfg.g2 {
        let h = simulate_g2(&cfg.scene, g.x_nm, g.y_nm, g.duration_s, g.bin_width_ns, cfg.seed)?;
        format::write_text(&out.join(format::G2), &format::g2_text(&h))?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn reconstruct_cmd(scan_dir: &Path, out: Option<&Path>, emitters: Option<usize>) -> Result<()> {
    let (sd, cfg) = format::read_scan(scan_dir)?;
    let n = emitters.unwrap_or_else(|| pipeline::emitters_of(&cfg));
    let images = reconstruct(&sd, &cfg.scene.detector, n)?;
    let out = out.unwrap_or(scan_dir);
    format::write_images(out, &images)?;
    println!("wrote {n} images to {}", out.display());
    Ok(())
}

fn fit_cmd(image_dir: &Path, out: Option<&Path>, resamples: Option<usize>) -> Result<()> {
    let images = format::read_images(image_dir)?;
    if images.images.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "images",
            reason: "a distance needs at least 2 emitter images".into(),
        });
    }
    let fits = localize(&images).map_err(|e| e.in_stage("fit"))?;
    let (distance_nm, distance_err_nm) = estimate_distance(&fits[0], &fits[1]);
    let loc = Localization {
        images,
        fits,
        distance_nm,
        distance_err_nm,
    };

    let has_scan = image_dir.join(format::MANIFEST).exists();
    let boot = match (resamples, has_scan) {
        (Some(0), _) => None,
        (Some(_), false) => {
            return Err(Error::MissingField(format!(
                "{}: bootstrap needs the scan files",
                image_dir.join(format::MANIFEST).display()
            )))
        }
        (r, true) => {
            let (sd, cfg) = format::read_scan(image_dir)?;
            let n = r.unwrap_or(cfg.resamples);
            if n > 0 {
                Some(
                    bootstrap_uncertainty(&sd, &cfg.scene.detector, loc.fits.len(), n, cfg.seed)
                        .map_err(|e| e.in_stage("bootstrap"))?,
                )
            } else {
                None
            }
        }
        (None, false) => None,
    };
    let report = FitReport::from_localization(&loc, boot);
    write_report(out.unwrap_or(image_dir), format::REPORT, &report)
}

fn axes_cmd(src: &Source) -> Result<()> {
    let (points, dwell_s, cfg, out): (Vec<SweepPoint>, f64, ScenarioConfig, PathBuf) = match (&src.dir, &src.config) {
        (Some(dir), _) => {
            let cfg = ScenarioConfig::load(&dir.join(format::MANIFEST))?;
            let path = dir.join(format::SWEEP);
            let (pts, dwell) = format::parse_sweep(&path.to_string_lossy(), &format::read_text(&path)?)?;
            (pts, dwell, cfg, src.out.clone().unwrap_or_else(|| dir.clone()))
        }
        (None, Some(config)) => {
            let (cfg, out) = load(config, src.seed, src.out.as_deref())?;
            let sw = cfg.sweep.clone().ok_or_else(|| Error::MissingField("sweep section".into()))?;
            let pts = simulate_polarization_sweep(&cfg.scene, sw.x_nm, sw.y_nm, &sw.angles_deg, sw.dwell_s, cfg.seed)?;
            format::write_text(&out.join(format::MANIFEST), &cfg.to_text())?;
            format::write_text(&out.join(format::SWEEP), &format::sweep_text(&pts, sw.dwell_s))?;
            (pts, sw.dwell_s, cfg, out)
        }
        (None, None) => unreachable!("clap requires a source"),
    };
    let fits = fit_axes(&points, &cfg.scene.detector, dwell_s)?;
    let report = FitReport {
        pol_params: fits.to_vec(),
        ..FitReport::default()
    };
    write_report(&out, "axes_report.txt", &report)
}

fn g2_cmd(src: &Source) -> Result<()> {
    let (h, out) = match (&src.dir, &src.config) {
        (Some(dir), _) => {
            let path = dir.join(format::G2);
            let h = format::parse_g2(&path.to_string_lossy(), &format::read_text(&path)?)?;
            (h, src.out.clone().unwrap_or_else(|| dir.clone()))
        }
        (None, Some(config)) => {
            let (cfg, out) = load(config, src.seed, src.out.as_deref())?;
            let g = cfg.g2.clone().ok_or_else(|| Error::MissingField("g2 section".into()))?;
            let h = simulate_g2(&cfg.scene, g.x_nm, g.y_nm, g.duration_s, g.bin_width_ns, cfg.seed)?;
            format::write_text(&out.join(format::MANIFEST), &cfg.to_text())?;
            format::write_text(&out.join(format::G2), &format::g2_text(&h))?;
            (h, out)
        }
        (None, None) => unreachable!("clap requires a source"),
    };
    let report = FitReport {
        g2: Some(fit_g2(&h)?),
        ..FitReport::default()
    };
    write_report(&out, "g2_report.txt", &report)
}

fn pipeline_cmd(s: &Scenario, emitters: Option<usize>, resamples: Option<usize>) -> Result<()> {
    let (mut cfg, out) = s.load()?;
    if let Some(r) = resamples {
        cfg.resamples = r;
    }
    let result = pipeline::run(&cfg, emitters)?;
    pipeline::write(&out, &cfg, &result)?;
    print!("{}", format::report_text(&result.report));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(s) => simulate(&s),
        Command::Reconstruct { scan_dir, out, emitters } => reconstruct_cmd(&scan_dir, out.as_deref(), emitters),
        Command::Fit { image_dir, out, resamples } => fit_cmd(&image_dir, out.as_deref(), resamples),
        Command::Axes(src) => axes_cmd(&src),
        Command::G2(src) => g2_cmd(&src),
        Command::Pipeline {
            scenario,
            emitters,
            resamples,
        } => pipeline_cmd(&scenario, emitters, resamples),
    }
}

fn exit_code(e: &Error) -> u8 {
    // a missing input file is a usage mistake, other I/O failures are not
    let missing_input = matches!(e.root(), Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound);
    if e.is_validation() || missing_input {
        1
    } else if matches!(e.root(), Error::NonConvergence { .. }) {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
