//! Browser bindings for three interactive demos: resolving a sub-diffraction
//! pair, the antibunching dip as the focus moves between two emitters, and
//! the dipole axis fit.
//!
//! Each export wraps a plain Rust function of the same name with a
//! `_native` suffix so the logic can be tested without a JS host.

use wasm_bindgen::prelude::*;

use qsi_core::config::{dwell_for_budget, ScenarioConfig};
use qsi_core::estimation::{fit_axes, fit_g2, localize_scan};
use qsi_core::model::g2_tau;
use qsi_core::simulator::{simulate_g2, simulate_polarization_sweep, simulate_scan};
use qsi_core::{Detector, Emitter, PixelFlag, Psf, ScanGrid, Scene};

const SIGMA_NM: f64 = 150.0;
const GRID_N: usize = 32;
const PITCH_NM: f64 = 30.0;
const BRIGHT_CPS: f64 = 20000.0;

/// Scan of a pair split into two images, row-major `GRID_N x GRID_N`.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Separation {
    singles: Vec<f64>,
    image_a: Vec<f64>,
    image_b: Vec<f64>,
    unresolved: Vec<f64>,
    distance_nm: f64,
    distance_err_nm: f64,
    coincidences: f64,
}

#[wasm_bindgen]
impl Separation {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        GRID_N
    }

    #[wasm_bindgen(getter)]
    pub fn pitch_nm(&self) -> f64 {
        PITCH_NM
    }

    /// Background-free total counts rate, what a classical scan sees.
    pub fn singles(&self) -> Vec<f64> {
        self.singles.clone()
    }

    pub fn image_a(&self) -> Vec<f64> {
        self.image_a.clone()
    }

    pub fn image_b(&self) -> Vec<f64> {
        self.image_b.clone()
    }

    /// 1 where the coincidences were too weak to split the pixel.
    pub fn unresolved(&self) -> Vec<f64> {
        self.unresolved.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn distance_nm(&self) -> f64 {
        self.distance_nm
    }

    #[wasm_bindgen(getter)]
    pub fn distance_err_nm(&self) -> f64 {
        self.distance_err_nm
    }

    #[wasm_bindgen(getter)]
    pub fn coincidences(&self) -> f64 {
        self.coincidences
    }
}

pub fn separate_native(
    separation_nm: f64,
    brightness_ratio: f64,
    coincidence_budget: f64,
    seed: u32,
) -> Result<Separation, String> {
    if !(brightness_ratio > 0.0 && brightness_ratio <= 1.0) {
        return Err("brightness ratio must be in (0, 1]".into());
    }
    let half = separation_nm / 2.0;
    let scene = Scene::new(
        vec![
            Emitter::isotropic(-half, 0.0, BRIGHT_CPS).map_err(|e| e.to_string())?,
            Emitter::isotropic(half, 0.0, BRIGHT_CPS * brightness_ratio).map_err(|e| e.to_string())?,
        ],
        Psf::new(SIGMA_NM).map_err(|e| e.to_string())?,
        Detector {
            bg_cps: 30.0,
            ..Detector::default()
        },
        0.0,
    )
    .map_err(|e| e.to_string())?;
    let mut grid = ScanGrid::centered(GRID_N, PITCH_NM, 1.0).map_err(|e| e.to_string())?;
    grid.dwell_s = dwell_for_budget(&scene, &grid, coincidence_budget).map_err(|e| e.to_string())?;
    let sd = simulate_scan(&scene, &grid, &[2], u64::from(seed)).map_err(|e| e.to_string())?;
    let loc = localize_scan(&sd, &scene.detector, 2).map_err(|e| e.to_string())?;
    let im = &loc.images;
    Ok(Separation {
        singles: im.singles.as_slice().to_vec(),
        image_a: im.images[0].as_slice().to_vec(),
        image_b: im.images[1].as_slice().to_vec(),
        unresolved: im
            .flags
            .iter()
            .map(|f| if *f == PixelFlag::BelowNoiseFloor { 1.0 } else { 0.0 })
            .collect(),
        distance_nm: loc.distance_nm,
        distance_err_nm: loc.distance_err_nm,
        coincidences: sd.total_coincidences(2) as f64,
    })
}

/// Simulates a scan of two emitters `separation_nm` apart, the second
/// `brightness_ratio` times as bright, and splits it into per-emitter images.
#[wasm_bindgen]
pub fn separate(separation_nm: f64, brightness_ratio: f64, coincidence_budget: f64, seed: u32) -> Result<Separation, JsError> {
    separate_native(separation_nm, brightness_ratio, coincidence_budget, seed).map_err(|e| JsError::new(&e))
}

/// Start-stop histogram normalized to its fitted plateau, with the model
/// curve for the same focus position.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Antibunching {
    tau_ns: Vec<f64>,
    measured: Vec<f64>,
    model: Vec<f64>,
    g2_zero: f64,
    g2_zero_err: f64,
}

#[wasm_bindgen]
impl Antibunching {
    pub fn tau_ns(&self) -> Vec<f64> {
        self.tau_ns.clone()
    }

    pub fn measured(&self) -> Vec<f64> {
        self.measured.clone()
    }

    pub fn model(&self) -> Vec<f64> {
        self.model.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn g2_zero(&self) -> f64 {
        self.g2_zero
    }

    #[wasm_bindgen(getter)]
    pub fn g2_zero_err(&self) -> f64 {
        self.g2_zero_err
    }
}

pub fn antibunching_native(focus_x_nm: f64, duration_s: f64, seed: u32) -> Result<Antibunching, String> {
    let cfg = ScenarioConfig::bundled("g2").map_err(|e| e.to_string())?;
    let g = cfg.g2.as_ref().ok_or("bundled g2 scenario has no g2 section")?;
    let h = simulate_g2(&cfg.scene, focus_x_nm, 0.0, duration_s, g.bin_width_ns, u64::from(seed))
        .map_err(|e| e.to_string())?;
    let fit = fit_g2(&h).map_err(|e| e.to_string())?;
    let rates = cfg.scene.emitter_rates_at(focus_x_nm, 0.0);
    let tau_ns: Vec<f64> = h.bins.iter().map(|b| b.0).collect();
    let model = tau_ns
        .iter()
        .map(|&t| g2_tau(&rates, &cfg.scene.detector, t))
        .collect::<qsi_core::Result<Vec<f64>>>()
        .map_err(|e| e.to_string())?;
    Ok(Antibunching {
        measured: h.bins.iter().map(|b| b.1 as f64 / fit.plateau).collect(),
        tau_ns,
        model,
        g2_zero: fit.g2_zero,
        g2_zero_err: fit.g2_zero_err,
    })
}

/// Correlates photons with the focus at `focus_x_nm` on the axis through two
/// equally bright emitters at +-183 nm.
#[wasm_bindgen]
pub fn antibunching(focus_x_nm: f64, duration_s: f64, seed: u32) -> Result<Antibunching, JsError> {
    antibunching_native(focus_x_nm, duration_s, seed).map_err(|e| JsError::new(&e))
}

/// `[alpha_a, err, beta_a, err, alpha_b, err, beta_b, err]` in counts/s.
pub fn axes_native(dwell_s: f64, seed: u32) -> Result<Vec<f64>, String> {
    let cfg = ScenarioConfig::bundled("axes").map_err(|e| e.to_string())?;
    let sw = cfg.sweep.as_ref().ok_or("bundled axes scenario has no sweep section")?;
    let pts = simulate_polarization_sweep(&cfg.scene, sw.x_nm, sw.y_nm, &sw.angles_deg, dwell_s, u64::from(seed))
        .map_err(|e| e.to_string())?;
    let fits = fit_axes(&pts, &cfg.scene.detector, dwell_s).map_err(|e| e.to_string())?;
    Ok(fits
        .iter()
        .flat_map(|f| [f.alpha, f.sigma_alpha, f.beta, f.sigma_beta])
        .collect())
}

/// Fits both dipole axes of the 8.5 nm pair from a simulated pump
/// polarization sweep with `dwell_s` per angle.
#[wasm_bindgen]
pub fn axes(dwell_s: f64, seed: u32) -> Result<Vec<f64>, JsError> {
    axes_native(dwell_s, seed).map_err(|e| JsError::new(&e))
}
