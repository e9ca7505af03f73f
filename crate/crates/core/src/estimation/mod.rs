//! Fits on reconstructed images and raw histograms.

pub mod bootstrap;
pub mod cos2;
pub mod g2fit;
pub mod gaussian;
mod lm;

pub use bootstrap::{bootstrap_uncertainty, BootstrapResult};
pub use cos2::{fit_axes, fit_cos2, Cos2Fit};
pub use g2fit::{fit_g2, G2Fit};
pub use gaussian::{estimate_distance, fit_gaussian2d, fit_gaussian2d_masked, localize, Gaussian2DFit};

use crate::error::{Error, Result};
use crate::model::Detector;
use crate::reconstruction::{reconstruct, EmitterImages};
use crate::simulator::ScanData;

/// Reconstruction plus per-image fits and the separation of labels 0 and 1.
#[derive(Debug, Clone)]
pub struct Localization {
    pub images: EmitterImages,
    pub fits: Vec<Gaussian2DFit>,
    pub distance_nm: f64,
    pub distance_err_nm: f64,
}

pub fn localize_scan(sd: &ScanData, calib: &Detector, n_emitters: usize) -> Result<Localization> {
    if n_emitters < 2 {
        return Err(Error::invalid("n_emitters", "a distance needs at least 2 emitters"));
    }
    let images = reconstruct(sd, calib, n_emitters).map_err(|e| e.in_stage("reconstruct"))?;
    let fits = localize(&images).map_err(|e| e.in_stage("fit"))?;
    let (distance_nm, distance_err_nm) = estimate_distance(&fits[0], &fits[1]);
    Ok(Localization {
        images,
        fits,
        distance_nm,
        distance_err_nm,
    })
}

/// Everything the fit stage reports.
#[derive(Debug, Clone, Default)]
pub struct FitReport {
    pub fits: Vec<Gaussian2DFit>,
    pub distance_nm: f64,
    /// The larger of the propagated and bootstrap errors.
    pub distance_err_nm: f64,
    pub distance_cov_err_nm: f64,
    pub bootstrap: Option<BootstrapResult>,
    pub pol_params: Vec<Cos2Fit>,
    pub g2: Option<G2Fit>,
}

impl FitReport {
    pub fn from_localization(loc: &Localization, bootstrap: Option<BootstrapResult>) -> Self {
        let boot_std = bootstrap.as_ref().map(|b| b.std()).unwrap_or(0.0);
        FitReport {
            fits: loc.fits.clone(),
            distance_nm: loc.distance_nm,
            distance_err_nm: loc.distance_err_nm.max(boot_std),
            distance_cov_err_nm: loc.distance_err_nm,
            bootstrap,
            pol_params: Vec::new(),
            g2: None,
        }
    }
}
