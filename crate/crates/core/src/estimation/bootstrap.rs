//! Parametric bootstrap of the emitter separation.

use super::{localize_scan, Localization};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::Detector;
use crate::rng::{self, channel};
use crate::simulator::ScanData;

/// Minimum fraction of resamples that must complete for a result.
pub const MIN_SUCCESS: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// Distances of the successful resamples, in resample order.
    pub distances: Vec<f64>,
    /// `(resample index, error message)` of the failed ones.
    pub failures: Vec<(usize, String)>,
}

impl BootstrapResult {
    pub fn mean(&self) -> f64 {
        self.distances.iter().sum::<f64>() / self.distances.len() as f64
    }

    /// Sample standard deviation.
    pub fn std(&self) -> f64 {
        let n = self.distances.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.distances.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }
}

/// Every count redrawn as Poisson with the observed count as its mean.
pub fn resample_scan(sd: &ScanData, seed: u64, resample: usize) -> ScanData {
    let redraw = |g: &Grid<u64>, ch: u64| {
        let mut out = g.clone();
        for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
            let mut r = rng::stream(seed, &[channel::BOOTSTRAP, resample as u64, i as u64, ch]);
            *v = rng::poisson(&mut r, *v as f64);
        }
        out
    };
    ScanData {
        singles_d1: redraw(&sd.singles_d1, channel::SINGLES_D1),
        singles_d2: redraw(&sd.singles_d2, channel::SINGLES_D2),
        coincidences: sd
            .coincidences
            .iter()
            .map(|(m, g)| (*m, redraw(g, channel::COINCIDENCE_BASE + *m as u64)))
            .collect(),
        ..sd.clone()
    }
}

/// Reruns reconstruction, fitting and the distance on `n_resamples`
/// resampled scans. Deterministic in `seed`, whatever the thread count.
pub fn bootstrap_uncertainty(
    sd: &ScanData,
    calib: &Detector,
    n_emitters: usize,
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    if n_resamples < 2 {
        return Err(Error::invalid("n_resamples", "need at least 2"));
    }
    sd.validate()?;
    let run = |k: usize| -> Result<Localization> { localize_scan(&resample_scan(sd, seed, k), calib, n_emitters) };

    #[cfg(feature = "parallel")]
    let outcomes: Vec<Result<Localization>> = {
        use rayon::prelude::*;
        (0..n_resamples).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<Result<Localization>> = (0..n_resamples).map(run).collect();

    let mut out = BootstrapResult {
        distances: Vec::new(),
        failures: Vec::new(),
    };
    for (k, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(loc) => out.distances.push(loc.distance_nm),
            Err(e) => out.failures.push((k, e.to_string())),
        }
    }
    if (out.distances.len() as f64) < MIN_SUCCESS * n_resamples as f64 {
        return Err(Error::Degenerate(format!(
            "bootstrap: {} of {n_resamples} resamples failed (first: {})",
            out.failures.len(),
            out.failures.first().map(|f| f.1.as_str()).unwrap_or("")
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ScanGrid;
    use crate::model::{Emitter, Psf, Scene};
    use crate::simulator::simulate_scan;

    fn scan(seed: u64) -> (Scene, ScanData) {
        let scene = Scene::new(
            vec![
                Emitter::isotropic(-150.0, 0.0, 2e4).unwrap(),
                Emitter::isotropic(150.0, 0.0, 1.2e4).unwrap(),
            ],
            Psf::default(),
            Detector::default(),
            0.0,
        )
        .unwrap();
        let grid = ScanGrid::centered(24, 35.0, 2000.0).unwrap();
        let sd = simulate_scan(&scene, &grid, &[2], seed).unwrap();
        (scene, sd)
    }

    #[test]
    fn two_resamples_two_entries_and_deterministic() {
        let (scene, sd) = scan(3);
        let a = bootstrap_uncertainty(&sd, &scene.detector, 2, 2, 11).unwrap();
        assert_eq!(a.distances.len() + a.failures.len(), 2);
        assert_eq!(a.distances.len(), 2);
        assert_eq!(a, bootstrap_uncertainty(&sd, &scene.detector, 2, 2, 11).unwrap());
        assert!(bootstrap_uncertainty(&sd, &scene.detector, 2, 1, 11).is_err());
    }

    #[test]
    fn centered_on_point_estimate() {
        let (scene, sd) = scan(5);
        let point = localize_scan(&sd, &scene.detector, 2).unwrap();
        let b = bootstrap_uncertainty(&sd, &scene.detector, 2, 30, 1).unwrap();
        assert!(b.std() > 0.0);
        assert!((b.mean() - point.distance_nm).abs() < 3.0 * b.std(), "{} vs {} ± {}", b.mean(), point.distance_nm, b.std());
    }

    #[test]
    fn resampling_keeps_shape_and_zeros() {
        let (_, mut sd) = scan(1);
        sd.singles_d1.as_mut_slice()[0] = 0;
        let r = resample_scan(&sd, 9, 0);
        assert_eq!(r.singles_d1[0], 0);
        assert_eq!(r.grid, sd.grid);
        assert_eq!(r.orders(), sd.orders());
        assert_ne!(r.singles_d2, sd.singles_d2);
    }
}
