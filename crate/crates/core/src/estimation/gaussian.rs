//! 2D Gaussian localization and emitter separation.

use nalgebra::{Matrix2, Matrix6, Vector6};

use super::lm;
use crate::error::{Error, Result};
use crate::grid::{Grid, ScanGrid};
use crate::reconstruction::{poisson_variance, EmitterImages};

/// Parameter order of the fit: `[x0, y0, sigma_x, sigma_y, amplitude, offset]`.
pub const PARAMS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian2DFit {
    pub x0_nm: f64,
    pub y0_nm: f64,
    pub sigma_x_nm: f64,
    pub sigma_y_nm: f64,
    pub amplitude_cps: f64,
    pub offset_cps: f64,
    pub covariance: Matrix6<f64>,
    pub iterations: usize,
}

impl Gaussian2DFit {
    pub fn params(&self) -> [f64; PARAMS] {
        [
            self.x0_nm,
            self.y0_nm,
            self.sigma_x_nm,
            self.sigma_y_nm,
            self.amplitude_cps,
            self.offset_cps,
        ]
    }

    /// Standard errors in parameter order.
    pub fn errors(&self) -> [f64; PARAMS] {
        std::array::from_fn(|k| self.covariance[(k, k)].max(0.0).sqrt())
    }

    pub fn center_covariance(&self) -> Matrix2<f64> {
        self.covariance.fixed_view::<2, 2>(0, 0).into_owned()
    }
}

/// Model value and analytic gradient at `(x, y)`.
pub fn gaussian_model(p: &[f64; PARAMS], x_nm: f64, y_nm: f64) -> (f64, [f64; PARAMS]) {
    let [x0, y0, sx, sy, a, _] = *p;
    let (dx, dy) = (x_nm - x0, y_nm - y0);
    let g = (-0.5 * (dx * dx / (sx * sx) + dy * dy / (sy * sy))).exp();
    let ag = a * g;
    (
        ag + p[5],
        [
            ag * dx / (sx * sx),
            ag * dy / (sy * sy),
            ag * dx * dx / (sx * sx * sx),
            ag * dy * dy / (sy * sy * sy),
            g,
            1.0,
        ],
    )
}

fn initial_guess(points: &[(f64, f64, f64)]) -> Result<Vector6<f64>> {
    let min = points.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
    let max = points.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    let above = points.iter().filter(|p| p.2 > min).count();
    if above < 7 {
        return Err(Error::Degenerate(format!("only {above} pixels above the image floor")));
    }
    let mut values: Vec<f64> = points.iter().map(|p| p.2).collect();
    values.sort_by(f64::total_cmp);
    let q3 = values[(values.len() * 3) / 4];
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for &(x, y, v) in points.iter().filter(|p| p.2 >= q3) {
        let w = v - min;
        sw += w;
        sx += w * x;
        sy += w * y;
    }
    if sw <= 0.0 {
        return Err(Error::Degenerate("flat image".into()));
    }
    let (cx, cy) = (sx / sw, sy / sw);
    let (mut w_all, mut mxx, mut myy) = (0.0, 0.0, 0.0);
    for &(x, y, v) in points {
        let w = v - min;
        w_all += w;
        mxx += w * (x - cx).powi(2);
        myy += w * (y - cy).powi(2);
    }
    let sigma_x = (mxx / w_all).sqrt();
    let sigma_y = (myy / w_all).sqrt();
    if !(sigma_x > 0.0 && sigma_y > 0.0) {
        return Err(Error::Degenerate("image has no spatial extent".into()));
    }
    Ok(Vector6::new(cx, cy, sigma_x, sigma_y, max - min, min))
}

/// Gaussian fit of a rate image weighted by the Poisson variance of the
/// counts behind each rate. Pixels with `mask == false` are left out.
pub fn fit_gaussian2d_masked(image: &Grid<f64>, grid: &ScanGrid, mask: Option<&Grid<bool>>) -> Result<Gaussian2DFit> {
    grid.validate()?;
    image.check_shape(grid.nx, grid.ny)?;
    fit_gaussian2d_weighted(image, grid, &poisson_variance(image, grid.dwell_s), mask)
}

/// Weighted least-squares Gaussian fit of a rate image given the variance of
/// every pixel. Pixels with infinite variance or `mask == false` are left out.
pub fn fit_gaussian2d_weighted(
    image: &Grid<f64>,
    grid: &ScanGrid,
    variance: &Grid<f64>,
    mask: Option<&Grid<bool>>,
) -> Result<Gaussian2DFit> {
    grid.validate()?;
    image.check_shape(grid.nx, grid.ny)?;
    variance.check_shape(grid.nx, grid.ny)?;
    if let Some(m) = mask {
        m.check_shape(grid.nx, grid.ny)?;
    }
    if image.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("image"));
    }
    if variance.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("variance", "must be > 0"));
    }
    let points: Vec<(f64, f64, f64)> = (0..image.len())
        .filter(|&i| mask.is_none_or(|m| m[i]) && variance[i].is_finite())
        .map(|i| {
            let (x, y) = grid.position_of(i);
            (x, y, image[i])
        })
        .collect();
    if points.len() < 7 {
        return Err(Error::Degenerate(format!("{} usable pixels, need at least 7", points.len())));
    }
    let start = initial_guess(&points)?;
    let weights: Vec<f64> = (0..image.len())
        .filter(|&i| mask.is_none_or(|m| m[i]) && variance[i].is_finite())
        .map(|i| 1.0 / variance[i].sqrt())
        .collect();

    let sol = lm::minimize(start, |p| {
        if !(p[2] > 0.0 && p[3] > 0.0) || p.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let arr: [f64; PARAMS] = (*p).into();
        let mut r = Vec::with_capacity(points.len());
        let mut jac = Vec::with_capacity(points.len());
        for (&(x, y, v), &w) in points.iter().zip(&weights) {
            let (f, g) = gaussian_model(&arr, x, y);
            r.push(w * (f - v));
            jac.push(Vector6::from(g) * w);
        }
        Some((r, jac))
    })?;
    let p = sol.params;
    Ok(Gaussian2DFit {
        x0_nm: p[0],
        y0_nm: p[1],
        sigma_x_nm: p[2],
        sigma_y_nm: p[3],
        amplitude_cps: p[4],
        offset_cps: p[5],
        covariance: sol.covariance,
        iterations: sol.iterations,
    })
}

pub fn fit_gaussian2d(image: &Grid<f64>, grid: &ScanGrid) -> Result<Gaussian2DFit> {
    fit_gaussian2d_masked(image, grid, None)
}

/// Largest width ratio tolerated between the axes of one fit, or along one
/// axis between fits.
const MAX_WIDTH_RATIO: f64 = 2.0;

/// Fits every reconstructed image with its propagated variance, skipping
/// pixels below the noise floor.
///
/// All emitters are imaged through the same PSF, so fits whose widths
/// disagree by more than a factor of two mean the labelling collapsed and
/// are reported as degenerate.
pub fn localize(images: &EmitterImages) -> Result<Vec<Gaussian2DFit>> {
    let mask = images.fit_mask();
    let fits = images
        .images
        .iter()
        .map(|img| fit_gaussian2d_weighted(img, &images.grid, &images.variance, Some(&mask)))
        .collect::<Result<Vec<_>>>()?;
    let ratio = |a: f64, b: f64| a.max(b) / a.min(b);
    for (k, f) in fits.iter().enumerate() {
        if ratio(f.sigma_x_nm, f.sigma_y_nm) > MAX_WIDTH_RATIO {
            return Err(Error::Degenerate(format!(
                "image {k} widths {:.0} x {:.0} nm are not one PSF",
                f.sigma_x_nm, f.sigma_y_nm
            )));
        }
    }
    for axis in [|f: &Gaussian2DFit| f.sigma_x_nm, |f: &Gaussian2DFit| f.sigma_y_nm] {
        let (lo, hi) = fits
            .iter()
            .map(axis)
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), w| (lo.min(w), hi.max(w)));
        if ratio(lo, hi) > MAX_WIDTH_RATIO {
            return Err(Error::Degenerate(format!(
                "image widths range over {lo:.0} to {hi:.0} nm, not one PSF"
            )));
        }
    }
    Ok(fits)
}

/// Center-to-center distance with first-order propagated error, treating the
/// two fits as independent.
pub fn estimate_distance(fa: &Gaussian2DFit, fb: &Gaussian2DFit) -> (f64, f64) {
    let (dx, dy) = (fb.x0_nm - fa.x0_nm, fb.y0_nm - fa.y0_nm);
    let d = dx.hypot(dy);
    let cov = fa.center_covariance() + fb.center_covariance();
    let var = if d > 0.0 {
        let (ux, uy) = (dx / d, dy / d);
        ux * ux * cov[(0, 0)] + 2.0 * ux * uy * cov[(0, 1)] + uy * uy * cov[(1, 1)]
    } else {
        // direction undefined; average over it
        0.5 * cov.trace()
    };
    (d, var.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    const TRUTH: [f64; PARAMS] = [12.0, -30.0, 140.0, 165.0, 2.0e4, 150.0];

    fn sampled(p: &[f64; PARAMS], grid: &ScanGrid) -> Grid<f64> {
        Grid::from_fn(grid.nx, grid.ny, |ix, iy| {
            let (x, y) = grid.position(ix, iy);
            gaussian_model(p, x, y).0
        })
    }

    fn fit_with(center: (f64, f64), cov: [[f64; 2]; 2]) -> Gaussian2DFit {
        let mut c = Matrix6::zeros();
        c[(0, 0)] = cov[0][0];
        c[(0, 1)] = cov[0][1];
        c[(1, 0)] = cov[1][0];
        c[(1, 1)] = cov[1][1];
        Gaussian2DFit {
            x0_nm: center.0,
            y0_nm: center.1,
            sigma_x_nm: 150.0,
            sigma_y_nm: 150.0,
            amplitude_cps: 1.0,
            offset_cps: 0.0,
            covariance: c,
            iterations: 0,
        }
    }

    #[test]
    fn noiseless_recovery() {
        let grid = ScanGrid::centered(31, 25.0, 1.0).unwrap();
        let fit = fit_gaussian2d(&sampled(&TRUTH, &grid), &grid).unwrap();
        for (got, want) in fit.params().iter().zip(TRUTH) {
            assert!((got - want).abs() <= 1e-6 * want.abs(), "{got} vs {want}");
        }
    }

    #[test]
    fn shift_by_one_pitch() {
        let grid = ScanGrid::centered(31, 25.0, 1.0).unwrap();
        let img = sampled(&TRUTH, &grid);
        let shifted_grid = ScanGrid { x0_nm: grid.x0_nm + 25.0, ..grid };
        let a = fit_gaussian2d(&img, &grid).unwrap();
        let b = fit_gaussian2d(&img, &shifted_grid).unwrap();
        assert!((b.x0_nm - a.x0_nm - 25.0).abs() < 1e-6);
        assert!((b.y0_nm - a.y0_nm).abs() < 1e-6);
    }

    #[test]
    fn flat_and_tiny_images_are_degenerate() {
        let grid = ScanGrid::centered(10, 25.0, 1.0).unwrap();
        assert!(matches!(fit_gaussian2d(&Grid::filled(10, 10, 5.0), &grid), Err(Error::Degenerate(_))));
        let small = ScanGrid::centered(2, 25.0, 1.0).unwrap();
        assert!(matches!(fit_gaussian2d(&Grid::filled(2, 2, 1.0), &small), Err(Error::Degenerate(_))));
        let mut spike = Grid::filled(10, 10, 0.0);
        spike[55] = 10.0;
        assert!(matches!(fit_gaussian2d(&spike, &grid), Err(Error::Degenerate(_))));
    }

    #[test]
    fn shape_mismatch() {
        let grid = ScanGrid::centered(10, 25.0, 1.0).unwrap();
        assert!(matches!(
            fit_gaussian2d(&Grid::filled(9, 10, 1.0), &grid),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn poisson_center_error_matches_photon_budget() {
        // ~1e5 counts in the spot: center SE ~ sigma / sqrt(N)
        let p = [0.0, 0.0, 150.0, 150.0, 1.0e5 / (2.0 * std::f64::consts::PI * 150.0 * 150.0 / 625.0), 0.0];
        let grid = ScanGrid::centered(40, 25.0, 1.0).unwrap();
        let mean = sampled(&p, &grid);
        let total: f64 = mean.iter().sum();
        let trials = 100;
        let mut sq = 0.0;
        let mut reported = 0.0;
        for seed in 0..trials {
            let img = Grid::from_fn(40, 40, |ix, iy| {
                let i = iy * 40 + ix;
                rng::poisson(&mut rng::stream(seed, &[i as u64]), mean[i]) as f64
            });
            let fit = fit_gaussian2d(&img, &grid).unwrap();
            sq += fit.x0_nm.powi(2);
            reported += fit.errors()[0];
        }
        let empirical = (sq / trials as f64).sqrt();
        let expected = 150.0 / total.sqrt();
        assert!(empirical < 2.0 * expected && empirical > 0.5 * expected, "{empirical} vs {expected}");
        let reported = reported / trials as f64;
        assert!(reported < 2.0 * expected && reported > 0.5 * expected, "{reported} vs {expected}");
    }

    #[test]
    fn cost_never_increases() {
        let grid = ScanGrid::centered(21, 30.0, 1.0).unwrap();
        let img = sampled(&TRUTH, &grid);
        let points: Vec<_> = (0..img.len()).map(|i| (grid.position_of(i), img[i])).collect();
        let sol = lm::minimize(Vector6::new(60.0, 40.0, 90.0, 220.0, 1e4, 0.0), |p| {
            if !(p[2] > 0.0 && p[3] > 0.0) {
                return None;
            }
            let arr: [f64; PARAMS] = (*p).into();
            let (r, j) = points
                .iter()
                .map(|&((x, y), v)| {
                    let (f, g) = gaussian_model(&arr, x, y);
                    (f - v, Vector6::from(g))
                })
                .unzip();
            Some((r, j))
        })
        .unwrap();
        assert!(sol.cost_history.len() > 2);
        assert!(sol.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn distance_examples() {
        let iso = [[4.0, 0.0], [0.0, 4.0]];
        let (d, e) = estimate_distance(&fit_with((0.0, 0.0), iso), &fit_with((366.1, 0.0), iso));
        assert!((d - 366.1).abs() < 1e-12);
        assert!((e - 8f64.sqrt()).abs() < 1e-12);
        assert!((e - 2.83).abs() < 0.005);
        let (d0, _) = estimate_distance(&fit_with((5.0, 5.0), iso), &fit_with((5.0, 5.0), iso));
        assert_eq!(d0, 0.0);
    }

    proptest! {
        #[test]
        fn jacobian_matches_finite_differences(
            x0 in -200.0f64..200.0, y0 in -200.0f64..200.0,
            sx in 50.0f64..300.0, sy in 50.0f64..300.0,
            a in 1.0f64..1e5, b in 0.0f64..1e3,
            x in -400.0f64..400.0, y in -400.0f64..400.0,
        ) {
            let p = [x0, y0, sx, sy, a, b];
            let (_, g) = gaussian_model(&p, x, y);
            let scale = [sx, sy, sx, sy, a, b.max(1.0)];
            for k in 0..PARAMS {
                let h = 1e-6 * scale[k];
                let (mut up, mut dn) = (p, p);
                up[k] += h;
                dn[k] -= h;
                let fd = (gaussian_model(&up, x, y).0 - gaussian_model(&dn, x, y).0) / (2.0 * h);
                // relative to the size of the largest gradient term times its scale
                let norm = (0..PARAMS).map(|j| (g[j] * scale[j]).abs()).fold(0.0, f64::max) / scale[k];
                prop_assert!((fd - g[k]).abs() <= 1e-6 * norm.max(g[k].abs()), "k={} fd={} an={}", k, fd, g[k]);
            }
        }

        #[test]
        fn distance_is_isometry_invariant(
            ax in -500.0f64..500.0, ay in -500.0f64..500.0,
            bx in -500.0f64..500.0, by in -500.0f64..500.0,
            tx in -1e3f64..1e3, ty in -1e3f64..1e3,
        ) {
            let iso = [[4.0, 0.0], [0.0, 4.0]];
            let (d, e) = estimate_distance(&fit_with((ax, ay), iso), &fit_with((bx, by), iso));
            let (dt, et) = estimate_distance(&fit_with((ax + tx, ay + ty), iso), &fit_with((bx + tx, by + ty), iso));
            // exact 90 degree rotation (x, y) -> (-y, x)
            let (dr, er) = estimate_distance(&fit_with((-ay, ax), iso), &fit_with((-by, bx), iso));
            prop_assert_eq!(d, dr);
            prop_assert!((d - dt).abs() <= 1e-12 * (d + tx.abs() + ty.abs() + 1e3));
            prop_assert!((e - et).abs() <= 1e-9 && (e - er).abs() <= 1e-12);
        }
    }
}
