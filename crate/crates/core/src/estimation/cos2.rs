//! Dipole axis fit `I(phi) = alpha + beta cos^2(phi)` and the per-emitter
//! split of a polarization sweep.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::model::{self, Detector};
use crate::reconstruction::solve_pair;
use crate::simulator::SweepPoint;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cos2Fit {
    pub alpha: f64,
    pub beta: f64,
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
}

/// Weighted linear least squares in the regressor `cos^2(phi)`.
pub fn fit_cos2(angles_deg: &[f64], rates: &[f64], rate_errs: &[f64]) -> Result<Cos2Fit> {
    if angles_deg.len() != rates.len() || rates.len() != rate_errs.len() {
        return Err(Error::invalid("rates", "angles, rates and errors differ in length"));
    }
    if angles_deg.iter().chain(rates).chain(rate_errs).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("polarization data"));
    }
    if rate_errs.iter().any(|e| *e <= 0.0) {
        return Err(Error::invalid("rate_errs", "must be > 0"));
    }
    let mut distinct: Vec<f64> = angles_deg.iter().map(|a| a.rem_euclid(180.0)).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    if distinct.len() < 3 {
        return Err(Error::invalid("angles_deg", format!("{} distinct angles mod 180, need 3", distinct.len())));
    }

    let mut a = Matrix2::zeros();
    let mut b = Vector2::zeros();
    for ((phi, y), e) in angles_deg.iter().zip(rates).zip(rate_errs) {
        let c = phi.to_radians().cos().powi(2);
        let x = Vector2::new(1.0, c);
        let w = 1.0 / (e * e);
        a += x * x.transpose() * w;
        b += x * (y * w);
    }
    let scale = a[(0, 0)] * a[(1, 1)];
    if a.determinant() <= 1e-12 * scale {
        return Err(Error::Degenerate("cos^2 regressor has no spread".into()));
    }
    let cov = a.try_inverse().ok_or_else(|| Error::Degenerate("singular normal matrix".into()))?;
    let coef = cov * b;
    Ok(Cos2Fit {
        alpha: coef[0],
        beta: coef[1],
        sigma_alpha: cov[(0, 0)].sqrt(),
        sigma_beta: cov[(1, 1)].sqrt(),
    })
}

/// Per-angle rates of the brighter and dimmer emitter at the sweep position,
/// with standard errors, as `(angles, [bright, dim], [bright_err, dim_err])`.
///
/// The roots at each angle are assigned by brightness, so the sweep position
/// should be one where the emitters keep their order over the whole sweep.
#[allow(clippy::type_complexity)]
pub fn split_sweep(sweep: &[SweepPoint], d: &Detector, dwell_s: f64) -> Result<(Vec<f64>, [Vec<f64>; 2], [Vec<f64>; 2])> {
    split_with(sweep, d, dwell_s, None)
}

/// As [`split_sweep`]; with `model` the errors come from the modelled
/// `(bright, dim)` rates at each angle instead of the measured ones, so that
/// a noisy split does not also set its own weight.
#[allow(clippy::type_complexity)]
fn split_with(
    sweep: &[SweepPoint],
    d: &Detector,
    dwell_s: f64,
    model: Option<&[(f64, f64)]>,
) -> Result<(Vec<f64>, [Vec<f64>; 2], [Vec<f64>; 2])> {
    d.validate()?;
    if !(dwell_s > 0.0) {
        return Err(Error::invalid("dwell_s", "must be > 0"));
    }
    let mut angles = Vec::with_capacity(sweep.len());
    let mut rates = [Vec::new(), Vec::new()];
    let mut errs = [Vec::new(), Vec::new()];
    for (k, p) in sweep.iter().enumerate() {
        let (r1, r2) = (p.d1 as f64 / dwell_s, p.d2 as f64 / dwell_s);
        let total = r1 + r2;
        let s1 = (total - d.bg_cps).max(0.0);
        let eta = if r1 > 0.0 && r2 > 0.0 {
            model::eta_2(d, r1, r2)?
        } else {
            crate::simulator::calibrated_eta(d, 2)
        };
        let scale = eta * (1.0 + d.k_bunch) * d.r * d.t * d.capture_frac;
        let floor = d.accidental_floor_from_singles(total, d.bg_cps);
        let c2 = p.coincidences as f64 / dwell_s;
        let p2 = (c2 - floor).max(0.0) / scale;
        let (hi, lo, _) = solve_pair(s1, p2)?;

        let (hi_e, lo_e, c2_e) = match model {
            Some(m) => {
                let (h, l) = (m[k].0.max(0.0), m[k].1.max(0.0));
                (h.max(l), h.min(l), h * l * scale + floor)
            }
            None => (hi, lo, c2),
        };
        let var_s = total / dwell_s;
        let var_p = (c2_e / dwell_s).max(1.0 / (dwell_s * dwell_s)) / (scale * scale);
        let disc = (hi_e - lo_e).max(f64::EPSILON * s1.max(1.0));
        // d(hi)/ds = (1 + s/D)/2, d(hi)/dp = -1/D; lo = s - hi
        let (dh_ds, dh_dp) = (0.5 * (1.0 + s1 / disc), -1.0 / disc);
        let (dl_ds, dl_dp) = (1.0 - dh_ds, -dh_dp);
        angles.push(p.angle_deg);
        rates[0].push(hi);
        rates[1].push(lo);
        errs[0].push((dh_ds * dh_ds * var_s + dh_dp * dh_dp * var_p).sqrt());
        errs[1].push((dl_ds * dl_ds * var_s + dl_dp * dl_dp * var_p).sqrt());
    }
    Ok((angles, rates, errs))
}

/// cos^2 fits for the brighter and dimmer emitter of a two-emitter sweep.
///
/// A first fit uses errors propagated from the measured split; the second
/// reweights with errors evaluated on the first fit's curves.
pub fn fit_axes(sweep: &[SweepPoint], d: &Detector, dwell_s: f64) -> Result<[Cos2Fit; 2]> {
    let fit = |model: Option<&[(f64, f64)]>| -> Result<[Cos2Fit; 2]> {
        let (angles, rates, errs) = split_with(sweep, d, dwell_s, model)?;
        Ok([
            fit_cos2(&angles, &rates[0], &errs[0])?,
            fit_cos2(&angles, &rates[1], &errs[1])?,
        ])
    };
    let first = fit(None)?;
    let curve = |f: &Cos2Fit, deg: f64| f.alpha + f.beta * deg.to_radians().cos().powi(2);
    let model: Vec<(f64, f64)> = sweep
        .iter()
        .map(|p| (curve(&first[0], p.angle_deg), curve(&first[1], p.angle_deg)))
        .collect();
    fit(Some(&model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn angles() -> Vec<f64> {
        (0..=18).map(|k| k as f64 * 10.0).collect()
    }

    #[test]
    fn exact_recovery() {
        let a = angles();
        let y: Vec<f64> = a.iter().map(|p| 37.5 - 21.0 * p.to_radians().cos().powi(2)).collect();
        let f = fit_cos2(&a, &y, &vec![1.0; a.len()]).unwrap();
        assert!((f.alpha - 37.5).abs() < 1e-10 && (f.beta + 21.0).abs() < 1e-10);
    }

    #[test]
    fn constant_data() {
        let a = angles();
        let f = fit_cos2(&a, &vec![4.2; a.len()], &vec![0.1; a.len()]).unwrap();
        assert!((f.alpha - 4.2).abs() < 1e-12 && f.beta.abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_angles() {
        let e = vec![1.0; 3];
        assert!(fit_cos2(&[30.0, 210.0, 390.0], &[1.0, 2.0, 3.0], &e).is_err());
        // three distinct angles, but cos^2 only takes two values
        assert!(fit_cos2(&[30.0, 150.0, 90.0], &[1.0, 1.0, 2.0], &e).is_ok());
        assert!(matches!(fit_cos2(&[60.0, 120.0, 240.0], &[1.0, 1.0, 2.0], &e), Err(Error::InvalidParameter { .. })));
        assert!(fit_cos2(&[0.0, 10.0, 20.0], &[1.0, 1.0, 1.0], &[1.0, 0.0, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn noiseless_exact(alpha in -1e3f64..1e3, beta in -1e3f64..1e3) {
            let a = angles();
            let y: Vec<f64> = a.iter().map(|p| alpha + beta * p.to_radians().cos().powi(2)).collect();
            let f = fit_cos2(&a, &y, &vec![0.5; a.len()]).unwrap();
            prop_assert!((f.alpha - alpha).abs() <= 1e-10 * (1.0 + alpha.abs() + beta.abs()));
            prop_assert!((f.beta - beta).abs() <= 1e-10 * (1.0 + alpha.abs() + beta.abs()));
        }
    }
}
