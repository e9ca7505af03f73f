//! Emitters, optics and the closed-form (noiseless) count-rate expectations.
//!
//! Every rate here is an expectation value: the simulator samples around it
//! and the reconstruction inverts it.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// A single-photon emitter with a pump-polarization dependent brightness.
///
/// The detected rate at the focus is `alpha + beta * cos^2(phi)` for pump
/// angle `phi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emitter {
    pub x_nm: f64,
    pub y_nm: f64,
    pub alpha_cps: f64,
    pub beta_cps: f64,
}

impl Emitter {
    pub fn new(x_nm: f64, y_nm: f64, alpha_cps: f64, beta_cps: f64) -> Result<Self> {
        let e = Emitter {
            x_nm,
            y_nm,
            alpha_cps,
            beta_cps,
        };
        e.validate()?;
        Ok(e)
    }

    /// Unpolarized emitter of fixed brightness.
    pub fn isotropic(x_nm: f64, y_nm: f64, rate_cps: f64) -> Result<Self> {
        Self::new(x_nm, y_nm, rate_cps, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_nm, self.y_nm, self.alpha_cps, self.beta_cps]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("emitter parameters"));
        }
        if self.alpha_cps < 0.0 {
            return Err(Error::invalid("alpha_cps", "must be >= 0"));
        }
        if self.alpha_cps + self.beta_cps < 0.0 {
            return Err(Error::invalid(
                "beta_cps",
                "alpha + beta must be >= 0 so the rate is nonnegative at every angle",
            ));
        }
        Ok(())
    }
}

/// Isotropic Gaussian confocal point-spread function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Psf {
    pub sigma_nm: f64,
}

impl Psf {
    pub fn new(sigma_nm: f64) -> Result<Self> {
        if !(sigma_nm > 0.0 && sigma_nm.is_finite()) {
            return Err(Error::invalid("sigma_nm", "must be > 0"));
        }
        Ok(Psf { sigma_nm })
    }

    /// Relative response at offset `(dx, dy)` from the emitter; 1 at the peak.
    pub fn weight(&self, dx_nm: f64, dy_nm: f64) -> f64 {
        let s2 = self.sigma_nm * self.sigma_nm;
        (-(dx_nm * dx_nm + dy_nm * dy_nm) / (2.0 * s2)).exp()
    }
}

impl Default for Psf {
    fn default() -> Self {
        Psf { sigma_nm: 150.0 }
    }
}

/// Beam splitter, coincidence electronics and background of the HBT setup.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    /// Reflectivity, fraction of light sent to D2.
    pub r: f64,
    /// Transmissivity, fraction of light sent to D1.
    pub t: f64,
    pub tw_ns: f64,
    pub k_bunch: f64,
    pub tau_a_ns: f64,
    pub capture_frac: f64,
    pub bg_cps: f64,
    /// Detection constants for orders >= 3, in s^(m-1). Missing orders use
    /// [`Detector::eta_m`]'s default.
    pub eta_higher: BTreeMap<usize, f64>,
}

impl Default for Detector {
    fn default() -> Self {
        Detector {
            r: 0.54,
            t: 0.46,
            tw_ns: 2.0,
            k_bunch: 0.0,
            tau_a_ns: 10.0,
            capture_frac: 1.0,
            bg_cps: 0.0,
            eta_higher: BTreeMap::new(),
        }
    }
}

impl Detector {
    pub fn validate(&self) -> Result<()> {
        let scalars = [
            self.r,
            self.t,
            self.tw_ns,
            self.k_bunch,
            self.tau_a_ns,
            self.capture_frac,
            self.bg_cps,
        ];
        if !scalars.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("detector parameters"));
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(Error::invalid("r", "must lie in (0, 1)"));
        }
        if !(self.t > 0.0 && self.t < 1.0) {
            return Err(Error::invalid("t", "must lie in (0, 1)"));
        }
        if (self.r + self.t - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("r/t", "r + t must equal 1"));
        }
        if self.tw_ns <= 0.0 {
            return Err(Error::invalid("tw_ns", "must be > 0"));
        }
        if self.tau_a_ns <= 0.0 {
            return Err(Error::invalid("tau_a_ns", "must be > 0"));
        }
        if !(self.capture_frac > 0.0 && self.capture_frac <= 1.0) {
            return Err(Error::invalid("capture_frac", "must lie in (0, 1]"));
        }
        if self.k_bunch < 0.0 {
            return Err(Error::invalid("k_bunch", "must be >= 0"));
        }
        if self.bg_cps < 0.0 {
            return Err(Error::invalid("bg_cps", "must be >= 0"));
        }
        for (&m, &eta) in &self.eta_higher {
            if m < 3 {
                return Err(Error::invalid("eta", "explicit constants are only accepted for orders >= 3"));
            }
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::invalid("eta", format!("eta_{m} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn tw_s(&self) -> f64 {
        self.tw_ns * 1e-9
    }

    /// Detection constant for order `m >= 3`: the configured value, or
    /// `(2 t_w)^(m-1)` when none was given.
    pub fn eta_m(&self, m: usize) -> f64 {
        self.eta_higher
            .get(&m)
            .copied()
            .unwrap_or_else(|| (2.0 * self.tw_s()).powi(m as i32 - 1))
    }

    /// Uncorrelated coincidences that involve at least one background photon,
    /// `2 t_w R T (total^2 - emitters^2)`, for a pixel with the given total
    /// singles rate and background-free emitter rate.
    pub fn accidental_floor(&self, total_cps: f64, emitter_cps: f64) -> f64 {
        let excess = total_cps * total_cps - emitter_cps * emitter_cps;
        (2.0 * self.tw_s() * self.r * self.t * excess).max(0.0)
    }

    /// Accidental floor expressed through the measured singles and a known
    /// background rate.
    pub fn accidental_floor_from_singles(&self, total_cps: f64, bg_cps: f64) -> f64 {
        let emitters = (total_cps - bg_cps).max(0.0);
        self.accidental_floor(total_cps, emitters)
    }
}

/// Emitters plus the optics and electronics that observe them.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub emitters: Vec<Emitter>,
    pub psf: Psf,
    pub detector: Detector,
    pub pump_angle_deg: f64,
}

impl Scene {
    pub fn new(emitters: Vec<Emitter>, psf: Psf, detector: Detector, pump_angle_deg: f64) -> Result<Self> {
        let s = Scene {
            emitters,
            psf,
            detector,
            pump_angle_deg,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.emitters.is_empty() {
            return Err(Error::invalid("emitters", "scene needs at least one emitter"));
        }
        for e in &self.emitters {
            e.validate()?;
        }
        Psf::new(self.psf.sigma_nm)?;
        self.detector.validate()?;
        if !self.pump_angle_deg.is_finite() {
            return Err(Error::NonFinite("pump_angle_deg"));
        }
        Ok(())
    }

    pub fn with_pump_angle(&self, pump_angle_deg: f64) -> Scene {
        Scene {
            pump_angle_deg,
            ..self.clone()
        }
    }

    /// Per-emitter background-free rates seen with the focus at `(x, y)`.
    pub fn emitter_rates_at(&self, x_nm: f64, y_nm: f64) -> Vec<f64> {
        self.emitters
            .iter()
            .map(|e| psf_rate(e, self.pump_angle_deg, &self.psf, x_nm, y_nm))
            .collect()
    }
}

/// Detected rate of `e` at the focus for pump angle `phi_deg`.
pub fn emitter_rate(e: &Emitter, phi_deg: f64) -> f64 {
    let c = phi_deg.to_radians().cos();
    (e.alpha_cps + e.beta_cps * c * c).max(0.0)
}

/// Rate of `e` with the focus at `(x, y)`.
pub fn psf_rate(e: &Emitter, phi_deg: f64, psf: &Psf, x_nm: f64, y_nm: f64) -> f64 {
    emitter_rate(e, phi_deg) * psf.weight(x_nm - e.x_nm, y_nm - e.y_nm)
}

/// Total singles rate (both detectors, background included) at `(x, y)`.
pub fn expected_singles(s: &Scene, x_nm: f64, y_nm: f64) -> f64 {
    let emitters: f64 = s.emitter_rates_at(x_nm, y_nm).iter().sum();
    s.detector.bg_cps + emitters
}

/// Two-photon detection constant of the start-stop scheme, in seconds,
/// from the measured D1 and D2 singles rates.
pub fn eta_2(d: &Detector, r1_cps: f64, r2_cps: f64) -> Result<f64> {
    if !(r1_cps > 0.0 && r2_cps > 0.0) {
        return Err(Error::invalid("r1/r2", "calibration needs positive singles rates"));
    }
    let sum = r1_cps + r2_cps;
    Ok(2.0 * d.tw_s() * r1_cps * r2_cps / (d.r * d.t * sum * sum))
}

/// Elementary symmetric polynomials `e_0..=e_n` of `values`.
///
/// Expands `prod(1 + v_i z)` one factor at a time, which only ever adds
/// products of the inputs and so is exact-to-rounding for nonnegative data.
pub fn elementary_symmetric(values: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; values.len() + 1];
    e[0] = 1.0;
    for (i, &v) in values.iter().enumerate() {
        for k in (1..=i + 1).rev() {
            e[k] += v * e[k - 1];
        }
    }
    e
}

/// Expected rate of `m`-photon coincidences at `(x, y)`.
///
/// `m = 2` carries the `(1 + K) R T` beam-splitter factor; higher orders use
/// `eta_m` alone. `m = 1` gives the background-free singles.
pub fn expected_coincidences_m(s: &Scene, m: usize, eta_m: f64, x_nm: f64, y_nm: f64) -> Result<f64> {
    let n = s.emitters.len();
    if m == 0 || m > n {
        return Err(Error::OrderOutOfRange { order: m, max: n });
    }
    let rates = s.emitter_rates_at(x_nm, y_nm);
    let e = elementary_symmetric(&rates);
    let d = &s.detector;
    Ok(match m {
        1 => e[1],
        2 => eta_m * (1.0 + d.k_bunch) * d.r * d.t * e[2] * d.capture_frac,
        _ => eta_m * e[m] * d.capture_frac,
    })
}

/// Normalized second-order correlation of independent antibunched emitters
/// with the given rates, at delay `tau_ns`.
pub fn g2_tau(rates: &[f64], d: &Detector, tau_ns: f64) -> Result<f64> {
    if rates.iter().any(|r| *r < 0.0 || !r.is_finite()) {
        return Err(Error::invalid("rates", "must be finite and >= 0"));
    }
    let sum: f64 = rates.iter().sum();
    if sum <= 0.0 {
        return Err(Error::invalid("rates", "at least one rate must be > 0"));
    }
    let sum_sq: f64 = rates.iter().map(|r| r * r).sum();
    let depth = sum_sq / (sum * sum);
    Ok(1.0 - depth * (-tau_ns.abs() / d.tau_a_ns).exp())
}
