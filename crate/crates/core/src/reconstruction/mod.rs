//! Per-emitter images from singles and coincidence moment images.
//!
//! At each pixel the background-subtracted singles give `e1` of the emitter
//! rates and the calibrated m-photon coincidences give `e_m`; the rates are
//! the roots of the polynomial with those coefficients. Roots come out
//! unordered, so a second, sequential pass assigns them to emitters by
//! continuity across the grid.

use crate::error::{Error, Result};
use crate::grid::{Grid, ScanGrid};
use crate::model::{self, Detector};
use crate::roots::roots_from_symmetric;
use crate::simulator::{calibrated_eta, ScanData};

mod labels;

use labels::{assign_labels, min_gap, nearest_labelled, Weights};

/// Per-pixel outcome of the inversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PixelFlag {
    Ok,
    /// Noise made the moments inconsistent with real nonnegative roots; the
    /// roots were projected and `e1` preserved.
    ClampedDiscriminant,
    /// Coincidences indistinguishable from accidentals; rates were split in
    /// the proportions of the nearest solved pixel.
    BelowNoiseFloor,
}

impl PixelFlag {
    pub fn code(self) -> u8 {
        match self {
            PixelFlag::Ok => 0,
            PixelFlag::ClampedDiscriminant => 1,
            PixelFlag::BelowNoiseFloor => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(PixelFlag::Ok),
            1 => Some(PixelFlag::ClampedDiscriminant),
            2 => Some(PixelFlag::BelowNoiseFloor),
            _ => None,
        }
    }
}

/// Reconstructed per-emitter rate images.
#[derive(Debug, Clone, PartialEq)]
pub struct EmitterImages {
    pub grid: ScanGrid,
    pub images: Vec<Grid<f64>>,
    pub flags: Grid<PixelFlag>,
    /// Background-subtracted singles the images were split from.
    pub singles: Grid<f64>,
    /// Variance (cps^2) of each recovered rate, shared by all labels.
    /// Infinite where a pixel carries no information.
    pub variance: Grid<f64>,
}

impl EmitterImages {
    /// Pixels usable for fitting (everything not below the noise floor).
    pub fn fit_mask(&self) -> Grid<bool> {
        self.flags.map(|f| *f != PixelFlag::BelowNoiseFloor)
    }

    pub fn count(&self, flag: PixelFlag) -> usize {
        self.flags.iter().filter(|f| **f == flag).count()
    }
}

/// Rate-domain (counts/s) version of a scan. Noiseless expectation grids can
/// be fed in directly.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentImages {
    pub grid: ScanGrid,
    pub singles_d1: Grid<f64>,
    pub singles_d2: Grid<f64>,
    pub coincidences: Vec<(usize, Grid<f64>)>,
}

impl MomentImages {
    pub fn from_scan(sd: &ScanData) -> Self {
        let dwell = sd.grid.dwell_s;
        let rate = |g: &Grid<u64>| g.map(|&c| c as f64 / dwell);
        MomentImages {
            grid: sd.grid,
            singles_d1: rate(&sd.singles_d1),
            singles_d2: rate(&sd.singles_d2),
            coincidences: sd.coincidences.iter().map(|(m, g)| (*m, rate(g))).collect(),
        }
    }

    pub fn coincidence(&self, m: usize) -> Option<&Grid<f64>> {
        self.coincidences.iter().find(|(o, _)| *o == m).map(|(_, g)| g)
    }

    fn validate(&self) -> Result<()> {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        self.singles_d1.check_shape(nx, ny)?;
        self.singles_d2.check_shape(nx, ny)?;
        for (_, g) in &self.coincidences {
            g.check_shape(nx, ny)?;
        }
        Ok(())
    }

    fn total_singles(&self) -> Grid<f64> {
        Grid::from_fn(self.grid.nx, self.grid.ny, |ix, iy| {
            self.singles_d1.get(ix, iy) + self.singles_d2.get(ix, iy)
        })
    }
}

/// Background rate estimate from the dimmest tenth of the scan.
///
/// Pixels are ranked by one detector and the rate is read from the other,
/// then the roles are swapped and the two estimates averaged. Ranking and
/// measuring with the same counts would bias the estimate low by the
/// selection itself.
pub fn estimate_background(d1_cps: &Grid<f64>, d2_cps: &Grid<f64>, d: &Detector) -> f64 {
    let n = d1_cps.len();
    if n == 0 {
        return 0.0;
    }
    let keep = n.div_ceil(10);
    let cross = |rank: &Grid<f64>, measure: &Grid<f64>, frac: f64| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| rank[a].total_cmp(&rank[b]).then(a.cmp(&b)));
        idx[..keep].iter().map(|&i| measure[i]).sum::<f64>() / keep as f64 / frac
    };
    0.5 * (cross(d1_cps, d2_cps, d.r) + cross(d2_cps, d1_cps, d.t))
}

/// Background-subtracted total singles rate, clamped at zero. With no
/// background given it is estimated with [`estimate_background`].
pub fn subtract_background(sd: &ScanData, bg_cps: Option<f64>) -> Grid<f64> {
    let m = MomentImages::from_scan(sd);
    let bg = bg_cps.unwrap_or_else(|| estimate_background(&m.singles_d1, &m.singles_d2, &sd.detector));
    m.total_singles().map(|&r| (r - bg).max(0.0))
}

/// Splits a total `s1` with pair product `p2` into `(larger, smaller)`.
pub fn solve_pair(s1: f64, p2: f64) -> Result<(f64, f64, PixelFlag)> {
    if !(s1.is_finite() && p2.is_finite()) {
        return Err(Error::NonFinite("solve_pair input"));
    }
    if s1 < 0.0 || p2 < 0.0 {
        return Err(Error::invalid("s1/p2", "must be >= 0"));
    }
    let disc = s1 * s1 - 4.0 * p2;
    if disc < 0.0 {
        return Ok((s1 / 2.0, s1 / 2.0, PixelFlag::ClampedDiscriminant));
    }
    let hi = 0.5 * (s1 + disc.sqrt());
    // p2 / hi avoids cancellation when the smaller root is tiny
    let lo = if hi > 0.0 { p2 / hi } else { 0.0 };
    Ok((hi, lo, PixelFlag::Ok))
}

/// Nonnegative real roots (descending) of the monic polynomial whose
/// elementary symmetric values are `e = [e1, ..., eN]`.
///
/// Complex pairs are replaced by their shared real part; negative roots are
/// set to zero and the deficit taken from the largest root so `e1` stays
/// fixed. Either repair sets [`PixelFlag::ClampedDiscriminant`].
pub fn solve_symmetric(e: &[f64]) -> Result<(Vec<f64>, PixelFlag)> {
    if e.is_empty() {
        return Err(Error::invalid("e", "need at least e1"));
    }
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("symmetric values"));
    }
    if e.len() == 1 {
        return Ok((vec![e[0].max(0.0)], if e[0] < 0.0 { PixelFlag::ClampedDiscriminant } else { PixelFlag::Ok }));
    }
    let raw = roots_from_symmetric(e);
    let scale = raw.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
    let mut flag = PixelFlag::Ok;
    let mut roots: Vec<f64> = raw
        .iter()
        .map(|c| {
            if c.im.abs() > 1e-7 * scale {
                flag = PixelFlag::ClampedDiscriminant;
            }
            c.re
        })
        .collect();
    roots.sort_by(|a, b| b.total_cmp(a));
    let deficit: f64 = roots.iter().filter(|r| **r < 0.0).sum();
    if deficit < 0.0 {
        flag = PixelFlag::ClampedDiscriminant;
        for r in roots.iter_mut() {
            if *r < 0.0 {
                *r = 0.0;
            }
        }
        roots[0] += deficit;
        if roots[0] < 0.0 {
            roots.iter_mut().for_each(|r| *r = 0.0);
        }
        roots.sort_by(|a, b| b.total_cmp(a));
    }
    Ok((roots, flag))
}

/// Inverts a counted scan with the background rate from `calib`.
pub fn reconstruct(sd: &ScanData, calib: &Detector, n_emitters: usize) -> Result<EmitterImages> {
    sd.validate()?;
    reconstruct_moments(&MomentImages::from_scan(sd), calib, n_emitters, Some(calib.bg_cps))
}

/// Inverts rate-domain moment images into `n_emitters` labelled images.
pub fn reconstruct_moments(
    m: &MomentImages,
    calib: &Detector,
    n_emitters: usize,
    bg_cps: Option<f64>,
) -> Result<EmitterImages> {
    calib.validate()?;
    m.grid.validate()?;
    m.validate()?;
    if n_emitters == 0 {
        return Err(Error::invalid("n_emitters", "must be >= 1"));
    }
    let bg = bg_cps.unwrap_or_else(|| estimate_background(&m.singles_d1, &m.singles_d2, calib));
    let totals = m.total_singles();
    let singles = totals.map(|&r| (r - bg).max(0.0));
    let (nx, ny) = (m.grid.nx, m.grid.ny);

    if n_emitters == 1 {
        return Ok(EmitterImages {
            grid: m.grid,
            images: vec![singles.clone()],
            flags: Grid::filled(nx, ny, PixelFlag::Ok),
            variance: poisson_variance(&totals, m.grid.dwell_s),
            singles,
        });
    }

    let coinc: Vec<&Grid<f64>> = (2..=n_emitters)
        .map(|order| m.coincidence(order).ok_or(Error::MissingOrder(order)))
        .collect::<Result<_>>()?;

    let r1: f64 = m.singles_d1.iter().sum();
    let r2: f64 = m.singles_d2.iter().sum();
    let eta2 = if r1 > 0.0 && r2 > 0.0 {
        model::eta_2(calib, r1, r2)?
    } else {
        calibrated_eta(calib, 2)
    };
    let etas: Vec<f64> = (2..=n_emitters)
        .map(|order| if order == 2 { eta2 } else { calib.eta_m(order) })
        .collect();
    if etas.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::invalid("eta", "detection constants must be > 0"));
    }
    let pair_scale = etas[0] * (1.0 + calib.k_bunch) * calib.r * calib.t * calib.capture_frac;

    // Poisson spread of a pair-product estimate, for weighting root gaps
    let dwell = m.grid.dwell_s;
    let pair_sd = |c2: f64| (c2 * dwell).max(1.0).sqrt() / dwell / pair_scale;

    let solve = |i: usize| -> Result<(Option<Vec<f64>>, PixelFlag, Weights)> {
        let s1 = singles[i];
        let floor = calib.accidental_floor_from_singles(totals[i], bg);
        let c2 = coinc[0][i];
        if c2 <= 3.0 * floor {
            return Ok((None, PixelFlag::BelowNoiseFloor, Weights::default()));
        }
        let p2 = (c2 - floor).max(0.0) / pair_scale;
        let (roots, flag) = if n_emitters == 2 {
            let (hi, lo, flag) = solve_pair(s1, p2)?;
            (vec![hi, lo], flag)
        } else {
            let mut e = Vec::with_capacity(n_emitters);
            e.push(s1);
            e.push(p2);
            for k in 1..coinc.len() {
                e.push(coinc[k][i].max(0.0) / (etas[k] * calib.capture_frac));
            }
            solve_symmetric(&e)?
        };
        // precision of the pair product, and of the log ratio across the
        // closest pair of roots
        let (k, gap) = roots
            .windows(2)
            .map(|w| w[0] - w[1])
            .enumerate()
            .fold((0, f64::INFINITY), |b, (k, g)| if g < b.1 { (k, g) } else { b });
        let inv = 1.0 / roots[k] + 1.0 / roots[k + 1];
        let weight = if gap > 0.0 && inv.is_finite() {
            let sd = pair_sd(c2);
            Weights {
                counts: (p2 / sd).powi(2),
                ratio: (gap / (sd * inv)).powi(2),
            }
        } else {
            Weights::default()
        };
        Ok((Some(roots), flag, weight))
    };

    #[cfg(feature = "parallel")]
    let solved: Vec<(Option<Vec<f64>>, PixelFlag, Weights)> = {
        use rayon::prelude::*;
        (0..nx * ny).into_par_iter().map(solve).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let solved: Vec<(Option<Vec<f64>>, PixelFlag, Weights)> = (0..nx * ny).map(solve).collect::<Result<_>>()?;

    let flags = Grid::from_vec(nx, ny, solved.iter().map(|s| s.1).collect())?;
    let weights: Vec<Weights> = solved.iter().map(|s| s.2).collect();
    let roots: Vec<Option<Vec<f64>>> = solved.into_iter().map(|s| s.0).collect();
    let (labelled, shares) = assign_labels(nx, ny, &roots, &weights, n_emitters);
    let images = fill_images(nx, ny, &labelled, &singles, n_emitters);

    // coincidence noise on the pair product, carried through the smooth
    // split into the closest pair of roots, plus the singles noise
    let variance = Grid::from_vec(
        nx,
        ny,
        (0..nx * ny)
            .map(|i| {
                let Some(share) = &shares[i] else { return f64::INFINITY };
                let rates: Vec<f64> = share.iter().map(|f| f * singles[i]).collect();
                let floor = calib.accidental_floor_from_singles(totals[i], bg);
                let c2_counts = (e2_of(&rates) * pair_scale + floor) * dwell;
                let var_p = c2_counts.max(1.0) / (dwell * pair_scale).powi(2);
                let gap = min_gap(&rates);
                let singles_var = totals[i].max(1.0 / dwell) / dwell;
                if gap > 0.0 {
                    var_p / (gap * gap) + singles_var
                } else {
                    f64::INFINITY
                }
            })
            .collect(),
    )?;

    Ok(EmitterImages {
        grid: m.grid,
        images,
        flags,
        singles,
        variance,
    })
}

/// Second elementary symmetric polynomial.
fn e2_of(r: &[f64]) -> f64 {
    let s: f64 = r.iter().sum();
    let sq: f64 = r.iter().map(|x| x * x).sum();
    0.5 * (s * s - sq)
}

/// Variance of rates estimated from counts over `dwell`, at least one count.
pub(crate) fn poisson_variance(rates: &Grid<f64>, dwell: f64) -> Grid<f64> {
    rates.map(|&r| (r * dwell).max(1.0) / (dwell * dwell))
}

/// Writes labelled roots into images; unsolved pixels split their singles in
/// the proportions of the nearest labelled pixel.
fn fill_images(nx: usize, ny: usize, labelled: &[Option<Vec<f64>>], singles: &Grid<f64>, n: usize) -> Vec<Grid<f64>> {
    let mut images = vec![Grid::filled(nx, ny, 0.0); n];
    for i in 0..labelled.len() {
        let values: Vec<f64> = match &labelled[i] {
            Some(v) => v.clone(),
            None => {
                let fractions = match nearest_labelled(nx, i, labelled) {
                    Some(j) => {
                        let v = labelled[j].as_ref().unwrap();
                        let sum: f64 = v.iter().sum();
                        if sum > 0.0 {
                            v.iter().map(|x| x / sum).collect()
                        } else {
                            vec![1.0 / n as f64; n]
                        }
                    }
                    None => {
                        let mut f = vec![0.0; n];
                        f[0] = 1.0;
                        f
                    }
                };
                fractions.iter().map(|f| f * singles[i]).collect()
            }
        };
        for k in 0..n {
            images[k][i] = values[k];
        }
    }
    images
}
