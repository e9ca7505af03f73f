//! Monte Carlo generation of scan images, correlation histograms and
//! polarization sweeps.
//!
//! Scans are sampled at the rate level (independent Poisson counts per pixel
//! and channel). Only the g2 histogram simulates individual photons, since
//! its delay structure is the point.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScanGrid};
use crate::model::{self, Detector, Scene};
use crate::rng::{self, channel};

/// Sampled per-pixel counts of one raster scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanData {
    pub grid: ScanGrid,
    pub singles_d1: Grid<u64>,
    pub singles_d2: Grid<u64>,
    /// `(order, counts)`, sorted by order.
    pub coincidences: Vec<(usize, Grid<u64>)>,
    pub pump_angle_deg: f64,
    pub seed: u64,
    pub detector: Detector,
}

impl ScanData {
    pub fn coincidence(&self, m: usize) -> Option<&Grid<u64>> {
        self.coincidences.iter().find(|(o, _)| *o == m).map(|(_, g)| g)
    }

    pub fn orders(&self) -> Vec<usize> {
        self.coincidences.iter().map(|(m, _)| *m).collect()
    }

    pub fn total_coincidences(&self, m: usize) -> u64 {
        self.coincidence(m).map_or(0, |g| g.iter().sum())
    }

    /// Checks every grid against the scan geometry.
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        self.singles_d1.check_shape(nx, ny)?;
        self.singles_d2.check_shape(nx, ny)?;
        for (_, g) in &self.coincidences {
            g.check_shape(nx, ny)?;
        }
        self.detector.validate()
    }
}

/// Counts of one pixel (or one sweep entry).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelCounts {
    pub d1: u64,
    pub d2: u64,
    /// One entry per requested order, in request order.
    pub coincidences: Vec<u64>,
}

/// Detection constant the simulator assumes for order `m`.
///
/// For `m = 2` this is the start-stop constant evaluated with singles split
/// exactly `T : R`, which reduces to `2 t_w`.
pub fn calibrated_eta(d: &Detector, m: usize) -> f64 {
    if m == 2 {
        model::eta_2(d, d.t, d.r).expect("validated detector has positive r and t")
    } else {
        d.eta_m(m)
    }
}

/// Expected rates `(singles total, [coincidence rate per order])` at a point.
pub fn expected_rates(scene: &Scene, orders: &[usize], x_nm: f64, y_nm: f64) -> Result<(f64, Vec<f64>)> {
    let d = &scene.detector;
    let total = model::expected_singles(scene, x_nm, y_nm);
    let emitters = total - d.bg_cps;
    let coinc = orders
        .iter()
        .map(|&m| {
            let mut rate = model::expected_coincidences_m(scene, m, calibrated_eta(d, m), x_nm, y_nm)?;
            if m == 2 {
                rate += d.accidental_floor(total, emitters);
            }
            Ok(rate)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((total, coinc))
}

fn check_orders(scene: &Scene, orders: &[usize]) -> Result<Vec<usize>> {
    let n = scene.emitters.len();
    let mut sorted = orders.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &m in &sorted {
        if m < 2 || m > n {
            return Err(Error::OrderOutOfRange { order: m, max: n });
        }
    }
    Ok(sorted)
}

fn sample_point(
    scene: &Scene,
    orders: &[usize],
    x_nm: f64,
    y_nm: f64,
    dwell_s: f64,
    seed: u64,
    index: u64,
) -> Result<PixelCounts> {
    let (total, coinc) = expected_rates(scene, orders, x_nm, y_nm)?;
    let d = &scene.detector;
    let draw = |ch: u64, mean: f64| rng::poisson(&mut rng::stream(seed, &[index, ch]), mean);
    Ok(PixelCounts {
        d1: draw(channel::SINGLES_D1, d.t * total * dwell_s),
        d2: draw(channel::SINGLES_D2, d.r * total * dwell_s),
        coincidences: orders
            .iter()
            .zip(&coinc)
            .map(|(&m, &rate)| draw(channel::COINCIDENCE_BASE + m as u64, rate * dwell_s))
            .collect(),
    })
}

/// Counts of pixel `index` of a scan. `simulate_scan` is exactly this applied
/// to every pixel, so any evaluation order gives the same data.
pub fn simulate_pixel(scene: &Scene, grid: &ScanGrid, orders: &[usize], seed: u64, index: usize) -> Result<PixelCounts> {
    let orders = check_orders(scene, orders)?;
    let (x, y) = grid.position_of(index);
    sample_point(scene, &orders, x, y, grid.dwell_s, seed, index as u64)
}

/// Poisson-sampled singles and coincidence images of a raster scan.
pub fn simulate_scan(scene: &Scene, grid: &ScanGrid, orders: &[usize], seed: u64) -> Result<ScanData> {
    scene.validate()?;
    grid.validate()?;
    let orders = check_orders(scene, orders)?;

    let pixel = |i: usize| {
        let (x, y) = grid.position_of(i);
        sample_point(scene, &orders, x, y, grid.dwell_s, seed, i as u64)
    };
    #[cfg(feature = "parallel")]
    let pixels: Vec<PixelCounts> = {
        use rayon::prelude::*;
        (0..grid.len()).into_par_iter().map(pixel).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let pixels: Vec<PixelCounts> = (0..grid.len()).map(pixel).collect::<Result<_>>()?;

    Ok(assemble(scene, grid, &orders, seed, &pixels))
}

/// Builds a [`ScanData`] from per-pixel counts in row-major order.
pub fn assemble(scene: &Scene, grid: &ScanGrid, orders: &[usize], seed: u64, pixels: &[PixelCounts]) -> ScanData {
    let (nx, ny) = (grid.nx, grid.ny);
    let singles_d1 = Grid::from_fn(nx, ny, |ix, iy| pixels[iy * nx + ix].d1);
    let singles_d2 = Grid::from_fn(nx, ny, |ix, iy| pixels[iy * nx + ix].d2);
    let coincidences = orders
        .iter()
        .enumerate()
        .map(|(k, &m)| (m, Grid::from_fn(nx, ny, |ix, iy| pixels[iy * nx + ix].coincidences[k])))
        .collect();
    ScanData {
        grid: *grid,
        singles_d1,
        singles_d2,
        coincidences,
        pump_angle_deg: scene.pump_angle_deg,
        seed,
        detector: scene.detector.clone(),
    }
}

/// Start-stop delay histogram as accumulated by a multichannel analyzer.
#[derive(Debug, Clone, PartialEq)]
pub struct G2Histogram {
    pub bin_width_ns: f64,
    /// `(bin center in ns, count)`, ordered by delay.
    pub bins: Vec<(f64, u64)>,
    pub total_starts: u64,
}

impl G2Histogram {
    pub fn total_counts(&self) -> u64 {
        self.bins.iter().map(|b| b.1).sum()
    }
}

/// Photon source whose emission is a thinned two-level renewal process.
///
/// An emission cycle is excitation then decay, each `Exp(k)` with
/// `2k = 1/tau_a`, so the undetected stream has `g2 = 1 - exp(-|tau|/tau_a)`.
/// Detection keeps each photon with probability `eta`; the gap between kept
/// photons is therefore `Gamma(2G, 1/k)` with `G ~ 1 + Geometric(eta)`.
/// Independent thinning leaves g2 unchanged.
struct AntibunchedSource {
    rng: ChaCha8Rng,
    /// `ln(1 - eta)`, for inverse-transform sampling of the cycle count.
    ln_miss: f64,
    k_per_ns: f64,
    next_ns: f64,
}

impl AntibunchedSource {
    fn new(rate_cps: f64, tau_a_ns: f64, rng: ChaCha8Rng) -> Result<Self> {
        let k_per_ns = 1.0 / (2.0 * tau_a_ns);
        let saturation_cps = 1e9 / (4.0 * tau_a_ns);
        let eta = rate_cps / saturation_cps;
        if eta > 1.0 {
            return Err(Error::invalid(
                "rates",
                format!("emitter rate {rate_cps} cps exceeds the saturated rate {saturation_cps} cps"),
            ));
        }
        let mut src = AntibunchedSource {
            rng,
            ln_miss: (-eta).ln_1p(),
            k_per_ns,
            next_ns: 0.0,
        };
        src.next_ns = src.gap();
        Ok(src)
    }

    fn gap(&mut self) -> f64 {
        // Floating point so that a nearly dark emitter cannot stall the draw.
        let u: f64 = 1.0 - self.rng.random::<f64>();
        let cycles = if self.ln_miss == 0.0 {
            f64::INFINITY
        } else {
            1.0 + (u.ln() / self.ln_miss).floor()
        };
        if !cycles.is_finite() {
            return f64::INFINITY;
        }
        let shape = 2.0 * cycles;
        Gamma::new(shape, 1.0 / self.k_per_ns)
            .expect("shape and scale are positive")
            .sample(&mut self.rng)
    }

    fn advance(&mut self) {
        self.next_ns += self.gap();
    }
}

struct PoissonSource {
    rng: ChaCha8Rng,
    gap: Exp<f64>,
    next_ns: f64,
}

impl PoissonSource {
    fn new(rate_cps: f64, mut rng: ChaCha8Rng) -> Self {
        let gap = Exp::new(rate_cps * 1e-9).expect("positive rate");
        let next_ns = gap.sample(&mut rng);
        PoissonSource { rng, gap, next_ns }
    }

    fn advance(&mut self) {
        self.next_ns += self.gap.sample(&mut self.rng);
    }
}

enum Source {
    Emitter(AntibunchedSource),
    Background(PoissonSource),
}

impl Source {
    fn next_ns(&self) -> f64 {
        match self {
            Source::Emitter(s) => s.next_ns,
            Source::Background(s) => s.next_ns,
        }
    }

    /// Emits the pending photon: returns true when it goes to D1, then
    /// schedules the next one.
    fn fire(&mut self, t_frac: f64) -> bool {
        match self {
            Source::Emitter(s) => {
                let to_d1 = s.rng.random::<f64>() < t_frac;
                s.advance();
                to_d1
            }
            Source::Background(s) => {
                let to_d1 = s.rng.random::<f64>() < t_frac;
                s.advance();
                to_d1
            }
        }
    }
}

/// Cross-correlation histogram of D1 (start) and D2 (stop) photons with the
/// focus parked at `(x, y)` for `duration_s`.
///
/// The delay axis spans `±10 tau_a` so that the outer half of the histogram
/// sits on the uncorrelated plateau.
pub fn simulate_g2(
    s: &Scene,
    x_nm: f64,
    y_nm: f64,
    duration_s: f64,
    bin_width_ns: f64,
    seed: u64,
) -> Result<G2Histogram> {
    s.validate()?;
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::invalid("duration_s", "must be > 0"));
    }
    if !(bin_width_ns > 0.0 && bin_width_ns.is_finite()) {
        return Err(Error::invalid("bin_width_ns", "must be > 0"));
    }
    let d = &s.detector;
    let rates = s.emitter_rates_at(x_nm, y_nm);
    let total: f64 = rates.iter().sum::<f64>() + d.bg_cps;
    if total <= 0.0 {
        return Err(Error::invalid("position", "zero total rate at the query point"));
    }

    let half_bins = (10.0 * d.tau_a_ns / bin_width_ns).ceil() as i64;
    let max_delay = (half_bins as f64 + 0.5) * bin_width_ns;
    let mut counts = vec![0u64; (2 * half_bins + 1) as usize];

    let mut sources = Vec::new();
    for (i, &r) in rates.iter().enumerate() {
        if r > 0.0 {
            let stream = rng::stream(seed, &[i as u64, channel::G2_EMITTER]);
            sources.push(Source::Emitter(AntibunchedSource::new(r, d.tau_a_ns, stream)?));
        }
    }
    if d.bg_cps > 0.0 {
        let stream = rng::stream(seed, &[0, channel::G2_BACKGROUND]);
        sources.push(Source::Background(PoissonSource::new(d.bg_cps, stream)));
    }

    let end_ns = duration_s * 1e9;
    let mut starts: VecDeque<f64> = VecDeque::new();
    let mut stops: VecDeque<f64> = VecDeque::new();
    let mut total_starts = 0u64;
    let record = |delay: f64, counts: &mut [u64]| {
        let idx = (delay / bin_width_ns).round() as i64 + half_bins;
        if (0..=2 * half_bins).contains(&idx) {
            counts[idx as usize] += 1;
        }
    };

    loop {
        let (which, t) = sources
            .iter()
            .enumerate()
            .map(|(i, src)| (i, src.next_ns()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one source");
        if t > end_ns {
            break;
        }
        let to_d1 = sources[which].fire(d.t);
        if to_d1 {
            total_starts += 1;
            while stops.front().is_some_and(|&u| t - u > max_delay) {
                stops.pop_front();
            }
            for &u in &stops {
                record(u - t, &mut counts);
            }
            starts.push_back(t);
        } else {
            while starts.front().is_some_and(|&u| t - u > max_delay) {
                starts.pop_front();
            }
            for &u in &starts {
                record(t - u, &mut counts);
            }
            stops.push_back(t);
        }
    }

    let bins = counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| ((i as i64 - half_bins) as f64 * bin_width_ns, c))
        .collect();
    Ok(G2Histogram {
        bin_width_ns,
        bins,
        total_starts,
    })
}

/// One pump angle of a polarization sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub angle_deg: f64,
    pub d1: u64,
    pub d2: u64,
    /// Two-photon coincidences (0 when the scene has one emitter).
    pub coincidences: u64,
}

impl SweepPoint {
    pub fn singles(&self) -> u64 {
        self.d1 + self.d2
    }
}

/// Counts at a fixed focus for each pump angle in `angles_deg`.
///
/// Entry `k` draws from the same streams as pixel `k` of [`simulate_scan`], so
/// a one-angle sweep matches a one-pixel scan at that position and angle.
pub fn simulate_polarization_sweep(
    s: &Scene,
    x_nm: f64,
    y_nm: f64,
    angles_deg: &[f64],
    dwell_s: f64,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    s.validate()?;
    if angles_deg.is_empty() {
        return Err(Error::invalid("angles_deg", "sweep needs at least one angle"));
    }
    if !(dwell_s > 0.0 && dwell_s.is_finite()) {
        return Err(Error::invalid("dwell_s", "must be > 0"));
    }
    let orders: Vec<usize> = if s.emitters.len() >= 2 { vec![2] } else { vec![] };
    angles_deg
        .iter()
        .enumerate()
        .map(|(k, &phi)| {
            let scene = s.with_pump_angle(phi);
            let c = sample_point(&scene, &orders, x_nm, y_nm, dwell_s, seed, k as u64)?;
            Ok(SweepPoint {
                angle_deg: phi,
                d1: c.d1,
                d2: c.d2,
                coincidences: c.coincidences.first().copied().unwrap_or(0),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Emitter, Psf};

    fn pair_scene(sep: f64, a: f64, b: f64, bg: f64) -> Scene {
        let det = Detector {
            bg_cps: bg,
            ..Detector::default()
        };
        Scene::new(
            vec![
                Emitter::isotropic(-sep / 2.0, 0.0, a).unwrap(),
                Emitter::isotropic(sep / 2.0, 0.0, b).unwrap(),
            ],
            Psf::default(),
            det,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn zero_rate_scene_gives_zero_counts() {
        let s = pair_scene(100.0, 0.0, 0.0, 0.0);
        let g = ScanGrid::centered(6, 50.0, 10.0).unwrap();
        let sd = simulate_scan(&s, &g, &[2], 3).unwrap();
        assert!(sd.singles_d1.iter().all(|&c| c == 0));
        assert!(sd.singles_d2.iter().all(|&c| c == 0));
        assert!(sd.coincidence(2).unwrap().iter().all(|&c| c == 0));
    }

    #[test]
    fn single_emitter_never_gives_pairs() {
        let s = Scene::new(
            vec![Emitter::isotropic(0.0, 0.0, 5e4).unwrap(), Emitter::isotropic(0.0, 0.0, 0.0).unwrap()],
            Psf::default(),
            Detector::default(),
            0.0,
        )
        .unwrap();
        let g = ScanGrid::centered(8, 40.0, 1e4).unwrap();
        let sd = simulate_scan(&s, &g, &[2], 11).unwrap();
        assert!(sd.coincidence(2).unwrap().iter().all(|&c| c == 0));
        assert!(sd.singles_d1.iter().sum::<u64>() > 0);
    }

    #[test]
    fn rejects_orders_beyond_emitter_count() {
        let s = pair_scene(100.0, 1e3, 1e3, 0.0);
        let g = ScanGrid::centered(2, 50.0, 1.0).unwrap();
        assert!(matches!(simulate_scan(&s, &g, &[3], 0), Err(Error::OrderOutOfRange { order: 3, max: 2 })));
        assert!(simulate_scan(&s, &g, &[1], 0).is_err());
    }

    #[test]
    fn singles_mean_tracks_expectation() {
        let s = pair_scene(200.0, 2e4, 1.5e4, 50.0);
        let g = ScanGrid::centered(5, 60.0, 100.0).unwrap();
        let sd = simulate_scan(&s, &g, &[2], 5).unwrap();
        for i in 0..g.len() {
            let (x, y) = g.position_of(i);
            let expect = model::expected_singles(&s, x, y) * g.dwell_s;
            let got = (sd.singles_d1[i] + sd.singles_d2[i]) as f64;
            assert!((got - expect).abs() < 5.0 * expect.sqrt(), "pixel {i}: {got} vs {expect}");
        }
    }

    #[test]
    fn schedule_independence() {
        let s = pair_scene(120.0, 2e4, 1e4, 100.0);
        let g = ScanGrid::centered(7, 30.0, 50.0).unwrap();
        let sd = simulate_scan(&s, &g, &[2], 99).unwrap();
        let mut pixels: Vec<Option<PixelCounts>> = vec![None; g.len()];
        for i in (0..g.len()).rev() {
            pixels[i] = Some(simulate_pixel(&s, &g, &[2], 99, i).unwrap());
        }
        let pixels: Vec<_> = pixels.into_iter().map(Option::unwrap).collect();
        assert_eq!(assemble(&s, &g, &[2], 99, &pixels), sd);
        assert_eq!(simulate_scan(&s, &g, &[2], 99).unwrap(), sd);
        assert_ne!(simulate_scan(&s, &g, &[2], 100).unwrap(), sd);
    }

    #[test]
    fn one_angle_sweep_matches_one_pixel_scan() {
        let s = Scene::new(
            vec![
                Emitter::new(-4.25, 0.0, 37.5e3, -21.0e3).unwrap(),
                Emitter::new(4.25, 0.0, 23.1e3, -10.8e3).unwrap(),
            ],
            Psf::default(),
            Detector::default(),
            0.0,
        )
        .unwrap();
        let sweep = simulate_polarization_sweep(&s, 10.0, -5.0, &[30.0], 200.0, 42).unwrap();
        let g = ScanGrid::new(10.0, -5.0, 1.0, 1, 1, 200.0).unwrap();
        let sd = simulate_scan(&s.with_pump_angle(30.0), &g, &[2], 42).unwrap();
        assert_eq!(sweep[0].d1, sd.singles_d1[0]);
        assert_eq!(sweep[0].d2, sd.singles_d2[0]);
        assert_eq!(sweep[0].coincidences, sd.coincidence(2).unwrap()[0]);
    }

    #[test]
    fn unmodulated_sweep_has_flat_expectation() {
        let s = pair_scene(8.5, 1e4, 8e3, 0.0);
        let angles = [0.0, 45.0, 90.0, 135.0];
        let a = expected_rates(&s.with_pump_angle(0.0), &[2], 0.0, 0.0).unwrap();
        for phi in angles {
            assert_eq!(expected_rates(&s.with_pump_angle(phi), &[2], 0.0, 0.0).unwrap(), a);
        }
        assert!(simulate_polarization_sweep(&s, 0.0, 0.0, &[], 1.0, 0).is_err());
    }

    #[test]
    fn g2_background_only_is_flat() {
        let mut s = pair_scene(100.0, 0.0, 0.0, 0.0);
        s.detector.bg_cps = 2e5;
        let h = simulate_g2(&s, 0.0, 0.0, 20.0, 2.0, 1).unwrap();
        let n = h.bins.len() as f64;
        let mean = h.total_counts() as f64 / n;
        let center = h.bins[h.bins.len() / 2].1 as f64;
        assert!((center - mean).abs() < 5.0 * mean.sqrt());
    }

    #[test]
    fn g2_rejects_dark_point() {
        let s = pair_scene(100.0, 0.0, 0.0, 0.0);
        assert!(simulate_g2(&s, 0.0, 0.0, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn g2_is_deterministic() {
        let s = pair_scene(100.0, 2e4, 2e4, 10.0);
        let a = simulate_g2(&s, 0.0, 0.0, 0.5, 1.0, 8).unwrap();
        let b = simulate_g2(&s, 0.0, 0.0, 0.5, 1.0, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.bins.len(), 201);
        assert_eq!(a.bins[100].0, 0.0);
    }

    #[test]
    fn g2_tolerates_a_nearly_dark_emitter() {
        let s = pair_scene(4000.0, 2e4, 2e4, 10.0);
        let h = simulate_g2(&s, -2000.0, 0.0, 0.5, 1.0, 3).unwrap();
        assert!(h.total_starts > 0);
    }
}
