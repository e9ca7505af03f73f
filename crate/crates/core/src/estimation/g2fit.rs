//! Antibunching dip fit of a start-stop histogram.

use nalgebra::Vector3;

use super::lm;
use crate::error::{Error, Result};
use crate::simulator::G2Histogram;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct G2Fit {
    pub g2_zero: f64,
    pub g2_zero_err: f64,
    pub tau_a_ns: f64,
    pub tau_a_err_ns: f64,
    /// Fitted uncorrelated level in counts per bin.
    pub plateau: f64,
}

/// Fits `n(tau) = P (1 - C exp(-|tau| / tau_a))` and reports `g2(0) = 1 - C`.
///
/// The plateau `P` starts from the mean of the outer half of the delay axis
/// and is refined with the dip, so slow tails do not bias the normalization.
pub fn fit_g2(h: &G2Histogram) -> Result<G2Fit> {
    if h.bins.is_empty() || h.total_counts() == 0 {
        return Err(Error::invalid("histogram", "no counts"));
    }
    let max_tau = h.bins.iter().map(|b| b.0.abs()).fold(0.0, f64::max);
    let outer: Vec<f64> = h.bins.iter().filter(|b| b.0.abs() >= 0.5 * max_tau).map(|b| b.1 as f64).collect();
    let plateau = outer.iter().sum::<f64>() / outer.len() as f64;
    if plateau < 10.0 {
        return Err(Error::Degenerate(format!("plateau of {plateau:.2} counts/bin is below 10")));
    }
    let center = h
        .bins
        .iter()
        .min_by(|a, b| a.0.abs().total_cmp(&b.0.abs()))
        .map(|b| b.1 as f64)
        .unwrap_or(plateau);
    let c0 = (1.0 - center / plateau).clamp(0.0, 1.0);
    let width = h.bin_width_ns;
    let tau0 = if c0 > 0.05 {
        let area: f64 = h.bins.iter().map(|b| (1.0 - b.1 as f64 / plateau) * width).sum();
        (area / (2.0 * c0)).clamp(width, max_tau)
    } else {
        2.0 * width
    };

    let points: Vec<(f64, f64, f64)> = h
        .bins
        .iter()
        .map(|&(tau, n)| (tau.abs(), n as f64, 1.0 / (n as f64).max(1.0).sqrt()))
        .collect();
    let sol = lm::minimize(Vector3::new(plateau, c0, tau0), |p| {
        if !(p[2] > 0.0) || p.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let (r, j) = points
            .iter()
            .map(|&(t, n, w)| {
                let e = (-t / p[2]).exp();
                let f = p[0] * (1.0 - p[1] * e);
                let grad = Vector3::new(1.0 - p[1] * e, -p[0] * e, -p[0] * p[1] * e * t / (p[2] * p[2]));
                (w * (f - n), grad * w)
            })
            .unzip();
        Some((r, j))
    })?;
    let p = sol.params;
    let err = |k: usize| sol.covariance[(k, k)].max(0.0).sqrt();
    if p[1].abs() > 1e-6 && max_tau < 5.0 * p[2] {
        return Err(Error::Degenerate(format!(
            "delay axis reaches {max_tau} ns, less than five decay times of {:.3} ns",
            p[2]
        )));
    }
    Ok(G2Fit {
        g2_zero: 1.0 - p[1],
        g2_zero_err: err(1),
        tau_a_ns: p[2],
        tau_a_err_ns: err(2),
        plateau: p[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(c: f64, tau_a: f64, level: f64) -> G2Histogram {
        let w = 0.5;
        G2Histogram {
            bin_width_ns: w,
            bins: (-200..=200)
                .map(|k| {
                    let t = k as f64 * w;
                    (t, (level * (1.0 - c * (-t.abs() / tau_a).exp())).round() as u64)
                })
                .collect(),
            total_starts: 0,
        }
    }

    #[test]
    fn recovers_noiseless_dip() {
        let f = fit_g2(&synthetic(0.5, 10.0, 1e9)).unwrap();
        assert!((f.g2_zero - 0.5).abs() < 1e-3, "{f:?}");
        assert!((f.tau_a_ns - 10.0).abs() < 1e-2, "{f:?}");
    }

    #[test]
    fn flat_histogram() {
        let f = fit_g2(&synthetic(0.0, 10.0, 500.0)).unwrap();
        assert!((f.g2_zero - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_and_sparse() {
        let empty = G2Histogram {
            bin_width_ns: 1.0,
            bins: vec![],
            total_starts: 0,
        };
        assert!(matches!(fit_g2(&empty), Err(Error::InvalidParameter { .. })));
        assert!(matches!(fit_g2(&synthetic(0.5, 10.0, 5.0)), Err(Error::Degenerate(_))));
    }

    #[test]
    fn short_delay_axis() {
        // axis reaches 100 ns, dip decays over 40
        assert!(matches!(fit_g2(&synthetic(0.5, 40.0, 1e6)), Err(Error::Degenerate(_))));
    }
}
