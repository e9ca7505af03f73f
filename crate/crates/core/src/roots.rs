//! Real roots of monic polynomials given by their elementary symmetric values.

use num_complex::Complex64;

/// All complex roots of `t^n - e1 t^(n-1) + e2 t^(n-2) - ... ± en`.
///
/// Aberth-Ehrlich simultaneous iteration on the polynomial rescaled so its
/// roots are of unit size, followed by Newton polishing on the original
/// coefficients.
pub fn roots_from_symmetric(e: &[f64]) -> Vec<Complex64> {
    let n = e.len();
    if n == 0 {
        return Vec::new();
    }
    // scale ~ typical root magnitude
    let scale = e
        .iter()
        .enumerate()
        .map(|(k, v)| v.abs().powf(1.0 / (k + 1) as f64))
        .fold(0.0f64, f64::max);
    if scale == 0.0 {
        return vec![Complex64::new(0.0, 0.0); n];
    }

    // coefficients of the scaled polynomial in u = t / scale, highest degree first
    let mut coeffs = Vec::with_capacity(n + 1);
    coeffs.push(1.0);
    for (k, v) in e.iter().enumerate() {
        let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
        coeffs.push(sign * v / scale.powi(k as i32 + 1));
    }

    let mut z: Vec<Complex64> = (0..n)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / n as f64 + 0.4;
            Complex64::from_polar(1.1, angle)
        })
        .collect();

    for _ in 0..500 {
        let mut max_step = 0.0f64;
        for i in 0..n {
            let (p, dp) = horner(&coeffs, z[i]);
            if p.norm() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let repulsion: Complex64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d = z[i] - z[j];
                    if d.norm() == 0.0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        1.0 / d
                    }
                })
                .sum();
            let denom = 1.0 - ratio * repulsion;
            let step = if denom.norm() == 0.0 { ratio } else { ratio / denom };
            if step.is_finite() {
                z[i] -= step;
                max_step = max_step.max(step.norm());
            }
        }
        if max_step < 1e-15 {
            break;
        }
    }

    for zi in &mut z {
        for _ in 0..3 {
            let (p, dp) = horner(&coeffs, *zi);
            if dp.norm() == 0.0 {
                break;
            }
            let next = *zi - p / dp;
            if !next.is_finite() || horner(&coeffs, next).0.norm() >= p.norm() {
                break;
            }
            *zi = next;
        }
    }

    z.into_iter().map(|u| u * scale).collect()
}

fn horner(coeffs: &[f64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &c in coeffs {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}
