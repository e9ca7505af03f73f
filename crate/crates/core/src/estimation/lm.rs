//! Damped least squares over a fixed number of parameters.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};

use crate::error::{Error, Result};

pub(crate) const MAX_ITERATIONS: usize = 200;
const REL_TOL: f64 = 1e-10;
const LAMBDA_START: f64 = 1e-3;
const LAMBDA_GIVE_UP: f64 = 1e20;

/// Weighted residuals and their Jacobian rows at a parameter vector, or
/// `None` if the parameters are outside the model's domain.
pub(crate) type Evaluated<const P: usize> = Option<(Vec<f64>, Vec<SVector<f64, P>>)>;

#[derive(Debug, Clone)]
pub(crate) struct Solution<const P: usize> {
    pub params: SVector<f64, P>,
    pub iterations: usize,
    /// Residual-variance scaled inverse of `J^T J`; infinite entries when it
    /// is singular.
    pub covariance: SMatrix<f64, P, P>,
    /// Cost after every accepted step, starting with the initial one.
    #[cfg_attr(not(test), allow(dead_code))]
    pub cost_history: Vec<f64>,
}

fn cost_of(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn normal<const P: usize>(r: &[f64], jac: &[SVector<f64, P>]) -> (SMatrix<f64, P, P>, SVector<f64, P>) {
    let mut jtj = SMatrix::<f64, P, P>::zeros();
    let mut jtr = SVector::<f64, P>::zeros();
    for (ri, row) in r.iter().zip(jac) {
        jtj += row * row.transpose();
        jtr += row * *ri;
    }
    (jtj, jtr)
}

fn solve<const P: usize>(a: &SMatrix<f64, P, P>, b: &SVector<f64, P>) -> Option<SVector<f64, P>> {
    let x = DMatrix::from_column_slice(P, P, a.as_slice())
        .lu()
        .solve(&DVector::from_column_slice(b.as_slice()))?;
    Some(SVector::from_column_slice(x.as_slice()))
}

/// Minimizes the sum of squared residuals returned by `eval`.
///
/// The normal-matrix diagonal is multiplied by `1 + lambda`; lambda starts
/// at 1e-3 and moves by a factor of ten on each rejected or accepted step.
/// Stops when an accepted step changes the cost by less than 1e-10
/// relative, or when no step can reduce it further.
pub(crate) fn minimize<const P: usize>(
    start: SVector<f64, P>,
    eval: impl Fn(&SVector<f64, P>) -> Evaluated<P>,
) -> Result<Solution<P>> {
    let (mut r, mut jac) = eval(&start).ok_or_else(|| Error::Degenerate("initial parameters outside model domain".into()))?;
    let n = r.len();
    if n <= P {
        return Err(Error::Degenerate(format!("{n} residuals for {P} parameters")));
    }
    let mut params = start;
    let mut cost = cost_of(&r);
    if !cost.is_finite() {
        return Err(Error::NonFinite("initial residuals"));
    }
    let mut history = vec![cost];
    let mut lambda = LAMBDA_START;
    let mut converged = cost == 0.0;
    let mut iterations = 0;

    while !converged && iterations < MAX_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = normal(&r, &jac);
        loop {
            let mut damped = jtj;
            for k in 0..P {
                damped[(k, k)] *= 1.0 + lambda;
                if damped[(k, k)] == 0.0 {
                    damped[(k, k)] = lambda * f64::EPSILON;
                }
            }
            let step = solve(&damped, &(-jtr));
            let trial = step.map(|s| params + s).and_then(|p| eval(&p).map(|e| (p, e)));
            match trial {
                Some((p, (tr, tj))) if cost_of(&tr) < cost => {
                    let next = cost_of(&tr);
                    let rel = (cost - next) / cost;
                    params = p;
                    r = tr;
                    jac = tj;
                    cost = next;
                    history.push(cost);
                    lambda = (lambda / 10.0).max(1e-12);
                    converged = rel < REL_TOL || cost == 0.0;
                    break;
                }
                _ => {
                    lambda *= 10.0;
                    if lambda > LAMBDA_GIVE_UP {
                        // no descent direction left at working precision
                        converged = true;
                        break;
                    }
                }
            }
        }
    }
    if !converged {
        return Err(Error::NonConvergence { iterations });
    }

    let (jtj, _) = normal(&r, &jac);
    let variance = cost / (n - P) as f64;
    let covariance = DMatrix::from_column_slice(P, P, jtj.as_slice())
        .try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .map(|inv| SMatrix::<f64, P, P>::from_column_slice(inv.as_slice()) * variance)
        .unwrap_or_else(|| SMatrix::repeat(f64::INFINITY));
    Ok(Solution {
        params,
        iterations,
        covariance,
        cost_history: history,
    })
}
