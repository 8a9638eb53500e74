//! Damped Gauss-Newton (Levenberg-Marquardt) least squares shared by the fitters.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("no convergence after {iterations} iterations (cost {cost:.3e})")]
    NonConvergence { iterations: usize, last: Vec<f64>, cost: f64 },
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("non-finite residual at parameters {0:?}")]
    NonFinite(Vec<f64>),
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative step tolerance.
    pub xtol: f64,
    /// Relative cost-decrease tolerance.
    pub ftol: f64,
    pub damping0: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iter: 200, xtol: 1e-10, ftol: 1e-15, damping0: 1e-3 }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub params: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
    /// Jacobian at the solution.
    pub jacobian: DMatrix<f64>,
}

impl LmResult {
    /// Condition number of `J^T J` at the solution (infinite when singular).
    pub fn condition_number(&self) -> f64 {
        let jtj = self.jacobian.transpose() * &self.jacobian;
        let sv = jtj.singular_values();
        let max = sv.max();
        let min = sv.min();
        if min <= 0.0 { f64::INFINITY } else { max / min }
    }
}

/// Minimises `|r(x)|^2` given residual and Jacobian closures.
pub fn levenberg_marquardt<R, J>(residual: R, jacobian: J, x0: &[f64], opts: &LmOptions) -> Result<LmResult, FitError>
where
    R: Fn(&[f64]) -> DVector<f64>,
    J: Fn(&[f64]) -> DMatrix<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = residual(&x);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite(x));
    }
    let mut cost = r.norm_squared();
    let mut jac = jacobian(&x);
    let mut mu = opts.damping0;

    for it in 1..=opts.max_iter {
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let mut accepted = false;
        let mut small_step = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += mu * jtj[(i, i)].max(1e-300);
            }
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => match a.lu().solve(&(-&g)) {
                    Some(s) => s,
                    None => {
                        mu *= 10.0;
                        continue;
                    }
                },
            };
            let xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rn = residual(&xn);
            let cn = rn.norm_squared();
            let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            small_step = step.norm() <= opts.xtol * (xnorm + opts.xtol);
            if cn.is_finite() && cn <= cost {
                let rel = (cost - cn) / cost.max(1e-300);
                x = xn;
                r = rn;
                cost = cn;
                jac = jacobian(&x);
                mu = (mu / 3.0).max(1e-15);
                accepted = true;
                if rel <= opts.ftol || small_step || cost == 0.0 {
                    return Ok(LmResult { params: x, cost, iterations: it, jacobian: jac });
                }
                break;
            }
            mu *= 4.0;
            if small_step {
                break;
            }
        }
        if !accepted {
            // no downhill step exists at any damping: stationary point
            if small_step || mu > 1e20 {
                return Ok(LmResult { params: x, cost, iterations: it, jacobian: jac });
            }
        }
    }
    Err(FitError::NonConvergence { iterations: opts.max_iter, last: x, cost })
}

/// Central-difference Jacobian with relative step `h`.
pub fn numeric_jacobian<R>(residual: &R, x: &[f64], h: f64) -> DMatrix<f64>
where
    R: Fn(&[f64]) -> DVector<f64>,
{
    let r0 = residual(x);
    let mut jac = DMatrix::zeros(r0.len(), x.len());
    for k in 0..x.len() {
        let dx = h * x[k].abs().max(1e-8);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[k] += dx;
        xm[k] -= dx;
        let d = (residual(&xp) - residual(&xm)) / (2.0 * dx);
        jac.set_column(k, &d);
    }
    jac
}
