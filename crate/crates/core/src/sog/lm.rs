//! Projected Levenberg–Marquardt with Marquardt diagonal scaling.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub lambda0: f64,
    /// Multiplier applied to λ on a rejected step; λ is divided by it on
    /// an accepted one.
    pub lambda_factor: f64,
    pub max_iter: usize,
    pub step_tol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            lambda0: 1e-3,
            lambda_factor: 10.0,
            max_iter: 200,
            step_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LmOutcome {
    pub x: Vec<f64>,
    /// Sum of squared residuals at `x`.
    pub sse: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// A least-squares problem in internal (unconstrained-ish) parameters.
pub(crate) trait Problem {
    fn residuals(&self, x: &[f64]) -> Vec<f64>;
    /// Residuals plus the Jacobian with one row per residual.
    fn residuals_and_jacobian(&self, x: &[f64]) -> (Vec<f64>, DMatrix<f64>);
    /// Pulls `x` back into the feasible box.
    fn project(&self, _x: &mut [f64]) {}
}

fn sse(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

const LAMBDA_CEILING: f64 = 1e16;

pub(crate) fn minimize(problem: &impl Problem, x0: Vec<f64>, cfg: &LmConfig) -> LmOutcome {
    let mut x = x0;
    problem.project(&mut x);
    let (mut r, mut jac) = problem.residuals_and_jacobian(&x);
    let mut cost = sse(&r);
    let mut lambda = cfg.lambda0;
    let n = x.len();

    for iter in 1..=cfg.max_iter {
        let jtj = jac.tr_mul(&jac);
        let grad = jac.tr_mul(&DVector::from_column_slice(&r));
        if grad.amax() <= 1e-300 || cost == 0.0 {
            return LmOutcome { x, sse: cost, iterations: iter - 1, converged: true };
        }
        let diag_floor = 1e-12 * (0..n).map(|i| jtj[(i, i)]).fold(0.0, f64::max).max(1e-300);

        // Inner loop: raise λ until a step lowers the cost.
        loop {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(diag_floor);
            }
            let step = match a.cholesky() {
                Some(ch) => -ch.solve(&grad),
                None => {
                    lambda *= cfg.lambda_factor;
                    if lambda > LAMBDA_CEILING {
                        return LmOutcome { x, sse: cost, iterations: iter, converged: true };
                    }
                    continue;
                }
            };
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            problem.project(&mut trial);
            let moved = trial
                .iter()
                .zip(&x)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let scale = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if moved <= cfg.step_tol * (scale + cfg.step_tol) {
                return LmOutcome { x, sse: cost, iterations: iter, converged: true };
            }
            let trial_r = problem.residuals(&trial);
            let trial_cost = sse(&trial_r);
            if trial_cost.is_finite() && trial_cost < cost {
                let rel = (cost - trial_cost) / cost;
                x = trial;
                cost = trial_cost;
                lambda = (lambda / cfg.lambda_factor).max(1e-15);
                if rel < 1e-15 {
                    return LmOutcome { x, sse: cost, iterations: iter, converged: true };
                }
                let (nr, nj) = problem.residuals_and_jacobian(&x);
                r = nr;
                jac = nj;
                break;
            }
            lambda *= cfg.lambda_factor;
            if lambda > LAMBDA_CEILING {
                // No descent direction left at working precision.
                return LmOutcome { x, sse: cost, iterations: iter, converged: true };
            }
        }
    }
    LmOutcome {
        x,
        sse: cost,
        iterations: cfg.max_iter,
        converged: false,
    }
}
