//! Dense Levenberg-Marquardt with Marquardt diagonal scaling.

use nalgebra::{DMatrix, DVector};

pub trait LeastSquares {
    fn params(&self) -> usize;
    fn residuals(&self, p: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub max_iters: usize,
    /// Stop when ‖Jᵀr‖∞ falls below this.
    pub grad_tol: f64,
    /// Stop when the relative step falls below this.
    pub step_tol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { max_iters: 100, grad_tol: 1e-10, step_tol: 1e-14 }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: DVector<f64>,
    /// ½‖r‖² at the start and at the returned iterate.
    pub initial_cost: f64,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn minimize<P: LeastSquares>(problem: &P, p0: DVector<f64>, cfg: &LmConfig) -> LmOutcome {
    let n = problem.params();
    let mut p = p0;
    let mut r = problem.residuals(&p);
    let mut cost = 0.5 * r.norm_squared();
    let initial_cost = cost;
    let mut lambda = -1.0;
    let mut nu = 2.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut jac = problem.jacobian(&p);
    let mut jtj = jac.transpose() * &jac;
    let mut g = jac.transpose() * &r;

    while iterations < cfg.max_iters {
        if !cost.is_finite() {
            break;
        }
        if g.amax() < cfg.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        if lambda < 0.0 {
            lambda = 1e-3 * jtj.diagonal().max().max(1e-12);
        }
        let mut accepted = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= nu;
                nu *= 2.0;
                continue;
            };
            if step.norm() <= cfg.step_tol * (p.norm() + cfg.step_tol) {
                converged = true;
                break;
            }
            let cand = &p + &step;
            let rc = problem.residuals(&cand);
            let cc = 0.5 * rc.norm_squared();
            let predicted = -(step.dot(&g) + 0.5 * step.dot(&(&jtj * &step)));
            if cc.is_finite() && cc < cost {
                let rho = if predicted > 0.0 { (cost - cc) / predicted } else { 1.0 };
                lambda *= (1.0_f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
                nu = 2.0;
                p = cand;
                r = rc;
                cost = cc;
                accepted = true;
                break;
            }
            lambda *= nu;
            nu *= 2.0;
        }
        if converged || !accepted {
            converged = converged || !accepted;
            break;
        }
        jac = problem.jacobian(&p);
        jtj = jac.transpose() * &jac;
        g = jac.transpose() * &r;
    }
    LmOutcome { params: p, initial_cost, cost, iterations, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rosenbrock as least squares: r = (10 (y − x²), 1 − x).
    struct Rosenbrock;

    impl LeastSquares for Rosenbrock {
        fn params(&self) -> usize {
            2
        }
        fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
            DVector::from_vec(vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]])
        }
        fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_row_slice(2, 2, &[-20.0 * p[0], 10.0, -1.0, 0.0])
        }
    }

    #[test]
    fn solves_rosenbrock() {
        let out = minimize(&Rosenbrock, DVector::from_vec(vec![-1.2, 1.0]), &LmConfig::default());
        assert!((out.params[0] - 1.0).abs() < 1e-8 && (out.params[1] - 1.0).abs() < 1e-8);
        assert!(out.cost <= out.initial_cost);
    }

    #[test]
    fn zero_residual_start_is_fixed_point() {
        let out = minimize(&Rosenbrock, DVector::from_vec(vec![1.0, 1.0]), &LmConfig::default());
        assert_eq!(out.iterations, 0);
        assert_eq!(out.params, DVector::from_vec(vec![1.0, 1.0]));
    }
}
