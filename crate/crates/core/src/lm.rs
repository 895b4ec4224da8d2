//! Damped Gauss-Newton (Levenberg) iteration for small dense problems.

use nalgebra::{DMatrix, DVector};

pub trait LeastSquares {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>, residuals: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iters: usize,
    /// Stop once an accepted step decreases the objective by less than this
    /// fraction.
    pub rel_tol: f64,
    pub lambda0: f64,
    pub lambda_factor: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iters: 20,
            rel_tol: 1e-6,
            lambda0: 1e-3,
            lambda_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Objective at the start point followed by the objective after every
    /// accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LmOutcome {
    pub fn initial_objective(&self) -> f64 {
        self.trace[0]
    }
}

const LAMBDA_CEILING: f64 = 1e16;

/// Minimizes `||r(x)||^2` from `x0`. Steps that do not strictly lower the
/// objective are rejected, so the returned objective never exceeds the one
/// at `x0`.
pub fn minimize<P: LeastSquares + ?Sized>(problem: &P, x0: DVector<f64>, opts: &LmOptions) -> LmOutcome {
    let mut x = x0;
    let mut r = problem.residuals(&x);
    let mut objective = r.norm_squared();
    let mut trace = vec![objective];
    let mut lambda = opts.lambda0;
    let mut converged = false;
    let mut iterations = 0;

    if x.is_empty() || objective == 0.0 {
        return LmOutcome {
            x,
            objective,
            trace,
            iterations,
            converged: true,
        };
    }

    while iterations < opts.max_iters {
        iterations += 1;
        let jac = problem.jacobian(&x, &r);
        let gradient = jac.tr_mul(&r);
        let normal = jac.tr_mul(&jac);
        let scale = normal.diagonal().max().max(1.0);

        let mut accepted = None;
        while lambda <= LAMBDA_CEILING * scale {
            let mut damped = normal.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda;
            }
            let step = damped.cholesky().map(|c| c.solve(&(-&gradient)));
            if let Some(step) = step.filter(|s| s.iter().all(|v| v.is_finite())) {
                let candidate = &x + &step;
                let r_new = problem.residuals(&candidate);
                let obj_new = r_new.norm_squared();
                if obj_new < objective {
                    accepted = Some((candidate, r_new, obj_new));
                    lambda = (lambda / opts.lambda_factor).max(1e-15);
                    break;
                }
            }
            lambda *= opts.lambda_factor;
        }

        let Some((x_new, r_new, obj_new)) = accepted else {
            // No damping level produces descent: stationary to working precision.
            converged = true;
            break;
        };
        let decrease = (objective - obj_new) / objective;
        x = x_new;
        r = r_new;
        objective = obj_new;
        trace.push(objective);
        if decrease < opts.rel_tol || objective == 0.0 {
            converged = true;
            break;
        }
    }

    LmOutcome {
        x,
        objective,
        trace,
        iterations,
        converged,
    }
}

/// Forward-difference Jacobian with step `1e-6 * (1 + |x_j|)`; columns are
/// evaluated in parallel.
pub fn forward_difference_jacobian<F>(f: F, x: &DVector<f64>, r0: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Sync,
{
    use rayon::prelude::*;

    let columns: Vec<DVector<f64>> = (0..x.len())
        .into_par_iter()
        .map(|j| {
            let h = 1e-6 * (1.0 + x[j].abs());
            let mut xp = x.clone();
            xp[j] += h;
            // Use the representable step actually taken.
            let h = xp[j] - x[j];
            (f(&xp) - r0) / h
        })
        .collect();
    DMatrix::from_columns(&columns)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl LeastSquares for Rosenbrock {
        fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
            DVector::from_vec(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]])
        }

        fn jacobian(&self, x: &DVector<f64>, _r: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_row_slice(2, 2, &[-20.0 * x[0], 10.0, -1.0, 0.0])
        }
    }

    #[test]
    fn solves_rosenbrock() {
        let opts = LmOptions {
            max_iters: 200,
            rel_tol: 1e-14,
            ..Default::default()
        };
        let out = minimize(&Rosenbrock, DVector::from_vec(vec![-1.2, 1.0]), &opts);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6, "{:?}", out.x);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn finite_differences_match_analytic_jacobian() {
        let x = DVector::from_vec(vec![0.3, -0.7]);
        let r = Rosenbrock.residuals(&x);
        let fd = forward_difference_jacobian(|x| Rosenbrock.residuals(x), &x, &r);
        assert!((fd - Rosenbrock.jacobian(&x, &r)).abs().max() < 1e-4);
    }
}
