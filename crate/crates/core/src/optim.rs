//! Dense BFGS minimizer with a backtracking (Armijo) line search.
//!
//! The objective may reject a trial point by returning `None`; the line
//! search treats that like insufficient decrease and shrinks the step. The
//! iterate therefore always stays in the feasible region and the objective
//! never increases between accepted iterates.

use nalgebra::{DMatrix, DVector};

/// Objective value and gradient at a point, plus the stationarity measure
/// used for the stopping test.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub stationarity: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub armijo: f64,
    pub shrink: f64,
    pub initial_step: f64,
    pub max_backtracks: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            grad_tol: 1e-8,
            armijo: 1e-4,
            shrink: 0.5,
            initial_step: 1.0,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: DVector<f64>,
    pub eval: Evaluation,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each accepted iterate, starting point first.
    pub history: Vec<f64>,
}

pub fn minimize<F>(x0: DVector<f64>, opts: &BfgsOptions, mut objective: F) -> Option<BfgsOutcome>
where
    F: FnMut(&DVector<f64>) -> Option<Evaluation>,
{
    let dim = x0.len();
    let mut x = x0;
    let mut eval = objective(&x)?;
    let mut inv_hessian = DMatrix::<f64>::identity(dim, dim);
    let mut fresh = true;
    let mut history = vec![eval.value];
    let mut iterations = 0;

    while iterations < opts.max_iters {
        if eval.stationarity <= opts.grad_tol {
            return Some(BfgsOutcome {
                x,
                eval,
                iterations,
                converged: true,
                history,
            });
        }
        let g = &eval.gradient;
        let mut direction = -(&inv_hessian * g);
        let mut slope = direction.dot(g);
        if !(slope < 0.0) {
            inv_hessian.fill_with_identity();
            fresh = true;
            direction = -g.clone();
            slope = -g.norm_squared();
        }

        let mut step = opts.initial_step;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let trial = &x + &direction * step;
            if let Some(te) = objective(&trial) {
                if te.value.is_finite() && te.value <= eval.value + opts.armijo * step * slope {
                    accepted = Some((trial, te));
                    break;
                }
            }
            step *= opts.shrink;
        }

        let Some((next, next_eval)) = accepted else {
            if fresh {
                break;
            }
            // stale curvature model: retry once from steepest descent
            inv_hessian.fill_with_identity();
            fresh = true;
            continue;
        };

        let s = &next - &x;
        let y = &next_eval.gradient - &eval.gradient;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                inv_hessian *= sy / y.norm_squared();
            }
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(dim, dim);
            let left = &eye - &s * y.transpose() * rho;
            let right = &eye - &y * s.transpose() * rho;
            inv_hessian = &left * &inv_hessian * &right + &s * s.transpose() * rho;
            fresh = false;
        }

        debug_assert!(next_eval.value <= eval.value);
        x = next;
        eval = next_eval;
        history.push(eval.value);
        iterations += 1;
    }

    let converged = eval.stationarity <= opts.grad_tol;
    Some(BfgsOutcome {
        x,
        eval,
        iterations,
        converged,
        history,
    })
}
