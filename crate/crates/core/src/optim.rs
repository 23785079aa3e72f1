//! Limited-memory BFGS with backtracking line search.
//!
//! The objective may return a value `>= INFEASIBLE` (or a non-finite value)
//! to reject a trial point; the line search then shrinks the step.

use std::collections::VecDeque;

use crate::ldp::is_infeasible;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the sup-norm of the gradient falls below this.
    pub tol_grad: f64,
    /// Stop when the objective changes by less than this for
    /// `stall_window` consecutive iterations.
    pub tol_val: f64,
    pub stall_window: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 12,
            max_iter: 2000,
            tol_grad: 1e-6,
            tol_val: 1e-10,
            stall_window: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Gradient tolerance reached, or the value stalled within `tol_val`.
    pub converged: bool,
    pub stalled: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes `f`, which writes the gradient into its second argument and
/// returns the objective value.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut grad = vec![0.0; n];
    let mut value = f(&x, &mut grad);
    let mut evaluations = 1;
    if is_infeasible(value) {
        return LbfgsResult {
            x,
            value,
            grad_norm: f64::INFINITY,
            iterations: 0,
            evaluations,
            converged: false,
            stalled: false,
        };
    }
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut stall = 0;
    let mut stalled = false;
    let mut iterations = 0;
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];

    while iterations < opts.max_iter {
        let gnorm = sup_norm(&grad);
        if gnorm < opts.tol_grad || n == 0 {
            break;
        }
        iterations += 1;

        // Two-loop recursion.
        let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &dir);
            for (d, yi) in dir.iter_mut().zip(y) {
                *d -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let scale = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= scale);
        } else {
            let scale = 1.0 / gnorm.max(1.0);
            dir.iter_mut().for_each(|d| *d *= scale);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &dir);
            for (d, si) in dir.iter_mut().zip(s) {
                *d += (a - b) * si;
            }
        }
        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            history.clear();
            dir = grad.iter().map(|g| -g / gnorm.max(1.0)).collect();
            slope = dot(&grad, &dir);
        }

        // Backtracking under the Armijo condition.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            for i in 0..n {
                trial[i] = x[i] + step * dir[i];
            }
            let v = f(&trial, &mut trial_grad);
            evaluations += 1;
            if !is_infeasible(v) && v <= value + 1e-4 * step * slope {
                accepted = Some(v);
                break;
            }
            step *= 0.5;
        }
        let Some(new_value) = accepted else {
            // No descent possible along this direction.
            if history.is_empty() {
                break;
            }
            history.clear();
            continue;
        };

        let s: Vec<f64> = (0..n).map(|i| trial[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| trial_grad[i] - grad[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        let change = value - new_value;
        value = new_value;
        if change.abs() < opts.tol_val {
            stall += 1;
            if stall >= opts.stall_window {
                stalled = true;
                break;
            }
        } else {
            stall = 0;
        }
    }
    let grad_norm = sup_norm(&grad);
    LbfgsResult {
        x,
        value,
        grad_norm,
        iterations,
        evaluations,
        converged: grad_norm < opts.tol_grad || stalled,
        stalled,
    }
}
