use crate::ldp::is_infeasible;
use crate::optim::{minimize, LbfgsOptions};

use super::objective::RateProblem;
use super::RateSolver;

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// One L-BFGS run over all variables at once.
#[derive(Debug, Clone, Copy, Default)]
pub struct JointSolver;

impl RateSolver for JointSolver {
    fn name(&self) -> &'static str {
        "joint"
    }

    fn solve(&self, problem: &RateProblem<'_>, x0: Vec<f64>, opts: &LbfgsOptions) -> SolveOutcome {
        let res = minimize(|x, g| problem.evaluate(x, Some(g), None), x0, opts);
        SolveOutcome {
            x: res.x,
            value: res.value,
            grad_norm: res.grad_norm,
            iterations: res.iterations,
            converged: res.converged,
        }
    }
}

/// Alternates a loss-path step with the Riccati kernels frozen at the
/// current ψ and a factor-path step with the loss paths held fixed.
#[derive(Debug, Clone, Copy)]
pub struct BlockSolver {
    pub max_rounds: usize,
    pub inner_iter: usize,
}

impl Default for BlockSolver {
    fn default() -> Self {
        BlockSolver {
            max_rounds: 60,
            inner_iter: 300,
        }
    }
}

impl RateSolver for BlockSolver {
    fn name(&self) -> &'static str {
        "block"
    }

    fn solve(&self, problem: &RateProblem<'_>, x0: Vec<f64>, opts: &LbfgsOptions) -> SolveOutcome {
        if !problem.with_psi() {
            return JointSolver.solve(problem, x0, opts);
        }
        let layout = problem.layout;
        let phi = layout.phi_block();
        let psi = layout.psi_block();
        let inner = LbfgsOptions {
            max_iter: self.inner_iter,
            ..*opts
        };
        let mut x = x0;
        let mut full_grad = vec![0.0; x.len()];
        let mut value = problem.evaluate(&x, Some(&mut full_grad), None);
        let mut iterations = 0;
        let mut settled = false;
        for _ in 0..self.max_rounds {
            if is_infeasible(value) || sup_norm(&full_grad) < opts.tol_grad {
                break;
            }
            let previous = value;

            let kernels = match problem.kernels_for(&problem.decode(&x).psi) {
                Ok(k) => k,
                Err(_) => break,
            };
            let mut scratch = vec![0.0; x.len()];
            let tail = x[psi.clone()].to_vec();
            let res = minimize(
                |v, g| {
                    scratch[phi.clone()].copy_from_slice(v);
                    scratch[psi.clone()].copy_from_slice(&tail);
                    let mut fg = vec![0.0; scratch.len()];
                    let f = problem.evaluate(&scratch, Some(&mut fg), Some(&kernels));
                    g.copy_from_slice(&fg[phi.clone()]);
                    f
                },
                x[phi.clone()].to_vec(),
                &inner,
            );
            iterations += res.iterations;
            x[phi.clone()].copy_from_slice(&res.x);

            let head = x[phi.clone()].to_vec();
            let res = minimize(
                |v, g| {
                    let mut full = head.clone();
                    full.extend_from_slice(v);
                    let mut fg = vec![0.0; full.len()];
                    let f = problem.evaluate(&full, Some(&mut fg), None);
                    g.copy_from_slice(&fg[psi.clone()]);
                    f
                },
                x[psi.clone()].to_vec(),
                &inner,
            );
            iterations += res.iterations;
            x[psi.clone()].copy_from_slice(&res.x);

            value = problem.evaluate(&x, Some(&mut full_grad), None);
            if (previous - value).abs() < opts.tol_val {
                settled = true;
                break;
            }
        }
        let grad_norm = sup_norm(&full_grad);
        SolveOutcome {
            x,
            value,
            grad_norm,
            iterations,
            converged: grad_norm < opts.tol_grad || settled,
        }
    }
}
