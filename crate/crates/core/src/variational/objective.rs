//! Reparameterized rate objective and its exact gradient.
//!
//! Variables, in order:
//! * `z[i][k]`, `k < M`: softmax logits of bin `i`'s increments,
//! * `y[i]`: terminal-loss logits; the terminal losses are
//!   `s_i = σ(y_i + c)` with the gauge `c` solving `Σ w_i s_i = ℓ`,
//! * `v[k]`, `k < M`, when the factor path is free: scaled increments with
//!   `ψ(t_n) = √Δt Σ_{k<n} v[k]`, which keeps the factor action close to
//!   `½|v|²`.
//!
//! Every point is feasible: increments are positive, each `φ_i(T) ∈ (0, 1)`
//! and `φ̄(T) = ℓ`.

use crate::error::Result;
use crate::factor::FactorModel;
use crate::ldp::{factor_action_with_grad, xlogx_over, INFEASIBLE};
use crate::model::{GridPath, Pool, TimeGrid};
use crate::riccati::BinKernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layout {
    pub bins: usize,
    pub steps: usize,
    pub with_psi: bool,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.bins * self.steps + self.bins + if self.with_psi { self.steps } else { 0 }
    }

    pub fn z(&self, i: usize) -> std::ops::Range<usize> {
        i * self.steps..(i + 1) * self.steps
    }

    pub fn y(&self, i: usize) -> usize {
        self.bins * self.steps + i
    }

    pub fn phi_block(&self) -> std::ops::Range<usize> {
        0..self.bins * self.steps + self.bins
    }

    pub fn psi_block(&self) -> std::ops::Range<usize> {
        let start = self.bins * self.steps + self.bins;
        start..start + if self.with_psi { self.steps } else { 0 }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Solves `Σ w_i σ(y_i + c) = ell` for `c` (monotone in `c`).
fn gauge(weights: &[f64], y: &[f64], ell: f64) -> f64 {
    let total = |c: f64| -> f64 { weights.iter().zip(y).map(|(w, yi)| w * sigmoid(yi + c)).sum() };
    let ymax = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ymin = y.iter().copied().fold(f64::INFINITY, f64::min);
    let mut lo = -ymax - 60.0;
    let mut hi = -ymin + 60.0;
    let mut c = 0.5 * (lo + hi);
    for _ in 0..200 {
        let v = total(c) - ell;
        if v.abs() < 1e-16 || hi - lo < 1e-15 {
            break;
        }
        if v > 0.0 {
            hi = c;
        } else {
            lo = c;
        }
        let deriv: f64 = weights
            .iter()
            .zip(y)
            .map(|(w, yi)| {
                let s = sigmoid(yi + c);
                w * s * (1.0 - s)
            })
            .sum();
        let newton = c - v / deriv;
        c = if deriv > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    c
}

#[derive(Debug, Clone)]
pub(crate) struct Decoded {
    pub probs: Vec<Vec<f64>>,
    /// Terminal loss per bin.
    pub s: Vec<f64>,
    /// `1 - s`, computed without cancellation.
    pub r: Vec<f64>,
    pub sig_prime: Vec<f64>,
    pub increments: Vec<Vec<f64>>,
    pub dphi_bar: Vec<f64>,
    pub psi: Vec<f64>,
}

/// A rate minimization problem at fixed `ell`.
pub struct RateProblem<'a> {
    pub(crate) pool: &'a Pool,
    pub(crate) weights: Vec<f64>,
    pub(crate) ell: f64,
    pub(crate) grid: TimeGrid,
    pub(crate) layout: Layout,
    /// Free factor dynamics and `c`, when ψ is optimized.
    pub(crate) factor: Option<(FactorModel, f64)>,
    /// Kernels at ψ ≡ 0, used whenever ψ is not free.
    pub(crate) zero_kernels: Vec<BinKernel>,
}

impl<'a> RateProblem<'a> {
    pub fn new(
        pool: &'a Pool,
        ell: f64,
        grid: TimeGrid,
        factor: Option<(FactorModel, f64)>,
    ) -> Self {
        let layout = Layout {
            bins: pool.bins().len(),
            steps: grid.steps(),
            with_psi: factor.is_some(),
        };
        RateProblem {
            pool,
            weights: pool.weights(),
            ell,
            grid,
            layout,
            factor,
            zero_kernels: crate::lln::factor_free_kernels(pool, grid),
        }
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dimension(&self) -> usize {
        self.layout.len()
    }

    pub fn with_psi(&self) -> bool {
        self.layout.with_psi
    }

    pub(crate) fn decode(&self, x: &[f64]) -> Decoded {
        let l = self.layout;
        let y: Vec<f64> = (0..l.bins).map(|i| x[l.y(i)]).collect();
        let c = gauge(&self.weights, &y, self.ell);
        let mut probs = Vec::with_capacity(l.bins);
        let mut s = Vec::with_capacity(l.bins);
        let mut r = Vec::with_capacity(l.bins);
        let mut sig_prime = Vec::with_capacity(l.bins);
        let mut increments = Vec::with_capacity(l.bins);
        let mut dphi_bar = vec![0.0; l.steps];
        for i in 0..l.bins {
            let z = &x[l.z(i)];
            let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut p: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
            let total: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= total);
            let si = sigmoid(y[i] + c);
            let ri = sigmoid(-(y[i] + c));
            let inc: Vec<f64> = p.iter().map(|pk| si * pk).collect();
            for (acc, u) in dphi_bar.iter_mut().zip(&inc) {
                *acc += self.weights[i] * u;
            }
            probs.push(p);
            s.push(si);
            r.push(ri);
            sig_prime.push(si * ri);
            increments.push(inc);
        }
        let psi = if l.with_psi {
            let root = self.grid.dt().sqrt();
            let mut v = Vec::with_capacity(l.steps + 1);
            let mut acc = 0.0;
            v.push(acc);
            for inc in &x[l.psi_block()] {
                acc += root * inc;
                v.push(acc);
            }
            v
        } else {
            vec![0.0; l.steps + 1]
        };
        Decoded {
            probs,
            s,
            r,
            sig_prime,
            increments,
            dphi_bar,
            psi,
        }
    }

    pub(crate) fn kernels_for(&self, psi: &[f64]) -> Result<Vec<BinKernel>> {
        let path = GridPath::factor(self.grid, psi.to_vec())?;
        self.pool
            .bins()
            .iter()
            .map(|b| BinKernel::for_path(&b.name_type, &path))
            .collect()
    }

    /// Objective value, writing the gradient into `grad` when given.
    /// `frozen` supplies kernels for a fixed ψ; otherwise they are rebuilt
    /// from the ψ block of `x` (or taken at ψ ≡ 0 when ψ is not free).
    pub(crate) fn evaluate(
        &self,
        x: &[f64],
        grad: Option<&mut [f64]>,
        frozen: Option<&[BinKernel]>,
    ) -> f64 {
        let l = self.layout;
        let d = self.decode(x);
        let owned;
        let kernels: &[BinKernel] = match frozen {
            Some(k) => k,
            None if l.with_psi => match self.kernels_for(&d.psi) {
                Ok(k) => {
                    owned = k;
                    &owned
                }
                Err(_) => return INFEASIBLE,
            },
            None => &self.zero_kernels,
        };
        let m = l.steps;
        let dt = self.grid.dt();
        let mut per_bin = Vec::with_capacity(l.bins);
        let mut total = 0.0;
        for (i, kernel) in kernels.iter().enumerate() {
            let mut raw = vec![0.0; m + 1];
            kernel.gamma_raw(&d.dphi_bar, &mut raw);
            let mut src: Vec<usize> = (0..=m).collect();
            let mut gamma = raw.clone();
            for j in 1..=m {
                if gamma[j] < gamma[j - 1] {
                    gamma[j] = gamma[j - 1];
                    src[j] = src[j - 1];
                }
            }
            let surv: Vec<f64> = gamma.iter().map(|g| (-g).exp()).collect();
            let masses: Vec<f64> = surv.windows(2).map(|w| w[0] - w[1]).collect();
            let mut g = 0.0;
            for (u, mk) in d.increments[i].iter().zip(&masses) {
                match xlogx_over(*u, *mk) {
                    Some(v) => g += v,
                    None => return INFEASIBLE,
                }
            }
            match xlogx_over(d.r[i], surv[m]) {
                Some(v) => g += v,
                None => return INFEASIBLE,
            }
            total += self.weights[i] * g;
            per_bin.push((surv, masses, src));
        }
        let mut factor_grad = Vec::new();
        if let Some((factor, c)) = &self.factor {
            let (v, fg, _) = factor_action_with_grad(&d.psi, dt, factor.as_ref(), grad.is_some());
            total += v / c;
            factor_grad = fg;
        }
        if !total.is_finite() {
            return INFEASIBLE;
        }
        let Some(grad) = grad else {
            return total;
        };

        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut g_dphi = vec![0.0; m];
        let mut g_slopes = vec![0.0; m];
        let mut g_u: Vec<Vec<f64>> = Vec::with_capacity(l.bins);
        let psi_free = l.with_psi && frozen.is_none();
        for (i, kernel) in kernels.iter().enumerate() {
            let w = self.weights[i];
            let (surv, masses, src) = &per_bin[i];
            let u = &d.increments[i];
            let ri = d.r[i];
            let tail = if ri > 0.0 { (ri / surv[m]).ln() } else { -745.0 };
            g_u.push(u.iter().zip(masses).map(|(uk, mk)| w * ((uk / mk).ln() - tail)).collect());

            // ∂F/∂Γ_j, routed back to the raw index that produced Γ_j.
            let mut g_gamma = vec![0.0; m + 1];
            for j in 1..=m {
                let mut ds = u[j - 1] / masses[j - 1];
                if j < m {
                    ds -= u[j] / masses[j];
                } else {
                    ds -= ri / surv[m];
                }
                g_gamma[src[j]] += -surv[j] * w * ds;
            }

            let p = kernel.name_type();
            if p.beta_c != 0.0 {
                for k in 0..m {
                    let mut acc = 0.0;
                    for j in k + 1..=m {
                        acc += g_gamma[j] * kernel.kernel(j, k);
                    }
                    g_dphi[k] += p.beta_c * acc;
                }
            }

            if psi_free && kernel.name_type().beta_s != 0.0 {
                let a_lb_dt = p.alpha * p.lambda_bar * dt;
                let mut seeds = vec![0.0; m + 1];
                for j in 1..=m {
                    let gj = g_gamma[j];
                    if gj == 0.0 {
                        continue;
                    }
                    for (mm, seed) in seeds.iter_mut().enumerate().take(j + 1) {
                        let trap = if mm == 0 || mm == j { 0.5 } else { 1.0 };
                        let mut v = a_lb_dt * trap;
                        if mm == j {
                            v += p.lambda0;
                        }
                        if p.beta_c != 0.0 {
                            let mut conv = 0.0;
                            if mm >= 1 {
                                conv += d.dphi_bar[j - mm];
                            }
                            if mm < j {
                                conv += d.dphi_bar[j - mm - 1];
                            }
                            v += p.beta_c * 0.5 * conv;
                        }
                        *seed = gj * v;
                    }
                    kernel.theta().accumulate_slope_gradient(j, &seeds[..=j], &mut g_slopes);
                }
            }
        }

        let gauge_den: f64 = (0..l.bins).map(|i| self.weights[i] * d.sig_prime[i]).sum();
        let mut g_s = vec![0.0; l.bins];
        for i in 0..l.bins {
            let w = self.weights[i];
            let probs = &d.probs[i];
            let gu: Vec<f64> = g_u[i].iter().zip(&g_dphi).map(|(a, b)| a + w * b).collect();
            let mean: f64 = probs.iter().zip(&gu).map(|(p, g)| p * g).sum();
            for (k, idx) in l.z(i).enumerate() {
                grad[idx] = d.s[i] * probs[k] * (gu[k] - mean);
            }
            g_s[i] = mean;
        }
        // s_i = σ(y_i + c(y)), dc/dy_m = -w_m σ'_m / Σ w σ'.
        let weighted: f64 = (0..l.bins).map(|i| g_s[i] * d.sig_prime[i]).sum();
        for mm in 0..l.bins {
            let dc = -self.weights[mm] * d.sig_prime[mm] / gauge_den;
            grad[l.y(mm)] = g_s[mm] * d.sig_prime[mm] + weighted * dc;
        }

        if l.with_psi {
            // ψ_n = √dt Σ_{k<n} v_k, so ∂ψ'_k/∂v_k = 1/√dt.
            let c = self.factor.as_ref().map(|(_, c)| *c).unwrap_or(1.0);
            let root = dt.sqrt();
            let mut suffix = 0.0;
            for (k, idx) in l.psi_block().enumerate().rev() {
                if let Some(fg) = factor_grad.get(k + 1) {
                    suffix += fg / c;
                }
                let own = if psi_free { g_slopes[k] / root } else { 0.0 };
                grad[idx] = own + root * suffix;
            }
        }
        total
    }

    /// Encodes bin paths (and ψ) as a starting point. Zero increments are
    /// replaced by a small positive floor.
    pub fn encode(&self, bin_paths: &[GridPath], psi: Option<&GridPath>) -> Vec<f64> {
        let l = self.layout;
        let mut x = vec![0.0; l.len()];
        for (i, path) in bin_paths.iter().enumerate() {
            let inc = path.increments();
            let total: f64 = inc.iter().sum();
            let floor = (total / l.steps as f64).max(1e-12) * 1e-6;
            for (idx, u) in l.z(i).zip(&inc) {
                x[idx] = u.max(floor).ln();
            }
            let t = path.terminal().clamp(1e-6, 1.0 - 1e-6);
            x[l.y(i)] = (t / (1.0 - t)).ln();
        }
        if let (true, Some(psi)) = (l.with_psi, psi) {
            let root = self.grid.dt().sqrt();
            for (idx, w) in l.psi_block().zip(psi.values().windows(2)) {
                x[idx] = (w[1] - w[0]) / root;
            }
        }
        x
    }

    /// Bin paths and ψ for a variable vector.
    pub fn paths(&self, x: &[f64]) -> Result<(Vec<GridPath>, GridPath)> {
        let d = self.decode(x);
        let bins = d
            .increments
            .iter()
            .map(|inc| {
                let path = GridPath::from_increments(self.grid, inc)?;
                let mut values = path.into_values();
                // keep the path a valid loss path under rounding
                for k in 1..values.len() {
                    values[k] = values[k].max(values[k - 1]).min(1.0);
                }
                GridPath::loss(self.grid, values)
            })
            .collect::<Result<Vec<_>>>()?;
        let psi = GridPath::factor(self.grid, d.psi)?;
        Ok((bins, psi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauge_hits_target() {
        let w = [1.0 / 3.0, 2.0 / 3.0];
        for y in [[0.0, 0.0], [5.0, -3.0], [-20.0, 20.0]] {
            for ell in [0.01, 0.5, 0.85, 0.999] {
                let c = gauge(&w, &y, ell);
                let v: f64 = w.iter().zip(&y).map(|(wi, yi)| wi * sigmoid(yi + c)).sum();
                assert!((v - ell).abs() < 1e-13, "y={y:?} ell={ell} v={v}");
            }
        }
    }
}
