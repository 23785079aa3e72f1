use pool_ldp::ldp::{bernoulli_kl, entropy_g, g_shift, jx_ou};
use pool_ldp::riccati::density_curve;
use pool_ldp::{GridPath, NameType, TimeGrid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn p1() -> NameType {
    NameType {
        alpha: 1.0,
        lambda_bar: 1.0,
        sigma: 0.9,
        beta_c: 3.0,
        beta_s: 10.0,
        lambda0: 0.5,
    }
}

/// Hand-rolled discrete relative entropy, independent of the library's.
fn kl(u: &[f64], rest: f64, m: &[f64], survival: f64) -> f64 {
    let term = |a: f64, b: f64| if a > 0.0 { a * (a / b).ln() } else { 0.0 };
    u.iter().zip(m).map(|(a, b)| term(*a, *b)).sum::<f64>() + term(rest, survival)
}

#[test]
fn inner_minimum_is_bernoulli_kl_by_brute_force() {
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let phi = GridPath::from_fn(grid, |t| 0.3 * t);
    let zero = GridPath::zeros(grid);
    let f = density_curve(&p1(), &phi, &zero).unwrap();
    let pbar = f.default_probability();
    for ell in [0.2, 0.6, 0.85] {
        let n = 50;
        let mut best = f64::INFINITY;
        for a in 0..=n {
            for b in 0..=n - a {
                for c in 0..=n - a - b {
                    let d = n - a - b - c;
                    let u: Vec<f64> = [a, b, c, d].iter().map(|k| ell * *k as f64 / n as f64).collect();
                    best = best.min(kl(&u, 1.0 - ell, &f.masses, f.survival_mass));
                }
            }
        }
        let target = bernoulli_kl(ell, pbar);
        assert!(best >= target - 1e-12, "grid beat the bound: {best} < {target}");
        assert!(best - target < 2e-3, "ell={ell}: brute force {best} vs {target}");

        let proportional: Vec<f64> = f.masses.iter().map(|m| ell * m / pbar).collect();
        let xi = GridPath::from_increments(grid, &proportional).unwrap();
        assert!((entropy_g(&xi, &f).unwrap() - target).abs() < 1e-14);
    }
}

#[test]
fn ou_action_converges_quadratically() {
    // ψ(t) = t², ψ' + γψ = 2t + γt², J = ½(4/3 + γ + γ²/5)
    for gamma in [0.1, 1.0] {
        let exact = 0.5 * (4.0 / 3.0 + gamma + gamma * gamma / 5.0);
        let err = |m: usize| {
            let grid = TimeGrid::new(1.0, m).unwrap();
            (jx_ou(&GridPath::from_fn(grid, |t| t * t), gamma) - exact).abs()
        };
        let ratio = err(50) / err(100);
        assert!((3.5..4.5).contains(&ratio), "gamma={gamma} ratio {ratio}");
    }
}

/// g(ξ, f_{φ̄,0}) = g(ξ, f_{0,0}) - [∫ g_ν dξ + g_ν(★)(1 - ξ(T))] with
/// `g_ν` the log density ratio, for smooth random loss paths and ξ.
fn shift_identity_gap(rng: &mut ChaCha8Rng, steps: usize) -> f64 {
    let p = NameType {
        alpha: rng.random_range(0.0..5.0),
        lambda_bar: rng.random_range(0.0..2.0),
        sigma: rng.random_range(0.0..1.5),
        beta_c: rng.random_range(0.0..5.0),
        beta_s: 0.0,
        lambda0: rng.random_range(0.1..1.5),
    };
    let grid = TimeGrid::new(1.0, steps).unwrap();
    let (a, r) = (rng.random_range(0.05..0.9), rng.random_range(0.2..4.0));
    let phi = GridPath::from_fn(grid, |t| a * (1.0 - (-r * t).exp()) / (1.0 - (-r).exp()));
    let (b, s) = (rng.random_range(0.05..0.95), rng.random_range(0.5..2.0));
    let xi = GridPath::from_fn(grid, |t| b * t.powf(s));
    let zero = GridPath::zeros(grid);

    let twisted = entropy_g(&xi, &density_curve(&p, &phi, &zero).unwrap()).unwrap();
    let plain = entropy_g(&xi, &density_curve(&p, &zero, &zero).unwrap()).unwrap();
    let shift = g_shift(&p, &phi, grid).unwrap();
    let inc = xi.increments();
    let integral: f64 = (0..steps)
        .map(|k| 0.5 * (shift.at_nodes[k] + shift.at_nodes[k + 1]) * inc[k])
        .sum();
    let correction = integral + shift.at_star * (1.0 - xi.terminal());
    (twisted - (plain - correction)).abs()
}

#[test]
fn entropy_shift_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..50 {
        let gap = shift_identity_gap(&mut rng, 2000);
        assert!(gap < 1e-6, "gap {gap}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gibbs_inequality(
        weights in prop::collection::vec(0.0..1.0f64, 20),
        ell in 0.01..0.99f64,
        beta_c in 0.0..5.0f64,
    ) {
        let total: f64 = weights.iter().sum::<f64>().max(1e-9);
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let inc: Vec<f64> = weights.iter().map(|w| ell * w / total).collect();
        let xi = GridPath::from_increments(grid, &inc).unwrap();
        let p = NameType { beta_c, ..p1() };
        let phi = GridPath::from_fn(grid, |t| 0.5 * t);
        let f = density_curve(&p, &phi, &GridPath::zeros(grid)).unwrap();
        let g = entropy_g(&xi, &f).unwrap();
        prop_assert!(g >= -1e-14);
        prop_assert!(g >= bernoulli_kl(xi.terminal(), f.default_probability()) - 1e-12);
    }
}
