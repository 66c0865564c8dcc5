//! Randomized residual suite for the finite-difference identities.
//!
//! Each identity is an exact rearrangement of finitely many function
//! values, so the measured residual is pure floating-point noise. Residuals
//! are reported relative to one plus the total absolute mass of the terms
//! entering either side, the natural backward-error denominator.

use ntk_core::activations::ActivationSpec;
use ntk_core::findiff::{
    chain_shift_check, check_kh_identity, check_leibniz_identity, kh_coefficients,
    uniform_nth_difference,
};
use ntk_core::gauss::SeededSampler;

/// Worst-case outcome of one identity over all trials.
#[derive(Clone, Debug)]
pub struct CheckSummary {
    pub name: &'static str,
    pub trials: usize,
    pub worst_relative_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Relative tolerance every identity must satisfy on every trial.
pub const IDENTITY_TOLERANCE: f64 = 1e-9;

enum Probe {
    Named(ActivationSpec),
    Poly(Vec<f64>),
}

impl Probe {
    fn eval(&self, x: f64) -> f64 {
        match self {
            Probe::Named(spec) => spec.eval(x),
            Probe::Poly(coeffs) => {
                let mut acc = 0.0;
                for &c in coeffs.iter().rev() {
                    acc = acc * x + c;
                }
                acc
            }
        }
    }
}

/// Cycles through smooth named functions and random polynomials so the
/// identities are exercised on both bounded and rapidly growing inputs.
fn draw_probe(index: usize, sampler: &mut SeededSampler) -> Probe {
    match index % 4 {
        0 => Probe::Named(ActivationSpec::tanh()),
        1 => Probe::Named(ActivationSpec::erf()),
        2 => Probe::Named(ActivationSpec::gelu()),
        _ => {
            let degree = (sampler.next_u64() % 6) as usize;
            let coeffs = (0..=degree).map(|_| sampler.uniform_in(-2.0, 2.0)).collect();
            Probe::Poly(coeffs)
        }
    }
}

fn binomial_row(n: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    for _ in 0..n {
        let mut next = vec![1.0];
        for w in row.windows(2) {
            next.push(w[0] + w[1]);
        }
        next.push(1.0);
        row = next;
    }
    row
}

/// Sum of |C(n,i) * f(x + i*h)|: the cancellation mass hidden inside one
/// order-n difference.
fn difference_mass(f: &dyn Fn(f64) -> f64, x: f64, h: f64, n: usize) -> f64 {
    binomial_row(n)
        .iter()
        .enumerate()
        .map(|(i, &c)| c * f(x + i as f64 * h).abs())
        .sum()
}

fn summary(name: &'static str, trials: usize, worst: f64) -> CheckSummary {
    CheckSummary {
        name,
        trials,
        worst_relative_residual: worst,
        tolerance: IDENTITY_TOLERANCE,
        pass: worst <= IDENTITY_TOLERANCE,
    }
}

fn step_rescaling_check(trials: usize, seed: u64) -> CheckSummary {
    let mut sampler = SeededSampler::new(seed, 1);
    let mut worst = 0.0f64;
    for t in 0..trials {
        let probe = draw_probe(t, &mut sampler);
        let f = |x: f64| probe.eval(x);
        let x = sampler.uniform_in(-2.0, 2.0);
        let h = sampler.uniform_in(0.05, 0.3);
        let n = 1 + (sampler.next_u64() % 6) as usize;
        let k = 1 + (sampler.next_u64() % 6) as usize;
        let residual = check_kh_identity(&f, x, h, n, k).expect("orders are in range");
        let coeffs = kh_coefficients(n, k).expect("orders are in range");
        let mut mass = difference_mass(&f, x, k as f64 * h, n);
        for (j, &c) in coeffs.iter().enumerate() {
            mass += c.abs() * difference_mass(&f, x + j as f64 * h, h, n);
        }
        worst = worst.max(residual.abs() / (1.0 + mass));
    }
    summary("step_rescaling", trials, worst)
}

fn product_rule_check(trials: usize, seed: u64) -> CheckSummary {
    let mut sampler = SeededSampler::new(seed, 2);
    let mut worst = 0.0f64;
    for t in 0..trials {
        let probe = draw_probe(t, &mut sampler);
        let g = |x: f64| probe.eval(x);
        let product = |x: f64| x * probe.eval(x);
        let x = sampler.uniform_in(-2.0, 2.0);
        let h = sampler.uniform_in(0.05, 0.3);
        let n = 1 + (sampler.next_u64() % 5) as usize;
        let residual = check_leibniz_identity(&g, x, h, n);
        let mass = difference_mass(&product, x, h, n + 1)
            + x.abs() * difference_mass(&g, x, h, n + 1)
            + (n + 1) as f64 * h * difference_mass(&g, x + h, h, n);
        worst = worst.max(residual.abs() / (1.0 + mass));
    }
    summary("product_rule", trials, worst)
}

fn chain_shift_check_suite(trials: usize, seed: u64) -> CheckSummary {
    let mut sampler = SeededSampler::new(seed, 3);
    let mut worst = 0.0f64;
    for t in 0..trials {
        let probe = draw_probe(t, &mut sampler);
        let f = |x: f64| probe.eval(x);
        let alpha = sampler.uniform_in(-2.0, 2.0);
        let beta = sampler.uniform_in(-2.0, 2.0);
        let x = sampler.uniform_in(-2.0, 2.0);
        let y = sampler.uniform_in(-2.0, 2.0);
        let h = sampler.uniform_in(0.05, 0.3);
        let residual = chain_shift_check(&f, alpha, beta, x, y, h);
        let base = alpha * x + beta * y;
        let mass = f(alpha * x + beta * (y + h)).abs()
            + 2.0 * f(base).abs()
            + f(base + beta * h).abs();
        worst = worst.max(residual.abs() / (1.0 + mass));
    }
    summary("chain_shift", trials, worst)
}

/// Differences one order past the degree kill polynomials identically;
/// the measured residual is the floor the whole suite rides on.
fn polynomial_annihilation_check(trials: usize, seed: u64) -> CheckSummary {
    let mut sampler = SeededSampler::new(seed, 4);
    let mut worst = 0.0f64;
    for t in 0..trials {
        let degree = t % 6;
        let coeffs: Vec<f64> = (0..=degree).map(|_| sampler.uniform_in(-2.0, 2.0)).collect();
        let probe = Probe::Poly(coeffs);
        let f = |x: f64| probe.eval(x);
        let x = sampler.uniform_in(-2.0, 2.0);
        let h = sampler.uniform_in(0.05, 0.3);
        let value = uniform_nth_difference(&f, x, h, degree + 1);
        let mass = difference_mass(&f, x, h, degree + 1);
        worst = worst.max(value.abs() / (1.0 + mass));
    }
    summary("polynomial_annihilation", trials, worst)
}

/// Runs every identity family for the given trial count and seed.
pub fn identity_suite(trials: usize, seed: u64) -> Vec<CheckSummary> {
    vec![
        step_rescaling_check(trials, seed),
        product_rule_check(trials, seed),
        chain_shift_check_suite(trials, seed),
        polynomial_annihilation_check(trials, seed),
    ]
}
