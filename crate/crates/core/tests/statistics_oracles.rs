//! Estimators against samples with known laws.

use std::f64::consts::PI;

use aaflow::statistics::{
    fit_gaussian, fit_stable, ks_distance, normal_cdf, stable_cdf, stable_quantile, tail_fit, variance_estimate, StableSpec, TailMethod,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pareto(beta: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (1.0 - rng.gen::<f64>()).powf(-1.0 / beta)).collect()
}

/// Chambers-Mallows-Stuck draw of the totally right-skewed law with
/// characteristic exponent `-(sigma|t|)^alpha (1 - i sign(t) tan(pi alpha/2)) + i mu t`.
fn cms(spec: &StableSpec, rng: &mut ChaCha8Rng) -> f64 {
    let a = spec.alpha;
    let t = (PI * a / 2.0).tan();
    let b = t.atan() / a;
    let s = (1.0 + t * t).powf(1.0 / (2.0 * a));
    let v = PI * (rng.gen::<f64>() - 0.5);
    let w = -(1.0 - rng.gen::<f64>()).ln();
    let x = s * (a * (v + b)).sin() / v.cos().powf(1.0 / a) * ((v - a * (v + b)).cos() / w).powf((1.0 - a) / a);
    spec.scale * x + spec.location
}

#[test]
fn hill_recovers_pareto_index() {
    for beta in [1.5, 2.0, 3.0] {
        let xs = pareto(beta, 1_000_000, 3);
        let hill = tail_fit(&xs, TailMethod::Hill, 1e-2).unwrap();
        assert!((hill.beta_hat / beta - 1.0).abs() < 0.03, "beta {beta}: hill {}", hill.beta_hat);
        let ll = tail_fit(&xs, TailMethod::LogLog, 1e-2).unwrap();
        assert!((ll.beta_hat - beta).abs() < 0.1, "beta {beta}: loglog {}", ll.beta_hat);
        // Exact Pareto: P(X > t) = t^-beta, so c = 1.
        assert!((ll.c_hat - 1.0).abs() < 0.2);
    }
}

#[test]
fn tail_fit_rejects_small_samples() {
    assert!(tail_fit(&pareto(2.0, 500, 1), TailMethod::Hill, 0.1).is_err());
    assert!(tail_fit(&pareto(2.0, 20_000, 1), TailMethod::Hill, 0.5).is_err());
}

#[test]
fn stable_cdf_matches_cms_sampler() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for alpha in [1.2, 1.5, 1.8] {
        let spec = StableSpec { alpha, scale: 1.3, location: 0.4 };
        let xs: Vec<f64> = (0..40_000).map(|_| cms(&spec, &mut rng)).collect();
        let d = ks_distance(&xs, |x| stable_cdf(&spec, x)).unwrap();
        // Kolmogorov 1% critical value is 1.63 / sqrt(n) = 0.0081.
        assert!(d < 0.0081, "alpha {alpha}: KS {d}");
    }
}

#[test]
fn stable_alpha_two_is_gaussian() {
    let spec = StableSpec { alpha: 2.0, scale: 0.7, location: -0.2 };
    let sd = 0.7 * 2f64.sqrt();
    for x in [-3.0, -1.0, -0.2, 0.5, 2.0] {
        let want = normal_cdf((x + 0.2) / sd);
        assert!((stable_cdf(&spec, x).unwrap() - want).abs() < 1e-8, "x = {x}");
    }
}

#[test]
fn stable_quantile_inverts_cdf() {
    let spec = StableSpec { alpha: 1.5, scale: 1.0, location: 0.0 };
    for p in [1e-4, 0.05, 0.5, 0.9, 0.999] {
        let q = stable_quantile(&spec, p).unwrap();
        assert!((stable_cdf(&spec, q).unwrap() - p).abs() < 1e-8, "p = {p}");
    }
}

#[test]
fn stable_right_tail_constant() {
    // P(X > x) ~ 2 Gamma(alpha) sin(pi alpha / 2) / pi * x^-alpha.
    let spec = StableSpec { alpha: 1.5, scale: 1.0, location: 0.0 };
    let c = 2.0 * libm::tgamma(1.5) * (PI * 0.75).sin() / PI;
    let x = 250.0;
    let tail = 1.0 - stable_cdf(&spec, x).unwrap();
    assert!((tail / (c * x.powf(-1.5)) - 1.0).abs() < 0.02, "tail {tail}");
}

#[test]
fn stable_fit_recovers_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = StableSpec { alpha: 1.5, scale: 2.0, location: 1.0 };
    let xs: Vec<f64> = (0..10_000).map(|_| cms(&spec, &mut rng)).collect();
    let (fit, ks) = fit_stable(&xs).unwrap();
    assert!((fit.alpha - 1.5).abs() < 0.1, "{fit:?}");
    assert!((fit.scale / 2.0 - 1.0).abs() < 0.1, "{fit:?}");
    assert!(ks < 0.02, "ks {ks}");
}

#[test]
fn gaussian_fit_on_normal_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // Box-Muller.
    let xs: Vec<f64> = (0..20_000)
        .map(|_| {
            let (u, v): (f64, f64) = (1.0 - rng.gen::<f64>(), rng.gen());
            3.0 + 0.5 * (-2.0 * u.ln()).sqrt() * (2.0 * PI * v).cos()
        })
        .collect();
    let (mu, sigma, ks) = fit_gaussian(&xs).unwrap();
    assert!((mu - 3.0).abs() < 0.02 && (sigma - 0.5).abs() < 0.02);
    assert!(ks < 0.012);
}

#[test]
fn green_kubo_on_ar1() {
    // x_t = 0.5 x_{t-1} + e_t with unit innovations: long-run variance 1 / (1 - 0.5)^2 = 4.
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut x = 0.0;
    let xs: Vec<f64> = (0..400_000)
        .map(|_| {
            let (u, v): (f64, f64) = (1.0 - rng.gen::<f64>(), rng.gen());
            x = 0.5 * x + (-2.0 * u.ln()).sqrt() * (2.0 * PI * v).cos();
            x
        })
        .collect();
    let s2 = variance_estimate(&xs, 1.0).unwrap();
    assert!((s2 / 4.0 - 1.0).abs() < 0.05, "long-run variance {s2}");
    let per_time = variance_estimate(&xs, 2.0).unwrap();
    assert!((per_time - s2 / 2.0).abs() < 1e-12);
}

#[test]
fn green_kubo_on_iid() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xs: Vec<f64> = (0..200_000).map(|_| rng.gen::<f64>()).collect();
    let s2 = variance_estimate(&xs, 1.0).unwrap();
    assert!((s2 * 12.0 - 1.0).abs() < 0.05, "{s2}");
}
