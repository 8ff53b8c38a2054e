//! Integrator, hybrid system and transfer operator against independent
//! references.

use std::sync::OnceLock;

use aaflow::flow_sim::{HybridOptions, HybridSystem};
use aaflow::model::Preset;
use aaflow::ode::{solve, OdeOptions};
use aaflow::operator::{
    build_ulam, cosine_similarity, derivatives_at_zero, lambda, leading_eigen, occupation, pressure_flow, pressure_induced, twist, UlamBase,
    UlamOptions,
};

fn system(p: Preset) -> HybridSystem {
    HybridSystem::new(&p.params(), HybridOptions::default()).unwrap()
}

fn clt_base() -> &'static (HybridSystem, UlamBase) {
    static BASE: OnceLock<(HybridSystem, UlamBase)> = OnceLock::new();
    BASE.get_or_init(|| {
        let sys = system(Preset::Clt);
        let base = build_ulam(&sys, &UlamOptions { resolution: 32, max_depth: 4, seed: 3, ..UlamOptions::default() }).unwrap();
        (sys, base)
    })
}

#[test]
fn ode_exponential_growth() {
    let opts = OdeOptions { tol: 1e-12, atol: 1e-14, ..OdeOptions::default() };
    let out = solve(|_, y: &[f64; 1]| [y[0]], 0.0, [1.0], 5.0, &opts, &[], |_| true).unwrap();
    assert_eq!(out.t, 5.0);
    assert!((out.y[0] / 5f64.exp() - 1.0).abs() < 1e-10, "{}", out.y[0]);
    assert!(out.event.is_none());
}

#[test]
fn ode_exponential_growth_f32() {
    let opts = OdeOptions { tol: 1e-6f32, atol: 1e-7, ..OdeOptions::default() };
    let out = solve(|_, y: &[f32; 1]| [y[0]], 0.0, [1.0], 2.0, &opts, &[], |_| true).unwrap();
    assert!((out.y[0] / 2f32.exp() - 1.0).abs() < 1e-4);
}

#[test]
fn ode_event_on_harmonic_oscillator() {
    // x = cos t first vanishes at pi/2.
    let opts = OdeOptions::default();
    let zero = |_: f64, y: &[f64; 2]| y[0];
    let out = solve(|_, y: &[f64; 2]| [y[1], -y[0]], 0.0, [1.0, 0.0], 10.0, &opts, &[&zero], |_| true).unwrap();
    assert_eq!(out.event, Some(0));
    assert!((out.t - std::f64::consts::FRAC_PI_2).abs() < 1e-8, "{}", out.t);
    assert!((out.y[1] + 1.0).abs() < 1e-8);
}

#[test]
fn ode_step_callback_can_stop() {
    let mut seen = 0;
    let out = solve(
        |_, y: &[f64; 1]| [-y[0]],
        0.0,
        [1.0],
        100.0,
        &OdeOptions::default(),
        &[],
        |_| {
            seen += 1;
            seen < 3
        },
    )
    .unwrap();
    assert_eq!(out.steps, 3);
    assert!(out.t < 100.0);
}

#[test]
fn mean_return_time_is_seed_independent() {
    let sys = system(Preset::Clt);
    let mean = |seed| {
        let recs = sys.srb_sample(seed, 1000, 400_000).unwrap();
        recs.iter().map(|r| r.tau).sum::<f64>() / recs.len() as f64
    };
    let (a, b) = (mean(1), mean(2));
    assert!((a / b - 1.0).abs() < 0.01, "{a} vs {b}");
}

#[test]
fn returns_are_consistent() {
    let sys = system(Preset::Stable);
    let recs = sys.srb_sample(5, 100, 20_000).unwrap();
    for w in recs.windows(2) {
        assert_eq!(w[0].end, w[1].start);
    }
    for r in &recs {
        assert!(r.r >= 1 && r.tau > 0.0 && r.psi_bar.is_finite(), "{r:?}");
    }
    // The closed-form passage agrees with stepping the section map.
    for r in recs.iter().filter(|r| r.r > 1).take(50) {
        let lit = sys.induced_return_literal(r.start, 1 << 40).unwrap();
        assert_eq!(lit.r, r.r);
        assert!((lit.tau / r.tau - 1.0).abs() < 1e-6, "{} vs {}", lit.tau, r.tau);
    }
}

#[test]
fn untwisted_operator_is_stochastic() {
    let (_, base) = clt_base();
    let e = leading_eigen(&twist(base, 0.0, 0.0).unwrap(), 1e-13).unwrap();
    assert!((e.lambda - 1.0).abs() < 1e-9 + base.leakage, "{}", e.lambda);
    assert!(e.left_vec.iter().all(|&v| v >= -1e-14));
}

#[test]
fn eigenvalue_decreases_in_u_below_exp() {
    let (_, base) = clt_base();
    let us = [0.0, 1e-3, 1e-2, 3e-2, 1e-1, 3e-1];
    let lams: Vec<f64> = us.iter().map(|&u| lambda(base, u, 0.0).unwrap()).collect();
    for (u, l) in us.iter().zip(&lams).skip(1) {
        assert!(*l <= (-u).exp() * (1.0 + 1e-12), "lambda({u}) = {l}");
    }
    assert!(lams.windows(2).all(|w| w[1] < w[0]));
    // ln lambda is convex in u.
    let logs: Vec<f64> = [0.0, 0.05, 0.1, 0.15, 0.2].iter().map(|&u| lambda(base, u, 0.0).unwrap().ln()).collect();
    assert!(logs.windows(3).all(|w| w[0] + w[2] - 2.0 * w[1] >= -1e-12));
}

#[test]
fn derivative_matches_finite_difference() {
    let (_, base) = clt_base();
    let d = derivatives_at_zero(base).unwrap();
    let h = 1e-6;
    let fd = (lambda(base, h, 0.0).unwrap() - lambda(base, -h, 0.0).unwrap()) / (2.0 * h);
    assert!((d.d_du / fd - 1.0).abs() < 1e-4, "{} vs {fd}", d.d_du);
}

#[test]
fn flow_pressure_is_increasing_and_convex() {
    let (_, base) = clt_base();
    let ss = [0.01, 0.02, 0.03, 0.04];
    let u0: Vec<f64> = ss.iter().map(|&s| pressure_flow(base, s).unwrap()).collect();
    assert!(u0.windows(2).all(|w| w[1] > w[0]), "{u0:?}");
    assert!(u0.windows(3).all(|w| w[0] + w[2] - 2.0 * w[1] >= -1e-10), "{u0:?}");
    for (&s, &u) in ss.iter().zip(&u0) {
        assert!((lambda(base, u, s).unwrap() - 1.0).abs() < 1e-9);
        assert!(u > 0.0 && u <= pressure_induced(base, s).unwrap());
    }
}

#[test]
fn left_eigenvector_matches_orbit_occupation() {
    let (sys, base) = clt_base();
    let e = leading_eigen(&twist(base, 0.0, 0.0).unwrap(), 1e-13).unwrap();
    let recs = sys.srb_sample(9, 1000, 1_000_000).unwrap();
    let occ = occupation(&base.partition, recs.iter().map(|r| r.start));
    let cos = cosine_similarity(&occ, &e.left_vec);
    assert!(cos >= 0.99, "cosine {cos}");
}
