//! The experiment checks run by the acceptance suite and the `full-report`
//! command. Each check returns its measured values and a verdict; sample
//! sizes come from a [`CheckScale`].

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::flow_sim::{HybridOptions, HybridSystem};
use crate::io::write_returns;
use crate::local_dynamics::{rk_orbit, LocalSolver, PassageTable};
use crate::model::{derive_constants, first_integral, FlowParams, HomogeneousSpec, Preset};
use crate::operator::{
    build_ulam, derivatives_at_zero, eigen_curve_u, lambda, log_grid, phase_transition_fit, verify_relpres, CurveModel, EigenCurve, PowerFit,
    RelPresReport, UlamOptions,
};
use crate::statistics::{
    least_squares, limit_experiment, tail_fit, variance_estimate, LimitCase, LimitFit, LimitOptions, LimitReport, Observable, TailMethod,
};

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub id: u32,
    pub name: String,
    /// Short description of the property checked.
    pub label: String,
    pub target: String,
    pub measured: BTreeMap<String, f64>,
    pub passed: bool,
}

impl Check {
    pub fn new(id: u32, name: &str, label: &str, target: &str) -> Self {
        Self { id, name: name.into(), label: label.into(), target: target.into(), measured: BTreeMap::new(), passed: true }
    }

    pub fn record(&mut self, key: impl Into<String>, value: f64) {
        self.measured.insert(key.into(), value);
    }

    /// Records `value` and folds `ok` into the verdict.
    pub fn expect(&mut self, key: impl Into<String>, value: f64, ok: bool) {
        self.record(key, value);
        self.passed &= ok;
    }

    /// One-line summary.
    pub fn line(&self) -> String {
        let vals: Vec<String> = self.measured.iter().map(|(k, v)| format!("{k}={v:.4e}")).collect();
        format!("[{:>2}] {} {} | target: {} | {}", self.id, if self.passed { "PASS" } else { "FAIL" }, self.name, self.target, vals.join(" "))
    }
}

/// Sample sizes of the checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckScale {
    pub seed: u64,
    pub identity_draws: usize,
    pub integral_entries: usize,
    pub oracle_grid: usize,
    pub tail_returns: usize,
    pub clt_t: f64,
    pub clt_n: usize,
    pub stable_t: f64,
    pub stable_n: usize,
    pub nonstd_t: f64,
    pub nonstd_n: usize,
    pub ulam_resolution: usize,
    pub ulam_depth: u32,
    pub srb_returns: usize,
    pub determinism_returns: usize,
}

impl Default for CheckScale {
    fn default() -> Self {
        Self::full()
    }
}

impl CheckScale {
    /// The sizes of the acceptance criteria.
    pub fn full() -> Self {
        Self {
            seed: 7,
            identity_draws: 1000,
            integral_entries: 100,
            oracle_grid: 20,
            tail_returns: 10_000_000,
            clt_t: 1e4,
            clt_n: 10_000,
            stable_t: 1e5,
            stable_n: 10_000,
            nonstd_t: 1e5,
            nonstd_n: 10_000,
            ulam_resolution: 128,
            ulam_depth: 9,
            srb_returns: 4_000_000,
            determinism_returns: 100_000,
        }
    }

    /// Reduced sizes for a run of a few minutes.
    pub fn desk() -> Self {
        Self {
            integral_entries: 20,
            oracle_grid: 8,
            tail_returns: 2_000_000,
            clt_n: 2_000,
            stable_t: 1e4,
            stable_n: 2_000,
            nonstd_t: 1e4,
            nonstd_n: 2_000,
            ulam_resolution: 64,
            ulam_depth: 8,
            srb_returns: 1_000_000,
            determinism_returns: 20_000,
            ..Self::full()
        }
    }

    /// Sizes for a run of seconds; the verdicts are not meaningful.
    pub fn smoke() -> Self {
        Self {
            identity_draws: 100,
            integral_entries: 4,
            oracle_grid: 4,
            tail_returns: 1_000_000,
            clt_t: 1e3,
            clt_n: 200,
            stable_t: 1e3,
            stable_n: 200,
            nonstd_t: 1e3,
            nonstd_n: 200,
            ulam_resolution: 32,
            ulam_depth: 4,
            srb_returns: 100_000,
            determinism_returns: 10_000,
            ..Self::full()
        }
    }
}

fn system(preset: Preset) -> Result<HybridSystem> {
    HybridSystem::new(&preset.params(), HybridOptions::default())
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

/// Derived-constant identities on random admissible parameters.
pub fn derived_identities(scale: &CheckScale) -> Result<Check> {
    let mut c = Check::new(1, "derived constants", "closed-form exponent identities on random parameters", "max relative error < 1e-12");
    let mut rng = ChaCha8Rng::seed_from_u64(scale.seed);
    let base = Preset::Stable.params::<f64>();
    let mut worst: f64 = 0.0;
    let mut draws = 0usize;
    while draws < scale.identity_draws {
        let p = FlowParams {
            a0: rng.gen_range(0.05..5.0),
            b0: rng.gen_range(0.05..5.0),
            b2: rng.gen_range(0.05..5.0),
            a2: rng.gen_range(0.05..10.0),
            ..base
        };
        if !(p.a2 > p.b2) || p.delta().abs() < 1e-3 {
            continue;
        }
        draws += 1;
        let d = derive_constants(&p)?;
        let two = 2.0;
        for (lhs, rhs) in [
            (d.beta0, (d.u + d.v + two) / (two * d.v)),
            (d.beta, (d.u + d.v + two) / (two * d.u)),
            (p.a0 * d.u / (p.b2 * d.v), d.c0 / d.c2),
        ] {
            worst = worst.max(rel(lhs, rhs));
        }
    }
    c.record("draws", draws as f64);
    c.expect("max_rel_error", worst, worst < 1e-12);
    Ok(c)
}

/// Entry abscissa for a passage of length `t` at height `eta`.
fn entry_for(solver: &LocalSolver<f64>, eta: f64, t: f64) -> Result<f64> {
    Ok(solver.exit_point(eta, t)?.xi)
}

/// Conservation of the first integral along Runge-Kutta orbits.
pub fn first_integral_conservation(scale: &CheckScale) -> Result<Check> {
    let mut c = Check::new(2, "first integral", "first integral conserved along Runge-Kutta passages (tol 1e-10)", "max |L(t)/L(0) - 1| < 1e-6");
    let mut rng = ChaCha8Rng::seed_from_u64(scale.seed);
    rng.set_stream(2);
    for preset in Preset::ALL {
        let p = preset.params::<f64>();
        let dc = derive_constants(&p)?;
        let solver = LocalSolver::new(&p)?;
        let mut worst: f64 = 0.0;
        for _ in 0..scale.integral_entries {
            let eta = rng.gen_range(0.05..1.0) * p.eps;
            let t = 10f64.powf(rng.gen_range(0.0..4.0));
            let xi = entry_for(&solver, eta, t)?;
            let l0 = first_integral(&p, &dc, xi, eta)?;
            let tr = rk_orbit(&p, [xi, eta, 0.0], 2.0 * t + 10.0, 1e-10, &[])?;
            for (_, s) in &tr.samples {
                worst = worst.max((first_integral(&p, &dc, s[0], s[1])? / l0 - 1.0).abs());
            }
        }
        c.expect(format!("{}_max_drift", preset.name()), worst, worst < 1e-6);
    }
    Ok(c)
}

/// Semi-analytic passages against Runge-Kutta on an entry grid.
pub fn passage_oracle(scale: &CheckScale) -> Result<Check> {
    let mut c = Check::new(3, "passage oracle", "tabulated passage time and weight integral vs Runge-Kutta, T <= 1e4", "relative error < 1e-3");
    let n = scale.oracle_grid;
    for preset in Preset::ALL {
        let p = preset.params::<f64>();
        let table = PassageTable::new(LocalSolver::new(&p)?)?;
        let (mut wt, mut wth): (f64, f64) = (0.0, 0.0);
        for i in 0..n {
            let eta = p.eps * (0.1 + 0.9 * i as f64 / (n - 1).max(1) as f64);
            let hi = 0.5 * p.eps;
            let lo = entry_for(table.solver(), eta, 1e4)?.min(hi);
            for j in 0..n {
                let xi = lo * (hi / lo).powf(j as f64 / (n - 1).max(1) as f64);
                let s = table.passage(xi, eta)?;
                let tr = rk_orbit(&p, [xi, eta, 0.0], 2.0 * s.passage.t + 10.0, 1e-11, &[])?;
                let (t_rk, state) = tr.exit.expect("passage leaves the chart");
                wt = wt.max(rel(s.passage.t, t_rk));
                let theta_rk = state[2] - t_rk;
                wth = wth.max(rel(s.theta_w, theta_rk));
            }
        }
        c.expect(format!("{}_time_rel", preset.name()), wt, wt < 1e-3);
        c.expect(format!("{}_theta_rel", preset.name()), wth, wth < 1e-3);
    }
    Ok(c)
}

/// Entry heights used by the asymptotic checks.
pub const ETA_GRID: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

/// `xi(eta, T) T^beta / xi0(eta)` at `T = 1e4`.
pub fn entry_asymptotics(_scale: &CheckScale) -> Result<Check> {
    let mut c = Check::new(4, "entry asymptotics", "entry abscissa scaling xi(eta,T) T^beta / xi0(eta) at T = 1e4", "ratio in [0.95, 1.05]");
    let t = 1e4;
    for preset in Preset::ALL {
        let p = preset.params::<f64>();
        let solver = LocalSolver::new(&p)?;
        let beta = solver.constants().beta;
        let (mut lo, mut hi): (f64, f64) = (f64::INFINITY, 0.0);
        for eta in ETA_GRID.map(|e| e * p.eps) {
            let r = entry_for(&solver, eta, t)? * t.powf(beta) / solver.xi_zero(eta);
            lo = lo.min(r);
            hi = hi.max(r);
        }
        c.expect(format!("{}_min", preset.name()), lo, lo >= 0.95);
        c.expect(format!("{}_max", preset.name()), hi, hi <= 1.05);
    }
    Ok(c)
}

/// Growth regimes of `Theta(T)` for weights of degree 1, 2 and 3.
pub fn theta_regimes(_scale: &CheckScale) -> Result<Check> {
    let mut c = Check::new(
        5,
        "theta regimes",
        "weight integral growth: power 1 - rho/2 (rho=1), log T (rho=2), saturation (rho=3)",
        "slope 0.5 +- 0.05; Theta/log T spread <= 10% on [1e2,1e4]; Theta(1e4)/limit within 2%",
    );
    let grid = log_grid(1e2, 1e4, 9);
    for preset in Preset::ALL {
        let p = preset.params::<f64>();
        let solver = LocalSolver::new(&p)?;
        let eta = 0.5 * p.eps;
        let name = preset.name();
        let w1 = HomogeneousSpec::radial(1.0, 1.0);
        let th: Vec<f64> = grid.iter().map(|&t| solver.theta_integral(&w1, eta, t)).collect::<Result<_>>()?;
        let xs: Vec<f64> = grid.iter().map(|t| t.ln()).collect();
        let ys: Vec<f64> = th.iter().map(|v| v.ln()).collect();
        let (slope, _, _) = least_squares(&xs, &ys)?;
        c.expect(format!("{name}_rho1_slope"), slope, (slope - 0.5).abs() <= 0.05);

        let w2 = HomogeneousSpec::radial(2.0, 1.0);
        let per_log: Vec<f64> = grid.iter().map(|&t| Ok(solver.theta_integral(&w2, eta, t)? / t.ln())).collect::<Result<_>>()?;
        let (lo, hi) = per_log.iter().fold((f64::INFINITY, 0f64), |(a, b), &v| (a.min(v), b.max(v)));
        let spread = hi / lo - 1.0;
        c.expect(format!("{name}_rho2_spread"), spread, spread <= 0.10);
        let c2 = solver.theta_asymptotic_constant(&w2, eta)?.constant;
        c.record(format!("{name}_rho2_ratio_to_limit"), per_log[grid.len() - 1] / c2);

        let w3 = HomogeneousSpec::radial(3.0, 1.0);
        let limit = solver.theta_asymptotic_constant(&w3, eta)?.constant;
        let r3 = solver.theta_integral(&w3, eta, 1e4)? / limit;
        c.expect(format!("{name}_rho3_ratio"), r3, (r3 - 1.0).abs() <= 0.02);
    }
    Ok(c)
}

/// Roofs and return counts of one long orbit.
pub struct RoofSample {
    pub preset: Preset,
    pub tau: Vec<f64>,
    pub r: Vec<u64>,
}

pub fn roof_sample(preset: Preset, scale: &CheckScale) -> Result<RoofSample> {
    let sys = system(preset)?;
    let mut orbit = sys.orbit(scale.seed, 0, 10_000)?;
    let mut tau = Vec::with_capacity(scale.tail_returns);
    let mut r = Vec::with_capacity(scale.tail_returns);
    for _ in 0..scale.tail_returns {
        let rec = orbit.next_record()?;
        tau.push(rec.tau);
        r.push(rec.r);
    }
    Ok(RoofSample { preset, tau, r })
}

/// Fraction of order statistics used by the tail fits.
pub const TAIL_K_FRAC: f64 = 1e-3;

/// Roof tail exponent by Hill and log-log survival fits, for each
/// `(name, roofs, beta)`.
pub fn tail_check(entries: &[(&str, &[f64], f64)], k_frac: f64) -> Result<Check> {
    let mut c = Check::new(
        6,
        "roof tails",
        "tail exponent of the return time: Hill and survival slope over the top two decades",
        "Hill within 10% of beta; slope -beta +- 0.1",
    );
    for &(name, tau, beta) in entries {
        let hill = tail_fit(tau, TailMethod::Hill, k_frac)?;
        let ll = tail_fit(tau, TailMethod::LogLog, k_frac)?;
        c.record(format!("{name}_beta"), beta);
        c.expect(format!("{name}_hill"), hill.beta_hat, rel(hill.beta_hat, beta) <= 0.10);
        c.expect(format!("{name}_loglog_slope"), -ll.beta_hat, (ll.beta_hat - beta).abs() <= 0.1);
    }
    Ok(c)
}

pub fn roof_tails(samples: &[RoofSample]) -> Result<Check> {
    let entries: Vec<(&str, &[f64], f64)> =
        samples.iter().map(|s| Ok((s.preset.name(), &s.tau[..], derive_constants(&s.preset.params::<f64>())?.beta))).collect::<Result<_>>()?;
    tail_check(&entries, TAIL_K_FRAC)
}

/// Oscillation `sup - inf` of the roof on `{r = k}` for each `k` in range
/// with at least two samples.
pub fn roof_oscillation(tau: &[f64], r: &[u64], k_lo: u64, k_hi: u64) -> Vec<(u64, f64)> {
    let len = (k_hi - k_lo + 1) as usize;
    let mut lo = vec![f64::INFINITY; len];
    let mut hi = vec![f64::NEG_INFINITY; len];
    let mut count = vec![0usize; len];
    for (&t, &k) in tau.iter().zip(r) {
        if (k_lo..=k_hi).contains(&k) {
            let i = (k - k_lo) as usize;
            lo[i] = lo[i].min(t);
            hi[i] = hi[i].max(t);
            count[i] += 1;
        }
    }
    (0..len).filter(|&i| count[i] >= 2).map(|i| (k_lo + i as u64, hi[i] - lo[i])).collect()
}

/// Bounded oscillation of the roof on the level sets of `r`: the largest
/// oscillation over `k` in `[100, 1000]` may exceed the one over
/// `[10, 100)` by at most 50%.
pub fn roof_level_oscillation(samples: &[RoofSample]) -> Result<Check> {
    let mut c = Check::new(
        7,
        "roof oscillation",
        "sup - inf of the return time on {r = k}, k in [10, 1e3], is bounded independently of k",
        "max over [100,1e3] <= 1.5 x max over [10,100)",
    );
    for s in samples {
        let osc = roof_oscillation(&s.tau, &s.r, 10, 1000);
        let first = osc.iter().filter(|(k, _)| *k < 100).fold(0f64, |m, (_, o)| m.max(*o));
        let second = osc.iter().filter(|(k, _)| *k >= 100).fold(0f64, |m, (_, o)| m.max(*o));
        let name = s.preset.name();
        c.record(format!("{name}_osc_10_100"), first);
        c.record(format!("{name}_osc_100_1000"), second);
        c.record(format!("{name}_levels"), osc.len() as f64);
        c.expect(format!("{name}_ratio"), second / first, first > 0.0 && second <= 1.5 * first);
    }
    Ok(c)
}

/// Verdict on a limit experiment; the targets depend on its case.
pub fn limit_check(r: &LimitReport, beta: f64, kappa: f64) -> Check {
    let mut c = match r.case {
        LimitCase::Clt => Check::new(8, "clt limit", "normalised flow sums vs N(0, Green-Kubo variance)", "KS < threshold; |GK / direct variance - 1| < 0.1"),
        LimitCase::Stable => {
            Check::new(9, "stable limit", "normalised flow sums vs fitted totally skewed stable law", "KS < threshold; |alpha - beta/kappa| < 0.1")
        }
        LimitCase::NonstdClt => Check::new(10, "nonstandard clt", "sums scaled by sqrt(T log T) vs fitted Gaussian", "KS < threshold"),
    };
    c.record("t_flow", r.t_flow);
    c.record("samples", r.sample_count as f64);
    c.record("threshold", r.threshold);
    c.expect("ks", r.ks_distance, r.passed);
    match (r.case, r.fit) {
        (LimitCase::Clt, _) => {
            let gk = r.gk_variance.unwrap_or(f64::NAN);
            c.record("gk_variance", gk);
            c.record("direct_variance", r.direct_variance);
            c.expect("variance_rel_diff", rel(gk, r.direct_variance), rel(gk, r.direct_variance) < 0.1);
        }
        (LimitCase::Stable, fit) => {
            let alpha = match fit {
                LimitFit::Stable { spec, .. } => spec.alpha,
                _ => f64::NAN,
            };
            c.expect("alpha", alpha, (alpha - beta / kappa).abs() < 0.1);
        }
        (LimitCase::NonstdClt, LimitFit::Gaussian { variance, .. }) => c.record("variance", variance),
        (LimitCase::NonstdClt, _) => {}
    }
    c
}

fn preset_limit(preset: Preset, case: LimitCase, t: f64, n: usize, threshold: f64, seed: u64) -> Result<Check> {
    let sys = system(preset)?;
    let opts = LimitOptions::new(t, n, seed, threshold);
    let r = limit_experiment(&sys, &Observable::default(), case, &opts)?;
    let dc = sys.constants();
    Ok(limit_check(&r, dc.beta, dc.kappa))
}

/// Limit law of the flow Birkhoff sums in the standard CLT case.
pub fn clt_limit(scale: &CheckScale) -> Result<Check> {
    preset_limit(Preset::Clt, LimitCase::Clt, scale.clt_t, scale.clt_n, 0.02, scale.seed)
}

/// Stable limit law, index 1.5.
pub fn stable_limit(scale: &CheckScale) -> Result<Check> {
    preset_limit(Preset::Stable, LimitCase::Stable, scale.stable_t, scale.stable_n, 0.05, scale.seed)
}

/// Gaussian limit with `sqrt(T log T)` scaling at `beta = 2`.
pub fn nonstandard_limit(scale: &CheckScale) -> Result<Check> {
    preset_limit(Preset::Boundary, LimitCase::NonstdClt, scale.nonstd_t, scale.nonstd_n, 0.05, scale.seed)
}

/// Spectral quantities of one parameter set on its Ulam partition.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralStudy {
    pub name: String,
    pub beta: f64,
    pub kappa: f64,
    pub states: usize,
    pub samples: usize,
    pub leakage: f64,
    pub tau_hat: f64,
    pub psi_hat: f64,
    pub tau_mc: f64,
    pub psi_mc: f64,
    /// Long-run variance of the roof per return.
    pub roof_variance: f64,
    pub power_curve: EigenCurve,
    pub quadratic_curve: EigenCurve,
    /// Only at `beta = 2`.
    pub quadratic_log_curve: Option<EigenCurve>,
    /// `Pi(u) = E[1 - exp(-u tau)]` on the `u` grid.
    pub pi: Vec<f64>,
    /// `(u, |(1 - lambda) - Pi| / Pi)`, ascending in `u`.
    pub pi_gap: Vec<(f64, f64)>,
    pub relpres: RelPresReport,
    /// Only in the stable regime.
    pub phase: Option<PowerFit>,
}

/// Grid of the eigenvalue curves.
pub fn u_grid() -> Vec<f64> {
    log_grid(1e-4, 1e-1, 13)
}

/// Grid of the pressure relation.
pub fn s_grid() -> Vec<f64> {
    log_grid(1e-4, 1e-1, 7)
}

/// Grid of the phase-transition fit.
pub fn phase_grid() -> Vec<f64> {
    log_grid(1e-3, 1e-1, 9)
}

/// Inputs of [`spectral_study_of`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSettings {
    pub ulam: UlamOptions,
    pub u_grid: Vec<f64>,
    pub s_grid: Vec<f64>,
    pub phase_grid: Vec<f64>,
    /// Returns of the Monte Carlo reference orbit.
    pub srb_returns: usize,
    pub seed: u64,
}

impl SpectralSettings {
    pub fn from_scale(scale: &CheckScale) -> Self {
        Self {
            ulam: UlamOptions { resolution: scale.ulam_resolution, max_depth: scale.ulam_depth, seed: scale.seed, ..UlamOptions::default() },
            u_grid: u_grid(),
            s_grid: s_grid(),
            phase_grid: phase_grid(),
            srb_returns: scale.srb_returns,
            seed: scale.seed,
        }
    }
}

pub fn spectral_study(preset: Preset, scale: &CheckScale) -> Result<SpectralStudy> {
    spectral_study_of(preset.name(), &system(preset)?, &SpectralSettings::from_scale(scale))
}

pub fn spectral_study_of(name: &str, sys: &HybridSystem, set: &SpectralSettings) -> Result<SpectralStudy> {
    let base = build_ulam(sys, &set.ulam)?;
    let d = derivatives_at_zero(&base)?;
    let mut orbit = sys.orbit(set.seed.wrapping_add(1), 0, 10_000)?;
    let mut taus = Vec::with_capacity(set.srb_returns);
    let mut psi_sum = 0.0;
    for _ in 0..set.srb_returns {
        let rec = orbit.next_record()?;
        taus.push(rec.tau);
        psi_sum += rec.psi_bar;
    }
    let n = taus.len() as f64;
    let tau_mc = taus.iter().sum::<f64>() / n;
    let psi_mc = psi_sum / n;
    let roof_variance = variance_estimate(&taus, 1.0).unwrap_or(f64::NAN);
    let power_curve = eigen_curve_u(&base, &set.u_grid, 0.0, CurveModel::PowerLaw)?;
    let quadratic_curve = eigen_curve_u(&base, &set.u_grid, 0.0, CurveModel::Quadratic)?;
    let boundary = (sys.constants().beta - 2.0).abs() <= 1e-9;
    let quadratic_log_curve = if boundary { Some(eigen_curve_u(&base, &set.u_grid, 0.0, CurveModel::QuadraticLog)?) } else { None };
    let pi: Vec<f64> = power_curve.points.iter().map(|p| taus.iter().map(|t| -(-p.u * t).exp_m1()).sum::<f64>() / n).collect();
    let pi_gap = power_curve.points.iter().zip(&pi).map(|(p, &pi)| (p.u, (p.one_minus_lambda - pi).abs() / pi)).collect();
    let relpres = verify_relpres(&base, &set.s_grid, tau_mc)?;
    let dc = sys.constants();
    let stable = LimitCase::classify(dc.beta, dc.kappa).ok() == Some(LimitCase::Stable);
    let phase = if stable { Some(phase_transition_fit(&base, &set.phase_grid, d.d_ds)?) } else { None };
    Ok(SpectralStudy {
        name: name.into(),
        beta: dc.beta,
        kappa: dc.kappa,
        states: base.states(),
        samples: base.samples.len(),
        leakage: base.leakage,
        tau_hat: -d.d_du,
        psi_hat: d.d_ds,
        tau_mc,
        psi_mc,
        roof_variance,
        power_curve,
        quadratic_curve,
        quadratic_log_curve,
        pi,
        pi_gap,
        relpres,
        phase,
    })
}

/// Mean of the quadratic-model constants over `u <= 1e-3`.
pub fn small_u_quadratic_constant(curve: &EigenCurve) -> f64 {
    let vals: Vec<f64> = curve.points.iter().zip(&curve.fit.local_constants).filter(|(p, _)| p.u <= 1e-3 * (1.0 + 1e-9)).map(|(_, c)| *c).collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

/// Eigenvalue asymptotics near `u = 0`.
pub fn eigenvalue_asymptotics(studies: &[SpectralStudy]) -> Result<Check> {
    let mut c = Check::new(
        11,
        "eigenvalue asymptotics",
        "leading eigenvalue of the twisted Ulam operator near u = 0",
        "-dlambda/du(0) = tau* +- 3%; exponent beta +- 0.1 (beta < 2) or 2 +- 0.1 with constant sigma^2/2 +- 15% (beta > 2); Pi gap < 0.05 at u=1e-3 and below its value at u=0.1",
    );
    for s in studies {
        let name = &s.name;
        c.expect(format!("{name}_tau_rel"), rel(s.tau_hat, s.tau_mc), rel(s.tau_hat, s.tau_mc) <= 0.03);
        let gap_at = |u: f64| s.pi_gap.iter().min_by(|a, b| (a.0 / u).ln().abs().total_cmp(&(b.0 / u).ln().abs())).map(|g| g.1).unwrap_or(f64::NAN);
        let (g3, g1) = (gap_at(1e-3), gap_at(1e-1));
        c.expect(format!("{name}_pi_gap_1e-3"), g3, g3 < 0.05 && g3 < g1);
        c.record(format!("{name}_pi_gap_1e-1"), g1);
        if s.beta < 2.0 - 1e-9 {
            let e = s.power_curve.fit.exponent;
            c.expect(format!("{name}_exponent"), e, (e - s.beta).abs() <= 0.1);
        } else if s.beta > 2.0 + 1e-9 {
            let e = s.quadratic_curve.fit.exponent;
            c.expect(format!("{name}_exponent"), e, (e - 2.0).abs() <= 0.1);
            let k = small_u_quadratic_constant(&s.quadratic_curve);
            let target = s.roof_variance / 2.0;
            c.record(format!("{name}_half_roof_variance"), target);
            c.expect(format!("{name}_quadratic_constant"), k, rel(k, target) <= 0.15);
        } else {
            c.record(format!("{name}_exponent"), s.power_curve.fit.exponent);
            if let Some(curve) = &s.quadratic_log_curve {
                c.record(format!("{name}_log_model_exponent"), curve.fit.exponent);
            }
        }
    }
    Ok(c)
}

/// Relation between the flow pressure and the induced pressure.
pub fn pressure_relation(studies: &[SpectralStudy]) -> Result<Check> {
    let mut c = Check::new(
        12,
        "pressure relation",
        "flow pressure u0(s) vs induced pressure / tau*, and the stable phase transition",
        "ratio in [0.95, 1.05] at s = 1e-3 with decreasing gap down to 1e-4; stable exponent beta/kappa +- 0.15",
    );
    for s in studies {
        let name = &s.name;
        let at = s.relpres.rows.iter().min_by(|a, b| (a.s / 1e-3).ln().abs().total_cmp(&(b.s / 1e-3).ln().abs())).map(|r| r.ratio).unwrap_or(f64::NAN);
        c.expect(format!("{name}_ratio_1e-3"), at, (0.95..=1.05).contains(&at));
        c.expect(format!("{name}_gap_decreasing"), s.relpres.gap_decreasing as u8 as f64, s.relpres.gap_decreasing);
        c.record(format!("{name}_psi_rel"), rel(s.psi_hat, s.psi_mc));
        if let Some(phase) = &s.phase {
            let target = s.beta / s.kappa;
            c.expect(format!("{name}_phase_exponent"), phase.exponent, (phase.exponent - target).abs() <= 0.15);
        }
    }
    Ok(c)
}

/// Return stream bytes of one orbit.
pub fn return_stream_bytes(preset: Preset, seed: u64, n: usize) -> Result<Vec<u8>> {
    let recs = system(preset)?.srb_sample(seed, 1000, n)?;
    let mut buf = Vec::new();
    write_returns(&mut buf, &recs)?;
    Ok(buf)
}

/// Bit-reproducibility and thread-count stability.
pub fn determinism(scale: &CheckScale) -> Result<Check> {
    let mut c = Check::new(
        13,
        "determinism",
        "identical artifacts on repeated runs; eigenvalues stable across thread counts",
        "byte-identical streams and samples; eigenvalue difference <= 1e-12",
    );
    let a = return_stream_bytes(Preset::Stable, scale.seed, scale.determinism_returns)?;
    let b = return_stream_bytes(Preset::Stable, scale.seed, scale.determinism_returns)?;
    c.expect("stream_identical", (a == b) as u8 as f64, a == b);

    let sys = system(Preset::Clt)?;
    let lim = LimitOptions { chunk: 10, estimation_time: 1e5, ..LimitOptions::new(100.0, 200, scale.seed, 0.05) };
    let run = |threads: usize| -> Result<(Vec<f64>, f64)> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| crate::Error::Config(e.to_string()))?;
        pool.install(|| {
            let r = limit_experiment(&sys, &Observable::default(), LimitCase::Clt, &lim)?;
            let base = build_ulam(&sys, &UlamOptions { resolution: 32, max_depth: 4, seed: scale.seed, ..UlamOptions::default() })?;
            Ok((r.samples, lambda(&base, 0.01, 0.01)?))
        })
    };
    let (s1, l1) = run(1)?;
    let (s1b, l1b) = run(1)?;
    let (s4, l4) = run(4)?;
    let same = s1 == s1b && l1.to_bits() == l1b.to_bits();
    c.expect("repeat_identical", same as u8 as f64, same);
    c.expect("samples_identical_across_threads", (s1 == s4) as u8 as f64, s1 == s4);
    c.expect("lambda_thread_difference", (l1 - l4).abs(), (l1 - l4).abs() <= 1e-12);
    Ok(c)
}

/// Runs every check at the given scale, calling `report` after each one.
pub fn run_all(scale: &CheckScale, mut report: impl FnMut(&Check)) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut push = |c: Check, out: &mut Vec<Check>| {
        report(&c);
        out.push(c);
    };
    push(derived_identities(scale)?, &mut out);
    push(first_integral_conservation(scale)?, &mut out);
    push(passage_oracle(scale)?, &mut out);
    push(entry_asymptotics(scale)?, &mut out);
    push(theta_regimes(scale)?, &mut out);
    let roofs: Vec<RoofSample> = Preset::ALL.iter().map(|&p| roof_sample(p, scale)).collect::<Result<_>>()?;
    push(roof_tails(&roofs)?, &mut out);
    push(roof_level_oscillation(&roofs)?, &mut out);
    drop(roofs);
    push(clt_limit(scale)?, &mut out);
    push(stable_limit(scale)?, &mut out);
    push(nonstandard_limit(scale)?, &mut out);
    let studies: Vec<SpectralStudy> = Preset::ALL.iter().map(|&p| spectral_study(p, scale)).collect::<Result<_>>()?;
    push(eigenvalue_asymptotics(&studies)?, &mut out);
    push(pressure_relation(&studies)?, &mut out);
    push(determinism(scale)?, &mut out);
    Ok(out)
}
