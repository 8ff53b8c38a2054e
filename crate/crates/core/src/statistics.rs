//! Tail estimation, stable and Gaussian laws, Kolmogorov-Smirnov distances,
//! long-run variances and the flow-time limit experiments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow_sim::{FlowClock, HybridSystem, ReturnRecord};
use crate::quad::{integrate, QuadOptions};

/// Tail estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMethod {
    /// Hill estimator on the top `k` order statistics.
    Hill,
    /// Least-squares slope of log survival against log threshold over two
    /// decades of survival probability ending at the top `k`.
    LogLog,
}

/// Power-tail fit `P(X > t) ~ c_hat t^-beta_hat`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailFit {
    pub beta_hat: f64,
    pub c_hat: f64,
    pub k_frac: f64,
    /// Number of exceedances used (the largest one for log-log fits).
    pub k: usize,
    pub stderr: f64,
    pub method: TailMethod,
}

/// Samples sorted in decreasing order, NaNs rejected.
fn sorted_desc(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain("samples contain NaN".into()));
    }
    let mut v = samples.to_vec();
    v.sort_unstable_by(|a, b| b.total_cmp(a));
    Ok(v)
}

/// Minimum sample size accepted by [`tail_fit`].
pub const TAIL_MIN_SAMPLES: usize = 10_000;

pub fn tail_fit(samples: &[f64], method: TailMethod, k_frac: f64) -> Result<TailFit> {
    if !(k_frac > 0.0 && k_frac <= 0.1) {
        return Err(Error::InvalidParameter { name: "k_frac", reason: format!("must lie in (0, 0.1], got {k_frac}") });
    }
    let n = samples.len();
    if n < TAIL_MIN_SAMPLES {
        return Err(Error::TooFewExceedances { got: n, need: TAIL_MIN_SAMPLES });
    }
    let v = sorted_desc(samples)?;
    sorted_tail_fit(&v, method, k_frac)
}

/// [`tail_fit`] on samples already sorted in decreasing order.
pub fn sorted_tail_fit(v: &[f64], method: TailMethod, k_frac: f64) -> Result<TailFit> {
    let n = v.len();
    let k = (k_frac * n as f64).round() as usize;
    match method {
        TailMethod::Hill => {
            if k < 10 || k >= n || !(v[k] > 0.0) {
                return Err(Error::TooFewExceedances { got: k, need: 10 });
            }
            let lk = v[k].ln();
            let mean_excess = v[..k].iter().map(|x| x.ln() - lk).sum::<f64>() / k as f64;
            if !(mean_excess > 0.0) {
                return Err(Error::Domain("degenerate upper tail".into()));
            }
            let beta = 1.0 / mean_excess;
            let c_hat = (k as f64 / n as f64) * v[k].powf(beta);
            Ok(TailFit { beta_hat: beta, c_hat, k_frac, k, stderr: beta / (k as f64).sqrt(), method })
        }
        TailMethod::LogLog => {
            let k_low = k / 100;
            if k_low < 10 || k >= n {
                return Err(Error::TooFewExceedances { got: k_low, need: 10 });
            }
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            let mut kk = k as f64;
            while kk >= k_low as f64 {
                let i = kk.round() as usize;
                if v[i] > 0.0 {
                    xs.push(v[i].ln());
                    ys.push((i as f64 / n as f64).ln());
                }
                kk /= 1.1;
            }
            if xs.len() < 5 {
                return Err(Error::TooFewExceedances { got: xs.len(), need: 5 });
            }
            let (slope, intercept, se) = least_squares(&xs, &ys)?;
            Ok(TailFit { beta_hat: -slope, c_hat: intercept.exp(), k_frac, k, stderr: se, method })
        }
    }
}

/// Ordinary least squares `y = a x + b`: returns `(a, b, stderr(a))`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    let m = xs.len();
    if m < 2 || ys.len() != m {
        return Err(Error::Domain("least squares needs two or more paired points".into()));
    }
    let mf = m as f64;
    let mx = xs.iter().sum::<f64>() / mf;
    let my = ys.iter().sum::<f64>() / mf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Domain("least squares with constant abscissae".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let se = if m > 2 {
        let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a * x - b).powi(2)).sum();
        (rss / (mf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok((a, b, se))
}

/// Limit regime of the flow Birkhoff sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitCase {
    /// `kappa in (beta/2, beta)`: stable law of index `beta/kappa`.
    Stable,
    /// `kappa = beta/2`: Gaussian with `sqrt(T log T)` scaling.
    NonstdClt,
    /// `beta > 2`, `kappa < beta/2`: standard CLT.
    Clt,
}

impl LimitCase {
    pub fn name(self) -> &'static str {
        match self {
            LimitCase::Stable => "stable",
            LimitCase::NonstdClt => "nonstd_clt",
            LimitCase::Clt => "clt",
        }
    }

    /// The case selected by the tail exponents.
    pub fn classify(beta: f64, kappa: f64) -> Result<Self> {
        let rel = 1e-12 * beta.max(1.0);
        if (kappa - beta / 2.0).abs() <= rel {
            Ok(LimitCase::NonstdClt)
        } else if kappa > beta / 2.0 && kappa < beta {
            Ok(LimitCase::Stable)
        } else if kappa < beta / 2.0 && beta > 2.0 {
            Ok(LimitCase::Clt)
        } else {
            Err(Error::Inadmissible { case: "classify", reason: format!("beta = {beta}, kappa = {kappa}") })
        }
    }
}

/// Normalising sequence `b(T)`.
pub fn normalizer_b(t: f64, case: LimitCase, beta: f64, kappa: f64, c: f64) -> Result<f64> {
    if !(t > 0.0) || !(c > 0.0) {
        return Err(Error::InvalidParameter { name: "T/c", reason: "must be positive".into() });
    }
    let bad = |reason: String| Err(Error::Inadmissible { case: case.name(), reason });
    match case {
        LimitCase::Stable => {
            if !(kappa > beta / 2.0 && kappa < beta) {
                return bad(format!("stable case needs beta/2 < kappa < beta, got beta = {beta}, kappa = {kappa}"));
            }
            Ok(t.powf(kappa / beta) / c)
        }
        LimitCase::NonstdClt => {
            if (kappa - beta / 2.0).abs() > 1e-12 * beta.max(1.0) {
                return bad(format!("needs kappa = beta/2, got beta = {beta}, kappa = {kappa}"));
            }
            if !(t > 1.0) {
                return bad("needs T > 1".into());
            }
            Ok((t * t.ln() / c).sqrt())
        }
        LimitCase::Clt => {
            if !(beta > 2.0) {
                return bad(format!("needs beta > 2, got {beta}"));
            }
            Ok(t.sqrt())
        }
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Totally right-skewed stable law in the parameterisation with
/// `log E e^{itX} = i mu t - (sigma|t|)^alpha (1 - i sign(t) tan(pi alpha / 2))`,
/// so the mean is `location` and `alpha = 2` is `N(location, 2 sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StableSpec {
    pub alpha: f64,
    pub scale: f64,
    pub location: f64,
}

impl StableSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 1.0 && self.alpha <= 2.0) {
            return Err(Error::InvalidParameter { name: "alpha", reason: format!("must lie in (1, 2], got {}", self.alpha) });
        }
        if !(self.scale > 0.0) || !self.location.is_finite() {
            return Err(Error::InvalidParameter { name: "scale", reason: "scale must be positive, location finite".into() });
        }
        Ok(())
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        stable_cdf(self, x)
    }
}

/// Standardised distance beyond which tail asymptotics replace inversion.
const STABLE_FAR: f64 = 300.0;

/// CDF by Gil-Pelaez inversion of the characteristic function.
pub fn stable_cdf(spec: &StableSpec, x: f64) -> Result<f64> {
    spec.validate()?;
    if x.is_nan() {
        return Err(Error::Domain("stable_cdf at NaN".into()));
    }
    let a = spec.alpha;
    let d = (spec.location - x) / spec.scale;
    if d > STABLE_FAR {
        // The left tail decays faster than exponentially.
        return Ok(0.0);
    }
    if d < -STABLE_FAR {
        let c = libm::tgamma(a) * (std::f64::consts::PI * a / 2.0).sin() / std::f64::consts::PI;
        return Ok((1.0 - 2.0 * c * (-d).powf(-a)).clamp(0.0, 1.0));
    }
    let k = (std::f64::consts::PI * a / 2.0).tan();
    let u_max = 42f64.powf(1.0 / a);
    let panels = ((d.abs() * u_max / std::f64::consts::PI).ceil() as usize).max(8);
    let width = u_max / panels as f64;
    let opts = QuadOptions { abs_tol: 1e-10 / panels as f64, rel_tol: 1e-10, max_intervals: 200 };
    let f = |u: f64| {
        let ua = u.powf(a);
        (-ua).exp() * (u * d + ua * k).sin() / u
    };
    let mut total = 0.0;
    for i in 0..panels {
        let lo = width * i as f64;
        total += integrate(f, lo, lo + width, &opts)?.value;
    }
    let p = 0.5 - total / std::f64::consts::PI;
    if !(-1e-6..=1.0 + 1e-6).contains(&p) {
        return Err(Error::Quadrature { value: p, error: f64::NAN });
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Quantile of the stable law by bisection on [`stable_cdf`].
pub fn stable_quantile(spec: &StableSpec, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {p}")));
    }
    let (mut lo, mut hi) = (spec.location - spec.scale, spec.location + spec.scale);
    while stable_cdf(spec, lo)? > p {
        lo -= 2.0 * (hi - lo);
    }
    while stable_cdf(spec, hi)? < p {
        hi += 2.0 * (hi - lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if stable_cdf(spec, mid)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * spec.scale {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Kolmogorov-Smirnov distance between the empirical law of `sorted`
/// (ascending) and `cdf`.
pub fn ks_distance_sorted<F: Fn(f64) -> Result<f64>>(sorted: &[f64], cdf: F) -> Result<f64> {
    let n = sorted.len();
    if n == 0 {
        return Err(Error::Domain("KS distance of an empty sample".into()));
    }
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x)?;
        d = d.max((i as f64 + 1.0) / nf - f).max(f - i as f64 / nf);
    }
    Ok(d.clamp(0.0, 1.0))
}

pub fn ks_distance<F: Fn(f64) -> Result<f64>>(samples: &[f64], cdf: F) -> Result<f64> {
    let mut v = samples.to_vec();
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::Domain("samples contain NaN".into()));
    }
    v.sort_unstable_by(|a, b| a.total_cmp(b));
    ks_distance_sorted(&v, cdf)
}

/// Nelder-Mead minimisation. Returns the best point and value.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], step: &[f64], max_iter: usize, tol: f64) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step[i];
        simplex.push(p);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|p| f(p)).collect();
    for _ in 0..max_iter {
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        vals = idx.iter().map(|&i| vals[i]).collect();
        if (vals[n] - vals[0]).abs() <= tol * (vals[0].abs() + tol) {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect() };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            if fe < fr {
                simplex[n] = xe;
                vals[n] = fe;
            } else {
                simplex[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            simplex[n] = xr;
            vals[n] = fr;
        } else {
            let (xc, fc) = if fr < vals[n] {
                let xc = along(-0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            if fc < vals[n].min(fr) {
                simplex[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    let p: Vec<f64> = (0..n).map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j])).collect();
                    vals[i] = f(&p);
                    simplex[i] = p;
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    (simplex[best].clone(), vals[best])
}

/// Quantile probe points `(x_i, p_i)` of a sorted sample used for fitting.
fn probe_points(sorted: &[f64], m: usize) -> Vec<(f64, f64)> {
    let n = sorted.len();
    let m = m.min(n);
    (0..m)
        .map(|j| {
            let i = ((j as f64 + 0.5) * n as f64 / m as f64) as usize;
            let i = i.min(n - 1);
            (sorted[i], (i as f64 + 0.5) / n as f64)
        })
        .collect()
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

/// Number of quantile probes used by the law fits.
pub const FIT_PROBES: usize = 400;

/// Fits a totally right-skewed stable law by least squares between the CDF
/// and the empirical CDF at quantile probes. Returns the law and its KS
/// distance to the full sample.
pub fn fit_stable(samples: &[f64]) -> Result<(StableSpec, f64)> {
    let mut v = samples.to_vec();
    v.sort_unstable_by(|a, b| a.total_cmp(b));
    let probes = probe_points(&v, FIT_PROBES);
    let iqr = quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25);
    let med = quantile_sorted(&v, 0.5);
    if !(iqr > 0.0) {
        return Err(Error::Domain("sample has zero spread".into()));
    }
    let decode = |p: &[f64]| StableSpec { alpha: 1.0 + 1.0 / (1.0 + (-p[0]).exp()), scale: p[1].exp(), location: p[2] };
    let objective = |p: &[f64]| -> f64 {
        let spec = decode(p);
        probes
            .iter()
            .map(|&(x, q)| match stable_cdf(&spec, x) {
                Ok(f) => (f - q) * (f - q),
                Err(_) => 1.0,
            })
            .sum()
    };
    // alpha = 1.5 at p0 = 0
    let x0 = [0.0, (iqr / 2.0).ln(), med];
    let (best, _) = nelder_mead(objective, &x0, &[0.8, 0.3, 0.3 * iqr], 600, 1e-10);
    let spec = decode(&best);
    let ks = ks_distance_sorted(&v, |x| stable_cdf(&spec, x))?;
    Ok((spec, ks))
}

/// Fits `N(mu, sigma^2)` the same way; returns `(mu, sigma, ks)`.
pub fn fit_gaussian(samples: &[f64]) -> Result<(f64, f64, f64)> {
    let mut v = samples.to_vec();
    v.sort_unstable_by(|a, b| a.total_cmp(b));
    let probes = probe_points(&v, FIT_PROBES);
    let iqr = quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25);
    if !(iqr > 0.0) {
        return Err(Error::Domain("sample has zero spread".into()));
    }
    let objective = |p: &[f64]| -> f64 {
        let s = p[1].exp();
        probes.iter().map(|&(x, q)| (normal_cdf((x - p[0]) / s) - q).powi(2)).sum()
    };
    let x0 = [quantile_sorted(&v, 0.5), (iqr / 1.349).ln()];
    let (best, _) = nelder_mead(objective, &x0, &[0.2 * iqr, 0.2], 400, 1e-12);
    let (mu, sigma) = (best[0], best[1].exp());
    let ks = ks_distance_sorted(&v, |x| Ok(normal_cdf((x - mu) / sigma)))?;
    Ok((mu, sigma, ks))
}

/// Mergeable running mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&self, other: &Self) -> Self {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        Self {
            count: self.count + other.count,
            mean: self.mean + d * other.count as f64 / n,
            m2: self.m2 + other.m2 + d * d * self.count as f64 * other.count as f64 / n,
        }
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            f64::NAN
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }
}

/// Window factor of the automatic Green-Kubo truncation: the sum stops at
/// the first lag `J >= GK_WINDOW * tau_int(J)`.
pub const GK_WINDOW: f64 = 6.0;

/// Long-run variance `gamma_0 + 2 sum_{j<=J} gamma_j` of a series (its mean
/// is removed first), divided by `tau_star` to express it per unit flow
/// time. Pass `tau_star = 1` for the per-step variance.
pub fn variance_estimate(series: &[f64], tau_star: f64) -> Result<f64> {
    let n = series.len();
    if n < 100 {
        return Err(Error::UnstableVariance(format!("series too short ({n})")));
    }
    if !(tau_star > 0.0) {
        return Err(Error::InvalidParameter { name: "tau_star", reason: "must be positive".into() });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let z: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let gamma = |lag: usize| -> f64 { z[..n - lag].iter().zip(&z[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64 };
    let g0 = gamma(0);
    if !(g0 > 0.0) {
        return Err(Error::UnstableVariance("zero variance".into()));
    }
    let max_lag = (n / 50).max(10);
    let mut tau_int = 0.5;
    for j in 1..=max_lag {
        tau_int += gamma(j) / g0;
        if (j as f64) >= GK_WINDOW * tau_int {
            let s2 = 2.0 * tau_int * g0;
            if !(s2 > 0.0) {
                return Err(Error::UnstableVariance(format!("nonpositive long-run variance {s2}")));
            }
            return Ok(s2 / tau_star);
        }
    }
    Err(Error::UnstableVariance(format!("autocovariances not summable within {max_lag} lags (tau_int = {tau_int})")))
}

/// Induced observable `a psi_bar + b tau` (the flow observable `a psi + b`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observable {
    pub a: f64,
    pub b: f64,
}

impl Default for Observable {
    fn default() -> Self {
        Self { a: 1.0, b: 0.0 }
    }
}

impl Observable {
    #[inline]
    pub fn induced(&self, rec: &ReturnRecord) -> f64 {
        self.a * rec.psi_bar + self.b * rec.tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitOptions {
    pub t_flow: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Windows per independently seeded orbit.
    pub chunk: usize,
    /// Returns discarded at the start of every orbit.
    pub burn_in: u64,
    /// Flow time of the independent stream estimating `psi*` and `tau*`.
    pub estimation_time: f64,
    /// Returns of that stream kept for the Green-Kubo variance.
    pub variance_returns: usize,
    /// Tail constant `c` in `b(T)`.
    pub normalizer_c: f64,
    /// KS threshold of the verdict.
    pub threshold: f64,
}

impl LimitOptions {
    pub fn new(t_flow: f64, n_samples: usize, seed: u64, threshold: f64) -> Self {
        Self {
            t_flow,
            n_samples,
            seed,
            chunk: 100,
            burn_in: 1000,
            estimation_time: (t_flow * n_samples as f64).min(2e8),
            variance_returns: 4_000_000,
            normalizer_c: 1.0,
            threshold,
        }
    }
}

/// Law fitted to the normalised sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum LimitFit {
    /// `N(mean, variance)`.
    Gaussian { mean: f64, variance: f64 },
    /// Stable law of `orientation * X`.
    Stable { spec: StableSpec, orientation: f64 },
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitReport {
    pub case: LimitCase,
    pub sample_count: usize,
    pub t_flow: f64,
    pub normalizer: f64,
    /// Flow-time mean `psi* / tau*` used for centring.
    pub centering: f64,
    pub psi_star: f64,
    pub tau_star: f64,
    pub ks_distance: f64,
    pub fit: LimitFit,
    /// Green-Kubo variance per unit flow time (clt case).
    pub gk_variance: Option<f64>,
    /// Sample variance of the normalised sums.
    pub direct_variance: f64,
    pub threshold: f64,
    pub passed: bool,
    pub degenerate: bool,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

/// Means of the induced observable and of the roof along one long orbit,
/// plus the first `keep` centred-ready pairs for variance estimation.
struct Estimates {
    obs_mean: f64,
    tau_mean: f64,
    pairs: Vec<(f64, f64)>,
}

fn estimate_means(sys: &HybridSystem, obs: &Observable, seed: u64, burn: u64, time: f64, keep: usize) -> Result<Estimates> {
    let mut orbit = sys.orbit(seed, 0, burn)?;
    let (mut so, mut st) = (0.0, 0.0);
    let mut count = 0u64;
    let mut pairs = Vec::with_capacity(keep.min(1 << 24));
    while st < time || count < 1000 {
        let rec = orbit.next_record()?;
        let o = obs.induced(&rec);
        so += o;
        st += rec.tau;
        count += 1;
        if pairs.len() < keep {
            pairs.push((o, rec.tau));
        }
    }
    Ok(Estimates { obs_mean: so / count as f64, tau_mean: st / count as f64, pairs })
}

/// Seed offset of the estimation stream, keeping it disjoint from the
/// sample streams.
const ESTIMATION_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Normalised flow Birkhoff sums `(int_0^T psi - (psi*/tau*) T) / b(T)`
/// from `n_samples` windows of `n_samples / chunk` seeded orbits.
pub fn normalized_sums(sys: &HybridSystem, obs: &Observable, opts: &LimitOptions, centering: f64, b: f64) -> Result<Vec<f64>> {
    let chunks = opts.n_samples.div_ceil(opts.chunk.max(1));
    let parts: Result<Vec<Vec<f64>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let want = opts.chunk.min(opts.n_samples - c * opts.chunk);
            let orbit = sys.orbit(opts.seed, c as u64 + 1, opts.burn_in)?;
            let mut clock = FlowClock::from_orbit(orbit)?;
            let induced = |r: &ReturnRecord| obs.induced(r);
            (0..want)
                .map(|_| {
                    let s = clock.advance_observable(opts.t_flow, &induced)?;
                    Ok((s - centering * opts.t_flow) / b)
                })
                .collect()
        })
        .collect();
    Ok(parts?.into_iter().flatten().collect())
}

/// Runs one limit-law experiment.
pub fn limit_experiment(sys: &HybridSystem, obs: &Observable, case: LimitCase, opts: &LimitOptions) -> Result<LimitReport> {
    if !(opts.t_flow > 1.0) || opts.n_samples < 10 {
        return Err(Error::InvalidParameter { name: "limit options", reason: "need T > 1 and at least 10 samples".into() });
    }
    let dc = sys.constants();
    let b = normalizer_b(opts.t_flow, case, dc.beta, dc.kappa, opts.normalizer_c)?;
    let keep = if case == LimitCase::Clt { opts.variance_returns } else { 0 };
    let est = estimate_means(sys, obs, opts.seed ^ ESTIMATION_SEED_SALT, opts.burn_in, opts.estimation_time, keep)?;
    let centering = est.obs_mean / est.tau_mean;
    let samples = normalized_sums(sys, obs, opts, centering, b)?;
    let mut stats = RunningStats::default();
    samples.iter().for_each(|&x| stats.push(x));
    let scale_ref = 1.0 + centering.abs() * opts.t_flow / b;
    let degenerate = samples.iter().all(|x| x.abs() <= 1e-9 * scale_ref);
    let mut report = LimitReport {
        case,
        sample_count: samples.len(),
        t_flow: opts.t_flow,
        normalizer: b,
        centering,
        psi_star: est.obs_mean,
        tau_star: est.tau_mean,
        ks_distance: 0.0,
        fit: LimitFit::None,
        gk_variance: None,
        direct_variance: stats.variance(),
        threshold: opts.threshold,
        passed: false,
        degenerate,
        samples,
    };
    if degenerate {
        return Ok(report);
    }
    match case {
        LimitCase::Clt => {
            let series: Vec<f64> = est.pairs.iter().map(|&(o, t)| o - centering * t).collect();
            let s2 = variance_estimate(&series, est.tau_mean)?;
            let sd = s2.sqrt();
            report.ks_distance = ks_distance(&report.samples, |x| Ok(normal_cdf(x / sd)))?;
            report.gk_variance = Some(s2);
            report.fit = LimitFit::Gaussian { mean: 0.0, variance: s2 };
        }
        LimitCase::NonstdClt => {
            let (mu, sigma, ks) = fit_gaussian(&report.samples)?;
            report.ks_distance = ks;
            report.fit = LimitFit::Gaussian { mean: mu, variance: sigma * sigma };
        }
        LimitCase::Stable => {
            // Orient the heavy tail to the right.
            let orientation = if skewness_sign(&report.samples) < 0.0 { -1.0 } else { 1.0 };
            let oriented: Vec<f64> = report.samples.iter().map(|x| orientation * x).collect();
            let (spec, ks) = fit_stable(&oriented)?;
            report.ks_distance = ks;
            report.fit = LimitFit::Stable { spec, orientation };
        }
    }
    report.passed = report.ks_distance < opts.threshold;
    Ok(report)
}

/// Sign of `mean - median`, a robust indicator of the heavy side.
fn skewness_sign(samples: &[f64]) -> f64 {
    let mut v = samples.to_vec();
    v.sort_unstable_by(|a, b| a.total_cmp(b));
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (mean - quantile_sorted(&v, 0.5)).signum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizer_examples() {
        assert!((normalizer_b(1e6, LimitCase::Stable, 1.5, 1.0, 1.0).unwrap() - 1e4).abs() < 1e-8);
        let e = std::f64::consts::E;
        assert!((normalizer_b(e, LimitCase::NonstdClt, 2.0, 1.0, 1.0).unwrap() - e.sqrt()).abs() < 1e-14);
        assert_eq!(normalizer_b(49.0, LimitCase::Clt, 3.0, 1.0, 1.0).unwrap(), 7.0);
        assert!(normalizer_b(10.0, LimitCase::Stable, 1.5, 0.5, 1.0).is_err());
        assert!(normalizer_b(10.0, LimitCase::Clt, 1.5, 0.5, 1.0).is_err());
        assert!(normalizer_b(10.0, LimitCase::NonstdClt, 2.0, 0.9, 1.0).is_err());
    }

    #[test]
    fn classify_cases() {
        assert_eq!(LimitCase::classify(1.5, 1.0).unwrap(), LimitCase::Stable);
        assert_eq!(LimitCase::classify(2.0, 1.0).unwrap(), LimitCase::NonstdClt);
        assert_eq!(LimitCase::classify(3.0, 1.0).unwrap(), LimitCase::Clt);
        assert!(LimitCase::classify(1.5, 2.0).is_err());
    }

    #[test]
    fn gaussian_reduction() {
        let spec = StableSpec { alpha: 2.0, scale: std::f64::consts::FRAC_1_SQRT_2, location: 0.0 };
        for x in [-3.0, -1.0, 0.0, 0.4, 1.0, 2.5] {
            assert!((stable_cdf(&spec, x).unwrap() - normal_cdf(x)).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn stable_cdf_far_tails_are_continuous() {
        let spec = StableSpec { alpha: 1.5, scale: 1.0, location: 0.0 };
        let inside = stable_cdf(&spec, STABLE_FAR - 1e-9).unwrap();
        let outside = stable_cdf(&spec, STABLE_FAR + 1e-9).unwrap();
        assert!((inside - outside).abs() < 1e-6, "{inside} {outside}");
        assert_eq!(stable_cdf(&spec, -STABLE_FAR - 1.0).unwrap(), 0.0);
    }

    #[test]
    fn least_squares_exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let (a, b, se) = least_squares(&xs, &ys).unwrap();
        assert!((a + 0.5).abs() < 1e-14 && (b - 2.0).abs() < 1e-14 && se < 1e-14);
    }

    #[test]
    fn running_stats_merge() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let mut a = RunningStats::default();
        let mut b = RunningStats::default();
        let mut all = RunningStats::default();
        for (i, &x) in xs.iter().enumerate() {
            if i < 37 { a.push(x) } else { b.push(x) }
            all.push(x);
        }
        let m = a.merge(&b);
        assert_eq!(m.count, all.count);
        assert!((m.mean - all.mean).abs() < 1e-14);
        assert!((m.variance() - all.variance()).abs() < 1e-13);
    }

    #[test]
    fn nelder_mead_quadratic() {
        let (x, v) = nelder_mead(|p| (p[0] - 1.0).powi(2) + 3.0 * (p[1] + 2.0).powi(2), &[0.0, 0.0], &[0.5, 0.5], 2000, 1e-14);
        assert!((x[0] - 1.0).abs() < 1e-5 && (x[1] + 2.0).abs() < 1e-5 && v < 1e-10);
    }

    #[test]
    fn tail_fit_preconditions() {
        let small = vec![1.0; 100];
        assert!(matches!(tail_fit(&small, TailMethod::Hill, 0.01), Err(Error::TooFewExceedances { .. })));
        let ok = vec![1.0; 20_000];
        assert!(tail_fit(&ok, TailMethod::Hill, 0.5).is_err());
    }

    #[test]
    fn variance_rejects_short_series() {
        assert!(variance_estimate(&[1.0, 2.0], 1.0).is_err());
    }
}
