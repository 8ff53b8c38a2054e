//! Ulam discretisation of the return map `F` and its twisted transfer
//! operators `R(e^{-u tau + s psi_bar} .)`: leading eigenvalues, eigenvalue
//! curves in `u` and the induced and flow pressures.
//!
//! Each box row is a stratified Monte Carlo average over sample points of
//! the box. The twist is applied to every sample before aggregation, so the
//! twisted matrix is the Ulam projection of the exactly twisted operator.
//! Strata crossing the long-passage region are refined recursively.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow_sim::{HybridSystem, SectionPoint};
use crate::statistics::least_squares;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UlamOptions {
    /// Boxes per axis.
    pub resolution: usize,
    /// Samples per box (rounded down to a square).
    pub samples_per_box: usize,
    pub seed: u64,
    /// Maximal number of quadtree refinements of a stratum.
    pub max_depth: u32,
    /// Samples per refined stratum (rounded down to a square).
    pub refine_samples: usize,
    /// Strata are refined only if some sample has a roof above this.
    pub tau_heavy: f64,
    /// Relative roof oscillation `(max - min) / min` that triggers refinement.
    pub oscillation: f64,
    pub leakage_threshold: f64,
}

impl Default for UlamOptions {
    fn default() -> Self {
        Self {
            resolution: 128,
            samples_per_box: 64,
            seed: 1,
            max_depth: 10,
            refine_samples: 16,
            tau_heavy: 8.0,
            oscillation: 0.2,
            leakage_threshold: 1e-3,
        }
    }
}

impl UlamOptions {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 32 {
            return Err(Error::InvalidParameter { name: "resolution", reason: format!("need at least 32 boxes per axis, got {}", self.resolution) });
        }
        if self.samples_per_box < 64 {
            return Err(Error::InvalidParameter { name: "samples_per_box", reason: format!("need at least 64, got {}", self.samples_per_box) });
        }
        if self.refine_samples < 4 || self.max_depth > 30 {
            return Err(Error::InvalidParameter { name: "refine_samples", reason: "need at least 4 samples per stratum and depth <= 30".into() });
        }
        Ok(())
    }
}

/// One sampled transition of `F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UlamSample {
    pub from: u32,
    pub to: u32,
    /// Probability weight within the row of `from`.
    pub weight: f64,
    pub tau: f64,
    pub psi_bar: f64,
}

/// Regular grid over the section restricted to boxes meeting `Y`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UlamPartition {
    pub resolution: usize,
    /// Grid box of each state.
    pub boxes: Vec<usize>,
    /// State of each grid box, `None` for boxes without points of `Y`.
    #[serde(skip)]
    pub state_of_box: Vec<Option<u32>>,
    /// Estimated area of `box & Y` per state.
    pub y_area: Vec<f64>,
}

impl UlamPartition {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Grid box containing a section point.
    pub fn box_of(&self, p: SectionPoint) -> usize {
        let n = self.resolution;
        let ix = (((p.x + 0.5) * n as f64).floor() as usize).min(n - 1);
        let iy = (((p.y + 0.5) * n as f64).floor() as usize).min(n - 1);
        iy * n + ix
    }

    pub fn state_of(&self, p: SectionPoint) -> Option<u32> {
        self.state_of_box[self.box_of(p)]
    }
}

/// Sampled transitions grouped by `(from, to)`.
#[derive(Debug, Clone)]
pub struct UlamBase {
    pub partition: UlamPartition,
    /// Sorted by `(from, to)`.
    pub samples: Vec<UlamSample>,
    /// Distinct `(from, to)` pairs with their sample ranges.
    pairs: Vec<(u32, u32, usize, usize)>,
    /// Row pointers into `pairs`.
    row_ptr: Vec<usize>,
    /// Permutation of `pairs` ordered by `(to, from)` and column pointers.
    col_perm: Vec<usize>,
    col_ptr: Vec<usize>,
    /// Probability mass lost to boxes outside the partition.
    pub leakage: f64,
    /// States no sampled transition enters.
    pub unreachable: Vec<u32>,
}

struct BoxSamples {
    /// `(weight, end, tau, psi_bar)` with weights summing to the `Y` fraction.
    points: Vec<(f64, SectionPoint, f64, f64)>,
    y_fraction: f64,
}

fn grid_side(n: usize) -> usize {
    ((n as f64).sqrt().floor() as usize).max(1)
}

#[allow(clippy::too_many_arguments)]
fn sample_region(
    sys: &HybridSystem,
    rng: &mut ChaCha8Rng,
    x0: f64,
    y0: f64,
    w: f64,
    depth: u32,
    mass: f64,
    opts: &UlamOptions,
    out: &mut Vec<(f64, SectionPoint, f64, f64)>,
) -> Result<f64> {
    let m = grid_side(if depth == 0 { opts.samples_per_box } else { opts.refine_samples });
    let cell = w / m as f64;
    let mut pts = Vec::with_capacity(m * m);
    let mut drawn = 0usize;
    for iy in 0..m {
        for ix in 0..m {
            let px = x0 + (ix as f64 + rng.gen::<f64>()) * cell;
            let py = y0 + (iy as f64 + rng.gen::<f64>()) * cell;
            drawn += 1;
            let p = SectionPoint::new(px, py);
            if sys.in_chart(p) {
                continue;
            }
            let rec = sys.induced_return(p)?;
            pts.push((rec.end, rec.tau, rec.psi_bar));
        }
    }
    if pts.is_empty() {
        return Ok(0.0);
    }
    let (lo, hi) = pts.iter().fold((f64::INFINITY, 0f64), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    if depth < opts.max_depth && hi > opts.tau_heavy && (hi - lo) > opts.oscillation * lo {
        let h = w / 2.0;
        let mut y_mass = 0.0;
        for (dx, dy) in [(0.0, 0.0), (h, 0.0), (0.0, h), (h, h)] {
            y_mass += sample_region(sys, rng, x0 + dx, y0 + dy, h, depth + 1, mass / 4.0, opts, out)?;
        }
        return Ok(y_mass);
    }
    let y_mass = mass * pts.len() as f64 / drawn as f64;
    let each = y_mass / pts.len() as f64;
    out.extend(pts.into_iter().map(|(e, t, p)| (each, e, t, p)));
    Ok(y_mass)
}

fn sample_box(sys: &HybridSystem, b: usize, opts: &UlamOptions) -> Result<BoxSamples> {
    let n = opts.resolution;
    let w = 1.0 / n as f64;
    let (ix, iy) = (b % n, b / n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(b as u64);
    let mut points = Vec::new();
    let y_fraction = sample_region(sys, &mut rng, -0.5 + ix as f64 * w, -0.5 + iy as f64 * w, w, 0, 1.0, opts, &mut points)?;
    Ok(BoxSamples { points, y_fraction })
}

/// Samples the return map on every box and assembles the transition data.
pub fn build_ulam(sys: &HybridSystem, opts: &UlamOptions) -> Result<UlamBase> {
    opts.validate()?;
    let n = opts.resolution;
    let per_box: Vec<BoxSamples> = (0..n * n).into_par_iter().map(|b| sample_box(sys, b, opts)).collect::<Result<_>>()?;
    let mut state_of_box = vec![None; n * n];
    let mut boxes = Vec::new();
    let mut y_area = Vec::new();
    let box_area = 1.0 / (n * n) as f64;
    for (b, bs) in per_box.iter().enumerate() {
        if !bs.points.is_empty() {
            state_of_box[b] = Some(boxes.len() as u32);
            boxes.push(b);
            y_area.push(bs.y_fraction * box_area);
        }
    }
    let partition = UlamPartition { resolution: n, boxes, state_of_box, y_area };
    let total_area: f64 = partition.y_area.iter().sum();
    let mut samples = Vec::new();
    let mut leaked = 0.0;
    for (b, bs) in per_box.into_iter().enumerate() {
        let Some(from) = partition.state_of_box[b] else { continue };
        let row_start = samples.len();
        let mut kept = 0.0;
        for (wt, end, tau, psi) in bs.points {
            match partition.state_of(end) {
                Some(to) => {
                    samples.push(UlamSample { from, to, weight: wt, tau, psi_bar: psi });
                    kept += wt;
                }
                None => leaked += wt * box_area,
            }
        }
        if kept > 0.0 {
            for s in &mut samples[row_start..] {
                s.weight /= kept;
            }
        }
    }
    let leakage = leaked / total_area;
    if leakage > opts.leakage_threshold {
        return Err(Error::Leakage { leakage, threshold: opts.leakage_threshold });
    }
    Ok(UlamBase::from_samples(partition, samples, leakage))
}

impl UlamBase {
    /// Assembles the pair structure from row-normalised samples.
    pub fn from_samples(partition: UlamPartition, mut samples: Vec<UlamSample>, leakage: f64) -> Self {
        let states = partition.len();
        samples.sort_by(|a, b| (a.from, a.to).cmp(&(b.from, b.to)));
        let mut pairs: Vec<(u32, u32, usize, usize)> = Vec::new();
        for (k, s) in samples.iter().enumerate() {
            match pairs.last_mut() {
                Some(p) if p.0 == s.from && p.1 == s.to => p.3 = k + 1,
                _ => pairs.push((s.from, s.to, k, k + 1)),
            }
        }
        let mut row_ptr = vec![0usize; states + 1];
        let mut col_ptr = vec![0usize; states + 1];
        for p in &pairs {
            row_ptr[p.0 as usize + 1] += 1;
            col_ptr[p.1 as usize + 1] += 1;
        }
        for i in 0..states {
            row_ptr[i + 1] += row_ptr[i];
            col_ptr[i + 1] += col_ptr[i];
        }
        let mut col_perm: Vec<usize> = (0..pairs.len()).collect();
        col_perm.sort_by_key(|&k| (pairs[k].1, pairs[k].0));
        let unreachable = (0..states as u32).filter(|&j| col_ptr[j as usize + 1] == col_ptr[j as usize]).collect();
        Self { partition, samples, pairs, row_ptr, col_perm, col_ptr, leakage, unreachable }
    }

    pub fn states(&self) -> usize {
        self.partition.len()
    }

    /// Number of nonzero matrix entries.
    pub fn nnz(&self) -> usize {
        self.pairs.len()
    }

    /// Per-pair sums `sum_k weight_k g(sample_k)`, in pair order.
    fn pair_sums<G: Fn(&UlamSample) -> f64 + Sync>(&self, g: G) -> Vec<f64> {
        self.pairs.par_iter().map(|&(_, _, a, b)| self.samples[a..b].iter().map(|s| s.weight * g(s)).sum()).collect()
    }

    fn matrix(&self, values: Vec<f64>, u: f64, s: f64) -> TwistedOperator {
        let n = self.states();
        let col_idx = self.pairs.iter().map(|p| p.1).collect();
        let t_values = self.col_perm.iter().map(|&k| values[k]).collect();
        let t_idx = self.col_perm.iter().map(|&k| self.pairs[k].0).collect();
        TwistedOperator {
            u,
            s,
            n,
            row_ptr: self.row_ptr.clone(),
            col_idx,
            values,
            t_ptr: self.col_ptr.clone(),
            t_idx,
            t_values,
        }
    }

    /// Matrix of `sum_k weight_k g(sample_k)` over the sampled transitions.
    pub fn weighted<G: Fn(&UlamSample) -> f64 + Sync>(&self, g: G) -> TwistedOperator {
        self.matrix(self.pair_sums(g), f64::NAN, f64::NAN)
    }

    /// Mean roof under a box measure `mu` (per state).
    pub fn mean_under(&self, mu: &[f64], g: impl Fn(&UlamSample) -> f64) -> f64 {
        let total: f64 = mu.iter().sum();
        self.samples.iter().map(|s| mu[s.from as usize] * s.weight * g(s)).sum::<f64>() / total
    }
}

/// Sparse nonnegative matrix in row and column compressed form.
#[derive(Debug, Clone, PartialEq)]
pub struct TwistedOperator {
    pub u: f64,
    pub s: f64,
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
    t_ptr: Vec<usize>,
    t_idx: Vec<u32>,
    t_values: Vec<f64>,
}

impl TwistedOperator {
    /// Builds the operator from a dense row-major matrix.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Domain("matrix must be square and nonempty".into()));
        }
        if rows.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain("matrix entries must be finite and nonnegative".into()));
        }
        let partition = UlamPartition { resolution: 0, boxes: (0..n).collect(), state_of_box: (0..n as u32).map(Some).collect(), y_area: vec![1.0; n] };
        let mut samples = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                if v > 0.0 {
                    samples.push(UlamSample { from: i as u32, to: j as u32, weight: v, tau: 1.0, psi_bar: 0.0 });
                }
            }
        }
        let base = UlamBase::from_samples(partition, samples, 0.0);
        Ok(base.matrix(base.pair_sums(|_| 1.0), 0.0, 0.0))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.values[self.row_ptr[i]..self.row_ptr[i + 1]].iter().sum()).collect()
    }

    /// `A v`. Each row is summed sequentially, so the result does not
    /// depend on the thread count.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .into_par_iter()
            .map(|i| {
                let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
                self.col_idx[a..b].iter().zip(&self.values[a..b]).map(|(&j, &x)| x * v[j as usize]).sum()
            })
            .collect()
    }

    /// `v A`.
    pub fn apply_left(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .into_par_iter()
            .map(|j| {
                let (a, b) = (self.t_ptr[j], self.t_ptr[j + 1]);
                self.t_idx[a..b].iter().zip(&self.t_values[a..b]).map(|(&i, &x)| x * v[i as usize]).sum()
            })
            .collect()
    }

    pub fn entries_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// `R(e^{-u tau + s psi_bar} .)` on the Ulam partition. The exponent is
/// formed per sample before exponentiation, so no intermediate factor
/// overflows when `u tau` is large.
pub fn twist(base: &UlamBase, u: f64, s: f64) -> Result<TwistedOperator> {
    if !u.is_finite() || !s.is_finite() {
        return Err(Error::InvalidParameter { name: "u/s", reason: "must be finite".into() });
    }
    let values = if u == 0.0 && s == 0.0 { base.pair_sums(|_| 1.0) } else { base.pair_sums(|x| (-u * x.tau + s * x.psi_bar).exp()) };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("twisted entries overflow at u = {u}, s = {s}")));
    }
    Ok(base.matrix(values, u, s))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenResult {
    pub lambda: f64,
    /// Normalised to unit maximum.
    #[serde(skip)]
    pub right_vec: Vec<f64>,
    /// Normalised to unit sum.
    #[serde(skip)]
    pub left_vec: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// Estimated `|lambda_2 / lambda|` from the contraction of the iterates.
    pub contraction: f64,
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub const EIGEN_MAX_ITER: usize = 100_000;

/// Power iteration for the leading eigenvalue with left and right vectors.
pub fn leading_eigen(op: &TwistedOperator, tol: f64) -> Result<EigenResult> {
    if !op.entries_finite() {
        return Err(Error::Domain("operator has non-finite entries".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter { name: "tol", reason: "must be positive".into() });
    }
    let n = op.dim();
    let mut r = vec![1.0; n];
    let mut l = vec![1.0 / n as f64; n];
    let mut lam_prev = f64::NAN;
    let mut diff_prev = f64::NAN;
    let mut contraction = f64::NAN;
    for it in 1..=EIGEN_MAX_ITER {
        let ar = op.apply(&r);
        let lam = max_norm(&ar);
        if !(lam > 0.0) {
            return Err(Error::NonConvergence { iterations: it, reason: "operator annihilates the iterate".into() });
        }
        let next: Vec<f64> = ar.iter().map(|x| x / lam).collect();
        let la = op.apply_left(&l);
        let ls: f64 = la.iter().sum();
        let next_l: Vec<f64> = la.iter().map(|x| x / ls).collect();
        // Either iterate may start on its eigenvector, so track both.
        let diff_r = next.iter().zip(&r).fold(0f64, |m, (a, b)| m.max((a - b).abs()));
        let diff_l = next_l.iter().zip(&l).fold(0f64, |m, (a, b)| m.max((a - b).abs())) * n as f64;
        let diff = diff_r.max(diff_l);
        if diff_prev > 0.0 && diff > 0.0 {
            contraction = diff / diff_prev;
        }
        diff_prev = diff;
        r = next;
        l = next_l;
        let converged_lambda = (lam - lam_prev).abs() <= tol * lam;
        lam_prev = lam;
        if converged_lambda {
            let ar = op.apply(&r);
            let residual = ar.iter().zip(&r).fold(0f64, |m, (a, b)| m.max((a - lam * b).abs())) / max_norm(&r);
            let la = op.apply_left(&l);
            let left_res = la.iter().zip(&l).fold(0f64, |m, (a, b)| m.max((a - lam * b).abs())) / max_norm(&l);
            if residual < 10.0 * tol && left_res < 10.0 * tol {
                // Two-sided quotient: second order in the vector errors.
                let lambda = dot(&l, &ar) / dot(&l, &r);
                return Ok(EigenResult { lambda, right_vec: r, left_vec: l, residual, iterations: it, contraction });
            }
        }
    }
    Err(Error::NonConvergence { iterations: EIGEN_MAX_ITER, reason: format!("last contraction ratio {contraction}") })
}

/// Default eigenvalue tolerance.
pub const EIGEN_TOL: f64 = 1e-13;

pub fn lambda(base: &UlamBase, u: f64, s: f64) -> Result<f64> {
    Ok(leading_eigen(&twist(base, u, s)?, EIGEN_TOL)?.lambda)
}

/// Derivatives of `lambda(u, s)` at `(0, 0)` from first-order perturbation
/// theory: `d lambda = <l, dA r> / <l, r>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenDerivatives {
    pub d_du: f64,
    pub d_ds: f64,
}

pub fn derivatives_at_zero(base: &UlamBase) -> Result<EigenDerivatives> {
    let e = leading_eigen(&twist(base, 0.0, 0.0)?, EIGEN_TOL)?;
    let norm = dot(&e.left_vec, &e.right_vec);
    let du = base.weighted(|x| -x.tau).apply(&e.right_vec);
    let ds = base.weighted(|x| x.psi_bar).apply(&e.right_vec);
    Ok(EigenDerivatives { d_du: dot(&e.left_vec, &du) / norm, d_ds: dot(&e.left_vec, &ds) / norm })
}

/// Asymptotic model fitted to `lambda(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveModel {
    /// `|1 - lambda(u) - tau u| ~ c u^p`.
    PowerLaw,
    /// `log lambda(u) + tau u ~ c u^2` (finite variance).
    Quadratic,
    /// `|1 - lambda(u) - tau u| ~ c u^2 log(1/u)`.
    QuadraticLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenPoint {
    pub u: f64,
    pub s: f64,
    pub lambda: f64,
    pub one_minus_lambda: f64,
    /// `1 - lambda - tau_hat u`.
    pub remainder: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveFit {
    pub model: CurveModel,
    /// Fitted exponent (power law) or `2` for the quadratic models.
    pub exponent: f64,
    pub constant: f64,
    /// RMS residual of the log-log fit.
    pub residual: f64,
    /// `c(u)` per grid point for the quadratic models.
    pub local_constants: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenCurve {
    pub tau_hat: f64,
    pub points: Vec<EigenPoint>,
    pub fit: CurveFit,
}

/// Maximal RMS residual of an eigen-curve fit before it is flagged.
pub const CURVE_RESIDUAL_LIMIT: f64 = 0.25;

/// Log-spaced grid of `n` points from `lo` to `hi`, ascending.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    // Base-10 exponents keep decade points exact.
    let (a, b) = (lo.log10(), hi.log10());
    let mut g: Vec<f64> = (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect();
    g[0] = lo;
    g[n - 1] = hi;
    g
}

/// `lambda(u, s)` on a grid with the fit of the chosen asymptotic model.
/// `tau_hat = -d lambda / du (0)` comes from the same operator.
pub fn eigen_curve_u(base: &UlamBase, u_grid: &[f64], s: f64, model: CurveModel) -> Result<EigenCurve> {
    if u_grid.len() < 3 || u_grid.iter().any(|&u| !(1e-4 * (1.0 - 1e-9)..=1e-1 * (1.0 + 1e-9)).contains(&u)) {
        return Err(Error::InvalidParameter { name: "u_grid", reason: "need three or more points in [1e-4, 1e-1]".into() });
    }
    let mut grid = u_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let tau_hat = -derivatives_at_zero(base)?.d_du;
    let points: Vec<EigenPoint> = grid
        .iter()
        .map(|&u| {
            let lam = lambda(base, u, s)?;
            Ok(EigenPoint { u, s, lambda: lam, one_minus_lambda: 1.0 - lam, remainder: 1.0 - lam - tau_hat * u })
        })
        .collect::<Result<_>>()?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = match model {
        CurveModel::PowerLaw => points.iter().map(|p| (p.u.ln(), p.remainder.abs().ln())).unzip(),
        CurveModel::Quadratic => points.iter().map(|p| (p.u.ln(), (p.lambda.ln() + tau_hat * p.u).abs().ln())).unzip(),
        CurveModel::QuadraticLog => points.iter().map(|p| (p.u.ln(), (p.remainder.abs() / (1.0 / p.u).ln()).ln())).unzip(),
    };
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::Domain("eigen-curve remainder vanishes on the grid".into()));
    }
    let (slope, intercept, _) = least_squares(&xs, &ys)?;
    let residual = (xs.iter().zip(&ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
    let fit = match model {
        CurveModel::PowerLaw => CurveFit { model, exponent: slope, constant: intercept.exp(), residual, local_constants: vec![] },
        CurveModel::Quadratic | CurveModel::QuadraticLog => {
            let local: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| (y - 2.0 * x).exp()).collect();
            CurveFit { model, exponent: slope, constant: local[0], residual, local_constants: local }
        }
    };
    Ok(EigenCurve { tau_hat, points, fit })
}

/// Induced pressure `log lambda(0, s)`.
pub fn pressure_induced(base: &UlamBase, s: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::InvalidParameter { name: "s", reason: format!("must be nonnegative, got {s}") });
    }
    Ok(lambda(base, 0.0, s)?.ln())
}

/// Tolerance on `|lambda(u0, s) - 1|` for the flow pressure.
pub const PRESSURE_TOL: f64 = 1e-10;

/// Flow pressure: the root `u0` of `lambda(u, s) = 1`, bracketed by
/// `[0, log lambda(0, s)]` because `tau >= 1`.
pub fn pressure_flow(base: &UlamBase, s: f64) -> Result<f64> {
    if s == 0.0 {
        return Ok(0.0);
    }
    let lam0 = lambda(base, 0.0, s)?;
    if !(lam0 > 1.0) {
        return Err(Error::Bracket { lambda: lam0 });
    }
    let f = |u: f64| -> Result<f64> { Ok(lambda(base, u, s)? - 1.0) };
    let (mut a, mut b) = (0.0, lam0.ln());
    let (mut fa, mut fb) = (lam0 - 1.0, f(b)?);
    if fb > 0.0 {
        return Err(Error::RootFinding(format!("lambda({b}, {s}) = {} still above one", fb + 1.0)));
    }
    let mut side = 0i8;
    for _ in 0..200 {
        let c = (a * fb - b * fa) / (fb - fa);
        let c = if c > a && c < b { c } else { 0.5 * (a + b) };
        let fc = f(c)?;
        if fc.abs() < PRESSURE_TOL || b - a < 1e-15 * b {
            return Ok(c);
        }
        if fc > 0.0 {
            a = c;
            fa = fc;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            fb = fc;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    Err(Error::RootFinding(format!("flow pressure at s = {s} did not converge")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RelPresRow {
    pub s: f64,
    pub u0: f64,
    pub p_bar: f64,
    /// `u0 tau* / p_bar`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelPresReport {
    pub tau_star: f64,
    /// Rows in decreasing `s`.
    pub rows: Vec<RelPresRow>,
    /// `|ratio - 1|` decreases along the rows.
    pub gap_decreasing: bool,
}

/// Compares the flow pressure with the induced pressure scaled by `tau*`.
pub fn verify_relpres(base: &UlamBase, s_grid: &[f64], tau_star: f64) -> Result<RelPresReport> {
    if s_grid.is_empty() || s_grid.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidParameter { name: "s_grid", reason: "must be nonempty and positive".into() });
    }
    let mut grid = s_grid.to_vec();
    grid.sort_by(|a, b| b.total_cmp(a));
    let rows: Vec<RelPresRow> = grid
        .iter()
        .map(|&s| {
            let p_bar = pressure_induced(base, s)?;
            let u0 = pressure_flow(base, s)?;
            Ok(RelPresRow { s, u0, p_bar, ratio: u0 * tau_star / p_bar })
        })
        .collect::<Result<_>>()?;
    let gap_decreasing = rows.windows(2).all(|w| (w[1].ratio - 1.0).abs() < (w[0].ratio - 1.0).abs());
    Ok(RelPresReport { tau_star, rows, gap_decreasing })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerFit {
    pub exponent: f64,
    pub constant: f64,
    pub residual: f64,
}

/// Fit of `|P_bar(s) - psi* s| ~ c s^p` on an `s` grid.
pub fn phase_transition_fit(base: &UlamBase, s_grid: &[f64], psi_star: f64) -> Result<PowerFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = s_grid
        .iter()
        .map(|&s| Ok((s.ln(), (pressure_induced(base, s)? - psi_star * s).abs().ln())))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::Domain("pressure remainder vanishes on the grid".into()));
    }
    let (slope, intercept, _) = least_squares(&xs, &ys)?;
    let residual = (xs.iter().zip(&ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
    Ok(PowerFit { exponent: slope, constant: intercept.exp(), residual })
}

/// Box occupation histogram of a sample of section points, per state.
pub fn occupation(partition: &UlamPartition, points: impl Iterator<Item = SectionPoint>) -> Vec<f64> {
    let mut h = vec![0.0; partition.len()];
    let mut total = 0.0;
    for p in points {
        if let Some(i) = partition.state_of(p) {
            h[i as usize] += 1.0;
            total += 1.0;
        }
    }
    if total > 0.0 {
        h.iter_mut().for_each(|v| *v /= total);
    }
    h
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_state_chain() {
        let op = TwistedOperator::from_dense(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let e = leading_eigen(&op, 1e-14).unwrap();
        assert!((e.lambda - 1.0).abs() < 1e-12);
        assert!((e.left_vec[0] - 2.0 / 3.0).abs() < 1e-10 && (e.left_vec[1] - 1.0 / 3.0).abs() < 1e-10);
        assert!((e.contraction - 0.7).abs() < 1e-3, "{}", e.contraction);
    }

    #[test]
    fn scaled_matrix_eigenvalue() {
        let op = TwistedOperator::from_dense(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let e = leading_eigen(&op, 1e-14).unwrap();
        let exact = (5.0 + 33f64.sqrt()) / 2.0;
        assert!((e.lambda - exact).abs() < 1e-11 * exact);
    }

    #[test]
    fn rejects_bad_dense() {
        assert!(TwistedOperator::from_dense(&[vec![1.0, -1.0], vec![0.0, 1.0]]).is_err());
        assert!(TwistedOperator::from_dense(&[vec![1.0], vec![1.0]]).is_err());
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-4, 1e-1, 7);
        assert!((g[0] - 1e-4).abs() < 1e-18 && (g[6] - 1e-1).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn options_are_validated() {
        assert!(UlamOptions { resolution: 16, ..UlamOptions::default() }.validate().is_err());
        assert!(UlamOptions { samples_per_box: 10, ..UlamOptions::default() }.validate().is_err());
    }
}
