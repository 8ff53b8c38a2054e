//! Passages through the neutral neighbourhood in level-set coordinates.
//!
//! A passage enters at `(xi, eta)` (first quadrant, `xi < eta` typically)
//! and leaves through the vertical line `x = zeta0 = eps` at height `omega`.
//! Along an orbit the slope `M = y/x` decreases monotonically and the time
//! is an integral of the slope density `m(M)` scaled by the level `G`.
//! All integrals are computed in `s = ln M`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{derive_constants, vector_field, DerivedConstants, FlowParams, HomogeneousSpec};
use crate::ode::{self, OdeOptions};
use crate::quad::{integrate, integrate_line, QuadOptions};
use crate::scalar::{lit, to_f64, Real};

/// A computed passage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Passage<T> {
    pub xi: T,
    pub eta: T,
    /// Exit height on `x = zeta0`.
    pub omega: T,
    /// Passage time.
    pub t: T,
    /// `ln G` for the level through the entry point.
    pub ln_level: T,
    /// `ln(eta / xi)`.
    pub s_entry: T,
    /// `ln(omega / zeta0)`.
    pub s_exit: T,
}

/// Growth regime of `Theta(T)` for a weight of degree `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaRegime {
    /// `rho < 2`: `Theta ~ C T^(1 - rho/2)`.
    Sub2,
    /// `rho = 2`: `Theta ~ C log T`.
    Crit2,
    /// `rho > 2`: `Theta -> C`.
    Super2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThetaAsymptotics<T> {
    pub regime: ThetaRegime,
    pub constant: T,
}

/// Semi-analytic solver for passages of one parameter set.
#[derive(Debug, Clone)]
pub struct LocalSolver<T> {
    params: FlowParams<T>,
    dc: DerivedConstants<T>,
    quad: QuadOptions<T>,
    ln_zeta0: T,
    inv_beta0: T,
    inv_beta: T,
    q: T,
    ln_c0: T,
    ln_c2: T,
    slope_total: T,
}

impl<T: Real> LocalSolver<T> {
    pub fn new(params: &FlowParams<T>) -> Result<Self> {
        let dc = derive_constants(params)?;
        let quad = QuadOptions { abs_tol: T::zero(), rel_tol: lit::<T>(1e-12).max(T::epsilon() * lit(64.0)), max_intervals: 4000 };
        let mut solver = Self {
            params: *params,
            dc,
            quad,
            ln_zeta0: params.eps.ln(),
            inv_beta0: T::one() / dc.beta0,
            inv_beta: T::one() / dc.beta,
            q: dc.q(),
            ln_c0: dc.c0.ln(),
            ln_c2: dc.c2.ln(),
            slope_total: T::zero(),
        };
        let total = integrate_line(|s| solver.density_s(s), T::zero(), &solver.quad)?;
        solver.slope_total = total.value;
        Ok(solver)
    }

    pub fn params(&self) -> &FlowParams<T> {
        &self.params
    }

    pub fn constants(&self) -> &DerivedConstants<T> {
        &self.dc
    }

    /// Exit abscissa `zeta0`.
    pub fn zeta0(&self) -> T {
        self.params.eps
    }

    /// `ln(c0 + c2 e^{2s})` without overflow.
    #[inline]
    pub fn log_c(&self, s: T) -> T {
        let two_s = s + s;
        if s > T::zero() {
            two_s + self.ln_c2 + (self.dc.c0 / self.dc.c2 * (-two_s).exp()).ln_1p()
        } else {
            self.ln_c0 + (self.dc.c2 / self.dc.c0 * two_s.exp()).ln_1p()
        }
    }

    /// Slope density `m(M) = M^(1/beta0 - 1) (c0 + c2 M^2)^(-q)`.
    pub fn slope_density(&self, m: T) -> T {
        self.density_s(m.ln()) / m
    }

    /// `M m(M)` at `M = e^s`, the density of passage time in `s` at unit level.
    #[inline]
    pub fn density_s(&self, s: T) -> T {
        (s * self.inv_beta0 - self.q * self.log_c(s)).exp()
    }

    /// Integrand of `Theta` in `s`, without the `G^(rho/2 - 1)` prefactor.
    #[inline]
    pub fn theta_density_s(&self, spec: &HomogeneousSpec<T>, s: T) -> T {
        let half_rho = spec.rho * lit(0.5);
        let base = s * self.inv_beta0 - self.q * self.log_c(s) - half_rho * s * self.inv_beta0
            + (self.q - T::one()) * half_rho * self.log_c(s);
        let mut v = T::zero();
        if spec.radial != T::zero() {
            let two_s = s + s;
            let l1 = if s > T::zero() { two_s + (-two_s).exp().ln_1p() } else { two_s.exp().ln_1p() };
            v = v + spec.radial * (base + half_rho * l1).exp();
        }
        if spec.axis_x != T::zero() {
            v = v + spec.axis_x * base.exp();
        }
        if spec.axis_y != T::zero() {
            v = v + spec.axis_y * (base + spec.rho * s).exp();
        }
        v
    }

    /// `ln G` of the level through `(xi, eta)`.
    #[inline]
    pub fn ln_level(&self, xi: T, eta: T) -> T {
        let (lx, ly) = (xi.ln(), eta.ln());
        // ln(c0 xi^2 + c2 eta^2) = 2 ln xi + log_c(ln(eta/xi))
        let lc = lx + lx + self.log_c(ly - lx);
        self.inv_beta * lx + self.inv_beta0 * ly + (T::one() - self.q) * lc
    }

    /// Log-slope at which the level `ln_g` meets `x = zeta0`.
    pub fn exit_log_slope(&self, ln_g: T) -> Result<T> {
        let c = ln_g - self.ln_zeta0 - self.ln_zeta0;
        let qm1 = self.q - T::one();
        let g = |s: T| c - s * self.inv_beta0 + qm1 * self.log_c(s);
        let dg = |s: T| {
            let e = (s + s).exp();
            let frac = if e.is_finite() { self.dc.c2 * e / (self.dc.c0 + self.dc.c2 * e) } else { T::one() };
            -self.inv_beta0 + (qm1 + qm1) * frac
        };
        let two = lit::<T>(2.0);
        let k_lo = self.inv_beta0.min((two - self.inv_beta).abs());
        let s0 = self.dc.beta0 * (c + qm1 * self.ln_c0);
        let g0 = g(s0);
        if g0 == T::zero() {
            return Ok(s0);
        }
        // |g'| >= k_lo gives an exact bracket.
        let reach = g0.abs() / k_lo * lit(1.000_001) + lit(1e-12);
        let (mut lo, mut hi) = if g0 > T::zero() { (s0, s0 + reach) } else { (s0 - reach, s0) };
        let mut s = s0;
        for _ in 0..100 {
            let gs = g(s);
            if gs == T::zero() {
                return Ok(s);
            }
            if gs > T::zero() {
                lo = s;
            } else {
                hi = s;
            }
            let mut next = s - gs / dg(s);
            if !(next > lo && next < hi) {
                next = (lo + hi) * lit(0.5);
            }
            let tol = lit::<T>(4.0) * T::epsilon() * s.abs().max(T::one());
            if (next - s).abs() <= tol || hi - lo <= tol {
                return Ok(next);
            }
            s = next;
        }
        Err(Error::RootFinding(format!("exit slope for ln G = {ln_g} did not converge")))
    }

    fn check_entry(&self, xi: T, eta: T) -> Result<()> {
        if !(xi > T::zero()) || !(eta > T::zero()) || !xi.is_finite() || !eta.is_finite() {
            return Err(Error::Domain(format!("passage entry must be in the open first quadrant, got ({xi}, {eta})")));
        }
        Ok(())
    }

    /// Exit geometry of the passage from `(xi, eta)`, without the time integral.
    pub fn passage_geometry(&self, xi: T, eta: T) -> Result<Passage<T>> {
        self.check_entry(xi, eta)?;
        let ln_g = self.ln_level(xi, eta);
        let s_entry = eta.ln() - xi.ln();
        if xi >= self.zeta0() {
            return Ok(Passage { xi, eta, omega: eta, t: T::zero(), ln_level: ln_g, s_entry, s_exit: s_entry });
        }
        let s_exit = self.exit_log_slope(ln_g)?.min(s_entry);
        let omega = (self.ln_zeta0 + s_exit).exp();
        Ok(Passage { xi, eta, omega, t: T::zero(), ln_level: ln_g, s_entry, s_exit })
    }

    /// Passage time and exit point by direct quadrature.
    pub fn passage_time(&self, xi: T, eta: T) -> Result<Passage<T>> {
        let mut p = self.passage_geometry(xi, eta)?;
        if p.s_exit < p.s_entry {
            let r = integrate(|s| self.density_s(s), p.s_exit, p.s_entry, &self.quad)?;
            p.t = r.value * (-p.ln_level).exp();
        }
        Ok(p)
    }

    /// `Theta` over the slope range `[s_lo, s_hi]` on level `ln_g`.
    pub fn theta_between(&self, spec: &HomogeneousSpec<T>, ln_g: T, s_lo: T, s_hi: T) -> Result<T> {
        if !(s_lo < s_hi) {
            return Ok(T::zero());
        }
        let r = integrate(|s| self.theta_density_s(spec, s), s_lo, s_hi, &self.quad)?;
        Ok(r.value * ((spec.rho * lit(0.5) - T::one()) * ln_g).exp())
    }

    /// `Theta` accumulated over a whole passage.
    pub fn theta_along(&self, spec: &HomogeneousSpec<T>, p: &Passage<T>) -> Result<T> {
        self.theta_between(spec, p.ln_level, p.s_exit, p.s_entry)
    }

    /// Log-slope reached after time `t` of the passage `p`.
    pub fn log_slope_at(&self, p: &Passage<T>, t: T) -> Result<T> {
        if t <= T::zero() {
            return Ok(p.s_entry);
        }
        if t >= p.t {
            return Ok(p.s_exit);
        }
        let level = p.ln_level.exp();
        let target = t * level;
        let f = |s: T| -> Result<T> {
            Ok(integrate(|r| self.density_s(r), s, p.s_entry, &self.quad)?.value - target)
        };
        let (mut lo, mut hi) = (p.s_exit, p.s_entry);
        let (mut flo, mut fhi) = (p.t * level - target, -target);
        let mut side = 0i8;
        for _ in 0..200 {
            let mid = (lo * fhi - hi * flo) / (fhi - flo);
            let mid = if mid > lo && mid < hi { mid } else { (lo + hi) * lit(0.5) };
            let fm = f(mid)?;
            if fm == T::zero() || hi - lo <= lit::<T>(1e-13) * mid.abs().max(T::one()) {
                return Ok(mid);
            }
            if fm > T::zero() {
                lo = mid;
                flo = fm;
                if side == 1 {
                    fhi = fhi * lit(0.5);
                }
                side = 1;
            } else {
                hi = mid;
                fhi = fm;
                if side == -1 {
                    flo = flo * lit(0.5);
                }
                side = -1;
            }
        }
        Err(Error::RootFinding("slope at intermediate time".into()))
    }

    /// `int_0^inf m(M) dM`.
    pub fn slope_integral_total(&self) -> T {
        self.slope_total
    }

    /// `xi0(eta) = lim xi(eta, T) T^beta`.
    pub fn xi_zero(&self, eta: T) -> T {
        let dc = &self.dc;
        let p = &self.params;
        dc.c2.powf(-T::one() / dc.u) * eta.powf(-p.a2 / p.b2) * self.slope_total.powf(dc.beta)
    }

    /// `G0` with `G(T) ~ G0 / T`.
    pub fn g_zero(&self, eta: T) -> T {
        let two = lit::<T>(2.0);
        self.dc.c2.powf(T::one() - self.q) * self.xi_zero(eta).powf(self.inv_beta) * eta.powf(two - self.inv_beta)
    }

    /// `omega0(eta) = lim omega(eta, T) T^beta0`.
    pub fn omega_zero(&self, eta: T) -> T {
        let two = lit::<T>(2.0);
        (self.g_zero(eta) * self.dc.c0.powf(self.q - T::one()) * self.zeta0().powf(self.inv_beta0 - two)).powf(self.dc.beta0)
    }

    /// Inverse of [`passage_time`](Self::passage_time) in `xi`: the entry
    /// abscissa at height `eta` whose passage lasts `t`.
    pub fn exit_point(&self, eta: T, t: T) -> Result<Passage<T>> {
        if !(t > T::zero()) || !t.is_finite() {
            return Err(Error::BelowMinimalPassage { requested: to_f64(t), minimum: 0.0 });
        }
        if !(eta > T::zero()) {
            return Err(Error::Domain(format!("eta must be positive, got {eta}")));
        }
        let ln_t = t.ln();
        let lz = self.ln_zeta0;
        let f = |lx: T| -> Result<T> {
            let p = self.passage_time(lx.exp(), eta)?;
            Ok(if p.t > T::zero() { p.t.ln() - ln_t } else { T::infinity().neg() })
        };
        let guess = (self.xi_zero(eta).ln() - self.dc.beta * ln_t).min(lz - lit(1e-3));
        let step = lit::<T>(std::f64::consts::LN_2);
        let fg = f(guess)?;
        let (mut lo, mut hi, mut flo, mut fhi);
        if fg > T::zero() {
            // Passage too long: move right towards zeta0.
            lo = guess;
            flo = fg;
            hi = guess;
            fhi = fg;
            let mut k = 0;
            while fhi > T::zero() {
                lo = hi;
                flo = fhi;
                hi = (hi + step).min(lz);
                fhi = f(hi)?;
                k += 1;
                if k > 2000 {
                    return Err(Error::RootFinding("exit_point bracket".into()));
                }
            }
        } else {
            hi = guess;
            fhi = fg;
            lo = guess;
            flo = fg;
            let mut k = 0;
            while flo < T::zero() {
                hi = lo;
                fhi = flo;
                lo = lo - step;
                flo = f(lo)?;
                k += 1;
                if k > 2000 {
                    return Err(Error::RootFinding("exit_point bracket".into()));
                }
            }
        }
        // Illinois on ln T(ln xi), which is close to linear.
        let mut side = 0i8;
        let tol = lit::<T>(1e-13);
        for _ in 0..200 {
            let fin_hi = if fhi.is_finite() { fhi } else { -lit::<T>(1e3) };
            let mut x = (lo * fin_hi - hi * flo) / (fin_hi - flo);
            if !(x > lo && x < hi) {
                x = (lo + hi) * lit(0.5);
            }
            let fx = f(x)?;
            if fx == T::zero() || (hi - lo) <= tol || fx.abs() <= lit::<T>(1e-14) {
                return self.passage_time(x.exp(), eta);
            }
            if fx > T::zero() {
                lo = x;
                flo = fx;
                if side == 1 {
                    fhi = fhi * lit(0.5);
                }
                side = 1;
            } else {
                hi = x;
                fhi = fx;
                if side == -1 {
                    flo = flo * lit(0.5);
                }
                side = -1;
            }
        }
        Err(Error::NonConvergence { iterations: 200, reason: "exit_point root".into() })
    }

    /// `Theta(T)` for the passage of duration `t` entering at height `eta`.
    pub fn theta_integral(&self, spec: &HomogeneousSpec<T>, eta: T, t: T) -> Result<T> {
        spec.validate()?;
        let p = self.exit_point(eta, t)?;
        self.theta_along(spec, &p)
    }

    /// Leading-order constant of `Theta(T)` as `T -> inf` at entry height `eta`.
    pub fn theta_asymptotic_constant(&self, spec: &HomogeneousSpec<T>, eta: T) -> Result<ThetaAsymptotics<T>> {
        spec.validate()?;
        let two = lit::<T>(2.0);
        let half_rho = spec.rho / two;
        let rho0 = self.dc.rho0(spec.rho);
        let th0 = spec.theta_zero() * self.dc.c0.powf(rho0);
        let thi = spec.theta_inf() * self.dc.c2.powf(rho0);
        let g0 = self.g_zero(eta);
        if spec.rho < two {
            let c_star = integrate_line(|s| self.theta_density_s(spec, s), T::zero(), &self.quad)?.value;
            Ok(ThetaAsymptotics { regime: ThetaRegime::Sub2, constant: g0.powf(half_rho - T::one()) * c_star })
        } else if spec.rho == two {
            Ok(ThetaAsymptotics { regime: ThetaRegime::Crit2, constant: self.dc.beta0 * th0 + self.dc.beta * thi })
        } else {
            let e = half_rho - T::one();
            let left = self.dc.beta0 * th0 * (self.zeta0() / self.omega_zero(eta)).powf(e * self.inv_beta0);
            let right = self.dc.beta * thi * (eta / self.xi_zero(eta)).powf(e * self.inv_beta);
            Ok(ThetaAsymptotics { regime: ThetaRegime::Super2, constant: g0.powf(e) / e * (left + right) })
        }
    }
}

/// Cumulative integral of a smooth density on a uniform grid, interpolated
/// by cubic Hermite polynomials.
#[derive(Debug, Clone)]
pub struct CumulativeTable<T> {
    s_min: T,
    s_max: T,
    h: T,
    inv_h: T,
    cum: Vec<T>,
    val: Vec<T>,
}

impl<T: Real> CumulativeTable<T> {
    pub fn build<F: Fn(T) -> T>(f: F, s_min: T, s_max: T, h: T, opts: &QuadOptions<T>) -> Result<Self> {
        let n = ((s_max - s_min) / h).ceil().to_usize().ok_or_else(|| Error::Domain("table size".into()))?;
        let mut cum = Vec::with_capacity(n + 1);
        let mut val = Vec::with_capacity(n + 1);
        let mut acc = T::zero();
        let mut comp = T::zero();
        for k in 0..=n {
            let s = s_min + h * T::from_usize(k).unwrap();
            if k > 0 {
                let piece = integrate(&f, s - h, s, opts)?.value;
                // Kahan summation keeps the long cumulative sums accurate.
                let y = piece - comp;
                let t = acc + y;
                comp = (t - acc) - y;
                acc = t;
            }
            cum.push(acc);
            val.push(f(s));
        }
        let s_max = s_min + h * T::from_usize(n).unwrap();
        Ok(Self { s_min, s_max, h, inv_h: T::one() / h, cum, val })
    }

    pub fn contains(&self, s: T) -> bool {
        s >= self.s_min && s <= self.s_max
    }

    /// `int_{s_min}^{s} f`, or `None` outside the grid.
    #[inline]
    pub fn cumulative(&self, s: T) -> Option<T> {
        if !self.contains(s) {
            return None;
        }
        let x = (s - self.s_min) * self.inv_h;
        let k = x.floor().to_usize()?.min(self.cum.len() - 2);
        let t = x - T::from_usize(k).unwrap();
        let t2 = t * t;
        let t3 = t2 * t;
        let two = lit::<T>(2.0);
        let three = lit::<T>(3.0);
        let h00 = two * t3 - three * t2 + T::one();
        let h10 = t3 - two * t2 + t;
        let h01 = three * t2 - two * t3;
        let h11 = t3 - t2;
        Some(h00 * self.cum[k] + h10 * self.h * self.val[k] + h01 * self.cum[k + 1] + h11 * self.h * self.val[k + 1])
    }

    /// `int_a^b f` when both ends lie on the grid.
    #[inline]
    pub fn between(&self, a: T, b: T) -> Option<T> {
        Some(self.cumulative(b)? - self.cumulative(a)?)
    }
}

/// Time and weight integrals of one passage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PassageSummary<T> {
    pub passage: Passage<T>,
    /// `int w dt` over the passage.
    pub theta_w: T,
    /// `int W_rho dt` over the passage (the potential shape).
    pub theta_psi: T,
}

/// Tabulated passage evaluator: the three slope integrals (time, `w`, and
/// the potential shape) are precomputed once, so a passage costs a root
/// solve and a few interpolations. Falls back to quadrature off the grid
/// or for weights whose integrand is unbounded (`rho > 2`).
#[derive(Debug, Clone)]
pub struct PassageTable<T> {
    solver: LocalSolver<T>,
    time: CumulativeTable<T>,
    w: Option<CumulativeTable<T>>,
    psi: Option<CumulativeTable<T>>,
}

/// Grid of the passage tables in `s = ln M`.
pub const TABLE_S_MIN: f64 = -48.0;
pub const TABLE_S_MAX: f64 = 48.0;
pub const TABLE_STEP: f64 = 1.0 / 128.0;

impl<T: Real> PassageTable<T> {
    pub fn new(solver: LocalSolver<T>) -> Result<Self> {
        let (lo, hi, h) = (lit::<T>(TABLE_S_MIN), lit::<T>(TABLE_S_MAX), lit::<T>(TABLE_STEP));
        let opts = QuadOptions { abs_tol: lit::<T>(1e-300).max(T::min_positive_value()), ..solver.quad };
        let time = CumulativeTable::build(|s| solver.density_s(s), lo, hi, h, &opts)?;
        let two = lit::<T>(2.0);
        let w_spec = solver.params.w_spec;
        let psi_spec = solver.params.psi_spec.shape;
        let w = if w_spec.rho <= two {
            Some(CumulativeTable::build(|s| solver.theta_density_s(&w_spec, s), lo, hi, h, &opts)?)
        } else {
            None
        };
        let psi = if psi_spec.rho <= two {
            Some(CumulativeTable::build(|s| solver.theta_density_s(&psi_spec, s), lo, hi, h, &opts)?)
        } else {
            None
        };
        Ok(Self { solver, time, w, psi })
    }

    pub fn solver(&self) -> &LocalSolver<T> {
        &self.solver
    }

    fn weight(&self, table: Option<&CumulativeTable<T>>, spec: &HomogeneousSpec<T>, p: &Passage<T>) -> Result<T> {
        if p.s_exit >= p.s_entry {
            return Ok(T::zero());
        }
        let raw = match table.and_then(|t| t.between(p.s_exit, p.s_entry)) {
            Some(v) => v,
            None => return self.solver.theta_along(spec, p),
        };
        Ok(raw * ((spec.rho * lit(0.5) - T::one()) * p.ln_level).exp())
    }

    /// Passage from `(xi, eta)` with its weight integrals.
    pub fn passage(&self, xi: T, eta: T) -> Result<PassageSummary<T>> {
        let mut p = self.solver.passage_geometry(xi, eta)?;
        if p.s_exit < p.s_entry {
            p.t = match self.time.between(p.s_exit, p.s_entry) {
                Some(v) => v * (-p.ln_level).exp(),
                None => self.solver.passage_time(xi, eta)?.t,
            };
        }
        let params = &self.solver.params;
        let theta_w = self.weight(self.w.as_ref(), &params.w_spec, &p)?;
        let theta_psi = self.weight(self.psi.as_ref(), &params.psi_spec.shape, &p)?;
        Ok(PassageSummary { passage: p, theta_w, theta_psi })
    }
}

/// Output of [`rk_orbit`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    /// `(t, [x, y, z])` at every accepted step.
    pub samples: Vec<(T, [T; 3])>,
    /// Exit through `|x| = zeta0`, if reached before `t_end`.
    pub exit: Option<(T, [T; 3])>,
    /// First crossings of the requested `|y|` levels: `(level index, t, state)`.
    pub crossings: Vec<(usize, T, [T; 3])>,
}

/// Direct Runge-Kutta integration of the local field from `q0` until the
/// orbit leaves through `|x| = eps` or `t_end` is reached.
pub fn rk_orbit<T: Real>(p: &FlowParams<T>, q0: [T; 3], t_end: T, tol: T, y_levels: &[T]) -> Result<Trajectory<T>> {
    if !(tol > T::zero()) {
        return Err(Error::InvalidParameter { name: "tol", reason: "must be positive".into() });
    }
    if q0[0].abs() > p.eps || q0[1].abs() > p.eps {
        return Err(Error::OutsideChart { xi: to_f64(q0[0]), eta: to_f64(q0[1]), eps: to_f64(p.eps) });
    }
    // Pure relative control: entry abscissae can be many decades below eps.
    let opts = OdeOptions { tol, atol: T::min_positive_value(), h0: lit(1e-2), ..OdeOptions::default() };
    let eps = p.eps;
    let exit = move |_: T, y: &[T; 3]| y[0].abs() - eps;
    let mut samples = vec![(T::zero(), q0)];
    let mut crossings = Vec::new();
    let mut seen = vec![false; y_levels.len()];
    let out = ode::solve(
        |_, s: &[T; 3]| {
            let (a, b, c) = vector_field(p, s[0], s[1], s[2]);
            [a, b, c]
        },
        T::zero(),
        q0,
        t_end,
        &opts,
        &[&exit],
        |step| {
            for (i, &lvl) in y_levels.iter().enumerate() {
                let ga = step.y0[1].abs() - lvl;
                let gb = step.y1[1].abs() - lvl;
                if !seen[i] && ga != T::zero() && (ga < T::zero()) != (gb < T::zero()) {
                    seen[i] = true;
                    let g = |_: T, y: &[T; 3]| y[1].abs() - lvl;
                    let tc = find_root(&g, step, ga, gb);
                    crossings.push((i, tc, step.interpolate(tc)));
                }
            }
            samples.push((step.t1, step.y1));
            true
        },
    )?;
    let exit = out.event.map(|_| (out.t, out.y));
    Ok(Trajectory { samples, exit, crossings })
}

fn find_root<T: Real>(g: &dyn Fn(T, &[T; 3]) -> T, step: &ode::Step<T, 3>, mut fa: T, mut fb: T) -> T {
    let (mut a, mut b) = (step.t0, step.t1);
    for _ in 0..200 {
        let c = (a + b) * lit(0.5);
        if b - a <= T::epsilon() * lit::<T>(4.0) * b.abs().max(T::one()) {
            return c;
        }
        let fc = g(c, &step.interpolate(c));
        if (fc < T::zero()) == (fa < T::zero()) {
            a = c;
            fa = fc;
        } else {
            b = c;
            fb = fc;
        }
    }
    let _ = fb;
    (a + b) * lit(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Preset;

    fn solver(p: Preset) -> LocalSolver<f64> {
        LocalSolver::new(&p.params()).unwrap()
    }

    #[test]
    fn log_c_matches_naive() {
        let s = solver(Preset::Stable);
        for x in [-30.0, -2.0, 0.0, 0.7, 5.0, 40.0] {
            let naive = (2.0 + 3.0 * (2.0 * x as f64).exp()).ln();
            assert!((s.log_c(x) - naive).abs() < 1e-13 * naive.abs().max(1.0), "{x}");
        }
    }

    #[test]
    fn level_reconstructs_entry() {
        let s = solver(Preset::Boundary);
        let (xi, eta) = (0.013, 0.62);
        let lg = s.ln_level(xi, eta);
        let m = eta / xi;
        let x2 = (lg - m.ln() / s.dc.beta0 + (s.q - 1.0) * s.log_c(m.ln())).exp();
        assert!((x2.sqrt() - xi).abs() < 1e-14);
    }

    #[test]
    fn exit_point_lies_on_level() {
        let s = solver(Preset::Stable);
        let p = s.passage_time(1e-3, 0.5).unwrap();
        assert!((s.ln_level(1.0, p.omega) - p.ln_level).abs() < 1e-12);
        assert!(p.omega < 1e-2 && p.t > 1.0);
    }

    #[test]
    fn boundary_entry_has_zero_passage() {
        let s = solver(Preset::Stable);
        let p = s.passage_time(1.0, 0.5).unwrap();
        assert_eq!(p.t, 0.0);
        assert_eq!(p.omega, 0.5);
    }

    #[test]
    fn table_matches_quadrature() {
        let s = solver(Preset::Stable);
        let table = PassageTable::new(s.clone()).unwrap();
        for &(xi, eta) in &[(0.9, 0.95), (0.3, 0.5), (1e-3, 0.7), (1e-8, 0.4), (1e-14, 0.99)] {
            let fast = table.passage(xi, eta).unwrap();
            let slow = s.passage_time(xi, eta).unwrap();
            let w = s.theta_along(&s.params.w_spec, &slow).unwrap();
            assert!((fast.passage.t - slow.t).abs() <= 1e-9 * slow.t.max(1e-3), "{xi} {} {}", fast.passage.t, slow.t);
            assert!((fast.theta_w - w).abs() <= 1e-9 * w.max(1e-3));
        }
    }

    #[test]
    fn rejects_bad_entries() {
        let s = solver(Preset::Clt);
        assert!(s.passage_time(0.0, 0.5).is_err());
        assert!(s.passage_time(0.1, -0.5).is_err());
        assert!(matches!(s.exit_point(0.5, -1.0), Err(Error::BelowMinimalPassage { .. })));
    }

    #[test]
    fn single_precision_passage() {
        let s = LocalSolver::<f32>::new(&Preset::Stable.params()).unwrap();
        let p = s.passage_time(1e-3, 0.5).unwrap();
        let d = solver(Preset::Stable).passage_time(1e-3, 0.5).unwrap();
        assert!(((p.t as f64) - d.t).abs() < 1e-4 * d.t);
    }
}
