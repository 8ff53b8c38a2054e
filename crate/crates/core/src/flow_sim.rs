//! The global system: a hybrid section map on the 2-torus that is Arnold's
//! cat map away from a neutral chart `U` and the exact local flow inside it,
//! its first return map `F` to `Y = torus \ U`, and flow-time Birkhoff sums.
//!
//! Section coordinates live on `[-1/2, 1/2)^2`. Local chart coordinates are
//! the cat map's unstable/stable eigen-coordinates divided by a chart scale,
//! so that `U = {|x| < eps, |y| < eps}` in local units.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::local_dynamics::{LocalSolver, PassageSummary, PassageTable};
use crate::model::{derive_constants, homogeneous_eval, vector_field, DerivedConstants, FlowParams};
use crate::ode::{self, OdeOptions};

/// Point of the section `Sigma`, wrapped into `[-1/2, 1/2)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SectionPoint {
    pub x: f64,
    pub y: f64,
}

impl SectionPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x: wrap(x), y: wrap(y) }
    }
}

#[inline]
fn wrap(v: f64) -> f64 {
    let w = v - v.round();
    if w >= 0.5 {
        w - 1.0
    } else {
        w
    }
}

/// One application of the first return map `F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnRecord {
    pub start: SectionPoint,
    pub end: SectionPoint,
    /// Number of section-map steps until the orbit is back in `Y`.
    pub r: u64,
    /// Flow time of the return.
    pub tau: f64,
    /// Induced potential `C' - psi_0`.
    pub psi_bar: f64,
    pub passed_neutral: bool,
}

/// Leading eigenvalue of the cat map, `(3 + sqrt 5) / 2`.
pub const LAMBDA_U: f64 = 2.618_033_988_749_895;

/// Relative width of the chart boundary layer assigned to `Y`.
pub const CHART_EDGE: f64 = 1e-10;

/// Tunable parts of the hybrid construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HybridOptions {
    /// Half-width of `U` along each eigen-axis in torus units.
    pub chart_half_width: f64,
    /// Returns whose passage would exceed this flow time are reported as
    /// non-returning.
    pub max_passage_time: f64,
}

impl Default for HybridOptions {
    fn default() -> Self {
        Self { chart_half_width: 0.25, max_passage_time: 1e15 }
    }
}

/// Immutable description of the hybrid system; cheap to clone and share.
#[derive(Debug, Clone)]
pub struct HybridSystem {
    params: FlowParams<f64>,
    dc: DerivedConstants<f64>,
    opts: HybridOptions,
    table: Arc<PassageTable<f64>>,
    /// Unit unstable and stable eigenvectors.
    e_u: [f64; 2],
    e_s: [f64; 2],
    /// Torus units per local unit.
    scale: f64,
}

/// Outcome of one literal section step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionStep {
    pub next: SectionPoint,
    /// Flow time to the next section crossing.
    pub h: f64,
    /// `int w dt` over the step.
    pub dz_extra: f64,
    /// `int W_rho dt` over the step (potential shape).
    pub psi_shape: f64,
}

impl HybridSystem {
    pub fn new(params: &FlowParams<f64>, opts: HybridOptions) -> Result<Self> {
        let dc = derive_constants(params)?;
        if !(opts.chart_half_width > 0.0) || opts.chart_half_width * std::f64::consts::SQRT_2 >= 0.5 {
            return Err(Error::InvalidParameter {
                name: "chart_half_width",
                reason: format!("chart must lie strictly inside the fundamental domain, got {}", opts.chart_half_width),
            });
        }
        if !(opts.max_passage_time > 1.0) {
            return Err(Error::InvalidParameter { name: "max_passage_time", reason: "must exceed 1".into() });
        }
        let solver = LocalSolver::new(params)?;
        let table = PassageTable::new(solver)?;
        let n = (1.0 + (LAMBDA_U - 2.0).powi(2)).sqrt();
        let e_u = [1.0 / n, (LAMBDA_U - 2.0) / n];
        let e_s = [-e_u[1], e_u[0]];
        let sys = Self { params: *params, dc, opts, table: Arc::new(table), e_u, e_s, scale: opts.chart_half_width / params.eps };
        // The entry strip A^{-1}(U) \ U must be nonempty: a point just
        // outside U along the stable axis maps into U.
        let probe = sys.to_section(0.0, params.eps * (1.0 + 0.5 * (1.0 - 1.0 / LAMBDA_U)));
        if sys.in_chart(probe) || !sys.in_chart(sys.cat(probe)) {
            return Err(Error::Domain("entry strip of the chart is empty".into()));
        }
        Ok(sys)
    }

    pub fn params(&self) -> &FlowParams<f64> {
        &self.params
    }

    pub fn constants(&self) -> &DerivedConstants<f64> {
        &self.dc
    }

    pub fn options(&self) -> &HybridOptions {
        &self.opts
    }

    pub fn passage_table(&self) -> &PassageTable<f64> {
        &self.table
    }

    /// Local chart coordinates of a section point.
    #[inline]
    pub fn to_local(&self, p: SectionPoint) -> (f64, f64) {
        let x = (self.e_u[0] * p.x + self.e_u[1] * p.y) / self.scale;
        let y = (self.e_s[0] * p.x + self.e_s[1] * p.y) / self.scale;
        (x, y)
    }

    #[inline]
    pub fn to_section(&self, x: f64, y: f64) -> SectionPoint {
        let (a, b) = (x * self.scale, y * self.scale);
        SectionPoint::new(a * self.e_u[0] + b * self.e_s[0], a * self.e_u[1] + b * self.e_s[1])
    }

    /// Membership in the open chart `U` (the set `P_0`). A boundary layer
    /// of relative width [`CHART_EDGE`] counts as outside, so exit points
    /// placed on `|x| = eps` stay in `Y` after the round trip through
    /// section coordinates.
    #[inline]
    pub fn in_chart(&self, p: SectionPoint) -> bool {
        let (x, y) = self.to_local(p);
        self.in_chart_local(x, y)
    }

    #[inline]
    fn in_chart_local(&self, x: f64, y: f64) -> bool {
        let e = self.params.eps * (1.0 - CHART_EDGE);
        x.abs() < e && y.abs() < e
    }

    /// Cat map `(2x + y, x + y) mod 1`.
    #[inline]
    pub fn cat(&self, p: SectionPoint) -> SectionPoint {
        SectionPoint::new(2.0 * p.x + p.y, p.x + p.y)
    }

    /// One literal step of the section map. Inside `U` the local flow is
    /// integrated until `z` advances by one; if the orbit reaches `|x| = eps`
    /// first, it continues for the rest of the lap under the linear
    /// hyperbolic flow whose time-one map is the cat map.
    pub fn poincare_step(&self, q: SectionPoint) -> Result<SectionStep> {
        if !self.in_chart(q) {
            return Ok(SectionStep { next: self.cat(q), h: 1.0, dz_extra: 0.0, psi_shape: 0.0 });
        }
        let (x0, y0) = self.to_local(q);
        let p = self.params;
        let shape = p.psi_spec.shape;
        let eps = p.eps;
        let opts = OdeOptions { tol: 1e-12, h0: 1e-2, ..OdeOptions::default() };
        let exit = move |_: f64, s: &[f64; 4]| s[0].abs() - eps;
        let lap = |_: f64, s: &[f64; 4]| s[2] - 1.0;
        let out = ode::solve(
            |_, s: &[f64; 4]| {
                let (a, b, c) = vector_field(&p, s[0], s[1], s[2]);
                let wshape = homogeneous_eval(&shape, s[0], s[1]).unwrap_or(f64::INFINITY);
                [a, b, c, wshape]
            },
            0.0,
            [x0, y0, 0.0, 0.0],
            self.opts.max_passage_time,
            &opts,
            &[&exit, &lap],
            |_| true,
        )?;
        let (x1, y1, z1) = (out.y[0], out.y[1], out.y[2]);
        match out.event {
            Some(1) => Ok(SectionStep { next: self.to_section(x1, y1), h: out.t, dz_extra: z1 - out.t, psi_shape: out.y[3] }),
            Some(_) => {
                let rest = 1.0 - z1;
                let (xe, ye) = outward(eps.copysign(x1), y1, rest);
                Ok(SectionStep { next: self.to_section(xe, ye), h: out.t + rest, dz_extra: z1 - out.t, psi_shape: out.y[3] })
            }
            None => Err(Error::NoReturn { cap: self.opts.max_passage_time, last: (x1, y1) }),
        }
    }

    fn ensure_in_y(&self, q: SectionPoint) -> Result<()> {
        if self.in_chart(q) {
            let (x, y) = self.to_local(q);
            return Err(Error::OutsideChart { xi: x, eta: y, eps: self.params.eps });
        }
        Ok(())
    }

    /// Passage through `U` entered at the local point `(x0, y0)`.
    pub fn chart_passage(&self, x0: f64, y0: f64) -> Result<PassageSummary<f64>> {
        if x0 == 0.0 {
            return Err(Error::NoReturn { cap: self.opts.max_passage_time, last: (x0, y0) });
        }
        let s = self.table.passage(x0.abs(), y0.abs())?;
        if !(s.passage.t <= self.opts.max_passage_time) {
            return Err(Error::NoReturn { cap: self.opts.max_passage_time, last: (x0, y0) });
        }
        Ok(s)
    }

    /// First return to `Y` from `q` in `Y`, resolving a neutral passage in
    /// one shot.
    pub fn induced_return(&self, q: SectionPoint) -> Result<ReturnRecord> {
        self.ensure_in_y(q)?;
        Ok(self.induced_return_unchecked(q)?.0)
    }

    /// As [`induced_return`](Self::induced_return), also returning the
    /// passage summary when the orbit went through the chart.
    pub fn induced_return_detail(&self, q: SectionPoint) -> Result<(ReturnRecord, Option<PassageSummary<f64>>)> {
        self.ensure_in_y(q)?;
        self.induced_return_unchecked(q)
    }

    #[inline]
    fn induced_return_unchecked(&self, q: SectionPoint) -> Result<(ReturnRecord, Option<PassageSummary<f64>>)> {
        let q1 = self.cat(q);
        let (x0, y0) = self.to_local(q1);
        let eps = self.params.eps;
        if !self.in_chart_local(x0, y0) {
            let rec = ReturnRecord { start: q, end: q1, r: 1, tau: 1.0, psi_bar: self.params.psi_spec.offset, passed_neutral: false };
            return Ok((rec, None));
        }
        let s = self.chart_passage(x0, y0)?;
        let z = s.passage.t + s.theta_w;
        let laps = z.floor();
        let rest = laps + 1.0 - z;
        let tau = 1.0 + s.passage.t + rest;
        let r = (laps as u64).saturating_add(2);
        let (xe, ye) = outward(eps.copysign(x0), s.passage.omega.copysign(y0), rest);
        let end = self.to_section(xe, ye);
        let psi0 = self.params.psi_spec.scale * s.theta_psi;
        let rec = ReturnRecord { start: q, end, r, tau, psi_bar: self.params.psi_spec.offset - psi0, passed_neutral: true };
        Ok((rec, Some(s)))
    }

    /// First return computed by literal section steps (Runge-Kutta inside
    /// the chart). Slow; used to validate [`induced_return`](Self::induced_return).
    pub fn induced_return_literal(&self, q: SectionPoint, max_steps: u64) -> Result<ReturnRecord> {
        self.ensure_in_y(q)?;
        let mut p = q;
        let mut tau = 0.0;
        let mut shape = 0.0;
        let mut r = 0u64;
        let mut neutral = false;
        loop {
            let st = self.poincare_step(p)?;
            r += 1;
            tau += st.h;
            shape += st.psi_shape;
            p = st.next;
            if !self.in_chart(p) {
                break;
            }
            neutral = true;
            if r >= max_steps {
                return Err(Error::NoReturn { cap: max_steps as f64, last: (p.x, p.y) });
            }
        }
        let psi = &self.params.psi_spec;
        Ok(ReturnRecord { start: q, end: p, r, tau, psi_bar: psi.offset - psi.scale * shape, passed_neutral: neutral })
    }

    /// The induced potential of a record.
    pub fn induced_psi(&self, rec: &ReturnRecord) -> f64 {
        rec.psi_bar
    }

    /// A point of `Y` drawn uniformly from the section.
    pub fn random_point_in_y<R: Rng + ?Sized>(&self, rng: &mut R) -> SectionPoint {
        loop {
            let p = SectionPoint::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            if !self.in_chart(p) {
                return p;
            }
        }
    }

    /// A forward orbit of `F` from a seeded random start after `n_burn`
    /// discarded returns.
    pub fn orbit(&self, seed: u64, stream: u64, n_burn: u64) -> Result<Orbit<'_>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut o = Orbit { sys: self, point: self.random_point_in_y(&mut rng) };
        for _ in 0..n_burn {
            o.next_record()?;
        }
        Ok(o)
    }

    /// `n` consecutive returns of one long orbit, after `n_burn` discarded ones.
    pub fn srb_sample(&self, seed: u64, n_burn: u64, n: usize) -> Result<Vec<ReturnRecord>> {
        let mut o = self.orbit(seed, 0, n_burn)?;
        (0..n).map(|_| o.next_record()).collect()
    }

    /// Integral of the potential over flow time `t_flow` from `q0`.
    pub fn flow_birkhoff(&self, q0: SectionPoint, t_flow: f64) -> Result<f64> {
        let mut clock = FlowClock::new(self, q0)?;
        clock.advance(t_flow)
    }
}

/// Local point after time `t` of the linear flow `(x, y) -> (x L^t, y L^-t)`.
#[inline]
fn outward(x: f64, y: f64, t: f64) -> (f64, f64) {
    let g = (t * LAMBDA_U.ln()).exp();
    (x * g, y / g)
}

/// Forward orbit of the return map.
#[derive(Debug, Clone)]
pub struct Orbit<'a> {
    sys: &'a HybridSystem,
    point: SectionPoint,
}

impl<'a> Orbit<'a> {
    pub fn point(&self) -> SectionPoint {
        self.point
    }

    #[inline]
    pub fn next_record(&mut self) -> Result<ReturnRecord> {
        let rec = self.sys.induced_return_unchecked(self.point)?.0;
        self.point = rec.end;
        Ok(rec)
    }
}

/// Flow-time walker over the suspension: accumulates the potential along
/// complete returns and interpolates linearly inside the current one.
#[derive(Debug, Clone)]
pub struct FlowClock<'a> {
    orbit: Orbit<'a>,
    current: ReturnRecord,
    /// Time already spent inside `current`.
    phase: f64,
    returns_completed: u64,
}

impl<'a> FlowClock<'a> {
    pub fn new(sys: &'a HybridSystem, q0: SectionPoint) -> Result<Self> {
        sys.ensure_in_y(q0)?;
        let mut orbit = Orbit { sys, point: q0 };
        let current = orbit.next_record()?;
        Ok(Self { orbit, current, phase: 0.0, returns_completed: 0 })
    }

    /// Starts at the beginning of the next return of an existing orbit.
    pub fn from_orbit(mut orbit: Orbit<'a>) -> Result<Self> {
        let current = orbit.next_record()?;
        Ok(Self { orbit, current, phase: 0.0, returns_completed: 0 })
    }

    pub fn returns_completed(&self) -> u64 {
        self.returns_completed
    }

    /// Potential integrated over the next `dt` units of flow time.
    pub fn advance(&mut self, dt: f64) -> Result<f64> {
        self.advance_observable(dt, &|r: &ReturnRecord| r.psi_bar)
    }

    /// Integral over the next `dt` of the flow observable whose induced
    /// version is `induced(record)`.
    pub fn advance_observable<F: Fn(&ReturnRecord) -> f64 + ?Sized>(&mut self, dt: f64, induced: &F) -> Result<f64> {
        if !(dt >= 0.0) {
            return Err(Error::InvalidParameter { name: "t_flow", reason: "must be nonnegative".into() });
        }
        let mut remaining = dt;
        let mut acc = 0.0;
        loop {
            let left = self.current.tau - self.phase;
            if remaining < left {
                acc += induced(&self.current) * (remaining / self.current.tau);
                self.phase += remaining;
                return Ok(acc);
            }
            acc += induced(&self.current) * (left / self.current.tau);
            remaining -= left;
            self.current = self.orbit.next_record()?;
            self.phase = 0.0;
            self.returns_completed += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Preset;

    fn sys() -> HybridSystem {
        HybridSystem::new(&Preset::Stable.params(), HybridOptions::default()).unwrap()
    }

    #[test]
    fn wrap_into_fundamental_domain() {
        assert_eq!(wrap(0.5), -0.5);
        assert_eq!(wrap(-0.5), -0.5);
        assert_eq!(wrap(1.25), 0.25);
        assert_eq!(wrap(-0.75), 0.25);
    }

    #[test]
    fn chart_round_trip() {
        let s = sys();
        let p = s.to_section(0.3, -0.7);
        let (x, y) = s.to_local(p);
        assert!((x - 0.3).abs() < 1e-14 && (y + 0.7).abs() < 1e-14);
    }

    #[test]
    fn cat_map_scales_eigen_coordinates() {
        let s = sys();
        let p = s.to_section(0.1, 0.2);
        let (x, y) = s.to_local(s.cat(p));
        assert!((x - 0.1 * LAMBDA_U).abs() < 1e-13);
        assert!((y - 0.2 / LAMBDA_U).abs() < 1e-13);
    }

    #[test]
    fn origin_is_fixed() {
        let s = sys();
        let st = s.poincare_step(SectionPoint::default()).unwrap();
        assert_eq!(st.next, SectionPoint::default());
        assert!((st.h - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_oversized_chart() {
        let opts = HybridOptions { chart_half_width: 0.4, ..HybridOptions::default() };
        assert!(HybridSystem::new(&Preset::Stable.params(), opts).is_err());
    }

    #[test]
    fn induced_return_requires_y() {
        let s = sys();
        assert!(s.induced_return(s.to_section(0.1, 0.1)).is_err());
    }

    #[test]
    fn clock_counts_returns() {
        let s = sys();
        let q = s.to_section(3.0, 0.1);
        let mut c = FlowClock::new(&s, q).unwrap();
        c.advance(100.0).unwrap();
        assert!(c.returns_completed() > 0);
    }
}
