//! Dormand-Prince 5(4) integrator with PI step control, cubic Hermite dense
//! output and terminal event location.

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions<T> {
    /// Relative local error per unit time.
    pub tol: T,
    /// Absolute floor of the error scale, per unit time.
    pub atol: T,
    pub h0: T,
    pub h_min: T,
    pub h_max: T,
    pub max_steps: usize,
}

impl<T: Real> Default for OdeOptions<T> {
    fn default() -> Self {
        Self { tol: lit(1e-10), atol: lit(1e-10), h0: lit(1e-3), h_min: lit(1e-14), h_max: lit(1e3), max_steps: 5_000_000 }
    }
}

/// An accepted step with enough data for Hermite interpolation.
#[derive(Debug, Clone, Copy)]
pub struct Step<T, const N: usize> {
    pub t0: T,
    pub y0: [T; N],
    pub f0: [T; N],
    pub t1: T,
    pub y1: [T; N],
    pub f1: [T; N],
}

impl<T: Real, const N: usize> Step<T, N> {
    /// Cubic Hermite interpolant at `t` in `[t0, t1]`.
    pub fn interpolate(&self, t: T) -> [T; N] {
        let h = self.t1 - self.t0;
        let s = (t - self.t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let two = lit::<T>(2.0);
        let three = lit::<T>(3.0);
        let h00 = two * s3 - three * s2 + T::one();
        let h10 = s3 - two * s2 + s;
        let h01 = three * s2 - two * s3;
        let h11 = s3 - s2;
        let mut out = [T::zero(); N];
        for i in 0..N {
            out[i] = h00 * self.y0[i] + h10 * h * self.f0[i] + h01 * self.y1[i] + h11 * h * self.f1[i];
        }
        out
    }
}

/// Where integration stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome<T, const N: usize> {
    pub t: T,
    pub y: [T; N],
    /// Index of the event that fired, if any.
    pub event: Option<usize>,
    pub steps: usize,
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy<T: Real, const N: usize>(y: &[T; N], h: T, terms: &[(f64, &[T; N])]) -> [T; N] {
    let mut out = *y;
    for i in 0..N {
        let mut acc = T::zero();
        for (c, k) in terms {
            acc = acc + lit::<T>(*c) * k[i];
        }
        out[i] = out[i] + h * acc;
    }
    out
}

/// Integrates `y' = f(t, y)` from `t0` to `t_end` (forward), stopping early
/// at the first sign change of any event function. `on_step` sees every
/// accepted step and may request a stop by returning `false`.
pub fn solve<T, const N: usize, F, S>(
    mut f: F,
    t0: T,
    y0: [T; N],
    t_end: T,
    opts: &OdeOptions<T>,
    events: &[&dyn Fn(T, &[T; N]) -> T],
    mut on_step: S,
) -> Result<Outcome<T, N>>
where
    T: Real,
    F: FnMut(T, &[T; N]) -> [T; N],
    S: FnMut(&Step<T, N>) -> bool,
{
    let mut t = t0;
    let mut y = y0;
    let mut fy = f(t, &y);
    let mut h = opts.h0.min(t_end - t0).max(opts.h_min);
    let mut err_prev = T::one();
    let mut g_prev: Vec<T> = events.iter().map(|g| g(t, &y)).collect();
    let mut steps = 0usize;
    let safety = lit::<T>(0.9);
    let alpha = lit::<T>(0.7 / 4.0);
    let beta = lit::<T>(0.4 / 4.0);
    while t < t_end {
        if steps >= opts.max_steps {
            return Err(Error::StepUnderflow { t: to_f64(t), state: y.iter().map(|v| to_f64(*v)).collect() });
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        let k1 = fy;
        let k2 = f(t + h * lit(0.2), &axpy(&y, h, &[(A21, &k1)]));
        let k3 = f(t + h * lit(0.3), &axpy(&y, h, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(t + h * lit(0.8), &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = f(t + h * lit(8.0 / 9.0), &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
        let k6 = f(t + h, &axpy(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
        let y1 = axpy(&y, h, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
        let t1 = if last { t_end } else { t + h };
        let k7 = f(t1, &y1);
        let mut errn = T::zero();
        for i in 0..N {
            let e = h
                * (lit::<T>(E1) * k1[i]
                    + lit::<T>(E3) * k3[i]
                    + lit::<T>(E4) * k4[i]
                    + lit::<T>(E5) * k5[i]
                    + lit::<T>(E6) * k6[i]
                    + lit::<T>(E7) * k7[i]);
            let scale = h * (opts.atol + opts.tol * y[i].abs().max(y1[i].abs()));
            errn = errn.max(e.abs() / scale);
        }
        if !errn.is_finite() {
            h = h * lit(0.25);
            if h < opts.h_min {
                return Err(Error::StepUnderflow { t: to_f64(t), state: y.iter().map(|v| to_f64(*v)).collect() });
            }
            continue;
        }
        if errn <= T::one() {
            steps += 1;
            let step = Step { t0: t, y0: y, f0: k1, t1, y1, f1: k7 };
            // Earliest event in this step, located on the interpolant.
            let mut fired: Option<(usize, T)> = None;
            for (idx, g) in events.iter().enumerate() {
                let gb = g(t1, &y1);
                let ga = g_prev[idx];
                if ga != T::zero() && (gb == T::zero() || (ga < T::zero()) != (gb < T::zero())) {
                    let tr = locate(g, &step, ga, gb);
                    if fired.map_or(true, |(_, tf)| tr < tf) {
                        fired = Some((idx, tr));
                    }
                }
                g_prev[idx] = gb;
            }
            if let Some((idx, tr)) = fired {
                let yr = if tr == t1 { y1 } else { step.interpolate(tr) };
                let clipped = Step { t1: tr, y1: yr, f1: f(tr, &yr), ..step };
                on_step(&clipped);
                return Ok(Outcome { t: tr, y: yr, event: Some(idx), steps });
            }
            if !on_step(&step) {
                return Ok(Outcome { t: t1, y: y1, event: None, steps });
            }
            t = t1;
            y = y1;
            fy = k7;
            let fac = safety * errn.max(lit(1e-10)).powf(-alpha) * err_prev.powf(beta);
            h = h * fac.max(lit(0.2)).min(lit(5.0));
            err_prev = errn.max(lit(1e-4));
        } else {
            let fac = safety * errn.powf(-lit::<T>(0.25));
            h = h * fac.max(lit(0.1));
        }
        h = h.min(opts.h_max);
        if h < opts.h_min {
            return Err(Error::StepUnderflow { t: to_f64(t), state: y.iter().map(|v| to_f64(*v)).collect() });
        }
    }
    Ok(Outcome { t, y, event: None, steps })
}

/// Root of `g` inside an accepted step by Illinois-modified regula falsi on
/// the dense interpolant.
fn locate<T: Real, const N: usize>(g: &dyn Fn(T, &[T; N]) -> T, step: &Step<T, N>, ga: T, gb: T) -> T {
    if gb == T::zero() {
        return step.t1;
    }
    let (mut a, mut b) = (step.t0, step.t1);
    let (mut fa, mut fb) = (ga, gb);
    let mut side = 0i8;
    for _ in 0..200 {
        let c = (a * fb - b * fa) / (fb - fa);
        let c = if c > a && c < b { c } else { (a + b) * lit(0.5) };
        let fc = g(c, &step.interpolate(c));
        if fc == T::zero() || (b - a) <= T::epsilon() * lit::<T>(4.0) * b.abs().max(T::one()) {
            return c;
        }
        if (fc < T::zero()) == (fa < T::zero()) {
            a = c;
            fa = fc;
            if side == -1 {
                fb = fb * lit(0.5);
            }
            side = -1;
        } else {
            b = c;
            fb = fc;
            if side == 1 {
                fa = fa * lit(0.5);
            }
            side = 1;
        }
    }
    (a + b) * lit(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let opts = OdeOptions::default();
        let out = solve(|_, y: &[f64; 1]| [-y[0]], 0.0, [1.0], 5.0, &opts, &[], |_| true).unwrap();
        assert!((out.y[0] - (-5f64).exp()).abs() < 1e-9);
        assert_eq!(out.t, 5.0);
    }

    #[test]
    fn harmonic_oscillator_long_run() {
        let opts = OdeOptions { tol: 1e-12, ..OdeOptions::default() };
        let out = solve(|_, y: &[f64; 2]| [y[1], -y[0]], 0.0, [1.0, 0.0], 100.0, &opts, &[], |_| true).unwrap();
        assert!((out.y[0] - 100f64.cos()).abs() < 1e-8, "{:?}", out.y);
    }

    #[test]
    fn event_stops_integration() {
        let opts = OdeOptions::default();
        let hit = |_: f64, y: &[f64; 2]| y[0] - 0.5;
        let out = solve(|_, y: &[f64; 2]| [y[1], -y[0]], 0.0, [1.0, 0.0], 10.0, &opts, &[&hit], |_| true).unwrap();
        assert_eq!(out.event, Some(0));
        assert!((out.t - std::f64::consts::FRAC_PI_3).abs() < 1e-9, "{}", out.t);
    }

    #[test]
    fn earliest_of_two_events() {
        let opts = OdeOptions { h0: 1.0, ..OdeOptions::default() };
        let late = |t: f64, _: &[f64; 1]| t - 0.7;
        let early = |t: f64, _: &[f64; 1]| t - 0.3;
        let out = solve(|_, _: &[f64; 1]| [1.0], 0.0, [0.0], 10.0, &opts, &[&late, &early], |_| true).unwrap();
        assert_eq!(out.event, Some(1));
        assert!((out.t - 0.3).abs() < 1e-12);
    }

    #[test]
    fn step_budget_is_enforced() {
        let opts = OdeOptions { max_steps: 3, h_max: 0.01, ..OdeOptions::default() };
        let r = solve(|_, y: &[f64; 1]| [y[0]], 0.0, [1.0], 1.0, &opts, &[], |_| true);
        assert!(matches!(r, Err(Error::StepUnderflow { .. })));
    }
}
