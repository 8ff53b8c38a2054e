//! Vector-field parameters, closed-form derived constants, the first
//! integral of the horizontal flow and homogeneous weight functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// A function homogeneous of degree `rho` on the plane:
///
/// `theta(x, y) = radial * (x^2 + y^2)^(rho/2) + axis_x * |x|^rho + axis_y * |y|^rho`.
///
/// `theta(1, 0) = radial + axis_x` and `theta(0, 1) = radial + axis_y`; both
/// must be nonzero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Deserialize<'de> + Default"))]
pub struct HomogeneousSpec<T> {
    pub rho: T,
    pub radial: T,
    #[serde(default)]
    pub axis_x: T,
    #[serde(default)]
    pub axis_y: T,
}

impl<T: Real> HomogeneousSpec<T> {
    pub fn radial(rho: T, coefficient: T) -> Self {
        Self { rho, radial: coefficient, axis_x: T::zero(), axis_y: T::zero() }
    }

    /// `theta(1, 0)`.
    pub fn theta_zero(&self) -> T {
        self.radial + self.axis_x
    }

    /// `theta(0, 1)`, equivalently `lim_{M -> inf} M^-rho theta(1, M)`.
    pub fn theta_inf(&self) -> T {
        self.radial + self.axis_y
    }

    /// `theta(1, m)` for `m >= 0`.
    #[inline]
    pub fn on_ray(&self, m: T) -> T {
        let half = self.rho * lit(0.5);
        let mut v = self.radial * (T::one() + m * m).powf(half) + self.axis_x;
        if self.axis_y != T::zero() {
            v = v + self.axis_y * m.powf(self.rho);
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rho.is_finite() || !self.radial.is_finite() || !self.axis_x.is_finite() || !self.axis_y.is_finite() {
            return Err(Error::InvalidParameter { name: "homogeneous", reason: "non-finite coefficient".into() });
        }
        if self.theta_zero() == T::zero() || self.theta_inf() == T::zero() {
            return Err(Error::InvalidParameter {
                name: "homogeneous",
                reason: "theta(1,0) and theta(0,1) must both be nonzero".into(),
            });
        }
        Ok(())
    }
}

/// Observable `psi` of the flow: `-scale * W(x, y)` inside the chart, zero
/// outside, with a flat contribution `offset` credited once per induced return.
/// The induced potential is `psi_bar = offset - psi_0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Deserialize<'de> + Default"))]
pub struct PotentialSpec<T> {
    /// C' in `psi_bar = C' - psi_0`.
    pub offset: T,
    /// C, the scale of the chart part.
    pub scale: T,
    /// Homogeneous shape `W_rho`.
    pub shape: HomogeneousSpec<T>,
}

impl<T: Real> PotentialSpec<T> {
    /// `kappa = 1 - rho/2`, the growth exponent of `psi_0` against the roof.
    pub fn kappa(&self) -> T {
        T::one() - self.shape.rho * lit(0.5)
    }
}

/// Coefficients of the local vector field
/// `x' = x(a0 x^2 + a2 y^2)`, `y' = -y(b0 x^2 + b2 y^2)`, `z' = 1 + w(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Deserialize<'de> + Default"))]
pub struct FlowParams<T> {
    pub a0: T,
    pub a2: T,
    pub b0: T,
    pub b2: T,
    /// Radius of the local chart; also the exit abscissa of a passage.
    pub eps: T,
    pub w_spec: HomogeneousSpec<T>,
    pub psi_spec: PotentialSpec<T>,
}

impl<T: Real> FlowParams<T> {
    /// `a2 b0 - a0 b2`.
    pub fn delta(&self) -> T {
        self.a2 * self.b0 - self.a0 * self.b2
    }

    /// Supremum of `|w|` over the chart `[-eps, eps]^2`.
    pub fn sup_w(&self) -> T {
        // Each term is monotone in the radius for rho >= 0; the corner
        // dominates the radial part and the axes dominate the axis parts.
        let e = self.eps;
        let s = &self.w_spec;
        let corner = (lit::<T>(2.0) * e * e).powf(s.rho * lit(0.5));
        s.radial.abs() * corner + (s.axis_x.abs() + s.axis_y.abs()) * e.powf(s.rho)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("a0", self.a0), ("a2", self.a2), ("b0", self.b0), ("b2", self.b2)] {
            if !v.is_finite() || v < T::zero() {
                return Err(Error::InvalidParameter { name, reason: format!("must be finite and >= 0, got {v}") });
            }
        }
        if self.a0 == T::zero() || self.b2 == T::zero() {
            return Err(Error::InvalidParameter {
                name: "a0/b2",
                reason: "a0 and b2 must be positive for the exponents beta0 and beta to exist".into(),
            });
        }
        if !(self.eps > T::zero()) || !self.eps.is_finite() {
            return Err(Error::InvalidParameter { name: "eps", reason: format!("must be > 0, got {}", self.eps) });
        }
        if self.delta() == T::zero() {
            return Err(Error::DegenerateDelta);
        }
        self.w_spec.validate()?;
        if self.w_spec.rho < T::zero() {
            return Err(Error::InvalidParameter { name: "w_spec.rho", reason: "vertical perturbation needs rho >= 0".into() });
        }
        if !(self.sup_w() < T::one()) {
            return Err(Error::InvalidParameter {
                name: "w_spec",
                reason: format!("sup |w| on the chart is {} (must be < 1)", self.sup_w()),
            });
        }
        self.psi_spec.shape.validate()?;
        let (c1, c) = (self.psi_spec.offset, self.psi_spec.scale);
        if !c1.is_finite() || !c.is_finite() || c < T::zero() {
            return Err(Error::InvalidParameter { name: "psi_spec", reason: "offset C' must be finite and scale C finite and >= 0".into() });
        }
        Ok(())
    }
}

/// Closed-form quantities derived from [`FlowParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedConstants<T> {
    pub delta: T,
    pub u: T,
    pub v: T,
    pub beta0: T,
    pub beta: T,
    pub c0: T,
    pub c2: T,
    /// Growth exponent of the induced potential, `1 - rho_psi / 2`.
    pub kappa: T,
}

impl<T: Real> DerivedConstants<T> {
    /// `1/(2 beta0) + 1/(2 beta)`, the exponent of `(c0 + c2 M^2)` in the
    /// slope integrand.
    #[inline]
    pub fn q(&self) -> T {
        lit::<T>(0.5) / self.beta0 + lit::<T>(0.5) / self.beta
    }

    /// Exponent of `c0` (and `c2`) in the endpoint asymptotics of the
    /// `Theta` integrand for a weight of degree `rho`.
    pub fn rho0(&self, rho: T) -> T {
        let q = self.q();
        (q - T::one()) * rho * lit(0.5) - q
    }
}

fn close<T: Real>(a: T, b: T) -> bool {
    let tol = lit::<T>(1e-12).max(T::epsilon() * lit(64.0));
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(T::one())
}

/// Solves for `u, v` and the tail exponents; rejects the degenerate and
/// infinite-measure cases.
pub fn derive_constants<T: Real>(p: &FlowParams<T>) -> Result<DerivedConstants<T>> {
    p.validate()?;
    if !(p.a2 > p.b2) {
        return Err(Error::InfiniteMeasure { a2: to_f64(p.a2), b2: to_f64(p.b2) });
    }
    let two = lit::<T>(2.0);
    let delta = p.delta();
    let u = two * p.b2 * (p.a0 + p.b0) / delta;
    let v = two * p.a0 * (p.a2 + p.b2) / delta;
    let beta0 = (p.a0 + p.b0) / (two * p.a0);
    let beta = (p.a2 + p.b2) / (two * p.b2);
    let dc = DerivedConstants {
        delta,
        u,
        v,
        beta0,
        beta,
        c0: p.a0 + p.b0,
        c2: p.a2 + p.b2,
        kappa: p.psi_spec.kappa(),
    };
    let checks = [
        ((u + two) * p.a0, v * p.b0),
        ((v + two) * p.b2, u * p.a2),
        (beta0, (u + v + two) / (two * v)),
        (beta, (u + v + two) / (two * u)),
        (p.a0 * u / (p.b2 * v), dc.c0 / dc.c2),
    ];
    for (i, (lhs, rhs)) in checks.into_iter().enumerate() {
        if !close(lhs, rhs) {
            return Err(Error::Domain(format!("derived-constant identity {i} violated: {lhs} vs {rhs}")));
        }
    }
    Ok(dc)
}

/// The local vector field.
#[inline]
pub fn vector_field<T: Real>(p: &FlowParams<T>, x: T, y: T, _z: T) -> (T, T, T) {
    let x2 = x * x;
    let y2 = y * y;
    let dx = x * (p.a0 * x2 + p.a2 * y2);
    let dy = -y * (p.b0 * x2 + p.b2 * y2);
    let dz = T::one() + homogeneous_value(&p.w_spec, x, y);
    (dx, dy, dz)
}

fn is_integer<T: Real>(v: T) -> bool {
    v == v.round()
}

fn signed_pow<T: Real>(base: T, e: T) -> Result<T> {
    if base > T::zero() {
        Ok((e * base.ln()).exp())
    } else if is_integer(e) {
        Ok(base.powi(e.to_i32().ok_or_else(|| Error::Domain("exponent out of range".into()))?))
    } else {
        Err(Error::Domain(format!("non-integer power {e} of nonpositive base {base}")))
    }
}

/// First integral of the horizontal flow.
pub fn first_integral<T: Real>(p: &FlowParams<T>, dc: &DerivedConstants<T>, x: T, y: T) -> Result<T> {
    let xu = signed_pow(x, dc.u)?;
    let yv = signed_pow(y, dc.v)?;
    let quad = p.a0 / dc.v * x * x + p.b2 / dc.u * y * y;
    let l = xu * yv * quad;
    if dc.delta > T::zero() {
        Ok(l)
    } else {
        if l == T::zero() {
            return Err(Error::Domain("reciprocal first integral undefined on the axes".into()));
        }
        Ok(T::one() / l)
    }
}

#[inline]
fn homogeneous_value<T: Real>(spec: &HomogeneousSpec<T>, x: T, y: T) -> T {
    let r2 = x * x + y * y;
    let mut v = T::zero();
    if spec.radial != T::zero() {
        v = v + spec.radial * r2.powf(spec.rho * lit(0.5));
    }
    if spec.axis_x != T::zero() {
        v = v + spec.axis_x * x.abs().powf(spec.rho);
    }
    if spec.axis_y != T::zero() {
        v = v + spec.axis_y * y.abs().powf(spec.rho);
    }
    v
}

/// Evaluates a homogeneous function. Negative degrees are singular at the
/// origin (and on an axis when the matching axis coefficient is nonzero).
pub fn homogeneous_eval<T: Real>(spec: &HomogeneousSpec<T>, x: T, y: T) -> Result<T> {
    if spec.rho < T::zero() {
        let on_origin = x == T::zero() && y == T::zero();
        let on_axis = (x == T::zero() && spec.axis_x != T::zero()) || (y == T::zero() && spec.axis_y != T::zero());
        if on_origin || on_axis {
            return Err(Error::Singularity { rho: to_f64(spec.rho) });
        }
    }
    Ok(homogeneous_value(spec, x, y))
}

/// Named parameter sets shipped with the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// beta = 1.5: stable laws.
    Stable,
    /// beta = 2: non-standard CLT.
    Boundary,
    /// beta = 3: standard CLT.
    Clt,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Stable, Preset::Boundary, Preset::Clt];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Stable => "p_stable",
            Preset::Boundary => "p_boundary",
            Preset::Clt => "p_clt",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().replace('-', "_").as_str() {
            "p_stable" | "stable" => Some(Preset::Stable),
            "p_boundary" | "boundary" => Some(Preset::Boundary),
            "p_clt" | "clt" => Some(Preset::Clt),
            _ => None,
        }
    }

    pub fn params<T: Real>(self) -> FlowParams<T> {
        let a2 = match self {
            Preset::Stable => 2.0,
            Preset::Boundary => 3.0,
            Preset::Clt => 5.0,
        };
        FlowParams {
            a0: T::one(),
            a2: lit(a2),
            b0: T::one(),
            b2: T::one(),
            eps: T::one(),
            w_spec: HomogeneousSpec::radial(lit(2.0), lit(0.1)),
            psi_spec: PotentialSpec {
                offset: lit(PSI_OFFSET),
                scale: T::one(),
                shape: HomogeneousSpec::radial(T::zero(), T::one()),
            },
        }
    }
}

/// Default C' of the presets.
pub const PSI_OFFSET: f64 = 1.0;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(a0: f64, b0: f64, a2: f64, b2: f64) -> FlowParams<f64> {
        FlowParams { a0, b0, a2, b2, ..Preset::Stable.params() }
    }

    #[test]
    fn preset_constants() {
        let cases = [
            ((1.0, 1.0, 2.0, 1.0), (1.0, 4.0, 6.0, 1.0, 1.5)),
            ((1.0, 1.0, 3.0, 1.0), (2.0, 2.0, 4.0, 1.0, 2.0)),
            ((1.0, 1.0, 5.0, 1.0), (4.0, 1.0, 3.0, 1.0, 3.0)),
        ];
        for ((a0, b0, a2, b2), (delta, u, v, beta0, beta)) in cases {
            let dc = derive_constants(&params(a0, b0, a2, b2)).unwrap();
            assert_eq!(dc.delta, delta);
            assert!((dc.u - u).abs() < 1e-14 && (dc.v - v).abs() < 1e-14);
            assert!((dc.beta0 - beta0).abs() < 1e-14 && (dc.beta - beta).abs() < 1e-14);
            assert_eq!(dc.kappa, 1.0);
        }
    }

    #[test]
    fn rejects_degenerate_and_infinite_measure() {
        assert_eq!(derive_constants(&params(1.0, 1.0, 1.0, 1.0)).unwrap_err(), Error::DegenerateDelta);
        let err = derive_constants(&params(1.0, 3.0, 1.0, 2.0)).unwrap_err();
        assert!(matches!(err, Error::InfiniteMeasure { .. }), "{err:?}");
    }

    #[test]
    fn negative_delta_branch_constants() {
        let p = params(3.0, 1.0, 2.0, 1.0);
        let dc = derive_constants(&p).unwrap();
        assert!(dc.delta < 0.0 && dc.u < 0.0 && dc.v < 0.0);
        let l = first_integral(&p, &dc, 0.3, 0.4).unwrap();
        let direct = 0.3f64.powf(-dc.u) * 0.4f64.powf(-dc.v) / (p.a0 / dc.v * 0.09 + p.b2 / dc.u * 0.16);
        assert!((l - direct).abs() < 1e-12 * direct.abs());
    }

    #[test]
    fn field_symmetries() {
        let p = Preset::Stable.params::<f64>();
        assert_eq!(vector_field(&p, 0.0, 0.0, 3.0), (0.0, 0.0, 1.0));
        let (_, dy, _) = vector_field(&p, 0.4, 0.0, 0.0);
        assert_eq!(dy, 0.0);
        let (dx1, dy1, _) = vector_field(&p, 0.3, 0.7, 0.0);
        let (dx2, dy2, _) = vector_field(&p, -0.3, 0.7, 0.0);
        assert_eq!(dx1, -dx2);
        assert_eq!(dy1, dy2);
    }

    #[test]
    fn first_integral_values() {
        let p = Preset::Stable.params::<f64>();
        let dc = derive_constants(&p).unwrap();
        let l = first_integral(&p, &dc, 1.0, 1.0).unwrap();
        assert!((l - 5.0 / 12.0).abs() < 1e-15);
        let (x0, y0) = (0.3, 0.55);
        let scaled = first_integral(&p, &dc, 2.0 * x0, y0).unwrap();
        let base = first_integral(&p, &dc, x0, y0).unwrap();
        let ratio = 2f64.powf(dc.u) * (p.a0 * 4.0 * x0 * x0 / dc.v + p.b2 * y0 * y0 / dc.u)
            / (p.a0 * x0 * x0 / dc.v + p.b2 * y0 * y0 / dc.u);
        assert!((scaled / base - ratio).abs() < 1e-12 * ratio);
    }

    #[test]
    fn first_integral_domain() {
        let mut p = Preset::Stable.params::<f64>();
        p.a2 = 2.5;
        let dc = derive_constants(&p).unwrap();
        assert!(dc.u.fract() != 0.0);
        assert!(matches!(first_integral(&p, &dc, -0.1, 0.2), Err(Error::Domain(_))));
        // integer exponents accept negative arguments
        let p = Preset::Stable.params::<f64>();
        let dc = derive_constants(&p).unwrap();
        assert!(first_integral(&p, &dc, -0.1, 0.2).is_ok());
    }

    #[test]
    fn homogeneous_examples() {
        let spec = HomogeneousSpec::radial(2.0, 1.0);
        assert_eq!(homogeneous_eval(&spec, 3.0, 4.0).unwrap(), 25.0);
        let w = Preset::Stable.params::<f64>().w_spec;
        assert!(w.theta_zero() != 0.0 && w.theta_inf() != 0.0);
        let neg = HomogeneousSpec::radial(-1.0, 1.0);
        assert!(matches!(homogeneous_eval(&neg, 0.0, 0.0), Err(Error::Singularity { .. })));
        assert!(homogeneous_eval(&neg, 0.0, 2.0).is_ok());
    }

    #[test]
    fn works_in_single_precision() {
        let p = Preset::Clt.params::<f32>();
        let dc = derive_constants(&p).unwrap();
        assert_eq!(dc.beta, 3.0f32);
        assert_eq!(dc.u, 1.0f32);
    }

    proptest! {
        #[test]
        fn homogeneity(x in 0.01f64..2.0, y in 0.01f64..2.0, rho in -1.5f64..3.5, bx in 0.0f64..2.0, by in 0.0f64..2.0) {
            let spec = HomogeneousSpec { rho, radial: 0.7, axis_x: bx, axis_y: by };
            let a = homogeneous_eval(&spec, 2.0 * x, 2.0 * y).unwrap();
            let b = homogeneous_eval(&spec, x, y).unwrap();
            prop_assert!((a / b - 2f64.powf(rho)).abs() < 1e-12 * 2f64.powf(rho));
            let ray = spec.on_ray(y / x) * x.powf(rho);
            prop_assert!((ray - b).abs() < 1e-12 * b.abs());
        }

        #[test]
        fn horizontal_components_vanish_only_on_axes(x in 1e-6f64..1.0, y in 1e-6f64..1.0) {
            let p = Preset::Boundary.params::<f64>();
            let (dx, dy, _) = vector_field(&p, x, y, 0.0);
            prop_assert!(dx != 0.0 && dy != 0.0);
            prop_assert_eq!(vector_field(&p, 0.0, y, 0.0).0, 0.0);
            prop_assert_eq!(vector_field(&p, x, 0.0, 0.0).1, 0.0);
        }
    }
}
