//! Poincaré-ball primitives with curvature `c`.
//!
//! The ball of curvature `c` is the open set `‖x‖ < 1/√c`. Everything here is
//! plain `f64` slice arithmetic; the scoring and training modules call the
//! unchecked `*_into` variants on their hot paths after the rows have been
//! kept inside the ball by [`PoincareBall::project`].

use crate::error::{Error, Result};

/// Default projection margin: rows are kept at norm `≤ (1 − margin)/√c`.
pub const DEFAULT_MARGIN: f64 = 1e-5;

/// Lower clamp on `u = arccosh_arg − 1` used when differentiating the distance.
const DIST_GRAD_FLOOR: f64 = 1e-15;

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// A point strictly inside the ball of a given curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint {
    coords: Vec<f64>,
    curvature: f64,
}

impl BallPoint {
    pub fn new(coords: Vec<f64>, curvature: f64) -> Result<Self> {
        PoincareBall::new(curvature)?.check(&coords)?;
        Ok(Self { coords, curvature })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoincareBall {
    c: f64,
}

impl PoincareBall {
    pub fn new(curvature: f64) -> Result<Self> {
        if !(curvature.is_finite() && curvature > 0.0) {
            return Err(Error::Config(format!(
                "curvature must be positive and finite, got {curvature}"
            )));
        }
        Ok(Self { c: curvature })
    }

    pub fn curvature(&self) -> f64 {
        self.c
    }

    /// Radius `1/√c` of the ball.
    pub fn radius(&self) -> f64 {
        1.0 / self.c.sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.c * norm_sq(x) < 1.0
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        let n = norm_sq(x);
        if self.c * n < 1.0 {
            Ok(())
        } else {
            Err(Error::Domain {
                norm_sq: n,
                limit: 1.0 / self.c,
            })
        }
    }

    /// Möbius addition `x ⊕_c y`.
    pub fn mobius_add(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(x.len(), y.len(), "dimension mismatch");
        self.check(x)?;
        self.check(y)?;
        let mut out = vec![0.0; x.len()];
        mobius_add_into(x, y, self.c, &mut out);
        Ok(out)
    }

    /// Geodesic distance between two points of the ball.
    pub fn distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        assert_eq!(x.len(), y.len(), "dimension mismatch");
        self.check(x)?;
        self.check(y)?;
        Ok(distance_unchecked(x, y, self.c))
    }

    /// Rescales `x` onto the sphere of radius `(1 − margin)/√c` when it lies on
    /// or outside it; otherwise `x` is left untouched.
    pub fn project(&self, x: &mut [f64], margin: f64) {
        project_in_place(x, self.c, margin);
    }
}

/// `out = x ⊕_c y`, no domain checks.
pub fn mobius_add_into(x: &[f64], y: &[f64], c: f64, out: &mut [f64]) {
    let xy = dot(x, y);
    let xx = norm_sq(x);
    let yy = norm_sq(y);
    let p = 1.0 + 2.0 * c * xy + c * yy;
    let q = 1.0 - c * xx;
    let den = 1.0 + 2.0 * c * xy + c * c * xx * yy;
    for ((o, &a), &b) in out.iter_mut().zip(x).zip(y) {
        *o = (p * a + q * b) / den;
    }
}

/// `arccosh(1 + u)` written to stay accurate when `u` is tiny.
#[inline]
fn arccosh_one_plus(u: f64) -> f64 {
    (u + (u * (u + 2.0)).sqrt()).ln_1p()
}

/// `u = 2c‖x − y‖² / ((1 − c‖x‖²)(1 − c‖y‖²))`, so that `d = arccosh(1 + u)/√c`;
/// clamped at zero.
#[inline]
fn distance_excess(diff_sq: f64, xx: f64, yy: f64, c: f64) -> f64 {
    let u = 2.0 * c * diff_sq / ((1.0 - c * xx) * (1.0 - c * yy));
    u.max(0.0)
}

pub fn distance_unchecked(x: &[f64], y: &[f64], c: f64) -> f64 {
    let diff_sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    distance_from_parts(diff_sq, norm_sq(x), norm_sq(y), c)
}

/// Distance from `‖x − y‖²`, `‖x‖²` and `‖y‖²`.
#[inline]
pub(crate) fn distance_from_parts(diff_sq: f64, xx: f64, yy: f64, c: f64) -> f64 {
    arccosh_one_plus(distance_excess(diff_sq, xx, yy, c)) / c.sqrt()
}

pub fn project_in_place(x: &mut [f64], c: f64, margin: f64) {
    let bound = (1.0 - margin) / c.sqrt();
    let bound_sq = bound * bound;
    let n = norm_sq(x);
    if n < bound_sq {
        return;
    }
    let scale = bound / n.sqrt();
    x.iter_mut().for_each(|v| *v *= scale);
    // roundoff can leave the rescaled norm an ulp above the bound
    while norm_sq(x) >= bound_sq {
        x.iter_mut().for_each(|v| *v *= 1.0 - f64::EPSILON);
    }
}

/// Vector-Jacobian product of Möbius addition: given `g = ∂L/∂(x ⊕_c y)`,
/// accumulates `∂L/∂x` into `gx` and `∂L/∂y` into `gy`.
pub fn mobius_add_vjp(x: &[f64], y: &[f64], c: f64, g: &[f64], gx: &mut [f64], gy: &mut [f64]) {
    let xy = dot(x, y);
    let xx = norm_sq(x);
    let yy = norm_sq(y);
    let p = 1.0 + 2.0 * c * xy + c * yy;
    let q = 1.0 - c * xx;
    let den = 1.0 + 2.0 * c * xy + c * c * xx * yy;

    let gdx = dot(g, x);
    let gdy = dot(g, y);
    // g · (x ⊕ y)
    let gdm = (p * gdx + q * gdy) / den;

    for i in 0..x.len() {
        let dx = (p * g[i] + 2.0 * c * gdx * y[i] - 2.0 * c * gdy * x[i]) / den
            - gdm / den * (2.0 * c * y[i] + 2.0 * c * c * yy * x[i]);
        let dy = (q * g[i] + gdx * (2.0 * c * x[i] + 2.0 * c * y[i])) / den
            - gdm / den * (2.0 * c * x[i] + 2.0 * c * c * xx * y[i]);
        gx[i] += dx;
        gy[i] += dy;
    }
}

/// Gradient of `scale · d_c(x, y)`, accumulated into `gx` and `gy`.
pub fn distance_grad(x: &[f64], y: &[f64], c: f64, scale: f64, gx: &mut [f64], gy: &mut [f64]) {
    let diff_sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let xx = norm_sq(x);
    let yy = norm_sq(y);
    let a = 1.0 - c * xx;
    let b = 1.0 - c * yy;
    let u = distance_excess(diff_sq, xx, yy, c).max(DIST_GRAD_FLOOR);
    // d = arccosh(1 + u)/√c  ⇒  ∂d/∂u = 1 / (√c · √(u(u+2)))
    let dd_du = scale / (c.sqrt() * (u * (u + 2.0)).sqrt());
    let ab = a * b;
    for i in 0..x.len() {
        let diff = x[i] - y[i];
        let du_dx = 4.0 * c * (diff / ab + c * diff_sq * x[i] / (a * ab));
        let du_dy = 4.0 * c * (-diff / ab + c * diff_sq * y[i] / (b * ab));
        gx[i] += dd_du * du_dx;
        gy[i] += dd_du * du_dy;
    }
}
