//! Donor-cell upwind convection, centred diffusion, explicit Euler.
//!
//! For a component `q` advected by `(a, b)`:
//!
//! ```text
//! q' = q − Δt (a ∂x q + b ∂y q) + Δt/R (∂xx q + ∂yy q)
//! ```
//!
//! where each first derivative is the one-sided difference on the upwind
//! side of the advecting velocity.

use std::ops::{Add, Mul, Sub};

use partape::{Active64, ActiveScalar};

/// Scalar the solver runs on: plain `f64` or a recorded active value.
pub trait StencilScalar:
    Copy
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Mul<f64, Output = Self>
{
    /// Whether operations on this type are recorded.
    const ACTIVE: bool;

    fn constant(value: f64) -> Self;

    fn value(&self) -> f64;

    /// Result of an elementary function with the given partials.
    fn statement(value: f64, args: &[Self], partials: &[f64]) -> Self;
}

impl StencilScalar for f64 {
    const ACTIVE: bool = false;

    fn constant(value: f64) -> Self {
        value
    }

    fn value(&self) -> f64 {
        *self
    }

    fn statement(value: f64, _: &[Self], _: &[f64]) -> Self {
        value
    }
}

impl StencilScalar for Active64 {
    const ACTIVE: bool = true;

    fn constant(value: f64) -> Self {
        ActiveScalar::passive(value)
    }

    fn value(&self) -> f64 {
        ActiveScalar::value(self)
    }

    fn statement(value: f64, args: &[Self], partials: &[f64]) -> Self {
        ActiveScalar::from_statement(value, args, partials)
    }
}

/// Step coefficients `Δt/Δx`, `Δt/Δy`, `Δt/(RΔx²)`, `Δt/(RΔy²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coeffs {
    pub cx: f64,
    pub cy: f64,
    pub kx: f64,
    pub ky: f64,
}

impl Coeffs {
    pub fn new(dt: f64, dx: f64, dy: f64, reynolds: f64) -> Self {
        Coeffs {
            cx: dt / dx,
            cy: dt / dy,
            kx: dt / (reynolds * dx * dx),
            ky: dt / (reynolds * dy * dy),
        }
    }
}

/// Five-point neighbourhood: centre, west, east, south, north.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Star<S> {
    pub c: S,
    pub w: S,
    pub e: S,
    pub s: S,
    pub n: S,
}

impl<S: StencilScalar> Star<S> {
    fn values(&self) -> Star<f64> {
        Star {
            c: self.c.value(),
            w: self.w.value(),
            e: self.e.value(),
            s: self.s.value(),
            n: self.n.value(),
        }
    }
}

/// Which star entry is also an advecting velocity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    /// `q = u`, so `a = q.c`.
    U,
    /// `q = v`, so `b = q.c`.
    V,
}

/// Updated value and partials with respect to `[c, w, e, s, n, a, b]`.
pub fn update_partials(q: Star<f64>, a: f64, b: f64, k: &Coeffs) -> (f64, [f64; 7]) {
    let (dqx, dqy) = (
        if a > 0.0 { q.c - q.w } else { q.e - q.c },
        if b > 0.0 { q.c - q.s } else { q.n - q.c },
    );
    let value = q.c - k.cx * a * dqx - k.cy * b * dqy
        + k.kx * (q.e - 2.0 * q.c + q.w)
        + k.ky * (q.n - 2.0 * q.c + q.s);

    let mut p = [0.0; 7];
    p[0] = 1.0 - 2.0 * k.kx - 2.0 * k.ky;
    p[1] = k.kx;
    p[2] = k.kx;
    p[3] = k.ky;
    p[4] = k.ky;
    if a > 0.0 {
        p[0] -= k.cx * a;
        p[1] += k.cx * a;
    } else {
        p[2] -= k.cx * a;
        p[0] += k.cx * a;
    }
    p[5] = -k.cx * dqx;
    if b > 0.0 {
        p[0] -= k.cy * b;
        p[3] += k.cy * b;
    } else {
        p[4] -= k.cy * b;
        p[0] += k.cy * b;
    }
    p[6] = -k.cy * dqy;
    (value, p)
}

/// Cell update recorded as one statement.
pub fn update<S: StencilScalar>(q: Star<S>, other: S, component: Component, k: &Coeffs) -> S {
    let qv = q.values();
    let (a, b) = match component {
        Component::U => (qv.c, other.value()),
        Component::V => (other.value(), qv.c),
    };
    let (value, p) = update_partials(qv, a, b, k);
    if !S::ACTIVE {
        return S::constant(value);
    }
    // fold the velocity that coincides with the centre into it
    let (pc, po) = match component {
        Component::U => (p[0] + p[5], p[6]),
        Component::V => (p[0] + p[6], p[5]),
    };
    S::statement(
        value,
        &[q.c, q.w, q.e, q.s, q.n, other],
        &[pc, p[1], p[2], p[3], p[4], po],
    )
}

/// Cell update recorded operation by operation.
pub fn update_operators<S: StencilScalar>(
    q: Star<S>,
    other: S,
    component: Component,
    k: &Coeffs,
) -> S {
    let (a, b) = match component {
        Component::U => (q.c, other),
        Component::V => (other, q.c),
    };
    let dqx = if a.value() > 0.0 {
        q.c - q.w
    } else {
        q.e - q.c
    };
    let dqy = if b.value() > 0.0 {
        q.c - q.s
    } else {
        q.n - q.c
    };
    q.c - a * dqx * k.cx - b * dqy * k.cy
        + (q.e - q.c * 2.0 + q.w) * k.kx
        + (q.n - q.c * 2.0 + q.s) * k.ky
}
