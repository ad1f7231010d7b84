use std::fmt;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use super::{with_current_tape, Identifier};
use crate::real::Real;

/// Scalar whose operations are recorded on the calling thread's tape.
///
/// A value with the passive identifier behaves like a plain number; results
/// are only recorded when at least one argument is active and the installed
/// tape is active.
#[derive(Clone, Copy, Default)]
pub struct ActiveScalar<T> {
    primal: T,
    id: Identifier,
}

impl<T: fmt::Debug> fmt::Debug for ActiveScalar<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}[{}]", self.primal, self.id)
    }
}

impl<T: fmt::Display> fmt::Display for ActiveScalar<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.primal.fmt(f)
    }
}

impl<T: Real> From<T> for ActiveScalar<T> {
    fn from(value: T) -> Self {
        ActiveScalar::passive(value)
    }
}

impl<T: Real> ActiveScalar<T> {
    pub fn passive(value: T) -> Self {
        ActiveScalar {
            primal: value,
            id: Identifier::PASSIVE,
        }
    }

    pub(crate) fn from_parts(primal: T, id: Identifier) -> Self {
        ActiveScalar { primal, id }
    }

    #[inline]
    pub fn value(&self) -> T {
        self.primal
    }

    #[inline]
    pub fn id(&self) -> Identifier {
        self.id
    }

    #[inline]
    pub fn is_active(&self) -> bool {
        !self.id.is_passive()
    }

    /// Records a single statement `primal = phi(args)` with precomputed
    /// partials, as produced by statement-level (Jacobian) taping.
    ///
    /// Passive arguments are dropped. If nothing is left, no tape is
    /// installed, the tape is inactive or a partial is non-finite, the
    /// result is passive; the latter is counted as a rejected statement.
    pub fn from_statement(primal: T, args: &[ActiveScalar<T>], partials: &[T]) -> Self {
        assert_eq!(args.len(), partials.len(), "one partial per argument");
        Self::record(primal, args.iter().zip(partials).map(|(a, &p)| (a.id, p)))
    }

    #[inline]
    fn record(primal: T, args: impl Iterator<Item = (Identifier, T)> + Clone) -> Self {
        let mut active = args.clone().filter(|(id, _)| !id.is_passive()).peekable();
        if active.peek().is_none() {
            return ActiveScalar::passive(primal);
        }
        with_current_tape(|tape| {
            let Some(tape) = tape.filter(|t| t.is_active()) else {
                return ActiveScalar::passive(primal);
            };
            if active.clone().any(|(_, p)| !p.is_finite()) {
                tape.engine().note_rejected();
                return ActiveScalar::passive(primal);
            }
            let id = tape.engine().new_identifier();
            tape.push_statement(id, active.clone().map(|(_, p)| p), active.map(|(id, _)| id));
            ActiveScalar { primal, id }
        })
    }

    #[inline]
    fn unary(self, primal: T, partial: T) -> Self {
        if self.id.is_passive() {
            return ActiveScalar::passive(primal);
        }
        Self::record(primal, std::iter::once((self.id, partial)))
    }

    #[inline]
    fn binary(self, other: Self, primal: T, d_self: T, d_other: T) -> Self {
        if self.id.is_passive() && other.id.is_passive() {
            return ActiveScalar::passive(primal);
        }
        Self::record(primal, [(self.id, d_self), (other.id, d_other)].into_iter())
    }

    pub fn sin(self) -> Self {
        self.unary(self.primal.sin(), self.primal.cos())
    }

    pub fn cos(self) -> Self {
        self.unary(self.primal.cos(), -self.primal.sin())
    }

    pub fn exp(self) -> Self {
        let e = self.primal.exp();
        self.unary(e, e)
    }

    pub fn ln(self) -> Self {
        self.unary(self.primal.ln(), self.primal.recip())
    }

    pub fn sqrt(self) -> Self {
        let s = self.primal.sqrt();
        self.unary(s, T::lit(0.5) / s)
    }

    /// Uses the subgradient `0` at the kink.
    pub fn abs(self) -> Self {
        let d = if self.primal > T::zero() {
            T::one()
        } else if self.primal < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        self.unary(self.primal.abs(), d)
    }

    pub fn powi(self, n: i32) -> Self {
        let d = T::from_i32(n).expect("exponent representable") * self.primal.powi(n - 1);
        self.unary(self.primal.powi(n), d)
    }
}

impl<T: Real> Add for ActiveScalar<T> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.primal + rhs.primal, T::one(), T::one())
    }
}

impl<T: Real> Sub for ActiveScalar<T> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.primal - rhs.primal, T::one(), -T::one())
    }
}

impl<T: Real> Mul for ActiveScalar<T> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.primal * rhs.primal, rhs.primal, self.primal)
    }
}

impl<T: Real> Div for ActiveScalar<T> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = rhs.primal.recip();
        let q = self.primal * inv;
        self.binary(rhs, q, inv, -q * inv)
    }
}

impl<T: Real> Neg for ActiveScalar<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.unary(-self.primal, -T::one())
    }
}

impl<T: Real> Add<T> for ActiveScalar<T> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: T) -> Self {
        self.unary(self.primal + rhs, T::one())
    }
}

impl<T: Real> Sub<T> for ActiveScalar<T> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: T) -> Self {
        self.unary(self.primal - rhs, T::one())
    }
}

impl<T: Real> Mul<T> for ActiveScalar<T> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: T) -> Self {
        self.unary(self.primal * rhs, rhs)
    }
}

impl<T: Real> Div<T> for ActiveScalar<T> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: T) -> Self {
        self.unary(self.primal / rhs, rhs.recip())
    }
}

macro_rules! assign_ops {
    ($($trait:ident $method:ident $op:tt),*) => {$(
        impl<T: Real> $trait for ActiveScalar<T> {
            #[inline]
            fn $method(&mut self, rhs: Self) {
                *self = *self $op rhs;
            }
        }
        impl<T: Real> $trait<T> for ActiveScalar<T> {
            #[inline]
            fn $method(&mut self, rhs: T) {
                *self = *self $op rhs;
            }
        }
    )*};
}

assign_ops!(AddAssign add_assign +, SubAssign sub_assign -, MulAssign mul_assign *, DivAssign div_assign /);

impl<T: Real> PartialEq for ActiveScalar<T> {
    /// Compares primal values only.
    fn eq(&self, other: &Self) -> bool {
        self.primal == other.primal
    }
}

impl<T: Real> PartialOrd for ActiveScalar<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.primal.partial_cmp(&other.primal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::{AccessMode, Engine, EntryView};

    #[test]
    fn passive_arithmetic_records_nothing() {
        let engine = Engine::<f64>::new();
        let tape = engine.create_tape();
        tape.set_active(true);
        let _guard = tape.install();
        let a = ActiveScalar::passive(2.0);
        let b = a * a + 1.0;
        assert_eq!(b.value(), 5.0);
        assert!(!b.is_active());
        assert!(tape.is_empty());
    }

    #[test]
    fn product_rule() {
        let engine = Engine::<f64>::new();
        let tape = engine.create_tape();
        tape.set_active(true);
        let _guard = tape.install();
        let x = tape.register_input(3.0);
        let y = tape.register_input(4.0);
        let z = x * y;
        assert_eq!(
            tape.entries(),
            vec![EntryView::Statement {
                lhs: z.id(),
                partials: vec![4.0, 3.0],
                args: vec![x.id(), y.id()],
            }]
        );
        engine.set_adjoint(z.id(), 1.0);
        tape.evaluate_all(AccessMode::Atomic).unwrap();
        assert_eq!(engine.adjoint(x.id()), 4.0);
        assert_eq!(engine.adjoint(y.id()), 3.0);
        assert_eq!(engine.adjoint(z.id()), 0.0);
    }

    #[test]
    fn inactive_tape_yields_passive_results() {
        let engine = Engine::<f64>::new();
        let tape = engine.create_tape();
        let _guard = tape.install();
        let x = tape.register_input(3.0);
        let y = x.sin();
        assert!(!y.is_active());
        assert!(tape.is_empty());
    }

    #[test]
    fn non_finite_partial_is_rejected() {
        let engine = Engine::<f64>::new();
        let tape = engine.create_tape();
        tape.set_active(true);
        let _guard = tape.install();
        let x = tape.register_input(0.0);
        let y = x.sqrt();
        assert!(!y.is_active());
        assert!(tape.is_empty());
        assert_eq!(engine.stats().rejected_statements, 1);
    }

    #[test]
    fn abs_subgradient_at_zero() {
        let engine = Engine::<f64>::new();
        let tape = engine.create_tape();
        tape.set_active(true);
        let _guard = tape.install();
        let x = tape.register_input(0.0);
        let y = x.abs();
        engine.set_adjoint(y.id(), 1.0);
        tape.evaluate_all(AccessMode::Classical).unwrap();
        assert_eq!(engine.adjoint(x.id()), 0.0);
    }
}
