//! Scalar abstraction shared by the tape, the adjoint vector and the
//! overloaded active type.

use std::cell::RefCell;
use std::fmt::{Debug, Display};
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::thread::LocalKey;

use num_traits::{Float, FromPrimitive};

use crate::tape::Tape;

/// Floating point type usable as primal and adjoint value.
///
/// Besides the arithmetic of [`Float`], a `Real` knows how to live inside
/// an atomic cell (adjoint vector entries are updated concurrently by
/// evaluating threads) and owns the per-thread tape slot consulted by the
/// overloaded operators.
pub trait Real: Float + FromPrimitive + Default + Debug + Display + Send + Sync + 'static {
    /// Atomic storage cell for one adjoint entry.
    type Atomic: Send + Sync + Debug;

    fn new_atomic(value: Self) -> Self::Atomic;
    fn load(cell: &Self::Atomic) -> Self;
    fn store(cell: &Self::Atomic, value: Self);
    fn swap(cell: &Self::Atomic, value: Self) -> Self;
    /// Atomic read-modify-write `cell += value`.
    fn fetch_add(cell: &Self::Atomic, value: Self) -> Self;

    #[doc(hidden)]
    fn tape_slot() -> &'static LocalKey<RefCell<Option<Tape<Self>>>>;

    /// Lossy conversion from an `f64` literal.
    fn lit(value: f64) -> Self {
        <Self as FromPrimitive>::from_f64(value).expect("literal representable")
    }
}

macro_rules! impl_real {
    ($float:ty, $atomic:ty, $slot:ident) => {
        thread_local! {
            static $slot: RefCell<Option<Tape<$float>>> = const { RefCell::new(None) };
        }

        impl Real for $float {
            type Atomic = $atomic;

            #[inline]
            fn new_atomic(value: Self) -> Self::Atomic {
                <$atomic>::new(value.to_bits())
            }

            #[inline]
            fn load(cell: &Self::Atomic) -> Self {
                <$float>::from_bits(cell.load(Ordering::Relaxed))
            }

            #[inline]
            fn store(cell: &Self::Atomic, value: Self) {
                cell.store(value.to_bits(), Ordering::Relaxed)
            }

            #[inline]
            fn swap(cell: &Self::Atomic, value: Self) -> Self {
                <$float>::from_bits(cell.swap(value.to_bits(), Ordering::Relaxed))
            }

            #[inline]
            fn fetch_add(cell: &Self::Atomic, value: Self) -> Self {
                let mut current = cell.load(Ordering::Relaxed);
                loop {
                    let next = (<$float>::from_bits(current) + value).to_bits();
                    match cell.compare_exchange_weak(
                        current,
                        next,
                        Ordering::Relaxed,
                        Ordering::Relaxed,
                    ) {
                        Ok(previous) => return <$float>::from_bits(previous),
                        Err(actual) => current = actual,
                    }
                }
            }

            fn tape_slot() -> &'static LocalKey<RefCell<Option<Tape<Self>>>> {
                &$slot
            }
        }
    };
}

impl_real!(f32, AtomicU32, TAPE_SLOT_F32);
impl_real!(f64, AtomicU64, TAPE_SLOT_F64);

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn atomic_cell_roundtrip() {
        let cell = f64::new_atomic(1.5);
        assert_eq!(f64::load(&cell), 1.5);
        assert_eq!(f64::swap(&cell, 0.0), 1.5);
        assert_eq!(f64::fetch_add(&cell, 2.25), 0.0);
        assert_eq!(f64::load(&cell), 2.25);

        let cell = f32::new_atomic(-1.0);
        f32::store(&cell, 4.0);
        f32::fetch_add(&cell, 0.5);
        assert_eq!(f32::load(&cell), 4.5);
    }

    #[test]
    fn concurrent_fetch_add_is_exact_for_integers() {
        let cell = Arc::new(f64::new_atomic(0.0));
        std::thread::scope(|s| {
            for _ in 0..4 {
                let cell = Arc::clone(&cell);
                s.spawn(move || {
                    for _ in 0..1000 {
                        f64::fetch_add(&cell, 1.0);
                    }
                });
            }
        });
        assert_eq!(f64::load(&cell), 4000.0);
    }
}
