use std::sync::atomic::{AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;

use super::{AccessMode, ActiveScalar, Identifier, Tape, TapeId};
use crate::real::Real;

/// Process-wide tape identities, so positions of tapes from different
/// engines never alias.
static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Shared AD state: identifier distribution and the adjoint vector.
///
/// Identifiers are handed out by a monotone atomic counter and never reused,
/// so tapes recorded concurrently always work on disjoint intermediates.
#[derive(Debug)]
pub struct Engine<T: Real> {
    last_identifier: AtomicU32,
    adjoints: RwLock<Vec<T::Atomic>>,
    live_tapes: AtomicUsize,
    rejected: AtomicU64,
    atomic_statements: AtomicU64,
    classical_statements: AtomicU64,
    external_calls: AtomicU64,
}

/// Counters accumulated over the lifetime of an engine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EngineStats {
    /// Statements whose partials were non-finite and were not recorded.
    pub rejected_statements: u64,
    pub atomic_statements: u64,
    pub classical_statements: u64,
    pub external_calls: u64,
}

impl<T: Real> Engine<T> {
    pub fn new() -> Arc<Self> {
        Arc::new(Engine {
            last_identifier: AtomicU32::new(0),
            adjoints: RwLock::new(Vec::new()),
            live_tapes: AtomicUsize::new(0),
            rejected: AtomicU64::new(0),
            atomic_statements: AtomicU64::new(0),
            classical_statements: AtomicU64::new(0),
            external_calls: AtomicU64::new(0),
        })
    }

    /// Hands out a fresh identifier. Safe under arbitrary concurrency.
    ///
    /// # Panics
    ///
    /// When the 32-bit identifier space is exhausted.
    pub fn new_identifier(&self) -> Identifier {
        let previous = self.last_identifier.fetch_add(1, Ordering::Relaxed);
        if previous == u32::MAX {
            panic!("identifier space exhausted");
        }
        Identifier::new(previous + 1)
    }

    /// Largest identifier distributed so far.
    pub fn max_identifier(&self) -> Identifier {
        Identifier::new(self.last_identifier.load(Ordering::Relaxed))
    }

    /// Creates an active input variable with a fresh identifier.
    pub fn register_input(&self, value: T) -> ActiveScalar<T> {
        ActiveScalar::from_parts(value, self.new_identifier())
    }

    pub fn create_tape(self: &Arc<Self>) -> Tape<T> {
        self.live_tapes.fetch_add(1, Ordering::Relaxed);
        Tape::new(
            TapeId(NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed)),
            Arc::clone(self),
        )
    }

    /// Number of tapes created and not yet deleted.
    pub fn live_tapes(&self) -> usize {
        self.live_tapes.load(Ordering::Relaxed)
    }

    pub(crate) fn tape_deleted(&self) {
        self.live_tapes.fetch_sub(1, Ordering::Relaxed);
    }

    /// Grows the adjoint vector to cover every distributed identifier.
    pub fn ensure_adjoints(&self) {
        let needed = self.max_identifier().index() + 1;
        if self.adjoints.read_recursive().len() >= needed {
            return;
        }
        let mut adjoints = self.adjoints.write();
        let needed = self.max_identifier().index() + 1;
        if adjoints.len() < needed {
            adjoints.resize_with(needed, || T::new_atomic(T::zero()));
        }
    }

    /// Runs `f` with shared access to the adjoint vector, grown first.
    ///
    /// Nested calls from reverse actions are allowed.
    pub fn with_adjoints<R>(&self, f: impl FnOnce(&Adjoints<'_, T>) -> R) -> R {
        self.ensure_adjoints();
        let guard = self.adjoints.read_recursive();
        f(&Adjoints { slots: &guard })
    }

    pub fn adjoint(&self, id: Identifier) -> T {
        self.with_adjoints(|adj| adj.get(id))
    }

    /// Overwrites an adjoint. Writes to the passive identifier are ignored.
    pub fn set_adjoint(&self, id: Identifier, value: T) {
        self.with_adjoints(|adj| adj.set(id, value))
    }

    /// Zeroes the whole adjoint vector.
    pub fn clear_adjoints(&self) {
        let adjoints = self.adjoints.read_recursive();
        for slot in adjoints.iter() {
            T::store(slot, T::zero());
        }
    }

    /// Copy of the adjoint vector, index 0 included.
    pub fn adjoint_snapshot(&self) -> Vec<T> {
        self.with_adjoints(|adj| adj.slots.iter().map(T::load).collect())
    }

    pub fn stats(&self) -> EngineStats {
        EngineStats {
            rejected_statements: self.rejected.load(Ordering::Relaxed),
            atomic_statements: self.atomic_statements.load(Ordering::Relaxed),
            classical_statements: self.classical_statements.load(Ordering::Relaxed),
            external_calls: self.external_calls.load(Ordering::Relaxed),
        }
    }

    pub(crate) fn note_rejected(&self) {
        self.rejected.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn note_evaluated(&self, atomic: u64, classical: u64, external: u64) {
        if atomic > 0 {
            self.atomic_statements.fetch_add(atomic, Ordering::Relaxed);
        }
        if classical > 0 {
            self.classical_statements
                .fetch_add(classical, Ordering::Relaxed);
        }
        if external > 0 {
            self.external_calls.fetch_add(external, Ordering::Relaxed);
        }
    }
}

/// Borrowed view of the adjoint vector handed to evaluation and to
/// external functions.
pub struct Adjoints<'a, T: Real> {
    pub(crate) slots: &'a [T::Atomic],
}

impl<T: Real> Adjoints<'_, T> {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    #[inline]
    pub fn get(&self, id: Identifier) -> T {
        if id.is_passive() {
            return T::zero();
        }
        self.slots.get(id.index()).map_or(T::zero(), T::load)
    }

    #[inline]
    pub fn set(&self, id: Identifier, value: T) {
        if !id.is_passive() {
            T::store(&self.slots[id.index()], value);
        }
    }

    /// `adj[id] += value` under the given access mode.
    #[inline]
    pub fn add(&self, id: Identifier, value: T, mode: AccessMode) {
        if id.is_passive() {
            return;
        }
        let slot = &self.slots[id.index()];
        match mode {
            AccessMode::Atomic => {
                T::fetch_add(slot, value);
            }
            AccessMode::Classical => T::store(slot, T::load(slot) + value),
        }
    }

    /// Reads and zeroes `adj[id]`.
    #[inline]
    pub fn take(&self, id: Identifier, mode: AccessMode) -> T {
        if id.is_passive() {
            return T::zero();
        }
        let slot = &self.slots[id.index()];
        match mode {
            AccessMode::Atomic => T::swap(slot, T::zero()),
            AccessMode::Classical => {
                let value = T::load(slot);
                T::store(slot, T::zero());
                value
            }
        }
    }
}
