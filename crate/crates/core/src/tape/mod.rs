//! Reverse-mode tape: statement recording, positional evaluation and the
//! overloaded active scalar.
//!
//! A statement `w = phi(u_1, .., u_k)` is stored as the identifier of `w`
//! together with the local partials `d phi / d u_j` and the identifiers of
//! the `u_j`. Evaluating the statement in reverse performs
//!
//! ```text
//! adj[u_j] += d phi / d u_j * adj[w]   for j = 1..k
//! adj[w]    = 0
//! ```
//!
//! Tapes are recorded by one thread at a time and may be evaluated
//! concurrently. The adjoint vector lives in the [`Engine`] and is shared by
//! all tapes it created.

mod active;
mod engine;
mod storage;

use std::fmt;

pub use active::ActiveScalar;
pub use engine::{Adjoints, Engine, EngineStats};
pub use storage::{EntryView, ExternalFunction, SlotGuard, Tape};

use crate::real::Real;

/// Index into the adjoint vector. `0` is the passive identifier.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Identifier(u32);

impl Identifier {
    pub const PASSIVE: Identifier = Identifier(0);

    pub const fn new(raw: u32) -> Self {
        Identifier(raw)
    }

    #[inline]
    pub const fn raw(self) -> u32 {
        self.0
    }

    #[inline]
    pub const fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub const fn is_passive(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// How adjoint updates of a tape segment touch the adjoint vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum AccessMode {
    /// Atomic read-modify-write updates; safe under shared reading.
    #[default]
    Atomic,
    /// Plain load/store updates; requires exclusive access per adjoint.
    Classical,
}

impl AccessMode {
    pub fn from_atomics(use_atomics: bool) -> Self {
        if use_atomics {
            AccessMode::Atomic
        } else {
            AccessMode::Classical
        }
    }

    pub fn is_atomic(self) -> bool {
        self == AccessMode::Atomic
    }
}

impl fmt::Display for AccessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AccessMode::Atomic => f.write_str("atomic"),
            AccessMode::Classical => f.write_str("classical"),
        }
    }
}

/// Identity of a tape, unique within the process.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TapeId(pub u64);

impl fmt::Display for TapeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Offset into the entry sequence of one tape.
///
/// Positions compare lexicographically by `(tape, entry)`; only positions
/// of the same tape are meaningfully ordered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Position {
    pub tape: TapeId,
    pub entry: usize,
}

impl fmt::Display for Position {
    /// `tapeId:entryIndex`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.tape, self.entry)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TapeError {
    #[error("position {position} does not belong to tape {tape}")]
    ForeignPosition { position: Position, tape: TapeId },
    #[error("position {position} is past the end of a tape with {len} entries")]
    OutOfRange { position: Position, len: usize },
    #[error("evaluation runs backwards but start {start} lies before end {end}")]
    ReversedRange { start: Position, end: Position },
    #[error("invalid entry range {start}..{end}")]
    InvalidRange { start: usize, end: usize },
    #[error("statement has {partials} partials but {args} arguments")]
    ArityMismatch { partials: usize, args: usize },
    #[error("non-finite partial derivative rejected")]
    NonFinitePartial,
    #[error("a tape cannot be appended to itself")]
    SelfAppend,
}

/// The tape installed for the calling thread, if any.
pub fn current_tape<T: Real>() -> Option<Tape<T>> {
    T::tape_slot().with(|slot| slot.borrow().clone())
}

/// Installs `tape` for the calling thread and returns the previous one.
pub fn set_current_tape<T: Real>(tape: Option<Tape<T>>) -> Option<Tape<T>> {
    T::tape_slot().with(|slot| std::mem::replace(&mut *slot.borrow_mut(), tape))
}

/// Runs `f` with a borrow of the calling thread's tape.
#[inline]
pub fn with_current_tape<T: Real, R>(f: impl FnOnce(Option<&Tape<T>>) -> R) -> R {
    T::tape_slot().with(|slot| f(slot.borrow().as_ref()))
}
