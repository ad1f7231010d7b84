//! Reverse-mode automatic differentiation with parallel tape recording.
//!
//! - [`tape`]: statement recording, positional evaluation and the active
//!   scalar type.
//! - [`wrapper`]: the interface through which the differentiation logic
//!   manipulates tapes.
//! - [`logic`]: AD events of parallel constructs and their reverse actions.
//! - [`runtime`]: a fork-join runtime emitting those events.
//!
//! The core is generic over the floating point type; the aliases below fix
//! it to `f64` or `f32`.

pub mod logic;
pub mod real;
pub mod runtime;
pub mod tape;
pub mod wrapper;

pub use logic::{Logic, LogicConfig, LogicState, MutexKey, MutexKind};
pub use real::Real;
pub use runtime::{Runtime, RuntimeConfig, Schedule, Team};
pub use tape::{AccessMode, ActiveScalar, Engine, Identifier, Position, Tape};
pub use wrapper::{AdTool, Tool};

pub type Active64 = ActiveScalar<f64>;
pub type Active32 = ActiveScalar<f32>;
pub type Tape64 = Tape<f64>;
pub type Tape32 = Tape<f32>;
pub type Engine64 = Engine<f64>;
pub type Engine32 = Engine<f32>;
pub type Tool64 = Tool<f64>;
pub type Tool32 = Tool<f32>;
pub type Logic64 = Logic<Tool<f64>>;
pub type Logic32 = Logic<Tool<f32>>;
pub type Runtime64 = Runtime<Tool<f64>>;
pub type Runtime32 = Runtime<Tool<f32>>;
