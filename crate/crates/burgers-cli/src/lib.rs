//! Coupled Burgers' equations on a square, differentiated in reverse mode
//! with parallel recording.
//!
//! Each time step is one parallel region over row blocks. The three
//! [`AdjointConfig`]s differ only in how the reverse pass protects
//! adjoint updates at block boundaries.

pub mod adjoint;
pub mod bench;
pub mod config;
pub mod exact;
pub mod fd;
pub mod field;
pub mod solver;
pub mod stencil;

pub use adjoint::{record_and_reverse, Gradient};
pub use config::{AdjointConfig, BlockDecomposition, ConfigError, SolverConfig, Taping};
pub use field::{Field, Grid};
pub use solver::{Solver, SolverError};
