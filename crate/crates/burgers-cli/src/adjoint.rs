use std::sync::Arc;
use std::time::{Duration, Instant};

use partape::logic::TraceSink;
use partape::tape::EngineStats;
use partape::{AccessMode, AdTool, Logic64, LogicConfig, Runtime64, RuntimeConfig, Tool64};

use crate::config::SolverConfig;
use crate::field::Grid;
use crate::solver::{initial_field, objective, Solver, SolverError};

/// Gradient of the objective with respect to the interior initial data.
#[derive(Clone, Debug)]
pub struct Gradient {
    pub objective: f64,
    /// `∂J/∂u(0)` in interior row-major order.
    pub du: Vec<f64>,
    pub dv: Vec<f64>,
    pub forward: Duration,
    pub reverse: Duration,
    /// Engine counters after the reverse pass.
    pub stats: EngineStats,
}

impl Gradient {
    /// `du` followed by `dv`.
    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.du.iter().chain(&self.dv).copied()
    }
}

#[derive(Default)]
pub struct RecordOptions {
    pub trace: Option<TraceSink>,
}

/// Records the simulation, seeds `J̄ = 1` and evaluates the master tape.
pub fn record_and_reverse(cfg: &SolverConfig) -> Result<Gradient, SolverError> {
    record_and_reverse_with(cfg, RecordOptions::default())
}

pub fn record_and_reverse_with(
    cfg: &SolverConfig,
    options: RecordOptions,
) -> Result<Gradient, SolverError> {
    cfg.validate()?;
    let tool = Tool64::initialized();
    let mut logic_config = LogicConfig::new();
    if let Some(sink) = options.trace {
        logic_config = logic_config.with_trace(sink);
    }
    let logic = Logic64::new(Arc::clone(&tool), logic_config);
    let runtime = Runtime64::new(Arc::clone(&logic), RuntimeConfig::default());
    let grid: Grid = cfg.grid();

    let tape = tool.create_tape();
    tape.set_active(true);
    let guard = tape.install();

    let start = Instant::now();
    let mut inputs = Vec::with_capacity(2 * grid.interior_len());
    let initial = initial_field(&grid, |value| {
        let x = tape.register_input(value);
        inputs.push(x);
        x
    });
    let solver = Solver::new(cfg, &runtime)?;
    let result = solver.run(initial).map(|fin| objective(&grid, &fin));
    let j = match result {
        Ok(j) => j,
        Err(e) => {
            tape.set_active(false);
            tape.reset(false);
            drop(guard);
            tool.delete_tape(&tape);
            return Err(e);
        }
    };
    let forward = start.elapsed();
    tape.set_active(false);

    let engine = tool.engine();
    engine.set_adjoint(j.id(), 1.0);
    let start = Instant::now();
    tape.evaluate_all(AccessMode::Atomic)?;
    let reverse = start.elapsed();

    let n = grid.interior_len();
    let adjoints: Vec<f64> = inputs.iter().map(|x| engine.adjoint(x.id())).collect();
    let stats = engine.stats();
    if let Some(trace) = logic.trace() {
        trace.flush();
    }

    tape.reset(true);
    drop(guard);
    tool.delete_tape(&tape);
    logic.shutdown();

    Ok(Gradient {
        objective: j.value(),
        du: adjoints[..n].to_vec(),
        dv: adjoints[n..].to_vec(),
        forward,
        reverse,
        stats,
    })
}
