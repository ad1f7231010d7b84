#![allow(dead_code)]

use std::sync::Arc;

use partape::logic::TraceSink;
use partape::tape::SlotGuard;
use partape::{AccessMode, Engine64, Logic, LogicConfig, Runtime, RuntimeConfig, Tape64, Tool64};

/// Tool, logic, runtime and an active master tape installed on the calling
/// thread.
pub struct Fixture {
    pub tool: Arc<Tool64>,
    pub logic: Arc<Logic<Tool64>>,
    pub rt: Runtime<Tool64>,
    pub tape: Tape64,
    _guard: SlotGuard<f64>,
}

impl Fixture {
    pub fn new() -> Self {
        Self::with_config(LogicConfig::new())
    }

    pub fn traced() -> Self {
        Self::with_config(LogicConfig::new().with_trace(TraceSink::memory()))
    }

    fn with_config(config: LogicConfig) -> Self {
        let tool = Tool64::initialized();
        let logic = Logic::new(Arc::clone(&tool), config);
        let rt = Runtime::new(Arc::clone(&logic), RuntimeConfig::default());
        let tape = partape::AdTool::create_tape(&*tool);
        tape.set_active(true);
        let guard = tape.install();
        Fixture {
            tool,
            logic,
            rt,
            tape,
            _guard: guard,
        }
    }

    pub fn engine(&self) -> Arc<Engine64> {
        self.tool.engine()
    }

    pub fn input(&self, value: f64) -> partape::Active64 {
        self.tape.register_input(value)
    }

    pub fn seed(&self, y: partape::Active64, value: f64) {
        self.engine().set_adjoint(y.id(), value);
    }

    pub fn adjoint(&self, x: partape::Active64) -> f64 {
        self.engine().adjoint(x.id())
    }

    /// Stops recording and evaluates the whole master tape.
    pub fn reverse(&self) {
        self.tape.set_active(false);
        self.tape.evaluate_all(AccessMode::Atomic).unwrap();
    }

    pub fn trace_events(&self) -> Vec<partape::logic::TraceRecord> {
        self.logic
            .trace()
            .expect("traced fixture")
            .lines()
            .iter()
            .map(|l| partape::logic::TraceRecord::parse(l).expect("well-formed trace line"))
            .collect()
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
