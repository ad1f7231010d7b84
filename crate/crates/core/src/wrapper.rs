//! Coupling surface between the differentiation logic and a tape engine.
//!
//! The logic layer only talks to tapes through [`AdTool`], so another tape
//! engine can be slotted in by implementing the trait. [`Tool`] wires the
//! in-crate engine.

use std::fmt::Debug;
use std::marker::PhantomData;
use std::sync::Arc;

use parking_lot::RwLock;

use crate::real::Real;
use crate::tape::{self, AccessMode, Engine, Position, Tape, TapeError, TapeId};

/// Reverse action embedded into a tape.
pub type Handle = Arc<dyn Fn() + Send + Sync>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WrapperError {
    #[error("tool is already initialized")]
    AlreadyInitialized,
    #[error("tool is not initialized")]
    NotInitialized,
    #[error("cannot finalize with {0} live tapes")]
    LiveTapes(usize),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

/// Operations the differentiation logic needs from a tape engine.
pub trait AdTool: Send + Sync + 'static {
    type Tape: Clone + Send + Sync + Debug + 'static;
    type Position: Copy + Send + Sync + Debug + PartialEq + 'static;

    fn init(&self) -> Result<(), WrapperError>;
    fn finalize(&self) -> Result<(), WrapperError>;

    // tape creation and deletion
    fn create_tape(&self) -> Self::Tape;
    fn delete_tape(&self, tape: &Self::Tape);

    // thread local tape of the caller
    fn get_thread_local_tape(&self) -> Option<Self::Tape>;
    fn set_thread_local_tape(&self, tape: Option<Self::Tape>);

    // positions
    fn alloc_position(&self) -> Self::Position;
    fn free_position(&self, position: Self::Position);
    fn get_position_size(&self) -> usize;
    fn position_to_string(&self, position: &Self::Position) -> String;
    fn get_tape_position(&self, tape: &Self::Tape) -> Self::Position;

    // tape handling
    fn is_active(&self, tape: &Self::Tape) -> bool;
    fn set_active(&self, tape: &Self::Tape, active: bool);
    fn evaluate(
        &self,
        tape: &Self::Tape,
        start: Self::Position,
        end: Self::Position,
        use_atomics: bool,
    ) -> Result<(), WrapperError>;
    fn reset(&self, tape: &Self::Tape, clear_adjoints: bool);
    fn reset_to(
        &self,
        tape: &Self::Tape,
        position: Self::Position,
        clear_adjoints: bool,
    ) -> Result<(), WrapperError>;
    fn push_external_function(&self, tape: &Self::Tape, handle: Handle);

    // tape editing
    fn erase(
        &self,
        tape: &Self::Tape,
        start: Self::Position,
        end: Self::Position,
    ) -> Result<(), WrapperError>;
    fn append(
        &self,
        dst: &Self::Tape,
        src: &Self::Tape,
        start: Self::Position,
        end: Self::Position,
    ) -> Result<(), WrapperError>;

    /// Appends an access mode marker to `tape`.
    fn push_access_mode_marker(&self, tape: &Self::Tape, mode: AccessMode);

    /// Process-unique identity, used for tape audits and trace output.
    fn tape_id(&self, tape: &Self::Tape) -> u64;
}

/// [`AdTool`] backed by [`Engine`].
pub struct Tool<T: Real> {
    engine: RwLock<Option<Arc<Engine<T>>>>,
    _marker: PhantomData<fn() -> T>,
}

impl<T: Real> Default for Tool<T> {
    fn default() -> Self {
        Tool {
            engine: RwLock::new(None),
            _marker: PhantomData,
        }
    }
}

impl<T: Real> Tool<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Creates and initializes a tool.
    pub fn initialized() -> Arc<Self> {
        let tool = Arc::new(Self::new());
        tool.init().expect("fresh tool");
        tool
    }

    /// # Panics
    ///
    /// When the tool is not initialized.
    pub fn engine(&self) -> Arc<Engine<T>> {
        self.engine
            .read()
            .clone()
            .expect("tool used before init or after finalize")
    }

    pub fn is_initialized(&self) -> bool {
        self.engine.read().is_some()
    }
}

impl<T: Real> AdTool for Tool<T> {
    type Tape = Tape<T>;
    type Position = Position;

    fn init(&self) -> Result<(), WrapperError> {
        let mut engine = self.engine.write();
        if engine.is_some() {
            return Err(WrapperError::AlreadyInitialized);
        }
        *engine = Some(Engine::new());
        Ok(())
    }

    fn finalize(&self) -> Result<(), WrapperError> {
        let mut engine = self.engine.write();
        let live = engine
            .as_ref()
            .ok_or(WrapperError::NotInitialized)?
            .live_tapes();
        if live > 0 {
            return Err(WrapperError::LiveTapes(live));
        }
        *engine = None;
        tape::set_current_tape::<T>(None);
        Ok(())
    }

    fn create_tape(&self) -> Tape<T> {
        self.engine().create_tape()
    }

    fn delete_tape(&self, tape: &Tape<T>) {
        tape.delete();
    }

    fn get_thread_local_tape(&self) -> Option<Tape<T>> {
        tape::current_tape()
    }

    fn set_thread_local_tape(&self, tape: Option<Tape<T>>) {
        tape::set_current_tape(tape);
    }

    fn alloc_position(&self) -> Position {
        Position {
            tape: TapeId(0),
            entry: 0,
        }
    }

    fn free_position(&self, _position: Position) {}

    fn get_position_size(&self) -> usize {
        std::mem::size_of::<Position>()
    }

    fn position_to_string(&self, position: &Position) -> String {
        position.to_string()
    }

    fn get_tape_position(&self, tape: &Tape<T>) -> Position {
        tape.position()
    }

    fn is_active(&self, tape: &Tape<T>) -> bool {
        tape.is_active()
    }

    fn set_active(&self, tape: &Tape<T>, active: bool) {
        tape.set_active(active);
    }

    fn evaluate(
        &self,
        tape: &Tape<T>,
        start: Position,
        end: Position,
        use_atomics: bool,
    ) -> Result<(), WrapperError> {
        Ok(tape.evaluate(start, end, AccessMode::from_atomics(use_atomics))?)
    }

    fn reset(&self, tape: &Tape<T>, clear_adjoints: bool) {
        tape.reset(clear_adjoints);
    }

    fn reset_to(
        &self,
        tape: &Tape<T>,
        position: Position,
        clear_adjoints: bool,
    ) -> Result<(), WrapperError> {
        Ok(tape.reset_to(position, clear_adjoints)?)
    }

    fn push_external_function(&self, tape: &Tape<T>, handle: Handle) {
        tape.push_external_function(move |_, _| handle());
    }

    fn erase(&self, tape: &Tape<T>, start: Position, end: Position) -> Result<(), WrapperError> {
        Ok(tape.erase(start, end)?)
    }

    fn append(
        &self,
        dst: &Tape<T>,
        src: &Tape<T>,
        start: Position,
        end: Position,
    ) -> Result<(), WrapperError> {
        Ok(dst.append_from(src, start, end)?)
    }

    fn push_access_mode_marker(&self, tape: &Tape<T>, mode: AccessMode) {
        tape.set_access_mode(mode);
    }

    fn tape_id(&self, tape: &Tape<T>) -> u64 {
        tape.id().0
    }
}
