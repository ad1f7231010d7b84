//! Event-based differentiation of fork-join parallelism.
//!
//! A parallel runtime reports the begin and end of its constructs to a
//! [`Logic`] instance. Each event runs a forward action immediately and,
//! while the calling thread records, pushes a reverse action onto the
//! calling thread's tape:
//!
//! - parallel regions record each implicit task on its own tape and reverse
//!   into a parallel evaluation of those tapes;
//! - sync regions (barriers) reverse into barriers;
//! - mutex acquisitions are stamped with a per-mutex counter so that the
//!   guarded sections reverse in exactly the inverted order.

mod mutex;
mod pool;
mod region;
mod trace;

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

pub use mutex::{MutexKey, MutexKind};
pub use pool::{path_string, TaskPath};
pub use region::{ParallelData, TaskData};
pub use trace::{Trace, TraceRecord, TraceSink};

use mutex::{Held, MutexTable};
use pool::TapePool;
use region::{RegionData, RegionSync, TaskInner, TaskRecord};

use crate::tape::AccessMode;
use crate::wrapper::{AdTool, Handle};

static NEXT_LOGIC_ID: AtomicU64 = AtomicU64::new(1);
static NEXT_REGION_ID: AtomicU64 = AtomicU64::new(1);

/// Key of the pool's internal lock, registered inactive at construction.
pub const INTERNAL_LOCK: MutexKey = MutexKey::new(MutexKind::Lock, u64::MAX);

/// Kind of a sync region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SyncKind {
    /// Explicit barrier.
    Barrier,
    /// Implicit barrier at the end of a region or worksharing construct.
    Implicit,
    /// Separation of the private and shared reduction stages.
    Reduction,
}

impl fmt::Display for SyncKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyncKind::Barrier => "barrier",
            SyncKind::Implicit => "implicit",
            SyncKind::Reduction => "reduction",
        })
    }
}

/// Kind of a worksharing construct.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WorkKind {
    Loop,
    Sections,
    Single,
}

impl fmt::Display for WorkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WorkKind::Loop => "loop",
            WorkKind::Sections => "sections",
            WorkKind::Single => "single",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LogicError {
    #[error("a parallel region needs at least one thread, requested {0}")]
    NoThreads(usize),
    #[error("task index {index} outside team of {actual} (requested {requested})")]
    BadTaskIndex {
        index: usize,
        actual: usize,
        requested: usize,
    },
    #[error("team size {actual} disagrees with the size {fixed} fixed by a sibling task")]
    TeamSizeMismatch { actual: usize, fixed: usize },
    #[error("implicit task ended on a different thread than it began")]
    ThreadMismatch,
    #[error("implicit task ended out of nesting order")]
    NestingMismatch,
}

#[derive(Debug, Default)]
pub struct LogicConfig {
    /// Spins before a waiting reverse mutex action starts yielding.
    pub spin_budget: u32,
    pub trace: Option<TraceSink>,
}

impl LogicConfig {
    pub fn new() -> Self {
        LogicConfig {
            spin_budget: 1 << 10,
            trace: None,
        }
    }

    pub fn with_trace(mut self, sink: TraceSink) -> Self {
        self.trace = Some(sink);
        self
    }
}

/// Exported logic state.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LogicState {
    pub counters: BTreeMap<MutexKey, u64>,
    /// Access mode of the exporting thread.
    pub mode: AccessMode,
}

/// Counters of events that were dropped or violated a contract.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Sync region or reverse barrier events outside a recorded region.
    pub ignored_events: u64,
    /// Releases without a matching acquisition.
    pub unmatched_releases: u64,
    /// Tapes handed to a task while another live task still held them.
    pub pool_conflicts: u64,
}

/// Differentiation logic bound to one AD tool.
pub struct Logic<W: AdTool> {
    id: u64,
    tool: Arc<W>,
    pool: TapePool<W>,
    mutexes: MutexTable,
    serial_mode: Mutex<AccessMode>,
    spin_budget: u32,
    trace: Option<Trace>,
    ignored: AtomicU64,
    unmatched: AtomicU64,
}

/// Implicit task currently executed by a thread.
struct Frame {
    logic: u64,
    path: TaskPath,
    sync: Arc<RegionSync>,
    mode: AccessMode,
}

thread_local! {
    static FRAMES: RefCell<Vec<Frame>> = const { RefCell::new(Vec::new()) };
    static HELD: RefCell<HashMap<(u64, MutexKey), Held>> = RefCell::new(HashMap::new());
}

impl<W: AdTool> fmt::Debug for Logic<W> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Logic")
            .field("id", &self.id)
            .field("diagnostics", &self.diagnostics())
            .finish()
    }
}

impl<W: AdTool> Logic<W> {
    pub fn new(tool: Arc<W>, config: LogicConfig) -> Arc<Self> {
        let logic = Logic {
            id: NEXT_LOGIC_ID.fetch_add(1, Ordering::Relaxed),
            tool,
            pool: TapePool::new(),
            mutexes: MutexTable::default(),
            serial_mode: Mutex::new(AccessMode::default()),
            spin_budget: config.spin_budget,
            trace: config.trace.map(Trace::new),
            ignored: AtomicU64::new(0),
            unmatched: AtomicU64::new(0),
        };
        logic.register_inactive_mutex(INTERNAL_LOCK);
        Arc::new(logic)
    }

    pub fn tool(&self) -> &Arc<W> {
        &self.tool
    }

    pub fn trace(&self) -> Option<&Trace> {
        self.trace.as_ref()
    }

    pub fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            ignored_events: self.ignored.load(Ordering::Relaxed),
            unmatched_releases: self.unmatched.load(Ordering::Relaxed),
            pool_conflicts: self.pool.conflicts(),
        }
    }

    /// `(path, tape id)` of tapes currently held by running tasks.
    pub fn live_task_tapes(&self) -> Vec<(TaskPath, u64)> {
        self.pool.live()
    }

    /// `(path, tape id)` of every tape in the pool.
    pub fn pooled_tapes(&self) -> Vec<(TaskPath, u64)> {
        self.pool.tapes(&self.tool)
    }

    /// Deletes the pooled tapes. Call before finalizing the tool; returns
    /// the number of tapes that could not be deleted because a task still
    /// holds them.
    pub fn shutdown(&self) -> usize {
        self.pool.clear(&self.tool)
    }

    /// Current counter value of a mutex.
    pub fn mutex_counter(&self, key: MutexKey) -> u64 {
        self.mutexes.value(key)
    }

    /// Nesting path of the task the calling thread currently executes.
    pub fn current_path(&self) -> TaskPath {
        self.with_frame(|f| f.map(|f| Arc::clone(&f.path)))
            .unwrap_or_else(|| Arc::from(Vec::new()))
    }

    fn with_frame<R>(&self, f: impl FnOnce(Option<&mut Frame>) -> R) -> R {
        FRAMES.with(|frames| {
            let mut frames = frames.borrow_mut();
            f(frames.iter_mut().rev().find(|fr| fr.logic == self.id))
        })
    }

    fn emit(&self, event: &str, key: impl fmt::Display, value: impl fmt::Display) {
        if let Some(trace) = &self.trace {
            let thread = path_string(&self.current_path());
            trace.emit(&thread, event, &key.to_string(), &value.to_string());
        }
    }

    /// Tape of the calling thread if it is recording.
    fn recording_tape(&self) -> Option<W::Tape> {
        self.tool
            .get_thread_local_tape()
            .filter(|t| self.tool.is_active(t))
    }

    fn push(&self, tape: &W::Tape, f: impl Fn() + Send + Sync + 'static) {
        let handle: Handle = Arc::new(f);
        self.tool.push_external_function(tape, handle);
    }

    // parallel regions

    pub fn on_parallel_begin(&self, requested: usize) -> Result<ParallelData<W>, LogicError> {
        if requested < 1 {
            return Err(LogicError::NoThreads(requested));
        }
        let Some(parent) = self.recording_tape() else {
            self.emit("ParallelBegin", "region:-", requested);
            return Ok(ParallelData::inert());
        };
        let region = RegionData::new(
            Arc::clone(&self.tool),
            NEXT_REGION_ID.fetch_add(1, Ordering::Relaxed),
            requested,
            self.current_path(),
            self.get_adjoint_access_mode(),
        );
        self.emit(
            "ParallelBegin",
            format_args!("region:{}", region.id()),
            requested,
        );
        Ok(ParallelData {
            region: Some(Arc::new(region)),
            parent_tape: Some(parent),
        })
    }

    pub fn on_implicit_task_begin(
        &self,
        actual: usize,
        index: usize,
        pd: &ParallelData<W>,
    ) -> Result<TaskData<W>, LogicError> {
        let Some(region) = &pd.region else {
            return Ok(TaskData { inner: None });
        };
        if index >= actual || actual > region.requested {
            return Err(LogicError::BadTaskIndex {
                index,
                actual,
                requested: region.requested,
            });
        }
        let fixed = *region.actual.get_or_init(|| actual);
        if fixed != actual {
            return Err(LogicError::TeamSizeMismatch { actual, fixed });
        }
        region.sync.set_team_size(actual);

        let mut path = region.parent_path.to_vec();
        path.push(index as u32);
        let path: TaskPath = Arc::from(path);
        let tape = self.pool.acquire(&self.tool, &path);
        let previous = self.tool.get_thread_local_tape();
        self.tool.set_thread_local_tape(Some(tape.clone()));
        self.tool.set_active(&tape, true);
        let start = self.tool.get_tape_position(&tape);
        let tape_id = self.tool.tape_id(&tape);
        region.tasks.lock()[index] = Some(TaskRecord {
            tape,
            start,
            end: None,
            mode: region.parent_mode,
        });
        FRAMES.with(|frames| {
            frames.borrow_mut().push(Frame {
                logic: self.id,
                path: Arc::clone(&path),
                sync: Arc::clone(&region.sync),
                mode: region.parent_mode,
            })
        });
        self.emit(
            "ImplicitTaskBegin",
            format_args!("region:{}", region.id()),
            format_args!("{index}/{actual}@tape{tape_id}"),
        );
        Ok(TaskData {
            inner: Some(TaskInner {
                region: Arc::clone(region),
                index,
                path,
                previous,
                thread: std::thread::current().id(),
            }),
        })
    }

    pub fn on_implicit_task_end(&self, td: TaskData<W>) -> Result<(), LogicError> {
        let Some(task) = td.inner else {
            return Ok(());
        };
        if task.thread != std::thread::current().id() {
            return Err(LogicError::ThreadMismatch);
        }
        let on_top = self.with_frame(|f| f.is_some_and(|f| Arc::ptr_eq(&f.path, &task.path)));
        if !on_top {
            return Err(LogicError::NestingMismatch);
        }
        self.emit(
            "ImplicitTaskEnd",
            format_args!("region:{}", task.region.id()),
            task.index,
        );
        let region = &task.region;
        {
            let mut tasks = region.tasks.lock();
            let record = tasks[task.index]
                .as_mut()
                .expect("task began on this region");
            record.end = Some(self.tool.get_tape_position(&record.tape));
            self.tool.set_active(&record.tape, false);
        }
        self.tool.set_thread_local_tape(task.previous);
        FRAMES.with(|frames| {
            let mut frames = frames.borrow_mut();
            let pos = frames
                .iter()
                .rposition(|f| f.logic == self.id)
                .expect("frame checked above");
            frames.remove(pos);
        });
        self.pool.release(&self.tool, &task.path);
        region.task_completed();
        Ok(())
    }

    pub fn on_parallel_end(&self, pd: ParallelData<W>) {
        let (Some(region), Some(parent)) = (pd.region, pd.parent_tape) else {
            self.emit("ParallelEnd", "region:-", "-");
            return;
        };
        self.emit(
            "ParallelEnd",
            format_args!("region:{}", region.id()),
            region.actual.get().copied().unwrap_or(0),
        );
        if !self.tool.is_active(&parent) {
            // recording stopped inside the region; its tasks are discarded
            return;
        }
        self.push(&parent, move || region.reverse());
    }

    // sync regions

    pub fn on_sync_region_begin(&self, kind: SyncKind) {
        self.emit("SyncRegionBegin", kind, "-");
    }

    pub fn on_sync_region_end(&self, kind: SyncKind) {
        self.emit("SyncRegionEnd", kind, "-");
        let Some(tape) = self.recording_tape() else {
            return;
        };
        match self.with_frame(|f| f.map(|f| Arc::clone(&f.sync))) {
            Some(sync) => self.push(&tape, move || sync.wait()),
            None => {
                self.ignored.fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    // mutexes

    pub fn register_inactive_mutex(&self, key: MutexKey) {
        self.mutexes.register_inactive(key);
    }

    /// Must be called while the mutex is held.
    pub fn on_mutex_acquired(&self, key: MutexKey) {
        if self.mutexes.is_inactive(key) {
            return;
        }
        let recorded = self.recording_tape().map(|tape| {
            let counter = self.mutexes.counter(key);
            let value = counter.fetch_add(1, Ordering::AcqRel) + 1;
            self.push(&tape, move || counter.store(value - 1, Ordering::Release));
            value
        });
        HELD.with(|held| {
            held.borrow_mut()
                .entry((self.id, key))
                .or_default()
                .acquire(recorded)
        });
        if let Some(value) = recorded {
            self.emit("MutexAcquired", key, value);
        }
    }

    pub fn on_mutex_released(&self, key: MutexKey) {
        if self.mutexes.is_inactive(key) {
            return;
        }
        let released = HELD.with(|held| {
            let mut held = held.borrow_mut();
            let entry = held.get_mut(&(self.id, key))?;
            let result = entry.release();
            if entry.is_empty() {
                held.remove(&(self.id, key));
            }
            result.ok()
        });
        let Some(value) = released else {
            self.unmatched.fetch_add(1, Ordering::Relaxed);
            return;
        };
        let (Some(value), Some(tape)) = (value, self.recording_tape()) else {
            return;
        };
        self.emit("MutexReleased", key, value);
        let counter = self.mutexes.counter(key);
        let budget = self.spin_budget;
        self.push(&tape, move || mutex::wait_for(&counter, value, budget));
    }

    // worksharing

    pub fn on_work_begin(&self, kind: WorkKind) {
        self.emit("WorkBegin", kind, "-");
    }

    pub fn on_work_end(&self, kind: WorkKind) {
        self.emit("WorkEnd", kind, "-");
    }

    // adjoint access

    /// Sets the access mode of the calling thread. Recording that follows is
    /// evaluated under `mode`.
    pub fn set_adjoint_access_mode(&self, mode: AccessMode) {
        let in_task = self.with_frame(|f| f.map(|f| f.mode = mode).is_some());
        if !in_task {
            *self.serial_mode.lock() = mode;
        }
        if let Some(tape) = self.recording_tape() {
            self.tool.push_access_mode_marker(&tape, mode);
        }
    }

    pub fn get_adjoint_access_mode(&self) -> AccessMode {
        self.with_frame(|f| f.map(|f| f.mode))
            .unwrap_or_else(|| *self.serial_mode.lock())
    }

    /// Pushes a barrier that only exists in the reverse pass.
    pub fn add_reverse_barrier(&self) {
        let Some(tape) = self.recording_tape() else {
            return;
        };
        match self.with_frame(|f| f.map(|f| Arc::clone(&f.sync))) {
            Some(sync) => self.push(&tape, move || sync.wait()),
            None => {
                self.ignored.fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    /// Pushes a memory fence that only exists in the reverse pass.
    pub fn add_reverse_flush(&self) {
        if let Some(tape) = self.recording_tape() {
            self.push(&tape, || std::sync::atomic::fence(Ordering::SeqCst));
        }
    }

    // state

    pub fn export_state(&self) -> LogicState {
        LogicState {
            counters: self.mutexes.snapshot(),
            mode: self.get_adjoint_access_mode(),
        }
    }

    /// Restores an exported state. Only call between evaluations.
    pub fn recover_state(&self, state: &LogicState) {
        self.mutexes.restore(&state.counters);
        let in_task = self.with_frame(|f| f.map(|f| f.mode = state.mode).is_some());
        if !in_task {
            *self.serial_mode.lock() = state.mode;
        }
    }
}
