use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::ops::Range;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};

use super::locks::next_lock_id;
use super::{ReductionDecl, Runtime, RuntimeError};
use crate::logic::{MutexKey, MutexKind, SyncKind, WorkKind};
use crate::wrapper::AdTool;

/// Iteration distribution of a worksharing loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    /// Chunks of the given size assigned round robin; `0` splits the range
    /// into one contiguous block per member.
    Static(usize),
    /// Chunks of the given size handed out on demand.
    Dynamic(usize),
}

/// Payload used to unwind members blocked on a poisoned team.
pub(crate) struct TeamAborted;

/// Reusable barrier that can be poisoned when a member fails.
#[derive(Debug)]
pub(crate) struct TeamBarrier {
    state: Mutex<BarrierState>,
    cv: Condvar,
    size: usize,
}

#[derive(Debug, Default)]
struct BarrierState {
    arrived: usize,
    generation: u64,
    poisoned: bool,
}

impl TeamBarrier {
    pub fn new(size: usize) -> Self {
        TeamBarrier {
            state: Mutex::default(),
            cv: Condvar::new(),
            size,
        }
    }

    pub fn wait(&self) -> Result<(), TeamAborted> {
        let mut state = self.state.lock();
        if state.poisoned {
            return Err(TeamAborted);
        }
        state.arrived += 1;
        if state.arrived == self.size {
            state.arrived = 0;
            state.generation += 1;
            self.cv.notify_all();
            return Ok(());
        }
        let generation = state.generation;
        while state.generation == generation {
            if state.poisoned {
                return Err(TeamAborted);
            }
            self.cv.wait(&mut state);
        }
        Ok(())
    }

    pub fn poison(&self) {
        self.state.lock().poisoned = true;
        self.cv.notify_all();
    }

    pub fn is_poisoned(&self) -> bool {
        self.state.lock().poisoned
    }
}

/// State of one worksharing construct shared by the team.
struct Construct {
    seq: u64,
    cursor: AtomicUsize,
    claimed: AtomicBool,
    departed: AtomicUsize,
    /// Next iteration allowed through the ordered gate.
    gate: Mutex<usize>,
    gate_open: Condvar,
    ordered_key: Option<MutexKey>,
}

pub(crate) struct TeamShared {
    pub size: usize,
    pub barrier: TeamBarrier,
    constructs: Mutex<HashMap<u64, Arc<Construct>>>,
}

impl TeamShared {
    pub fn new(size: usize) -> Self {
        TeamShared {
            size,
            barrier: TeamBarrier::new(size),
            constructs: Mutex::default(),
        }
    }
}

struct OrderedLoop {
    construct: Arc<Construct>,
    range: Range<usize>,
    called: Cell<bool>,
}

/// View of a parallel region from one team member.
pub struct Team<'a, W: AdTool> {
    index: usize,
    shared: &'a TeamShared,
    runtime: &'a Runtime<W>,
    construct_seq: Cell<u64>,
    ordered: RefCell<Option<OrderedLoop>>,
}

impl<'a, W: AdTool> Team<'a, W> {
    pub(crate) fn new(index: usize, shared: &'a TeamShared, runtime: &'a Runtime<W>) -> Self {
        Team {
            index,
            shared,
            runtime,
            construct_seq: Cell::new(0),
            ordered: RefCell::new(None),
        }
    }

    /// Index of this member, `0` for the encountering thread.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn size(&self) -> usize {
        self.shared.size
    }

    pub fn is_master(&self) -> bool {
        self.index == 0
    }

    pub fn runtime(&self) -> &'a Runtime<W> {
        self.runtime
    }

    fn wait(&self) {
        if self.shared.barrier.wait().is_err() {
            std::panic::resume_unwind(Box::new(TeamAborted));
        }
    }

    pub(crate) fn sync(&self, kind: SyncKind) {
        let logic = self.runtime.logic();
        logic.on_sync_region_begin(kind);
        self.wait();
        logic.on_sync_region_end(kind);
    }

    /// Team barrier.
    pub fn barrier(&self) {
        self.sync(SyncKind::Barrier);
    }

    fn enter_construct(&self, ordered_start: Option<usize>) -> Arc<Construct> {
        let seq = self.construct_seq.get();
        self.construct_seq.set(seq + 1);
        let mut constructs = self.shared.constructs.lock();
        let construct = constructs.entry(seq).or_insert_with(|| {
            Arc::new(Construct {
                seq,
                cursor: AtomicUsize::new(0),
                claimed: AtomicBool::new(false),
                departed: AtomicUsize::new(0),
                gate: Mutex::new(ordered_start.unwrap_or(0)),
                gate_open: Condvar::new(),
                ordered_key: ordered_start
                    .map(|_| MutexKey::new(MutexKind::Ordered, next_lock_id())),
            })
        });
        Arc::clone(construct)
    }

    fn leave_construct(&self, construct: &Construct) {
        if construct.departed.fetch_add(1, Ordering::AcqRel) + 1 == self.shared.size {
            self.shared.constructs.lock().remove(&construct.seq);
        }
    }

    fn finish_work(&self, kind: WorkKind, construct: &Construct, nowait: bool) {
        self.leave_construct(construct);
        self.runtime.logic().on_work_end(kind);
        if !nowait {
            self.sync(SyncKind::Implicit);
        }
    }

    fn iterations(
        &self,
        construct: &Construct,
        range: &Range<usize>,
        schedule: Schedule,
        mut body: impl FnMut(usize),
    ) {
        let n = range.len();
        let size = self.shared.size;
        match schedule {
            Schedule::Static(chunk) => {
                let chunk = if chunk == 0 {
                    n.div_ceil(size).max(1)
                } else {
                    chunk
                };
                let mut begin = self.index * chunk;
                while begin < n {
                    let end = (begin + chunk).min(n);
                    for i in begin..end {
                        body(range.start + i);
                    }
                    begin += size * chunk;
                }
            }
            Schedule::Dynamic(chunk) => {
                let chunk = chunk.max(1);
                loop {
                    let begin = construct.cursor.fetch_add(chunk, Ordering::Relaxed);
                    if begin >= n {
                        break;
                    }
                    for i in begin..(begin + chunk).min(n) {
                        body(range.start + i);
                    }
                }
            }
        }
    }

    /// Worksharing loop; every member must call it.
    pub fn for_loop(
        &self,
        range: Range<usize>,
        schedule: Schedule,
        nowait: bool,
        body: impl FnMut(usize),
    ) {
        self.runtime.logic().on_work_begin(WorkKind::Loop);
        let construct = self.enter_construct(None);
        self.iterations(&construct, &range, schedule, body);
        self.finish_work(WorkKind::Loop, &construct, nowait);
    }

    /// Worksharing loop whose iterations may call [`Team::ordered`].
    pub fn for_ordered(
        &self,
        range: Range<usize>,
        schedule: Schedule,
        nowait: bool,
        mut body: impl FnMut(usize),
    ) {
        self.runtime.logic().on_work_begin(WorkKind::Loop);
        let construct = self.enter_construct(Some(range.start));
        *self.ordered.borrow_mut() = Some(OrderedLoop {
            construct: Arc::clone(&construct),
            range: range.clone(),
            called: Cell::new(false),
        });
        self.iterations(&construct, &range, schedule, |i| {
            self.with_ordered(|o| o.called.set(false));
            body(i);
            if !self.with_ordered(|o| o.called.get()) {
                // pass the gate so later iterations are not held up
                self.pass_gate(&construct, i, || {});
            }
        });
        *self.ordered.borrow_mut() = None;
        self.finish_work(WorkKind::Loop, &construct, nowait);
    }

    fn with_ordered<R>(&self, f: impl FnOnce(&OrderedLoop) -> R) -> R {
        f(self
            .ordered
            .borrow()
            .as_ref()
            .expect("inside an ordered loop"))
    }

    fn pass_gate<R>(&self, construct: &Construct, iteration: usize, body: impl FnOnce() -> R) -> R {
        let mut next = construct.gate.lock();
        while *next != iteration {
            if self.shared.barrier.is_poisoned() {
                drop(next);
                std::panic::resume_unwind(Box::new(TeamAborted));
            }
            construct
                .gate_open
                .wait_for(&mut next, Duration::from_millis(10));
        }
        drop(next);
        let result = body();
        *construct.gate.lock() = iteration + 1;
        construct.gate_open.notify_all();
        result
    }

    /// Runs `body` for `iteration` after all earlier iterations of the
    /// enclosing ordered loop passed this point.
    pub fn ordered<R>(
        &self,
        iteration: usize,
        body: impl FnOnce() -> R,
    ) -> Result<R, RuntimeError> {
        let (construct, in_range) = {
            let ordered = self.ordered.borrow();
            let Some(o) = ordered.as_ref() else {
                return Err(RuntimeError::OrderedOutsideLoop);
            };
            if o.called.replace(true) {
                return Err(RuntimeError::OrderedTwice(iteration));
            }
            (Arc::clone(&o.construct), o.range.contains(&iteration))
        };
        if !in_range {
            return Err(RuntimeError::OrderedOutsideLoop);
        }
        let key = construct.ordered_key.expect("ordered construct");
        let logic = self.runtime.logic();
        // nobody else passes the gate before it advances, so the gate is
        // held while the acquisition is counted
        let result = self.pass_gate(&construct, iteration, || {
            logic.on_mutex_acquired(key);
            body()
        });
        logic.on_mutex_released(key);
        Ok(result)
    }

    /// Runs each of `count` sections once on some member.
    pub fn sections(&self, count: usize, nowait: bool, mut body: impl FnMut(usize)) {
        self.runtime.logic().on_work_begin(WorkKind::Sections);
        let construct = self.enter_construct(None);
        loop {
            let k = construct.cursor.fetch_add(1, Ordering::Relaxed);
            if k >= count {
                break;
            }
            body(k);
        }
        self.finish_work(WorkKind::Sections, &construct, nowait);
    }

    /// Runs `body` on exactly one member. Returns whether this member ran it.
    pub fn single(&self, nowait: bool, body: impl FnOnce()) -> bool {
        self.runtime.logic().on_work_begin(WorkKind::Single);
        let construct = self.enter_construct(None);
        let mine = !construct.claimed.swap(true, Ordering::AcqRel);
        if mine {
            body();
        }
        self.finish_work(WorkKind::Single, &construct, nowait);
        mine
    }

    /// Runs `body` on member 0. No synchronization and no events.
    pub fn master(&self, body: impl FnOnce()) {
        if self.is_master() {
            body();
        }
    }

    /// Combines `private` into `target`. Every member must call it.
    ///
    /// The private stage is separated from the shared stage by a barrier.
    /// Each contribution sets the declaration's nested guard three times
    /// around the combination, and the construct ends with a barrier.
    pub fn reduce<V>(&self, decl: &ReductionDecl<V>, private: V, target: &std::sync::Mutex<V>)
    where
        V: Clone,
    {
        self.sync(SyncKind::Reduction);
        let runtime = self.runtime;
        // out = Reducer(out) OP Reducer(in): three guard constructions
        for _ in 0..3 {
            runtime.nested_lock_set(&decl.guard);
        }
        {
            let mut out = target.lock().unwrap_or_else(|e| e.into_inner());
            *out = (decl.combine)(out.clone(), private);
        }
        for _ in 0..3 {
            runtime
                .nested_lock_unset(&decl.guard)
                .expect("guard set three times above");
        }
        self.sync(SyncKind::Implicit);
    }
}
