use std::sync::{Arc, Barrier, OnceLock};
use std::thread::ThreadId;

use parking_lot::{Condvar, Mutex};

use super::pool::TaskPath;
use crate::tape::AccessMode;
use crate::wrapper::AdTool;

/// Team-wide synchronization shared by the tasks of one region, used by
/// reverse barriers.
#[derive(Debug)]
pub(crate) struct RegionSync {
    pub id: u64,
    barrier: OnceLock<Barrier>,
}

impl RegionSync {
    pub fn new(id: u64) -> Self {
        RegionSync {
            id,
            barrier: OnceLock::new(),
        }
    }

    pub fn set_team_size(&self, actual: usize) {
        self.barrier.get_or_init(|| Barrier::new(actual));
    }

    pub fn wait(&self) {
        self.barrier
            .get()
            .expect("reverse barrier of a region without tasks")
            .wait();
    }
}

/// Tape, end, start and default mode of one task evaluation.
type Job<W> = (
    <W as AdTool>::Tape,
    <W as AdTool>::Position,
    <W as AdTool>::Position,
    AccessMode,
);

pub(crate) struct TaskRecord<W: AdTool> {
    pub tape: W::Tape,
    pub start: W::Position,
    pub end: Option<W::Position>,
    pub mode: AccessMode,
}

/// AD data of one recorded parallel region.
pub(crate) struct RegionData<W: AdTool> {
    pub tool: Arc<W>,
    pub requested: usize,
    pub parent_path: TaskPath,
    pub parent_mode: AccessMode,
    pub actual: OnceLock<usize>,
    pub tasks: Mutex<Vec<Option<TaskRecord<W>>>>,
    completed: Mutex<usize>,
    all_completed: Condvar,
    pub sync: Arc<RegionSync>,
}

impl<W: AdTool> RegionData<W> {
    pub fn new(
        tool: Arc<W>,
        id: u64,
        requested: usize,
        parent_path: TaskPath,
        parent_mode: AccessMode,
    ) -> Self {
        RegionData {
            tool,
            requested,
            parent_path,
            parent_mode,
            actual: OnceLock::new(),
            tasks: Mutex::new((0..requested).map(|_| None).collect()),
            completed: Mutex::new(0),
            all_completed: Condvar::new(),
            sync: Arc::new(RegionSync::new(id)),
        }
    }

    pub fn id(&self) -> u64 {
        self.sync.id
    }

    pub fn task_completed(&self) {
        *self.completed.lock() += 1;
        self.all_completed.notify_all();
    }

    fn wait_for_tasks(&self, actual: usize) {
        let mut completed = self.completed.lock();
        while *completed < actual {
            self.all_completed.wait(&mut completed);
        }
    }

    /// Reverse action of the region: evaluates all task tapes in parallel.
    /// The calling thread evaluates task 0.
    pub fn reverse(&self) {
        let Some(&actual) = self.actual.get() else {
            return;
        };
        self.wait_for_tasks(actual);
        let jobs: Vec<Job<W>> = {
            let tasks = self.tasks.lock();
            tasks[..actual]
                .iter()
                .map(|t| {
                    let t = t.as_ref().expect("completed task has a record");
                    let end = t.end.expect("completed task has an end position");
                    (t.tape.clone(), end, t.start, t.mode)
                })
                .collect()
        };
        let tool = &*self.tool;
        let evaluate =
            |(tape, end, start, mode): &(W::Tape, W::Position, W::Position, AccessMode)| {
                tool.evaluate(tape, *end, *start, mode.is_atomic())
                    .expect("task positions are valid for their tape");
            };
        std::thread::scope(|s| {
            for job in &jobs[1..] {
                s.spawn(move || evaluate(job));
            }
            evaluate(&jobs[0]);
        });
    }
}

impl<W: AdTool> Drop for RegionData<W> {
    /// Once the reverse action is discarded (the parent tape was reset past
    /// it) the task recordings are unreachable, so the pooled tapes are
    /// rewound to where this region started.
    fn drop(&mut self) {
        for task in self.tasks.get_mut().iter().flatten() {
            // a later rewind of an earlier region may already have cut the tape
            let _ = self.tool.reset_to(&task.tape, task.start, false);
        }
    }
}

/// Handle connecting the begin and end of one parallel region.
///
/// Inert when the encountering thread was not recording.
pub struct ParallelData<W: AdTool> {
    pub(crate) region: Option<Arc<RegionData<W>>>,
    pub(crate) parent_tape: Option<W::Tape>,
}

impl<W: AdTool> ParallelData<W> {
    pub(crate) fn inert() -> Self {
        ParallelData {
            region: None,
            parent_tape: None,
        }
    }

    pub fn is_inert(&self) -> bool {
        self.region.is_none()
    }

    /// Requested team size, `None` if inert.
    pub fn requested(&self) -> Option<usize> {
        self.region.as_ref().map(|r| r.requested)
    }

    /// Team size fixed by the first implicit task.
    pub fn actual(&self) -> Option<usize> {
        self.region.as_ref().and_then(|r| r.actual.get().copied())
    }

    pub fn region_id(&self) -> Option<u64> {
        self.region.as_ref().map(|r| r.id())
    }

    /// Tape id of every task that has begun, by task index.
    pub fn task_tapes(&self) -> Vec<Option<u64>> {
        let Some(region) = &self.region else {
            return Vec::new();
        };
        region
            .tasks
            .lock()
            .iter()
            .map(|t| t.as_ref().map(|t| region.tool.tape_id(&t.tape)))
            .collect()
    }
}

impl<W: AdTool> Clone for ParallelData<W> {
    fn clone(&self) -> Self {
        ParallelData {
            region: self.region.clone(),
            parent_tape: self.parent_tape.clone(),
        }
    }
}

/// Handle connecting the begin and end of one implicit task.
pub struct TaskData<W: AdTool> {
    pub(crate) inner: Option<TaskInner<W>>,
}

pub(crate) struct TaskInner<W: AdTool> {
    pub region: Arc<RegionData<W>>,
    pub index: usize,
    pub path: TaskPath,
    pub previous: Option<W::Tape>,
    pub thread: ThreadId,
}

impl<W: AdTool> TaskData<W> {
    pub fn is_inert(&self) -> bool {
        self.inner.is_none()
    }

    pub fn index(&self) -> Option<usize> {
        self.inner.as_ref().map(|t| t.index)
    }

    pub fn path(&self) -> Option<&[u32]> {
        self.inner.as_ref().map(|t| &*t.path)
    }
}
