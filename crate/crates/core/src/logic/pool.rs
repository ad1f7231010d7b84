use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Condvar, Mutex};

use crate::wrapper::AdTool;

/// Path of an implicit task in the nesting tree: task indices from the root.
pub type TaskPath = Arc<[u32]>;

/// Renders a path as `0/1`, or `root` for the empty path.
pub fn path_string(path: &[u32]) -> String {
    if path.is_empty() {
        return "root".to_owned();
    }
    path.iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join("/")
}

struct Slot<Tape> {
    tape: Tape,
    in_use: bool,
}

struct PoolState<Tape> {
    slots: HashMap<TaskPath, Slot<Tape>>,
    /// Tape id to path of every tape currently held by a task.
    live: HashMap<u64, TaskPath>,
}

/// Tapes keyed by nesting-tree position.
///
/// A task at path `p` always records on the tape of `p`, so sequential
/// regions of one parent task reuse tapes while tasks of different parents
/// or levels never share one.
pub(crate) struct TapePool<W: AdTool> {
    state: Mutex<PoolState<W::Tape>>,
    released: Condvar,
    conflicts: AtomicU64,
}

impl<W: AdTool> TapePool<W> {
    pub fn new() -> Self {
        TapePool {
            state: Mutex::new(PoolState {
                slots: HashMap::new(),
                live: HashMap::new(),
            }),
            released: Condvar::new(),
            conflicts: AtomicU64::new(0),
        }
    }

    pub fn acquire(&self, tool: &W, path: &TaskPath) -> W::Tape {
        let mut state = self.state.lock();
        loop {
            let slot = state.slots.entry(Arc::clone(path)).or_insert_with(|| Slot {
                tape: tool.create_tape(),
                in_use: false,
            });
            if !slot.in_use {
                slot.in_use = true;
                let tape = slot.tape.clone();
                let id = tool.tape_id(&tape);
                if state.live.insert(id, Arc::clone(path)).is_some() {
                    self.conflicts.fetch_add(1, Ordering::Relaxed);
                }
                return tape;
            }
            // a task of the previous region at this path has not ended yet
            self.released.wait(&mut state);
        }
    }

    pub fn release(&self, tool: &W, path: &TaskPath) {
        let mut state = self.state.lock();
        let Some(slot) = state.slots.get_mut(path) else {
            return;
        };
        slot.in_use = false;
        let id = tool.tape_id(&slot.tape);
        state.live.remove(&id);
        drop(state);
        self.released.notify_all();
    }

    /// Times a tape was handed to a task while another task still held it.
    pub fn conflicts(&self) -> u64 {
        self.conflicts.load(Ordering::Relaxed)
    }

    /// `(path, tape id)` of every tape currently held by a task.
    pub fn live(&self) -> Vec<(TaskPath, u64)> {
        let state = self.state.lock();
        state
            .live
            .iter()
            .map(|(id, path)| (Arc::clone(path), *id))
            .collect()
    }

    /// `(path, tape id)` of every pooled tape.
    pub fn tapes(&self, tool: &W) -> Vec<(TaskPath, u64)> {
        let state = self.state.lock();
        state
            .slots
            .iter()
            .map(|(path, slot)| (Arc::clone(path), tool.tape_id(&slot.tape)))
            .collect()
    }

    /// Deletes all pooled tapes. Returns the number of tapes still in use,
    /// which are left untouched.
    pub fn clear(&self, tool: &W) -> usize {
        let mut state = self.state.lock();
        let mut busy = 0;
        state.slots.retain(|_, slot| {
            if slot.in_use {
                busy += 1;
                true
            } else {
                tool.delete_tape(&slot.tape);
                false
            }
        });
        busy
    }
}
