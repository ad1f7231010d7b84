use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

/// Kind of mutex-type synchronization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MutexKind {
    Critical,
    Lock,
    NestedLock,
    Ordered,
    Reduction,
}

impl fmt::Display for MutexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MutexKind::Critical => "critical",
            MutexKind::Lock => "lock",
            MutexKind::NestedLock => "nested_lock",
            MutexKind::Ordered => "ordered",
            MutexKind::Reduction => "reduction",
        })
    }
}

/// Identifies one mutex for the lifetime of the program.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MutexKey {
    pub kind: MutexKind,
    pub id: u64,
}

impl MutexKey {
    pub const fn new(kind: MutexKind, id: u64) -> Self {
        MutexKey { kind, id }
    }
}

impl fmt::Display for MutexKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.id)
    }
}

/// Per-mutex counters.
///
/// One counter per key serves both directions: acquisitions count it up
/// during recording, and reverse actions count it back down during
/// evaluation, so after a complete evaluation it matches the tape start.
#[derive(Debug, Default)]
pub(crate) struct MutexTable {
    counters: Mutex<HashMap<MutexKey, Arc<AtomicU64>>>,
    inactive: Mutex<HashSet<MutexKey>>,
}

impl MutexTable {
    pub fn counter(&self, key: MutexKey) -> Arc<AtomicU64> {
        Arc::clone(self.counters.lock().entry(key).or_default())
    }

    pub fn value(&self, key: MutexKey) -> u64 {
        self.counters
            .lock()
            .get(&key)
            .map_or(0, |c| c.load(Ordering::Acquire))
    }

    pub fn register_inactive(&self, key: MutexKey) {
        self.inactive.lock().insert(key);
    }

    pub fn is_inactive(&self, key: MutexKey) -> bool {
        self.inactive.lock().contains(&key)
    }

    pub fn snapshot(&self) -> BTreeMap<MutexKey, u64> {
        self.counters
            .lock()
            .iter()
            .map(|(k, c)| (*k, c.load(Ordering::Acquire)))
            .collect()
    }

    /// Sets every counter to its snapshot value; counters missing from the
    /// snapshot did not exist at export time and return to zero.
    pub fn restore(&self, snapshot: &BTreeMap<MutexKey, u64>) {
        let mut counters = self.counters.lock();
        for (key, counter) in counters.iter() {
            counter.store(snapshot.get(key).copied().unwrap_or(0), Ordering::Release);
        }
        for (key, value) in snapshot {
            counters
                .entry(*key)
                .or_insert_with(|| Arc::new(AtomicU64::new(*value)));
        }
    }
}

/// Busy-waits until `counter == value`, yielding after `spin_budget` spins.
pub(crate) fn wait_for(counter: &AtomicU64, value: u64, spin_budget: u32) {
    let mut spins = 0u32;
    while counter.load(Ordering::Acquire) != value {
        if spins < spin_budget {
            spins += 1;
            std::hint::spin_loop();
        } else {
            std::thread::yield_now();
        }
    }
}

/// Mutexes held by the calling thread, as seen by one logic instance.
#[derive(Debug, Default)]
pub(crate) struct Held {
    /// One entry per nesting level; `None` for unrecorded acquisitions.
    levels: Vec<Option<u64>>,
    /// Counter value of the most recent recorded acquisition.
    last: Option<u64>,
}

impl Held {
    pub fn acquire(&mut self, value: Option<u64>) {
        if value.is_some() {
            self.last = value;
        }
        self.levels.push(value);
    }

    /// Returns the value the matching reverse action has to wait for, or
    /// `None` if the acquisition was not recorded. `Err` if nothing is held.
    ///
    /// All releases of a nested acquisition chain wait for the value of the
    /// most recent acquisition: in reverse they run before any of the chain's
    /// acquisitions have been undone.
    pub fn release(&mut self) -> Result<Option<u64>, ()> {
        let level = self.levels.pop().ok_or(())?;
        Ok(level.and(self.last))
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}
