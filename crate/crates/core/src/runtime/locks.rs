use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::ThreadId;

use parking_lot::{Condvar, Mutex};

use super::RuntimeError;
use crate::logic::{MutexKey, MutexKind};

static NEXT_LOCK_ID: AtomicU64 = AtomicU64::new(1);

/// Fresh mutex id, unique for the process lifetime.
pub(crate) fn next_lock_id() -> u64 {
    NEXT_LOCK_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Default)]
struct Owner {
    thread: Option<ThreadId>,
    depth: usize,
}

/// Mutual exclusion with an owner, optionally reentrant.
#[derive(Debug, Default)]
pub(crate) struct RawLock {
    owner: Mutex<Owner>,
    freed: Condvar,
}

impl RawLock {
    pub fn lock(&self, reentrant: bool) {
        let me = std::thread::current().id();
        let mut owner = self.owner.lock();
        loop {
            match owner.thread {
                None => {
                    owner.thread = Some(me);
                    owner.depth = 1;
                    return;
                }
                Some(t) if t == me && reentrant => {
                    owner.depth += 1;
                    return;
                }
                Some(_) => self.freed.wait(&mut owner),
            }
        }
    }

    pub fn unlock(&self) -> Result<(), RuntimeError> {
        let me = std::thread::current().id();
        let mut owner = self.owner.lock();
        if owner.thread != Some(me) {
            return Err(RuntimeError::NotHeld);
        }
        owner.depth -= 1;
        if owner.depth == 0 {
            owner.thread = None;
            drop(owner);
            self.freed.notify_one();
        }
        Ok(())
    }
}

/// Simple lock. Setting it twice from the same thread deadlocks.
#[derive(Clone, Debug)]
pub struct Lock {
    pub(crate) raw: Arc<RawLock>,
    key: MutexKey,
}

impl Lock {
    pub(crate) fn with_kind(kind: MutexKind) -> Self {
        Lock {
            raw: Arc::default(),
            key: MutexKey::new(kind, next_lock_id()),
        }
    }

    pub fn key(&self) -> MutexKey {
        self.key
    }
}

/// Lock that the owning thread may set repeatedly.
#[derive(Clone, Debug)]
pub struct NestedLock {
    pub(crate) raw: Arc<RawLock>,
    key: MutexKey,
}

impl NestedLock {
    pub(crate) fn with_kind(kind: MutexKind) -> Self {
        NestedLock {
            raw: Arc::default(),
            key: MutexKey::new(kind, next_lock_id()),
        }
    }

    pub fn key(&self) -> MutexKey {
        self.key
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unlock_of_unheld_lock_fails() {
        let lock = RawLock::default();
        assert_eq!(lock.unlock(), Err(RuntimeError::NotHeld));
        lock.lock(false);
        std::thread::scope(|s| {
            s.spawn(|| assert_eq!(lock.unlock(), Err(RuntimeError::NotHeld)));
        });
        lock.unlock().unwrap();
    }

    #[test]
    fn reentrant_depth() {
        let lock = RawLock::default();
        lock.lock(true);
        lock.lock(true);
        lock.unlock().unwrap();
        lock.unlock().unwrap();
        assert_eq!(lock.unlock(), Err(RuntimeError::NotHeld));
    }

    #[test]
    fn lock_ids_are_distinct() {
        let mut ids: Vec<u64> = (0..1000)
            .map(|_| Lock::with_kind(MutexKind::Lock).key().id)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 1000);
    }
}
