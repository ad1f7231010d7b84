//! Structured fork-join runtime whose constructs report AD events.
//!
//! Regions run their body once per team member on real threads; the
//! encountering thread is member 0. Every construct emits the events the
//! [`Logic`] needs, so code written against this runtime is differentiated
//! without further annotations.

mod locks;
mod team;

use std::any::Any;
use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use parking_lot::Mutex;

pub use locks::{Lock, NestedLock};
pub use team::{Schedule, Team};

use team::{TeamAborted, TeamShared};

use crate::logic::{Logic, LogicError, MutexKey, MutexKind, SyncKind};
use crate::wrapper::AdTool;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuntimeError {
    #[error("a parallel region needs at least one thread")]
    NoThreads,
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error("team member panicked: {0}")]
    Panicked(String),
    #[error("team aborted")]
    Aborted,
    #[error("lock is not held by the calling thread")]
    NotHeld,
    #[error("ordered section outside an ordered loop iteration")]
    OrderedOutsideLoop,
    #[error("ordered section entered twice in iteration {0}")]
    OrderedTwice(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RuntimeConfig {
    /// Upper bound on the team size of any region.
    pub max_team_size: usize,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig { max_team_size: 256 }
    }
}

/// Declared reduction: a combiner plus the nested lock guarding the shared
/// stage.
pub struct ReductionDecl<V> {
    identity: V,
    combine: Box<dyn Fn(V, V) -> V + Send + Sync>,
    guard: NestedLock,
}

impl<V: Clone> ReductionDecl<V> {
    pub fn identity(&self) -> V {
        self.identity.clone()
    }

    pub fn key(&self) -> MutexKey {
        self.guard.key()
    }
}

pub struct Runtime<W: AdTool> {
    logic: Arc<Logic<W>>,
    config: RuntimeConfig,
    unnamed_critical: Lock,
    named_criticals: Mutex<HashMap<String, Lock>>,
}

impl<W: AdTool> Runtime<W> {
    pub fn new(logic: Arc<Logic<W>>, config: RuntimeConfig) -> Self {
        Runtime {
            logic,
            config,
            unnamed_critical: Lock::with_kind(MutexKind::Critical),
            named_criticals: Mutex::default(),
        }
    }

    pub fn logic(&self) -> &Arc<Logic<W>> {
        &self.logic
    }

    pub fn config(&self) -> RuntimeConfig {
        self.config
    }

    /// Runs `body` on a team of `min(num_threads, max_team_size)` members
    /// and blocks until all of them are done.
    ///
    /// A panic in any member aborts the team; the region is then discarded
    /// and the panic message returned.
    pub fn parallel<F>(&self, num_threads: usize, body: F) -> Result<(), RuntimeError>
    where
        F: Fn(&Team<'_, W>) + Sync,
    {
        if num_threads == 0 {
            return Err(RuntimeError::NoThreads);
        }
        let actual = num_threads.min(self.config.max_team_size.max(1));
        let pd = self.logic.on_parallel_begin(num_threads)?;
        let shared = TeamShared::new(actual);

        let member = |index: usize| -> Result<(), RuntimeError> {
            let td = match self.logic.on_implicit_task_begin(actual, index, &pd) {
                Ok(td) => td,
                Err(e) => {
                    shared.barrier.poison();
                    return Err(e.into());
                }
            };
            let team = Team::new(index, &shared, self);
            let outcome = catch_unwind(AssertUnwindSafe(|| {
                body(&team);
                team.sync(SyncKind::Implicit);
            }));
            if outcome.is_err() {
                shared.barrier.poison();
            }
            let ended = self.logic.on_implicit_task_end(td);
            outcome.map_err(panic_error)?;
            Ok(ended?)
        };
        let member = &member;

        let results: Vec<Result<(), RuntimeError>> = std::thread::scope(|s| {
            let handles: Vec<_> = (1..actual).map(|i| s.spawn(move || member(i))).collect();
            let mut results = vec![member(0)];
            results.extend(
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|p| Err(panic_error(p)))),
            );
            results
        });

        let mut failure = None;
        for result in results {
            if let Err(e) = result {
                if failure.is_none() || failure == Some(RuntimeError::Aborted) {
                    failure = Some(e);
                }
            }
        }
        if let Some(e) = failure {
            return Err(e);
        }
        self.logic.on_parallel_end(pd);
        Ok(())
    }

    fn critical_lock(&self, name: Option<&str>) -> Lock {
        match name {
            None => self.unnamed_critical.clone(),
            Some(name) => self
                .named_criticals
                .lock()
                .entry(name.to_owned())
                .or_insert_with(|| Lock::with_kind(MutexKind::Critical))
                .clone(),
        }
    }

    /// Runs `body` under the critical section `name`; all unnamed sections
    /// share one mutex.
    pub fn critical<R>(&self, name: Option<&str>, body: impl FnOnce() -> R) -> R {
        let lock = self.critical_lock(name);
        self.lock_set(&lock);
        let _release = Release {
            runtime: self,
            lock: &lock,
        };
        body()
    }

    /// Mutex key of a critical section name (`None` for unnamed).
    pub fn critical_key(&self, name: Option<&str>) -> MutexKey {
        self.critical_lock(name).key()
    }

    pub fn lock_init(&self) -> Lock {
        Lock::with_kind(MutexKind::Lock)
    }

    pub fn lock_set(&self, lock: &Lock) {
        lock.raw.lock(false);
        self.logic.on_mutex_acquired(lock.key());
    }

    pub fn lock_unset(&self, lock: &Lock) -> Result<(), RuntimeError> {
        lock.raw.unlock()?;
        self.logic.on_mutex_released(lock.key());
        Ok(())
    }

    pub fn nested_lock_init(&self) -> NestedLock {
        NestedLock::with_kind(MutexKind::NestedLock)
    }

    pub fn nested_lock_set(&self, lock: &NestedLock) {
        lock.raw.lock(true);
        self.logic.on_mutex_acquired(lock.key());
    }

    pub fn nested_lock_unset(&self, lock: &NestedLock) -> Result<(), RuntimeError> {
        lock.raw.unlock()?;
        self.logic.on_mutex_released(lock.key());
        Ok(())
    }

    pub fn get_lock_identifier(&self, lock: &Lock) -> MutexKey {
        lock.key()
    }

    /// Declares a reduction with its own guard.
    pub fn declare_reduction<V>(
        &self,
        identity: V,
        combine: impl Fn(V, V) -> V + Send + Sync + 'static,
    ) -> ReductionDecl<V> {
        ReductionDecl {
            identity,
            combine: Box::new(combine),
            guard: NestedLock::with_kind(MutexKind::Reduction),
        }
    }
}

struct Release<'a, W: AdTool> {
    runtime: &'a Runtime<W>,
    lock: &'a Lock,
}

impl<W: AdTool> Drop for Release<'_, W> {
    fn drop(&mut self) {
        // held since lock_set in the same frame
        let _ = self.runtime.lock_unset(self.lock);
    }
}

fn panic_error(payload: Box<dyn Any + Send>) -> RuntimeError {
    if payload.is::<TeamAborted>() {
        return RuntimeError::Aborted;
    }
    let message = payload
        .downcast_ref::<&str>()
        .map(|s| (*s).to_owned())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "non-string panic payload".to_owned());
    RuntimeError::Panicked(message)
}
