use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, MutexGuard};

use super::{AccessMode, ActiveScalar, Adjoints, Engine, Identifier, Position, TapeError, TapeId};
use crate::real::Real;

/// Callable embedded in a tape and invoked when reverse evaluation reaches
/// its position. Receives the adjoint vector and the access mode in effect.
pub type ExternalFunction<T> = Arc<dyn Fn(&Adjoints<'_, T>, AccessMode) + Send + Sync>;

enum Entry<T: Real> {
    Statement {
        lhs: Identifier,
        arity: u32,
        offset: usize,
    },
    External(ExternalFunction<T>),
    Mode {
        mode: AccessMode,
        previous: AccessMode,
    },
}

impl<T: Real> Clone for Entry<T> {
    fn clone(&self) -> Self {
        match self {
            Entry::Statement { lhs, arity, offset } => Entry::Statement {
                lhs: *lhs,
                arity: *arity,
                offset: *offset,
            },
            Entry::External(f) => Entry::External(Arc::clone(f)),
            Entry::Mode { mode, previous } => Entry::Mode {
                mode: *mode,
                previous: *previous,
            },
        }
    }
}

/// Owned copy of one tape entry, for inspection.
#[derive(Clone, Debug, PartialEq)]
pub enum EntryView<T> {
    Statement {
        lhs: Identifier,
        partials: Vec<T>,
        args: Vec<Identifier>,
    },
    External,
    AccessMode(AccessMode),
}

struct TapeData<T: Real> {
    entries: Vec<Entry<T>>,
    partials: Vec<T>,
    args: Vec<Identifier>,
    /// Entry indices of access mode markers, ascending.
    markers: Vec<usize>,
    mode: AccessMode,
}

impl<T: Real> TapeData<T> {
    fn new() -> Self {
        TapeData {
            entries: Vec::new(),
            partials: Vec::new(),
            args: Vec::new(),
            markers: Vec::new(),
            mode: AccessMode::default(),
        }
    }

    /// Offset into the partial/argument streams where entry `index` starts.
    fn stream_offset_at(&self, index: usize) -> usize {
        self.entries[index..]
            .iter()
            .find_map(|e| match e {
                Entry::Statement { offset, .. } => Some(*offset),
                _ => None,
            })
            .unwrap_or(self.partials.len())
    }

    fn marker_mode(&self, index: usize) -> AccessMode {
        match self.entries[index] {
            Entry::Mode { mode, .. } => mode,
            _ => unreachable!("marker index points at a non-marker entry"),
        }
    }

    fn rebuild_markers(&mut self) {
        self.markers = self
            .entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| matches!(e, Entry::Mode { .. }).then_some(i))
            .collect();
    }
}

struct TapeShared<T: Real> {
    id: TapeId,
    engine: Arc<Engine<T>>,
    active: AtomicBool,
    deleted: AtomicBool,
    data: Mutex<TapeData<T>>,
}

/// Handle to a tape. Cloning yields another handle to the same tape.
pub struct Tape<T: Real> {
    shared: Arc<TapeShared<T>>,
}

impl<T: Real> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Tape {
            shared: Arc::clone(&self.shared),
        }
    }
}

impl<T: Real> PartialEq for Tape<T> {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.shared, &other.shared)
    }
}

impl<T: Real> Eq for Tape<T> {}

impl<T: Real> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("id", &self.shared.id)
            .field("active", &self.is_active())
            .field("len", &self.len())
            .finish()
    }
}

impl<T: Real> Tape<T> {
    pub(crate) fn new(id: TapeId, engine: Arc<Engine<T>>) -> Self {
        Tape {
            shared: Arc::new(TapeShared {
                id,
                engine,
                active: AtomicBool::new(false),
                deleted: AtomicBool::new(false),
                data: Mutex::new(TapeData::new()),
            }),
        }
    }

    pub fn id(&self) -> TapeId {
        self.shared.id
    }

    pub fn engine(&self) -> &Arc<Engine<T>> {
        &self.shared.engine
    }

    #[inline]
    pub fn is_active(&self) -> bool {
        self.shared.active.load(Ordering::Relaxed)
    }

    pub fn set_active(&self, active: bool) {
        self.shared.active.store(active, Ordering::Relaxed);
    }

    /// Number of entries.
    pub fn len(&self) -> usize {
        self.shared.data.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn position(&self) -> Position {
        Position {
            tape: self.shared.id,
            entry: self.len(),
        }
    }

    /// Position of the first entry.
    pub fn zero_position(&self) -> Position {
        Position {
            tape: self.shared.id,
            entry: 0,
        }
    }

    /// Mode set by the most recent marker (or the initial default).
    pub fn access_mode(&self) -> AccessMode {
        self.shared.data.lock().mode
    }

    /// Marks the tape as deleted; the storage itself is freed once the last
    /// handle is dropped. Returns `false` if it was already deleted.
    pub fn delete(&self) -> bool {
        let first = !self.shared.deleted.swap(true, Ordering::Relaxed);
        if first {
            self.shared.engine.tape_deleted();
        }
        first
    }

    pub fn is_deleted(&self) -> bool {
        self.shared.deleted.load(Ordering::Relaxed)
    }

    /// Installs this tape as the calling thread's tape until the guard drops.
    pub fn install(&self) -> SlotGuard<T> {
        SlotGuard {
            previous: Some(super::set_current_tape(Some(self.clone()))),
        }
    }

    /// Creates an active input with a fresh identifier (no entry is recorded).
    pub fn register_input(&self, value: T) -> ActiveScalar<T> {
        self.shared.engine.register_input(value)
    }

    fn check(&self, position: Position) -> Result<(), TapeError> {
        if position.tape != self.shared.id {
            return Err(TapeError::ForeignPosition {
                position,
                tape: self.shared.id,
            });
        }
        Ok(())
    }

    fn check_len(position: Position, len: usize) -> Result<(), TapeError> {
        if position.entry > len {
            return Err(TapeError::OutOfRange { position, len });
        }
        Ok(())
    }

    /// Appends `lhs = phi(args)` with the given local partials.
    ///
    /// Ignored while the tape is inactive.
    pub fn record_statement(
        &self,
        lhs: Identifier,
        partials: &[T],
        args: &[Identifier],
    ) -> Result<(), TapeError> {
        if partials.len() != args.len() {
            return Err(TapeError::ArityMismatch {
                partials: partials.len(),
                args: args.len(),
            });
        }
        if !self.is_active() {
            return Ok(());
        }
        if partials.iter().any(|p| !p.is_finite()) {
            self.shared.engine.note_rejected();
            return Err(TapeError::NonFinitePartial);
        }
        self.push_statement(lhs, partials.iter().copied(), args.iter().copied());
        Ok(())
    }

    /// Unchecked append used by the overloaded operators.
    pub(crate) fn push_statement(
        &self,
        lhs: Identifier,
        partials: impl IntoIterator<Item = T>,
        args: impl IntoIterator<Item = Identifier>,
    ) {
        let mut data = self.shared.data.lock();
        let offset = data.partials.len();
        data.partials.extend(partials);
        data.args.extend(args);
        let arity = (data.partials.len() - offset) as u32;
        debug_assert_eq!(data.args.len(), data.partials.len());
        data.entries.push(Entry::Statement { lhs, arity, offset });
    }

    /// Embeds `f` at the current position. Appended regardless of activity.
    pub fn push_external_function(
        &self,
        f: impl Fn(&Adjoints<'_, T>, AccessMode) + Send + Sync + 'static,
    ) {
        self.push_external(Arc::new(f));
    }

    pub fn push_external(&self, f: ExternalFunction<T>) {
        self.shared.data.lock().entries.push(Entry::External(f));
    }

    /// Appends an access mode marker; the recording that follows is
    /// evaluated under `mode`.
    pub fn set_access_mode(&self, mode: AccessMode) {
        let mut data = self.shared.data.lock();
        let previous = data.mode;
        let index = data.entries.len();
        data.entries.push(Entry::Mode { mode, previous });
        data.markers.push(index);
        data.mode = mode;
    }

    /// Evaluates the entries between `start` (later) and `end` (earlier) in
    /// reverse order.
    ///
    /// Segments before the first marker inside the range use `default_mode`;
    /// afterwards each marker's mode applies up to the next marker.
    pub fn evaluate(
        &self,
        start: Position,
        end: Position,
        default_mode: AccessMode,
    ) -> Result<(), TapeError> {
        self.check(start)?;
        self.check(end)?;
        if start.entry < end.entry {
            return Err(TapeError::ReversedRange { start, end });
        }
        let engine = &self.shared.engine;
        engine.with_adjoints(|adj| {
            let data = self.shared.data.lock();
            Self::check_len(start, data.entries.len())?;
            let (low, high) = (end.entry, start.entry);
            let first = data.markers.partition_point(|&m| m < low);
            let last = data.markers.partition_point(|&m| m < high);
            let markers = &data.markers[first..last];
            let mut remaining = markers.len();
            let mut mode = markers
                .last()
                .map_or(default_mode, |&m| data.marker_mode(m));

            let (mut atomic, mut classical, mut external) = (0u64, 0u64, 0u64);
            for entry in data.entries[low..high].iter().rev() {
                match entry {
                    Entry::Statement { lhs, arity, offset } => {
                        let range = *offset..*offset + *arity as usize;
                        reverse_statement(
                            adj,
                            *lhs,
                            &data.partials[range.clone()],
                            &data.args[range],
                            mode,
                        );
                        match mode {
                            AccessMode::Atomic => atomic += 1,
                            AccessMode::Classical => classical += 1,
                        }
                    }
                    Entry::External(f) => {
                        external += 1;
                        f(adj, mode);
                    }
                    Entry::Mode { .. } => {
                        remaining -= 1;
                        mode = if remaining > 0 {
                            data.marker_mode(markers[remaining - 1])
                        } else {
                            default_mode
                        };
                    }
                }
            }
            engine.note_evaluated(atomic, classical, external);
            Ok(())
        })
    }

    /// Evaluates the whole tape from its end to its start.
    pub fn evaluate_all(&self, default_mode: AccessMode) -> Result<(), TapeError> {
        self.evaluate(self.position(), self.zero_position(), default_mode)
    }

    /// Discards every entry after `to`. With `clear_adjoints`, the adjoints
    /// of the discarded statements' left-hand sides are zeroed.
    pub fn reset_to(&self, to: Position, clear_adjoints: bool) -> Result<(), TapeError> {
        self.check(to)?;
        let mut data = self.shared.data.lock();
        Self::check_len(to, data.entries.len())?;
        if to.entry == data.entries.len() {
            return Ok(());
        }
        if clear_adjoints {
            self.shared.engine.with_adjoints(|adj| {
                for entry in &data.entries[to.entry..] {
                    if let Entry::Statement { lhs, .. } = entry {
                        adj.set(*lhs, T::zero());
                    }
                }
            });
        }
        // the oldest discarded marker remembers the mode in effect at `to`
        let restored = data.entries[to.entry..].iter().find_map(|e| match e {
            Entry::Mode { previous, .. } => Some(*previous),
            _ => None,
        });
        if let Some(mode) = restored {
            data.mode = mode;
        }
        let offset = data.stream_offset_at(to.entry);
        data.entries.truncate(to.entry);
        data.partials.truncate(offset);
        data.args.truncate(offset);
        let keep = data.markers.partition_point(|&m| m < to.entry);
        data.markers.truncate(keep);
        Ok(())
    }

    /// Discards all entries. With `clear_adjoints` the whole adjoint vector
    /// is zeroed, as after a complete evaluate-then-reset cycle.
    pub fn reset(&self, clear_adjoints: bool) {
        {
            let mut data = self.shared.data.lock();
            *data = TapeData::new();
        }
        if clear_adjoints {
            self.shared.engine.clear_adjoints();
        }
    }

    /// Removes the entries in `start..end`.
    pub fn erase(&self, start: Position, end: Position) -> Result<(), TapeError> {
        self.check(start)?;
        self.check(end)?;
        let mut data = self.shared.data.lock();
        Self::check_len(end, data.entries.len())?;
        if start.entry > end.entry {
            return Err(TapeError::InvalidRange {
                start: start.entry,
                end: end.entry,
            });
        }
        if start.entry == end.entry {
            return Ok(());
        }
        let from = data.stream_offset_at(start.entry);
        let to = data.stream_offset_at(end.entry);
        let removed = to - from;
        data.entries.drain(start.entry..end.entry);
        data.partials.drain(from..to);
        data.args.drain(from..to);
        for entry in &mut data.entries[start.entry..] {
            if let Entry::Statement { offset, .. } = entry {
                *offset -= removed;
            }
        }
        data.rebuild_markers();
        Ok(())
    }

    /// Copies the entries `start..end` of `src` to the end of this tape.
    /// Statement identifiers are preserved.
    pub fn append_from(
        &self,
        src: &Tape<T>,
        start: Position,
        end: Position,
    ) -> Result<(), TapeError> {
        if self == src {
            return Err(TapeError::SelfAppend);
        }
        src.check(start)?;
        src.check(end)?;
        if start.entry > end.entry {
            return Err(TapeError::InvalidRange {
                start: start.entry,
                end: end.entry,
            });
        }
        let (mut dst_data, src_data) = lock_pair(self, src);
        Self::check_len(end, src_data.entries.len())?;
        for entry in &src_data.entries[start.entry..end.entry] {
            match entry {
                Entry::Statement { lhs, arity, offset } => {
                    let new_offset = dst_data.partials.len();
                    let range = *offset..*offset + *arity as usize;
                    dst_data
                        .partials
                        .extend_from_slice(&src_data.partials[range.clone()]);
                    dst_data.args.extend_from_slice(&src_data.args[range]);
                    dst_data.entries.push(Entry::Statement {
                        lhs: *lhs,
                        arity: *arity,
                        offset: new_offset,
                    });
                }
                Entry::Mode { mode, previous } => {
                    let index = dst_data.entries.len();
                    dst_data.entries.push(Entry::Mode {
                        mode: *mode,
                        previous: *previous,
                    });
                    dst_data.markers.push(index);
                    dst_data.mode = *mode;
                }
                other => dst_data.entries.push(other.clone()),
            }
        }
        Ok(())
    }

    /// Owned copies of all entries.
    pub fn entries(&self) -> Vec<EntryView<T>> {
        let data = self.shared.data.lock();
        data.entries
            .iter()
            .map(|e| match e {
                Entry::Statement { lhs, arity, offset } => {
                    let range = *offset..*offset + *arity as usize;
                    EntryView::Statement {
                        lhs: *lhs,
                        partials: data.partials[range.clone()].to_vec(),
                        args: data.args[range].to_vec(),
                    }
                }
                Entry::External(_) => EntryView::External,
                Entry::Mode { mode, .. } => EntryView::AccessMode(*mode),
            })
            .collect()
    }

    /// Number of statement entries.
    pub fn statement_count(&self) -> usize {
        let data = self.shared.data.lock();
        data.entries
            .iter()
            .filter(|e| matches!(e, Entry::Statement { .. }))
            .count()
    }
}

fn lock_pair<'a, T: Real>(
    dst: &'a Tape<T>,
    src: &'a Tape<T>,
) -> (MutexGuard<'a, TapeData<T>>, MutexGuard<'a, TapeData<T>>) {
    // fixed lock order by tape id
    if dst.id() < src.id() {
        let d = dst.shared.data.lock();
        let s = src.shared.data.lock();
        (d, s)
    } else {
        let s = src.shared.data.lock();
        let d = dst.shared.data.lock();
        (d, s)
    }
}

#[inline]
fn reverse_statement<T: Real>(
    adj: &Adjoints<'_, T>,
    lhs: Identifier,
    partials: &[T],
    args: &[Identifier],
    mode: AccessMode,
) {
    let seed = adj.take(lhs, mode);
    if seed == T::zero() {
        return;
    }
    for (&partial, &arg) in partials.iter().zip(args) {
        adj.add(arg, partial * seed, mode);
    }
}

/// Restores the previously installed tape of the calling thread on drop.
pub struct SlotGuard<T: Real> {
    previous: Option<Option<Tape<T>>>,
}

impl<T: Real> Drop for SlotGuard<T> {
    fn drop(&mut self) {
        if let Some(previous) = self.previous.take() {
            super::set_current_tape(previous);
        }
    }
}
