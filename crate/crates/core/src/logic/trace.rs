use std::fmt;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;

/// Destination for event trace lines.
pub enum TraceSink {
    /// Keeps lines in memory; read them back with [`Trace::lines`].
    Memory(Mutex<Vec<String>>),
    Writer(Mutex<Box<dyn Write + Send>>),
}

impl TraceSink {
    pub fn memory() -> Self {
        TraceSink::Memory(Mutex::new(Vec::new()))
    }

    pub fn writer(w: impl Write + Send + 'static) -> Self {
        TraceSink::Writer(Mutex::new(Box::new(w)))
    }
}

impl fmt::Debug for TraceSink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceSink::Memory(lines) => write!(f, "Memory({} lines)", lines.lock().len()),
            TraceSink::Writer(_) => f.write_str("Writer"),
        }
    }
}

/// Sequenced event trace.
///
/// Each record is one line
/// `seq=<n> thread=<t> event=<name> key=<kind:id> value=<v>`.
#[derive(Debug)]
pub struct Trace {
    seq: AtomicU64,
    sink: TraceSink,
}

impl Trace {
    pub fn new(sink: TraceSink) -> Self {
        Trace {
            seq: AtomicU64::new(0),
            sink,
        }
    }

    pub fn emit(&self, thread: &str, event: &str, key: &str, value: &str) {
        match &self.sink {
            TraceSink::Memory(lines) => {
                let mut lines = lines.lock();
                let seq = self.seq.fetch_add(1, Ordering::Relaxed);
                lines.push(format_line(seq, thread, event, key, value));
            }
            TraceSink::Writer(w) => {
                let mut w = w.lock();
                let seq = self.seq.fetch_add(1, Ordering::Relaxed);
                // tracing is best effort
                let _ = writeln!(w, "{}", format_line(seq, thread, event, key, value));
            }
        }
    }

    /// Recorded lines of a memory sink; empty for writer sinks.
    pub fn lines(&self) -> Vec<String> {
        match &self.sink {
            TraceSink::Memory(lines) => lines.lock().clone(),
            TraceSink::Writer(_) => Vec::new(),
        }
    }

    pub fn flush(&self) {
        if let TraceSink::Writer(w) = &self.sink {
            let _ = w.lock().flush();
        }
    }
}

fn format_line(seq: u64, thread: &str, event: &str, key: &str, value: &str) -> String {
    format!("seq={seq} thread={thread} event={event} key={key} value={value}")
}

/// Parsed trace line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub seq: u64,
    pub thread: String,
    pub event: String,
    pub key: String,
    pub value: String,
}

impl TraceRecord {
    pub fn parse(line: &str) -> Option<Self> {
        let mut fields = line.split(' ');
        let mut next = |name: &str| {
            fields
                .next()?
                .strip_prefix(name)?
                .strip_prefix('=')
                .map(str::to_owned)
        };
        Some(TraceRecord {
            seq: next("seq")?.parse().ok()?,
            thread: next("thread")?,
            event: next("event")?,
            key: next("key")?,
            value: next("value")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_roundtrip() {
        let trace = Trace::new(TraceSink::memory());
        trace.emit("0/1", "MutexAcquired", "critical:3", "7");
        let lines = trace.lines();
        assert_eq!(
            lines,
            vec!["seq=0 thread=0/1 event=MutexAcquired key=critical:3 value=7"]
        );
        let record = TraceRecord::parse(&lines[0]).unwrap();
        assert_eq!(record.thread, "0/1");
        assert_eq!(record.key, "critical:3");
        assert_eq!(record.value, "7");
    }
}
