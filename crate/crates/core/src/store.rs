//! Append-only event persistence: in memory, or one JSON-lines file.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::ProtocolEvent;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub session_id: String,
    /// 1-based, gapless per session.
    pub sequence_number: u64,
    pub kind: String,
    pub payload: serde_json::Value,
    pub at: DateTime<Utc>,
}

impl EventRecord {
    pub fn from_event(session_id: &str, sequence_number: u64, event: &ProtocolEvent) -> Result<Self, StoreError> {
        Ok(EventRecord {
            session_id: session_id.to_owned(),
            sequence_number,
            kind: event.kind().to_owned(),
            payload: serde_json::to_value(event).map_err(|e| StoreError::Corrupt(e.to_string()))?,
            at: event.at(),
        })
    }

    pub fn event(&self) -> Result<ProtocolEvent, StoreError> {
        serde_json::from_value(self.payload.clone()).map_err(|e| {
            StoreError::Corrupt(format!(
                "{} #{}: {e}",
                self.session_id, self.sequence_number
            ))
        })
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session {session_id}: expected sequence number {expected}, got {got}")]
    SequenceConflict {
        session_id: String,
        expected: u64,
        got: u64,
    },
    #[error("storage failure: {0}")]
    StorageFailure(#[from] std::io::Error),
    #[error("corrupt event log: {0}")]
    Corrupt(String),
}

pub trait EventStore: Send + Sync {
    /// Appends a batch atomically with respect to sequence checks: either
    /// every record is accepted or none is.
    fn append(&self, records: &[EventRecord]) -> Result<(), StoreError>;

    fn load(&self, session_id: &str) -> Result<Vec<EventRecord>, StoreError>;

    fn session_ids(&self) -> Result<Vec<String>, StoreError>;

    fn last_sequence(&self, session_id: &str) -> Result<u64, StoreError> {
        Ok(self.load(session_id)?.last().map_or(0, |r| r.sequence_number))
    }
}

/// Checks `records` continue each session's sequence and returns the new
/// last sequence numbers.
fn check_batch(last: &BTreeMap<String, u64>, records: &[EventRecord]) -> Result<BTreeMap<String, u64>, StoreError> {
    let mut next = BTreeMap::new();
    for r in records {
        let prev = next
            .get(&r.session_id)
            .or_else(|| last.get(&r.session_id))
            .copied()
            .unwrap_or(0);
        if r.sequence_number != prev + 1 {
            return Err(StoreError::SequenceConflict {
                session_id: r.session_id.clone(),
                expected: prev + 1,
                got: r.sequence_number,
            });
        }
        next.insert(r.session_id.clone(), r.sequence_number);
    }
    Ok(next)
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    sessions: Mutex<BTreeMap<String, Vec<EventRecord>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl EventStore for MemoryStore {
    fn append(&self, records: &[EventRecord]) -> Result<(), StoreError> {
        let mut sessions = self.sessions.lock().expect("store lock poisoned");
        let last = sessions
            .iter()
            .map(|(k, v)| (k.clone(), v.last().map_or(0, |r| r.sequence_number)))
            .collect();
        check_batch(&last, records)?;
        for r in records {
            sessions.entry(r.session_id.clone()).or_default().push(r.clone());
        }
        Ok(())
    }

    fn load(&self, session_id: &str) -> Result<Vec<EventRecord>, StoreError> {
        let sessions = self.sessions.lock().expect("store lock poisoned");
        Ok(sessions.get(session_id).cloned().unwrap_or_default())
    }

    fn session_ids(&self) -> Result<Vec<String>, StoreError> {
        Ok(self.sessions.lock().expect("store lock poisoned").keys().cloned().collect())
    }
}

/// All sessions in one append-only JSON-lines file, one record per line.
/// Each batch is flushed and synced before `append` returns.
#[derive(Debug)]
pub struct FileStore {
    path: PathBuf,
    inner: Mutex<FileInner>,
}

#[derive(Debug)]
struct FileInner {
    file: File,
    sessions: BTreeMap<String, Vec<EventRecord>>,
}

impl FileStore {
    /// Opens or creates the log. A torn final line (no trailing newline,
    /// unparseable) from an interrupted write is cut off; any other bad line
    /// is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let mut sessions: BTreeMap<String, Vec<EventRecord>> = BTreeMap::new();
        let mut good_len = 0u64;
        let mut reader = BufReader::new(&file);
        let mut line = String::new();
        let mut line_no = 0;
        loop {
            line.clear();
            let n = reader.read_line(&mut line)?;
            if n == 0 {
                break;
            }
            line_no += 1;
            let complete = line.ends_with('\n');
            if line.trim().is_empty() {
                good_len += n as u64;
                continue;
            }
            match serde_json::from_str::<EventRecord>(line.trim_end()) {
                Ok(record) => {
                    let last = sessions
                        .get(&record.session_id)
                        .and_then(|v| v.last())
                        .map_or(0, |r| r.sequence_number);
                    if record.sequence_number != last + 1 {
                        return Err(StoreError::Corrupt(format!(
                            "line {line_no}: sequence {} after {last}",
                            record.sequence_number
                        )));
                    }
                    sessions.entry(record.session_id.clone()).or_default().push(record);
                    good_len += n as u64;
                }
                Err(_) if !complete => break,
                Err(e) => return Err(StoreError::Corrupt(format!("line {line_no}: {e}"))),
            }
        }
        drop(reader);
        if file.metadata()?.len() != good_len {
            file.set_len(good_len)?;
            file.seek(SeekFrom::End(0))?;
        }
        Ok(FileStore {
            path,
            inner: Mutex::new(FileInner { file, sessions }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl EventStore for FileStore {
    fn append(&self, records: &[EventRecord]) -> Result<(), StoreError> {
        let mut inner = self.inner.lock().expect("store lock poisoned");
        let last = inner
            .sessions
            .iter()
            .map(|(k, v)| (k.clone(), v.last().map_or(0, |r| r.sequence_number)))
            .collect();
        check_batch(&last, records)?;
        let mut buf = String::new();
        for r in records {
            buf.push_str(&serde_json::to_string(r).map_err(|e| StoreError::Corrupt(e.to_string()))?);
            buf.push('\n');
        }
        inner.file.write_all(buf.as_bytes())?;
        inner.file.flush()?;
        inner.file.sync_data()?;
        for r in records {
            inner.sessions.entry(r.session_id.clone()).or_default().push(r.clone());
        }
        Ok(())
    }

    fn load(&self, session_id: &str) -> Result<Vec<EventRecord>, StoreError> {
        let inner = self.inner.lock().expect("store lock poisoned");
        Ok(inner.sessions.get(session_id).cloned().unwrap_or_default())
    }

    fn session_ids(&self) -> Result<Vec<String>, StoreError> {
        Ok(self.inner.lock().expect("store lock poisoned").sessions.keys().cloned().collect())
    }
}

/// Records as JSON lines, one event per line.
pub fn to_json_lines(records: &[EventRecord]) -> Result<String, StoreError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| StoreError::Corrupt(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}
