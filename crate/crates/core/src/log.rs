//! JSONL session log and replay.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::{SessionEvent, SessionState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLogRecord {
    pub seq: u64,
    pub at_ms: u64,
    pub event: SessionEvent,
}

impl SessionLogRecord {
    /// One JSON object followed by LF.
    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("records always serialize");
        line.push('\n');
        line
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("log corrupt at line {line}: {reason}")]
    LogCorrupt { line: usize, reason: String },
    #[error("cannot read log: {0}")]
    Io(String),
}

impl ReplayError {
    pub fn code(&self) -> &'static str {
        match self {
            ReplayError::LogCorrupt { .. } => "log_corrupt",
            ReplayError::Io(_) => "log_unreadable",
        }
    }
}

/// Destination for session records; a record must be durable once `append` returns.
pub trait LogSink: Send {
    fn append(&mut self, record: &SessionLogRecord) -> io::Result<()>;
}

/// Appends one line per record to a file, flushing each.
#[derive(Debug)]
pub struct JsonlLog {
    file: File,
}

impl JsonlLog {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(JsonlLog { file })
    }
}

impl LogSink for JsonlLog {
    fn append(&mut self, record: &SessionLogRecord) -> io::Result<()> {
        self.file.write_all(record.to_line().as_bytes())?;
        self.file.flush()
    }
}

/// In-memory sink whose contents stay readable through clones.
#[derive(Debug, Clone, Default)]
pub struct MemoryLog {
    records: Arc<Mutex<Vec<SessionLogRecord>>>,
}

impl MemoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> Vec<SessionLogRecord> {
        self.records.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

impl LogSink for MemoryLog {
    fn append(&mut self, record: &SessionLogRecord) -> io::Result<()> {
        self.records.lock().unwrap_or_else(|p| p.into_inner()).push(record.clone());
        Ok(())
    }
}

pub fn parse_log(text: &str) -> Result<Vec<SessionLogRecord>, ReplayError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ReplayError::LogCorrupt { line: i + 1, reason: e.to_string() })
        })
        .collect()
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<SessionLogRecord>, ReplayError> {
    let text = std::fs::read_to_string(path).map_err(|e| ReplayError::Io(e.to_string()))?;
    parse_log(&text)
}

/// Folds `records` into a state; sequence numbers must run 1, 2, 3, ...
pub fn replay(records: &[SessionLogRecord]) -> Result<SessionState, ReplayError> {
    let mut state = SessionState::default();
    for (i, r) in records.iter().enumerate() {
        let line = i + 1;
        if r.seq != line as u64 {
            return Err(ReplayError::LogCorrupt { line, reason: format!("expected seq {line}, found {}", r.seq) });
        }
        state.apply(&r.event).map_err(|reason| ReplayError::LogCorrupt { line, reason })?;
    }
    Ok(state)
}

pub fn replay_file(path: impl AsRef<Path>) -> Result<SessionState, ReplayError> {
    replay(&read_log(path)?)
}
