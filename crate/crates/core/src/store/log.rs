//! Append-only JSON-lines event log.
//!
//! A line counts only once its `\n` terminator is on disk, so a torn final
//! write shows up as an unterminated or unparsable last line.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::StoreError;
use crate::model::TurkEvent;

#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    len: u64,
}

impl EventLog {
    /// Opens `path` for appending, creating it if needed.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(StoreError::io(&path))?;
        let len = file.metadata().map_err(StoreError::io(&path))?.len();
        Ok(EventLog { path, file, len })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Bytes written so far, i.e. the offset of the next line.
    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Writes one event and syncs it to disk before returning.
    pub fn append(&mut self, event: &TurkEvent) -> Result<(), StoreError> {
        self.append_all(std::slice::from_ref(event))
    }

    /// Writes a batch with a single sync at the end.
    pub fn append_all(&mut self, events: &[TurkEvent]) -> Result<(), StoreError> {
        let mut buf = Vec::new();
        for e in events {
            serde_json::to_writer(&mut buf, e).expect("events always serialize");
            buf.push(b'\n');
        }
        let io = StoreError::io(&self.path);
        self.file
            .write_all(&buf)
            .and_then(|_| self.file.flush())
            .and_then(|_| self.file.sync_data())
            .map_err(io)?;
        self.len += buf.len() as u64;
        Ok(())
    }
}

/// Result of a lenient read: every event before the first bad line, plus
/// the error for that line if there was one.
#[derive(Debug)]
pub struct LogRead {
    pub events: Vec<TurkEvent>,
    /// Byte length of the valid prefix.
    pub valid_len: u64,
    pub corruption: Option<StoreError>,
}

/// Parses log bytes, stopping at the first unterminated or malformed line.
pub fn parse_log(bytes: &[u8]) -> LogRead {
    let mut events = Vec::new();
    let mut offset = 0usize;
    while offset < bytes.len() {
        let rest = &bytes[offset..];
        let Some(end) = rest.iter().position(|&b| b == b'\n') else {
            return LogRead {
                events,
                valid_len: offset as u64,
                corruption: Some(StoreError::CorruptLog {
                    offset: offset as u64,
                    reason: "unterminated final line".into(),
                }),
            };
        };
        let line = &rest[..end];
        match serde_json::from_slice::<TurkEvent>(line) {
            Ok(e) => events.push(e),
            Err(err) => {
                return LogRead {
                    events,
                    valid_len: offset as u64,
                    corruption: Some(StoreError::CorruptLog {
                        offset: offset as u64,
                        reason: err.to_string(),
                    }),
                }
            }
        }
        offset += end + 1;
    }
    LogRead {
        events,
        valid_len: offset as u64,
        corruption: None,
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, StoreError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(StoreError::io(path))?;
    Ok(bytes)
}

/// Reads every event; any bad line is an error naming its byte offset.
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<TurkEvent>, StoreError> {
    let read = parse_log(&read_bytes(path.as_ref())?);
    match read.corruption {
        Some(e) => Err(e),
        None => Ok(read.events),
    }
}

/// Reads the valid prefix of a log and reports where it ends.
pub fn read_log_prefix(path: impl AsRef<Path>) -> Result<LogRead, StoreError> {
    Ok(parse_log(&read_bytes(path.as_ref())?))
}

/// Truncates a log to its valid prefix. Returns the dropped tail's offset if
/// anything was cut.
pub fn repair_log(path: impl AsRef<Path>) -> Result<Option<u64>, StoreError> {
    let path = path.as_ref();
    let read = read_log_prefix(path)?;
    if read.corruption.is_none() {
        return Ok(None);
    }
    let file = OpenOptions::new()
        .write(true)
        .open(path)
        .map_err(StoreError::io(path))?;
    file.set_len(read.valid_len)
        .and_then(|_| file.sync_data())
        .map_err(StoreError::io(path))?;
    Ok(Some(read.valid_len))
}
