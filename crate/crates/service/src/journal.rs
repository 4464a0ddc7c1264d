//! Append-only JSON-lines journal. Each line is one [`JournalRecord`]
//! written with a single `write` call, so a crash can at worst leave a torn
//! final line, which is dropped (and truncated away) on the next open.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};
use crate::jobs::JobJournalEvent;
use crate::session::SessionEvent;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JournalEntry {
    Session { session_id: String, event: SessionEvent },
    Job { job_id: String, event: JobJournalEvent },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub seq: u64,
    pub entry: JournalEntry,
}

enum Sink {
    File { file: File, path: PathBuf },
    Memory(Vec<JournalRecord>),
}

pub struct Journal {
    inner: Mutex<(Sink, u64)>,
}

impl Journal {
    pub fn in_memory() -> Self {
        Self {
            inner: Mutex::new((Sink::Memory(Vec::new()), 0)),
        }
    }

    /// Opens (or creates) a journal file and returns the records already in it.
    pub fn open(path: &Path) -> ServiceResult<(Self, Vec<JournalRecord>)> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let (records, good_len) = read_records(&file, path)?;
        if good_len < file.metadata()?.len() {
            tracing::warn!(path = %path.display(), "dropping torn final journal record");
            file.set_len(good_len)?;
            file.seek(SeekFrom::End(0))?;
        }
        let next = records.last().map_or(0, |r| r.seq + 1);
        let journal = Self {
            inner: Mutex::new((
                Sink::File {
                    file,
                    path: path.to_path_buf(),
                },
                next,
            )),
        };
        Ok((journal, records))
    }

    /// Appends one record; the entry is durable in the OS once this returns.
    pub fn append(&self, entry: JournalEntry) -> ServiceResult<u64> {
        let mut guard = self.inner.lock().map_err(|_| ServiceError::Journal("journal lock poisoned".into()))?;
        let (sink, next) = &mut *guard;
        let record = JournalRecord { seq: *next, entry };
        match sink {
            Sink::File { file, .. } => {
                let mut line = serde_json::to_vec(&record).map_err(|e| ServiceError::Journal(e.to_string()))?;
                line.push(b'\n');
                file.write_all(&line)?;
            }
            Sink::Memory(records) => records.push(record),
        }
        *next += 1;
        Ok(*next - 1)
    }

    pub fn flush(&self) -> ServiceResult<()> {
        let mut guard = self.inner.lock().map_err(|_| ServiceError::Journal("journal lock poisoned".into()))?;
        if let Sink::File { file, .. } = &mut guard.0 {
            file.sync_data()?;
        }
        Ok(())
    }

    /// Every record written so far, in order.
    pub fn records(&self) -> ServiceResult<Vec<JournalRecord>> {
        let guard = self.inner.lock().map_err(|_| ServiceError::Journal("journal lock poisoned".into()))?;
        match &guard.0 {
            Sink::Memory(records) => Ok(records.clone()),
            Sink::File { path, .. } => {
                let file = File::open(path)?;
                Ok(read_records(&file, path)?.0)
            }
        }
    }
}

/// Parses complete lines; returns the records and the byte length of the
/// valid prefix. Only the final line may be malformed.
fn read_records(file: &File, path: &Path) -> ServiceResult<(Vec<JournalRecord>, u64)> {
    let mut reader = BufReader::new(file);
    reader.seek(SeekFrom::Start(0))?;
    let mut records = Vec::new();
    let mut good = 0u64;
    let mut line = String::new();
    let mut lineno = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        lineno += 1;
        let complete = line.ends_with('\n');
        match (serde_json::from_str::<JournalRecord>(line.trim_end()), complete) {
            (Ok(r), true) => {
                records.push(r);
                good += n as u64;
            }
            (_, false) => break,
            (Err(e), true) => {
                // A bad line followed by more data is corruption, not a torn write.
                let mut rest = String::new();
                if reader.read_line(&mut rest)? == 0 {
                    break;
                }
                return Err(ServiceError::Journal(format!("{} line {lineno}: {e}", path.display())));
            }
        }
    }
    Ok((records, good))
}
