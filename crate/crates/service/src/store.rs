//! Append-only annotation log with periodic snapshots.
//!
//! Layout of the store directory:
//! - `annotations.jsonl`: one accepted annotation per line, in order.
//! - `snapshot.json`: task records after the first `applied` log lines.
//! - `refits.jsonl`: one refit point per line.
//!
//! A torn final log line (crash mid-write) is dropped on open.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::board::{Annotation, Board, Policy, TaskRecord};
use crate::error::ServiceError;
use crate::RefitPoint;

const LOG: &str = "annotations.jsonl";
const SNAPSHOT: &str = "snapshot.json";
const REFITS: &str = "refits.jsonl";

pub const DEFAULT_SNAPSHOT_EVERY: usize = 100;

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    applied: usize,
    policy: Policy,
    tasks: Vec<TaskRecord>,
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    log: File,
    applied: usize,
    since_snapshot: usize,
    pub snapshot_every: usize,
}

fn store_err(e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Store(e.to_string())
}

/// Parsed log lines; a malformed last line without a trailing newline is
/// reported as torn rather than as an error.
fn read_log(path: &Path) -> Result<(Vec<Annotation>, Option<u64>), ServiceError> {
    if !path.exists() {
        return Ok((Vec::new(), None));
    }
    let bytes = fs::read(path)?;
    let mut out = Vec::new();
    let mut offset = 0usize;
    for line in bytes.split_inclusive(|&b| b == b'\n') {
        // Lines are written whole with their newline, so an unterminated
        // tail was never acknowledged.
        if !line.ends_with(b"\n") {
            return Ok((out, Some(offset as u64)));
        }
        let text = std::str::from_utf8(line).map_err(store_err)?.trim_end();
        if !text.is_empty() {
            let a = serde_json::from_str(text)
                .map_err(|e| ServiceError::Store(format!("annotation log line {}: {e}", out.len() + 1)))?;
            out.push(a);
        }
        offset += line.len();
    }
    Ok((out, None))
}

impl Store {
    /// Open (or create) a store and bring `board` up to date with it.
    pub fn open(dir: impl AsRef<Path>, board: &mut Board) -> Result<Self, ServiceError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let log_path = dir.join(LOG);
        let (log, torn) = read_log(&log_path)?;
        if let Some(len) = torn {
            OpenOptions::new().write(true).open(&log_path)?.set_len(len)?;
        }
        let mut start = 0;
        let snap_path = dir.join(SNAPSHOT);
        if snap_path.exists() {
            let snap: Snapshot = serde_json::from_slice(&fs::read(&snap_path)?).map_err(store_err)?;
            // A snapshot taken under another policy or ahead of the log is
            // ignored; the log alone is authoritative.
            if snap.policy == board.config().policy && snap.applied <= log.len() {
                board.restore(&snap.tasks)?;
                start = snap.applied;
            }
        }
        for a in &log[start..] {
            board.apply(a.clone())?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&log_path)?;
        Ok(Self {
            dir,
            log: file,
            applied: log.len(),
            since_snapshot: log.len() - start,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Log lines written so far.
    pub fn applied(&self) -> usize {
        self.applied
    }

    /// Durably append one accepted annotation.
    pub fn append(&mut self, a: &Annotation) -> Result<(), ServiceError> {
        let mut line = serde_json::to_vec(a).map_err(store_err)?;
        line.push(b'\n');
        self.log.write_all(&line)?;
        self.log.sync_data()?;
        self.applied += 1;
        self.since_snapshot += 1;
        Ok(())
    }

    pub fn maybe_snapshot(&mut self, board: &Board) -> Result<(), ServiceError> {
        if self.snapshot_every > 0 && self.since_snapshot >= self.snapshot_every {
            self.snapshot(board)?;
        }
        Ok(())
    }

    /// Write the snapshot atomically via rename.
    pub fn snapshot(&mut self, board: &Board) -> Result<(), ServiceError> {
        let snap = Snapshot {
            applied: self.applied,
            policy: board.config().policy,
            tasks: board.records(),
        };
        let tmp = self.dir.join("snapshot.json.tmp");
        fs::write(&tmp, serde_json::to_vec(&snap).map_err(store_err)?)?;
        fs::rename(&tmp, self.dir.join(SNAPSHOT))?;
        self.since_snapshot = 0;
        Ok(())
    }

    pub fn append_refit(&mut self, point: &RefitPoint) -> Result<(), ServiceError> {
        let mut f = OpenOptions::new().create(true).append(true).open(self.dir.join(REFITS))?;
        let mut line = serde_json::to_vec(point).map_err(store_err)?;
        line.push(b'\n');
        f.write_all(&line)?;
        Ok(())
    }

    /// Refit history; unreadable lines are skipped.
    pub fn load_refits(&self) -> Result<Vec<RefitPoint>, ServiceError> {
        let path = self.dir.join(REFITS);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for line in BufReader::new(File::open(path)?).lines() {
            if let Ok(p) = serde_json::from_str(&line?) {
                out.push(p);
            }
        }
        Ok(out)
    }
}

/// Rebuild a board from a log alone, in order.
pub fn replay(board: &mut Board, log: &[Annotation]) -> Result<(), ServiceError> {
    for a in log {
        board.apply(a.clone())?;
    }
    Ok(())
}

/// Read every complete annotation in a store directory.
pub fn read_annotations(dir: impl AsRef<Path>) -> Result<Vec<Annotation>, ServiceError> {
    Ok(read_log(&dir.as_ref().join(LOG))?.0)
}
