//! Filesystem primitives shared by every store.
//!
//! All stores follow the same discipline: documents are written atomically
//! (temp file + rename in the same directory), logs are append-only NDJSON,
//! and each store that mutates shared state takes an advisory lock file for
//! the duration of the write. Readers never need a lock; they only see fully
//! committed documents.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hex SHA-256 of a byte string; the digest used everywhere in the engine.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex::encode(h.finalize())
}

/// True for names that are safe to embed in paths and identifiers:
/// `[A-Za-z0-9_]` first, then also `-` and `.` (no leading dot).
pub fn is_safe_name(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphanumeric() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
}

/// Reject unsafe names with a uniform error.
pub fn check_safe_name(kind: &str, s: &str) -> Result<()> {
    if is_safe_name(s) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{kind} {s:?} is not a valid identifier")))
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::storage("create directory", e))?;
    }
    Ok(())
}

/// Write a whole file atomically: temp file in the same directory, then
/// rename over the target. Readers see either the old or the new content.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::Builder::new()
        .prefix(".tmp-")
        .tempfile_in(dir)
        .map_err(|e| Error::storage("create temp file", e))?;
    tmp.write_all(bytes).map_err(|e| Error::storage("write temp file", e))?;
    tmp.flush().map_err(|e| Error::storage("flush temp file", e))?;
    tmp.persist(path)
        .map_err(|e| Error::storage("rename temp file", e.error))?;
    Ok(())
}

/// Append one line (newline added) to an NDJSON log, creating it on demand.
pub fn append_line(path: &Path, line: &str) -> Result<()> {
    ensure_parent(path)?;
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::storage("open log", e))?;
    f.write_all(line.as_bytes()).map_err(|e| Error::storage("append log", e))?;
    f.write_all(b"\n").map_err(|e| Error::storage("append log", e))?;
    Ok(())
}

/// Read a file's non-empty lines; missing file reads as empty.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    match fs::read_to_string(path) {
        Ok(text) => Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(Error::storage("read log", e)),
    }
}

/// Read bytes with a uniform error.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::storage(&format!("read {}", path.display()), e))
}

/// Sorted names of entries in a directory whose names pass `keep`; missing
/// directory reads as empty.
pub fn list_dir_sorted(dir: &Path, keep: impl Fn(&str) -> bool) -> Result<Vec<String>> {
    let mut names = Vec::new();
    match fs::read_dir(dir) {
        Ok(entries) => {
            for entry in entries {
                let entry = entry.map_err(|e| Error::storage("list directory", e))?;
                let name = entry.file_name().to_string_lossy().into_owned();
                if keep(&name) {
                    names.push(name);
                }
            }
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(Error::storage("list directory", e)),
    }
    names.sort();
    Ok(names)
}

/// Advisory lock file. `create_new` succeeds for exactly one writer; the
/// lock is released by deleting the file on drop. Waiters poll briefly and
/// then give up with `LockBusy`.
pub struct FileLock {
    path: PathBuf,
}

impl FileLock {
    pub fn acquire(path: &Path) -> Result<FileLock> {
        Self::acquire_timeout(path, Duration::from_secs(10))
    }

    pub fn acquire_timeout(path: &Path, timeout: Duration) -> Result<FileLock> {
        ensure_parent(path)?;
        let start = Instant::now();
        loop {
            match fs::OpenOptions::new().write(true).create_new(true).open(path) {
                Ok(mut f) => {
                    let _ = write!(f, "{}", std::process::id());
                    return Ok(FileLock { path: path.to_path_buf() });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    if start.elapsed() >= timeout {
                        return Err(Error::LockBusy(format!("{} held by another writer", path.display())));
                    }
                    std::thread::sleep(Duration::from_millis(10));
                }
                Err(e) => return Err(Error::storage("acquire lock", e)),
            }
        }
    }
}

impl Drop for FileLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
