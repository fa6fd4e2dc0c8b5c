//! Append-only versioned tables with time travel.
//!
//! Each table keeps every row version it has ever seen. A version carries a
//! `valid_from` load timestamp and an optional `valid_to`; the open version
//! of a key has no `valid_to`. Loading a batch closes superseded versions
//! and inserts new ones — it never rewrites history — so `query_asof(t)`
//! can reconstruct the table as it stood at any past `t` with the predicate
//! `valid_from <= t AND (valid_to IS NULL OR valid_to > t)`.
//!
//! On disk a table is an NDJSON event log (`insert`/`close` events) split
//! into segments, plus a manifest that records how many lines of each
//! segment are committed. The manifest is written atomically after events
//! are appended, so readers only ever fold fully committed batches; a
//! leftover partial append is truncated by the next writer.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::PathBuf;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::storage::{self, FileLock};
use crate::value::{canonical_row_json, format_ts, parse_ts, push_json_string, row_from_json, Row, Value};
use crate::Workspace;

/// Controls which payload fields trigger new versions, and how long closed
/// versions are retained by [`VersionedTable::compact`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct VersioningPolicy {
    /// `None`: any payload change versions. `Some(fields)`: only changes in
    /// these fields do; an empty list is invalid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracked_fields: Option<Vec<String>>,
    /// Closed versions whose `valid_to` is older than this many days before
    /// the compaction reference time may be dropped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retention_days: Option<i64>,
}

/// One version of one key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowVersion {
    pub payload: Row,
    pub valid_from: DateTime<Utc>,
    pub valid_to: Option<DateTime<Utc>>,
}

/// A key's row as of some time: key values, payload, and validity window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VersionedRow {
    pub key: Row,
    pub payload: Row,
    pub valid_from: DateTime<Utc>,
    pub valid_to: Option<DateTime<Utc>>,
}

/// What one batch load did.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersioningReport {
    pub inserted: usize,
    pub closed: usize,
    pub unchanged: usize,
    #[serde(with = "crate::value::ts_serde")]
    pub load_ts: DateTime<Utc>,
}

/// What a compaction pass did.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompactionReport {
    pub dropped: usize,
    pub retained: usize,
}

/// Key values in key-field order, ordered canonically so folds and query
/// output have a deterministic key order.
#[derive(Clone, Debug)]
struct KeyVec(Vec<Value>);

impl PartialEq for KeyVec {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for KeyVec {}
impl PartialOrd for KeyVec {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for KeyVec {
    fn cmp(&self, other: &Self) -> Ordering {
        for (a, b) in self.0.iter().zip(other.0.iter()) {
            match a.cmp_canonical(b) {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        self.0.len().cmp(&other.0.len())
    }
}

#[derive(Serialize, Deserialize)]
struct SegmentMeta {
    file: String,
    committed_lines: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    name: String,
    key_fields: Vec<String>,
    segments: Vec<SegmentMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policy: Option<VersioningPolicy>,
    /// Field name -> datatype tag of the most recent value seen, used by
    /// downstream layers to resolve field references and types.
    #[serde(default)]
    fields_seen: BTreeMap<String, String>,
}

/// Semantic row equality: same fields, numerically equal values.
fn rows_equal(a: &Row, b: &Row) -> bool {
    a.len() == b.len() && a.iter().all(|(k, v)| b.get(k).map(|w| v.semantic_eq(w)).unwrap_or(false))
}

fn project(row: &Row, fields: &[String]) -> Row {
    let mut out = Row::new();
    for f in fields {
        if let Some(v) = row.get(f) {
            out.insert(f.clone(), v.clone());
        }
    }
    out
}

fn event_line(kind: &str, key: &Row, payload: Option<&Row>, ts: &DateTime<Utc>) -> String {
    let mut out = String::from("{\"event\":");
    push_json_string(&mut out, kind);
    out.push_str(",\"key\":");
    out.push_str(&canonical_row_json(key));
    if let Some(p) = payload {
        out.push_str(",\"payload\":");
        out.push_str(&canonical_row_json(p));
    }
    out.push_str(",\"ts\":");
    push_json_string(&mut out, &format_ts(ts));
    out.push('}');
    out
}

struct Event {
    kind: String,
    key: Row,
    payload: Option<Row>,
    ts: DateTime<Utc>,
}

fn parse_event(line: &str) -> Result<Event> {
    let v: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Storage(format!("corrupt table event: {e}")))?;
    let kind = v["event"]
        .as_str()
        .ok_or_else(|| Error::Storage("corrupt table event: missing kind".into()))?
        .to_string();
    let key = row_from_json(&v["key"]).map_err(|e| Error::Storage(format!("corrupt table event key: {e}")))?;
    let payload = match v.get("payload") {
        Some(p) => Some(row_from_json(p).map_err(|e| Error::Storage(format!("corrupt table event payload: {e}")))?),
        None => None,
    };
    let ts = parse_ts(v["ts"].as_str().ok_or_else(|| Error::Storage("corrupt table event: missing ts".into()))?)?;
    Ok(Event { kind, key, payload, ts })
}

/// Directory of versioned tables under `tables/`.
pub struct TableStore {
    dir: PathBuf,
}

impl TableStore {
    pub fn open(ws: &Workspace) -> Self {
        TableStore { dir: ws.tables_dir() }
    }

    /// Create a table (idempotent when the key fields match; a key mismatch
    /// with an existing table is an error).
    pub fn create(&self, name: &str, key_fields: &[String]) -> Result<VersionedTable> {
        storage::check_safe_name("table name", name)?;
        if key_fields.is_empty() {
            return Err(Error::InvalidArgument(format!("table {name}: key fields must be non-empty")));
        }
        for f in key_fields {
            storage::check_safe_name("key field", f)?;
        }
        let dir = self.dir.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::storage("create table dir", e))?;
        let _lock = FileLock::acquire(&dir.join(".lock"))?;
        let manifest_path = dir.join("manifest.json");
        if manifest_path.exists() {
            let existing = VersionedTable { dir: dir.clone() };
            let manifest = existing.read_manifest()?;
            if manifest.key_fields != key_fields {
                return Err(Error::SchemaViolation(format!(
                    "table {name} already exists with key fields {:?}",
                    manifest.key_fields
                )));
            }
            return Ok(existing);
        }
        let manifest = Manifest {
            name: name.to_string(),
            key_fields: key_fields.to_vec(),
            segments: Vec::new(),
            policy: None,
            fields_seen: BTreeMap::new(),
        };
        write_manifest(&manifest_path, &manifest)?;
        Ok(VersionedTable { dir })
    }

    /// Open an existing table.
    pub fn open_table(&self, name: &str) -> Result<VersionedTable> {
        let dir = self.dir.join(name);
        if !dir.join("manifest.json").exists() {
            return Err(Error::NotFound(format!("table {name}")));
        }
        Ok(VersionedTable { dir })
    }

    /// Names of all tables, sorted.
    pub fn list(&self) -> Result<Vec<String>> {
        storage::list_dir_sorted(&self.dir, |n| !n.starts_with('.'))
    }
}

fn write_manifest(path: &std::path::Path, m: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(m).unwrap();
    text.push('\n');
    storage::atomic_write(path, text.as_bytes())
}

/// One versioned table. All mutation happens under the table's lock file;
/// reads fold the committed event log and need no lock.
#[derive(Debug)]
pub struct VersionedTable {
    dir: PathBuf,
}

impl VersionedTable {
    fn manifest_path(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }

    fn read_manifest(&self) -> Result<Manifest> {
        let text = std::fs::read_to_string(self.manifest_path()).map_err(|e| Error::storage("read table manifest", e))?;
        serde_json::from_str(&text).map_err(|e| Error::Storage(format!("corrupt table manifest: {e}")))
    }

    pub fn name(&self) -> Result<String> {
        Ok(self.read_manifest()?.name)
    }

    pub fn key_fields(&self) -> Result<Vec<String>> {
        Ok(self.read_manifest()?.key_fields)
    }

    pub fn policy(&self) -> Result<Option<VersioningPolicy>> {
        Ok(self.read_manifest()?.policy)
    }

    /// Datatype tags of every payload field ever loaded.
    pub fn fields_seen(&self) -> Result<BTreeMap<String, String>> {
        Ok(self.read_manifest()?.fields_seen)
    }

    /// Total committed bytes across segment files.
    pub fn committed_bytes(&self) -> Result<u64> {
        let manifest = self.read_manifest()?;
        let mut total = 0u64;
        for seg in &manifest.segments {
            let lines = storage::read_lines(&self.dir.join(&seg.file))?;
            total += lines
                .iter()
                .take(seg.committed_lines)
                .map(|l| l.len() as u64 + 1)
                .sum::<u64>();
        }
        Ok(total)
    }

    fn key_of(&self, key_fields: &[String], row: &Row, what: &str) -> Result<KeyVec> {
        let mut key = Vec::with_capacity(key_fields.len());
        for f in key_fields {
            match row.get(f) {
                Some(v) => key.push(v.clone()),
                None => {
                    return Err(Error::MissingKeyField(format!("{what}: field {f:?} is missing")));
                }
            }
        }
        Ok(KeyVec(key))
    }

    /// Fold the committed event log into per-key version chains.
    fn fold(&self, manifest: &Manifest) -> Result<BTreeMap<KeyVec, Vec<RowVersion>>> {
        let mut chains: BTreeMap<KeyVec, Vec<RowVersion>> = BTreeMap::new();
        for seg in &manifest.segments {
            let lines = storage::read_lines(&self.dir.join(&seg.file))?;
            if lines.len() < seg.committed_lines {
                return Err(Error::Storage(format!(
                    "segment {} has {} lines but {} are committed",
                    seg.file,
                    lines.len(),
                    seg.committed_lines
                )));
            }
            for line in lines.iter().take(seg.committed_lines) {
                let ev = parse_event(line)?;
                let key = self.key_of(&manifest.key_fields, &ev.key, "table event")?;
                let chain = chains.entry(key).or_default();
                match ev.kind.as_str() {
                    "insert" => {
                        let payload = ev
                            .payload
                            .ok_or_else(|| Error::Storage("corrupt table event: insert without payload".into()))?;
                        chain.push(RowVersion {
                            payload,
                            valid_from: ev.ts,
                            valid_to: None,
                        });
                    }
                    "close" => {
                        let open = chain
                            .iter_mut()
                            .rev()
                            .find(|v| v.valid_to.is_none())
                            .ok_or_else(|| Error::Storage("corrupt table event: close without open version".into()))?;
                        open.valid_to = Some(ev.ts);
                    }
                    other => {
                        return Err(Error::Storage(format!("corrupt table event: unknown kind {other:?}")));
                    }
                }
            }
        }
        Ok(chains)
    }

    /// Load one batch at `load_ts`. The whole batch is validated before any
    /// event is appended: every record must carry all key fields, no key may
    /// appear twice, and `load_ts` must be strictly newer than the latest
    /// version of every touched key. Unchanged rows (under the table policy)
    /// produce no new version.
    pub fn apply_batch(&self, records: &[Row], load_ts: DateTime<Utc>) -> Result<VersioningReport> {
        let _lock = FileLock::acquire(&self.dir.join(".lock"))?;
        let mut manifest = self.read_manifest()?;
        let chains = self.fold(&manifest)?;
        let tracked = manifest.policy.as_ref().and_then(|p| p.tracked_fields.clone());

        // -- validate everything up front (atomicity: all or nothing) --
        let mut seen = BTreeMap::new();
        let mut keys = Vec::with_capacity(records.len());
        for (i, row) in records.iter().enumerate() {
            let key = self.key_of(&manifest.key_fields, row, &format!("record {i}"))?;
            if let Some(prev) = seen.insert(key.clone(), i) {
                return Err(Error::NonMonotonicLoadTimestamp(format!(
                    "records {prev} and {i} share a key within one batch"
                )));
            }
            if let Some(chain) = chains.get(&key) {
                if let Some(last) = chain.last() {
                    if last.valid_from >= load_ts {
                        return Err(Error::NonMonotonicLoadTimestamp(format!(
                            "record {i}: existing version at {} is not older than load ts {}",
                            format_ts(&last.valid_from),
                            format_ts(&load_ts)
                        )));
                    }
                }
            }
            keys.push(key);
        }

        // -- decide actions and build event lines --
        let mut lines = Vec::new();
        let mut inserted = 0usize;
        let mut closed = 0usize;
        let mut unchanged = 0usize;
        for (row, key) in records.iter().zip(keys.iter()) {
            let open = chains.get(key).and_then(|c| c.last()).filter(|v| v.valid_to.is_none());
            let key_row: Row = manifest
                .key_fields
                .iter()
                .cloned()
                .zip(key.0.iter().cloned())
                .collect();
            match open {
                Some(current) => {
                    let same = match &tracked {
                        Some(fields) => rows_equal(&project(&current.payload, fields), &project(row, fields)),
                        None => rows_equal(&current.payload, row),
                    };
                    if same {
                        unchanged += 1;
                    } else {
                        lines.push(event_line("close", &key_row, None, &load_ts));
                        lines.push(event_line("insert", &key_row, Some(row), &load_ts));
                        closed += 1;
                        inserted += 1;
                    }
                }
                None => {
                    lines.push(event_line("insert", &key_row, Some(row), &load_ts));
                    inserted += 1;
                }
            }
            for (f, v) in row {
                let tag = v.datatype().name().to_string();
                match manifest.fields_seen.get(f) {
                    Some(old) if *old == tag => {}
                    Some(old) if (old == "integer" && tag == "decimal") || (old == "decimal" && tag == "integer") => {
                        manifest.fields_seen.insert(f.clone(), "decimal".into());
                    }
                    _ => {
                        manifest.fields_seen.insert(f.clone(), tag);
                    }
                }
            }
        }

        // -- append events, then commit via the manifest --
        if manifest.segments.is_empty() {
            manifest.segments.push(SegmentMeta {
                file: "segment-1.ndjson".into(),
                committed_lines: 0,
            });
        }
        let seg = manifest.segments.last_mut().unwrap();
        let seg_path = self.dir.join(&seg.file);
        // roll back any partial append a crashed writer left behind
        let existing = storage::read_lines(&seg_path)?;
        let mut text: String = existing.iter().take(seg.committed_lines).map(|l| format!("{l}\n")).collect();
        for line in &lines {
            text.push_str(line);
            text.push('\n');
        }
        storage::atomic_write(&seg_path, text.as_bytes())?;
        seg.committed_lines += lines.len();
        write_manifest(&self.manifest_path(), &manifest)?;
        Ok(VersioningReport {
            inserted,
            closed,
            unchanged,
            load_ts,
        })
    }

    fn rows_from_chains(
        &self,
        chains: BTreeMap<KeyVec, Vec<RowVersion>>,
        key_fields: &[String],
        keep: impl Fn(&RowVersion) -> bool,
    ) -> Vec<VersionedRow> {
        let mut out = Vec::new();
        for (key, chain) in chains {
            for v in chain {
                if keep(&v) {
                    let key_row: Row = key_fields.iter().cloned().zip(key.0.iter().cloned()).collect();
                    out.push(VersionedRow {
                        key: key_row,
                        payload: v.payload,
                        valid_from: v.valid_from,
                        valid_to: v.valid_to,
                    });
                }
            }
        }
        out
    }

    /// The table as of time `t`: for each key, the version (if any) with
    /// `valid_from <= t` and no `valid_to` or `valid_to > t`. Keys are
    /// returned in canonical order.
    pub fn query_asof(&self, t: DateTime<Utc>) -> Result<Vec<VersionedRow>> {
        let manifest = self.read_manifest()?;
        let chains = self.fold(&manifest)?;
        Ok(self.rows_from_chains(chains, &manifest.key_fields, |v| {
            v.valid_from <= t && v.valid_to.map(|to| to > t).unwrap_or(true)
        }))
    }

    /// The open (current) version of every key.
    pub fn current(&self) -> Result<Vec<VersionedRow>> {
        let manifest = self.read_manifest()?;
        let chains = self.fold(&manifest)?;
        Ok(self.rows_from_chains(chains, &manifest.key_fields, |v| v.valid_to.is_none()))
    }

    /// Every version of one key, oldest first; empty when the key was never
    /// loaded. `key` must carry all key fields.
    pub fn history(&self, key: &Row) -> Result<Vec<RowVersion>> {
        let manifest = self.read_manifest()?;
        let wanted = self.key_of(&manifest.key_fields, key, "history key")?;
        let chains = self.fold(&manifest)?;
        Ok(chains.get(&wanted).cloned().unwrap_or_default())
    }

    /// Install (or replace) the table's versioning policy.
    pub fn configure_policy(&self, policy: VersioningPolicy) -> Result<()> {
        let _lock = FileLock::acquire(&self.dir.join(".lock"))?;
        let mut manifest = self.read_manifest()?;
        if let Some(fields) = &policy.tracked_fields {
            if fields.is_empty() {
                return Err(Error::InvalidPolicy("tracked field list must not be empty".into()));
            }
            if !manifest.fields_seen.is_empty() {
                for f in fields {
                    if !manifest.fields_seen.contains_key(f) && !manifest.key_fields.contains(f) {
                        return Err(Error::UnknownField(format!("tracked field {f:?} never appeared in this table")));
                    }
                }
            }
        }
        if let Some(days) = policy.retention_days {
            if days < 1 {
                return Err(Error::InvalidPolicy(format!("retention must be at least 1 day, got {days}")));
            }
        }
        manifest.policy = Some(policy);
        write_manifest(&self.manifest_path(), &manifest)
    }

    /// Drop closed versions that fell out of the retention window (those
    /// with `valid_to <= now - retention_days`), rewriting the log into a
    /// single consolidated segment. As-of queries inside the window are
    /// unaffected. Requires a policy with `retention_days`.
    pub fn compact(&self, now: DateTime<Utc>) -> Result<CompactionReport> {
        let _lock = FileLock::acquire(&self.dir.join(".lock"))?;
        let mut manifest = self.read_manifest()?;
        let days = manifest
            .policy
            .as_ref()
            .and_then(|p| p.retention_days)
            .ok_or_else(|| Error::InvalidPolicy("no retention window configured".into()))?;
        let window_start = now - Duration::days(days);
        let chains = self.fold(&manifest)?;

        let mut dropped = 0usize;
        let mut retained = 0usize;
        let mut lines = Vec::new();
        for (key, chain) in &chains {
            let key_row: Row = manifest.key_fields.iter().cloned().zip(key.0.iter().cloned()).collect();
            for v in chain {
                match v.valid_to {
                    Some(to) if to <= window_start => {
                        dropped += 1;
                    }
                    _ => {
                        retained += 1;
                        lines.push(event_line("insert", &key_row, Some(&v.payload), &v.valid_from));
                        if let Some(to) = v.valid_to {
                            lines.push(event_line("close", &key_row, None, &to));
                        }
                    }
                }
            }
        }

        let next_n = manifest
            .segments
            .iter()
            .filter_map(|s| s.file.strip_prefix("segment-").and_then(|r| r.strip_suffix(".ndjson")).and_then(|n| n.parse::<u64>().ok()))
            .max()
            .unwrap_or(0)
            + 1;
        let new_file = format!("segment-{next_n}.ndjson");
        let text: String = lines.iter().map(|l| format!("{l}\n")).collect();
        storage::atomic_write(&self.dir.join(&new_file), text.as_bytes())?;
        let old_files: Vec<String> = manifest.segments.iter().map(|s| s.file.clone()).collect();
        manifest.segments = vec![SegmentMeta {
            file: new_file,
            committed_lines: lines.len(),
        }];
        write_manifest(&self.manifest_path(), &manifest)?;
        for f in old_files {
            let _ = std::fs::remove_file(self.dir.join(f));
        }
        Ok(CompactionReport { dropped, retained })
    }
}
