//! The raw zone: immutable landed payloads with tiering and masked reads.
//!
//! Sources register once with a format and a dated path pattern; every
//! ingested payload becomes an immutable segment file whose digest, size,
//! tier, and access tags live in the source's `_meta.ndjson`. Tiering
//! policies demote older (or over-budget) segments from hot to cool — never
//! the reverse — and masked reads redact tagged fields instead of blocking
//! access.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use chrono::NaiveDate;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::cost::rational_from_json;
use crate::error::{Error, Result};
use crate::ratio::rational_display;
use crate::records::{read_records, PayloadFormat, Record};
use crate::storage::{self, FileLock};
use crate::value::{Row, Value};
use crate::Workspace;

/// Replacement text for masked field values.
pub const REDACTED: &str = "\u{ab}redacted\u{bb}";

/// Storage tier of a segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Hot,
    Cool,
}

/// One registered source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceRegistration {
    pub source_id: String,
    pub format: PayloadFormat,
    /// Partition path under the raw zone; must contain exactly one `{date}`
    /// placeholder, e.g. `sales/{date}`.
    pub path_pattern: String,
    /// Contract to validate against in monitoring mode, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contract_name: Option<String>,
    /// Free-form cadence note (`daily`, `hourly`, ...), informational only.
    #[serde(default)]
    pub schedule_hint: String,
}

/// One immutable landed segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSegment {
    /// `<source_id>/<YYYY-MM-DD>/segment-<n>`.
    pub segment_id: String,
    pub source_id: String,
    pub load_date: NaiveDate,
    pub size_bytes: u64,
    pub tier: Tier,
    pub access_tags: BTreeSet<String>,
    /// SHA-256 of the payload, checked on every read.
    pub content_digest: String,
    /// File path relative to the raw zone root.
    pub rel_path: String,
}

/// How to split hot from cool. Exactly one criterion must be set.
#[derive(Clone, Debug, PartialEq)]
pub struct TieringPolicy {
    /// Segments loaded within this many days of the reference date stay hot.
    pub hot_window_days: Option<u32>,
    /// Keep the newest segments hot up to this fraction of total bytes; the
    /// segment that crosses the budget is included.
    pub hot_fraction: Option<BigRational>,
    /// Restrict to one source; `None` applies to all.
    pub source: Option<String>,
}

impl TieringPolicy {
    pub fn window(days: u32) -> Self {
        TieringPolicy {
            hot_window_days: Some(days),
            hot_fraction: None,
            source: None,
        }
    }

    pub fn fraction(f: BigRational) -> Self {
        TieringPolicy {
            hot_window_days: None,
            hot_fraction: Some(f),
            source: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.hot_window_days, &self.hot_fraction) {
            (Some(_), Some(_)) | (None, None) => Err(Error::InvalidPolicy(
                "tiering needs exactly one of hot_window_days or hot_fraction".into(),
            )),
            (None, Some(f)) => {
                if *f <= BigRational::zero() || *f > BigRational::from_integer(BigInt::from(1)) {
                    Err(Error::InvalidPolicy(format!("hot_fraction must be in (0, 1], got {}", rational_display(f))))
                } else {
                    Ok(())
                }
            }
            (Some(_), None) => Ok(()),
        }
    }
}

impl Serialize for TieringPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serde_json::Map::new();
        if let Some(d) = self.hot_window_days {
            map.insert("hot_window_days".into(), d.into());
        }
        if let Some(f) = &self.hot_fraction {
            map.insert("hot_fraction".into(), serde_json::Value::String(rational_display(f)));
        }
        if let Some(src) = &self.source {
            map.insert("source".into(), serde_json::Value::String(src.clone()));
        }
        serde_json::Value::Object(map).serialize(s)
    }
}

impl<'de> Deserialize<'de> for TieringPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Wire {
            #[serde(default)]
            hot_window_days: Option<u32>,
            #[serde(default)]
            hot_fraction: Option<serde_json::Value>,
            #[serde(default)]
            source: Option<String>,
        }
        let w = Wire::deserialize(d)?;
        let hot_fraction = w
            .hot_fraction
            .map(|v| rational_from_json(&v, "hot_fraction"))
            .transpose()
            .map_err(serde::de::Error::custom)?;
        let policy = TieringPolicy {
            hot_window_days: w.hot_window_days,
            hot_fraction,
            source: w.source,
        };
        policy.validate().map_err(serde::de::Error::custom)?;
        Ok(policy)
    }
}

/// What a tiering pass changed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TieringReport {
    /// Segment ids demoted hot -> cool by this pass, sorted.
    pub moved_to_cool: Vec<String>,
    pub hot_bytes: u64,
    pub cool_bytes: u64,
    pub hot_segments: usize,
    pub cool_segments: usize,
}

/// Access policy: tag -> fields to redact for segments carrying that tag.
pub type MaskingPolicy = BTreeMap<String, Vec<String>>;

/// The raw zone store rooted at `raw/`.
pub struct RawStore {
    dir: PathBuf,
}

impl RawStore {
    pub fn open(ws: &Workspace) -> Self {
        RawStore { dir: ws.raw_dir() }
    }

    fn sources_path(&self) -> PathBuf {
        self.dir.join("sources.json")
    }

    fn source_dir(&self, source_id: &str) -> PathBuf {
        self.dir.join(source_id)
    }

    fn meta_path(&self, source_id: &str) -> PathBuf {
        self.source_dir(source_id).join("_meta.ndjson")
    }

    fn read_sources(&self) -> Result<BTreeMap<String, SourceRegistration>> {
        match std::fs::read_to_string(self.sources_path()) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| Error::Storage(format!("corrupt sources registry: {e}"))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(BTreeMap::new()),
            Err(e) => Err(Error::storage("read sources registry", e)),
        }
    }

    fn write_sources(&self, sources: &BTreeMap<String, SourceRegistration>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(sources).unwrap();
        text.push('\n');
        storage::atomic_write(&self.sources_path(), text.as_bytes())
    }

    /// Register a new source. The path pattern must consist of safe path
    /// components with exactly one `{date}` placeholder.
    pub fn register_source(&self, reg: &SourceRegistration) -> Result<()> {
        storage::check_safe_name("source id", &reg.source_id)?;
        let placeholders = reg.path_pattern.matches("{date}").count();
        if placeholders != 1 {
            return Err(Error::InvalidArgument(format!(
                "path pattern {:?} must contain exactly one {{date}} placeholder",
                reg.path_pattern
            )));
        }
        for part in reg.path_pattern.split('/') {
            if part != "{date}" && !storage::is_safe_name(part) {
                return Err(Error::InvalidArgument(format!("path pattern component {part:?} is not a safe name")));
            }
        }
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::storage("create raw dir", e))?;
        let _lock = FileLock::acquire(&self.dir.join(".lock"))?;
        let mut sources = self.read_sources()?;
        if sources.contains_key(&reg.source_id) {
            return Err(Error::DuplicateSource(reg.source_id.clone()));
        }
        sources.insert(reg.source_id.clone(), reg.clone());
        self.write_sources(&sources)
    }

    pub fn get_source(&self, source_id: &str) -> Result<SourceRegistration> {
        self.read_sources()?
            .remove(source_id)
            .ok_or_else(|| Error::UnknownSource(source_id.to_string()))
    }

    /// All registered sources, sorted by id.
    pub fn list_sources(&self) -> Result<Vec<SourceRegistration>> {
        Ok(self.read_sources()?.into_values().collect())
    }

    fn read_meta(&self, source_id: &str) -> Result<Vec<RawSegment>> {
        let mut out = Vec::new();
        for line in storage::read_lines(&self.meta_path(source_id))? {
            out.push(serde_json::from_str(&line).map_err(|e| Error::Storage(format!("corrupt raw meta: {e}")))?);
        }
        Ok(out)
    }

    fn write_meta(&self, source_id: &str, segments: &[RawSegment]) -> Result<()> {
        let mut text = String::new();
        for seg in segments {
            text.push_str(&serde_json::to_string(seg).unwrap());
            text.push('\n');
        }
        storage::atomic_write(&self.meta_path(source_id), text.as_bytes())
    }

    /// Land one payload as a new immutable segment. The payload must parse
    /// structurally under the source's registered format (an empty payload
    /// is fine); nothing else is checked here.
    pub fn ingest(&self, source_id: &str, payload: &[u8], load_date: NaiveDate) -> Result<RawSegment> {
        let source = self.get_source(source_id)?;
        read_records(payload, source.format, source_id)
            .map_err(|e| Error::UnparseablePayload(format!("source {source_id}: {e}")))?;

        let _lock = FileLock::acquire(&self.source_dir(source_id).join(".lock"))?;
        let mut segments = self.read_meta(source_id)?;
        let date_str = load_date.format("%Y-%m-%d").to_string();
        let n = segments
            .iter()
            .filter(|s| s.load_date == load_date)
            .filter_map(|s| s.segment_id.rsplit('-').next().and_then(|x| x.parse::<u64>().ok()))
            .max()
            .unwrap_or(0)
            + 1;
        let partition = source.path_pattern.replace("{date}", &date_str);
        let file_name = format!("segment-{n}.{}", source.format.file_extension());
        let rel_path = format!("{partition}/{file_name}");
        storage::atomic_write(&self.dir.join(&rel_path), payload)?;

        let segment = RawSegment {
            segment_id: format!("{source_id}/{date_str}/segment-{n}"),
            source_id: source_id.to_string(),
            load_date,
            size_bytes: payload.len() as u64,
            tier: Tier::Hot,
            access_tags: BTreeSet::new(),
            content_digest: storage::sha256_hex(payload),
            rel_path,
        };
        segments.push(segment.clone());
        self.write_meta(source_id, &segments)?;
        Ok(segment)
    }

    fn source_of_segment(segment_id: &str) -> Result<&str> {
        segment_id
            .split('/')
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::UnknownSegment(segment_id.to_string()))
    }

    /// Look up one segment's metadata.
    pub fn get_segment(&self, segment_id: &str) -> Result<RawSegment> {
        let source_id = Self::source_of_segment(segment_id)?;
        self.read_meta(source_id)?
            .into_iter()
            .find(|s| s.segment_id == segment_id)
            .ok_or_else(|| Error::UnknownSegment(segment_id.to_string()))
    }

    /// All segments (optionally one source's), sorted by segment id.
    pub fn list_segments(&self, source: Option<&str>) -> Result<Vec<RawSegment>> {
        let sources: Vec<String> = match source {
            Some(s) => {
                self.get_source(s)?;
                vec![s.to_string()]
            }
            None => self.read_sources()?.into_keys().collect(),
        };
        let mut out = Vec::new();
        for s in sources {
            out.extend(self.read_meta(&s)?);
        }
        out.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));
        Ok(out)
    }

    /// Read a segment's bytes, verifying the recorded digest.
    pub fn read_segment_bytes(&self, segment_id: &str) -> Result<(RawSegment, Vec<u8>)> {
        let seg = self.get_segment(segment_id)?;
        let bytes = storage::read_bytes(&self.dir.join(&seg.rel_path))?;
        let digest = storage::sha256_hex(&bytes);
        if digest != seg.content_digest {
            return Err(Error::DigestMismatch(format!(
                "segment {segment_id}: recorded {} but content hashes to {digest}",
                seg.content_digest
            )));
        }
        Ok((seg, bytes))
    }

    /// Parse a segment into records under its source's format.
    pub fn segment_records(&self, segment_id: &str) -> Result<Vec<Record>> {
        let (seg, bytes) = self.read_segment_bytes(segment_id)?;
        let source = self.get_source(&seg.source_id)?;
        read_records(&bytes, source.format, segment_id)
    }

    /// Pure tier assignment: which of `segments` should be hot under
    /// `policy` at reference date `today`. Cool segments are never promoted.
    pub fn plan_tiers(segments: &[RawSegment], policy: &TieringPolicy, today: NaiveDate) -> Result<BTreeMap<String, Tier>> {
        policy.validate()?;
        let mut plan = BTreeMap::new();
        if let Some(days) = policy.hot_window_days {
            let cutoff = today - chrono::Duration::days(days as i64);
            for seg in segments {
                let wanted = if seg.load_date >= cutoff { Tier::Hot } else { Tier::Cool };
                let tier = if seg.tier == Tier::Cool { Tier::Cool } else { wanted };
                plan.insert(seg.segment_id.clone(), tier);
            }
        } else if let Some(fraction) = &policy.hot_fraction {
            let total: u64 = segments.iter().map(|s| s.size_bytes).sum();
            let budget = fraction * BigRational::from_integer(BigInt::from(total));
            // newest first; ties broken by segment id so the order is total
            let mut order: Vec<&RawSegment> = segments.iter().collect();
            order.sort_by(|a, b| b.load_date.cmp(&a.load_date).then(a.segment_id.cmp(&b.segment_id)));
            let mut selected = BigRational::zero();
            for seg in order {
                let wanted = if selected < budget {
                    selected += BigRational::from_integer(BigInt::from(seg.size_bytes));
                    Tier::Hot
                } else {
                    Tier::Cool
                };
                let tier = if seg.tier == Tier::Cool { Tier::Cool } else { wanted };
                plan.insert(seg.segment_id.clone(), tier);
            }
        }
        Ok(plan)
    }

    /// Apply a tiering policy to the inventory (or one source's slice of
    /// it), persisting demotions and reporting the resulting split.
    pub fn apply_tiering(&self, policy: &TieringPolicy, today: NaiveDate) -> Result<TieringReport> {
        policy.validate()?;
        if let Some(src) = &policy.source {
            self.get_source(src)?;
        }
        let _lock = FileLock::acquire(&self.dir.join(".tier-lock"))?;
        let segments = self.list_segments(policy.source.as_deref())?;
        let plan = Self::plan_tiers(&segments, policy, today)?;

        let mut moved = Vec::new();
        let mut by_source: BTreeMap<String, Vec<RawSegment>> = BTreeMap::new();
        let mut hot_bytes = 0u64;
        let mut cool_bytes = 0u64;
        let mut hot_segments = 0usize;
        let mut cool_segments = 0usize;
        for seg in segments {
            let mut seg = seg;
            let new_tier = plan[&seg.segment_id];
            if seg.tier == Tier::Hot && new_tier == Tier::Cool {
                moved.push(seg.segment_id.clone());
            }
            seg.tier = new_tier;
            match new_tier {
                Tier::Hot => {
                    hot_bytes += seg.size_bytes;
                    hot_segments += 1;
                }
                Tier::Cool => {
                    cool_bytes += seg.size_bytes;
                    cool_segments += 1;
                }
            }
            by_source.entry(seg.source_id.clone()).or_default().push(seg);
        }
        for (source_id, changed) in &by_source {
            // preserve any segments of this source outside the policy scope
            let untouched: Vec<RawSegment> = self
                .read_meta(source_id)?
                .into_iter()
                .filter(|s| !plan.contains_key(&s.segment_id))
                .collect();
            let mut all = untouched;
            all.extend(changed.iter().cloned());
            all.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));
            self.write_meta(source_id, &all)?;
        }
        moved.sort();
        Ok(TieringReport {
            moved_to_cool: moved,
            hot_bytes,
            cool_bytes,
            hot_segments,
            cool_segments,
        })
    }

    /// Byte totals per tier across the inventory (optionally one source).
    pub fn tier_totals(&self, source: Option<&str>) -> Result<(u64, u64)> {
        let mut hot = 0u64;
        let mut cool = 0u64;
        for seg in self.list_segments(source)? {
            match seg.tier {
                Tier::Hot => hot += seg.size_bytes,
                Tier::Cool => cool += seg.size_bytes,
            }
        }
        Ok((hot, cool))
    }

    /// Attach access tags to a segment (replacing any existing tags).
    pub fn set_access_tags(&self, segment_id: &str, tags: &[String]) -> Result<RawSegment> {
        let source_id = Self::source_of_segment(segment_id)?.to_string();
        let _lock = FileLock::acquire(&self.source_dir(&source_id).join(".lock"))?;
        let mut segments = self.read_meta(&source_id)?;
        let seg = segments
            .iter_mut()
            .find(|s| s.segment_id == segment_id)
            .ok_or_else(|| Error::UnknownSegment(segment_id.to_string()))?;
        seg.access_tags = tags.iter().cloned().collect();
        let updated = seg.clone();
        self.write_meta(&source_id, &segments)?;
        Ok(updated)
    }

    /// Read a segment with masking applied: any field listed under any of
    /// the segment's tags in `masking` is replaced by [`REDACTED`]. Raw
    /// bytes on disk are untouched.
    pub fn masked_records(&self, segment_id: &str, masking: &MaskingPolicy) -> Result<Vec<Record>> {
        let seg = self.get_segment(segment_id)?;
        let mut masked_fields: BTreeSet<&str> = BTreeSet::new();
        for tag in &seg.access_tags {
            if let Some(fields) = masking.get(tag) {
                masked_fields.extend(fields.iter().map(String::as_str));
            }
        }
        let mut records = self.segment_records(segment_id)?;
        for rec in &mut records {
            let keys: Vec<String> = rec.values.keys().cloned().collect();
            for k in keys {
                if masked_fields.contains(k.as_str()) {
                    rec.values.insert(k, Value::Text(REDACTED.to_string()));
                }
            }
        }
        Ok(records)
    }
}

/// Rows of several segments concatenated in the given order.
pub fn segments_rows(store: &RawStore, segment_ids: &[String]) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    for id in segment_ids {
        rows.extend(store.segment_records(id)?.into_iter().map(|r| r.values));
    }
    Ok(rows)
}
