//! Quality monitoring: service-level indicators, objectives, and alerts.
//!
//! Four indicators are computed with exact rational arithmetic:
//!
//! * freshness — seconds between now and the latest batch timestamp,
//! * completeness — records received over records expected,
//! * accuracy — one minus the fraction of violating records,
//! * adherence — the fraction of recent batches with zero hard violations.
//!
//! Degenerate denominators (nothing expected, empty record set, empty batch
//! log) evaluate to 1 with a `vacuous` flag instead of failing: monitoring
//! must keep working on quiet days, and the flag keeps reports honest.
//! Samples append to a per-dataset daily log that is never rewritten;
//! objectives live beside it and alerts carry a suggested remediation.

use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ratio::Fraction;
use crate::storage::{self, FileLock};
use crate::validation::{BatchVerdict, RecordStatus};
use crate::value::{format_ts, ts_serde};
use crate::versioned::TableStore;
use crate::Workspace;

/// One appended quality measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliSample {
    pub dataset: String,
    #[serde(with = "ts_serde")]
    pub at: DateTime<Utc>,
    pub freshness_seconds: i64,
    pub completeness: Fraction,
    pub accuracy: Fraction,
    pub adherence: Fraction,
    /// Which batches the adherence figure covers.
    pub window: String,
    /// Sorted qualifiers: `*_vacuous`, `completeness_surplus`,
    /// `out_of_order`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

/// Per-dataset objectives. Unset thresholds are not checked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SloConfig {
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_freshness_seconds: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_completeness: Option<Fraction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_accuracy: Option<Fraction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_adherence: Option<Fraction>,
    /// Count soft warnings as violations for accuracy (default: hard only).
    #[serde(default)]
    pub accuracy_counts_soft: bool,
    /// Rolling number of batches adherence looks back over.
    #[serde(default = "default_adherence_window")]
    pub adherence_window: usize,
    /// How many records a batch is supposed to carry, for completeness.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<ExpectedCount>,
}

fn default_adherence_window() -> usize {
    30
}

/// Where the completeness denominator comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedCount {
    /// A fixed per-batch record count.
    Fixed(u64),
    /// One record expected per current row of a reference table
    /// (e.g. one report per store in the store list).
    PerCurrentRow { table: String },
}

impl SloConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |f: &Fraction, what: &str| -> Result<()> {
            if f.ratio() < Fraction::zero().ratio() || f.ratio() > Fraction::one().ratio() {
                Err(Error::InvalidArgument(format!("{what} must lie in [0, 1], got {f}")))
            } else {
                Ok(())
            }
        };
        if let Some(s) = self.max_freshness_seconds {
            if s < 0 {
                return Err(Error::InvalidArgument(format!(
                    "max_freshness_seconds must be non-negative, got {s}"
                )));
            }
        }
        if let Some(f) = &self.min_completeness {
            unit(f, "min_completeness")?;
        }
        if let Some(f) = &self.min_accuracy {
            unit(f, "min_accuracy")?;
        }
        if let Some(f) = &self.min_adherence {
            unit(f, "min_adherence")?;
        }
        if self.adherence_window == 0 {
            return Err(Error::InvalidArgument("adherence_window must be at least 1".into()));
        }
        Ok(())
    }
}

/// Remediation suggested alongside an alert.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuggestedAction {
    Reingest,
    Recompute,
    Backfill,
    Review,
}

/// One threshold violation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub dataset: String,
    pub sli: String,
    pub observed: String,
    pub threshold: String,
    #[serde(with = "ts_serde")]
    pub at: DateTime<Utc>,
    pub suggested_action: SuggestedAction,
}

/// Compact record of one validated batch, enough for every indicator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub batch_id: String,
    #[serde(with = "ts_serde")]
    pub at: DateTime<Utc>,
    pub total_records: u64,
    pub total_hard_violations: u64,
    /// Records with at least one hard violation.
    pub violating_records_hard: u64,
    /// Records with at least one violation of any severity.
    pub violating_records_any: u64,
}

impl BatchOutcome {
    /// Summarize a verdict; violations are counted per record, not per
    /// rule, so a record breaking two rules counts once.
    pub fn from_verdict(v: &BatchVerdict, at: DateTime<Utc>) -> Self {
        let hard = v
            .record_verdicts
            .iter()
            .filter(|r| r.status == RecordStatus::Quarantined)
            .count() as u64;
        let any = v
            .record_verdicts
            .iter()
            .filter(|r| r.status == RecordStatus::Quarantined || !r.soft_warnings.is_empty())
            .count() as u64;
        BatchOutcome {
            batch_id: v.batch_id.clone(),
            at,
            total_records: v.record_verdicts.len() as u64,
            total_hard_violations: v.total_hard_violations,
            violating_records_hard: hard,
            violating_records_any: any,
        }
    }
}

/// Result of a fraction-valued indicator with its qualifiers.
#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorResult {
    pub value: Fraction,
    pub vacuous: bool,
    pub surplus: bool,
}

impl IndicatorResult {
    fn plain(value: Fraction) -> Self {
        IndicatorResult {
            value,
            vacuous: false,
            surplus: false,
        }
    }
}

/// Seconds between the latest batch and now. A batch timestamp in the
/// future is reported as clock skew, never clamped away.
pub fn compute_freshness(latest_batch_ts: DateTime<Utc>, now: DateTime<Utc>) -> Result<i64> {
    if now < latest_batch_ts {
        return Err(Error::ClockSkew(format!(
            "latest batch at {} is ahead of now {}",
            format_ts(&latest_batch_ts),
            format_ts(&now)
        )));
    }
    Ok((now - latest_batch_ts).num_seconds())
}

/// Received over expected. Nothing expected is vacuously complete; more
/// than expected clamps to 1 with a surplus note — extra data is not
/// incompleteness.
pub fn compute_completeness(received: u64, expected: u64) -> IndicatorResult {
    if expected == 0 {
        return IndicatorResult {
            value: Fraction::one(),
            vacuous: true,
            surplus: received > 0,
        };
    }
    if received > expected {
        return IndicatorResult {
            value: Fraction::one(),
            vacuous: false,
            surplus: true,
        };
    }
    IndicatorResult::plain(Fraction::from_counts(received, expected))
}

/// One minus violating records over total records; an empty record set is
/// vacuously accurate.
pub fn compute_accuracy(violations: u64, total: u64) -> Result<IndicatorResult> {
    if violations > total {
        return Err(Error::InvalidArgument(format!(
            "{violations} violating records cannot exceed {total} total records"
        )));
    }
    if total == 0 {
        return Ok(IndicatorResult {
            value: Fraction::one(),
            vacuous: true,
            surplus: false,
        });
    }
    Ok(IndicatorResult::plain(Fraction::from_counts(violations, total).complement()))
}

/// Compliant batches (zero hard violations — soft-only still complies)
/// over all batches in the log; an empty log is vacuously adherent.
pub fn compute_adherence<'a>(log: impl IntoIterator<Item = &'a BatchOutcome>) -> IndicatorResult {
    let mut total = 0u64;
    let mut compliant = 0u64;
    for outcome in log {
        total += 1;
        if outcome.total_hard_violations == 0 {
            compliant += 1;
        }
    }
    if total == 0 {
        return IndicatorResult {
            value: Fraction::one(),
            vacuous: true,
            surplus: false,
        };
    }
    IndicatorResult::plain(Fraction::from_counts(compliant, total))
}

/// One alert per violated threshold. Freshness alerts when strictly above
/// its maximum; fractions alert when strictly below their minimum, so a
/// value exactly at its threshold passes.
pub fn evaluate_slos(sample: &SliSample, config: &SloConfig) -> Result<Vec<Alert>> {
    config.validate()?;
    let mut alerts = Vec::new();
    let mut push = |sli: &str, observed: String, threshold: String, action: SuggestedAction| {
        alerts.push(Alert {
            dataset: sample.dataset.clone(),
            sli: sli.to_string(),
            observed,
            threshold,
            at: sample.at,
            suggested_action: action,
        });
    };
    if let Some(max) = config.max_freshness_seconds {
        if sample.freshness_seconds > max {
            push(
                "freshness",
                format!("{} s", sample.freshness_seconds),
                format!("{max} s"),
                SuggestedAction::Reingest,
            );
        }
    }
    if let Some(min) = &config.min_completeness {
        if sample.completeness.ratio() < min.ratio() {
            push(
                "completeness",
                sample.completeness.to_string(),
                min.to_string(),
                SuggestedAction::Backfill,
            );
        }
    }
    if let Some(min) = &config.min_accuracy {
        if sample.accuracy.ratio() < min.ratio() {
            push("accuracy", sample.accuracy.to_string(), min.to_string(), SuggestedAction::Review);
        }
    }
    if let Some(min) = &config.min_adherence {
        if sample.adherence.ratio() < min.ratio() {
            push("adherence", sample.adherence.to_string(), min.to_string(), SuggestedAction::Review);
        }
    }
    Ok(alerts)
}

/// Everything one quality check produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityCheck {
    pub sample: SliSample,
    pub alerts: Vec<Alert>,
}

/// Per-dataset quality state under `quality/<dataset>/`.
pub struct QualityStore {
    ws: Workspace,
    dir: PathBuf,
}

impl QualityStore {
    pub fn open(ws: &Workspace) -> Self {
        QualityStore {
            ws: ws.clone(),
            dir: ws.quality_dir(),
        }
    }

    fn dataset_dir(&self, dataset: &str) -> PathBuf {
        self.dir.join(dataset)
    }

    fn slo_path(&self, dataset: &str) -> PathBuf {
        self.dataset_dir(dataset).join("slo.json")
    }

    fn batches_path(&self, dataset: &str) -> PathBuf {
        self.dataset_dir(dataset).join("batches.ndjson")
    }

    fn alerts_path(&self, dataset: &str) -> PathBuf {
        self.dataset_dir(dataset).join("alerts.ndjson")
    }

    fn sli_path(&self, dataset: &str, at: &DateTime<Utc>) -> PathBuf {
        self.dataset_dir(dataset)
            .join(format!("sli-{}.ndjson", at.format("%Y-%m-%d")))
    }

    pub fn put_slo(&self, config: &SloConfig) -> Result<()> {
        storage::check_safe_name("dataset", &config.dataset)?;
        config.validate()?;
        let mut text = serde_json::to_string_pretty(&serde_json::to_value(config).unwrap()).unwrap();
        text.push('\n');
        storage::atomic_write(&self.slo_path(&config.dataset), text.as_bytes())
    }

    pub fn get_slo(&self, dataset: &str) -> Result<SloConfig> {
        let bytes = match std::fs::read(self.slo_path(dataset)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::NotFound(format!("objectives for dataset {dataset}")))
            }
            Err(e) => return Err(Error::storage("read objectives", e)),
        };
        let config: SloConfig =
            serde_json::from_slice(&bytes).map_err(|e| Error::Storage(format!("corrupt objectives: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Append one validated-batch summary to the dataset's batch log.
    pub fn record_batch(&self, dataset: &str, outcome: &BatchOutcome) -> Result<()> {
        storage::check_safe_name("dataset", dataset)?;
        let _lock = FileLock::acquire(&self.dataset_dir(dataset).join(".lock"))?;
        storage::append_line(&self.batches_path(dataset), &serde_json::to_string(outcome).unwrap())
    }

    /// The full batch log, append order.
    pub fn batch_log(&self, dataset: &str) -> Result<Vec<BatchOutcome>> {
        let mut out = Vec::new();
        for line in storage::read_lines(&self.batches_path(dataset))? {
            out.push(serde_json::from_str(&line).map_err(|e| Error::Storage(format!("corrupt batch log: {e}")))?);
        }
        Ok(out)
    }

    /// Append a sample to its daily log. A sample timestamped earlier than
    /// the latest stored one is accepted but flagged `out_of_order`.
    pub fn append_sli(&self, sample: &SliSample) -> Result<SliSample> {
        storage::check_safe_name("dataset", &sample.dataset)?;
        let _lock = FileLock::acquire(&self.dataset_dir(&sample.dataset).join(".lock"))?;
        let mut stored = sample.clone();
        if let Some(last) = self.read_sli_history(&sample.dataset, None, None)?.last() {
            if sample.at < last.at && !stored.flags.iter().any(|f| f == "out_of_order") {
                stored.flags.push("out_of_order".to_string());
                stored.flags.sort();
            }
        }
        storage::append_line(
            &self.sli_path(&sample.dataset, &sample.at),
            &serde_json::to_string(&stored).unwrap(),
        )?;
        Ok(stored)
    }

    /// Samples within the boundary-inclusive range, ordered by timestamp
    /// (stable over append order for equal timestamps).
    pub fn read_sli_history(
        &self,
        dataset: &str,
        from: Option<DateTime<Utc>>,
        to: Option<DateTime<Utc>>,
    ) -> Result<Vec<SliSample>> {
        let mut samples = Vec::new();
        for name in storage::list_dir_sorted(&self.dataset_dir(dataset), |n| {
            n.starts_with("sli-") && n.ends_with(".ndjson")
        })? {
            for line in storage::read_lines(&self.dataset_dir(dataset).join(&name))? {
                let s: SliSample =
                    serde_json::from_str(&line).map_err(|e| Error::Storage(format!("corrupt indicator log: {e}")))?;
                samples.push(s);
            }
        }
        samples.sort_by_key(|s| s.at);
        samples.retain(|s| from.map(|f| s.at >= f).unwrap_or(true) && to.map(|t| s.at <= t).unwrap_or(true));
        Ok(samples)
    }

    pub fn append_alerts(&self, dataset: &str, alerts: &[Alert]) -> Result<()> {
        if alerts.is_empty() {
            return Ok(());
        }
        let _lock = FileLock::acquire(&self.dataset_dir(dataset).join(".lock"))?;
        for a in alerts {
            storage::append_line(&self.alerts_path(dataset), &serde_json::to_string(a).unwrap())?;
        }
        Ok(())
    }

    pub fn read_alerts(&self, dataset: &str) -> Result<Vec<Alert>> {
        let mut out = Vec::new();
        for line in storage::read_lines(&self.alerts_path(dataset))? {
            out.push(serde_json::from_str(&line).map_err(|e| Error::Storage(format!("corrupt alert log: {e}")))?);
        }
        Ok(out)
    }

    /// Resolve the expected-count denominator for completeness.
    fn resolve_expected(&self, expected: &ExpectedCount) -> Result<u64> {
        match expected {
            ExpectedCount::Fixed(n) => Ok(*n),
            ExpectedCount::PerCurrentRow { table } => {
                let t = TableStore::open(&self.ws).open_table(table)?;
                Ok(t.current()?.len() as u64)
            }
        }
    }

    /// Compute every indicator from the dataset's batch log and stored
    /// objectives, persist the sample and any alerts, and return both.
    pub fn check(&self, dataset: &str, now: DateTime<Utc>) -> Result<QualityCheck> {
        let config = self.get_slo(dataset)?;
        let log = self.batch_log(dataset)?;
        let window = log.len().min(config.adherence_window);
        let recent = &log[log.len() - window..];

        let mut flags = Vec::new();
        let (freshness_seconds, latest) = match log.last() {
            Some(last) => (compute_freshness(last.at, now)?, Some(last)),
            None => {
                flags.push("freshness_vacuous".to_string());
                (0, None)
            }
        };
        let completeness = match (&config.expected, latest) {
            (Some(expected), Some(last)) => compute_completeness(last.total_records, self.resolve_expected(expected)?),
            _ => IndicatorResult {
                value: Fraction::one(),
                vacuous: true,
                surplus: false,
            },
        };
        if completeness.vacuous {
            flags.push("completeness_vacuous".to_string());
        }
        if completeness.surplus {
            flags.push("completeness_surplus".to_string());
        }
        let accuracy = match latest {
            Some(last) => {
                let violations = if config.accuracy_counts_soft {
                    last.violating_records_any
                } else {
                    last.violating_records_hard
                };
                compute_accuracy(violations, last.total_records)?
            }
            None => IndicatorResult {
                value: Fraction::one(),
                vacuous: true,
                surplus: false,
            },
        };
        if accuracy.vacuous {
            flags.push("accuracy_vacuous".to_string());
        }
        let adherence = compute_adherence(recent.iter());
        if adherence.vacuous {
            flags.push("adherence_vacuous".to_string());
        }
        flags.sort();

        let sample = SliSample {
            dataset: dataset.to_string(),
            at: now,
            freshness_seconds,
            completeness: completeness.value,
            accuracy: accuracy.value,
            adherence: adherence.value,
            window: format!("last {window} of {} batches", log.len()),
            flags,
        };
        let alerts = evaluate_slos(&sample, &config)?;
        let sample = self.append_sli(&sample)?;
        self.append_alerts(dataset, &alerts)?;
        Ok(QualityCheck { sample, alerts })
    }
}
