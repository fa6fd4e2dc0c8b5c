//! The validation gate: evaluate a batch against a contract, count hard
//! violations, and decide whether the batch may proceed.
//!
//! The batch-level count `V` is the total number of hard-rule violations
//! across all records; a batch halts exactly when `V > 0`. Each record is
//! checked in a fixed order — declared-type conformance first, then the
//! contract's rules in declaration order, then undeclared-field checks — so
//! verdicts are deterministic and per-record results are independent of
//! batch order. Rejected records can be persisted to the quarantine store
//! together with their violations and the contract identity.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::contract::{Contract, ContractRef, Rule, RuleKind, Severity};
use crate::error::{Error, Result};
use crate::records::Record;
use crate::storage;
use crate::value::{row_from_json, row_to_json, Row, Value};
use crate::Workspace;

/// One rule failure on one record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule_id: String,
    pub message: String,
}

impl Violation {
    fn new(rule_id: &str, field: &str, detail: impl AsRef<str>) -> Self {
        Violation {
            rule_id: rule_id.to_string(),
            message: format!("rule {rule_id} failed on field {field}: {}", detail.as_ref()),
        }
    }
}

/// Outcome for one record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordStatus {
    Pass,
    Quarantined,
}

/// Per-record verdict: quarantined exactly when any hard violation fired.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordVerdict {
    pub record_key: String,
    pub status: RecordStatus,
    pub hard_violations: Vec<Violation>,
    pub soft_warnings: Vec<Violation>,
}

/// Whether the batch may proceed to loading.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Proceed,
    Halt,
}

/// Batch verdict: verdicts in input order plus the aggregate decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchVerdict {
    pub batch_id: String,
    pub contract: ContractRef,
    /// Total hard violations across all records (`V`).
    pub total_hard_violations: u64,
    /// `Halt` exactly when `total_hard_violations > 0`.
    pub decision: Decision,
    pub record_verdicts: Vec<RecordVerdict>,
}

impl BatchVerdict {
    pub fn quarantined_count(&self) -> usize {
        self.record_verdicts.iter().filter(|r| r.status == RecordStatus::Quarantined).count()
    }

    pub fn soft_warned_count(&self) -> usize {
        self.record_verdicts.iter().filter(|r| !r.soft_warnings.is_empty()).count()
    }
}

/// Contract with regexes compiled once per batch.
struct Compiled<'a> {
    contract: &'a Contract,
    regexes: BTreeMap<&'a str, regex::Regex>,
}

impl<'a> Compiled<'a> {
    fn new(contract: &'a Contract) -> Self {
        let mut regexes = BTreeMap::new();
        for r in &contract.rules {
            if let RuleKind::Format { pattern } = &r.kind {
                // parse_contract already proved the pattern compiles
                regexes.insert(r.id.as_str(), regex::Regex::new(pattern).unwrap());
            }
        }
        Compiled { contract, regexes }
    }
}

fn check_rule(rule: &Rule, coerced: &BTreeMap<&str, Value>, regexes: &BTreeMap<&str, regex::Regex>) -> Option<Violation> {
    let field = rule.field.as_deref()?;
    let value = coerced.get(field);
    match &rule.kind {
        RuleKind::Required => {
            if value.is_none() {
                return Some(Violation::new(&rule.id, field, "value missing"));
            }
        }
        // Range, format, and enum checks apply only to present values that
        // passed the type check; absence is the required rule's concern.
        RuleKind::Range { min, max } => {
            let d = value?.as_decimal()?;
            if let Some(lo) = min {
                if d < *lo {
                    return Some(Violation::new(&rule.id, field, format!("value {d} below minimum {lo}")));
                }
            }
            if let Some(hi) = max {
                if d > *hi {
                    return Some(Violation::new(&rule.id, field, format!("value {d} above maximum {hi}")));
                }
            }
        }
        RuleKind::Format { pattern } => {
            let value = value?;
            if let Value::Text(s) = value {
                if !regexes[rule.id.as_str()].is_match(s) {
                    return Some(Violation::new(&rule.id, field, format!("value {s:?} does not match pattern {pattern:?}")));
                }
            }
        }
        RuleKind::Enum { allowed } => {
            let value = value?;
            if !allowed.iter().any(|a| a.semantic_eq(value)) {
                return Some(Violation::new(
                    &rule.id,
                    field,
                    format!("value {} not in allowed set", value.canonical_string()),
                ));
            }
        }
    }
    None
}

fn evaluate_one(record: &Record, compiled: &Compiled, record_key: String) -> RecordVerdict {
    let contract = compiled.contract;
    let mut hard = Vec::new();
    let mut soft = Vec::new();

    // 1. Declared-type conformance, in field declaration order. A field
    //    that fails its type check is excluded from later value checks so a
    //    single bad value is counted once.
    let mut coerced: BTreeMap<&str, Value> = BTreeMap::new();
    for f in &contract.fields {
        if let Some(v) = record.values.get(&f.name) {
            match v.coerce(f.datatype) {
                Ok(c) => {
                    coerced.insert(f.name.as_str(), c);
                }
                Err(detail) => {
                    hard.push(Violation::new(&format!("type:{}", f.name), &f.name, detail));
                }
            }
        }
    }

    // 2. Contract rules in declaration order.
    for rule in &contract.rules {
        if let Some(v) = check_rule(rule, &coerced, &compiled.regexes) {
            match rule.severity {
                Severity::Hard => hard.push(v),
                Severity::Soft => soft.push(v),
            }
        }
    }

    // 3. Fields the contract does not declare are schema drift and count as
    //    hard violations (sorted by field name via the record's map order).
    for name in record.values.keys() {
        if contract.field(name).is_none() {
            hard.push(Violation::new(&format!("undeclared:{name}"), name, "field not declared in contract"));
        }
    }

    let status = if hard.is_empty() { RecordStatus::Pass } else { RecordStatus::Quarantined };
    RecordVerdict {
        record_key,
        status,
        hard_violations: hard,
        soft_warnings: soft,
    }
}

/// Evaluate a single record (outside any batch).
pub fn evaluate_record(record: &Record, contract: &Contract) -> RecordVerdict {
    let compiled = Compiled::new(contract);
    evaluate_one(record, &compiled, record.key(0))
}

/// Evaluate a whole batch: per-record verdicts in input order, the total
/// hard-violation count `V`, and the halt decision (`V > 0`).
pub fn evaluate_batch(records: &[Record], contract: &Contract, batch_id: &str) -> BatchVerdict {
    let compiled = Compiled::new(contract);
    let mut verdicts = Vec::with_capacity(records.len());
    let mut total: u64 = 0;
    for (i, r) in records.iter().enumerate() {
        let v = evaluate_one(r, &compiled, r.key(i));
        total += v.hard_violations.len() as u64;
        verdicts.push(v);
    }
    BatchVerdict {
        batch_id: batch_id.to_string(),
        contract: contract.reference(),
        total_hard_violations: total,
        decision: if total > 0 { Decision::Halt } else { Decision::Proceed },
        record_verdicts: verdicts,
    }
}

/// Five-record transaction batch shared across test modules: record 1002 has a
/// negative amount (hard violation) and 1003 is missing its email (soft
/// warning). Hand-computed verdict: V = 1, halt.
#[cfg(test)]
pub(crate) fn worked_example_batch() -> Vec<Record> {
    fn txn(client: &str, amount: &str, email: Option<&str>) -> Record {
        let mut row = Row::new();
        row.insert("client_id".into(), Value::Text(client.into()));
        row.insert(
            "amount".into(),
            Value::Decimal(crate::value::Decimal::parse(amount).unwrap()),
        );
        if let Some(e) = email {
            row.insert("email".into(), Value::Text(e.into()));
        }
        Record::new(row)
    }
    vec![
        txn("1001", "50", Some("a@example.com")),
        txn("1002", "-20", Some("b@example.com")),
        txn("1003", "30", None),
        txn("1004", "0", Some("d@example.com")),
        txn("1005", "10", Some("e@example.com")),
    ]
}

// --------------------------------------------------------------- quarantine --

/// Reference to one written quarantine file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineRef {
    pub batch_id: String,
    /// File name inside the quarantine directory.
    pub file: String,
    /// Number of quarantined records written.
    pub records: usize,
}

/// One line of a quarantine file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuarantineEntry {
    pub contract: QuarantineContract,
    pub hard_violations: Vec<Violation>,
    pub record: serde_json::Value,
    pub soft_warnings: Vec<Violation>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineContract {
    pub name: String,
    pub version: u32,
}

impl QuarantineEntry {
    /// The rejected record's values.
    pub fn record_row(&self) -> Result<Row> {
        row_from_json(&self.record)
    }
}

/// Append-only store of rejected records under `quarantine/<batch>.ndjson`.
/// A batch's file is written once and never rewritten.
pub struct QuarantineStore {
    dir: PathBuf,
}

impl QuarantineStore {
    pub fn open(ws: &Workspace) -> Self {
        QuarantineStore { dir: ws.quarantine_dir() }
    }

    fn path(&self, batch_id: &str) -> PathBuf {
        self.dir.join(format!("{batch_id}.ndjson"))
    }

    /// Persist the quarantined records of a batch. Fails when the verdict
    /// has no quarantined records, or when this batch was already written.
    pub fn write(&self, verdict: &BatchVerdict, records: &[Record]) -> Result<QuarantineRef> {
        storage::check_safe_name("batch id", &verdict.batch_id)?;
        if records.len() != verdict.record_verdicts.len() {
            return Err(Error::InvalidArgument(format!(
                "verdict covers {} records but {} were supplied",
                verdict.record_verdicts.len(),
                records.len()
            )));
        }
        let quarantined: Vec<usize> = verdict
            .record_verdicts
            .iter()
            .enumerate()
            .filter(|(_, v)| v.status == RecordStatus::Quarantined)
            .map(|(i, _)| i)
            .collect();
        if quarantined.is_empty() {
            return Err(Error::InvalidArgument(format!("batch {} has no quarantined records", verdict.batch_id)));
        }
        let path = self.path(&verdict.batch_id);
        if path.exists() {
            return Err(Error::VersionConflict(format!("quarantine for batch {} already written", verdict.batch_id)));
        }
        let mut out = String::new();
        for i in quarantined.iter() {
            let entry = QuarantineEntry {
                contract: QuarantineContract {
                    name: verdict.contract.name.clone(),
                    version: verdict.contract.version,
                },
                hard_violations: verdict.record_verdicts[*i].hard_violations.clone(),
                record: row_to_json(&records[*i].values),
                soft_warnings: verdict.record_verdicts[*i].soft_warnings.clone(),
            };
            out.push_str(&serde_json::to_string(&entry).unwrap());
            out.push('\n');
        }
        storage::atomic_write(&path, out.as_bytes())?;
        Ok(QuarantineRef {
            batch_id: verdict.batch_id.clone(),
            file: format!("{}.ndjson", verdict.batch_id),
            records: quarantined.len(),
        })
    }

    /// Read back one batch's quarantined records.
    pub fn read(&self, batch_id: &str) -> Result<Vec<QuarantineEntry>> {
        let path = self.path(batch_id);
        if !path.exists() {
            return Err(Error::NotFound(format!("quarantine for batch {batch_id}")));
        }
        let mut out = Vec::new();
        for line in storage::read_lines(&path)? {
            out.push(serde_json::from_str(&line).map_err(|e| Error::MalformedDocument(format!("quarantine line: {e}")))?);
        }
        Ok(out)
    }

    /// Batch ids with quarantine files, sorted.
    pub fn list(&self) -> Result<Vec<String>> {
        Ok(storage::list_dir_sorted(&self.dir, |n| n.ends_with(".ndjson"))?
            .into_iter()
            .map(|n| n.trim_end_matches(".ndjson").to_string())
            .collect())
    }
}
