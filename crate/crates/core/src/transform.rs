//! Deterministic transformation templates over pinned inputs.
//!
//! A template names its inputs (versioned tables or raw sources), declares
//! each input's fields, and lists a plan of relational steps: select,
//! filter, equi-join, group-by with aggregates, and derived columns. Plans
//! are statically checked at registration so every field reference resolves
//! before any data is touched.
//!
//! Running a template binds every input to a pin — an as-of instant for a
//! table, an explicit segment list for a raw source — executes the plan,
//! sorts the output canonically, and persists it as the next version of a
//! curated dataset together with its content digest and lineage back to the
//! pins. Replaying a version re-executes with the original pins and fails
//! loudly if the digest no longer matches.
//!
//! Missing-value semantics follow common relational practice: comparisons
//! and arithmetic over a missing value yield missing, `sum`/`min`/`max`/`avg`
//! ignore missing inputs (and are themselves missing when nothing remains),
//! and `count` counts non-missing values.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::contract::FieldSpec;
use crate::error::{Error, Result};
use crate::expr::{ArithExpr, FilterExpr};
use crate::raw::RawStore;
use crate::storage::{self, FileLock};
use crate::value::{canonical_row_json, ts_serde, Datatype, Decimal, Row, Value};
use crate::versioned::TableStore;
use crate::Workspace;

/// Where an input's rows come from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputSource {
    /// A versioned table, pinned by an as-of instant.
    Table(String),
    /// A raw source, pinned by an explicit segment list.
    Raw(String),
    /// An earlier curated dataset, pinned by version number.
    Dataset(String),
}

impl fmt::Display for InputSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputSource::Table(name) => write!(f, "table:{name}"),
            InputSource::Raw(name) => write!(f, "raw:{name}"),
            InputSource::Dataset(name) => write!(f, "dataset:{name}"),
        }
    }
}

/// One named input of a template, with its declared fields. Rows are
/// projected onto the declared fields and coerced to the declared types
/// when the input is resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateInput {
    pub role: String,
    pub from: InputSource,
    pub fields: Vec<FieldSpec>,
}

/// Aggregate functions available in group-by steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggOp {
    Sum,
    Count,
    Min,
    Max,
    Avg,
}

impl AggOp {
    pub fn name(self) -> &'static str {
        match self {
            AggOp::Sum => "sum",
            AggOp::Count => "count",
            AggOp::Min => "min",
            AggOp::Max => "max",
            AggOp::Avg => "avg",
        }
    }
}

/// One aggregate inside a group-by step. `field: None` is only valid for
/// `count`, which then counts group rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub op: AggOp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    /// Output column name.
    pub name: String,
}

/// Join flavor: inner drops unmatched left rows, left-outer keeps them
/// with the right side's fields missing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinKind {
    #[default]
    Inner,
    LeftOuter,
}

/// One relational step of a plan, applied to the current row stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    /// Keep only the named fields.
    Select { fields: Vec<String> },
    /// Keep only rows definitely satisfying the predicate.
    Filter { predicate: FilterExpr },
    /// Equi-join the stream with another input role on shared key fields.
    Join {
        with: String,
        on: Vec<String>,
        #[serde(default)]
        kind: JoinKind,
    },
    /// Group by key fields and compute aggregates.
    GroupBy {
        keys: Vec<String>,
        aggregates: Vec<Aggregate>,
    },
    /// Append a column computed by an arithmetic expression.
    Derive { name: String, expr: ArithExpr },
    /// Truncate a timestamp field to its UTC calendar date. With
    /// `name == from` the field is replaced in place.
    DeriveDate { name: String, from: String },
}

impl Step {
    fn describe(&self) -> &'static str {
        match self {
            Step::Select { .. } => "select",
            Step::Filter { .. } => "filter",
            Step::Join { .. } => "join",
            Step::GroupBy { .. } => "group_by",
            Step::Derive { .. } => "derive",
            Step::DeriveDate { .. } => "derive_date",
        }
    }
}

/// A registered transformation: inputs, plan, output schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformTemplate {
    pub template_id: String,
    pub inputs: Vec<TemplateInput>,
    pub plan: Vec<Step>,
    pub output_schema: Vec<FieldSpec>,
}

impl TransformTemplate {
    /// Canonical JSON text (sorted keys, compact) — the digest input.
    pub fn canonical_text(&self) -> String {
        serde_json::to_string(&serde_json::to_value(self).unwrap()).unwrap()
    }

    pub fn digest(&self) -> String {
        storage::sha256_hex(self.canonical_text().as_bytes())
    }
}

/// How one input is bound for a run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PinValue {
    /// Table state at this instant.
    Asof(#[serde(with = "ts_serde")] DateTime<Utc>),
    /// Exactly these raw segments, in order.
    Segments(Vec<String>),
    /// One specific curated dataset version.
    Version(u64),
}

impl fmt::Display for PinValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PinValue::Asof(t) => write!(f, "asof={}", crate::value::format_ts(t)),
            PinValue::Segments(ids) => write!(f, "segments=[{}]", ids.join(",")),
            PinValue::Version(v) => write!(f, "version={v}"),
        }
    }
}

/// Provenance edge from one input pin to a curated dataset version.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageEdge {
    pub from: String,
    pub to: String,
}

/// Metadata of one persisted curated dataset version.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuratedVersion {
    pub dataset_id: String,
    pub version: u64,
    pub template_id: String,
    pub template_digest: String,
    pub input_pins: BTreeMap<String, PinValue>,
    /// SHA-256 of the persisted canonical row file.
    pub content_digest: String,
    #[serde(with = "ts_serde")]
    pub created_at: DateTime<Utc>,
    pub row_count: u64,
    pub output_schema: Vec<FieldSpec>,
    pub lineage: Vec<LineageEdge>,
    /// Set when this version was produced by replaying an earlier one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_of: Option<u64>,
}

fn plan_err(step: usize, reason: impl Into<String>) -> Error {
    Error::PlanError {
        step,
        reason: reason.into(),
    }
}

/// Statically check a template: unique roles, resolvable field references
/// at every step, type-sound aggregates and derivations, and an output
/// schema matching the plan's final shape. Returns the final schema.
///
/// `step` in a returned [`Error::PlanError`] is the offending plan index;
/// input-declaration problems use step 0 and output-schema problems use
/// `plan.len()`.
pub fn check_template(t: &TransformTemplate) -> Result<BTreeMap<String, Datatype>> {
    storage::check_safe_name("template id", &t.template_id)
        .map_err(|e| plan_err(0, e.to_string()))?;
    if t.inputs.is_empty() {
        return Err(plan_err(0, "a template needs at least one input"));
    }
    let mut input_schemas: BTreeMap<&str, BTreeMap<String, Datatype>> = BTreeMap::new();
    for input in &t.inputs {
        storage::check_safe_name("input role", &input.role).map_err(|e| plan_err(0, e.to_string()))?;
        if input.fields.is_empty() {
            return Err(plan_err(0, format!("input {} declares no fields", input.role)));
        }
        let mut schema = BTreeMap::new();
        for f in &input.fields {
            if schema.insert(f.name.clone(), f.datatype).is_some() {
                return Err(plan_err(0, format!("input {} declares field {} twice", input.role, f.name)));
            }
        }
        if input_schemas.insert(&input.role, schema).is_some() {
            return Err(plan_err(0, format!("duplicate input role {}", input.role)));
        }
    }

    let primary = &t.inputs[0].role;
    let mut schema = input_schemas[primary.as_str()].clone();
    for (i, step) in t.plan.iter().enumerate() {
        let missing = |f: &str| plan_err(i, format!("{} references unknown field {f}", step.describe()));
        match step {
            Step::Select { fields } => {
                if fields.is_empty() {
                    return Err(plan_err(i, "select needs at least one field"));
                }
                let mut next = BTreeMap::new();
                for f in fields {
                    let dt = *schema.get(f).ok_or_else(|| missing(f))?;
                    if next.insert(f.clone(), dt).is_some() {
                        return Err(plan_err(i, format!("select lists field {f} twice")));
                    }
                }
                schema = next;
            }
            Step::Filter { predicate } => {
                for f in predicate.fields() {
                    if !schema.contains_key(&f) {
                        return Err(missing(&f));
                    }
                }
            }
            Step::Join { with, on, kind: _ } => {
                if with == primary {
                    return Err(plan_err(i, format!("join cannot target the primary input {with}")));
                }
                let right = input_schemas
                    .get(with.as_str())
                    .ok_or_else(|| plan_err(i, format!("join references unknown input role {with}")))?;
                if on.is_empty() {
                    return Err(plan_err(i, "join needs at least one key field"));
                }
                for k in on {
                    let l = *schema.get(k).ok_or_else(|| missing(k))?;
                    let r = *right
                        .get(k)
                        .ok_or_else(|| plan_err(i, format!("join key {k} missing from input {with}")))?;
                    if l != r {
                        return Err(plan_err(
                            i,
                            format!("join key {k} has type {} on the left but {} on {with}", l.name(), r.name()),
                        ));
                    }
                }
                for (f, dt) in right {
                    if on.contains(f) {
                        continue;
                    }
                    if schema.insert(f.clone(), *dt).is_some() {
                        return Err(plan_err(
                            i,
                            format!("join would merge field {f} present on both sides; select it away first"),
                        ));
                    }
                }
            }
            Step::GroupBy { keys, aggregates } => {
                if keys.is_empty() && aggregates.is_empty() {
                    return Err(plan_err(i, "group_by needs keys or aggregates"));
                }
                let mut next = BTreeMap::new();
                for k in keys {
                    let dt = *schema.get(k).ok_or_else(|| missing(k))?;
                    if next.insert(k.clone(), dt).is_some() {
                        return Err(plan_err(i, format!("group_by lists key {k} twice")));
                    }
                }
                for agg in aggregates {
                    let field_dt = match &agg.field {
                        Some(f) => Some(*schema.get(f.as_str()).ok_or_else(|| missing(f))?),
                        None => None,
                    };
                    let out_dt = match (agg.op, field_dt) {
                        (AggOp::Count, _) => Datatype::Integer,
                        (op, None) => {
                            return Err(plan_err(i, format!("{} needs a field", op.name())));
                        }
                        (AggOp::Sum, Some(Datatype::Integer)) => Datatype::Integer,
                        (AggOp::Sum, Some(Datatype::Decimal)) => Datatype::Decimal,
                        (AggOp::Avg, Some(Datatype::Integer | Datatype::Decimal)) => Datatype::Decimal,
                        (AggOp::Sum | AggOp::Avg, Some(dt)) => {
                            return Err(plan_err(
                                i,
                                format!("{} needs a numeric field, {} is {}", agg.op.name(), agg.field.as_ref().unwrap(), dt.name()),
                            ));
                        }
                        (AggOp::Min | AggOp::Max, Some(dt)) => dt,
                    };
                    if next.insert(agg.name.clone(), out_dt).is_some() {
                        return Err(plan_err(i, format!("group_by output name {} collides", agg.name)));
                    }
                }
                schema = next;
            }
            Step::Derive { name, expr } => {
                for f in expr.fields() {
                    if !schema.contains_key(&f) {
                        return Err(missing(&f));
                    }
                }
                let lookup = |f: &str| schema.get(f).copied();
                let dt = expr
                    .result_type(&lookup)
                    .map_err(|e| plan_err(i, e.to_string()))?;
                if schema.insert(name.clone(), dt).is_some() {
                    return Err(plan_err(i, format!("derive would overwrite existing field {name}")));
                }
            }
            Step::DeriveDate { name, from } => {
                let src = *schema.get(from).ok_or_else(|| missing(from))?;
                if !matches!(src, Datatype::Timestamp | Datatype::Date) {
                    return Err(plan_err(
                        i,
                        format!("derive_date needs a timestamp or date field, {from} is {}", src.name()),
                    ));
                }
                if name != from && schema.contains_key(name) {
                    return Err(plan_err(i, format!("derive_date would overwrite existing field {name}")));
                }
                schema.insert(name.clone(), Datatype::Date);
            }
        }
    }

    if t.output_schema.is_empty() {
        return Err(plan_err(t.plan.len(), "output schema is empty"));
    }
    let mut seen = BTreeMap::new();
    for f in &t.output_schema {
        if seen.insert(&f.name, ()).is_some() {
            return Err(plan_err(t.plan.len(), format!("output schema lists {} twice", f.name)));
        }
        match schema.get(&f.name) {
            None => {
                return Err(plan_err(
                    t.plan.len(),
                    format!("output field {} is not produced by the plan", f.name),
                ))
            }
            Some(dt) if *dt != f.datatype => {
                return Err(plan_err(
                    t.plan.len(),
                    format!("output field {} has plan type {} but is declared {}", f.name, dt.name(), f.datatype.name()),
                ))
            }
            Some(_) => {}
        }
    }
    Ok(schema)
}

/// Group key wrapper ordering missing values before present ones and
/// present values canonically.
#[derive(Clone, PartialEq, Eq)]
struct GroupKey(Vec<Option<Value>>);

fn cmp_opt(a: &Option<Value>, b: &Option<Value>) -> Ordering {
    match (a, b) {
        (None, None) => Ordering::Equal,
        (None, Some(_)) => Ordering::Less,
        (Some(_), None) => Ordering::Greater,
        (Some(x), Some(y)) => x.cmp_canonical(y),
    }
}

impl Ord for GroupKey {
    fn cmp(&self, other: &Self) -> Ordering {
        for (a, b) in self.0.iter().zip(other.0.iter()) {
            let ord = cmp_opt(a, b);
            if ord != Ordering::Equal {
                return ord;
            }
        }
        self.0.len().cmp(&other.0.len())
    }
}

impl PartialOrd for GroupKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn exec_err(step: usize, detail: impl fmt::Display) -> Error {
    Error::ExecutionError(format!("step {step}: {detail}"))
}

fn compute_aggregate(step: usize, agg: &Aggregate, rows: &[&Row]) -> Result<Option<Value>> {
    let values: Vec<&Value> = match &agg.field {
        Some(f) => rows.iter().filter_map(|r| r.get(f)).collect(),
        None => return Ok(Some(Value::Integer(rows.len() as i64))),
    };
    let field = agg.field.as_deref().unwrap_or("");
    match agg.op {
        AggOp::Count => Ok(Some(Value::Integer(values.len() as i64))),
        AggOp::Sum | AggOp::Avg => {
            if values.is_empty() {
                return Ok(None);
            }
            let all_int = values.iter().all(|v| matches!(v, Value::Integer(_)));
            if all_int && agg.op == AggOp::Sum {
                let mut total = 0i64;
                for v in &values {
                    if let Value::Integer(i) = v {
                        total = total
                            .checked_add(*i)
                            .ok_or_else(|| exec_err(step, format!("sum of {field} overflows")))?;
                    }
                }
                Ok(Some(Value::Integer(total)))
            } else {
                let mut total = Decimal::zero();
                for v in &values {
                    let d = v
                        .as_decimal()
                        .ok_or_else(|| exec_err(step, format!("{} of non-numeric {field}", agg.op.name())))?;
                    total = total
                        .checked_add(d)
                        .ok_or_else(|| exec_err(step, format!("{} of {field} overflows", agg.op.name())))?;
                }
                if agg.op == AggOp::Sum {
                    Ok(Some(Value::Decimal(total)))
                } else {
                    let n = Decimal::from_int(values.len() as i64);
                    let avg = total
                        .checked_div(n)
                        .ok_or_else(|| exec_err(step, format!("avg of {field} overflows")))?;
                    Ok(Some(Value::Decimal(avg)))
                }
            }
        }
        AggOp::Min | AggOp::Max => {
            let mut best: Option<&Value> = None;
            for v in values {
                best = Some(match best {
                    None => v,
                    Some(b) => {
                        let ord = b.compare_semantic(v).ok_or_else(|| {
                            exec_err(step, format!("{} over incomparable values of {field}", agg.op.name()))
                        })?;
                        let take_new = match agg.op {
                            AggOp::Min => ord == Ordering::Greater,
                            _ => ord == Ordering::Less,
                        };
                        if take_new {
                            v
                        } else {
                            b
                        }
                    }
                });
            }
            Ok(best.cloned())
        }
    }
}

/// Execute a checked plan over resolved inputs (role -> rows), returning
/// output rows projected to the output schema, coerced to declared types,
/// and sorted canonically by the output fields in schema order.
pub fn execute_plan(t: &TransformTemplate, inputs: &BTreeMap<String, Vec<Row>>) -> Result<Vec<Row>> {
    check_template(t)?;
    for input in &t.inputs {
        if !inputs.contains_key(&input.role) {
            return Err(Error::ExecutionError(format!("no rows bound for input {}", input.role)));
        }
    }
    let mut rows: Vec<Row> = inputs[&t.inputs[0].role].clone();
    for (i, step) in t.plan.iter().enumerate() {
        match step {
            Step::Select { fields } => {
                rows = rows
                    .into_iter()
                    .map(|mut r| {
                        let mut out = Row::new();
                        for f in fields {
                            if let Some(v) = r.remove(f) {
                                out.insert(f.clone(), v);
                            }
                        }
                        out
                    })
                    .collect();
            }
            Step::Filter { predicate } => {
                rows.retain(|r| predicate.keeps(r));
            }
            Step::Join { with, on, kind } => {
                let right_rows = &inputs[with];
                let mut joined = Vec::new();
                for left in &rows {
                    let mut matched = false;
                    for right in right_rows {
                        let hit = on.iter().all(|k| match (left.get(k), right.get(k)) {
                            (Some(a), Some(b)) => a.semantic_eq(b),
                            _ => false,
                        });
                        if hit {
                            matched = true;
                            let mut merged = left.clone();
                            for (f, v) in right {
                                if !on.contains(f) {
                                    merged.insert(f.clone(), v.clone());
                                }
                            }
                            joined.push(merged);
                        }
                    }
                    if !matched && *kind == JoinKind::LeftOuter {
                        joined.push(left.clone());
                    }
                }
                rows = joined;
            }
            Step::GroupBy { keys, aggregates } => {
                let mut groups: BTreeMap<GroupKey, Vec<&Row>> = BTreeMap::new();
                for r in &rows {
                    let gk = GroupKey(keys.iter().map(|k| r.get(k).cloned()).collect());
                    groups.entry(gk).or_default().push(r);
                }
                let mut out = Vec::new();
                for (gk, members) in &groups {
                    let mut row = Row::new();
                    for (k, v) in keys.iter().zip(gk.0.iter()) {
                        if let Some(v) = v {
                            row.insert(k.clone(), v.clone());
                        }
                    }
                    for agg in aggregates {
                        if let Some(v) = compute_aggregate(i, agg, members)? {
                            row.insert(agg.name.clone(), v);
                        }
                    }
                    out.push(row);
                }
                rows = out;
            }
            Step::Derive { name, expr } => {
                for r in &mut rows {
                    if let Some(v) = expr.eval(r).map_err(|e| exec_err(i, e))? {
                        r.insert(name.clone(), v);
                    }
                }
            }
            Step::DeriveDate { name, from } => {
                for r in &mut rows {
                    let derived = match r.get(from) {
                        None => None,
                        Some(Value::Timestamp(t)) => Some(Value::Date(t.date_naive())),
                        Some(Value::Date(d)) => Some(Value::Date(*d)),
                        Some(other) => {
                            return Err(exec_err(
                                i,
                                format!("derive_date over {} field {from}", other.datatype().name()),
                            ))
                        }
                    };
                    if let Some(v) = derived {
                        r.insert(name.clone(), v);
                    }
                }
            }
        }
    }

    // project to the output schema, coercing to declared types
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        let mut projected = Row::new();
        for f in &t.output_schema {
            if let Some(v) = r.get(&f.name) {
                let coerced = v
                    .coerce(f.datatype)
                    .map_err(|e| Error::ExecutionError(format!("output field {}: {e}", f.name)))?;
                projected.insert(f.name.clone(), coerced);
            }
        }
        out.push(projected);
    }
    // canonical order: output fields in schema order, missing first
    out.sort_by(|a, b| {
        for f in &t.output_schema {
            let ord = cmp_opt(
                &a.get(&f.name).cloned(),
                &b.get(&f.name).cloned(),
            );
            if ord != Ordering::Equal {
                return ord;
            }
        }
        Ordering::Equal
    });
    Ok(out)
}

/// Canonical NDJSON text for a sorted row set — the content-digest input.
pub fn rows_text(rows: &[Row]) -> String {
    let mut text = String::new();
    for r in rows {
        text.push_str(&canonical_row_json(r));
        text.push('\n');
    }
    text
}

/// Template registry plus curated dataset store.
pub struct TransformEngine {
    ws: Workspace,
    templates: PathBuf,
    curated: PathBuf,
}

impl TransformEngine {
    pub fn open(ws: &Workspace) -> Self {
        TransformEngine {
            ws: ws.clone(),
            templates: ws.transforms_dir().join("templates"),
            curated: ws.curated_dir(),
        }
    }

    fn template_path(&self, id: &str) -> PathBuf {
        self.templates.join(format!("{id}.json"))
    }

    /// Register a template after static checks. Re-registering the same
    /// content is idempotent and returns the same digest; changing a
    /// registered template's content is a conflict.
    pub fn register_template(&self, t: &TransformTemplate) -> Result<String> {
        check_template(t)?;
        let text = t.canonical_text();
        let digest = t.digest();
        std::fs::create_dir_all(&self.templates).map_err(|e| Error::storage("create templates dir", e))?;
        let _lock = FileLock::acquire(&self.templates.join(".lock"))?;
        let path = self.template_path(&t.template_id);
        if path.exists() {
            let existing = storage::read_bytes(&path)?;
            if storage::sha256_hex(&existing) != digest {
                return Err(Error::VersionConflict(format!(
                    "template {} is already registered with different content",
                    t.template_id
                )));
            }
            return Ok(digest);
        }
        storage::atomic_write(&path, text.as_bytes())?;
        Ok(digest)
    }

    /// Load a template and its digest.
    pub fn get_template(&self, id: &str) -> Result<(TransformTemplate, String)> {
        let bytes = match std::fs::read(self.template_path(id)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::NotFound(format!("template {id}")))
            }
            Err(e) => return Err(Error::storage("read template", e)),
        };
        let t: TransformTemplate =
            serde_json::from_slice(&bytes).map_err(|e| Error::Storage(format!("corrupt template {id}: {e}")))?;
        Ok((t, storage::sha256_hex(&bytes)))
    }

    pub fn list_templates(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for name in storage::list_dir_sorted(&self.templates, |n| n.ends_with(".json"))? {
            if let Some(stem) = name.strip_suffix(".json") {
                out.push(stem.to_string());
            }
        }
        Ok(out)
    }

    /// Resolve one input under its pin to typed rows: project onto the
    /// declared fields and coerce each value to its declared type.
    fn resolve_input(&self, input: &TemplateInput, pin: &PinValue) -> Result<Vec<Row>> {
        let raw_rows: Vec<Row> = match (&input.from, pin) {
            (InputSource::Table(name), PinValue::Asof(t)) => {
                let table = TableStore::open(&self.ws)
                    .open_table(name)
                    .map_err(|e| Error::UnresolvablePin(format!("input {}: {e}", input.role)))?;
                table
                    .query_asof(*t)?
                    .into_iter()
                    .map(|v| {
                        let mut row = v.payload;
                        for (k, val) in v.key {
                            row.entry(k).or_insert(val);
                        }
                        row
                    })
                    .collect()
            }
            (InputSource::Raw(source_id), PinValue::Segments(ids)) => {
                let store = RawStore::open(&self.ws);
                let mut rows = Vec::new();
                for id in ids {
                    let seg = store
                        .get_segment(id)
                        .map_err(|e| Error::UnresolvablePin(format!("input {}: {e}", input.role)))?;
                    if seg.source_id != *source_id {
                        return Err(Error::UnresolvablePin(format!(
                            "input {}: segment {id} belongs to source {}, not {source_id}",
                            input.role, seg.source_id
                        )));
                    }
                    rows.extend(store.segment_records(id)?.into_iter().map(|r| r.values));
                }
                rows
            }
            (InputSource::Dataset(name), PinValue::Version(v)) => self
                .read_rows(name, *v)
                .map_err(|e| match e {
                    Error::DigestMismatch(m) => Error::DigestMismatch(m),
                    other => Error::UnresolvablePin(format!("input {}: {other}", input.role)),
                })?,
            (from, pin) => {
                return Err(Error::UnresolvablePin(format!(
                    "input {} reads {from} and cannot bind pin {pin}",
                    input.role
                )))
            }
        };
        let mut out = Vec::with_capacity(raw_rows.len());
        for r in raw_rows {
            let mut typed = Row::new();
            for f in &input.fields {
                if let Some(v) = r.get(&f.name) {
                    let coerced = v.coerce(f.datatype).map_err(|e| {
                        Error::ExecutionError(format!("input {} field {}: {e}", input.role, f.name))
                    })?;
                    typed.insert(f.name.clone(), coerced);
                }
            }
            out.push(typed);
        }
        Ok(out)
    }

    fn dataset_dir(&self, dataset_id: &str) -> PathBuf {
        self.curated.join(dataset_id)
    }

    fn version_dir(&self, dataset_id: &str, version: u64) -> PathBuf {
        self.dataset_dir(dataset_id).join(format!("v{version}"))
    }

    /// Committed versions of a dataset, ascending. A version directory
    /// without its metadata file is an aborted write and is ignored.
    pub fn versions(&self, dataset_id: &str) -> Result<Vec<u64>> {
        let mut out = Vec::new();
        for name in storage::list_dir_sorted(&self.dataset_dir(dataset_id), |n| n.starts_with('v'))? {
            if let Some(n) = name.strip_prefix('v').and_then(|s| s.parse::<u64>().ok()) {
                if self.version_dir(dataset_id, n).join("meta.json").exists() {
                    out.push(n);
                }
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn list_datasets(&self) -> Result<Vec<String>> {
        storage::list_dir_sorted(&self.curated, |n| !n.starts_with('.'))
    }

    /// Load one version's metadata.
    pub fn meta(&self, dataset_id: &str, version: u64) -> Result<CuratedVersion> {
        let path = self.version_dir(dataset_id, version).join("meta.json");
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::NotFound(format!("curated dataset {dataset_id} v{version}")))
            }
            Err(e) => return Err(Error::storage("read curated meta", e)),
        };
        serde_json::from_slice(&bytes).map_err(|e| Error::Storage(format!("corrupt curated meta: {e}")))
    }

    /// Read one version's rows, verifying the content digest.
    pub fn read_rows(&self, dataset_id: &str, version: u64) -> Result<Vec<Row>> {
        let meta = self.meta(dataset_id, version)?;
        let bytes = storage::read_bytes(&self.version_dir(dataset_id, version).join("rows.ndjson"))?;
        let digest = storage::sha256_hex(&bytes);
        if digest != meta.content_digest {
            return Err(Error::DigestMismatch(format!(
                "curated {dataset_id} v{version}: recorded {} but rows hash to {digest}",
                meta.content_digest
            )));
        }
        let text = String::from_utf8(bytes).map_err(|e| Error::Storage(format!("curated rows not utf-8: {e}")))?;
        let mut rows = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let v: serde_json::Value =
                serde_json::from_str(line).map_err(|e| Error::Storage(format!("corrupt curated row: {e}")))?;
            rows.push(crate::value::row_from_json(&v)?);
        }
        Ok(rows)
    }

    fn execute_pinned(
        &self,
        template: &TransformTemplate,
        pins: &BTreeMap<String, PinValue>,
    ) -> Result<Vec<Row>> {
        for role in pins.keys() {
            if !template.inputs.iter().any(|i| &i.role == role) {
                return Err(Error::UnresolvablePin(format!(
                    "pin names unknown input role {role}"
                )));
            }
        }
        let mut resolved = BTreeMap::new();
        for input in &template.inputs {
            let pin = pins
                .get(&input.role)
                .ok_or_else(|| Error::UnresolvablePin(format!("input {} has no pin", input.role)))?;
            resolved.insert(input.role.clone(), self.resolve_input(input, pin)?);
        }
        execute_plan(template, &resolved)
    }

    #[allow(clippy::too_many_arguments)] // internal; named args beat a one-off bundle struct
    fn persist(
        &self,
        dataset_id: &str,
        template: &TransformTemplate,
        template_digest: &str,
        pins: &BTreeMap<String, PinValue>,
        rows: &[Row],
        now: DateTime<Utc>,
        replay_of: Option<u64>,
    ) -> Result<CuratedVersion> {
        storage::check_safe_name("dataset id", dataset_id)?;
        let text = rows_text(rows);
        let content_digest = storage::sha256_hex(text.as_bytes());
        std::fs::create_dir_all(self.dataset_dir(dataset_id))
            .map_err(|e| Error::storage("create dataset dir", e))?;
        let _lock = FileLock::acquire(&self.dataset_dir(dataset_id).join(".lock"))?;
        let version = self.versions(dataset_id)?.last().copied().unwrap_or(0) + 1;
        let to = format!("{dataset_id}@v{version}");
        let lineage = template
            .inputs
            .iter()
            .map(|input| LineageEdge {
                from: format!("{}@{}", input.from, pins[&input.role]),
                to: to.clone(),
            })
            .collect();
        let meta = CuratedVersion {
            dataset_id: dataset_id.to_string(),
            version,
            template_id: template.template_id.clone(),
            template_digest: template_digest.to_string(),
            input_pins: pins.clone(),
            content_digest,
            created_at: now,
            row_count: rows.len() as u64,
            output_schema: template.output_schema.clone(),
            lineage,
            replay_of,
        };
        let dir = self.version_dir(dataset_id, version);
        std::fs::create_dir_all(&dir).map_err(|e| Error::storage("create version dir", e))?;
        storage::atomic_write(&dir.join("rows.ndjson"), text.as_bytes())?;
        // the metadata file lands last: its presence commits the version
        let meta_text = serde_json::to_string_pretty(&serde_json::to_value(&meta).unwrap()).unwrap();
        storage::atomic_write(&dir.join("meta.json"), meta_text.as_bytes())?;
        Ok(meta)
    }

    /// Execute a registered template over pinned inputs and persist the
    /// result as the next version of `dataset_id` (defaults to the
    /// template id).
    pub fn run_transform(
        &self,
        template_id: &str,
        pins: &BTreeMap<String, PinValue>,
        dataset_id: Option<&str>,
        now: DateTime<Utc>,
    ) -> Result<CuratedVersion> {
        let (template, digest) = self.get_template(template_id)?;
        let rows = self.execute_pinned(&template, pins)?;
        let dataset_id = dataset_id.unwrap_or(template_id);
        self.persist(dataset_id, &template, &digest, pins, &rows, now, None)
    }

    /// Re-execute a stored version with its original pins. The recomputed
    /// content digest must equal the stored one; the result is persisted as
    /// a new version pointing back at the original.
    pub fn replay(&self, dataset_id: &str, version: u64, now: DateTime<Utc>) -> Result<CuratedVersion> {
        let original = self.meta(dataset_id, version)?;
        let (template, template_digest) = self.get_template(&original.template_id)?;
        if template_digest != original.template_digest {
            return Err(Error::DigestMismatch(format!(
                "template {} now hashes to {template_digest}, version was built from {}",
                original.template_id, original.template_digest
            )));
        }
        let rows = self.execute_pinned(&template, &original.input_pins)?;
        let digest = storage::sha256_hex(rows_text(&rows).as_bytes());
        if digest != original.content_digest {
            return Err(Error::DigestMismatch(format!(
                "replay of {dataset_id} v{version} produced {digest}, original was {}",
                original.content_digest
            )));
        }
        self.persist(
            dataset_id,
            &template,
            &template_digest,
            &original.input_pins,
            &rows,
            now,
            Some(version),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_arith, parse_filter};
    use crate::value::parse_ts;

    fn field(name: &str, dt: Datatype) -> FieldSpec {
        FieldSpec {
            name: name.into(),
            datatype: dt,
            required: false,
        }
    }

    fn dec(s: &str) -> Value {
        Value::Decimal(Decimal::parse(s).unwrap())
    }

    fn row(pairs: &[(&str, Value)]) -> Row {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    fn identity_template(table: &str) -> TransformTemplate {
        TransformTemplate {
            template_id: "identity".into(),
            inputs: vec![TemplateInput {
                role: "tx".into(),
                from: InputSource::Table(table.into()),
                fields: vec![field("transaction_id", Datatype::Text), field("amount", Datatype::Decimal)],
            }],
            plan: vec![Step::Select {
                fields: vec!["transaction_id".into(), "amount".into()],
            }],
            output_schema: vec![field("transaction_id", Datatype::Text), field("amount", Datatype::Decimal)],
        }
    }

    fn revenue_template() -> TransformTemplate {
        TransformTemplate {
            template_id: "revenue_by_region_day".into(),
            inputs: vec![
                TemplateInput {
                    role: "tx".into(),
                    from: InputSource::Table("transactions".into()),
                    fields: vec![
                        field("transaction_id", Datatype::Text),
                        field("client_id", Datatype::Text),
                        field("amount", Datatype::Decimal),
                        field("day", Datatype::Date),
                    ],
                },
                TemplateInput {
                    role: "customers".into(),
                    from: InputSource::Table("customers".into()),
                    fields: vec![field("client_id", Datatype::Text), field("region", Datatype::Text)],
                },
            ],
            plan: vec![
                Step::Join {
                    with: "customers".into(),
                    on: vec!["client_id".into()],
                    kind: JoinKind::Inner,
                },
                Step::GroupBy {
                    keys: vec!["region".into(), "day".into()],
                    aggregates: vec![Aggregate {
                        op: AggOp::Sum,
                        field: Some("amount".into()),
                        name: "revenue".into(),
                    }],
                },
            ],
            output_schema: vec![
                field("region", Datatype::Text),
                field("day", Datatype::Date),
                field("revenue", Datatype::Decimal),
            ],
        }
    }

    #[test]
    fn static_checks_catch_bad_plans() {
        let mut t = identity_template("transactions");
        check_template(&t).unwrap();

        t.plan = vec![Step::Select {
            fields: vec!["regionn".into()],
        }];
        match check_template(&t) {
            Err(Error::PlanError { step, reason }) => {
                assert_eq!(step, 0);
                assert!(reason.contains("regionn"), "{reason}");
            }
            other => panic!("{other:?}"),
        }

        // output schema type mismatch reports past the last step
        let mut t = identity_template("transactions");
        t.output_schema[1].datatype = Datatype::Text;
        match check_template(&t) {
            Err(Error::PlanError { step, reason }) => {
                assert_eq!(step, t.plan.len());
                assert!(reason.contains("amount"), "{reason}");
            }
            other => panic!("{other:?}"),
        }

        // join: unknown role, then a non-key collision
        let mut t = revenue_template();
        t.plan[0] = Step::Join {
            with: "customerz".into(),
            on: vec!["client_id".into()],
            kind: JoinKind::Inner,
        };
        assert!(matches!(check_template(&t), Err(Error::PlanError { step: 0, .. })));
        let mut t = revenue_template();
        t.inputs[1].fields.push(field("amount", Datatype::Decimal));
        match check_template(&t) {
            Err(Error::PlanError { step: 0, reason }) => assert!(reason.contains("both sides"), "{reason}"),
            other => panic!("{other:?}"),
        }

        // aggregates: sum over text, name collision with a key
        let mut t = revenue_template();
        t.plan[1] = Step::GroupBy {
            keys: vec!["region".into()],
            aggregates: vec![Aggregate {
                op: AggOp::Sum,
                field: Some("region".into()),
                name: "x".into(),
            }],
        };
        assert!(matches!(check_template(&t), Err(Error::PlanError { step: 1, .. })));
        let mut t = revenue_template();
        t.plan[1] = Step::GroupBy {
            keys: vec!["region".into()],
            aggregates: vec![Aggregate {
                op: AggOp::Sum,
                field: Some("amount".into()),
                name: "region".into(),
            }],
        };
        assert!(matches!(check_template(&t), Err(Error::PlanError { step: 1, .. })));

        // derive on text fields fails its type check
        let mut t = identity_template("transactions");
        t.plan.push(Step::Derive {
            name: "x".into(),
            expr: parse_arith("transaction_id + 1").unwrap(),
        });
        assert!(matches!(check_template(&t), Err(Error::PlanError { step: 1, .. })));
    }

    #[test]
    fn registration_is_idempotent_and_conflicts_on_change() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        let engine = TransformEngine::open(&ws);
        let t = identity_template("transactions");
        let d1 = engine.register_template(&t).unwrap();
        let d2 = engine.register_template(&t).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(d1, t.digest());

        let (loaded, digest) = engine.get_template("identity").unwrap();
        assert_eq!(loaded, t);
        assert_eq!(digest, d1);
        assert_eq!(engine.list_templates().unwrap(), vec!["identity"]);

        let mut changed = t.clone();
        changed.plan = vec![Step::Select {
            fields: vec!["amount".into()],
        }];
        changed.output_schema = vec![field("amount", Datatype::Decimal)];
        assert!(matches!(engine.register_template(&changed), Err(Error::VersionConflict(_))));
        assert!(matches!(engine.get_template("nope"), Err(Error::NotFound(_))));
    }

    /// Build the two-table fixture used by the run/replay tests: a
    /// transactions table with two loads and a customers table.
    fn seed_tables(ws: &Workspace) {
        let tables = TableStore::open(ws);
        let tx = tables
            .create("transactions", &["transaction_id".to_string()])
            .unwrap();
        let load1 = [
            row(&[
                ("transaction_id", Value::Text("T001".into())),
                ("client_id", Value::Text("C1".into())),
                ("amount", dec("50")),
                ("day", Value::Date(crate::value::parse_date("2025-08-25").unwrap())),
            ]),
            row(&[
                ("transaction_id", Value::Text("T002".into())),
                ("client_id", Value::Text("C2".into())),
                ("amount", dec("20")),
                ("day", Value::Date(crate::value::parse_date("2025-08-25").unwrap())),
            ]),
        ];
        tx.apply_batch(&load1, parse_ts("2025-08-25T00:00:00Z").unwrap()).unwrap();
        // later correction: T001 drops to 35 on the 27th
        let load2 = [row(&[
            ("transaction_id", Value::Text("T001".into())),
            ("client_id", Value::Text("C1".into())),
            ("amount", dec("35")),
            ("day", Value::Date(crate::value::parse_date("2025-08-25").unwrap())),
        ])];
        tx.apply_batch(&load2, parse_ts("2025-08-27T00:00:00Z").unwrap()).unwrap();

        let customers = tables.create("customers", &["client_id".to_string()]).unwrap();
        let rows = [
            row(&[("client_id", Value::Text("C1".into())), ("region", Value::Text("EU".into()))]),
            row(&[("client_id", Value::Text("C2".into())), ("region", Value::Text("US".into()))]),
        ];
        customers
            .apply_batch(&rows, parse_ts("2025-08-20T00:00:00Z").unwrap())
            .unwrap();
    }

    #[test]
    fn identity_run_pins_table_state_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        seed_tables(&ws);
        let engine = TransformEngine::open(&ws);
        engine.register_template(&identity_template("transactions")).unwrap();

        let mut pins = BTreeMap::new();
        pins.insert("tx".to_string(), PinValue::Asof(parse_ts("2025-08-26T00:00:00Z").unwrap()));
        let now = parse_ts("2025-08-27T12:00:00Z").unwrap();
        let v1 = engine.run_transform("identity", &pins, None, now).unwrap();
        assert_eq!(v1.version, 1);
        assert_eq!(v1.row_count, 2);
        assert_eq!(v1.replay_of, None);
        assert_eq!(v1.lineage.len(), 1);
        assert_eq!(v1.lineage[0].to, "identity@v1");
        assert!(v1.lineage[0].from.starts_with("table:transactions@asof="));

        // the as-of pin sees the state before the correction: T001=50
        let rows = engine.read_rows("identity", 1).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0]["transaction_id"], Value::Text("T001".into()));
        assert_eq!(rows[0]["amount"].as_decimal().unwrap(), Decimal::parse("50").unwrap());
        assert_eq!(rows[1]["transaction_id"], Value::Text("T002".into()));
        assert_eq!(rows[1]["amount"].as_decimal().unwrap(), Decimal::parse("20").unwrap());

        // identical pins => identical digest, new version number
        let v2 = engine.run_transform("identity", &pins, None, now).unwrap();
        assert_eq!(v2.version, 2);
        assert_eq!(v2.content_digest, v1.content_digest);
        assert_eq!(engine.versions("identity").unwrap(), vec![1, 2]);

        // pin after the correction sees 35
        let mut late = BTreeMap::new();
        late.insert("tx".to_string(), PinValue::Asof(parse_ts("2025-08-28T00:00:00Z").unwrap()));
        let v3 = engine.run_transform("identity", &late, None, now).unwrap();
        assert_ne!(v3.content_digest, v1.content_digest);
        let rows = engine.read_rows("identity", 3).unwrap();
        assert_eq!(rows[0]["amount"].as_decimal().unwrap(), Decimal::parse("35").unwrap());

        // pin problems
        let mut missing = BTreeMap::new();
        missing.insert("tx".to_string(), PinValue::Segments(vec!["a/b/c".into()]));
        assert!(matches!(
            engine.run_transform("identity", &missing, None, now),
            Err(Error::UnresolvablePin(_))
        ));
        assert!(matches!(
            engine.run_transform("identity", &BTreeMap::new(), None, now),
            Err(Error::UnresolvablePin(_))
        ));
        let mut extra = pins.clone();
        extra.insert("ghost".to_string(), PinValue::Asof(now));
        assert!(matches!(
            engine.run_transform("identity", &extra, None, now),
            Err(Error::UnresolvablePin(_))
        ));
    }

    #[test]
    fn join_group_matches_brute_force_oracle() {
        // six transactions, two regions x two days, computed two ways
        let tx_rows = vec![
            row(&[("transaction_id", Value::Text("T1".into())), ("client_id", Value::Text("C1".into())), ("amount", dec("10.50")), ("day", Value::Date(crate::value::parse_date("2025-08-25").unwrap()))]),
            row(&[("transaction_id", Value::Text("T2".into())), ("client_id", Value::Text("C2".into())), ("amount", dec("20")), ("day", Value::Date(crate::value::parse_date("2025-08-25").unwrap()))]),
            row(&[("transaction_id", Value::Text("T3".into())), ("client_id", Value::Text("C1".into())), ("amount", dec("5.25")), ("day", Value::Date(crate::value::parse_date("2025-08-26").unwrap()))]),
            row(&[("transaction_id", Value::Text("T4".into())), ("client_id", Value::Text("C3".into())), ("amount", dec("7")), ("day", Value::Date(crate::value::parse_date("2025-08-26").unwrap()))]),
            row(&[("transaction_id", Value::Text("T5".into())), ("client_id", Value::Text("C2".into())), ("amount", dec("2.75")), ("day", Value::Date(crate::value::parse_date("2025-08-26").unwrap()))]),
            row(&[("transaction_id", Value::Text("T6".into())), ("client_id", Value::Text("C3".into())), ("amount", dec("1")), ("day", Value::Date(crate::value::parse_date("2025-08-25").unwrap()))]),
        ];
        let customer_rows = vec![
            row(&[("client_id", Value::Text("C1".into())), ("region", Value::Text("EU".into()))]),
            row(&[("client_id", Value::Text("C2".into())), ("region", Value::Text("US".into()))]),
            row(&[("client_id", Value::Text("C3".into())), ("region", Value::Text("EU".into()))]),
        ];

        let mut inputs = BTreeMap::new();
        inputs.insert("tx".to_string(), tx_rows.clone());
        inputs.insert("customers".to_string(), customer_rows.clone());
        let got = execute_plan(&revenue_template(), &inputs).unwrap();

        // brute-force nested-loop oracle, written independent of the engine
        let mut oracle: BTreeMap<(String, String), i128> = BTreeMap::new();
        for t in &tx_rows {
            for c in &customer_rows {
                if t["client_id"] == c["client_id"] {
                    let region = match &c["region"] {
                        Value::Text(s) => s.clone(),
                        _ => unreachable!(),
                    };
                    let day = t["day"].canonical_string();
                    let cents = t["amount"].as_decimal().unwrap().scaled();
                    *oracle.entry((region, day)).or_insert(0) += cents;
                }
            }
        }
        assert_eq!(got.len(), oracle.len());
        assert_eq!(got.len(), 4);
        for r in &got {
            let key = (
                match &r["region"] {
                    Value::Text(s) => s.clone(),
                    _ => unreachable!(),
                },
                r["day"].canonical_string(),
            );
            assert_eq!(r["revenue"].as_decimal().unwrap().scaled(), oracle[&key], "{key:?}");
        }
        // spot-check one group by hand: EU on the 25th = 10.50 + 1 = 11.50
        let eu25 = got
            .iter()
            .find(|r| r["region"] == Value::Text("EU".into()) && r["day"].canonical_string() == "2025-08-25")
            .unwrap();
        assert_eq!(eu25["revenue"].as_decimal().unwrap(), Decimal::parse("11.5").unwrap());
    }

    #[test]
    fn output_is_invariant_under_input_permutation() {
        let t = revenue_template();
        let base = vec![
            row(&[("transaction_id", Value::Text("T1".into())), ("client_id", Value::Text("C1".into())), ("amount", dec("10")), ("day", Value::Date(crate::value::parse_date("2025-08-25").unwrap()))]),
            row(&[("transaction_id", Value::Text("T2".into())), ("client_id", Value::Text("C2".into())), ("amount", dec("20")), ("day", Value::Date(crate::value::parse_date("2025-08-25").unwrap()))]),
            row(&[("transaction_id", Value::Text("T3".into())), ("client_id", Value::Text("C1".into())), ("amount", dec("30")), ("day", Value::Date(crate::value::parse_date("2025-08-26").unwrap()))]),
        ];
        let customers = vec![
            row(&[("client_id", Value::Text("C1".into())), ("region", Value::Text("EU".into()))]),
            row(&[("client_id", Value::Text("C2".into())), ("region", Value::Text("US".into()))]),
        ];
        let mut reference = None;
        // try every rotation of the physical row order
        for shift in 0..base.len() {
            let mut tx = base.clone();
            tx.rotate_left(shift);
            let mut customers = customers.clone();
            if shift % 2 == 1 {
                customers.reverse();
            }
            let mut inputs = BTreeMap::new();
            inputs.insert("tx".to_string(), tx);
            inputs.insert("customers".to_string(), customers);
            let text = rows_text(&execute_plan(&t, &inputs).unwrap());
            match &reference {
                None => reference = Some(text),
                Some(r) => assert_eq!(&text, r, "rotation {shift}"),
            }
        }
    }

    #[test]
    fn aggregate_missing_value_semantics() {
        let rows: Vec<Row> = vec![
            row(&[("g", Value::Text("a".into())), ("x", Value::Integer(5))]),
            row(&[("g", Value::Text("a".into()))]), // x missing
            row(&[("g", Value::Text("a".into())), ("x", Value::Integer(7))]),
            row(&[("g", Value::Text("b".into()))]), // x missing everywhere in b
        ];
        let refs: Vec<Vec<&Row>> = vec![rows[0..3].iter().collect(), vec![&rows[3]]];

        let agg = |op, field: Option<&str>, members: &[&Row]| {
            compute_aggregate(
                0,
                &Aggregate {
                    op,
                    field: field.map(String::from),
                    name: "out".into(),
                },
                members,
            )
            .unwrap()
        };

        // group a: sum ignores the missing row, count counts non-missing
        assert_eq!(agg(AggOp::Sum, Some("x"), &refs[0]), Some(Value::Integer(12)));
        assert_eq!(agg(AggOp::Count, Some("x"), &refs[0]), Some(Value::Integer(2)));
        assert_eq!(agg(AggOp::Count, None, &refs[0]), Some(Value::Integer(3)));
        assert_eq!(agg(AggOp::Avg, Some("x"), &refs[0]), Some(dec("6")));
        assert_eq!(agg(AggOp::Min, Some("x"), &refs[0]), Some(Value::Integer(5)));
        assert_eq!(agg(AggOp::Max, Some("x"), &refs[0]), Some(Value::Integer(7)));

        // group b: nothing to aggregate -> missing; count -> 0
        assert_eq!(agg(AggOp::Sum, Some("x"), &refs[1]), None);
        assert_eq!(agg(AggOp::Avg, Some("x"), &refs[1]), None);
        assert_eq!(agg(AggOp::Min, Some("x"), &refs[1]), None);
        assert_eq!(agg(AggOp::Count, Some("x"), &refs[1]), Some(Value::Integer(0)));

        // avg over integers divides exactly with half-even rounding
        let odd = [row(&[("x", Value::Integer(1))]), row(&[("x", Value::Integer(2))])];
        let members: Vec<&Row> = odd.iter().collect();
        assert_eq!(agg(AggOp::Avg, Some("x"), &members), Some(dec("1.5")));
    }

    #[test]
    fn left_outer_join_keeps_unmatched_rows() {
        let mut t = revenue_template();
        t.plan = vec![Step::Join {
            with: "customers".into(),
            on: vec!["client_id".into()],
            kind: JoinKind::LeftOuter,
        }];
        t.output_schema = vec![
            field("transaction_id", Datatype::Text),
            field("region", Datatype::Text),
        ];
        let tx = vec![
            row(&[("transaction_id", Value::Text("T1".into())), ("client_id", Value::Text("C1".into())), ("amount", dec("1")), ("day", Value::Date(crate::value::parse_date("2025-08-25").unwrap()))]),
            row(&[("transaction_id", Value::Text("T9".into())), ("client_id", Value::Text("C9".into())), ("amount", dec("2")), ("day", Value::Date(crate::value::parse_date("2025-08-25").unwrap()))]),
        ];
        let customers = vec![row(&[("client_id", Value::Text("C1".into())), ("region", Value::Text("EU".into()))])];
        let mut inputs = BTreeMap::new();
        inputs.insert("tx".to_string(), tx.clone());
        inputs.insert("customers".to_string(), customers.clone());
        let rows = execute_plan(&t, &inputs).unwrap();
        assert_eq!(rows.len(), 2);
        // T9 is unmatched: kept, region missing
        let t9 = rows.iter().find(|r| r["transaction_id"] == Value::Text("T9".into())).unwrap();
        assert!(!t9.contains_key("region"));

        // inner join drops it
        let mut inner = t.clone();
        inner.plan = vec![Step::Join {
            with: "customers".into(),
            on: vec!["client_id".into()],
            kind: JoinKind::Inner,
        }];
        let rows = execute_plan(&inner, &inputs).unwrap();
        assert_eq!(rows.len(), 1);
    }

    #[test]
    fn derive_and_filter_run_inside_plans() {
        let t = TransformTemplate {
            template_id: "net".into(),
            inputs: vec![TemplateInput {
                role: "tx".into(),
                from: InputSource::Table("transactions".into()),
                fields: vec![field("transaction_id", Datatype::Text), field("amount", Datatype::Decimal)],
            }],
            plan: vec![
                Step::Filter {
                    predicate: parse_filter("amount >= 10").unwrap(),
                },
                Step::Derive {
                    name: "net".into(),
                    expr: parse_arith("amount * 0.9").unwrap(),
                },
            ],
            output_schema: vec![field("transaction_id", Datatype::Text), field("net", Datatype::Decimal)],
        };
        let rows = vec![
            row(&[("transaction_id", Value::Text("T1".into())), ("amount", dec("100"))]),
            row(&[("transaction_id", Value::Text("T2".into())), ("amount", dec("5"))]),
            row(&[("transaction_id", Value::Text("T3".into()))]), // missing amount: filtered out
        ];
        let mut inputs = BTreeMap::new();
        inputs.insert("tx".to_string(), rows);
        let out = execute_plan(&t, &inputs).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0]["net"].as_decimal().unwrap(), Decimal::parse("90").unwrap());
    }

    #[test]
    fn replay_reproduces_digest_despite_later_loads_and_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        seed_tables(&ws);
        let engine = TransformEngine::open(&ws);
        engine.register_template(&revenue_template()).unwrap();

        let mut pins = BTreeMap::new();
        pins.insert("tx".to_string(), PinValue::Asof(parse_ts("2025-08-26T00:00:00Z").unwrap()));
        pins.insert("customers".to_string(), PinValue::Asof(parse_ts("2025-08-26T00:00:00Z").unwrap()));
        let now = parse_ts("2025-08-27T12:00:00Z").unwrap();
        let v1 = engine
            .run_transform("revenue_by_region_day", &pins, Some("revenue"), now)
            .unwrap();

        // unrelated later load lands in the source table
        let tables = TableStore::open(&ws);
        let tx = tables.open_table("transactions").unwrap();
        tx.apply_batch(
            &[row(&[
                ("transaction_id", Value::Text("T999".into())),
                ("client_id", Value::Text("C2".into())),
                ("amount", dec("1000")),
                ("day", Value::Date(crate::value::parse_date("2025-08-29").unwrap())),
            ])],
            parse_ts("2025-08-29T00:00:00Z").unwrap(),
        )
        .unwrap();

        // the as-of pins isolate the replay from the new data
        let replay = engine.replay("revenue", 1, parse_ts("2025-08-30T00:00:00Z").unwrap()).unwrap();
        assert_eq!(replay.content_digest, v1.content_digest);
        assert_eq!(replay.replay_of, Some(1));
        assert_eq!(replay.version, 2);

        // corrupting a stored row file breaks the read-side digest check
        let rows_path = dir.path().join("curated/revenue/v1/rows.ndjson");
        let mut text = std::fs::read_to_string(&rows_path).unwrap();
        text = text.replace("50", "51");
        std::fs::write(&rows_path, text).unwrap();
        assert!(matches!(engine.read_rows("revenue", 1), Err(Error::DigestMismatch(_))));

        // corrupting the *source table* breaks replay determinism: flip one
        // amount digit inside the table's committed segment
        let seg = dir.path().join("tables/transactions/segment-1.ndjson");
        let text = std::fs::read_to_string(&seg).unwrap();
        let tampered = text.replace("\"amount\":20", "\"amount\":21");
        assert_ne!(tampered, text, "tamper target not found");
        std::fs::write(&seg, tampered).unwrap();
        match engine.replay("revenue", 1, now) {
            Err(Error::DigestMismatch(_)) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_input_yields_empty_versioned_output() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        let tables = TableStore::open(&ws);
        tables.create("transactions", &["transaction_id".to_string()]).unwrap();
        let engine = TransformEngine::open(&ws);
        engine.register_template(&identity_template("transactions")).unwrap();
        let mut pins = BTreeMap::new();
        pins.insert("tx".to_string(), PinValue::Asof(parse_ts("2025-08-26T00:00:00Z").unwrap()));
        let v = engine
            .run_transform("identity", &pins, None, parse_ts("2025-08-26T01:00:00Z").unwrap())
            .unwrap();
        assert_eq!(v.row_count, 0);
        assert_eq!(engine.read_rows("identity", 1).unwrap(), Vec::<Row>::new());
        // digest of the empty text, still recorded and verified
        assert_eq!(v.content_digest, storage::sha256_hex(b""));
    }

    #[test]
    fn raw_segment_inputs_resolve_by_pin() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        let raw = RawStore::open(&ws);
        raw.register_source(&crate::raw::SourceRegistration {
            source_id: "sales".into(),
            format: crate::records::PayloadFormat::Csv,
            path_pattern: "sales/{date}".into(),
            contract_name: None,
            schedule_hint: String::new(),
        })
        .unwrap();
        let d = crate::value::parse_date("2025-08-25").unwrap();
        let s1 = raw.ingest("sales", b"transaction_id,amount\nT1,10\n", d).unwrap();
        let s2 = raw.ingest("sales", b"transaction_id,amount\nT2,32.5\n", d).unwrap();

        let t = TransformTemplate {
            template_id: "raw_identity".into(),
            inputs: vec![TemplateInput {
                role: "sales".into(),
                from: InputSource::Raw("sales".into()),
                fields: vec![field("transaction_id", Datatype::Text), field("amount", Datatype::Decimal)],
            }],
            plan: vec![],
            output_schema: vec![field("transaction_id", Datatype::Text), field("amount", Datatype::Decimal)],
        };
        let engine = TransformEngine::open(&ws);
        engine.register_template(&t).unwrap();
        let mut pins = BTreeMap::new();
        pins.insert(
            "sales".to_string(),
            PinValue::Segments(vec![s1.segment_id.clone(), s2.segment_id.clone()]),
        );
        let now = parse_ts("2025-08-26T00:00:00Z").unwrap();
        let v = engine.run_transform("raw_identity", &pins, None, now).unwrap();
        assert_eq!(v.row_count, 2);
        let rows = engine.read_rows("raw_identity", 1).unwrap();
        // CSV integers coerce to the declared decimal type on entry
        assert_eq!(rows[0]["amount"].as_decimal().unwrap(), Decimal::parse("10").unwrap());
        assert_eq!(rows[1]["amount"].as_decimal().unwrap(), Decimal::parse("32.5").unwrap());

        // a pin naming a segment of another source is unresolvable
        raw.register_source(&crate::raw::SourceRegistration {
            source_id: "other".into(),
            format: crate::records::PayloadFormat::Csv,
            path_pattern: "other/{date}".into(),
            contract_name: None,
            schedule_hint: String::new(),
        })
        .unwrap();
        let o = raw.ingest("other", b"transaction_id,amount\nT9,1\n", d).unwrap();
        let mut bad = BTreeMap::new();
        bad.insert("sales".to_string(), PinValue::Segments(vec![o.segment_id]));
        assert!(matches!(
            engine.run_transform("raw_identity", &bad, None, now),
            Err(Error::UnresolvablePin(_))
        ));
    }

    #[test]
    fn template_and_pin_serialization_round_trips() {
        let t = revenue_template();
        let text = t.canonical_text();
        let back: TransformTemplate = serde_json::from_str(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.digest(), t.digest());

        let pin = PinValue::Asof(parse_ts("2025-08-26T00:00:00Z").unwrap());
        let json = serde_json::to_string(&pin).unwrap();
        assert_eq!(json, r#"{"asof":"2025-08-26T00:00:00Z"}"#);
        assert_eq!(serde_json::from_str::<PinValue>(&json).unwrap(), pin);
        let seg = PinValue::Segments(vec!["a/2025-08-25/segment-1".into()]);
        let back: PinValue = serde_json::from_str(&serde_json::to_string(&seg).unwrap()).unwrap();
        assert_eq!(back, seg);
    }
}
