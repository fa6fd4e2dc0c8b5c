//! Data contracts: typed field declarations plus hard/soft validation rules,
//! with a canonical serialization, a digest-based identity, a lint pass for
//! suspicious-but-legal contracts, and a versioned on-disk registry.
//!
//! A contract file looks like:
//!
//! ```json
//! {"name":"customer_transactions","version":1,
//!  "fields":[{"name":"amount","datatype":"decimal","required":true}],
//!  "rules":[{"id":"amount_nonneg","field":"amount","kind":"range",
//!            "params":{"min":0},"severity":"hard"}]}
//! ```
//!
//! Hard rules gate loading; soft rules only warn. Parsing is strict: unknown
//! keys, unknown datatypes/kinds/severities, and rules on undeclared fields
//! are all rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::storage::{self, FileLock};
use crate::value::{Datatype, Decimal, Value};
use crate::Workspace;

/// One declared field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub datatype: Datatype,
    /// Declarative flag: documentation of intent. Enforcement happens only
    /// through rules (see [`lint_contract`], which flags the gap).
    pub required: bool,
}

/// Rule severity: hard violations block a batch, soft ones only warn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Hard,
    Soft,
}

/// The closed set of rule kinds.
#[derive(Clone, Debug, PartialEq)]
pub enum RuleKind {
    /// Value must be present.
    Required,
    /// Numeric value must lie within the (inclusive) bounds.
    Range { min: Option<Decimal>, max: Option<Decimal> },
    /// Text value must match the regular expression.
    Format { pattern: String },
    /// Value must equal one of the allowed literals.
    Enum { allowed: Vec<Value> },
}

impl RuleKind {
    pub fn name(&self) -> &'static str {
        match self {
            RuleKind::Required => "required",
            RuleKind::Range { .. } => "range",
            RuleKind::Format { .. } => "format",
            RuleKind::Enum { .. } => "enum",
        }
    }
}

/// One validation rule. `field: None` is a batch-level rule: structurally
/// legal, currently never evaluated.
#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub id: String,
    pub field: Option<String>,
    pub kind: RuleKind,
    pub severity: Severity,
}

/// A parsed, validated contract.
#[derive(Clone, Debug, PartialEq)]
pub struct Contract {
    pub name: String,
    pub version: u32,
    pub fields: Vec<FieldSpec>,
    pub rules: Vec<Rule>,
}

impl Contract {
    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// Identity reference: name, version, and canonical digest.
    pub fn reference(&self) -> ContractRef {
        ContractRef {
            name: self.name.clone(),
            version: self.version,
            digest: digest(self),
        }
    }
}

/// Identity of a specific contract version.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractRef {
    pub name: String,
    pub version: u32,
    pub digest: String,
}

// ---------------------------------------------------------------- parsing --

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireContract {
    name: String,
    version: i64,
    fields: Vec<WireField>,
    #[serde(default)]
    rules: Vec<WireRule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireField {
    name: String,
    datatype: String,
    required: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRule {
    id: String,
    #[serde(default)]
    field: Option<String>,
    kind: String,
    #[serde(default)]
    params: serde_json::Map<String, serde_json::Value>,
    severity: String,
}

fn json_number_to_decimal(v: &serde_json::Value, what: &str) -> Result<Decimal> {
    let n = v
        .as_number()
        .ok_or_else(|| Error::SchemaViolation(format!("{what} must be a number, got {v}")))?;
    if let Some(i) = n.as_i64() {
        return Ok(Decimal::from_int(i));
    }
    let f = n.as_f64().ok_or_else(|| Error::SchemaViolation(format!("{what} out of range: {n}")))?;
    Decimal::parse(&f.to_string()).map_err(|e| Error::SchemaViolation(format!("{what}: {e}")))
}

fn parse_rule_kind(rule_id: &str, kind: &str, params: &serde_json::Map<String, serde_json::Value>) -> Result<RuleKind> {
    let known = |allowed: &[&str]| -> Result<()> {
        for key in params.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::SchemaViolation(format!("rule {rule_id}: unknown param {key:?} for kind {kind:?}")));
            }
        }
        Ok(())
    };
    match kind {
        "required" => {
            known(&[])?;
            Ok(RuleKind::Required)
        }
        "range" => {
            known(&["min", "max"])?;
            let min = params
                .get("min")
                .map(|v| json_number_to_decimal(v, &format!("rule {rule_id}: min")))
                .transpose()?;
            let max = params
                .get("max")
                .map(|v| json_number_to_decimal(v, &format!("rule {rule_id}: max")))
                .transpose()?;
            if min.is_none() && max.is_none() {
                return Err(Error::SchemaViolation(format!("rule {rule_id}: range needs min and/or max")));
            }
            if let (Some(lo), Some(hi)) = (min, max) {
                if lo > hi {
                    return Err(Error::SchemaViolation(format!("rule {rule_id}: min {lo} exceeds max {hi}")));
                }
            }
            Ok(RuleKind::Range { min, max })
        }
        "format" => {
            known(&["pattern"])?;
            let pattern = params
                .get("pattern")
                .and_then(|v| v.as_str())
                .ok_or_else(|| Error::SchemaViolation(format!("rule {rule_id}: format needs a string pattern")))?;
            regex::Regex::new(pattern)
                .map_err(|e| Error::SchemaViolation(format!("rule {rule_id}: bad pattern: {e}")))?;
            Ok(RuleKind::Format { pattern: pattern.to_string() })
        }
        "enum" => {
            known(&["allowed"])?;
            let list = params
                .get("allowed")
                .and_then(|v| v.as_array())
                .ok_or_else(|| Error::SchemaViolation(format!("rule {rule_id}: enum needs an allowed array")))?;
            if list.is_empty() {
                return Err(Error::SchemaViolation(format!("rule {rule_id}: enum allowed set is empty")));
            }
            let mut allowed = Vec::with_capacity(list.len());
            for v in list {
                match Value::from_json(v) {
                    Ok(Some(val)) if !matches!(v, serde_json::Value::Array(_) | serde_json::Value::Object(_)) => allowed.push(val),
                    _ => {
                        return Err(Error::SchemaViolation(format!("rule {rule_id}: enum values must be scalars, got {v}")));
                    }
                }
            }
            Ok(RuleKind::Enum { allowed })
        }
        other => Err(Error::SchemaViolation(format!("rule {rule_id}: unknown kind {other:?}"))),
    }
}

/// Parse and fully validate a contract document.
pub fn parse_contract(text: &str) -> Result<Contract> {
    let wire: WireContract = serde_json::from_str(text).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => Error::SchemaViolation(e.to_string()),
        _ => Error::MalformedDocument(e.to_string()),
    })?;
    storage::check_safe_name("contract name", &wire.name).map_err(|e| Error::SchemaViolation(e.to_string()))?;
    if wire.version < 1 {
        return Err(Error::SchemaViolation(format!("version must be a positive integer, got {}", wire.version)));
    }
    let version = u32::try_from(wire.version).map_err(|_| Error::SchemaViolation(format!("version out of range: {}", wire.version)))?;

    let mut fields = Vec::with_capacity(wire.fields.len());
    let mut field_names = BTreeSet::new();
    for f in &wire.fields {
        storage::check_safe_name("field name", &f.name).map_err(|e| Error::SchemaViolation(e.to_string()))?;
        if !field_names.insert(f.name.clone()) {
            return Err(Error::SchemaViolation(format!("duplicate field {:?}", f.name)));
        }
        let datatype = Datatype::parse(&f.datatype)
            .ok_or_else(|| Error::SchemaViolation(format!("field {:?}: unknown datatype {:?}", f.name, f.datatype)))?;
        fields.push(FieldSpec {
            name: f.name.clone(),
            datatype,
            required: f.required,
        });
    }

    let mut rules = Vec::with_capacity(wire.rules.len());
    let mut rule_ids = BTreeSet::new();
    for r in &wire.rules {
        storage::check_safe_name("rule id", &r.id).map_err(|e| Error::SchemaViolation(e.to_string()))?;
        if !rule_ids.insert(r.id.clone()) {
            return Err(Error::SchemaViolation(format!("duplicate rule id {:?}", r.id)));
        }
        if let Some(field) = &r.field {
            if !field_names.contains(field) {
                return Err(Error::SchemaViolation(format!("rule {:?} references undeclared field {:?}", r.id, field)));
            }
        }
        let severity = match r.severity.as_str() {
            "hard" => Severity::Hard,
            "soft" => Severity::Soft,
            other => {
                return Err(Error::SchemaViolation(format!("rule {:?}: unknown severity {other:?}", r.id)));
            }
        };
        let kind = parse_rule_kind(&r.id, &r.kind, &r.params)?;
        rules.push(Rule {
            id: r.id.clone(),
            field: r.field.clone(),
            kind,
            severity,
        });
    }

    Ok(Contract {
        name: wire.name,
        version,
        fields,
        rules,
    })
}

// ---------------------------------------------------- canonical form + id --

fn decimal_to_json(d: Decimal) -> serde_json::Value {
    match d.to_i64_exact() {
        Some(i) => serde_json::Value::from(i),
        None => serde_json::Number::from_f64(d.to_f64())
            .map(serde_json::Value::Number)
            .unwrap_or_else(|| serde_json::Value::String(d.to_string())),
    }
}

/// Canonical JSON document: sorted keys, integral numbers without fraction,
/// optional keys omitted when absent.
pub fn to_canonical_json(c: &Contract) -> serde_json::Value {
    let fields: Vec<serde_json::Value> = c
        .fields
        .iter()
        .map(|f| {
            serde_json::json!({
                "name": f.name,
                "datatype": f.datatype.name(),
                "required": f.required,
            })
        })
        .collect();
    let rules: Vec<serde_json::Value> = c
        .rules
        .iter()
        .map(|r| {
            let mut params = serde_json::Map::new();
            match &r.kind {
                RuleKind::Required => {}
                RuleKind::Range { min, max } => {
                    if let Some(lo) = min {
                        params.insert("min".into(), decimal_to_json(*lo));
                    }
                    if let Some(hi) = max {
                        params.insert("max".into(), decimal_to_json(*hi));
                    }
                }
                RuleKind::Format { pattern } => {
                    params.insert("pattern".into(), serde_json::Value::String(pattern.clone()));
                }
                RuleKind::Enum { allowed } => {
                    params.insert(
                        "allowed".into(),
                        serde_json::Value::Array(allowed.iter().map(Value::to_json).collect()),
                    );
                }
            }
            let mut obj = serde_json::Map::new();
            obj.insert("id".into(), serde_json::Value::String(r.id.clone()));
            if let Some(field) = &r.field {
                obj.insert("field".into(), serde_json::Value::String(field.clone()));
            }
            obj.insert("kind".into(), serde_json::Value::String(r.kind.name().into()));
            obj.insert("params".into(), serde_json::Value::Object(params));
            obj.insert(
                "severity".into(),
                serde_json::Value::String(match r.severity {
                    Severity::Hard => "hard".into(),
                    Severity::Soft => "soft".into(),
                }),
            );
            serde_json::Value::Object(obj)
        })
        .collect();
    serde_json::json!({
        "name": c.name,
        "version": c.version,
        "fields": fields,
        "rules": rules,
    })
}

/// Canonical text (compact JSON with sorted keys).
pub fn canonical_text(c: &Contract) -> String {
    serde_json::to_string(&to_canonical_json(c)).unwrap()
}

/// Contract identity: SHA-256 of the canonical text.
pub fn digest(c: &Contract) -> String {
    storage::sha256_hex(canonical_text(c).as_bytes())
}

// -------------------------------------------------------------------- lint --

/// A lint finding: legal but suspicious contract structure.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintIssue {
    pub field: Option<String>,
    pub message: String,
}

/// Advisory checks: fields never validated, `required` flags not backed by a
/// hard rule, contradictory range pairs, and enum values that can never
/// satisfy a range rule on the same field.
pub fn lint_contract(c: &Contract) -> Vec<LintIssue> {
    let mut issues = Vec::new();
    let mut rules_by_field: BTreeMap<&str, Vec<&Rule>> = BTreeMap::new();
    for r in &c.rules {
        if let Some(f) = &r.field {
            rules_by_field.entry(f.as_str()).or_default().push(r);
        }
    }
    for f in &c.fields {
        let rules = rules_by_field.get(f.name.as_str()).map(|v| v.as_slice()).unwrap_or(&[]);
        if rules.is_empty() {
            issues.push(LintIssue {
                field: Some(f.name.clone()),
                message: format!("field {:?} is never validated by any rule", f.name),
            });
        }
        if f.required
            && !rules
                .iter()
                .any(|r| matches!(r.kind, RuleKind::Required) && r.severity == Severity::Hard)
        {
            issues.push(LintIssue {
                field: Some(f.name.clone()),
                message: format!("field {:?} is marked required but no hard required rule enforces it", f.name),
            });
        }
        let ranges: Vec<&Rule> = rules.iter().copied().filter(|r| matches!(r.kind, RuleKind::Range { .. })).collect();
        for i in 0..ranges.len() {
            for j in i + 1..ranges.len() {
                if let (RuleKind::Range { min: min_a, max: max_a }, RuleKind::Range { min: min_b, max: max_b }) =
                    (&ranges[i].kind, &ranges[j].kind)
                {
                    let lo = match (min_a, min_b) {
                        (Some(a), Some(b)) => Some(*a.max(b)),
                        (a, b) => a.or(*b),
                    };
                    let hi = match (max_a, max_b) {
                        (Some(a), Some(b)) => Some(*a.min(b)),
                        (a, b) => a.or(*b),
                    };
                    if let (Some(lo), Some(hi)) = (lo, hi) {
                        if lo > hi {
                            issues.push(LintIssue {
                                field: f.name.clone().into(),
                                message: format!("range rules {:?} and {:?} cannot both hold", ranges[i].id, ranges[j].id),
                            });
                        }
                    }
                }
            }
        }
        for r in rules {
            if let RuleKind::Enum { allowed } = &r.kind {
                for range in &ranges {
                    if let RuleKind::Range { min, max } = &range.kind {
                        for v in allowed {
                            if let Some(d) = v.as_decimal() {
                                let below = min.map(|lo| d < lo).unwrap_or(false);
                                let above = max.map(|hi| d > hi).unwrap_or(false);
                                if below || above {
                                    issues.push(LintIssue {
                                        field: Some(f.name.clone()),
                                        message: format!(
                                            "enum rule {:?} allows {} which can never satisfy range rule {:?}",
                                            r.id,
                                            v.canonical_string(),
                                            range.id
                                        ),
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    issues.sort_by(|a, b| (&a.field, &a.message).cmp(&(&b.field, &b.message)));
    issues
}

// ---------------------------------------------------------------- registry --

/// Versioned contract store under `contracts/<name>/v<k>.json`. Versions are
/// immutable once published; `put` only accepts strictly newer versions
/// (gaps are allowed).
pub struct ContractRegistry {
    dir: PathBuf,
}

impl ContractRegistry {
    pub fn open(ws: &Workspace) -> Self {
        ContractRegistry { dir: ws.contracts_dir() }
    }

    fn name_dir(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Publish a contract version. Fails with `VersionConflict` unless the
    /// version is strictly greater than the latest published one.
    pub fn put(&self, c: &Contract) -> Result<ContractRef> {
        storage::check_safe_name("contract name", &c.name)?;
        let dir = self.name_dir(&c.name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::storage("create contract dir", e))?;
        let _lock = FileLock::acquire(&dir.join(".lock"))?;
        if let Some(latest) = self.latest_version_opt(&c.name)? {
            if c.version <= latest {
                return Err(Error::VersionConflict(format!(
                    "contract {} v{} is not newer than published v{latest}",
                    c.name, c.version
                )));
            }
        }
        let mut text = canonical_text(c);
        text.push('\n');
        storage::atomic_write(&dir.join(format!("v{}.json", c.version)), text.as_bytes())?;
        storage::atomic_write(&dir.join("latest"), c.version.to_string().as_bytes())?;
        Ok(c.reference())
    }

    fn latest_version_opt(&self, name: &str) -> Result<Option<u32>> {
        let path = self.name_dir(name).join("latest");
        match std::fs::read_to_string(&path) {
            Ok(text) => {
                let v = text
                    .trim()
                    .parse::<u32>()
                    .map_err(|_| Error::Storage(format!("corrupt latest pointer for contract {name}")))?;
                Ok(Some(v))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::storage("read latest pointer", e)),
        }
    }

    /// Latest published version number.
    pub fn latest_version(&self, name: &str) -> Result<u32> {
        self.latest_version_opt(name)?
            .ok_or_else(|| Error::NotFound(format!("contract {name}")))
    }

    /// Fetch a specific version, or the latest when `version` is `None`.
    pub fn get(&self, name: &str, version: Option<u32>) -> Result<Contract> {
        let v = match version {
            Some(v) => v,
            None => self.latest_version(name)?,
        };
        let path = self.name_dir(name).join(format!("v{v}.json"));
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::NotFound(format!("contract {name} v{v}")));
            }
            Err(e) => return Err(Error::storage("read contract", e)),
        };
        parse_contract(&text)
    }

    /// All published contracts (latest version of each), sorted by name.
    pub fn list(&self) -> Result<Vec<ContractRef>> {
        let names = storage::list_dir_sorted(&self.dir, |n| !n.starts_with('.'))?;
        let mut out = Vec::new();
        for name in names {
            if let Some(v) = self.latest_version_opt(&name)? {
                out.push(self.get(&name, Some(v))?.reference());
            }
        }
        Ok(out)
    }
}

/// The worked-example contract used across the engine's unit tests.
#[cfg(test)]
pub(crate) const EXAMPLE_CONTRACT: &str = r#"{"name":"customer_transactions","version":1,"fields":[{"name":"client_id","datatype":"text","required":true},{"name":"amount","datatype":"decimal","required":true},{"name":"email","datatype":"text","required":false}],"rules":[{"id":"amount_nonneg","field":"amount","kind":"range","params":{"min":0},"severity":"hard"},{"id":"email_present","field":"email","kind":"required","params":{},"severity":"soft"}]}"#;
