//! The curated metric layer: business-named metrics with one shared
//! definition, compiled to transformation plans.
//!
//! A metric binds a business name to a source (table or curated dataset),
//! grouping dimensions, an optional filter, and an optional aggregate
//! measure. Materializing a metric synthesizes a plan — filter, calendar
//! truncation for timestamp dimensions, group-by, aggregate — and delegates
//! to the transform engine, so every consumer of a metric at the same as-of
//! instant reads byte-identical data with full lineage.

use std::collections::BTreeMap;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::contract::FieldSpec;
use crate::error::{Error, Result};
use crate::expr::FilterExpr;
use crate::storage::{self, FileLock};
use crate::transform::{
    AggOp, Aggregate, CuratedVersion, InputSource, PinValue, Step, TemplateInput, TransformEngine,
    TransformTemplate,
};
use crate::value::{format_ts, opt_ts_serde, parse_ts, ts_serde, Datatype};
use crate::versioned::TableStore;
use crate::Workspace;

/// Where a metric's rows come from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricSource {
    Table(String),
    Dataset(String),
}

/// The aggregate a metric computes, named for consumers
/// (e.g. `sum(amount) as revenue`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    pub op: AggOp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub name: String,
}

/// One versioned metric definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDef {
    pub metric_id: String,
    pub version: u64,
    pub source: MetricSource,
    /// Grouping fields; timestamp fields group by their UTC calendar date.
    pub dimensions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<Measure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterExpr>,
    #[serde(default)]
    pub description: String,
}

/// One catalog row: a metric's latest definition plus its freshest
/// materialization, if any.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub metric_id: String,
    pub version: u64,
    pub description: String,
    #[serde(default, with = "opt_ts_serde", skip_serializing_if = "Option::is_none")]
    pub last_materialized: Option<DateTime<Utc>>,
}

/// One materialization event, appended to the metric's log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct MaterializationRecord {
    metric_version: u64,
    dataset_id: String,
    dataset_version: u64,
    #[serde(with = "ts_serde")]
    asof: DateTime<Utc>,
    #[serde(with = "ts_serde")]
    at: DateTime<Utc>,
    content_digest: String,
}

/// The metric store rooted at `semantic/`.
pub struct MetricStore {
    ws: Workspace,
    dir: PathBuf,
}

impl MetricStore {
    pub fn open(ws: &Workspace) -> Self {
        MetricStore {
            ws: ws.clone(),
            dir: ws.semantic_dir(),
        }
    }

    fn metric_dir(&self, id: &str) -> PathBuf {
        self.dir.join("metrics").join(id)
    }

    fn log_path(&self, id: &str) -> PathBuf {
        self.dir.join("log").join(format!("{id}.ndjson"))
    }

    /// The typed schema of a metric source: a table's accumulated field
    /// types (key fields default to text before the first load), or a
    /// dataset's latest declared output schema.
    fn source_schema(&self, source: &MetricSource) -> Result<BTreeMap<String, Datatype>> {
        match source {
            MetricSource::Table(name) => {
                let table = TableStore::open(&self.ws)
                    .open_table(name)
                    .map_err(|_| Error::UnknownSource(format!("table {name}")))?;
                let mut schema = BTreeMap::new();
                for key in table.key_fields()? {
                    schema.insert(key, Datatype::Text);
                }
                for (field, type_name) in table.fields_seen()? {
                    if let Some(dt) = Datatype::parse(&type_name) {
                        schema.insert(field, dt);
                    }
                }
                Ok(schema)
            }
            MetricSource::Dataset(name) => {
                let engine = TransformEngine::open(&self.ws);
                let versions = engine.versions(name)?;
                let latest = *versions
                    .last()
                    .ok_or_else(|| Error::UnknownSource(format!("dataset {name} has no versions")))?;
                let meta = engine.meta(name, latest)?;
                Ok(meta
                    .output_schema
                    .into_iter()
                    .map(|f| (f.name, f.datatype))
                    .collect())
            }
        }
    }

    /// Validate and store a metric definition. A metric computes something
    /// (dimensions or a measure); each new definition of an id needs a
    /// version greater than any stored one.
    pub fn define_metric(&self, m: &MetricDef) -> Result<()> {
        storage::check_safe_name("metric id", &m.metric_id)?;
        if m.version < 1 {
            return Err(Error::InvalidArgument("metric version must be at least 1".into()));
        }
        if m.dimensions.is_empty() && m.measure.is_none() {
            return Err(Error::InvalidArgument(format!(
                "metric {} has neither dimensions nor a measure",
                m.metric_id
            )));
        }
        let schema = self.source_schema(&m.source)?;
        let unknown = |f: &str| Error::UnknownField(format!("metric {}: field {f} not in source", m.metric_id));
        let mut seen_dims = BTreeMap::new();
        for d in &m.dimensions {
            if !schema.contains_key(d) {
                return Err(unknown(d));
            }
            if seen_dims.insert(d, ()).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "metric {} lists dimension {d} twice",
                    m.metric_id
                )));
            }
        }
        if let Some(measure) = &m.measure {
            if let Some(f) = &measure.field {
                if !schema.contains_key(f) {
                    return Err(unknown(f));
                }
            } else if measure.op != AggOp::Count {
                return Err(Error::InvalidArgument(format!(
                    "measure {} needs a field",
                    measure.op.name()
                )));
            }
            if m.dimensions.contains(&measure.name) {
                return Err(Error::InvalidArgument(format!(
                    "measure name {} collides with a dimension",
                    measure.name
                )));
            }
        }
        if let Some(filter) = &m.filter {
            for f in filter.fields() {
                if !schema.contains_key(&f) {
                    return Err(unknown(&f));
                }
            }
        }
        // the synthesized plan must itself pass static checks
        self.synthesize(m, &schema)?;

        std::fs::create_dir_all(self.metric_dir(&m.metric_id))
            .map_err(|e| Error::storage("create metric dir", e))?;
        let _lock = FileLock::acquire(&self.metric_dir(&m.metric_id).join(".lock"))?;
        if let Some(latest) = self.latest_version(&m.metric_id)? {
            if m.version <= latest {
                return Err(Error::DuplicateMetric(format!(
                    "{} v{} (latest stored is v{latest}; redefinition needs a higher version)",
                    m.metric_id, m.version
                )));
            }
        }
        let path = self.metric_dir(&m.metric_id).join(format!("v{}.json", m.version));
        let mut text = serde_json::to_string_pretty(&serde_json::to_value(m).unwrap()).unwrap();
        text.push('\n');
        storage::atomic_write(&path, text.as_bytes())
    }

    pub fn latest_version(&self, metric_id: &str) -> Result<Option<u64>> {
        let names = storage::list_dir_sorted(&self.metric_dir(metric_id), |n| n.ends_with(".json"))?;
        Ok(names
            .iter()
            .filter_map(|n| n.strip_prefix('v').and_then(|s| s.strip_suffix(".json")).and_then(|s| s.parse().ok()))
            .max())
    }

    /// Load a metric definition (latest version unless one is given).
    pub fn get_metric(&self, metric_id: &str, version: Option<u64>) -> Result<MetricDef> {
        let version = match version {
            Some(v) => v,
            None => self
                .latest_version(metric_id)?
                .ok_or_else(|| Error::NotFound(format!("metric {metric_id}")))?,
        };
        let path = self.metric_dir(metric_id).join(format!("v{version}.json"));
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::NotFound(format!("metric {metric_id} v{version}")))
            }
            Err(e) => return Err(Error::storage("read metric", e)),
        };
        serde_json::from_slice(&bytes).map_err(|e| Error::Storage(format!("corrupt metric definition: {e}")))
    }

    /// Compile a metric into a transform template over its source schema.
    pub fn synthesize(&self, m: &MetricDef, schema: &BTreeMap<String, Datatype>) -> Result<TransformTemplate> {
        let (role, from) = match &m.source {
            MetricSource::Table(name) => ("src".to_string(), InputSource::Table(name.clone())),
            MetricSource::Dataset(name) => ("src".to_string(), InputSource::Dataset(name.clone())),
        };
        let fields: Vec<FieldSpec> = schema
            .iter()
            .map(|(name, dt)| FieldSpec {
                name: name.clone(),
                datatype: *dt,
                required: false,
            })
            .collect();

        let mut plan = Vec::new();
        if let Some(filter) = &m.filter {
            plan.push(Step::Filter {
                predicate: filter.clone(),
            });
        }
        // timestamp dimensions group by UTC calendar date, keeping the name
        let mut output = Vec::new();
        for d in &m.dimensions {
            let dt = schema[d];
            let out_dt = if dt == Datatype::Timestamp {
                plan.push(Step::DeriveDate {
                    name: d.clone(),
                    from: d.clone(),
                });
                Datatype::Date
            } else {
                dt
            };
            output.push(FieldSpec {
                name: d.clone(),
                datatype: out_dt,
                required: false,
            });
        }
        let aggregates = match &m.measure {
            Some(measure) => {
                let out_dt = match (measure.op, measure.field.as_ref().map(|f| schema[f.as_str()])) {
                    (AggOp::Count, _) => Datatype::Integer,
                    (AggOp::Sum, Some(Datatype::Integer)) => Datatype::Integer,
                    (AggOp::Sum | AggOp::Avg, Some(_)) => Datatype::Decimal,
                    (AggOp::Min | AggOp::Max, Some(dt)) => dt,
                    (op, None) => {
                        return Err(Error::InvalidArgument(format!("measure {} needs a field", op.name())))
                    }
                };
                output.push(FieldSpec {
                    name: measure.name.clone(),
                    datatype: out_dt,
                    required: false,
                });
                vec![Aggregate {
                    op: measure.op,
                    field: measure.field.clone(),
                    name: measure.name.clone(),
                }]
            }
            None => Vec::new(),
        };
        plan.push(Step::GroupBy {
            keys: m.dimensions.clone(),
            aggregates,
        });

        let template = TransformTemplate {
            template_id: format!("metric_{}_v{}", m.metric_id, m.version),
            inputs: vec![TemplateInput { role, from, fields }],
            plan,
            output_schema: output,
        };
        crate::transform::check_template(&template)?;
        Ok(template)
    }

    /// Materialize the latest definition of a metric at an as-of instant.
    /// Table sources pin the instant directly; dataset sources pin the
    /// newest version created at or before it. The result lands as the
    /// next version of the curated dataset named after the metric.
    pub fn materialize_metric(
        &self,
        metric_id: &str,
        asof: DateTime<Utc>,
        now: DateTime<Utc>,
    ) -> Result<CuratedVersion> {
        let m = self.get_metric(metric_id, None)?;
        let schema = self.source_schema(&m.source)?;
        let template = self.synthesize(&m, &schema)?;
        let engine = TransformEngine::open(&self.ws);
        engine.register_template(&template)?;

        let pin = match &m.source {
            MetricSource::Table(_) => PinValue::Asof(asof),
            MetricSource::Dataset(name) => {
                let mut chosen = None;
                for v in engine.versions(name)? {
                    if engine.meta(name, v)?.created_at <= asof {
                        chosen = Some(v);
                    }
                }
                PinValue::Version(chosen.ok_or_else(|| {
                    Error::UnresolvablePin(format!("dataset {name} has no version at or before {}", format_ts(&asof)))
                })?)
            }
        };
        let mut pins = BTreeMap::new();
        pins.insert("src".to_string(), pin);
        let version = engine.run_transform(&template.template_id, &pins, Some(metric_id), now)?;

        let record = MaterializationRecord {
            metric_version: m.version,
            dataset_id: version.dataset_id.clone(),
            dataset_version: version.version,
            asof,
            at: now,
            content_digest: version.content_digest.clone(),
        };
        storage::append_line(&self.log_path(metric_id), &serde_json::to_string(&record).unwrap())?;
        Ok(version)
    }

    fn last_materialized(&self, metric_id: &str) -> Result<Option<DateTime<Utc>>> {
        let lines = storage::read_lines(&self.log_path(metric_id))?;
        let mut last = None;
        for line in lines {
            let rec: MaterializationRecord =
                serde_json::from_str(&line).map_err(|e| Error::Storage(format!("corrupt materialization log: {e}")))?;
            last = Some(rec.at);
        }
        Ok(last)
    }

    /// All metrics (latest versions) with their freshest materialization
    /// timestamps, ordered by metric id.
    pub fn list_catalog(&self) -> Result<Vec<CatalogEntry>> {
        let ids = storage::list_dir_sorted(&self.dir.join("metrics"), |n| !n.starts_with('.'))?;
        let mut out = Vec::new();
        for id in ids {
            let Some(version) = self.latest_version(&id)? else {
                continue;
            };
            let m = self.get_metric(&id, Some(version))?;
            out.push(CatalogEntry {
                metric_id: id.clone(),
                version,
                description: m.description,
                last_materialized: self.last_materialized(&id)?,
            });
        }
        Ok(out)
    }
}

/// Convenience for tests and callers: parse an RFC 3339 instant.
pub fn instant(s: &str) -> DateTime<Utc> {
    parse_ts(s).expect("valid timestamp literal")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_filter;
    use crate::value::{parse_date, Decimal, Row, Value};

    fn dec(s: &str) -> Value {
        Value::Decimal(Decimal::parse(s).unwrap())
    }

    fn row(pairs: &[(&str, Value)]) -> Row {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    /// One-table fixture: six transactions across two regions and two days.
    fn seed(ws: &Workspace) {
        let tables = TableStore::open(ws);
        let tx = tables.create("transactions", &["transaction_id".to_string()]).unwrap();
        let rows = [
            ("T1", "EU", "2025-08-25", "10.50"),
            ("T2", "US", "2025-08-25", "20"),
            ("T3", "EU", "2025-08-26", "5.25"),
            ("T4", "EU", "2025-08-26", "7"),
            ("T5", "US", "2025-08-26", "2.75"),
            ("T6", "EU", "2025-08-25", "1"),
        ]
        .iter()
        .map(|(id, region, day, amount)| {
            row(&[
                ("transaction_id", Value::Text(id.to_string())),
                ("region", Value::Text(region.to_string())),
                ("day", Value::Date(parse_date(day).unwrap())),
                ("amount", dec(amount)),
            ])
        })
        .collect::<Vec<_>>();
        tx.apply_batch(&rows, instant("2025-08-26T12:00:00Z")).unwrap();
    }

    fn revenue_metric() -> MetricDef {
        MetricDef {
            metric_id: "daily_revenue_by_region".into(),
            version: 1,
            source: MetricSource::Table("transactions".into()),
            dimensions: vec!["region".into(), "day".into()],
            measure: Some(Measure {
                op: AggOp::Sum,
                field: Some("amount".into()),
                name: "revenue".into(),
            }),
            filter: None,
            description: "Revenue per region and calendar day".into(),
        }
    }

    #[test]
    fn define_validates_and_versions() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        seed(&ws);
        let store = MetricStore::open(&ws);
        store.define_metric(&revenue_metric()).unwrap();

        // same id, same version (and lower) are rejected
        assert!(matches!(store.define_metric(&revenue_metric()), Err(Error::DuplicateMetric(_))));
        let mut v2 = revenue_metric();
        v2.version = 2;
        v2.description = "v2".into();
        store.define_metric(&v2).unwrap();
        assert_eq!(store.latest_version("daily_revenue_by_region").unwrap(), Some(2));
        assert_eq!(store.get_metric("daily_revenue_by_region", None).unwrap().description, "v2");
        assert_eq!(store.get_metric("daily_revenue_by_region", Some(1)).unwrap().description, revenue_metric().description);

        // field and source validation
        let mut bad = revenue_metric();
        bad.metric_id = "typo".into();
        bad.dimensions = vec!["reggion".into()];
        assert!(matches!(store.define_metric(&bad), Err(Error::UnknownField(_))));
        let mut bad = revenue_metric();
        bad.metric_id = "nosource".into();
        bad.source = MetricSource::Table("ghost".into());
        assert!(matches!(store.define_metric(&bad), Err(Error::UnknownSource(_))));
        let mut bad = revenue_metric();
        bad.metric_id = "empty".into();
        bad.dimensions = vec![];
        bad.measure = None;
        assert!(matches!(store.define_metric(&bad), Err(Error::InvalidArgument(_))));
        let mut bad = revenue_metric();
        bad.metric_id = "badfilter".into();
        bad.filter = Some(parse_filter("ghost_field >= 0").unwrap());
        assert!(matches!(store.define_metric(&bad), Err(Error::UnknownField(_))));
        assert!(matches!(store.get_metric("never_defined", None), Err(Error::NotFound(_))));
    }

    #[test]
    fn materialization_matches_brute_force_group_by() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        seed(&ws);
        let store = MetricStore::open(&ws);
        store.define_metric(&revenue_metric()).unwrap();

        let asof = instant("2025-08-27T00:00:00Z");
        let v = store
            .materialize_metric("daily_revenue_by_region", asof, instant("2025-08-27T01:00:00Z"))
            .unwrap();
        assert_eq!(v.dataset_id, "daily_revenue_by_region");
        assert_eq!(v.version, 1);
        assert_eq!(v.row_count, 4);

        let engine = TransformEngine::open(&ws);
        let rows = engine.read_rows("daily_revenue_by_region", 1).unwrap();

        // independent oracle: nested-loop accumulation in integer cents
        let fixture = [
            ("EU", "2025-08-25", 105_000i128),
            ("US", "2025-08-25", 200_000),
            ("EU", "2025-08-26", 52_500 + 70_000),
            ("US", "2025-08-26", 27_500),
            ("EU", "2025-08-25", 10_000),
        ];
        let mut oracle: BTreeMap<(String, String), i128> = BTreeMap::new();
        for (region, day, scaled) in fixture {
            *oracle.entry((region.to_string(), day.to_string())).or_insert(0) += scaled;
        }
        assert_eq!(rows.len(), oracle.len());
        for r in &rows {
            let key = (
                match &r["region"] {
                    Value::Text(s) => s.clone(),
                    other => panic!("{other:?}"),
                },
                r["day"].canonical_string(),
            );
            assert_eq!(r["revenue"].as_decimal().unwrap().scaled(), oracle[&key], "{key:?}");
        }
        // hand check: EU on the 25th = 10.50 + 1 = 11.50
        let eu25 = rows
            .iter()
            .find(|r| r["region"] == Value::Text("EU".into()) && r["day"].canonical_string() == "2025-08-25")
            .unwrap();
        assert_eq!(eu25["revenue"].as_decimal().unwrap(), Decimal::parse("11.5").unwrap());

        // determinism: same as-of twice, identical digests, distinct versions
        let v2 = store
            .materialize_metric("daily_revenue_by_region", asof, instant("2025-08-27T02:00:00Z"))
            .unwrap();
        assert_eq!(v2.version, 2);
        assert_eq!(v2.content_digest, v.content_digest);

        // metric/plan equivalence: running the synthesized template directly
        // produces the same digest
        let m = store.get_metric("daily_revenue_by_region", None).unwrap();
        let schema = store.source_schema(&m.source).unwrap();
        let template = store.synthesize(&m, &schema).unwrap();
        let mut pins = BTreeMap::new();
        pins.insert("src".to_string(), PinValue::Asof(asof));
        let direct = engine
            .run_transform(&template.template_id, &pins, Some("direct"), instant("2025-08-27T03:00:00Z"))
            .unwrap();
        assert_eq!(direct.content_digest, v.content_digest);
    }

    #[test]
    fn empty_asof_yields_empty_output_with_schema() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        seed(&ws);
        let store = MetricStore::open(&ws);
        store.define_metric(&revenue_metric()).unwrap();
        // as-of before the batch load: no rows visible
        let v = store
            .materialize_metric("daily_revenue_by_region", instant("2025-08-20T00:00:00Z"), instant("2025-08-27T00:00:00Z"))
            .unwrap();
        assert_eq!(v.row_count, 0);
        assert_eq!(
            v.output_schema.iter().map(|f| f.name.as_str()).collect::<Vec<_>>(),
            vec!["region", "day", "revenue"]
        );
        assert_eq!(v.output_schema[2].datatype, Datatype::Decimal);
    }

    #[test]
    fn timestamp_dimensions_truncate_to_utc_dates() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        let tables = TableStore::open(&ws);
        let events = tables.create("events", &["event_id".to_string()]).unwrap();
        let rows = [
            ("E1", "2025-08-25T08:30:00Z"),
            ("E2", "2025-08-25T23:59:59Z"),
            ("E3", "2025-08-26T00:00:00Z"),
        ]
        .iter()
        .map(|(id, ts)| {
            row(&[
                ("event_id", Value::Text(id.to_string())),
                ("occurred_at", Value::Timestamp(instant(ts))),
            ])
        })
        .collect::<Vec<_>>();
        events.apply_batch(&rows, instant("2025-08-26T01:00:00Z")).unwrap();

        let store = MetricStore::open(&ws);
        store
            .define_metric(&MetricDef {
                metric_id: "daily_events".into(),
                version: 1,
                source: MetricSource::Table("events".into()),
                dimensions: vec!["occurred_at".into()],
                measure: Some(Measure {
                    op: AggOp::Count,
                    field: None,
                    name: "events".into(),
                }),
                filter: None,
                description: "Events per UTC day".into(),
            })
            .unwrap();
        store
            .materialize_metric("daily_events", instant("2025-08-27T00:00:00Z"), instant("2025-08-27T00:00:00Z"))
            .unwrap();
        let rows = TransformEngine::open(&ws).read_rows("daily_events", 1).unwrap();
        // E1+E2 collapse onto the 25th; E3 lands on the 26th
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0]["occurred_at"], Value::Date(parse_date("2025-08-25").unwrap()));
        assert_eq!(rows[0]["events"], Value::Integer(2));
        assert_eq!(rows[1]["occurred_at"], Value::Date(parse_date("2025-08-26").unwrap()));
        assert_eq!(rows[1]["events"], Value::Integer(1));
    }

    #[test]
    fn filters_apply_before_grouping() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        seed(&ws);
        let store = MetricStore::open(&ws);
        let mut m = revenue_metric();
        m.metric_id = "eu_revenue".into();
        m.dimensions = vec!["day".into()];
        m.filter = Some(parse_filter("region = 'EU'").unwrap());
        store.define_metric(&m).unwrap();
        store
            .materialize_metric("eu_revenue", instant("2025-08-27T00:00:00Z"), instant("2025-08-27T00:00:00Z"))
            .unwrap();
        let rows = TransformEngine::open(&ws).read_rows("eu_revenue", 1).unwrap();
        assert_eq!(rows.len(), 2);
        // 25th: 10.50 + 1; 26th: 5.25 + 7 — US rows excluded
        assert_eq!(rows[0]["revenue"].as_decimal().unwrap(), Decimal::parse("11.5").unwrap());
        assert_eq!(rows[1]["revenue"].as_decimal().unwrap(), Decimal::parse("12.25").unwrap());
    }

    #[test]
    fn metrics_read_curated_datasets_by_version_pin() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        seed(&ws);
        // build a curated dataset first (identity over transactions)
        let engine = TransformEngine::open(&ws);
        let identity = TransformTemplate {
            template_id: "tx_snapshot".into(),
            inputs: vec![TemplateInput {
                role: "tx".into(),
                from: InputSource::Table("transactions".into()),
                fields: vec![
                    FieldSpec { name: "transaction_id".into(), datatype: Datatype::Text, required: false },
                    FieldSpec { name: "region".into(), datatype: Datatype::Text, required: false },
                    FieldSpec { name: "amount".into(), datatype: Datatype::Decimal, required: false },
                ],
            }],
            plan: vec![],
            output_schema: vec![
                FieldSpec { name: "transaction_id".into(), datatype: Datatype::Text, required: false },
                FieldSpec { name: "region".into(), datatype: Datatype::Text, required: false },
                FieldSpec { name: "amount".into(), datatype: Datatype::Decimal, required: false },
            ],
        };
        engine.register_template(&identity).unwrap();
        let mut pins = BTreeMap::new();
        pins.insert("tx".to_string(), PinValue::Asof(instant("2025-08-27T00:00:00Z")));
        engine
            .run_transform("tx_snapshot", &pins, None, instant("2025-08-27T01:00:00Z"))
            .unwrap();

        let store = MetricStore::open(&ws);
        store
            .define_metric(&MetricDef {
                metric_id: "region_totals".into(),
                version: 1,
                source: MetricSource::Dataset("tx_snapshot".into()),
                dimensions: vec!["region".into()],
                measure: Some(Measure {
                    op: AggOp::Sum,
                    field: Some("amount".into()),
                    name: "total".into(),
                }),
                filter: None,
                description: String::new(),
            })
            .unwrap();

        // as-of before the dataset existed: unresolvable
        assert!(matches!(
            store.materialize_metric("region_totals", instant("2025-08-26T00:00:00Z"), instant("2025-08-28T00:00:00Z")),
            Err(Error::UnresolvablePin(_))
        ));
        let v = store
            .materialize_metric("region_totals", instant("2025-08-27T02:00:00Z"), instant("2025-08-28T00:00:00Z"))
            .unwrap();
        assert_eq!(v.input_pins["src"], PinValue::Version(1));
        let rows = engine.read_rows("region_totals", 1).unwrap();
        assert_eq!(rows.len(), 2);
        // EU = 10.50 + 5.25 + 7 + 1 = 23.75; US = 20 + 2.75 = 22.75
        assert_eq!(rows[0]["region"], Value::Text("EU".into()));
        assert_eq!(rows[0]["total"].as_decimal().unwrap(), Decimal::parse("23.75").unwrap());
        assert_eq!(rows[1]["total"].as_decimal().unwrap(), Decimal::parse("22.75").unwrap());
    }

    #[test]
    fn catalog_lists_alphabetically_with_materialization_times() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        seed(&ws);
        let store = MetricStore::open(&ws);
        assert_eq!(store.list_catalog().unwrap(), vec![]);

        let mut b = revenue_metric();
        b.metric_id = "beta_metric".into();
        let mut a = revenue_metric();
        a.metric_id = "alpha_metric".into();
        store.define_metric(&b).unwrap();
        store.define_metric(&a).unwrap();

        let catalog = store.list_catalog().unwrap();
        assert_eq!(
            catalog.iter().map(|e| e.metric_id.as_str()).collect::<Vec<_>>(),
            vec!["alpha_metric", "beta_metric"]
        );
        assert!(catalog.iter().all(|e| e.last_materialized.is_none()));

        let at = instant("2025-08-27T05:00:00Z");
        store.materialize_metric("beta_metric", instant("2025-08-27T00:00:00Z"), at).unwrap();
        let catalog = store.list_catalog().unwrap();
        assert_eq!(catalog[0].last_materialized, None);
        assert_eq!(catalog[1].last_materialized, Some(at));
        assert_eq!(catalog[1].version, 1);
    }
}
