//! End-to-end lifecycles through the public crate surface, driven the way
//! an embedding application would: publish definitions, run batches through
//! stored pipelines, then interrogate every downstream store (versioned
//! tables, quarantine, curated datasets, metrics, quality, raw tiers).
//!
//! Derived figures (curated totals, metric values) are checked against
//! independent recomputations from the primary stores, not against the
//! engine's own outputs.

use chrono::{DateTime, Utc};

use pipeforge_core::contract::{Contract, ContractRegistry, FieldSpec, Rule, RuleKind, Severity};
use pipeforge_core::pipeline::{
    self, BatchInput, ContractChoice, OnHardViolation, Pattern, PipelineSpec, PipelineStore,
    RunStatus,
};
use pipeforge_core::quality::{QualityStore, SloConfig, SuggestedAction};
use pipeforge_core::ratio::Fraction;
use pipeforge_core::raw::{RawStore, SourceRegistration, Tier, TieringPolicy};
use pipeforge_core::semantic::{Measure, MetricDef, MetricSource, MetricStore};
use pipeforge_core::records::PayloadFormat;
use pipeforge_core::transform::{
    AggOp, Aggregate, InputSource, Step, TemplateInput, TransformEngine, TransformTemplate,
};
use pipeforge_core::validation::{Decision, QuarantineStore};
use pipeforge_core::value::{parse_ts, Datatype, Decimal, Row, Value};
use pipeforge_core::versioned::TableStore;
use pipeforge_core::Workspace;

fn ts(s: &str) -> DateTime<Utc> {
    parse_ts(s).unwrap()
}

fn dec(s: &str) -> Value {
    Value::Decimal(Decimal::parse(s).unwrap())
}

fn text(s: &str) -> Value {
    Value::Text(s.into())
}

fn payments_contract() -> Contract {
    Contract {
        name: "payments".into(),
        version: 1,
        fields: vec![
            FieldSpec { name: "client_id".into(), datatype: Datatype::Text, required: true },
            FieldSpec { name: "amount".into(), datatype: Datatype::Decimal, required: true },
            FieldSpec { name: "email".into(), datatype: Datatype::Text, required: false },
        ],
        rules: vec![
            Rule {
                id: "client_id_present".into(),
                field: Some("client_id".into()),
                kind: RuleKind::Required,
                severity: Severity::Hard,
            },
            Rule {
                id: "amount_present".into(),
                field: Some("amount".into()),
                kind: RuleKind::Required,
                severity: Severity::Hard,
            },
            Rule {
                id: "amount_nonneg".into(),
                field: Some("amount".into()),
                kind: RuleKind::Range { min: Some(Decimal::zero()), max: None },
                severity: Severity::Hard,
            },
            Rule {
                id: "email_present".into(),
                field: Some("email".into()),
                kind: RuleKind::Required,
                severity: Severity::Soft,
            },
        ],
    }
}

fn client_totals_template() -> TransformTemplate {
    TransformTemplate {
        template_id: "client_totals".into(),
        inputs: vec![TemplateInput {
            role: "payments".into(),
            from: InputSource::Table("payments".into()),
            fields: vec![
                FieldSpec { name: "client_id".into(), datatype: Datatype::Text, required: true },
                FieldSpec { name: "amount".into(), datatype: Datatype::Decimal, required: false },
            ],
        }],
        plan: vec![Step::GroupBy {
            keys: vec!["client_id".into()],
            aggregates: vec![Aggregate {
                op: AggOp::Sum,
                field: Some("amount".into()),
                name: "total".into(),
            }],
        }],
        output_schema: vec![
            FieldSpec { name: "client_id".into(), datatype: Datatype::Text, required: true },
            FieldSpec { name: "total".into(), datatype: Datatype::Decimal, required: false },
        ],
    }
}

/// Validate-then-load pipeline over four daily batches, one of them dirty.
/// The dirty day halts and leaves every downstream store untouched; the day
/// after, the adherence indicator reflects the outage and raises an alert.
#[test]
fn gated_pipeline_accrues_history_curation_and_quality() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(dir.path());

    ContractRegistry::open(&ws).put(&payments_contract()).unwrap();
    // The target table must exist before templates can name it; its field
    // schema accrues from loads, so the metric is defined after day one.
    TableStore::open(&ws).create("payments", &["client_id".into()]).unwrap();
    TransformEngine::open(&ws).register_template(&client_totals_template()).unwrap();
    QualityStore::open(&ws)
        .put_slo(&SloConfig {
            dataset: "payments_quality".into(),
            max_freshness_seconds: Some(86_400),
            min_completeness: None,
            min_accuracy: None,
            min_adherence: Some(Fraction::new(9, 10)),
            accuracy_counts_soft: false,
            adherence_window: 30,
            expected: None,
        })
        .unwrap();

    let mut spec = PipelineSpec {
        pipeline_id: "payments_flow".into(),
        pattern: Pattern::EtltPp,
        source: None,
        contract: Some(ContractChoice { name: "payments".into(), version: None }),
        target_table: Some("payments".into()),
        key_fields: vec!["client_id".into()],
        templates: vec!["client_totals".into()],
        metrics: vec![],
        slo: Some("payments_quality".into()),
        on_hard_violation: OnHardViolation::HaltBatch,
        tiering: None,
    };
    let store = PipelineStore::open(&ws);
    store.put(&spec).unwrap();
    assert_eq!(store.list().unwrap(), vec!["payments_flow".to_string()]);

    let run = |spec: &PipelineSpec, batch_id: &str, payload: &str, at: &str| {
        pipeline::run_batch(
            &ws,
            spec,
            &BatchInput {
                batch_id,
                payload: payload.as_bytes(),
                format: Some(PayloadFormat::Csv),
                load_ts: ts(at),
            },
        )
        .unwrap()
    };

    // Day 1: two clients appear.
    let r1 = run(
        &spec,
        "b1",
        "client_id,amount,email\nc1,10.00,a@x.io\nc2,5.50,b@x.io\n",
        "2025-08-26T09:00:00Z",
    );
    assert_eq!(r1.status, RunStatus::Succeeded);
    let v = r1.versioning.as_ref().unwrap();
    assert_eq!((v.inserted, v.closed, v.unchanged), (2, 0, 0));
    assert_eq!(r1.datasets.len(), 1, "template output only; no metric yet");
    assert_eq!(r1.datasets[0].dataset_id, "client_totals");
    assert_eq!(r1.datasets[0].version, 1);

    // With one load in, the table has observed fields, so a metric over
    // `amount` can now be defined and wired into the stored pipeline.
    MetricStore::open(&ws)
        .define_metric(&MetricDef {
            metric_id: "revenue".into(),
            version: 1,
            source: MetricSource::Table("payments".into()),
            dimensions: vec![],
            measure: Some(Measure {
                op: AggOp::Sum,
                field: Some("amount".into()),
                name: "revenue".into(),
            }),
            filter: None,
            description: "total payment volume".into(),
        })
        .unwrap();
    spec.metrics = vec!["revenue".into()];
    store.put(&spec).unwrap();
    assert_eq!(store.get("payments_flow").unwrap(), spec);

    // Day 2: c1 changes, c2 repeats unchanged.
    let r2 = run(
        &spec,
        "b2",
        "client_id,amount,email\nc1,12.00,a@x.io\nc2,5.50,b@x.io\n",
        "2025-08-27T09:00:00Z",
    );
    let v = r2.versioning.as_ref().unwrap();
    assert_eq!((v.inserted, v.closed, v.unchanged), (1, 1, 1));

    // Day 3: a negative amount halts the whole batch at the gate.
    let r3 = run(&spec, "b3", "client_id,amount,email\nc1,-3.00,a@x.io\n", "2025-08-28T09:00:00Z");
    assert_eq!(r3.status, RunStatus::HaltedOnContract);
    let stages: Vec<&str> = r3.timings.iter().map(|t| t.stage.as_str()).collect();
    assert_eq!(stages, ["extract", "contract", "validate"], "halt skips load and later stages");
    assert!(r3.versioning.is_none() && r3.datasets.is_empty() && r3.sli.is_none());
    let verdict = r3.verdict.as_ref().unwrap();
    assert_eq!(verdict.decision, Decision::Halt);
    assert_eq!(verdict.total_hard_violations, 1);

    // The halted day changed nothing downstream: no new table version for
    // c1, no new curated versions.
    let table = TableStore::open(&ws).open_table("payments").unwrap();
    let mut c1_key = Row::new();
    c1_key.insert("client_id".into(), text("c1"));
    assert_eq!(table.history(&c1_key).unwrap().len(), 2);
    assert_eq!(TransformEngine::open(&ws).versions("client_totals").unwrap(), vec![1, 2]);

    // The reject is quarantined with its as-arrived values and reasons.
    let entries = QuarantineStore::open(&ws).read("b3").unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0].hard_violations.len(), 1);
    assert_eq!(entries[0].hard_violations[0].rule_id, "amount_nonneg");
    let row = entries[0].record_row().unwrap();
    assert_eq!(row["amount"], dec("-3.00"));

    // Day 4: clean again; the quality check now sees 3 compliant of 4
    // logged batches and flags the broken adherence objective.
    let r4 = run(
        &spec,
        "b4",
        "client_id,amount,email\nc1,20.00,a@x.io\nc3,7.25,c@x.io\n",
        "2025-08-29T09:00:00Z",
    );
    assert_eq!(r4.status, RunStatus::Succeeded);
    let v = r4.versioning.as_ref().unwrap();
    assert_eq!((v.inserted, v.closed, v.unchanged), (2, 1, 0));
    let sli = r4.sli.as_ref().unwrap();
    assert_eq!(sli.freshness_seconds, 0, "checked at the batch instant itself");
    assert_eq!(sli.adherence, Fraction::new(3, 4));
    assert_eq!(sli.accuracy, Fraction::one());
    assert_eq!(sli.window, "last 4 of 4 batches");
    assert!(sli.flags.iter().any(|f| f == "completeness_vacuous"), "no expected count configured");
    assert_eq!(r4.alerts.len(), 1);
    assert_eq!(r4.alerts[0].sli, "adherence");
    assert_eq!(r4.alerts[0].observed, "0.75");
    assert_eq!(r4.alerts[0].threshold, "0.9");
    assert_eq!(r4.alerts[0].suggested_action, SuggestedAction::Review);

    // Time travel: day-2 state, full history of c1, and current state.
    // Stored numbers come back in canonical form (12.00 reads as the
    // integer 12), so numeric comparisons here are semantic.
    let sem = |v: &Value, want: &str| {
        assert!(v.semantic_eq(&dec(want)), "{v:?} != {want}");
    };
    let asof = table.query_asof(ts("2025-08-27T12:00:00Z")).unwrap();
    assert_eq!(asof.len(), 2);
    assert_eq!(asof[0].key["client_id"], text("c1"));
    sem(&asof[0].payload["amount"], "12.00");
    assert_eq!(asof[1].key["client_id"], text("c2"));
    sem(&asof[1].payload["amount"], "5.50");

    let history = table.history(&c1_key).unwrap();
    assert_eq!(history.len(), 3);
    sem(&history[0].payload["amount"], "10.00");
    assert_eq!(history[0].valid_to, Some(ts("2025-08-27T09:00:00Z")));
    sem(&history[1].payload["amount"], "12.00");
    assert_eq!(history[1].valid_to, Some(ts("2025-08-29T09:00:00Z")));
    sem(&history[2].payload["amount"], "20.00");
    assert_eq!(history[2].valid_to, None);

    // Independent oracle for the curated outputs: recompute the grouped
    // totals and the metric directly from the table's current rows.
    let engine = TransformEngine::open(&ws);
    let current = table.current().unwrap();
    let mut oracle_total = Decimal::zero();
    for r in &current {
        oracle_total = oracle_total.checked_add(r.payload["amount"].as_decimal().unwrap()).unwrap();
    }
    let totals = engine.read_rows("client_totals", 3).unwrap();
    assert_eq!(totals.len(), current.len(), "one group per client");
    for t in &totals {
        let client = t["client_id"].canonical_string();
        let expect = current
            .iter()
            .find(|r| r.key["client_id"].canonical_string() == client)
            .unwrap()
            .payload["amount"]
            .clone();
        assert!(t["total"].semantic_eq(&expect), "{client}: {:?} != {expect:?}", t["total"]);
    }
    let metric_dataset = &r4.datasets[1];
    let metric_rows = engine.read_rows(&metric_dataset.dataset_id, metric_dataset.version).unwrap();
    assert_eq!(metric_rows.len(), 1);
    assert!(
        metric_rows[0]["revenue"].semantic_eq(&Value::Decimal(oracle_total)),
        "metric {:?} vs oracle {oracle_total}",
        metric_rows[0]["revenue"]
    );

    // Replay the first curated version after two later loads: identical
    // bytes, recorded as a replay.
    let replayed = engine.replay("client_totals", 1, ts("2025-08-30T00:00:00Z")).unwrap();
    assert_eq!(replayed.replay_of, Some(1));
    assert_eq!(replayed.content_digest, engine.meta("client_totals", 1).unwrap().content_digest);

    // Lineage of version 1 pins the table at the first batch instant.
    let meta = engine.meta("client_totals", 1).unwrap();
    assert_eq!(
        meta.input_pins["payments"],
        pipeforge_core::transform::PinValue::Asof(ts("2025-08-26T09:00:00Z"))
    );

    // Every run left exactly one report, readable back verbatim.
    let runs = pipeline::list_runs(&ws).unwrap();
    assert_eq!(
        runs,
        vec!["payments_flow-b1", "payments_flow-b2", "payments_flow-b3", "payments_flow-b4"]
    );
    assert_eq!(pipeline::read_run(&ws, "payments_flow-b3").unwrap(), r3);
}

/// Load-then-transform pipeline over three equal-sized daily feeds: the
/// dirty day is stored anyway with a non-blocking verdict and an accuracy
/// alert, curation filters it downstream, and the fraction tiering policy
/// cools all but the newest third of the raw zone.
#[test]
fn landing_pipeline_tiers_raw_and_curates_downstream() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(dir.path());
    let raw = RawStore::open(&ws);

    raw.register_source(&SourceRegistration {
        source_id: "events".into(),
        format: PayloadFormat::Csv,
        path_pattern: "events/{date}".into(),
        contract_name: Some("events_contract".into()),
        schedule_hint: "daily".into(),
    })
    .unwrap();
    ContractRegistry::open(&ws)
        .put(&Contract {
            name: "events_contract".into(),
            version: 1,
            fields: vec![
                FieldSpec { name: "event_id".into(), datatype: Datatype::Text, required: true },
                FieldSpec { name: "value".into(), datatype: Datatype::Decimal, required: true },
            ],
            rules: vec![Rule {
                id: "value_nonneg".into(),
                field: Some("value".into()),
                kind: RuleKind::Range { min: Some(Decimal::zero()), max: None },
                severity: Severity::Hard,
            }],
        })
        .unwrap();
    TransformEngine::open(&ws)
        .register_template(&TransformTemplate {
            template_id: "event_totals".into(),
            inputs: vec![TemplateInput {
                role: "events".into(),
                from: InputSource::Raw("events".into()),
                fields: vec![
                    FieldSpec { name: "event_id".into(), datatype: Datatype::Text, required: true },
                    FieldSpec { name: "value".into(), datatype: Datatype::Decimal, required: false },
                ],
            }],
            plan: vec![
                Step::Filter { predicate: pipeforge_core::expr::parse_filter("value >= 0").unwrap() },
                Step::GroupBy {
                    keys: vec![],
                    aggregates: vec![
                        Aggregate { op: AggOp::Count, field: None, name: "n".into() },
                        Aggregate { op: AggOp::Sum, field: Some("value".into()), name: "total".into() },
                    ],
                },
            ],
            output_schema: vec![
                FieldSpec { name: "n".into(), datatype: Datatype::Integer, required: true },
                FieldSpec { name: "total".into(), datatype: Datatype::Decimal, required: false },
            ],
        })
        .unwrap();
    QualityStore::open(&ws)
        .put_slo(&SloConfig {
            dataset: "events_quality".into(),
            max_freshness_seconds: None,
            min_completeness: None,
            min_accuracy: Some(Fraction::new(9, 10)),
            min_adherence: None,
            accuracy_counts_soft: false,
            adherence_window: 30,
            expected: None,
        })
        .unwrap();

    let spec = PipelineSpec {
        pipeline_id: "events_flow".into(),
        pattern: Pattern::EltlPp,
        source: Some("events".into()),
        contract: Some(ContractChoice { name: "events_contract".into(), version: None }),
        target_table: None,
        key_fields: vec![],
        templates: vec!["event_totals".into()],
        metrics: vec![],
        slo: Some("events_quality".into()),
        on_hard_violation: OnHardViolation::default(),
        tiering: Some(TieringPolicy::fraction(Fraction::new(1, 3).ratio().clone())),
    };
    PipelineStore::open(&ws).put(&spec).unwrap();

    // Three payloads of identical byte length, so the 1/3 fraction policy
    // keeps exactly the newest segment hot.
    let d1 = "event_id,value\ne1,5.00\ne2,6.00\n";
    let d2 = "event_id,value\ne3,-4.00\ne4,3.0\n"; // e3 is dirty
    let d3 = "event_id,value\ne5,1.00\ne6,2.00\n";
    assert_eq!(d1.len(), d2.len());
    assert_eq!(d1.len(), d3.len());

    let run = |batch_id: &str, payload: &str, at: &str| {
        pipeline::run_batch(
            &ws,
            &spec,
            &BatchInput { batch_id, payload: payload.as_bytes(), format: None, load_ts: ts(at) },
        )
        .unwrap()
    };

    let r1 = run("d1", d1, "2025-09-01T06:00:00Z");
    assert_eq!(r1.status, RunStatus::Succeeded);
    assert_eq!(r1.raw_segment.as_deref(), Some("events/2025-09-01/segment-1"));
    assert_eq!(r1.verdict.as_ref().unwrap().decision, Decision::Proceed);
    let t = r1.tiering.as_ref().unwrap();
    assert_eq!((t.hot_segments, t.cool_segments), (1, 0));

    // The dirty day: stored byte-identically, verdict recorded, accuracy
    // alert raised — and the run still succeeds.
    let r2 = run("d2", d2, "2025-09-02T06:00:00Z");
    assert_eq!(r2.status, RunStatus::Succeeded, "load-first never blocks on the contract");
    let verdict = r2.verdict.as_ref().unwrap();
    assert_eq!(verdict.decision, Decision::Halt, "the verdict itself is still honest");
    assert_eq!(verdict.hard_violating_records, 1);
    assert_eq!(r2.alerts.len(), 1);
    assert_eq!(r2.alerts[0].sli, "accuracy");
    assert_eq!(r2.alerts[0].observed, "0.5");
    let (seg, bytes) = raw.read_segment_bytes(r2.raw_segment.as_deref().unwrap()).unwrap();
    assert_eq!(bytes, d2.as_bytes(), "raw zone preserves the payload exactly");
    assert_eq!(seg.tier, Tier::Hot);
    let t = r2.tiering.as_ref().unwrap();
    assert_eq!((t.hot_segments, t.cool_segments), (1, 1));
    assert_eq!(t.moved_to_cool, vec!["events/2025-09-01/segment-1".to_string()]);

    let r3 = run("d3", d3, "2025-09-03T06:00:00Z");
    let t = r3.tiering.as_ref().unwrap();
    assert_eq!((t.hot_segments, t.cool_segments), (1, 2));
    let (hot, cool) = raw.tier_totals(None).unwrap();
    assert_eq!(hot, d3.len() as u64);
    assert_eq!(cool, (d1.len() + d2.len()) as u64);

    // Curated outputs: recompute each day's filtered totals from the raw
    // segments themselves.
    let engine = TransformEngine::open(&ws);
    assert_eq!(engine.versions("event_totals").unwrap(), vec![1, 2, 3]);
    for (version, report) in [(1u64, &r1), (2, &r2), (3, &r3)] {
        let seg_id = report.raw_segment.as_deref().unwrap();
        let mut n = 0i64;
        let mut total = Decimal::zero();
        for rec in raw.segment_records(seg_id).unwrap() {
            let v = rec.values["value"].as_decimal().unwrap();
            if !v.is_negative() {
                n += 1;
                total = total.checked_add(v).unwrap();
            }
        }
        let rows = engine.read_rows("event_totals", version).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0]["n"], Value::Integer(n), "day {version}");
        assert!(rows[0]["total"].semantic_eq(&Value::Decimal(total)), "day {version}");
    }

    // Replay the first curated day after later ingests: pinned to its
    // segment, the output reproduces exactly.
    let replayed = engine.replay("event_totals", 1, ts("2025-09-04T00:00:00Z")).unwrap();
    assert_eq!(replayed.replay_of, Some(1));
    assert_eq!(replayed.content_digest, engine.meta("event_totals", 1).unwrap().content_digest);
}
