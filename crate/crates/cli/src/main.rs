//! `pipeforge` — command-line front end for the pipeline engine.
//!
//! Every subcommand operates on one workspace directory (`--workspace`,
//! or the `PIPEFORGE_WORKSPACE` environment variable, default
//! `./pipeforge-data`). Read commands take `--output json|table`; JSON
//! output is one newline-terminated document with a stable schema.
//!
//! Exit codes separate data conditions from failures:
//! * `0` — success
//! * `2` — actionable data condition: a contract halted the batch, or a
//!   quality objective was breached
//! * `1` — everything else (usage errors, missing inputs, I/O failures)

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use chrono::{DateTime, NaiveDate, Utc};
use clap::{Parser, Subcommand, ValueEnum};

use pipeforge_core::contract::{lint_contract, parse_contract, to_canonical_json, Contract, ContractRegistry};
use pipeforge_core::cost::{estimate_cost, estimate_cost_gb, CostRates};
use pipeforge_core::pipeline::{
    self, BatchInput, BenchFixture, FaultPlan, Pattern, PipelineStore, RunReport, RunStatus,
};
use pipeforge_core::quality::{QualityStore, SloConfig};
use pipeforge_core::raw::{RawStore, SourceRegistration, TieringPolicy};
use pipeforge_core::ratio::{rational_from_decimal, Fraction};
use pipeforge_core::records::{read_records, PayloadFormat};
use pipeforge_core::semantic::{MetricDef, MetricStore};
use pipeforge_core::transform::{PinValue, TransformEngine, TransformTemplate};
use pipeforge_core::validation::{evaluate_batch, Decision};
use pipeforge_core::value::{format_ts, parse_date, parse_ts, row_from_json, row_to_json, Row};
use pipeforge_core::versioned::{TableStore, VersionedRow};
use pipeforge_core::Workspace;

// ------------------------------------------------------------------- args --

#[derive(Parser)]
#[command(
    name = "pipeforge",
    version,
    about = "Batch pipeline engine: contract-gated or load-first ingestion, versioned tables \
             with time travel, raw-zone tiering, replayable transforms, metrics, and quality SLOs."
)]
struct Cli {
    /// Workspace directory holding all engine state.
    #[arg(long, global = true, env = "PIPEFORGE_WORKSPACE", default_value = "./pipeforge-data")]
    workspace: PathBuf,
    /// Output form for read commands.
    #[arg(long, global = true, value_enum, default_value_t = Output::Json)]
    output: Output,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Output {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Manage data contracts (publish, read, lint).
    Contract {
        #[command(subcommand)]
        cmd: ContractCmd,
    },
    /// Validate a batch file against a contract without loading anything.
    Validate {
        /// Batch payload file (CSV with header, or NDJSON).
        batch: PathBuf,
        /// Contract name to validate against.
        #[arg(long)]
        contract: String,
        /// Contract version (default: latest).
        #[arg(long)]
        version: Option<u32>,
        /// Payload format (default: inferred from the file extension).
        #[arg(long)]
        format: Option<String>,
        /// Batch id used in the verdict (default: the file stem).
        #[arg(long)]
        batch_id: Option<String>,
    },
    /// Ingest a batch: into the raw zone, or through a pipeline.
    Ingest {
        #[command(subcommand)]
        cmd: IngestCmd,
    },
    /// Query versioned tables.
    Query {
        #[command(subcommand)]
        cmd: QueryCmd,
    },
    /// Full version history of one key in a versioned table.
    History {
        #[arg(long)]
        table: String,
        /// Key as a JSON object, e.g. '{"client_id":"T002"}'.
        #[arg(long)]
        key: String,
    },
    /// Manage and run transformation templates.
    Transform {
        #[command(subcommand)]
        cmd: TransformCmd,
    },
    /// Manage and materialize curated metrics.
    Metric {
        #[command(subcommand)]
        cmd: MetricCmd,
    },
    /// Quality objectives, indicator checks, and history.
    Quality {
        #[command(subcommand)]
        cmd: QualityCmd,
    },
    /// Raw-zone tiering.
    Tier {
        #[command(subcommand)]
        cmd: TierCmd,
    },
    /// Storage + compute cost model.
    Cost {
        #[command(subcommand)]
        cmd: CostCmd,
    },
    /// Strategy benchmark over a generated fixture.
    Bench {
        #[command(subcommand)]
        cmd: BenchCmd,
    },
    /// Manage pipeline specs.
    Pipeline {
        #[command(subcommand)]
        cmd: PipelineCmd,
    },
    /// Manage raw-zone source registrations.
    Source {
        #[command(subcommand)]
        cmd: SourceCmd,
    },
}

#[derive(Subcommand)]
enum ContractCmd {
    /// Publish a contract document (version must exceed the latest).
    Put { file: PathBuf },
    /// Print a stored contract in canonical form.
    Get {
        name: String,
        #[arg(long)]
        version: Option<u32>,
    },
    /// Advisory checks on a contract document (does not publish).
    Lint { file: PathBuf },
    /// List all published contract versions.
    List,
}

#[derive(Subcommand)]
enum IngestCmd {
    /// Store a payload in the raw zone exactly as it arrived.
    Raw {
        /// Registered source id.
        #[arg(long)]
        source: String,
        /// Payload file.
        #[arg(long)]
        file: PathBuf,
        /// Load date (default: today, UTC).
        #[arg(long)]
        date: Option<String>,
    },
    /// Run a batch through a validate-then-load pipeline.
    Etlt(RunArgs),
    /// Run a batch through a load-then-transform pipeline.
    Eltl(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Pipeline id (must match the subcommand's pattern).
    #[arg(long)]
    pipeline: String,
    /// Batch payload file.
    #[arg(long)]
    file: PathBuf,
    /// Batch id (default: the file stem).
    #[arg(long)]
    batch_id: Option<String>,
    /// Payload format, when the pipeline names no source.
    #[arg(long)]
    format: Option<String>,
    /// Logical batch instant (default: now).
    #[arg(long)]
    at: Option<String>,
}

#[derive(Subcommand)]
enum QueryCmd {
    /// Rows valid at a point in time (date or RFC 3339 timestamp).
    Asof {
        #[arg(long)]
        table: String,
        #[arg(long)]
        at: String,
    },
    /// Rows valid now (open validity windows).
    Current {
        #[arg(long)]
        table: String,
    },
}

#[derive(Subcommand)]
enum TransformCmd {
    /// Register a transformation template document.
    Put { file: PathBuf },
    /// Execute a template with explicit input pins.
    Run {
        #[arg(long)]
        template: String,
        /// Output dataset id (default: the template id).
        #[arg(long)]
        dataset: Option<String>,
        /// Input pin, repeatable: role=asof:<time>, role=segments:<a,b>,
        /// or role=version:<n>.
        #[arg(long = "pin")]
        pins: Vec<String>,
        /// Version creation time (default: now).
        #[arg(long)]
        at: Option<String>,
    },
    /// Re-execute a stored version; its digest must reproduce exactly.
    Replay {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        version: u64,
        /// Version creation time for the replay record (default: now).
        #[arg(long)]
        at: Option<String>,
    },
}

#[derive(Subcommand)]
enum MetricCmd {
    /// Define (or version) a metric from a definition document.
    Define { file: PathBuf },
    /// Materialize a metric as of a point in time.
    Materialize {
        #[arg(long)]
        metric: String,
        /// As-of instant the metric reads its source at.
        #[arg(long)]
        asof: String,
        /// Version creation time (default: now).
        #[arg(long)]
        at: Option<String>,
    },
    /// List every metric with its latest version and last materialization.
    Catalog,
}

#[derive(Subcommand)]
enum QualityCmd {
    /// Store quality objectives for a dataset.
    SetSlo { file: PathBuf },
    /// Compute indicators, persist the sample, and raise alerts.
    /// Exits 2 when any objective is breached.
    Check {
        #[arg(long)]
        dataset: String,
        /// Reference clock (default: now).
        #[arg(long)]
        now: Option<String>,
    },
    /// Stored indicator samples and alerts for a dataset.
    Report {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
    },
}

#[derive(Subcommand)]
enum TierCmd {
    /// Apply a tiering policy: window:<days> or fraction:<n/d>.
    Apply {
        #[arg(long)]
        policy: String,
        /// Restrict to one source.
        #[arg(long)]
        source: Option<String>,
        /// Reference date (default: today, UTC).
        #[arg(long)]
        today: Option<String>,
    },
    /// Current hot/cool byte totals of the raw zone.
    Totals {
        #[arg(long)]
        source: Option<String>,
    },
}

#[derive(Subcommand)]
enum CostCmd {
    /// Daily cost for explicit tier sizes, or for the workspace raw zone.
    Estimate {
        /// Hot tier size in GB (decimal text; 1 GB = 10^9 bytes).
        #[arg(long)]
        hot_gb: Option<String>,
        /// Cool tier size in GB.
        #[arg(long)]
        cool_gb: Option<String>,
        /// Price the workspace's raw zone instead of explicit sizes.
        #[arg(long, conflicts_with_all = ["hot_gb", "cool_gb"])]
        from_raw: bool,
        /// Restrict --from-raw to one source.
        #[arg(long, requires = "from_raw")]
        source: Option<String>,
        /// Compute cost in dollars per day.
        #[arg(long, default_value = "0")]
        compute: String,
        /// Hot storage rate, dollars per GB-month.
        #[arg(long)]
        hot_rate: Option<String>,
        /// Cool storage rate, dollars per GB-month.
        #[arg(long)]
        cool_rate: Option<String>,
        /// Days per month used to convert monthly rates to daily cost.
        #[arg(long)]
        days: Option<u32>,
    },
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Generate a fixture and score the selected strategies on it.
    Run {
        #[arg(long, default_value_t = 5000)]
        rows: usize,
        #[arg(long, default_value_t = 10)]
        dirty_percent: u32,
        #[arg(long, default_value_t = 10)]
        batches: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Comma-separated: etlt_pp, eltl_pp, elt_baseline.
        #[arg(long, default_value = "etlt_pp,eltl_pp,elt_baseline")]
        strategies: String,
        /// Inject an upstream field rename starting at this batch index.
        #[arg(long)]
        fault_batch: Option<usize>,
        /// New name the amount field arrives under after the fault.
        #[arg(long, default_value = "amt", requires = "fault_batch")]
        rename_to: String,
        /// Fixture base instant (default: now).
        #[arg(long)]
        at: Option<String>,
    },
    /// Print a stored benchmark report.
    Show { stamp: String },
}

#[derive(Subcommand)]
enum PipelineCmd {
    /// Validate and store a pipeline spec document.
    Put { file: PathBuf },
    /// Print a stored pipeline spec.
    Get { pipeline_id: String },
    /// List pipeline ids.
    List,
}

#[derive(Subcommand)]
enum SourceCmd {
    /// Register a raw-zone source from a registration document.
    Register { file: PathBuf },
    /// List registered sources.
    List,
}

// ------------------------------------------------------------------- main --

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help / --version render on stdout and succeed; real usage
            // errors go to stderr and exit 1.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let ws = Workspace::new(&cli.workspace);
    let out = cli.output;
    match cli.command {
        Command::Contract { cmd } => contract_cmd(&ws, out, cmd),
        Command::Validate { batch, contract, version, format, batch_id } => {
            validate_cmd(&ws, out, &batch, &contract, version, format.as_deref(), batch_id.as_deref())
        }
        Command::Ingest { cmd } => ingest_cmd(&ws, out, cmd),
        Command::Query { cmd } => query_cmd(&ws, out, cmd),
        Command::History { table, key } => history_cmd(&ws, out, &table, &key),
        Command::Transform { cmd } => transform_cmd(&ws, out, cmd),
        Command::Metric { cmd } => metric_cmd(&ws, out, cmd),
        Command::Quality { cmd } => quality_cmd(&ws, out, cmd),
        Command::Tier { cmd } => tier_cmd(&ws, out, cmd),
        Command::Cost { cmd } => cost_cmd(&ws, out, cmd),
        Command::Bench { cmd } => bench_cmd(&ws, out, cmd),
        Command::Pipeline { cmd } => pipeline_cmd(&ws, out, cmd),
        Command::Source { cmd } => source_cmd(&ws, out, cmd),
    }
}

// ---------------------------------------------------------------- helpers --

fn emit<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string(v).expect("serializable"));
}

fn emit_value(v: &serde_json::Value) {
    println!("{v}");
}

/// Aligned text grid: header row, dash rule, data rows.
fn grid(headers: &[&str], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = headers
        .iter()
        .enumerate()
        .map(|(c, h)| rows.iter().map(|r| r[c].len()).chain([h.len()]).max().unwrap_or(h.len()))
        .collect();
    let mut text = String::new();
    let mut line = |cells: &[String]| {
        let mut row = String::new();
        for (c, cell) in cells.iter().enumerate() {
            if c > 0 {
                row.push_str("  ");
            }
            row.push_str(&format!("{cell:<width$}", width = widths[c]));
        }
        text.push_str(row.trim_end());
        text.push('\n');
    };
    line(&headers.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>());
    for r in rows {
        line(r);
    }
    text
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn stem_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "batch".into())
}

fn parse_when(s: Option<&str>) -> Result<DateTime<Utc>> {
    match s {
        Some(s) => Ok(parse_ts(s)?),
        None => Ok(Utc::now()),
    }
}

fn parse_day(s: Option<&str>) -> Result<NaiveDate> {
    match s {
        Some(s) => Ok(parse_date(s)?),
        None => Ok(Utc::now().date_naive()),
    }
}

fn parse_format(s: Option<&str>, path: &Path) -> Result<Option<PayloadFormat>> {
    if let Some(s) = s {
        return Ok(Some(
            PayloadFormat::parse(s).ok_or_else(|| anyhow!("unknown format {s:?} (csv|ndjson)"))?,
        ));
    }
    Ok(match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => Some(PayloadFormat::Csv),
        Some("ndjson") | Some("jsonl") => Some(PayloadFormat::Ndjson),
        _ => None,
    })
}

fn parse_key_row(key: &str) -> Result<Row> {
    let v: serde_json::Value =
        serde_json::from_str(key).map_err(|e| anyhow!("--key must be a JSON object: {e}"))?;
    Ok(row_from_json(&v)?)
}

fn versioned_row_json(r: &VersionedRow) -> serde_json::Value {
    serde_json::json!({
        "key": row_to_json(&r.key),
        "payload": row_to_json(&r.payload),
        "valid_from": format_ts(&r.valid_from),
        "valid_to": r.valid_to.map(|t| format_ts(&t)),
    })
}

/// Tabulate rows that share a column universe: key fields first, then the
/// remaining payload fields, then the validity window.
fn rows_table(rows: &[VersionedRow]) -> String {
    let mut columns: Vec<String> = Vec::new();
    for r in rows {
        for k in r.key.keys() {
            if !columns.contains(k) {
                columns.push(k.clone());
            }
        }
    }
    for r in rows {
        for k in r.payload.keys() {
            if !columns.contains(k) {
                columns.push(k.clone());
            }
        }
    }
    let mut headers: Vec<&str> = columns.iter().map(|s| s.as_str()).collect();
    headers.push("valid_from");
    headers.push("valid_to");
    let data: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut cells: Vec<String> = columns
                .iter()
                .map(|c| {
                    r.payload
                        .get(c)
                        .or_else(|| r.key.get(c))
                        .map(|v| v.canonical_string())
                        .unwrap_or_default()
                })
                .collect();
            cells.push(format_ts(&r.valid_from));
            cells.push(r.valid_to.map(|t| format_ts(&t)).unwrap_or_else(|| "open".into()));
            cells
        })
        .collect();
    grid(&headers, &data)
}

/// Exit code for a finished pipeline run: contract halts and quality
/// breaches are data conditions (2), stage failures are errors (1).
fn report_exit(report: &RunReport) -> u8 {
    match report.status {
        RunStatus::HaltedOnContract => 2,
        RunStatus::Failed => 1,
        RunStatus::Succeeded => {
            if report.alerts.is_empty() {
                0
            } else {
                2
            }
        }
    }
}

fn print_report(out: Output, report: &RunReport) {
    match out {
        Output::Json => emit(report),
        Output::Table => {
            println!("run        {}", report.run_id);
            println!("pipeline   {} ({})", report.pipeline_id, report.pattern);
            println!("batch      {} @ {}", report.batch_id, format_ts(&report.load_ts));
            println!("status     {}", status_text(report.status));
            if let Some(v) = &report.verdict {
                println!(
                    "verdict    V={} over {} records ({} hard-violating, {} soft-warned) -> {:?}",
                    v.total_hard_violations,
                    v.total_records,
                    v.hard_violating_records,
                    v.soft_warned_records,
                    v.decision
                );
            }
            if let Some(v) = &report.versioning {
                println!("load       inserted={} closed={} unchanged={}", v.inserted, v.closed, v.unchanged);
            }
            if let Some(b) = &report.baseline {
                println!("table      {} upserted={} rows={}", b.table, b.upserted, b.table_rows);
            }
            for d in &report.datasets {
                println!("dataset    {}@v{} rows={} digest={}", d.dataset_id, d.version, d.rows, d.content_digest);
            }
            if let Some(seg) = &report.raw_segment {
                println!("segment    {seg}");
            }
            if let Some(t) = &report.tiering {
                println!(
                    "tiering    hot={}B/{} cool={}B/{} moved={}",
                    t.hot_bytes,
                    t.hot_segments,
                    t.cool_bytes,
                    t.cool_segments,
                    t.moved_to_cool.len()
                );
            }
            for a in &report.alerts {
                println!("alert      {} {} observed {} vs {}", a.dataset, a.sli, a.observed, a.threshold);
            }
            for e in &report.errors {
                println!("error      [{}] {}", e.stage, e.error);
            }
        }
    }
}

fn status_text(s: RunStatus) -> &'static str {
    match s {
        RunStatus::Succeeded => "succeeded",
        RunStatus::HaltedOnContract => "halted_on_contract",
        RunStatus::Failed => "failed",
    }
}

// --------------------------------------------------------------- commands --

fn contract_cmd(ws: &Workspace, out: Output, cmd: ContractCmd) -> Result<u8> {
    let registry = ContractRegistry::open(ws);
    match cmd {
        ContractCmd::Put { file } => {
            let c = parse_contract(&read_text(&file)?)?;
            emit(&registry.put(&c)?);
            Ok(0)
        }
        ContractCmd::Get { name, version } => {
            let c = registry.get(&name, version)?;
            match out {
                Output::Json => emit_value(&to_canonical_json(&c)),
                Output::Table => print_contract_table(&c),
            }
            Ok(0)
        }
        ContractCmd::Lint { file } => {
            let c = parse_contract(&read_text(&file)?)?;
            let issues = lint_contract(&c);
            match out {
                Output::Json => emit_value(&serde_json::json!({
                    "contract": c.name,
                    "version": c.version,
                    "issues": issues,
                })),
                Output::Table => {
                    if issues.is_empty() {
                        println!("no issues");
                    } else {
                        let rows: Vec<Vec<String>> = issues
                            .iter()
                            .map(|i| vec![i.field.clone().unwrap_or_default(), i.message.clone()])
                            .collect();
                        print!("{}", grid(&["field", "message"], &rows));
                    }
                }
            }
            Ok(0)
        }
        ContractCmd::List => {
            let refs = registry.list()?;
            match out {
                Output::Json => emit(&refs),
                Output::Table => {
                    let rows: Vec<Vec<String>> = refs
                        .iter()
                        .map(|r| vec![r.name.clone(), r.version.to_string(), r.digest.clone()])
                        .collect();
                    print!("{}", grid(&["name", "version", "digest"], &rows));
                }
            }
            Ok(0)
        }
    }
}

fn print_contract_table(c: &Contract) {
    println!("contract {} v{}", c.name, c.version);
    let field_rows: Vec<Vec<String>> = c
        .fields
        .iter()
        .map(|f| vec![f.name.clone(), f.datatype.name().to_string(), f.required.to_string()])
        .collect();
    print!("{}", grid(&["field", "datatype", "required"], &field_rows));
    let rule_rows: Vec<Vec<String>> = c
        .rules
        .iter()
        .map(|r| {
            vec![
                r.id.clone(),
                r.field.clone().unwrap_or_default(),
                format!("{:?}", r.kind).to_lowercase(),
                format!("{:?}", r.severity).to_lowercase(),
            ]
        })
        .collect();
    print!("{}", grid(&["rule", "field", "kind", "severity"], &rule_rows));
}

fn validate_cmd(
    ws: &Workspace,
    out: Output,
    batch: &Path,
    contract: &str,
    version: Option<u32>,
    format: Option<&str>,
    batch_id: Option<&str>,
) -> Result<u8> {
    let payload = read_file(batch)?;
    let format = parse_format(format, batch)?
        .ok_or_else(|| anyhow!("--format required (file extension is not .csv/.ndjson)"))?;
    let batch_id = batch_id.map(str::to_string).unwrap_or_else(|| stem_of(batch));
    let contract = ContractRegistry::open(ws).get(contract, version)?;
    let records = read_records(&payload, format, &batch_id)?;
    let verdict = evaluate_batch(&records, &contract, &batch_id);
    match out {
        Output::Json => emit(&verdict),
        Output::Table => {
            println!(
                "batch {} against {} v{}: V={} -> {:?}",
                verdict.batch_id,
                verdict.contract.name,
                verdict.contract.version,
                verdict.total_hard_violations,
                verdict.decision
            );
            let rows: Vec<Vec<String>> = verdict
                .record_verdicts
                .iter()
                .map(|r| {
                    vec![
                        r.record_key.clone(),
                        format!("{:?}", r.status).to_lowercase(),
                        r.hard_violations.iter().map(|v| v.rule_id.clone()).collect::<Vec<_>>().join(","),
                        r.soft_warnings.iter().map(|v| v.rule_id.clone()).collect::<Vec<_>>().join(","),
                    ]
                })
                .collect();
            print!("{}", grid(&["record", "status", "hard", "soft"], &rows));
        }
    }
    Ok(if verdict.decision == Decision::Halt { 2 } else { 0 })
}

fn ingest_cmd(ws: &Workspace, out: Output, cmd: IngestCmd) -> Result<u8> {
    match cmd {
        IngestCmd::Raw { source, file, date } => {
            let payload = read_file(&file)?;
            let segment = RawStore::open(ws).ingest(&source, &payload, parse_day(date.as_deref())?)?;
            emit(&segment);
            Ok(0)
        }
        IngestCmd::Etlt(args) => run_pipeline(ws, out, args, Pattern::EtltPp),
        IngestCmd::Eltl(args) => run_pipeline(ws, out, args, Pattern::EltlPp),
    }
}

fn run_pipeline(ws: &Workspace, out: Output, args: RunArgs, expect: Pattern) -> Result<u8> {
    let spec = PipelineStore::open(ws).get(&args.pipeline)?;
    if spec.pattern != expect {
        bail!("pipeline {} has pattern {}, expected {}", spec.pipeline_id, spec.pattern, expect);
    }
    let payload = read_file(&args.file)?;
    let batch_id = args.batch_id.clone().unwrap_or_else(|| stem_of(&args.file));
    let input = BatchInput {
        batch_id: &batch_id,
        payload: &payload,
        format: parse_format(args.format.as_deref(), &args.file)?,
        load_ts: parse_when(args.at.as_deref())?,
    };
    let report = pipeline::run_batch(ws, &spec, &input)?;
    print_report(out, &report);
    Ok(report_exit(&report))
}

fn query_cmd(ws: &Workspace, out: Output, cmd: QueryCmd) -> Result<u8> {
    let (table, rows) = match cmd {
        QueryCmd::Asof { table, at } => {
            let t = TableStore::open(ws).open_table(&table)?;
            let rows = t.query_asof(parse_ts(&at)?)?;
            (table, rows)
        }
        QueryCmd::Current { table } => {
            let t = TableStore::open(ws).open_table(&table)?;
            let rows = t.current()?;
            (table, rows)
        }
    };
    match out {
        Output::Json => emit_value(&serde_json::json!({
            "table": table,
            "rows": rows.iter().map(versioned_row_json).collect::<Vec<_>>(),
        })),
        Output::Table => print!("{}", rows_table(&rows)),
    }
    Ok(0)
}

fn history_cmd(ws: &Workspace, out: Output, table: &str, key: &str) -> Result<u8> {
    let key_row = parse_key_row(key)?;
    let versions = TableStore::open(ws).open_table(table)?.history(&key_row)?;
    match out {
        Output::Json => emit_value(&serde_json::json!({
            "table": table,
            "key": row_to_json(&key_row),
            "versions": versions
                .iter()
                .map(|v| serde_json::json!({
                    "payload": row_to_json(&v.payload),
                    "valid_from": format_ts(&v.valid_from),
                    "valid_to": v.valid_to.map(|t| format_ts(&t)),
                }))
                .collect::<Vec<_>>(),
        })),
        Output::Table => {
            let rows: Vec<Vec<String>> = versions
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    vec![
                        format!("v{}", i + 1),
                        format_ts(&v.valid_from),
                        v.valid_to.map(|t| format_ts(&t)).unwrap_or_else(|| "open".into()),
                        pipeforge_core::value::canonical_row_json(&v.payload),
                    ]
                })
                .collect();
            print!("{}", grid(&["version", "valid_from", "valid_to", "payload"], &rows));
        }
    }
    Ok(0)
}

fn parse_pins(pins: &[String]) -> Result<BTreeMap<String, PinValue>> {
    let mut out = BTreeMap::new();
    for pin in pins {
        let (role, rest) = pin
            .split_once('=')
            .ok_or_else(|| anyhow!("pin {pin:?}: expected role=kind:value"))?;
        let (kind, value) = rest
            .split_once(':')
            .ok_or_else(|| anyhow!("pin {pin:?}: expected kind:value after '='"))?;
        let parsed = match kind {
            "asof" => PinValue::Asof(parse_ts(value)?),
            "segments" => PinValue::Segments(
                value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            ),
            "version" => PinValue::Version(
                value.parse().map_err(|_| anyhow!("pin {pin:?}: version must be a number"))?,
            ),
            other => bail!("pin {pin:?}: unknown kind {other:?} (asof|segments|version)"),
        };
        out.insert(role.to_string(), parsed);
    }
    Ok(out)
}

fn transform_cmd(ws: &Workspace, out: Output, cmd: TransformCmd) -> Result<u8> {
    let engine = TransformEngine::open(ws);
    match cmd {
        TransformCmd::Put { file } => {
            let template: TransformTemplate = serde_json::from_str(&read_text(&file)?)
                .map_err(|e| anyhow!("template document: {e}"))?;
            let digest = engine.register_template(&template)?;
            emit_value(&serde_json::json!({ "template_id": template.template_id, "digest": digest }));
            Ok(0)
        }
        TransformCmd::Run { template, dataset, pins, at } => {
            let version =
                engine.run_transform(&template, &parse_pins(&pins)?, dataset.as_deref(), parse_when(at.as_deref())?)?;
            print_curated(out, &version);
            Ok(0)
        }
        TransformCmd::Replay { dataset, version, at } => {
            let replayed = engine.replay(&dataset, version, parse_when(at.as_deref())?)?;
            print_curated(out, &replayed);
            Ok(0)
        }
    }
}

fn print_curated(out: Output, v: &pipeforge_core::transform::CuratedVersion) {
    match out {
        Output::Json => emit(v),
        Output::Table => {
            println!("dataset    {}@v{}", v.dataset_id, v.version);
            println!("template   {} ({})", v.template_id, v.template_digest);
            println!("rows       {}", v.row_count);
            println!("digest     {}", v.content_digest);
            println!("created    {}", format_ts(&v.created_at));
            if let Some(orig) = v.replay_of {
                println!("replay_of  v{orig}");
            }
            for edge in &v.lineage {
                println!("lineage    {} -> {}", edge.from, edge.to);
            }
        }
    }
}

fn metric_cmd(ws: &Workspace, out: Output, cmd: MetricCmd) -> Result<u8> {
    let store = MetricStore::open(ws);
    match cmd {
        MetricCmd::Define { file } => {
            let def: MetricDef =
                serde_json::from_str(&read_text(&file)?).map_err(|e| anyhow!("metric document: {e}"))?;
            store.define_metric(&def)?;
            emit_value(&serde_json::json!({ "metric_id": def.metric_id, "version": def.version }));
            Ok(0)
        }
        MetricCmd::Materialize { metric, asof, at } => {
            let version = store.materialize_metric(&metric, parse_ts(&asof)?, parse_when(at.as_deref())?)?;
            print_curated(out, &version);
            Ok(0)
        }
        MetricCmd::Catalog => {
            let entries = store.list_catalog()?;
            match out {
                Output::Json => emit(&entries),
                Output::Table => {
                    let rows: Vec<Vec<String>> = entries
                        .iter()
                        .map(|e| {
                            vec![
                                e.metric_id.clone(),
                                e.version.to_string(),
                                e.last_materialized.map(|t| format_ts(&t)).unwrap_or_else(|| "never".into()),
                                e.description.clone(),
                            ]
                        })
                        .collect();
                    print!("{}", grid(&["metric", "version", "last_materialized", "description"], &rows));
                }
            }
            Ok(0)
        }
    }
}

fn quality_cmd(ws: &Workspace, out: Output, cmd: QualityCmd) -> Result<u8> {
    let store = QualityStore::open(ws);
    match cmd {
        QualityCmd::SetSlo { file } => {
            let config: SloConfig =
                serde_json::from_str(&read_text(&file)?).map_err(|e| anyhow!("objectives document: {e}"))?;
            store.put_slo(&config)?;
            emit(&config);
            Ok(0)
        }
        QualityCmd::Check { dataset, now } => {
            let check = store.check(&dataset, parse_when(now.as_deref())?)?;
            match out {
                Output::Json => emit(&check),
                Output::Table => {
                    let s = &check.sample;
                    println!("dataset      {}", s.dataset);
                    println!("at           {}", format_ts(&s.at));
                    println!("freshness    {} s", s.freshness_seconds);
                    println!("completeness {}", s.completeness);
                    println!("accuracy     {}", s.accuracy);
                    println!("adherence    {} ({})", s.adherence, s.window);
                    if !s.flags.is_empty() {
                        println!("flags        {}", s.flags.join(", "));
                    }
                    for a in &check.alerts {
                        println!(
                            "ALERT        {} observed {} vs threshold {} -> {:?}",
                            a.sli, a.observed, a.threshold, a.suggested_action
                        );
                    }
                }
            }
            Ok(if check.alerts.is_empty() { 0 } else { 2 })
        }
        QualityCmd::Report { dataset, from, to } => {
            let from = from.as_deref().map(parse_ts).transpose()?;
            let to = to.as_deref().map(parse_ts).transpose()?;
            let samples = store.read_sli_history(&dataset, from, to)?;
            let alerts = store.read_alerts(&dataset)?;
            match out {
                Output::Json => emit_value(&serde_json::json!({
                    "dataset": dataset,
                    "samples": samples,
                    "alerts": alerts,
                })),
                Output::Table => {
                    let rows: Vec<Vec<String>> = samples
                        .iter()
                        .map(|s| {
                            vec![
                                format_ts(&s.at),
                                s.freshness_seconds.to_string(),
                                s.completeness.to_string(),
                                s.accuracy.to_string(),
                                s.adherence.to_string(),
                                s.flags.join(","),
                            ]
                        })
                        .collect();
                    print!(
                        "{}",
                        grid(&["at", "freshness_s", "completeness", "accuracy", "adherence", "flags"], &rows)
                    );
                    if !alerts.is_empty() {
                        let arows: Vec<Vec<String>> = alerts
                            .iter()
                            .map(|a| {
                                vec![
                                    format_ts(&a.at),
                                    a.sli.clone(),
                                    a.observed.clone(),
                                    a.threshold.clone(),
                                    format!("{:?}", a.suggested_action).to_lowercase(),
                                ]
                            })
                            .collect();
                        print!("{}", grid(&["at", "sli", "observed", "threshold", "action"], &arows));
                    }
                }
            }
            Ok(0)
        }
    }
}

fn parse_policy(policy: &str, source: Option<String>) -> Result<TieringPolicy> {
    let (kind, value) = policy
        .split_once(':')
        .ok_or_else(|| anyhow!("--policy must be window:<days> or fraction:<n/d>"))?;
    let mut parsed = match kind {
        "window" => TieringPolicy::window(
            value.parse().map_err(|_| anyhow!("window days must be a number"))?,
        ),
        "fraction" => TieringPolicy::fraction(Fraction::parse(value)?.ratio().clone()),
        other => bail!("unknown policy kind {other:?} (window|fraction)"),
    };
    parsed.source = source;
    parsed.validate()?;
    Ok(parsed)
}

fn tier_cmd(ws: &Workspace, out: Output, cmd: TierCmd) -> Result<u8> {
    let raw = RawStore::open(ws);
    match cmd {
        TierCmd::Apply { policy, source, today } => {
            let policy = parse_policy(&policy, source)?;
            let report = raw.apply_tiering(&policy, parse_day(today.as_deref())?)?;
            match out {
                Output::Json => emit(&report),
                Output::Table => {
                    println!("hot   {} segments, {} bytes", report.hot_segments, report.hot_bytes);
                    println!("cool  {} segments, {} bytes", report.cool_segments, report.cool_bytes);
                    println!("moved {}", report.moved_to_cool.len());
                    for s in &report.moved_to_cool {
                        println!("  -> {s}");
                    }
                }
            }
            Ok(0)
        }
        TierCmd::Totals { source } => {
            let (hot, cool) = raw.tier_totals(source.as_deref())?;
            emit_value(&serde_json::json!({ "hot_bytes": hot, "cool_bytes": cool }));
            Ok(0)
        }
    }
}

fn cost_cmd(ws: &Workspace, out: Output, cmd: CostCmd) -> Result<u8> {
    let CostCmd::Estimate { hot_gb, cool_gb, from_raw, source, compute, hot_rate, cool_rate, days } = cmd;
    let mut rates = CostRates { compute_per_day: rational_from_decimal(&compute)?, ..CostRates::default() };
    if let Some(r) = hot_rate {
        rates.hot_per_gb_month = rational_from_decimal(&r)?;
    }
    if let Some(r) = cool_rate {
        rates.cool_per_gb_month = rational_from_decimal(&r)?;
    }
    if let Some(d) = days {
        rates.days_per_month = d;
    }
    let report = if from_raw {
        let (hot, cool) = RawStore::open(ws).tier_totals(source.as_deref())?;
        estimate_cost(hot, cool, &rates)
    } else {
        let hot = rational_from_decimal(hot_gb.as_deref().unwrap_or("0"))?;
        let cool = rational_from_decimal(cool_gb.as_deref().unwrap_or("0"))?;
        estimate_cost_gb(&hot, &cool, &rates)
    };
    match out {
        Output::Json => emit_value(&report.to_json()),
        Output::Table => {
            let j = report.to_json();
            let cell = |k: &str| j.get(k).and_then(|v| v.as_str()).unwrap_or("?").to_string();
            let rows = vec![
                vec!["hot".into(), cell("hot_per_day"), cell("hot_per_day_usd")],
                vec!["cool".into(), cell("cool_per_day"), cell("cool_per_day_usd")],
                vec!["compute".into(), cell("compute_per_day"), cell("compute_per_day_usd")],
                vec!["total".into(), cell("total_per_day"), cell("total_per_day_usd")],
            ];
            print!("{}", grid(&["component", "per_day_exact", "per_day"], &rows));
        }
    }
    Ok(0)
}

fn parse_strategies(s: &str) -> Result<Vec<Pattern>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        out.push(match part {
            "etlt_pp" => Pattern::EtltPp,
            "eltl_pp" => Pattern::EltlPp,
            "elt_baseline" => Pattern::EltBaseline,
            other => bail!("unknown strategy {other:?} (etlt_pp|eltl_pp|elt_baseline)"),
        });
    }
    Ok(out)
}

fn bench_cmd(ws: &Workspace, out: Output, cmd: BenchCmd) -> Result<u8> {
    match cmd {
        BenchCmd::Run { rows, dirty_percent, batches, seed, strategies, fault_batch, rename_to, at } => {
            let fixture = BenchFixture {
                seed,
                rows,
                dirty_percent,
                batches,
                fault: fault_batch.map(|b| FaultPlan {
                    rename_at_batch: b,
                    from_field: "amount".into(),
                    to_field: rename_to.clone(),
                }),
            };
            let report =
                pipeline::run_benchmark(ws, &fixture, &parse_strategies(&strategies)?, parse_when(at.as_deref())?)?;
            match out {
                Output::Json => emit(&report),
                Output::Table => print!("{}", pipeline::render_bench_table(&report)),
            }
            Ok(0)
        }
        BenchCmd::Show { stamp } => {
            let report = pipeline::read_bench(ws, &stamp)?;
            match out {
                Output::Json => emit(&report),
                Output::Table => print!("{}", pipeline::render_bench_table(&report)),
            }
            Ok(0)
        }
    }
}

fn pipeline_cmd(ws: &Workspace, out: Output, cmd: PipelineCmd) -> Result<u8> {
    let store = PipelineStore::open(ws);
    match cmd {
        PipelineCmd::Put { file } => {
            let spec = pipeline::load_pipeline_spec(ws, &read_text(&file)?)?;
            store.put(&spec)?;
            emit_value(&serde_json::json!({ "pipeline_id": spec.pipeline_id, "pattern": spec.pattern }));
            Ok(0)
        }
        PipelineCmd::Get { pipeline_id } => {
            emit(&store.get(&pipeline_id)?);
            Ok(0)
        }
        PipelineCmd::List => {
            let ids = store.list()?;
            match out {
                Output::Json => emit(&ids),
                Output::Table => {
                    for id in ids {
                        println!("{id}");
                    }
                }
            }
            Ok(0)
        }
    }
}

fn source_cmd(ws: &Workspace, out: Output, cmd: SourceCmd) -> Result<u8> {
    let raw = RawStore::open(ws);
    match cmd {
        SourceCmd::Register { file } => {
            let reg: SourceRegistration =
                serde_json::from_str(&read_text(&file)?).map_err(|e| anyhow!("source document: {e}"))?;
            raw.register_source(&reg)?;
            emit(&reg);
            Ok(0)
        }
        SourceCmd::List => {
            let sources = raw.list_sources()?;
            match out {
                Output::Json => emit(&sources),
                Output::Table => {
                    let rows: Vec<Vec<String>> = sources
                        .iter()
                        .map(|s| {
                            vec![
                                s.source_id.clone(),
                                s.format.to_string(),
                                s.path_pattern.clone(),
                                s.contract_name.clone().unwrap_or_default(),
                                s.schedule_hint.clone(),
                            ]
                        })
                        .collect();
                    print!("{}", grid(&["source", "format", "path_pattern", "contract", "schedule"], &rows));
                }
            }
            Ok(0)
        }
    }
}
