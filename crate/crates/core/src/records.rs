//! Batch readers: CSV and NDJSON payloads into records.
//!
//! Both readers produce [`Record`]s — a flat value map plus provenance
//! (source tag and 1-based row number) so that verdicts and quarantine
//! entries can point back at the offending input line.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::value::{row_from_json, Row, Value};

/// Where a record came from, for messages and quarantine entries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Free-form source tag (file name, source id, ...).
    pub source: String,
    /// 1-based data row number within the payload.
    pub row: usize,
}

/// One input record: values plus optional provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub values: Row,
    pub provenance: Option<Provenance>,
}

impl Record {
    pub fn new(values: Row) -> Self {
        Record { values, provenance: None }
    }

    pub fn with_provenance(values: Row, source: &str, row: usize) -> Self {
        Record {
            values,
            provenance: Some(Provenance { source: source.to_string(), row }),
        }
    }

    /// Stable key for verdicts: `source:row` when provenance is known,
    /// otherwise `#index` within the batch.
    pub fn key(&self, index: usize) -> String {
        match &self.provenance {
            Some(p) => format!("{}:{}", p.source, p.row),
            None => format!("#{index}"),
        }
    }
}

/// Supported payload formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadFormat {
    Csv,
    Ndjson,
}

impl PayloadFormat {
    pub fn file_extension(self) -> &'static str {
        match self {
            PayloadFormat::Csv => "csv",
            PayloadFormat::Ndjson => "ndjson",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(PayloadFormat::Csv),
            "ndjson" => Some(PayloadFormat::Ndjson),
            _ => None,
        }
    }
}

impl std::fmt::Display for PayloadFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.file_extension())
    }
}

/// Read a whole payload into records. CSV expects a header row; empty cells
/// are missing values. NDJSON expects one JSON object per non-empty line;
/// nulls are missing values. Unparseable input fails as a whole.
pub fn read_records(payload: &[u8], format: PayloadFormat, source: &str) -> Result<Vec<Record>> {
    match format {
        PayloadFormat::Csv => read_csv_records(payload, source),
        PayloadFormat::Ndjson => read_ndjson_records(payload, source),
    }
}

fn read_csv_records(payload: &[u8], source: &str) -> Result<Vec<Record>> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(payload);
    let headers = reader
        .headers()
        .map_err(|e| Error::MalformedDocument(format!("csv header: {e}")))?
        .clone();
    if headers.is_empty() {
        return Err(Error::MalformedDocument("csv payload has no header row".into()));
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::MalformedDocument(format!("csv row {}: {e}", i + 1)))?;
        let mut row = Row::new();
        for (name, cell) in headers.iter().zip(rec.iter()) {
            if let Some(v) = Value::from_csv_field(cell) {
                row.insert(name.to_string(), v);
            }
        }
        out.push(Record::with_provenance(row, source, i + 1));
    }
    Ok(out)
}

fn read_ndjson_records(payload: &[u8], source: &str) -> Result<Vec<Record>> {
    let text = std::str::from_utf8(payload).map_err(|_| Error::MalformedDocument("ndjson payload is not UTF-8".into()))?;
    let mut out = Vec::new();
    let mut row_no = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        row_no += 1;
        let json: serde_json::Value =
            serde_json::from_str(line).map_err(|e| Error::MalformedDocument(format!("ndjson line {}: {e}", i + 1)))?;
        let row = row_from_json(&json).map_err(|e| Error::MalformedDocument(format!("ndjson line {}: {e}", i + 1)))?;
        out.push(Record::with_provenance(row, source, row_no));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::{parse_date, Decimal};

    #[test]
    fn csv_reads_header_and_sniffs_cells() {
        let payload = b"txn,amount,email,day\nT001,50.5,a@x.io,2025-08-27\nT002,-20,,2025-08-28\n";
        let recs = read_records(payload, PayloadFormat::Csv, "batch1").unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].values["txn"], Value::Text("T001".into()));
        assert_eq!(recs[0].values["amount"], Value::Decimal(Decimal::parse("50.5").unwrap()));
        assert_eq!(recs[0].values["day"], Value::Date(parse_date("2025-08-27").unwrap()));
        assert_eq!(recs[1].values["amount"], Value::Integer(-20));
        assert!(!recs[1].values.contains_key("email"), "empty cell is missing");
        assert_eq!(recs[1].key(1), "batch1:2");
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        let payload = b"a,b\n1,2,3\n";
        assert!(matches!(
            read_records(payload, PayloadFormat::Csv, "x"),
            Err(Error::MalformedDocument(_))
        ));
    }

    #[test]
    fn ndjson_reads_objects_and_drops_nulls() {
        let payload = br#"{"id":1,"email":null,"ok":true}
{"id":2,"amount":20.5}
"#;
        let recs = read_records(payload, PayloadFormat::Ndjson, "b").unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].values["id"], Value::Integer(1));
        assert!(!recs[0].values.contains_key("email"));
        assert_eq!(recs[1].values["amount"], Value::Decimal(Decimal::parse("20.5").unwrap()));
    }

    #[test]
    fn ndjson_rejects_non_objects_and_bad_json() {
        assert!(read_records(b"[1,2]\n", PayloadFormat::Ndjson, "x").is_err());
        assert!(read_records(b"{broken\n", PayloadFormat::Ndjson, "x").is_err());
    }

    #[test]
    fn empty_payloads_read_as_zero_records() {
        assert!(read_records(b"", PayloadFormat::Ndjson, "x").unwrap().is_empty());
        assert!(read_records(b"a,b\n", PayloadFormat::Csv, "x").unwrap().is_empty());
    }
}
