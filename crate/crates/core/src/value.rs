//! Scalar values, the canonical fixed-point decimal, and canonical JSON text.
//!
//! Every record the engine touches is a flat map from field name to [`Value`].
//! Missing values are represented by absence from the map, never by a variant.
//! All serialization that feeds a digest goes through the canonical writers in
//! this module so that equal data always produces equal bytes.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, NaiveDate, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of fractional digits carried by [`Decimal`].
pub const DECIMAL_SCALE: u32 = 4;
const UNIT: i128 = 10_000;

/// Fixed-point decimal: an `i128` count of 1/10 000 units.
///
/// Parsing and arithmetic round half-to-even at the fourth fractional digit,
/// so results are independent of platform float behaviour and stable across
/// replays.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Decimal(i128);

/// Integer division rounding half-to-even; `d` must be positive.
fn div_round_half_even(n: i128, d: i128) -> i128 {
    debug_assert!(d > 0);
    let q = n.div_euclid(d);
    let r = n.rem_euclid(d); // 0 <= r < d
    match (2 * r).cmp(&d) {
        Ordering::Less => q,
        Ordering::Greater => q + 1,
        Ordering::Equal => {
            if q % 2 == 0 {
                q
            } else {
                q + 1
            }
        }
    }
}

impl Decimal {
    /// Construct from a raw scaled magnitude (`value * 10^4`).
    pub fn from_scaled(scaled: i128) -> Self {
        Decimal(scaled)
    }

    /// The raw scaled magnitude.
    pub fn scaled(self) -> i128 {
        self.0
    }

    pub fn zero() -> Self {
        Decimal(0)
    }

    pub fn from_int(v: i64) -> Self {
        Decimal(v as i128 * UNIT)
    }

    /// Parse decimal text such as `-12.345`. Digits beyond the fourth
    /// fractional place are rounded half-to-even.
    pub fn parse(s: &str) -> std::result::Result<Self, String> {
        let t = s.trim();
        let (neg, digits) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        let (int_part, frac_part) = match digits.split_once('.') {
            Some((i, f)) => (i, f),
            None => (digits, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(format!("not a decimal number: {s:?}"));
        }
        if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
            return Err(format!("not a decimal number: {s:?}"));
        }
        let mut mag: i128 = 0;
        for c in int_part.chars() {
            mag = mag
                .checked_mul(10)
                .and_then(|m| m.checked_add((c as u8 - b'0') as i128))
                .ok_or_else(|| format!("decimal out of range: {s:?}"))?;
        }
        mag = mag.checked_mul(UNIT).ok_or_else(|| format!("decimal out of range: {s:?}"))?;
        let kept: Vec<u32> = frac_part.chars().take(4).map(|c| c.to_digit(10).unwrap()).collect();
        let mut frac: i128 = 0;
        for (i, d) in kept.iter().enumerate() {
            frac += *d as i128 * 10i128.pow(3 - i as u32);
        }
        mag = mag.checked_add(frac).ok_or_else(|| format!("decimal out of range: {s:?}"))?;
        // Round the dropped tail half-to-even against the last kept digit.
        let tail: Vec<u32> = frac_part.chars().skip(4).map(|c| c.to_digit(10).unwrap()).collect();
        if !tail.is_empty() {
            let first = tail[0];
            let rest_nonzero = tail[1..].iter().any(|d| *d != 0);
            let round_up = match first.cmp(&5) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => {
                    if rest_nonzero {
                        true
                    } else {
                        mag % 2 == 1
                    }
                }
            };
            if round_up {
                mag = mag.checked_add(1).ok_or_else(|| format!("decimal out of range: {s:?}"))?;
            }
        }
        Ok(Decimal(if neg { -mag } else { mag }))
    }

    /// Nearest representable decimal to an `f64` (ties to even); `None` for
    /// non-finite or out-of-range input.
    pub fn from_f64(v: f64) -> Option<Self> {
        if !v.is_finite() {
            return None;
        }
        let scaled = (v * UNIT as f64).round_ties_even();
        if scaled.abs() > i64::MAX as f64 * UNIT as f64 {
            return None;
        }
        Some(Decimal(scaled as i128))
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / UNIT as f64
    }

    /// True when the value has no fractional part.
    pub fn is_integral(self) -> bool {
        self.0 % UNIT == 0
    }

    /// Integer part as `i64` when integral and in range.
    pub fn to_i64_exact(self) -> Option<i64> {
        if self.is_integral() {
            i64::try_from(self.0 / UNIT).ok()
        } else {
            None
        }
    }

    pub fn checked_add(self, rhs: Self) -> Option<Self> {
        self.0.checked_add(rhs.0).map(Decimal)
    }

    pub fn checked_sub(self, rhs: Self) -> Option<Self> {
        self.0.checked_sub(rhs.0).map(Decimal)
    }

    /// Multiply, rounding the result half-to-even at scale 4.
    pub fn checked_mul(self, rhs: Self) -> Option<Self> {
        let wide = self.0.checked_mul(rhs.0)?;
        let (n, neg) = if wide < 0 { (-wide, true) } else { (wide, false) };
        let q = div_round_half_even(n, UNIT);
        Some(Decimal(if neg { -q } else { q }))
    }

    /// Divide, rounding the result half-to-even at scale 4; `None` when the
    /// divisor is zero or the result overflows.
    pub fn checked_div(self, rhs: Self) -> Option<Self> {
        if rhs.0 == 0 {
            return None;
        }
        let wide = self.0.checked_mul(UNIT)?;
        let neg = (wide < 0) != (rhs.0 < 0);
        let n = wide.checked_abs()?;
        let d = rhs.0.checked_abs()?;
        let q = div_round_half_even(n, d);
        Some(Decimal(if neg { -q } else { q }))
    }

    pub fn checked_neg(self) -> Option<Self> {
        self.0.checked_neg().map(Decimal)
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }
}

impl fmt::Display for Decimal {
    /// Canonical text: no exponent, no trailing fractional zeros, no `+`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mag = self.0.unsigned_abs();
        let int = mag / UNIT as u128;
        let frac = (mag % UNIT as u128) as u32;
        if self.0 < 0 {
            write!(f, "-")?;
        }
        if frac == 0 {
            write!(f, "{int}")
        } else {
            let digits = format!("{frac:04}");
            write!(f, "{int}.{}", digits.trim_end_matches('0'))
        }
    }
}

impl fmt::Debug for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Decimal({self})")
    }
}

/// The closed set of datatypes a contract field may declare.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Datatype {
    Integer,
    Decimal,
    Text,
    Boolean,
    Date,
    Timestamp,
}

impl Datatype {
    pub fn name(self) -> &'static str {
        match self {
            Datatype::Integer => "integer",
            Datatype::Decimal => "decimal",
            Datatype::Text => "text",
            Datatype::Boolean => "boolean",
            Datatype::Date => "date",
            Datatype::Timestamp => "timestamp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "integer" => Some(Datatype::Integer),
            "decimal" => Some(Datatype::Decimal),
            "text" => Some(Datatype::Text),
            "boolean" => Some(Datatype::Boolean),
            "date" => Some(Datatype::Date),
            "timestamp" => Some(Datatype::Timestamp),
            _ => None,
        }
    }
}

impl fmt::Display for Datatype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One scalar value. Missing values are absent map entries, not a variant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Value {
    Integer(i64),
    Decimal(Decimal),
    Text(String),
    Boolean(bool),
    Date(NaiveDate),
    Timestamp(DateTime<Utc>),
}

/// A record: field name to value, missing fields absent.
pub type Row = BTreeMap<String, Value>;

impl Value {
    pub fn datatype(&self) -> Datatype {
        match self {
            Value::Integer(_) => Datatype::Integer,
            Value::Decimal(_) => Datatype::Decimal,
            Value::Text(_) => Datatype::Text,
            Value::Boolean(_) => Datatype::Boolean,
            Value::Date(_) => Datatype::Date,
            Value::Timestamp(_) => Datatype::Timestamp,
        }
    }

    /// Numeric view shared by `Integer` and `Decimal`.
    pub fn as_decimal(&self) -> Option<Decimal> {
        match self {
            Value::Integer(i) => Some(Decimal::from_int(*i)),
            Value::Decimal(d) => Some(*d),
            _ => None,
        }
    }

    /// Equality that treats `Integer(20)` and `Decimal(20)` as the same
    /// number; all other variants compare only within their own type.
    pub fn semantic_eq(&self, other: &Value) -> bool {
        match (self.as_decimal(), other.as_decimal()) {
            (Some(a), Some(b)) => a == b,
            _ => self == other,
        }
    }

    /// Ordering within one comparable class; `None` when the two values are
    /// not comparable (e.g. text against a number). Dates promote to
    /// midnight UTC when compared against timestamps.
    pub fn compare_semantic(&self, other: &Value) -> Option<Ordering> {
        if let (Some(a), Some(b)) = (self.as_decimal(), other.as_decimal()) {
            return Some(a.cmp(&b));
        }
        match (self, other) {
            (Value::Text(a), Value::Text(b)) => Some(a.cmp(b)),
            (Value::Boolean(a), Value::Boolean(b)) => Some(a.cmp(b)),
            (Value::Date(a), Value::Date(b)) => Some(a.cmp(b)),
            (Value::Timestamp(a), Value::Timestamp(b)) => Some(a.cmp(b)),
            (Value::Date(a), Value::Timestamp(b)) => Some(date_to_ts(*a).cmp(b)),
            (Value::Timestamp(a), Value::Date(b)) => Some(a.cmp(&date_to_ts(*b))),
            _ => None,
        }
    }

    /// Total order over all values, used for canonical output sorting:
    /// booleans < numbers < dates < timestamps < text, each class ordered
    /// naturally. Deterministic for any pair.
    pub fn cmp_canonical(&self, other: &Value) -> Ordering {
        fn rank(v: &Value) -> u8 {
            match v {
                Value::Boolean(_) => 0,
                Value::Integer(_) | Value::Decimal(_) => 1,
                Value::Date(_) => 2,
                Value::Timestamp(_) => 3,
                Value::Text(_) => 4,
            }
        }
        match rank(self).cmp(&rank(other)) {
            Ordering::Equal => match (self, other) {
                (Value::Boolean(a), Value::Boolean(b)) => a.cmp(b),
                (Value::Date(a), Value::Date(b)) => a.cmp(b),
                (Value::Timestamp(a), Value::Timestamp(b)) => a.cmp(b),
                (Value::Text(a), Value::Text(b)) => a.cmp(b),
                _ => self.as_decimal().unwrap().cmp(&other.as_decimal().unwrap()),
            },
            ord => ord,
        }
    }

    /// Canonical text form, used in messages and when coercing to `text`.
    pub fn canonical_string(&self) -> String {
        match self {
            Value::Integer(i) => i.to_string(),
            Value::Decimal(d) => d.to_string(),
            Value::Text(s) => s.clone(),
            Value::Boolean(b) => b.to_string(),
            Value::Date(d) => d.format("%Y-%m-%d").to_string(),
            Value::Timestamp(t) => format_ts(t),
        }
    }

    /// Convert to the declared datatype, or explain why that is impossible.
    /// `text` accepts every value; numeric text parses into numbers; dates
    /// widen to midnight timestamps; a timestamp narrows to a date only when
    /// it carries no time component.
    pub fn coerce(&self, target: Datatype) -> std::result::Result<Value, String> {
        let fail = || {
            Err(format!(
                "expected {}, got {} {:?}",
                target.name(),
                self.datatype().name(),
                self.canonical_string()
            ))
        };
        match target {
            Datatype::Text => Ok(Value::Text(self.canonical_string())),
            Datatype::Integer => match self {
                Value::Integer(_) => Ok(self.clone()),
                Value::Decimal(d) => match d.to_i64_exact() {
                    Some(i) => Ok(Value::Integer(i)),
                    None => Err(format!("decimal {d} is not a whole number")),
                },
                Value::Text(s) => match s.trim().parse::<i64>() {
                    Ok(i) => Ok(Value::Integer(i)),
                    Err(_) => fail(),
                },
                _ => fail(),
            },
            Datatype::Decimal => match self {
                Value::Decimal(_) => Ok(self.clone()),
                Value::Integer(i) => Ok(Value::Decimal(Decimal::from_int(*i))),
                Value::Text(s) => match Decimal::parse(s) {
                    Ok(d) => Ok(Value::Decimal(d)),
                    Err(_) => fail(),
                },
                _ => fail(),
            },
            Datatype::Boolean => match self {
                Value::Boolean(_) => Ok(self.clone()),
                Value::Text(s) => match s.trim() {
                    "true" => Ok(Value::Boolean(true)),
                    "false" => Ok(Value::Boolean(false)),
                    _ => fail(),
                },
                _ => fail(),
            },
            Datatype::Date => match self {
                Value::Date(_) => Ok(self.clone()),
                Value::Timestamp(t) => {
                    if t.time() == chrono::NaiveTime::MIN {
                        Ok(Value::Date(t.date_naive()))
                    } else {
                        Err(format!("timestamp {} carries a time component", format_ts(t)))
                    }
                }
                Value::Text(s) => match NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d") {
                    Ok(d) => Ok(Value::Date(d)),
                    Err(_) => fail(),
                },
                _ => fail(),
            },
            Datatype::Timestamp => match self {
                Value::Timestamp(_) => Ok(self.clone()),
                Value::Date(d) => Ok(Value::Timestamp(date_to_ts(*d))),
                Value::Text(s) => match parse_ts(s.trim()) {
                    Ok(t) => Ok(Value::Timestamp(t)),
                    Err(_) => fail(),
                },
                _ => fail(),
            },
        }
    }

    /// Read a JSON scalar; `Ok(None)` for `null`. Strings are sniffed only
    /// for date/timestamp shapes; nested arrays/objects are preserved as
    /// their compact JSON text.
    pub fn from_json(v: &serde_json::Value) -> Result<Option<Value>> {
        match v {
            serde_json::Value::Null => Ok(None),
            serde_json::Value::Bool(b) => Ok(Some(Value::Boolean(*b))),
            serde_json::Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Ok(Some(Value::Integer(i)))
                } else if let Some(f) = n.as_f64() {
                    let d = Decimal::parse(&f.to_string())
                        .or_else(|_| Decimal::from_f64(f).ok_or(()).map_err(|_| String::new()))
                        .map_err(|_| Error::MalformedDocument(format!("number out of range: {n}")))?;
                    Ok(Some(Value::Decimal(d)))
                } else {
                    Err(Error::MalformedDocument(format!("unreadable number: {n}")))
                }
            }
            serde_json::Value::String(s) => Ok(Some(sniff_temporal(s).unwrap_or_else(|| Value::Text(s.clone())))),
            other => Ok(Some(Value::Text(serde_json::to_string(other).unwrap()))),
        }
    }

    /// Read a CSV cell; `None` for the empty cell. Cells are sniffed in the
    /// order integer, decimal, boolean, date, timestamp, and fall back to
    /// text.
    pub fn from_csv_field(s: &str) -> Option<Value> {
        if s.is_empty() {
            return None;
        }
        let bytes = s.as_bytes();
        let body = if bytes[0] == b'+' || bytes[0] == b'-' { &s[1..] } else { s };
        if !body.is_empty() && body.bytes().all(|b| b.is_ascii_digit()) {
            if let Ok(i) = s.parse::<i64>() {
                return Some(Value::Integer(i));
            }
            if let Ok(d) = Decimal::parse(s) {
                return Some(Value::Decimal(d));
            }
            return Some(Value::Text(s.to_string()));
        }
        if let Some((int_part, frac_part)) = body.split_once('.') {
            if !int_part.is_empty()
                && !frac_part.is_empty()
                && int_part.bytes().all(|b| b.is_ascii_digit())
                && frac_part.bytes().all(|b| b.is_ascii_digit())
            {
                if let Ok(d) = Decimal::parse(s) {
                    return Some(Value::Decimal(d));
                }
                return Some(Value::Text(s.to_string()));
            }
        }
        match s {
            "true" => return Some(Value::Boolean(true)),
            "false" => return Some(Value::Boolean(false)),
            _ => {}
        }
        if let Some(v) = sniff_temporal(s) {
            return Some(v);
        }
        Some(Value::Text(s.to_string()))
    }

    /// Convert to a `serde_json` scalar. Decimals become JSON numbers via
    /// their shortest round-trip float form, which re-reads to the same
    /// decimal at this scale.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Integer(i) => serde_json::Value::from(*i),
            Value::Decimal(d) => serde_json::Number::from_f64(d.to_f64())
                .map(serde_json::Value::Number)
                .unwrap_or_else(|| serde_json::Value::String(d.to_string())),
            Value::Text(s) => serde_json::Value::String(s.clone()),
            Value::Boolean(b) => serde_json::Value::Bool(*b),
            Value::Date(_) | Value::Timestamp(_) => serde_json::Value::String(self.canonical_string()),
        }
    }
}

/// Recognize `YYYY-MM-DD` and RFC 3339 timestamp shapes inside strings.
pub(crate) fn sniff_temporal(s: &str) -> Option<Value> {
    let b = s.as_bytes();
    if b.len() == 10 && b[4] == b'-' && b[7] == b'-' && b.iter().enumerate().all(|(i, c)| i == 4 || i == 7 || c.is_ascii_digit()) {
        if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
            return Some(Value::Date(d));
        }
    }
    if b.len() >= 19 && b.get(10) == Some(&b'T') {
        if let Ok(t) = DateTime::parse_from_rfc3339(s) {
            let t = t.with_timezone(&Utc);
            return Some(Value::Timestamp(Utc.timestamp_opt(t.timestamp(), 0).unwrap()));
        }
    }
    None
}

/// Canonical timestamp text: seconds precision, `Z` suffix.
pub fn format_ts(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Parse an RFC 3339 timestamp (sub-second digits are truncated) or a bare
/// date, which reads as midnight UTC.
pub fn parse_ts(s: &str) -> Result<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        let t = t.with_timezone(&Utc);
        return Ok(Utc.timestamp_opt(t.timestamp(), 0).unwrap());
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(date_to_ts(d));
    }
    Err(Error::MalformedDocument(format!("invalid timestamp {s:?}")))
}

/// Parse `YYYY-MM-DD`.
pub fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|_| Error::MalformedDocument(format!("invalid date {s:?}")))
}

/// Midnight UTC of the given day.
pub fn date_to_ts(d: NaiveDate) -> DateTime<Utc> {
    Utc.from_utc_datetime(&d.and_hms_opt(0, 0, 0).unwrap())
}

/// Append a JSON string literal with `serde_json`-compatible escaping.
pub fn push_json_string(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\u{8}' => out.push_str("\\b"),
            '\u{c}' => out.push_str("\\f"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                out.push_str(&format!("\\u{:04x}", c as u32));
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

/// Append the canonical JSON form of one value (decimals as exact number
/// text, temporals as canonical strings).
pub fn push_canonical_value(out: &mut String, v: &Value) {
    match v {
        Value::Integer(i) => out.push_str(&i.to_string()),
        Value::Decimal(d) => out.push_str(&d.to_string()),
        Value::Boolean(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Text(s) => push_json_string(out, s),
        Value::Date(_) | Value::Timestamp(_) => push_json_string(out, &v.canonical_string()),
    }
}

/// Canonical JSON object for a row: keys sorted (the map is a `BTreeMap`),
/// no whitespace, decimals as exact number text. Equal rows always produce
/// identical bytes.
pub fn canonical_row_json(row: &Row) -> String {
    let mut out = String::with_capacity(row.len() * 16 + 2);
    out.push('{');
    let mut first = true;
    for (k, v) in row {
        if !first {
            out.push(',');
        }
        first = false;
        push_json_string(&mut out, k);
        out.push(':');
        push_canonical_value(&mut out, v);
    }
    out.push('}');
    out
}

/// Row as a `serde_json` object (for embedding in larger documents).
pub fn row_to_json(row: &Row) -> serde_json::Value {
    let mut map = serde_json::Map::new();
    for (k, v) in row {
        map.insert(k.clone(), v.to_json());
    }
    serde_json::Value::Object(map)
}

/// Read a row back from a `serde_json` object, sniffing temporals and
/// dropping nulls.
pub fn row_from_json(v: &serde_json::Value) -> Result<Row> {
    let obj = v
        .as_object()
        .ok_or_else(|| Error::MalformedDocument("record line is not a JSON object".into()))?;
    let mut row = Row::new();
    for (k, val) in obj {
        if let Some(parsed) = Value::from_json(val)? {
            row.insert(k.clone(), parsed);
        }
    }
    Ok(row)
}

/// Serde adapter for canonical timestamp strings.
pub mod ts_serde {
    use super::{format_ts, parse_ts};
    use chrono::{DateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_ts(t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        parse_ts(&s).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for optional canonical timestamp strings.
pub mod opt_ts_serde {
    use super::{format_ts, parse_ts};
    use chrono::{DateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &Option<DateTime<Utc>>, s: S) -> Result<S::Ok, S::Error> {
        match t {
            Some(t) => s.serialize_some(&format_ts(t)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DateTime<Utc>>, D::Error> {
        let s: Option<String> = Option::deserialize(d)?;
        match s {
            Some(s) => parse_ts(&s).map(Some).map_err(serde::de::Error::custom),
            None => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dec(s: &str) -> Decimal {
        Decimal::parse(s).unwrap()
    }

    #[test]
    fn decimal_parse_and_display_round_trip() {
        for s in ["0", "1", "-1", "20.5", "-20.5", "0.0001", "-0.0001", "1234.5678", "50"] {
            assert_eq!(dec(s).to_string(), s);
        }
        assert_eq!(dec("20.5000").to_string(), "20.5");
        assert_eq!(dec("+3.14").to_string(), "3.14");
        assert_eq!(dec("007").to_string(), "7");
    }

    #[test]
    fn decimal_parse_rounds_half_even_at_scale_four() {
        assert_eq!(dec("2.00005").to_string(), "2"); // tie, last digit even
        assert_eq!(dec("2.00015").to_string(), "2.0002"); // tie, last digit odd
        assert_eq!(dec("2.000151").to_string(), "2.0002"); // above half
        assert_eq!(dec("2.000149").to_string(), "2.0001"); // below half
        assert_eq!(dec("-2.00005").to_string(), "-2");
        assert_eq!(dec("-2.00015").to_string(), "-2.0002");
    }

    #[test]
    fn decimal_parse_rejects_garbage() {
        for s in ["", ".", "abc", "1.2.3", "1e3", "--5", "1 2"] {
            assert!(Decimal::parse(s).is_err(), "{s:?} should not parse");
        }
    }

    #[test]
    fn decimal_arithmetic_rounds_half_even() {
        // 0.0003 * 0.5 = 0.00015 -> ties to 0.0002 (even at scale 4)
        assert_eq!(dec("0.0003").checked_mul(dec("0.5")).unwrap().to_string(), "0.0002");
        // 0.0001 * 0.5 = 0.00005 -> ties to 0 (even)
        assert_eq!(dec("0.0001").checked_mul(dec("0.5")).unwrap().to_string(), "0");
        assert_eq!(dec("1").checked_div(dec("3")).unwrap().to_string(), "0.3333");
        assert_eq!(dec("2").checked_div(dec("3")).unwrap().to_string(), "0.6667");
        assert_eq!(dec("-1").checked_div(dec("3")).unwrap().to_string(), "-0.3333");
        assert!(dec("1").checked_div(Decimal::zero()).is_none());
    }

    #[test]
    fn decimal_float_round_trip_at_desk_scale() {
        // Any scale-4 decimal with a modest integer part survives the
        // float-display path used when embedding rows in JSON documents.
        for scaled in [0i128, 1, -1, 5, 205_000, -205_000, 12_345_678, 999_999_999_999] {
            let d = Decimal::from_scaled(scaled);
            let via_float = Decimal::parse(&d.to_f64().to_string()).unwrap();
            assert_eq!(d, via_float, "scaled {scaled}");
        }
    }

    #[test]
    fn value_coercion_matrix() {
        // text accepts everything
        assert_eq!(Value::Integer(20).coerce(Datatype::Text).unwrap(), Value::Text("20".into()));
        assert_eq!(Value::Boolean(true).coerce(Datatype::Text).unwrap(), Value::Text("true".into()));
        // numeric text narrows
        assert_eq!(Value::Text("20".into()).coerce(Datatype::Integer).unwrap(), Value::Integer(20));
        assert_eq!(
            Value::Text("20.5".into()).coerce(Datatype::Decimal).unwrap(),
            Value::Decimal(dec("20.5"))
        );
        // integer widens to decimal, integral decimal narrows to integer
        assert_eq!(Value::Integer(7).coerce(Datatype::Decimal).unwrap(), Value::Decimal(dec("7")));
        assert_eq!(Value::Decimal(dec("7.0")).coerce(Datatype::Integer).unwrap(), Value::Integer(7));
        assert!(Value::Decimal(dec("20.5")).coerce(Datatype::Integer).is_err());
        // temporal bridging
        let d = parse_date("2025-08-27").unwrap();
        assert_eq!(
            Value::Date(d).coerce(Datatype::Timestamp).unwrap(),
            Value::Timestamp(parse_ts("2025-08-27T00:00:00Z").unwrap())
        );
        assert_eq!(
            Value::Timestamp(parse_ts("2025-08-27T00:00:00Z").unwrap())
                .coerce(Datatype::Date)
                .unwrap(),
            Value::Date(d)
        );
        assert!(Value::Timestamp(parse_ts("2025-08-27T10:30:00Z").unwrap())
            .coerce(Datatype::Date)
            .is_err());
        // hopeless cases fail with a reasoned message
        let err = Value::Text("abc".into()).coerce(Datatype::Integer).unwrap_err();
        assert!(err.contains("expected integer"), "{err}");
        assert!(Value::Boolean(true).coerce(Datatype::Integer).is_err());
    }

    #[test]
    fn csv_sniffing_covers_every_shape() {
        assert_eq!(Value::from_csv_field(""), None);
        assert_eq!(Value::from_csv_field("42"), Some(Value::Integer(42)));
        assert_eq!(Value::from_csv_field("-7"), Some(Value::Integer(-7)));
        assert_eq!(Value::from_csv_field("20.5"), Some(Value::Decimal(dec("20.5"))));
        assert_eq!(Value::from_csv_field("true"), Some(Value::Boolean(true)));
        assert_eq!(
            Value::from_csv_field("2025-08-27"),
            Some(Value::Date(parse_date("2025-08-27").unwrap()))
        );
        assert_eq!(
            Value::from_csv_field("2025-08-27T00:00:00Z"),
            Some(Value::Timestamp(parse_ts("2025-08-27T00:00:00Z").unwrap()))
        );
        assert_eq!(Value::from_csv_field("hello"), Some(Value::Text("hello".into())));
        assert_eq!(Value::from_csv_field("1e3"), Some(Value::Text("1e3".into())));
        assert_eq!(Value::from_csv_field("2025-13-40"), Some(Value::Text("2025-13-40".into())));
    }

    #[test]
    fn json_sniffing_only_recognizes_temporals_in_strings() {
        let v = Value::from_json(&serde_json::json!("2025-08-27")).unwrap().unwrap();
        assert_eq!(v, Value::Date(parse_date("2025-08-27").unwrap()));
        let v = Value::from_json(&serde_json::json!("20")).unwrap().unwrap();
        assert_eq!(v, Value::Text("20".into()));
        let v = Value::from_json(&serde_json::json!(20.5)).unwrap().unwrap();
        assert_eq!(v, Value::Decimal(dec("20.5")));
        assert_eq!(Value::from_json(&serde_json::Value::Null).unwrap(), None);
    }

    #[test]
    fn canonical_row_json_is_sorted_and_compact() {
        let mut row = Row::new();
        row.insert("b".into(), Value::Decimal(dec("20.5")));
        row.insert("a".into(), Value::Text("x\"y".into()));
        row.insert("c".into(), Value::Integer(1));
        assert_eq!(canonical_row_json(&row), r#"{"a":"x\"y","b":20.5,"c":1}"#);
        // must agree with serde_json's own escaping
        let serde_text = serde_json::to_string(&row_to_json(&row)).unwrap();
        assert_eq!(canonical_row_json(&row), serde_text);
    }

    #[test]
    fn row_json_round_trip_preserves_values() {
        let mut row = Row::new();
        row.insert("amount".into(), Value::Decimal(dec("0.1")));
        row.insert("n".into(), Value::Integer(12));
        row.insert("ok".into(), Value::Boolean(false));
        row.insert("day".into(), Value::Date(parse_date("2025-08-27").unwrap()));
        row.insert("at".into(), Value::Timestamp(parse_ts("2025-08-27T12:00:00Z").unwrap()));
        row.insert("note".into(), Value::Text("hi".into()));
        let text = canonical_row_json(&row);
        let back = row_from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(row, back);
    }

    #[test]
    fn value_ordering_is_total_and_class_ranked() {
        let vals = [
            Value::Boolean(false),
            Value::Boolean(true),
            Value::Integer(-1),
            Value::Decimal(dec("0.5")),
            Value::Integer(2),
            Value::Date(parse_date("2025-01-01").unwrap()),
            Value::Timestamp(parse_ts("2025-01-01T00:00:00Z").unwrap()),
            Value::Text("a".into()),
        ];
        for w in vals.windows(2) {
            assert_ne!(w[0].cmp_canonical(&w[1]), Ordering::Greater, "{:?} vs {:?}", w[0], w[1]);
        }
        assert_eq!(Value::Integer(20).cmp_canonical(&Value::Decimal(dec("20"))), Ordering::Equal);
    }

    #[test]
    fn timestamps_normalize_to_seconds_utc() {
        assert_eq!(format_ts(&parse_ts("2025-08-27T02:30:00+02:00").unwrap()), "2025-08-27T00:30:00Z");
        assert_eq!(format_ts(&parse_ts("2025-08-27T00:00:00.999Z").unwrap()), "2025-08-27T00:00:00Z");
        assert_eq!(format_ts(&parse_ts("2025-08-27").unwrap()), "2025-08-27T00:00:00Z");
        assert!(parse_ts("not-a-time").is_err());
    }
}
