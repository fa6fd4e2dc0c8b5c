//! Small expression languages: filter predicates and arithmetic derivations.
//!
//! Filters follow the grammar
//! `expr := or; or := and ('or' and)*; and := not ('and' not)*;
//! not := 'not' not | cmp | '(' expr ')'; cmp := ident op literal`
//! with precedence not > and > or. Arithmetic uses the usual
//! `sum := product (('+'|'-') product)*` shape with unary minus.
//!
//! Both languages evaluate over a row with SQL-style missing-value
//! propagation: a comparison or arithmetic step touching a missing field
//! yields unknown/missing, `and`/`or` short-circuit around unknowns, and a
//! filter keeps only rows that evaluate to definitely-true.
//!
//! Pretty-printing emits a canonical form that reparses to a structurally
//! identical tree, which makes expression digests stable.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::value::{Datatype, Decimal, Row, Value};

/// Comparison operators usable in filter predicates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    fn apply(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        matches!(
            (self, ord),
            (CmpOp::Eq, Equal)
                | (CmpOp::Ne, Less)
                | (CmpOp::Ne, Greater)
                | (CmpOp::Lt, Less)
                | (CmpOp::Le, Less)
                | (CmpOp::Le, Equal)
                | (CmpOp::Gt, Greater)
                | (CmpOp::Ge, Greater)
                | (CmpOp::Ge, Equal)
        )
    }
}

/// A parsed filter predicate.
#[derive(Clone, Debug, PartialEq)]
pub enum FilterExpr {
    Cmp { field: String, op: CmpOp, literal: Value },
    And(Box<FilterExpr>, Box<FilterExpr>),
    Or(Box<FilterExpr>, Box<FilterExpr>),
    Not(Box<FilterExpr>),
}

impl FilterExpr {
    /// Fields referenced anywhere in the predicate, sorted and deduplicated.
    pub fn fields(&self) -> Vec<String> {
        fn walk(e: &FilterExpr, out: &mut Vec<String>) {
            match e {
                FilterExpr::Cmp { field, .. } => out.push(field.clone()),
                FilterExpr::And(a, b) | FilterExpr::Or(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
                FilterExpr::Not(a) => walk(a, out),
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out.sort();
        out.dedup();
        out
    }

    /// Three-valued evaluation: `None` means unknown (a compared field was
    /// missing or incomparable with the literal).
    pub fn eval(&self, row: &Row) -> Option<bool> {
        match self {
            FilterExpr::Cmp { field, op, literal } => {
                let v = row.get(field)?;
                match op {
                    CmpOp::Eq => Some(v.semantic_eq(literal)),
                    CmpOp::Ne => Some(!v.semantic_eq(literal)),
                    _ => v.compare_semantic(literal).map(|ord| op.apply(ord)),
                }
            }
            FilterExpr::And(a, b) => match (a.eval(row), b.eval(row)) {
                (Some(false), _) | (_, Some(false)) => Some(false),
                (Some(true), Some(true)) => Some(true),
                _ => None,
            },
            FilterExpr::Or(a, b) => match (a.eval(row), b.eval(row)) {
                (Some(true), _) | (_, Some(true)) => Some(true),
                (Some(false), Some(false)) => Some(false),
                _ => None,
            },
            FilterExpr::Not(a) => a.eval(row).map(|b| !b),
        }
    }

    /// True only for rows that definitely satisfy the predicate.
    pub fn keeps(&self, row: &Row) -> bool {
        self.eval(row) == Some(true)
    }

    fn precedence(&self) -> u8 {
        match self {
            FilterExpr::Or(..) => 1,
            FilterExpr::And(..) => 2,
            FilterExpr::Not(..) => 3,
            FilterExpr::Cmp { .. } => 4,
        }
    }

    fn write(&self, f: &mut fmt::Formatter<'_>, parent: u8, right: bool) -> fmt::Result {
        let me = self.precedence();
        // parenthesize when binding looser than the context, or equally
        // loose on the right of a left-associative operator
        let parens = me < parent || (me == parent && right && me < 3);
        if parens {
            f.write_str("(")?;
        }
        match self {
            FilterExpr::Cmp { field, op, literal } => {
                write!(f, "{field} {} {}", op.symbol(), literal_text(literal))?
            }
            FilterExpr::And(a, b) => {
                a.write(f, me, false)?;
                f.write_str(" and ")?;
                b.write(f, me, true)?;
            }
            FilterExpr::Or(a, b) => {
                a.write(f, me, false)?;
                f.write_str(" or ")?;
                b.write(f, me, true)?;
            }
            FilterExpr::Not(a) => {
                f.write_str("not ")?;
                a.write(f, me, true)?;
            }
        }
        if parens {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for FilterExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, 0, false)
    }
}

impl Serialize for FilterExpr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FilterExpr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_filter(&text).map_err(serde::de::Error::custom)
    }
}

/// An arithmetic expression used by derive steps.
#[derive(Clone, Debug, PartialEq)]
pub enum ArithExpr {
    Field(String),
    Literal(Value),
    Neg(Box<ArithExpr>),
    Add(Box<ArithExpr>, Box<ArithExpr>),
    Sub(Box<ArithExpr>, Box<ArithExpr>),
    Mul(Box<ArithExpr>, Box<ArithExpr>),
    Div(Box<ArithExpr>, Box<ArithExpr>),
}

impl ArithExpr {
    pub fn fields(&self) -> Vec<String> {
        fn walk(e: &ArithExpr, out: &mut Vec<String>) {
            match e {
                ArithExpr::Field(f) => out.push(f.clone()),
                ArithExpr::Literal(_) => {}
                ArithExpr::Neg(a) => walk(a, out),
                ArithExpr::Add(a, b) | ArithExpr::Sub(a, b) | ArithExpr::Mul(a, b) | ArithExpr::Div(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out.sort();
        out.dedup();
        out
    }

    /// The static result type: integer only when every operand is integer
    /// and no division occurs, otherwise decimal.
    pub fn result_type(&self, field_type: &dyn Fn(&str) -> Option<Datatype>) -> Result<Datatype> {
        match self {
            ArithExpr::Field(f) => match field_type(f) {
                Some(Datatype::Integer) => Ok(Datatype::Integer),
                Some(Datatype::Decimal) => Ok(Datatype::Decimal),
                Some(other) => Err(Error::ExecutionError(format!(
                    "field {f} has type {} where a number is needed",
                    other.name()
                ))),
                None => Ok(Datatype::Decimal),
            },
            ArithExpr::Literal(Value::Integer(_)) => Ok(Datatype::Integer),
            ArithExpr::Literal(Value::Decimal(_)) => Ok(Datatype::Decimal),
            ArithExpr::Literal(v) => Err(Error::ExecutionError(format!(
                "literal {} is not numeric",
                literal_text(v)
            ))),
            ArithExpr::Neg(a) => a.result_type(field_type),
            ArithExpr::Add(a, b) | ArithExpr::Sub(a, b) | ArithExpr::Mul(a, b) => {
                match (a.result_type(field_type)?, b.result_type(field_type)?) {
                    (Datatype::Integer, Datatype::Integer) => Ok(Datatype::Integer),
                    _ => Ok(Datatype::Decimal),
                }
            }
            ArithExpr::Div(a, b) => {
                a.result_type(field_type)?;
                b.result_type(field_type)?;
                Ok(Datatype::Decimal)
            }
        }
    }

    /// Evaluate over a row. A missing field makes the whole result missing;
    /// non-numeric values, overflow, and division by zero are errors.
    pub fn eval(&self, row: &Row) -> Result<Option<Value>> {
        #[derive(Clone, Copy)]
        enum Num {
            Int(i64),
            Dec(Decimal),
        }
        fn numeric(v: &Value, what: &str) -> Result<Num> {
            match v {
                Value::Integer(i) => Ok(Num::Int(*i)),
                Value::Decimal(_) => Ok(Num::Dec(v.as_decimal().unwrap())),
                other => Err(Error::ExecutionError(format!(
                    "{what} is {} where a number is needed",
                    other.datatype().name()
                ))),
            }
        }
        fn widen(n: Num) -> Decimal {
            match n {
                Num::Int(i) => Decimal::from_int(i),
                Num::Dec(d) => d,
            }
        }
        fn go(e: &ArithExpr, row: &Row) -> Result<Option<Num>> {
            let overflow = || Error::ExecutionError("arithmetic overflow".to_string());
            Ok(match e {
                ArithExpr::Field(f) => match row.get(f) {
                    None => None,
                    Some(v) => Some(numeric(v, &format!("field {f}"))?),
                },
                ArithExpr::Literal(v) => Some(numeric(v, "literal")?),
                ArithExpr::Neg(a) => match go(a, row)? {
                    None => None,
                    Some(Num::Int(i)) => Some(Num::Int(i.checked_neg().ok_or_else(overflow)?)),
                    Some(Num::Dec(d)) => Some(Num::Dec(d.checked_neg().ok_or_else(overflow)?)),
                },
                ArithExpr::Add(a, b) | ArithExpr::Sub(a, b) | ArithExpr::Mul(a, b) => {
                    let (x, y) = match (go(a, row)?, go(b, row)?) {
                        (Some(x), Some(y)) => (x, y),
                        _ => return Ok(None),
                    };
                    match (x, y) {
                        (Num::Int(x), Num::Int(y)) => {
                            let r = match e {
                                ArithExpr::Add(..) => x.checked_add(y),
                                ArithExpr::Sub(..) => x.checked_sub(y),
                                _ => x.checked_mul(y),
                            };
                            Some(Num::Int(r.ok_or_else(overflow)?))
                        }
                        (x, y) => {
                            let (x, y) = (widen(x), widen(y));
                            let r = match e {
                                ArithExpr::Add(..) => x.checked_add(y),
                                ArithExpr::Sub(..) => x.checked_sub(y),
                                _ => x.checked_mul(y),
                            };
                            Some(Num::Dec(r.ok_or_else(overflow)?))
                        }
                    }
                }
                ArithExpr::Div(a, b) => {
                    let (x, y) = match (go(a, row)?, go(b, row)?) {
                        (Some(x), Some(y)) => (widen(x), widen(y)),
                        _ => return Ok(None),
                    };
                    if y == Decimal::zero() {
                        return Err(Error::ExecutionError("division by zero".to_string()));
                    }
                    Some(Num::Dec(x.checked_div(y).ok_or_else(overflow)?))
                }
            })
        }
        Ok(go(self, row)?.map(|n| match n {
            Num::Int(i) => Value::Integer(i),
            Num::Dec(d) => Value::Decimal(d),
        }))
    }

    fn precedence(&self) -> u8 {
        match self {
            ArithExpr::Add(..) | ArithExpr::Sub(..) => 1,
            ArithExpr::Mul(..) | ArithExpr::Div(..) => 2,
            ArithExpr::Neg(..) => 3,
            ArithExpr::Field(_) | ArithExpr::Literal(_) => 4,
        }
    }

    fn write(&self, f: &mut fmt::Formatter<'_>, parent: u8, right: bool) -> fmt::Result {
        let me = self.precedence();
        let parens = me < parent || (me == parent && right && me < 3);
        if parens {
            f.write_str("(")?;
        }
        match self {
            ArithExpr::Field(name) => f.write_str(name)?,
            ArithExpr::Literal(v) => f.write_str(&literal_text(v))?,
            ArithExpr::Neg(a) => {
                f.write_str("-")?;
                a.write(f, me, true)?;
            }
            ArithExpr::Add(a, b) | ArithExpr::Sub(a, b) | ArithExpr::Mul(a, b) | ArithExpr::Div(a, b) => {
                let sym = match self {
                    ArithExpr::Add(..) => " + ",
                    ArithExpr::Sub(..) => " - ",
                    ArithExpr::Mul(..) => " * ",
                    _ => " / ",
                };
                a.write(f, me, false)?;
                f.write_str(sym)?;
                b.write(f, me, true)?;
            }
        }
        if parens {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for ArithExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, 0, false)
    }
}

impl Serialize for ArithExpr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ArithExpr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_arith(&text).map_err(serde::de::Error::custom)
    }
}

/// Literal syntax shared by both languages: quoted text (dates sniffed),
/// numbers, booleans.
fn literal_text(v: &Value) -> String {
    match v {
        Value::Integer(_) | Value::Decimal(_) | Value::Boolean(_) => v.canonical_string(),
        // text and temporals quote; embedded quotes double up
        other => format!("'{}'", other.canonical_string().replace('\'', "''")),
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Ident(String),
    Number(Value),
    Quoted(Value),
    Cmp(CmpOp),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    And,
    Or,
    Not,
    True,
    False,
}

impl Token {
    fn describe(&self) -> String {
        match self {
            Token::Ident(s) => format!("identifier {s:?}"),
            Token::Number(v) => format!("number {}", v.canonical_string()),
            Token::Quoted(v) => format!("literal '{}'", v.canonical_string()),
            Token::Cmp(op) => format!("'{}'", op.symbol()),
            Token::Plus => "'+'".into(),
            Token::Minus => "'-'".into(),
            Token::Star => "'*'".into(),
            Token::Slash => "'/'".into(),
            Token::LParen => "'('".into(),
            Token::RParen => "')'".into(),
            Token::And => "'and'".into(),
            Token::Or => "'or'".into(),
            Token::Not => "'not'".into(),
            Token::True => "'true'".into(),
            Token::False => "'false'".into(),
        }
    }
}

fn err_at(position: usize, expected: &str) -> Error {
    Error::ParseError {
        position,
        expected: expected.to_string(),
    }
}

/// Tokenize, recording each token's starting byte offset.
fn lex(text: &str) -> Result<Vec<(usize, Token)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = text[i..].chars().next().unwrap();
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        match c {
            '(' => {
                out.push((start, Token::LParen));
                i += 1;
            }
            ')' => {
                out.push((start, Token::RParen));
                i += 1;
            }
            '+' => {
                out.push((start, Token::Plus));
                i += 1;
            }
            '-' => {
                out.push((start, Token::Minus));
                i += 1;
            }
            '*' => {
                out.push((start, Token::Star));
                i += 1;
            }
            '/' => {
                out.push((start, Token::Slash));
                i += 1;
            }
            '=' => {
                out.push((start, Token::Cmp(CmpOp::Eq)));
                i += 1;
            }
            '!' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    out.push((start, Token::Cmp(CmpOp::Ne)));
                    i += 2;
                } else {
                    return Err(err_at(start, "'=' after '!'"));
                }
            }
            '<' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    out.push((start, Token::Cmp(CmpOp::Le)));
                    i += 2;
                } else if bytes.get(i + 1) == Some(&b'>') {
                    out.push((start, Token::Cmp(CmpOp::Ne)));
                    i += 2;
                } else {
                    out.push((start, Token::Cmp(CmpOp::Lt)));
                    i += 1;
                }
            }
            '>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    out.push((start, Token::Cmp(CmpOp::Ge)));
                    i += 2;
                } else {
                    out.push((start, Token::Cmp(CmpOp::Gt)));
                    i += 1;
                }
            }
            '≠' | '≤' | '≥' => {
                let (op, len) = match c {
                    '≠' => (CmpOp::Ne, '≠'.len_utf8()),
                    '≤' => (CmpOp::Le, '≤'.len_utf8()),
                    _ => (CmpOp::Ge, '≥'.len_utf8()),
                };
                out.push((start, Token::Cmp(op)));
                i += len;
            }
            '\'' => {
                // quoted literal; '' escapes a quote
                let mut s = String::new();
                i += 1;
                loop {
                    match bytes.get(i) {
                        None => return Err(err_at(text.len(), "closing quote")),
                        Some(b'\'') => {
                            if bytes.get(i + 1) == Some(&b'\'') {
                                s.push('\'');
                                i += 2;
                            } else {
                                i += 1;
                                break;
                            }
                        }
                        Some(_) => {
                            let ch = text[i..].chars().next().unwrap();
                            s.push(ch);
                            i += ch.len_utf8();
                        }
                    }
                }
                let v = crate::value::sniff_temporal(&s).unwrap_or(Value::Text(s));
                out.push((start, Token::Quoted(v)));
            }
            '0'..='9' | '.' => {
                let mut end = i;
                let mut dotted = false;
                while end < bytes.len() {
                    match bytes[end] {
                        b'0'..=b'9' => end += 1,
                        b'.' if !dotted => {
                            dotted = true;
                            end += 1;
                        }
                        _ => break,
                    }
                }
                let tok = &text[i..end];
                let v = if dotted {
                    Value::Decimal(Decimal::parse(tok).map_err(|e| err_at(start, &e))?)
                } else {
                    Value::Integer(tok.parse().map_err(|_| err_at(start, "an integer in range"))?)
                };
                out.push((start, Token::Number(v)));
                i = end;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut end = i;
                while end < bytes.len() && ((bytes[end] as char).is_ascii_alphanumeric() || bytes[end] == b'_') {
                    end += 1;
                }
                let word = &text[i..end];
                let tok = match word.to_ascii_lowercase().as_str() {
                    "and" => Token::And,
                    "or" => Token::Or,
                    "not" => Token::Not,
                    "true" => Token::True,
                    "false" => Token::False,
                    _ => Token::Ident(word.to_string()),
                };
                out.push((start, tok));
                i = end;
            }
            _ => return Err(err_at(start, "a token")),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn new(text: &str) -> Result<Self> {
        Ok(Parser {
            tokens: lex(text)?,
            pos: 0,
            len: text.len(),
        })
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn here(&self) -> usize {
        self.tokens.get(self.pos).map(|(p, _)| *p).unwrap_or(self.len)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|(_, t)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect_done(&self) -> Result<()> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(err_at(self.here(), &format!("end of input, found {}", t.describe()))),
        }
    }

    // filter grammar

    fn filter_or(&mut self) -> Result<FilterExpr> {
        let mut left = self.filter_and()?;
        while self.peek() == Some(&Token::Or) {
            self.bump();
            let right = self.filter_and()?;
            left = FilterExpr::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn filter_and(&mut self) -> Result<FilterExpr> {
        let mut left = self.filter_not()?;
        while self.peek() == Some(&Token::And) {
            self.bump();
            let right = self.filter_not()?;
            left = FilterExpr::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn filter_not(&mut self) -> Result<FilterExpr> {
        match self.peek() {
            Some(Token::Not) => {
                self.bump();
                Ok(FilterExpr::Not(Box::new(self.filter_not()?)))
            }
            Some(Token::LParen) => {
                self.bump();
                let inner = self.filter_or()?;
                match self.bump() {
                    Some(Token::RParen) => Ok(inner),
                    got => Err(err_at(
                        self.prev_or_end(got.is_some()),
                        "')' closing the group",
                    )),
                }
            }
            _ => self.comparison(),
        }
    }

    fn prev_or_end(&self, had_token: bool) -> usize {
        if had_token {
            self.tokens[self.pos - 1].0
        } else {
            self.len
        }
    }

    fn comparison(&mut self) -> Result<FilterExpr> {
        let field = match self.bump() {
            Some(Token::Ident(name)) => name,
            Some(t) => {
                return Err(err_at(
                    self.prev_or_end(true),
                    &format!("a field name, 'not', or '(', found {}", t.describe()),
                ))
            }
            None => return Err(err_at(self.len, "a field name, 'not', or '('")),
        };
        let op = match self.bump() {
            Some(Token::Cmp(op)) => op,
            Some(t) => {
                return Err(err_at(
                    self.prev_or_end(true),
                    &format!("a comparison operator, found {}", t.describe()),
                ))
            }
            None => return Err(err_at(self.len, "a comparison operator")),
        };
        let literal = self.literal()?;
        Ok(FilterExpr::Cmp { field, op, literal })
    }

    fn literal(&mut self) -> Result<Value> {
        match self.bump() {
            Some(Token::Number(v)) | Some(Token::Quoted(v)) => Ok(v),
            Some(Token::True) => Ok(Value::Boolean(true)),
            Some(Token::False) => Ok(Value::Boolean(false)),
            Some(Token::Minus) => match self.bump() {
                Some(Token::Number(Value::Integer(i))) => Ok(Value::Integer(-i)),
                Some(Token::Number(Value::Decimal(d))) => Ok(Value::Decimal(Decimal::from_scaled(-d.scaled()))),
                _ => Err(err_at(self.prev_or_end(true), "a number after '-'")),
            },
            Some(t) => Err(err_at(
                self.prev_or_end(true),
                &format!("a literal (number, 'text', true/false), found {}", t.describe()),
            )),
            None => Err(err_at(self.len, "a literal (number, 'text', true/false)")),
        }
    }

    // arithmetic grammar

    fn arith_sum(&mut self) -> Result<ArithExpr> {
        let mut left = self.arith_product()?;
        loop {
            let op = match self.peek() {
                Some(Token::Plus) => true,
                Some(Token::Minus) => false,
                _ => break,
            };
            self.bump();
            let right = self.arith_product()?;
            left = if op {
                ArithExpr::Add(Box::new(left), Box::new(right))
            } else {
                ArithExpr::Sub(Box::new(left), Box::new(right))
            };
        }
        Ok(left)
    }

    fn arith_product(&mut self) -> Result<ArithExpr> {
        let mut left = self.arith_factor()?;
        loop {
            let op = match self.peek() {
                Some(Token::Star) => true,
                Some(Token::Slash) => false,
                _ => break,
            };
            self.bump();
            let right = self.arith_factor()?;
            left = if op {
                ArithExpr::Mul(Box::new(left), Box::new(right))
            } else {
                ArithExpr::Div(Box::new(left), Box::new(right))
            };
        }
        Ok(left)
    }

    fn arith_factor(&mut self) -> Result<ArithExpr> {
        match self.bump() {
            Some(Token::Minus) => Ok(ArithExpr::Neg(Box::new(self.arith_factor()?))),
            Some(Token::Ident(name)) => Ok(ArithExpr::Field(name)),
            Some(Token::Number(v)) => Ok(ArithExpr::Literal(v)),
            Some(Token::LParen) => {
                let inner = self.arith_sum()?;
                match self.bump() {
                    Some(Token::RParen) => Ok(inner),
                    got => Err(err_at(
                        self.prev_or_end(got.is_some()),
                        "')' closing the group",
                    )),
                }
            }
            Some(t) => Err(err_at(
                self.prev_or_end(true),
                &format!("a field, number, '-', or '(', found {}", t.describe()),
            )),
            None => Err(err_at(self.len, "a field, number, '-', or '('")),
        }
    }
}

/// Parse a filter predicate.
pub fn parse_filter(text: &str) -> Result<FilterExpr> {
    let mut p = Parser::new(text)?;
    let expr = p.filter_or()?;
    p.expect_done()?;
    Ok(expr)
}

/// Parse an arithmetic expression.
pub fn parse_arith(text: &str) -> Result<ArithExpr> {
    let mut p = Parser::new(text)?;
    let expr = p.arith_sum()?;
    p.expect_done()?;
    Ok(expr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::parse_date;

    fn cmp(field: &str, op: CmpOp, literal: Value) -> FilterExpr {
        FilterExpr::Cmp {
            field: field.into(),
            op,
            literal,
        }
    }

    fn row(pairs: &[(&str, Value)]) -> Row {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn filter_parses_with_standard_precedence() {
        let e = parse_filter("amount >= 0 and region = 'EU'").unwrap();
        assert_eq!(
            e,
            FilterExpr::And(
                Box::new(cmp("amount", CmpOp::Ge, Value::Integer(0))),
                Box::new(cmp("region", CmpOp::Eq, Value::Text("EU".into()))),
            )
        );

        // not > and > or
        let e = parse_filter("a = 1 or b = 2 and not c = 3").unwrap();
        assert_eq!(
            e,
            FilterExpr::Or(
                Box::new(cmp("a", CmpOp::Eq, Value::Integer(1))),
                Box::new(FilterExpr::And(
                    Box::new(cmp("b", CmpOp::Eq, Value::Integer(2))),
                    Box::new(FilterExpr::Not(Box::new(cmp("c", CmpOp::Eq, Value::Integer(3))))),
                )),
            )
        );

        let e = parse_filter("not (a = 1 or b = 2)").unwrap();
        assert_eq!(
            e,
            FilterExpr::Not(Box::new(FilterExpr::Or(
                Box::new(cmp("a", CmpOp::Eq, Value::Integer(1))),
                Box::new(cmp("b", CmpOp::Eq, Value::Integer(2))),
            )))
        );

        // literal shapes: decimals, dates, booleans, unicode operators
        let e = parse_filter("price <= 12.5 and day < '2025-08-27' and ok != true").unwrap();
        assert_eq!(
            e.fields(),
            vec!["day".to_string(), "ok".to_string(), "price".to_string()]
        );
        let e2 = parse_filter("price ≤ 12.5 and day < '2025-08-27' and ok ≠ true").unwrap();
        assert_eq!(e, e2);
    }

    #[test]
    fn truncated_and_malformed_inputs_report_positions() {
        let text = "amount >=";
        match parse_filter(text) {
            Err(Error::ParseError { position, .. }) => assert_eq!(position, text.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_filter("amount >= 0 and") {
            Err(Error::ParseError { position, .. }) => assert_eq!(position, 15),
            other => panic!("{other:?}"),
        }
        match parse_filter("(a = 1").err().unwrap() {
            Error::ParseError { position, expected } => {
                assert_eq!(position, 6);
                assert!(expected.contains(')'), "{expected}");
            }
            other => panic!("{other:?}"),
        }
        match parse_filter("a = 1 b = 2").err().unwrap() {
            Error::ParseError { expected, .. } => assert!(expected.contains("end of input"), "{expected}"),
            other => panic!("{other:?}"),
        }
        assert!(parse_filter("a ! 1").is_err());
        assert!(parse_filter("a = 'unterminated").is_err());
    }

    #[test]
    fn evaluation_matches_truth_table_brute_force() {
        // abstract leaves a=?, b=?, c=? realized as boolean field comparisons;
        // enumerate every assignment and compare the evaluator against a
        // direct computation of the same formula
        let e = parse_filter("not (a = true or b = true) or c = true and a = true").unwrap();
        for bits in 0..8u8 {
            let (a, b, c) = (bits & 1 != 0, bits & 2 != 0, bits & 4 != 0);
            let r = row(&[
                ("a", Value::Boolean(a)),
                ("b", Value::Boolean(b)),
                ("c", Value::Boolean(c)),
            ]);
            let expect = !(a || b) || (c && a);
            assert_eq!(e.eval(&r), Some(expect), "a={a} b={b} c={c}");
        }
    }

    #[test]
    fn comparisons_are_typed_and_missing_is_unknown() {
        let e = parse_filter("amount >= 0").unwrap();
        assert_eq!(e.eval(&row(&[("amount", Value::Integer(5))])), Some(true));
        assert_eq!(e.eval(&row(&[("amount", Value::Decimal(Decimal::parse("-0.5").unwrap()))])), Some(false));
        // boundary: 0 >= 0
        assert_eq!(e.eval(&row(&[("amount", Value::Integer(0))])), Some(true));
        // missing field -> unknown -> filtered out
        assert_eq!(e.eval(&row(&[])), None);
        assert!(!e.keeps(&row(&[])));
        // incomparable types -> unknown for ordering, definite for equality
        assert_eq!(e.eval(&row(&[("amount", Value::Text("x".into()))])), None);
        let eq = parse_filter("amount = 'x'").unwrap();
        assert_eq!(eq.eval(&row(&[("amount", Value::Integer(1))])), Some(false));

        // dates compare chronologically
        let e = parse_filter("day < '2025-08-27'").unwrap();
        assert_eq!(e.eval(&row(&[("day", Value::Date(parse_date("2025-08-26").unwrap()))])), Some(true));
        assert_eq!(e.eval(&row(&[("day", Value::Date(parse_date("2025-08-27").unwrap()))])), Some(false));

        // unknown propagation: false and unknown = false; true or unknown = true
        let and_e = parse_filter("missing = 1 and present = 0").unwrap();
        assert_eq!(and_e.eval(&row(&[("present", Value::Integer(1))])), Some(false));
        let or_e = parse_filter("missing = 1 or present = 1").unwrap();
        assert_eq!(or_e.eval(&row(&[("present", Value::Integer(1))])), Some(true));
        let not_e = parse_filter("not missing = 1").unwrap();
        assert_eq!(not_e.eval(&row(&[])), None);
    }

    #[test]
    fn pretty_print_round_trips_structurally() {
        let cases = [
            "amount >= 0 and region = 'EU'",
            "not (a = 1 or b = 2)",
            "a = 1 or (b = 2 or c = 3)",
            "a = 1 or b = 2 or c = 3",
            "(a = 1 or b = 2) and not not c != 3",
            "day < '2025-08-27' and ok = true and x <= -1.5",
            "name = 'it''s'",
        ];
        for text in cases {
            let parsed = parse_filter(text).unwrap();
            let printed = parsed.to_string();
            let reparsed = parse_filter(&printed).unwrap();
            assert_eq!(parsed, reparsed, "{text} -> {printed}");
        }
        // structure is preserved, not just evaluation: right-nested or keeps parens
        let right = parse_filter("a = 1 or (b = 2 or c = 3)").unwrap();
        assert_eq!(right.to_string(), "a = 1 or (b = 2 or c = 3)");
        let left = parse_filter("a = 1 or b = 2 or c = 3").unwrap();
        assert_eq!(left.to_string(), "a = 1 or b = 2 or c = 3");
        assert_ne!(left, right);
    }

    #[test]
    fn arithmetic_parses_evaluates_and_round_trips() {
        let e = parse_arith("price * qty + fee").unwrap();
        assert_eq!(
            e,
            ArithExpr::Add(
                Box::new(ArithExpr::Mul(
                    Box::new(ArithExpr::Field("price".into())),
                    Box::new(ArithExpr::Field("qty".into())),
                )),
                Box::new(ArithExpr::Field("fee".into())),
            )
        );
        let r = row(&[
            ("price", Value::Decimal(Decimal::parse("2.5").unwrap())),
            ("qty", Value::Integer(4)),
            ("fee", Value::Integer(1)),
        ]);
        assert_eq!(e.eval(&r).unwrap(), Some(Value::Decimal(Decimal::parse("11").unwrap())));

        // integer-only stays integer; division always yields decimal
        let int_e = parse_arith("(a + b) * 2").unwrap();
        let r2 = row(&[("a", Value::Integer(3)), ("b", Value::Integer(4))]);
        assert_eq!(int_e.eval(&r2).unwrap(), Some(Value::Integer(14)));
        let div_e = parse_arith("a / b").unwrap();
        assert_eq!(
            div_e.eval(&r2).unwrap(),
            Some(Value::Decimal(Decimal::parse("0.75").unwrap()))
        );

        // missing propagates; division by zero errors; text operand errors
        assert_eq!(parse_arith("a + nothing").unwrap().eval(&r2).unwrap(), None);
        assert!(matches!(
            parse_arith("a / 0").unwrap().eval(&r2),
            Err(Error::ExecutionError(_))
        ));
        let bad = row(&[("a", Value::Text("x".into()))]);
        assert!(matches!(parse_arith("a + 1").unwrap().eval(&bad), Err(Error::ExecutionError(_))));

        // unary minus and precedence round trips
        for text in ["-a + b", "a - (b - c)", "a - b - c", "2 * (x + 1) / 4", "--x"] {
            let parsed = parse_arith(text).unwrap();
            let printed = parsed.to_string();
            assert_eq!(parse_arith(&printed).unwrap(), parsed, "{text} -> {printed}");
        }
        assert_eq!(parse_arith("-x * 3").unwrap().eval(&row(&[("x", Value::Integer(2))])).unwrap(), Some(Value::Integer(-6)));

        // static typing
        let ft = |f: &str| match f {
            "i" => Some(Datatype::Integer),
            "d" => Some(Datatype::Decimal),
            "t" => Some(Datatype::Text),
            _ => None,
        };
        assert_eq!(parse_arith("i + 2").unwrap().result_type(&ft).unwrap(), Datatype::Integer);
        assert_eq!(parse_arith("i + d").unwrap().result_type(&ft).unwrap(), Datatype::Decimal);
        assert_eq!(parse_arith("i / i").unwrap().result_type(&ft).unwrap(), Datatype::Decimal);
        assert!(parse_arith("t + 1").unwrap().result_type(&ft).is_err());
    }

    #[test]
    fn serde_uses_canonical_text() {
        let e = parse_filter("amount >= 0 and region = 'EU'").unwrap();
        let json = serde_json::to_string(&e).unwrap();
        assert_eq!(json, r#""amount >= 0 and region = 'EU'""#);
        let back: FilterExpr = serde_json::from_str(&json).unwrap();
        assert_eq!(back, e);
        let a = parse_arith("price * qty").unwrap();
        let back: ArithExpr = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(back, a);
        assert!(serde_json::from_str::<FilterExpr>(r#""a >=""#).is_err());
    }
}
