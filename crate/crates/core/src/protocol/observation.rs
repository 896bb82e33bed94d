use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// A single SQLite value as it crosses the wire. Blobs are hex encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob { blob: String },
}

impl Value {
    pub fn blob(bytes: &[u8]) -> Self {
        Value::Blob { blob: hex::encode(bytes) }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Value::Integer(i) => Some(i as f64),
            Value::Real(r) => Some(r),
            _ => None,
        }
    }

    /// Text rendering following SQLite's text affinity conversion.
    pub fn render(&self) -> String {
        match self {
            Value::Null => "NULL".to_string(),
            Value::Integer(i) => i.to_string(),
            Value::Real(r) => render_real(*r),
            Value::Text(s) => s.clone(),
            Value::Blob { blob } => format!("X'{}'", blob.to_uppercase()),
        }
    }
}

impl From<rusqlite::types::ValueRef<'_>> for Value {
    fn from(v: rusqlite::types::ValueRef<'_>) -> Self {
        use rusqlite::types::ValueRef;
        match v {
            ValueRef::Null => Value::Null,
            ValueRef::Integer(i) => Value::Integer(i),
            ValueRef::Real(r) => Value::Real(r),
            ValueRef::Text(t) => Value::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => Value::blob(b),
        }
    }
}

/// SQLite prints reals with `%!.15g`: 15 significant digits, trailing zeros
/// trimmed, and always at least one fractional digit.
fn render_real(r: f64) -> String {
    if !r.is_finite() {
        return if r.is_nan() { "NaN".into() } else if r > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    if r == 0.0 {
        return "0.0".into();
    }
    let exp = r.abs().log10().floor() as i32;
    if (-4..15).contains(&exp) {
        let decimals = (14 - exp).max(0) as usize;
        let s = format!("{r:.decimals$}");
        trim_fraction(&s)
    } else {
        let s = format!("{r:.14e}");
        let (mantissa, exponent) = s.split_once('e').unwrap_or((&s, "0"));
        let exponent: i32 = exponent.parse().unwrap_or(0);
        let sign = if exponent < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_fraction(mantissa), sign, exponent.abs())
    }
}

fn trim_fraction(s: &str) -> String {
    if !s.contains('.') {
        return format!("{s}.0");
    }
    let t = s.trim_end_matches('0');
    if t.ends_with('.') {
        format!("{t}0")
    } else {
        t.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    Rows,
    Error,
    Prefill,
}

/// What the environment returns after a turn.
///
/// `kind = rows` never carries more rows than the tool's row limit;
/// `kind = error` carries no rows and a non-empty message; `kind = prefill`
/// carries one `CREATE` statement per row under a single `sql` column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub kind: ObservationKind,
    #[serde(default)]
    pub columns: Vec<String>,
    #[serde(default)]
    pub rows: Vec<Vec<Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
    #[serde(default)]
    pub truncated: bool,
}

impl Observation {
    pub fn rows(columns: Vec<String>, rows: Vec<Vec<Value>>, truncated: bool) -> Self {
        Self { kind: ObservationKind::Rows, columns, rows, error_message: None, truncated }
    }

    pub fn error(message: impl Into<String>) -> Self {
        let mut message = message.into();
        if message.trim().is_empty() {
            message = "unknown error".into();
        }
        Self { kind: ObservationKind::Error, columns: Vec::new(), rows: Vec::new(), error_message: Some(message), truncated: false }
    }

    /// Empty acknowledgement returned for Propose turns.
    pub fn ack() -> Self {
        Self::rows(Vec::new(), Vec::new(), false)
    }

    pub fn prefill(create_statements: Vec<String>) -> Self {
        Self {
            kind: ObservationKind::Prefill,
            columns: vec!["sql".into()],
            rows: create_statements.into_iter().map(|s| vec![Value::Text(s)]).collect(),
            error_message: None,
            truncated: false,
        }
    }

    pub fn is_error(&self) -> bool {
        self.kind == ObservationKind::Error
    }

    /// Plain-text form shown to the agent: a ` | `-separated header line,
    /// one line per row, and a marker line when rows were cut off.
    pub fn render(&self) -> String {
        match self.kind {
            ObservationKind::Error => format!("Error: {}", self.error_message.as_deref().unwrap_or("unknown error")),
            ObservationKind::Prefill => {
                let stmts: Vec<String> = self.rows.iter().filter_map(|r| r.first()).map(Value::render).collect();
                if stmts.is_empty() {
                    "-- database has no tables".to_string()
                } else {
                    stmts.join("\n")
                }
            }
            ObservationKind::Rows => {
                if self.columns.is_empty() && self.rows.is_empty() {
                    return "OK".to_string();
                }
                let mut out = self.columns.join(" | ");
                for row in &self.rows {
                    out.push('\n');
                    let cells: Vec<String> = row.iter().map(Value::render).collect();
                    out.push_str(&cells.join(" | "));
                }
                if self.truncated {
                    let _ = write!(out, "\n... (truncated: showing first {} rows)", self.rows.len());
                }
                out
            }
        }
    }
}
