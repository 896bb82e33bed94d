use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::tokenizer::{Token, Tokenizer};

use crate::protocol::Value;

/// Absolute tolerance for comparing floating point cells.
pub const FLOAT_TOLERANCE: f64 = 1e-6;

/// Above this many rows the quadratic matching fallback is skipped.
const MATCHING_FALLBACK_LIMIT: usize = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    Error,
    Empty,
}

/// Full (untruncated) result of executing a query for scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub status: ExecStatus,
    #[serde(default)]
    pub columns: Vec<String>,
    #[serde(default)]
    pub rows: Vec<Vec<Value>>,
    /// The query has a top-level `ORDER BY`.
    #[serde(default)]
    pub ordered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ExecutionResult {
    pub fn error(message: impl Into<String>, ordered: bool) -> Self {
        Self { status: ExecStatus::Error, columns: Vec::new(), rows: Vec::new(), ordered, error: Some(message.into()) }
    }

    pub fn from_rows(columns: Vec<String>, rows: Vec<Vec<Value>>, ordered: bool) -> Self {
        let status = if rows.is_empty() { ExecStatus::Empty } else { ExecStatus::Ok };
        Self { status, columns, rows, ordered, error: None }
    }

    /// Executed successfully, with or without rows.
    pub fn is_executable(&self) -> bool {
        self.status != ExecStatus::Error
    }
}

/// True when `sql` has an `ORDER BY` outside any parentheses.
pub fn has_top_level_order_by(sql: &str) -> bool {
    let Ok(tokens) = Tokenizer::new(&SQLiteDialect {}, sql).tokenize() else {
        return false;
    };
    let mut depth = 0i32;
    let mut prev_order = false;
    for tok in tokens.iter().filter(|t| !matches!(t, Token::Whitespace(_))) {
        match tok {
            Token::LParen => depth += 1,
            Token::RParen => depth -= 1,
            Token::Word(w) if depth == 0 && w.quote_style.is_none() => {
                let kw = w.value.to_ascii_uppercase();
                if prev_order && kw == "BY" {
                    return true;
                }
                prev_order = kw == "ORDER";
                continue;
            }
            _ => {}
        }
        prev_order = false;
    }
    false
}

fn cell_eq(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Null, Value::Null) => true,
        (Value::Integer(x), Value::Integer(y)) => x == y,
        (Value::Integer(_) | Value::Real(_), Value::Integer(_) | Value::Real(_)) => {
            let (x, y) = (a.as_f64().unwrap_or(f64::NAN), b.as_f64().unwrap_or(f64::NAN));
            (x - y).abs() <= FLOAT_TOLERANCE
        }
        (Value::Text(x), Value::Text(y)) => x == y,
        (Value::Blob { blob: x }, Value::Blob { blob: y }) => x == y,
        _ => false,
    }
}

fn row_eq(a: &[Value], b: &[Value]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| cell_eq(x, y))
}

fn rank(v: &Value) -> u8 {
    match v {
        Value::Null => 0,
        Value::Integer(_) | Value::Real(_) => 1,
        Value::Text(_) => 2,
        Value::Blob { .. } => 3,
    }
}

fn cell_cmp(a: &Value, b: &Value) -> Ordering {
    match (a, b) {
        (Value::Integer(x), Value::Integer(y)) => x.cmp(y),
        (Value::Integer(_) | Value::Real(_), Value::Integer(_) | Value::Real(_)) => {
            a.as_f64().unwrap_or(0.0).total_cmp(&b.as_f64().unwrap_or(0.0))
        }
        (Value::Text(x), Value::Text(y)) => x.cmp(y),
        (Value::Blob { blob: x }, Value::Blob { blob: y }) => x.cmp(y),
        _ => rank(a).cmp(&rank(b)),
    }
}

fn row_cmp(a: &[Value], b: &[Value]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| cell_cmp(x, y)).find(|o| o.is_ne()).unwrap_or_else(|| a.len().cmp(&b.len()))
}

fn multiset_eq(a: &[Vec<Value>], b: &[Vec<Value>]) -> bool {
    let mut sa: Vec<&Vec<Value>> = a.iter().collect();
    let mut sb: Vec<&Vec<Value>> = b.iter().collect();
    sa.sort_by(|x, y| row_cmp(x, y));
    sb.sort_by(|x, y| row_cmp(x, y));
    if sa.iter().zip(&sb).all(|(x, y)| row_eq(x, y)) {
        return true;
    }
    // Tolerant equality is not transitive with the sort order, so values that
    // differ only below the tolerance can sort apart. Fall back to matching.
    if a.len() > MATCHING_FALLBACK_LIMIT {
        return false;
    }
    let mut used = vec![false; b.len()];
    a.iter().all(|row| match (0..b.len()).find(|&j| !used[j] && row_eq(row, &b[j])) {
        Some(j) => {
            used[j] = true;
            true
        }
        None => false,
    })
}

/// Compares a candidate result against a reference result. Both must have
/// executed; column names are ignored but arity must match. Row order only
/// matters when the reference query has a top-level `ORDER BY`.
pub fn results_equivalent(reference: &ExecutionResult, candidate: &ExecutionResult) -> bool {
    results_equivalent_with(reference, candidate, reference.ordered)
}

/// [`results_equivalent`] with the ordering mode given explicitly.
pub fn results_equivalent_with(a: &ExecutionResult, b: &ExecutionResult, ordered: bool) -> bool {
    if !a.is_executable() || !b.is_executable() {
        return false;
    }
    if a.columns.len() != b.columns.len() || a.rows.len() != b.rows.len() {
        return false;
    }
    if ordered {
        a.rows.iter().zip(&b.rows).all(|(x, y)| row_eq(x, y))
    } else {
        multiset_eq(&a.rows, &b.rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn res(rows: Vec<Vec<Value>>, ordered: bool) -> ExecutionResult {
        let width = rows.first().map_or(1, Vec::len);
        ExecutionResult::from_rows((0..width).map(|i| format!("c{i}")).collect(), rows, ordered)
    }

    fn ints(xs: &[i64]) -> Vec<Vec<Value>> {
        xs.iter().map(|&x| vec![Value::Integer(x)]).collect()
    }

    #[test]
    fn order_by_detection() {
        assert!(has_top_level_order_by("SELECT a FROM t ORDER BY a"));
        assert!(has_top_level_order_by("select a from t order\n by a desc limit 1"));
        assert!(!has_top_level_order_by("SELECT a FROM (SELECT a FROM t ORDER BY a)"));
        assert!(!has_top_level_order_by("SELECT 'order by' FROM t"));
        assert!(!has_top_level_order_by("SELECT \"order\" FROM t"));
        assert!(!has_top_level_order_by("SELECT count(*) OVER (ORDER BY a) FROM t"));
        assert!(has_top_level_order_by("WITH c AS (SELECT 1 AS x) SELECT x FROM c ORDER BY x"));
    }

    #[test]
    fn unordered_comparison_ignores_row_order() {
        assert!(results_equivalent(&res(ints(&[1, 2]), false), &res(ints(&[2, 1]), false)));
        assert!(!results_equivalent(&res(ints(&[1, 2]), true), &res(ints(&[2, 1]), false)));
        assert!(results_equivalent(&res(ints(&[1, 2]), true), &res(ints(&[1, 2]), false)));
    }

    #[test]
    fn multisets_respect_multiplicity() {
        assert!(!results_equivalent(&res(ints(&[1, 1, 2]), false), &res(ints(&[1, 2, 2]), false)));
    }

    #[test]
    fn numeric_coercion_and_tolerance() {
        let a = res(vec![vec![Value::Integer(1)]], false);
        let b = res(vec![vec![Value::Real(1.0)]], false);
        let c = res(vec![vec![Value::Real(1.0 + 5e-7)]], false);
        let d = res(vec![vec![Value::Real(1.0 + 5e-6)]], false);
        assert!(results_equivalent(&a, &b));
        assert!(results_equivalent(&b, &c));
        assert!(!results_equivalent(&b, &d));
        let text = res(vec![vec![Value::Text("1".into())]], false);
        assert!(!results_equivalent(&a, &text));
    }

    #[test]
    fn nulls_only_match_nulls() {
        let n = res(vec![vec![Value::Null]], false);
        let z = res(vec![vec![Value::Integer(0)]], false);
        assert!(results_equivalent(&n, &n.clone()));
        assert!(!results_equivalent(&n, &z));
    }

    #[test]
    fn arity_and_errors() {
        let one = ExecutionResult::from_rows(vec!["a".into()], vec![], false);
        let two = ExecutionResult::from_rows(vec!["a".into(), "b".into()], vec![], false);
        assert!(results_equivalent(&one, &one.clone()));
        assert!(!results_equivalent(&one, &two));
        let err = ExecutionResult::error("boom", false);
        assert!(!results_equivalent(&err, &err.clone()));
    }

    #[test]
    fn tolerance_survives_sort_order_disagreement() {
        // (1.0000004, "b") sorts after (1.0, "z") but matches (1.0, "b")
        let a = res(vec![vec![Value::Real(1.0), Value::Text("z".into())], vec![Value::Real(1.0000004), Value::Text("b".into())]], false);
        let b = res(vec![vec![Value::Real(1.0000002), Value::Text("z".into())], vec![Value::Real(1.0), Value::Text("b".into())]], false);
        assert!(results_equivalent(&a, &b));
    }
}
