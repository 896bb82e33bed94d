use std::path::Path;
use std::time::{Duration, Instant};

use rusqlite::{Connection, ErrorCode, OpenFlags};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::tokenizer::{Token, Tokenizer};

use super::{DatabaseRegistry, EnvError, DEFAULT_QUERY_TIMEOUT};
use crate::protocol::{Observation, Value};

/// Opens `path` read-only with `query_only` set. The file is never created.
pub fn open_read_only(path: &Path) -> rusqlite::Result<Connection> {
    let flags = OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX | OpenFlags::SQLITE_OPEN_URI;
    let conn = Connection::open_with_flags(path, flags)?;
    conn.pragma_update(None, "query_only", true)?;
    Ok(conn)
}

/// Statement-type inspection done before SQLite ever sees the query.
pub struct StatementGuard;

const REJECTED_LEADING: &[&str] = &[
    "INSERT", "UPDATE", "DELETE", "DROP", "CREATE", "ALTER", "ATTACH", "DETACH", "REPLACE", "VACUUM", "REINDEX",
    "ANALYZE", "BEGIN", "COMMIT", "END", "ROLLBACK", "SAVEPOINT", "RELEASE", "UPSERT", "MERGE", "TRUNCATE",
];

const READ_PRAGMAS: &[&str] = &[
    "table_info",
    "table_xinfo",
    "table_list",
    "index_list",
    "index_info",
    "index_xinfo",
    "foreign_key_list",
    "database_list",
    "collation_list",
];

impl StatementGuard {
    /// `Err(reason)` when the statement could modify the database or the
    /// connection. Unparseable text is let through for SQLite to reject.
    pub fn check(sql: &str) -> Result<(), String> {
        let Ok(tokens) = Tokenizer::new(&SQLiteDialect {}, sql).tokenize() else {
            return Ok(());
        };
        let mut significant = tokens.iter().filter(|t| !matches!(t, Token::Whitespace(_) | Token::LParen));
        let Some(Token::Word(first)) = significant.next() else {
            return Ok(());
        };
        let keyword = first.value.to_ascii_uppercase();
        if REJECTED_LEADING.contains(&keyword.as_str()) {
            return Err(format!("{keyword} statements are not allowed: the database is read-only"));
        }
        if keyword == "PRAGMA" {
            // `PRAGMA [schema.]name[(arg)]`
            let words: Vec<String> = significant
                .filter_map(|t| match t {
                    Token::Word(w) => Some(w.value.to_ascii_lowercase()),
                    _ => None,
                })
                .take(2)
                .collect();
            let is_read = words.iter().any(|w| READ_PRAGMAS.contains(&w.as_str()));
            let assigns = tokens.iter().any(|t| matches!(t, Token::Eq));
            if assigns || !is_read {
                return Err("only read-only PRAGMA introspection is allowed".to_string());
            }
        }
        Ok(())
    }
}

/// Raw result of a query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutput {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    /// More rows existed beyond the limit.
    pub truncated: bool,
}

/// Runs one read-only statement. `limit = None` fetches every row.
/// The error string is what the agent sees.
pub fn run_query(conn: &Connection, sql: &str, limit: Option<usize>, timeout: Duration) -> Result<QueryOutput, String> {
    StatementGuard::check(sql)?;
    if sql.trim().trim_matches(';').trim().is_empty() {
        return Err("empty query".to_string());
    }
    let deadline = Instant::now() + timeout;
    conn.progress_handler(1_000, Some(move || Instant::now() > deadline)).map_err(|e| e.to_string())?;
    let result = fetch(conn, sql, limit).map_err(|e| match e.sqlite_error_code() {
        Some(ErrorCode::OperationInterrupted) => format!("query timed out after {} s", timeout.as_secs_f64()),
        _ => e.to_string(),
    });
    let _ = conn.progress_handler(0, None::<fn() -> bool>);
    result.and_then(|r| r)
}

fn fetch(conn: &Connection, sql: &str, limit: Option<usize>) -> rusqlite::Result<Result<QueryOutput, String>> {
    let mut stmt = conn.prepare(sql)?;
    if !stmt.readonly() {
        return Ok(Err("only read-only statements are allowed".to_string()));
    }
    let columns: Vec<String> = stmt.column_names().into_iter().map(str::to_owned).collect();
    let width = columns.len();
    let mut rows = Vec::new();
    let mut truncated = false;
    let mut cursor = stmt.query([])?;
    while let Some(row) = cursor.next()? {
        if limit.is_some_and(|l| rows.len() >= l) {
            truncated = true;
            break;
        }
        let mut values = Vec::with_capacity(width);
        for i in 0..width {
            values.push(Value::from(row.get_ref(i)?));
        }
        rows.push(values);
    }
    Ok(Ok(QueryOutput { columns, rows, truncated }))
}

/// Executes a tool call on an open connection and renders the observation.
pub fn execute_on(conn: &Connection, sql: &str, row_limit: usize, timeout: Duration) -> Observation {
    match run_query(conn, sql, Some(row_limit), timeout) {
        Ok(out) => Observation::rows(out.columns, out.rows, out.truncated),
        Err(message) => Observation::error(message),
    }
}

/// Executes a tool call against a registered database.
pub fn execute_tool(registry: &DatabaseRegistry, db_id: &str, sql: &str, row_limit: usize) -> Result<Observation, EnvError> {
    let conn = registry.connect(db_id)?;
    Ok(execute_on(&conn, sql, row_limit, DEFAULT_QUERY_TIMEOUT))
}
