use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

/// Tables, per-table columns and optional join pairs. Used for the agent's
/// proposed schema as well as the reference schema extracted from SQL.
///
/// Names are always stored normalized (see [`normalize_name`]) and every key
/// of `columns` is also a member of `tables`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifiedSchema {
    pub tables: BTreeSet<String>,
    pub columns: BTreeMap<String, BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub joins: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemaParseError {
    #[error("schema block is not valid JSON: {0}")]
    Json(String),
    #[error("schema JSON has the wrong shape: {0}")]
    Shape(String),
}

/// Trims whitespace, strips one layer of surrounding quotes, backticks or
/// brackets, and lowercases. SQLite identifiers are case-insensitive.
pub fn normalize_name(raw: &str) -> String {
    let mut s = raw.trim();
    loop {
        let stripped = strip_pair(s);
        if stripped.len() == s.len() {
            break;
        }
        s = stripped.trim();
    }
    s.to_lowercase()
}

fn strip_pair(s: &str) -> &str {
    let pairs = [('"', '"'), ('`', '`'), ('\'', '\''), ('[', ']')];
    for (open, close) in pairs {
        if s.len() >= 2 && s.starts_with(open) && s.ends_with(close) {
            return &s[1..s.len() - 1];
        }
    }
    s
}

/// One matchable element of a schema: a table or a table-qualified column.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SchemaItem {
    Table(String),
    Column(String, String),
}

impl VerifiedSchema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_table(&mut self, table: &str) {
        self.tables.insert(normalize_name(table));
    }

    pub fn insert_column(&mut self, table: &str, column: &str) {
        let table = normalize_name(table);
        let column = normalize_name(column);
        self.tables.insert(table.clone());
        self.columns.entry(table).or_default().insert(column);
    }

    /// Builder used heavily by tests and fixtures.
    pub fn with_columns(mut self, table: &str, columns: &[&str]) -> Self {
        self.insert_table(table);
        for c in columns {
            self.insert_column(table, c);
        }
        self
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn column_count(&self) -> usize {
        self.columns.values().map(BTreeSet::len).sum()
    }

    /// Tables and columns as a flat item set. Joins are not items.
    pub fn items(&self) -> BTreeSet<SchemaItem> {
        let tables = self.tables.iter().cloned().map(SchemaItem::Table);
        let columns = self
            .columns
            .iter()
            .flat_map(|(t, cs)| cs.iter().map(move |c| SchemaItem::Column(t.clone(), c.clone())));
        tables.chain(columns).collect()
    }

    /// Parses the JSON carried by a `<schema>` block:
    /// `{"tables": [..], "columns": {table: [..]}, "joins": [..]}`.
    ///
    /// `joins` is optional; entries may be `"a.x = b.y"` strings, two-element
    /// arrays or objects with two string fields. Unrecognised join entries are
    /// skipped since joins never take part in matching.
    pub fn from_proposal_json(text: &str) -> Result<Self, SchemaParseError> {
        let json: Json = serde_json::from_str(text.trim()).map_err(|e| SchemaParseError::Json(e.to_string()))?;
        let obj = json.as_object().ok_or_else(|| SchemaParseError::Shape("expected a JSON object".into()))?;

        let mut schema = VerifiedSchema::new();
        let tables = obj
            .get("tables")
            .and_then(Json::as_array)
            .ok_or_else(|| SchemaParseError::Shape("`tables` must be an array of strings".into()))?;
        for t in tables {
            let name = t.as_str().ok_or_else(|| SchemaParseError::Shape("`tables` must be an array of strings".into()))?;
            schema.insert_table(name);
        }

        let columns = obj
            .get("columns")
            .and_then(Json::as_object)
            .ok_or_else(|| SchemaParseError::Shape("`columns` must map table names to arrays".into()))?;
        for (table, cols) in columns {
            let cols = cols
                .as_array()
                .ok_or_else(|| SchemaParseError::Shape(format!("columns of `{table}` must be an array")))?;
            let table_norm = normalize_name(table);
            schema.insert_table(&table_norm);
            schema.columns.entry(table_norm.clone()).or_default();
            for c in cols {
                let c = c
                    .as_str()
                    .ok_or_else(|| SchemaParseError::Shape(format!("columns of `{table}` must be strings")))?;
                // `table.col` inside the table's own list is the same column.
                let c = normalize_name(c);
                let c = c.strip_prefix(&format!("{table_norm}.")).map(str::to_owned).unwrap_or(c);
                schema.insert_column(&table_norm, &c);
            }
        }

        match obj.get("joins") {
            None | Some(Json::Null) => {}
            Some(Json::Array(joins)) => schema.joins = joins.iter().filter_map(parse_join).collect(),
            Some(_) => return Err(SchemaParseError::Shape("`joins` must be an array".into())),
        }
        Ok(schema)
    }

    /// Renders the proposal JSON understood by [`Self::from_proposal_json`].
    pub fn to_proposal_json(&self) -> String {
        let joins: Vec<String> = self.joins.iter().map(|(a, b)| format!("{a} = {b}")).collect();
        serde_json::json!({
            "tables": self.tables,
            "columns": self.columns,
            "joins": joins,
        })
        .to_string()
    }
}

fn parse_join(entry: &Json) -> Option<(String, String)> {
    let (a, b) = match entry {
        Json::String(s) => {
            let (a, b) = s.split_once('=')?;
            (a.to_string(), b.to_string())
        }
        Json::Array(items) if items.len() == 2 => (items[0].as_str()?.to_string(), items[1].as_str()?.to_string()),
        Json::Object(map) => {
            let mut vals = map.values().filter_map(Json::as_str);
            (vals.next()?.to_string(), vals.next()?.to_string())
        }
        _ => return None,
    };
    Some((normalize_qualified(&a), normalize_qualified(&b)))
}

fn normalize_qualified(s: &str) -> String {
    s.split('.').map(normalize_name).collect::<Vec<_>>().join(".")
}
