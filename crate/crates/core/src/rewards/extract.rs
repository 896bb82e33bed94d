//! Resolves the tables and columns a query references against a database
//! catalog.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::ControlFlow;

use rusqlite::Connection;
use sqlparser::ast::{
    BinaryOperator, Expr, GroupByExpr, Join, JoinConstraint, JoinOperator, ObjectName, ObjectNamePart, OrderByKind,
    Query, Select, SelectItem, SelectItemQualifiedWildcardKind, SetExpr, Statement, TableFactor, TableWithJoins,
    Visit, Visitor,
};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;

use crate::protocol::{normalize_name, VerifiedSchema};

/// Tables and their columns, lowercase, as SQLite reports them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DbCatalog {
    tables: BTreeMap<String, Vec<String>>,
}

impl DbCatalog {
    /// Reads tables and views (excluding `sqlite_*` internals).
    pub fn load(conn: &Connection) -> rusqlite::Result<Self> {
        let mut names = conn.prepare(
            "SELECT name FROM sqlite_master WHERE type IN ('table', 'view') AND name NOT LIKE 'sqlite_%' ORDER BY name",
        )?;
        let names: Vec<String> = names.query_map([], |r| r.get(0))?.collect::<Result<_, _>>()?;
        let mut cols = conn.prepare("SELECT name FROM pragma_table_info(?1) ORDER BY cid")?;
        let mut tables = BTreeMap::new();
        for name in names {
            let columns: Vec<String> =
                cols.query_map([&name], |r| r.get::<_, String>(0))?.map(|c| c.map(|c| c.to_lowercase())).collect::<Result<_, _>>()?;
            tables.insert(name.to_lowercase(), columns);
        }
        Ok(Self { tables })
    }

    pub fn from_tables<'a>(tables: impl IntoIterator<Item = (&'a str, &'a [&'a str])>) -> Self {
        let tables = tables
            .into_iter()
            .map(|(t, cols)| (t.to_lowercase(), cols.iter().map(|c| c.to_lowercase()).collect()))
            .collect();
        Self { tables }
    }

    pub fn has_table(&self, table: &str) -> bool {
        self.tables.contains_key(table)
    }

    pub fn columns(&self, table: &str) -> Option<&[String]> {
        self.tables.get(table).map(Vec::as_slice)
    }

    pub fn has_column(&self, table: &str, column: &str) -> bool {
        self.columns(table).is_some_and(|cols| cols.iter().any(|c| c == column))
    }

    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExtractError {
    #[error("SQL does not parse: {0}")]
    Parse(String),
    #[error("expected exactly one statement, found {0}")]
    StatementCount(usize),
    #[error("only SELECT queries are supported")]
    NotAQuery,
    #[error("column `{column}` is ambiguous between tables {tables:?}")]
    AmbiguousColumn { column: String, tables: Vec<String> },
}

/// Everything a query references, split into resolvable schema items and
/// names that do not exist in the catalog.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SchemaReferences {
    pub schema: VerifiedSchema,
    pub unknown_tables: BTreeSet<String>,
    /// Bare names, or `qualifier.column` when qualified.
    pub unknown_columns: BTreeSet<String>,
}

impl SchemaReferences {
    pub fn has_unknown(&self) -> bool {
        !self.unknown_tables.is_empty() || !self.unknown_columns.is_empty()
    }
}

/// How to treat a double-quoted identifier that matches no column. SQLite
/// silently reads it as a string literal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuotedFallback {
    /// Follow SQLite: it is a literal, not a reference.
    #[default]
    Literal,
    /// Count it as an unknown column.
    Unknown,
}

pub fn parse_select(sql: &str) -> Result<Query, ExtractError> {
    let mut statements = Parser::parse_sql(&SQLiteDialect {}, sql).map_err(|e| ExtractError::Parse(e.to_string()))?;
    if statements.len() != 1 {
        return Err(ExtractError::StatementCount(statements.len()));
    }
    match statements.remove(0) {
        Statement::Query(q) => Ok(*q),
        _ => Err(ExtractError::NotAQuery),
    }
}

/// The tables and columns `sql` uses, with aliases, CTEs and derived tables
/// resolved to base tables.
pub fn extract_gold_schema(sql: &str, catalog: &DbCatalog) -> Result<VerifiedSchema, ExtractError> {
    Ok(collect_references(sql, catalog, QuotedFallback::Literal)?.schema)
}

pub fn collect_references(
    sql: &str,
    catalog: &DbCatalog,
    quoted: QuotedFallback,
) -> Result<SchemaReferences, ExtractError> {
    let query = parse_select(sql)?;
    let mut resolver = Resolver { catalog, ctes: Vec::new(), scopes: Vec::new(), refs: SchemaReferences::default(), quoted };
    resolver.query(&query)?;
    Ok(resolver.refs)
}

#[derive(Debug, Clone)]
enum Source {
    Base(String),
    /// Derived table or CTE. `None` when its columns are unknown.
    Derived(Option<BTreeSet<String>>),
}

#[derive(Debug, Clone, Default)]
struct Scope {
    bindings: Vec<(String, Source)>,
    aliases: BTreeSet<String>,
    using: BTreeSet<String>,
}

enum IdentRef {
    Bare { name: String, quote: Option<char> },
    Qualified { qualifier: String, column: String },
}

/// Collects identifiers of one expression, stopping at nested queries.
#[derive(Default)]
struct Collector {
    depth: usize,
    idents: Vec<IdentRef>,
    subqueries: Vec<Query>,
}

impl Visitor for Collector {
    type Break = ();

    fn pre_visit_query(&mut self, query: &Query) -> ControlFlow<()> {
        if self.depth == 0 {
            self.subqueries.push(query.clone());
        }
        self.depth += 1;
        ControlFlow::Continue(())
    }

    fn post_visit_query(&mut self, _query: &Query) -> ControlFlow<()> {
        self.depth -= 1;
        ControlFlow::Continue(())
    }

    fn pre_visit_expr(&mut self, expr: &Expr) -> ControlFlow<()> {
        if self.depth > 0 {
            return ControlFlow::Continue(());
        }
        match expr {
            Expr::Identifier(id) => self.idents.push(IdentRef::Bare { name: id.value.clone(), quote: id.quote_style }),
            Expr::CompoundIdentifier(parts) if parts.len() >= 2 => {
                let n = parts.len();
                self.idents.push(IdentRef::Qualified {
                    qualifier: parts[n - 2].value.clone(),
                    column: parts[n - 1].value.clone(),
                });
            }
            _ => {}
        }
        ControlFlow::Continue(())
    }
}

fn is_rowid(name: &str) -> bool {
    matches!(name, "rowid" | "oid" | "_rowid_")
}

fn last_part(name: &ObjectName) -> String {
    match name.0.last() {
        Some(ObjectNamePart::Identifier(id)) => normalize_name(&id.value),
        Some(other) => normalize_name(&other.to_string()),
        None => String::new(),
    }
}

fn output_name(expr: &Expr) -> String {
    match expr {
        Expr::Identifier(id) => normalize_name(&id.value),
        Expr::CompoundIdentifier(parts) => parts.last().map(|p| normalize_name(&p.value)).unwrap_or_default(),
        other => other.to_string().to_lowercase(),
    }
}

fn join_constraint(op: &JoinOperator) -> Option<&JoinConstraint> {
    match op {
        JoinOperator::Join(c)
        | JoinOperator::Inner(c)
        | JoinOperator::Left(c)
        | JoinOperator::LeftOuter(c)
        | JoinOperator::Right(c)
        | JoinOperator::RightOuter(c)
        | JoinOperator::FullOuter(c)
        | JoinOperator::CrossJoin(c)
        | JoinOperator::Semi(c)
        | JoinOperator::LeftSemi(c)
        | JoinOperator::RightSemi(c)
        | JoinOperator::Anti(c)
        | JoinOperator::LeftAnti(c)
        | JoinOperator::RightAnti(c)
        | JoinOperator::StraightJoin(c) => Some(c),
        JoinOperator::AsOf { constraint, .. } => Some(constraint),
        _ => None,
    }
}

struct Resolver<'a> {
    catalog: &'a DbCatalog,
    ctes: Vec<BTreeMap<String, Option<BTreeSet<String>>>>,
    scopes: Vec<Scope>,
    refs: SchemaReferences,
    quoted: QuotedFallback,
}

impl Resolver<'_> {
    fn top(&mut self) -> &mut Scope {
        if self.scopes.is_empty() {
            self.scopes.push(Scope::default());
        }
        self.scopes.last_mut().expect("scope stack is non-empty")
    }

    fn add_column(&mut self, table: &str, column: &str) {
        self.refs.schema.insert_column(table, column);
    }

    /// Returns the output column names of the query.
    fn query(&mut self, q: &Query) -> Result<Vec<String>, ExtractError> {
        let has_with = q.with.is_some();
        if let Some(with) = &q.with {
            self.ctes.push(BTreeMap::new());
            for cte in &with.cte_tables {
                let name = normalize_name(&cte.alias.name.value);
                if with.recursive {
                    let declared: Option<BTreeSet<String>> = (!cte.alias.columns.is_empty())
                        .then(|| cte.alias.columns.iter().map(|c| normalize_name(&c.name.value)).collect());
                    self.ctes.last_mut().expect("frame pushed").insert(name.clone(), declared);
                }
                let mut cols = self.query(&cte.query)?;
                if !cte.alias.columns.is_empty() {
                    cols = cte.alias.columns.iter().map(|c| normalize_name(&c.name.value)).collect();
                }
                self.ctes.last_mut().expect("frame pushed").insert(name, Some(cols.into_iter().collect()));
            }
        }
        let (out, scope) = self.set_expr(&q.body)?;
        if let Some(order_by) = &q.order_by {
            if let OrderByKind::Expressions(exprs) = &order_by.kind {
                let scope = scope.unwrap_or_else(|| Scope { aliases: out.iter().cloned().collect(), ..Scope::default() });
                self.scopes.push(scope);
                let result = exprs.iter().try_for_each(|e| self.expr(&e.expr));
                self.scopes.pop();
                result?;
            }
        }
        if has_with {
            self.ctes.pop();
        }
        Ok(out)
    }

    fn set_expr(&mut self, body: &SetExpr) -> Result<(Vec<String>, Option<Scope>), ExtractError> {
        match body {
            SetExpr::Select(select) => {
                let (out, scope) = self.select(select)?;
                Ok((out, Some(scope)))
            }
            SetExpr::Query(q) => Ok((self.query(q)?, None)),
            SetExpr::SetOperation { left, right, .. } => {
                let (out, _) = self.set_expr(left)?;
                self.set_expr(right)?;
                Ok((out, None))
            }
            SetExpr::Values(values) => {
                let width = values.rows.first().map_or(0, |r| r.content.len());
                for row in &values.rows {
                    for e in &row.content {
                        self.expr(e)?;
                    }
                }
                Ok(((1..=width).map(|i| format!("column{i}")).collect(), None))
            }
            _ => Err(ExtractError::NotAQuery),
        }
    }

    fn select(&mut self, s: &Select) -> Result<(Vec<String>, Scope), ExtractError> {
        self.scopes.push(Scope::default());
        let result = self.select_body(s);
        let scope = self.scopes.pop().expect("pushed above");
        result.map(|out| (out, scope))
    }

    fn select_body(&mut self, s: &Select) -> Result<Vec<String>, ExtractError> {
        for twj in &s.from {
            self.table_with_joins(twj)?;
        }
        let mut out = Vec::new();
        for item in &s.projection {
            match item {
                SelectItem::UnnamedExpr(e) => {
                    self.expr(e)?;
                    out.push(output_name(e));
                }
                SelectItem::ExprWithAlias { expr, alias } => {
                    self.expr(expr)?;
                    let alias = normalize_name(&alias.value);
                    self.top().aliases.insert(alias.clone());
                    out.push(alias);
                }
                SelectItem::ExprWithAliases { expr, aliases } => {
                    self.expr(expr)?;
                    for alias in aliases {
                        let alias = normalize_name(&alias.value);
                        self.top().aliases.insert(alias.clone());
                        out.push(alias);
                    }
                }
                SelectItem::Wildcard(_) => {
                    let sources: Vec<Source> = self.top().bindings.iter().map(|(_, s)| s.clone()).collect();
                    for src in sources {
                        out.extend(self.expand(&src));
                    }
                }
                SelectItem::QualifiedWildcard(kind, _) => match kind {
                    SelectItemQualifiedWildcardKind::ObjectName(name) => {
                        let qualifier = last_part(name);
                        if let Some(src) = self.lookup_binding(&qualifier) {
                            out.extend(self.expand(&src));
                        } else {
                            self.refs.unknown_tables.insert(qualifier);
                        }
                    }
                    SelectItemQualifiedWildcardKind::Expr(e) => self.expr(e)?,
                },
            }
        }
        if let Some(e) = &s.selection {
            self.expr(e)?;
        }
        if let GroupByExpr::Expressions(exprs, _) = &s.group_by {
            for e in exprs {
                self.expr(e)?;
            }
        }
        for e in s.having.iter().chain(s.qualify.iter()).chain(s.prewhere.iter()) {
            self.expr(e)?;
        }
        for e in &s.sort_by {
            self.expr(&e.expr)?;
        }
        Ok(out)
    }

    fn expand(&mut self, src: &Source) -> Vec<String> {
        match src {
            Source::Base(t) => {
                let cols = self.catalog.columns(t).map(<[String]>::to_vec).unwrap_or_default();
                for c in &cols {
                    self.add_column(t, c);
                }
                cols
            }
            Source::Derived(Some(cols)) => cols.iter().cloned().collect(),
            Source::Derived(None) => Vec::new(),
        }
    }

    fn lookup_binding(&self, name: &str) -> Option<Source> {
        self.scopes.iter().rev().find_map(|s| s.bindings.iter().rev().find(|(b, _)| b == name).map(|(_, src)| src.clone()))
    }

    fn lookup_cte(&self, name: &str) -> Option<Option<BTreeSet<String>>> {
        self.ctes.iter().rev().find_map(|frame| frame.get(name).cloned())
    }

    fn table_with_joins(&mut self, twj: &TableWithJoins) -> Result<(), ExtractError> {
        self.table_factor(&twj.relation)?;
        for join in &twj.joins {
            self.join(join)?;
        }
        Ok(())
    }

    fn join(&mut self, join: &Join) -> Result<(), ExtractError> {
        self.table_factor(&join.relation)?;
        match join_constraint(&join.join_operator) {
            Some(JoinConstraint::On(e)) => {
                self.expr(e)?;
                self.record_joins(e);
            }
            Some(JoinConstraint::Using(names)) => {
                for name in names {
                    let column = last_part(name);
                    self.top().using.insert(column.clone());
                    let bases: Vec<String> = self.base_tables_with(&column);
                    if bases.is_empty() && !self.top().bindings.iter().any(|(_, s)| matches!(s, Source::Derived(_))) {
                        self.refs.unknown_columns.insert(column.clone());
                    }
                    for t in bases {
                        self.add_column(&t, &column);
                    }
                }
            }
            Some(JoinConstraint::Natural) => {
                let Some((_, Source::Base(right))) = self.top().bindings.last().cloned() else { return Ok(()) };
                let bindings = &self.top().bindings;
                let left: Vec<String> = bindings[..bindings.len() - 1]
                    .iter()
                    .filter_map(|(_, s)| match s {
                        Source::Base(t) => Some(t.clone()),
                        _ => None,
                    })
                    .collect();
                let columns = self.catalog.columns(&right).map(<[String]>::to_vec).unwrap_or_default();
                for c in columns {
                    let shared: Vec<&String> = left.iter().filter(|t| self.catalog.has_column(t, &c)).collect();
                    if shared.is_empty() {
                        continue;
                    }
                    for t in shared.into_iter().cloned().collect::<Vec<_>>() {
                        self.add_column(&t, &c);
                    }
                    self.add_column(&right, &c);
                    self.top().using.insert(c);
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn base_tables_with(&mut self, column: &str) -> Vec<String> {
        let catalog = self.catalog;
        self.top()
            .bindings
            .iter()
            .filter_map(|(_, s)| match s {
                Source::Base(t) if catalog.has_column(t, column) => Some(t.clone()),
                _ => None,
            })
            .collect()
    }

    fn table_factor(&mut self, factor: &TableFactor) -> Result<(), ExtractError> {
        match factor {
            TableFactor::Table { name, alias, args, .. } => {
                let table = last_part(name);
                let binding = alias.as_ref().map(|a| normalize_name(&a.name.value)).unwrap_or_else(|| table.clone());
                let source = if args.is_some() {
                    Source::Derived(None)
                } else if let Some(cols) = (name.0.len() == 1).then(|| self.lookup_cte(&table)).flatten() {
                    Source::Derived(cols)
                } else if self.catalog.has_table(&table) {
                    self.refs.schema.insert_table(&table);
                    Source::Base(table)
                } else if table.starts_with("sqlite_") || table.starts_with("pragma_") {
                    Source::Derived(None)
                } else {
                    self.refs.unknown_tables.insert(table);
                    Source::Derived(None)
                };
                self.top().bindings.push((binding, source));
            }
            TableFactor::Derived { subquery, alias, .. } => {
                let mut cols = self.query(subquery)?;
                let binding = alias.as_ref().map(|a| normalize_name(&a.name.value)).unwrap_or_default();
                if let Some(a) = alias.as_ref().filter(|a| !a.columns.is_empty()) {
                    cols = a.columns.iter().map(|c| normalize_name(&c.name.value)).collect();
                }
                self.top().bindings.push((binding, Source::Derived(Some(cols.into_iter().collect()))));
            }
            TableFactor::NestedJoin { table_with_joins, .. } => self.table_with_joins(table_with_joins)?,
            _ => self.top().bindings.push((String::new(), Source::Derived(None))),
        }
        Ok(())
    }

    fn expr(&mut self, e: &Expr) -> Result<(), ExtractError> {
        let mut collector = Collector::default();
        let _ = e.visit(&mut collector);
        for ident in collector.idents {
            match ident {
                IdentRef::Bare { name, quote } => self.resolve_bare(&normalize_name(&name), quote)?,
                IdentRef::Qualified { qualifier, column } => {
                    self.resolve_qualified(&normalize_name(&qualifier), &normalize_name(&column))
                }
            }
        }
        for sub in &collector.subqueries {
            self.query(sub)?;
        }
        Ok(())
    }

    fn resolve_bare(&mut self, name: &str, quote: Option<char>) -> Result<(), ExtractError> {
        if is_rowid(name) {
            return Ok(());
        }
        for depth in (0..self.scopes.len()).rev() {
            let scope = &self.scopes[depth];
            let mut bases = BTreeSet::new();
            let mut derived_match = false;
            let mut opaque = false;
            for (_, src) in &scope.bindings {
                match src {
                    Source::Base(t) if self.catalog.has_column(t, name) => {
                        bases.insert(t.clone());
                    }
                    Source::Derived(Some(cols)) if cols.contains(name) => derived_match = true,
                    Source::Derived(None) => opaque = true,
                    _ => {}
                }
            }
            if bases.len() > 1 && !scope.using.contains(name) {
                return Err(ExtractError::AmbiguousColumn { column: name.to_string(), tables: bases.into_iter().collect() });
            }
            if !bases.is_empty() {
                for t in bases {
                    self.add_column(&t, name);
                }
                return Ok(());
            }
            if derived_match || scope.aliases.contains(name) || opaque {
                return Ok(());
            }
        }
        if quote == Some('"') && self.quoted == QuotedFallback::Literal {
            return Ok(());
        }
        self.refs.unknown_columns.insert(name.to_string());
        Ok(())
    }

    fn resolve_qualified(&mut self, qualifier: &str, column: &str) {
        let source = self.lookup_binding(qualifier).or_else(|| {
            // a base table referenced by its own name despite an alias
            self.scopes
                .iter()
                .rev()
                .flat_map(|s| s.bindings.iter())
                .find(|(_, s)| matches!(s, Source::Base(t) if t == qualifier))
                .map(|(_, s)| s.clone())
        });
        match source {
            Some(Source::Base(t)) => {
                if self.catalog.has_column(&t, column) {
                    self.add_column(&t, column);
                } else if !is_rowid(column) {
                    self.refs.unknown_columns.insert(format!("{t}.{column}"));
                }
            }
            Some(Source::Derived(_)) => {}
            None => {
                self.refs.unknown_columns.insert(format!("{qualifier}.{column}"));
            }
        }
    }

    fn qualified_base(&self, e: &Expr) -> Option<String> {
        let Expr::CompoundIdentifier(parts) = e else { return None };
        if parts.len() < 2 {
            return None;
        }
        let n = parts.len();
        let (q, c) = (normalize_name(&parts[n - 2].value), normalize_name(&parts[n - 1].value));
        match self.lookup_binding(&q) {
            Some(Source::Base(t)) if self.catalog.has_column(&t, &c) => Some(format!("{t}.{c}")),
            _ => None,
        }
    }

    fn record_joins(&mut self, e: &Expr) {
        match e {
            Expr::BinaryOp { left, op: BinaryOperator::And, right } => {
                self.record_joins(left);
                self.record_joins(right);
            }
            Expr::BinaryOp { left, op: BinaryOperator::Eq, right } => {
                if let (Some(a), Some(b)) = (self.qualified_base(left), self.qualified_base(right)) {
                    let pair = if a <= b { (a, b) } else { (b, a) };
                    if !self.refs.schema.joins.contains(&pair) {
                        self.refs.schema.joins.push(pair);
                    }
                }
            }
            Expr::Nested(inner) => self.record_joins(inner),
            _ => {}
        }
    }
}
