//! Execution, format and schema rewards for finished trajectories.

mod equivalence;
mod extract;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rusqlite::Connection;
use serde::{Deserialize, Serialize};

pub use equivalence::{
    has_top_level_order_by, results_equivalent, results_equivalent_with, ExecStatus, ExecutionResult, FLOAT_TOLERANCE,
};
pub use extract::{
    collect_references, extract_gold_schema, parse_select, DbCatalog, ExtractError, QuotedFallback, SchemaReferences,
};

use crate::protocol::{extract_proposed_schema, full_adherence_under, ProtocolVariant, SchemaItem, Trajectory, VerifiedSchema};
use crate::sqlenv::{run_query, DatabaseRegistry, EnvError, DEFAULT_QUERY_TIMEOUT};

pub const EXEC_CORRECT: f64 = 1.0;
pub const EXEC_EXECUTABLE: f64 = 0.2;
pub const EXEC_FAILED: f64 = 0.0;
pub const FORMAT_BONUS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Density {
    #[default]
    Sparse,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    #[default]
    Coupled,
    Uncoupled,
}

/// What counts as a match in the sparse density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparseCriterion {
    /// Every reference item is proposed; extra items are free.
    #[default]
    Recall,
    /// Proposed and reference item sets are identical.
    Equality,
}

/// Schema reward variant, written `sparse-coupled`, `dense-uncoupled`, etc.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SchemaRewardMode {
    pub density: Density,
    pub coupling: Coupling,
}

impl SchemaRewardMode {
    pub const ALL: [SchemaRewardMode; 4] = [
        Self { density: Density::Sparse, coupling: Coupling::Coupled },
        Self { density: Density::Sparse, coupling: Coupling::Uncoupled },
        Self { density: Density::Dense, coupling: Coupling::Coupled },
        Self { density: Density::Dense, coupling: Coupling::Uncoupled },
    ];

    pub fn new(density: Density, coupling: Coupling) -> Self {
        Self { density, coupling }
    }
}

impl fmt::Display for SchemaRewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = match self.density {
            Density::Sparse => "sparse",
            Density::Dense => "dense",
        };
        let c = match self.coupling {
            Coupling::Coupled => "coupled",
            Coupling::Uncoupled => "uncoupled",
        };
        write!(f, "{d}-{c}")
    }
}

impl FromStr for SchemaRewardMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        let (d, c) = lower.split_once('-').ok_or_else(|| format!("bad schema mode `{s}`"))?;
        let density = match d {
            "sparse" => Density::Sparse,
            "dense" => Density::Dense,
            _ => return Err(format!("bad schema density `{d}` (sparse or dense)")),
        };
        let coupling = match c {
            "coupled" => Coupling::Coupled,
            "uncoupled" => Coupling::Uncoupled,
            _ => return Err(format!("bad schema coupling `{c}` (coupled or uncoupled)")),
        };
        Ok(Self { density, coupling })
    }
}

impl TryFrom<String> for SchemaRewardMode {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SchemaRewardMode> for String {
    fn from(m: SchemaRewardMode) -> String {
        m.to_string()
    }
}

/// The three reward components of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBundle {
    pub r_exec: f64,
    pub r_fmt: f64,
    pub r_schema: f64,
    pub mode: SchemaRewardMode,
}

impl RewardBundle {
    /// Reward of the full track.
    pub fn full(&self) -> f64 {
        self.r_exec + self.r_fmt
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("reference SQL fails on `{db_id}`: {message}")]
    GoldExecution { db_id: String, message: String },
    #[error("reference SQL for `{db_id}`: {source}")]
    Extract { db_id: String, source: ExtractError },
    #[error("reading catalog of `{db_id}`: {message}")]
    Catalog { db_id: String, message: String },
}

/// Executes `sql` without row truncation.
pub fn exec_result_on(conn: &Connection, sql: &str, timeout: Duration) -> ExecutionResult {
    let ordered = has_top_level_order_by(sql);
    match run_query(conn, sql, None, timeout) {
        Ok(out) => ExecutionResult::from_rows(out.columns, out.rows, ordered),
        Err(message) => ExecutionResult::error(message, ordered),
    }
}

pub fn exec_result(registry: &DatabaseRegistry, db_id: &str, sql: &str) -> Result<ExecutionResult, RewardError> {
    let conn = registry.connect(db_id)?;
    Ok(exec_result_on(&conn, sql, DEFAULT_QUERY_TIMEOUT))
}

/// Execution reward from already computed results. A missing prediction
/// scores like an error. Two empty results are equivalent.
pub fn reward_exec(pred: Option<&ExecutionResult>, gold: &ExecutionResult) -> f64 {
    match pred {
        Some(p) if p.is_executable() => {
            if results_equivalent(gold, p) {
                EXEC_CORRECT
            } else {
                EXEC_EXECUTABLE
            }
        }
        _ => EXEC_FAILED,
    }
}

pub fn reward_fmt(trajectory: &Trajectory) -> f64 {
    reward_fmt_under(ProtocolVariant::Epgc, trajectory)
}

/// Format reward when the rollout ran under a reduced protocol.
pub fn reward_fmt_under(variant: ProtocolVariant, trajectory: &Trajectory) -> f64 {
    if full_adherence_under(variant, trajectory) {
        FORMAT_BONUS
    } else {
        0.0
    }
}

/// Overlap between a proposed and a reference schema. Joins are ignored.
pub fn f_match(proposed: &VerifiedSchema, gold: &VerifiedSchema, density: Density) -> f64 {
    f_match_with(proposed, gold, density, SparseCriterion::Recall)
}

pub fn f_match_with(proposed: &VerifiedSchema, gold: &VerifiedSchema, density: Density, criterion: SparseCriterion) -> f64 {
    let p: std::collections::BTreeSet<SchemaItem> = proposed.items();
    let g = gold.items();
    let full_recall = g.is_subset(&p);
    match density {
        Density::Sparse => {
            let hit = match criterion {
                SparseCriterion::Recall => full_recall,
                SparseCriterion::Equality => p == g,
            };
            if hit {
                1.0
            } else {
                0.0
            }
        }
        Density::Dense => {
            if !full_recall {
                0.0
            } else if p.is_empty() {
                // both empty
                1.0
            } else {
                g.len() as f64 / p.len() as f64
            }
        }
    }
}

/// Schema reward of the last proposal. No proposal scores 0.
pub fn reward_schema(trajectory: &Trajectory, gold: &VerifiedSchema, mode: SchemaRewardMode, r_exec: f64) -> f64 {
    reward_schema_with(trajectory, gold, mode, r_exec, SparseCriterion::Recall)
}

pub fn reward_schema_with(
    trajectory: &Trajectory,
    gold: &VerifiedSchema,
    mode: SchemaRewardMode,
    r_exec: f64,
    criterion: SparseCriterion,
) -> f64 {
    let Some(proposed) = extract_proposed_schema(trajectory) else { return 0.0 };
    if mode.coupling == Coupling::Coupled && r_exec != EXEC_CORRECT {
        return 0.0;
    }
    f_match_with(&proposed, gold, mode.density, criterion)
}

/// Reference answer for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldReference {
    pub db_id: String,
    pub sql: String,
    /// Overrides the schema extracted from `sql`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<VerifiedSchema>,
}

/// Output of [`Scorer::score_detailed`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub rewards: RewardBundle,
    /// Untruncated result of the final SQL, when there is one.
    pub result: Option<ExecutionResult>,
    pub gold_result: Arc<ExecutionResult>,
}

/// Scores trajectories against reference SQL, caching reference results,
/// reference schemas and catalogs. Safe to share across worker threads.
#[derive(Debug)]
pub struct Scorer {
    registry: DatabaseRegistry,
    mode: SchemaRewardMode,
    variant: ProtocolVariant,
    criterion: SparseCriterion,
    timeout: Duration,
    gold_results: Mutex<HashMap<(String, String), Arc<ExecutionResult>>>,
    gold_schemas: Mutex<HashMap<(String, String), Arc<VerifiedSchema>>>,
    catalogs: Mutex<HashMap<String, Arc<DbCatalog>>>,
}

impl Scorer {
    pub fn new(registry: DatabaseRegistry, mode: SchemaRewardMode) -> Self {
        Self {
            registry,
            mode,
            variant: ProtocolVariant::Epgc,
            criterion: SparseCriterion::Recall,
            timeout: DEFAULT_QUERY_TIMEOUT,
            gold_results: Mutex::default(),
            gold_schemas: Mutex::default(),
            catalogs: Mutex::default(),
        }
    }

    /// Format reward requires the actions of `variant` instead of all four.
    pub fn with_variant(mut self, variant: ProtocolVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_sparse_criterion(mut self, criterion: SparseCriterion) -> Self {
        self.criterion = criterion;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn registry(&self) -> &DatabaseRegistry {
        &self.registry
    }

    pub fn mode(&self) -> SchemaRewardMode {
        self.mode
    }

    pub fn catalog(&self, db_id: &str) -> Result<Arc<DbCatalog>, RewardError> {
        if let Some(c) = self.catalogs.lock().expect("catalog cache poisoned").get(db_id) {
            return Ok(c.clone());
        }
        let conn = self.registry.connect(db_id)?;
        let catalog = DbCatalog::load(&conn)
            .map_err(|e| RewardError::Catalog { db_id: db_id.to_string(), message: e.to_string() })?;
        let catalog = Arc::new(catalog);
        self.catalogs.lock().expect("catalog cache poisoned").insert(db_id.to_string(), catalog.clone());
        Ok(catalog)
    }

    /// Executes `sql` without truncation on a fresh connection.
    pub fn execute(&self, db_id: &str, sql: &str) -> Result<ExecutionResult, RewardError> {
        let conn = self.registry.connect(db_id)?;
        Ok(exec_result_on(&conn, sql, self.timeout))
    }

    /// Result of the reference SQL. A failing reference is an error.
    pub fn gold_result(&self, db_id: &str, gold_sql: &str) -> Result<Arc<ExecutionResult>, RewardError> {
        let key = (db_id.to_string(), gold_sql.to_string());
        if let Some(r) = self.gold_results.lock().expect("gold cache poisoned").get(&key) {
            return Ok(r.clone());
        }
        let result = self.execute(db_id, gold_sql)?;
        if !result.is_executable() {
            return Err(RewardError::GoldExecution {
                db_id: db_id.to_string(),
                message: result.error.unwrap_or_default(),
            });
        }
        let result = Arc::new(result);
        self.gold_results.lock().expect("gold cache poisoned").insert(key, result.clone());
        Ok(result)
    }

    pub fn gold_schema(&self, gold: &GoldReference) -> Result<Arc<VerifiedSchema>, RewardError> {
        if let Some(s) = &gold.schema {
            return Ok(Arc::new(s.clone()));
        }
        let key = (gold.db_id.clone(), gold.sql.clone());
        if let Some(s) = self.gold_schemas.lock().expect("schema cache poisoned").get(&key) {
            return Ok(s.clone());
        }
        let catalog = self.catalog(&gold.db_id)?;
        let schema = extract_gold_schema(&gold.sql, &catalog)
            .map_err(|source| RewardError::Extract { db_id: gold.db_id.clone(), source })?;
        let schema = Arc::new(schema);
        self.gold_schemas.lock().expect("schema cache poisoned").insert(key, schema.clone());
        Ok(schema)
    }

    /// Execution reward of a predicted query. `None` scores 0.
    pub fn reward_exec(&self, pred_sql: Option<&str>, gold: &GoldReference) -> Result<f64, RewardError> {
        let gold_result = self.gold_result(&gold.db_id, &gold.sql)?;
        let pred = match pred_sql {
            Some(sql) => Some(self.execute(&gold.db_id, sql)?),
            None => None,
        };
        Ok(reward_exec(pred.as_ref(), &gold_result))
    }

    pub fn score(&self, trajectory: &Trajectory, gold: &GoldReference) -> Result<RewardBundle, RewardError> {
        Ok(self.score_detailed(trajectory, gold, self.mode)?.rewards)
    }

    pub fn score_with_mode(
        &self,
        trajectory: &Trajectory,
        gold: &GoldReference,
        mode: SchemaRewardMode,
    ) -> Result<RewardBundle, RewardError> {
        Ok(self.score_detailed(trajectory, gold, mode)?.rewards)
    }

    /// Rewards together with the full result of the final SQL.
    pub fn score_detailed(
        &self,
        trajectory: &Trajectory,
        gold: &GoldReference,
        mode: SchemaRewardMode,
    ) -> Result<Scored, RewardError> {
        let gold_result = self.gold_result(&gold.db_id, &gold.sql)?;
        let result = match trajectory.final_sql.as_deref() {
            Some(sql) => Some(self.execute(&gold.db_id, sql)?),
            None => None,
        };
        let r_exec = reward_exec(result.as_ref(), &gold_result);
        let r_fmt = reward_fmt_under(self.variant, trajectory);
        let r_schema = if extract_proposed_schema(trajectory).is_some() {
            let gold_schema = self.gold_schema(gold)?;
            reward_schema_with(trajectory, &gold_schema, mode, r_exec, self.criterion)
        } else {
            0.0
        };
        Ok(Scored { rewards: RewardBundle { r_exec, r_fmt, r_schema, mode }, result, gold_result })
    }
}
