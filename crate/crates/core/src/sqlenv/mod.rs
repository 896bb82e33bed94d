//! SQLite hosting: database registry, read-only query execution, sessions
//! with turn budgets, and the schema-prefill turn.

mod exec;
mod registry;
mod session;

use std::time::Duration;

pub use exec::{execute_on, execute_tool, open_read_only, run_query, QueryOutput, StatementGuard};
pub use registry::{DatabaseRegistry, DB_MANIFEST_FILE};
pub use session::{render_prefill_turn, Session, SessionInit, StepOutcome};

/// Observations never show more rows than this.
pub const DEFAULT_ROW_LIMIT: usize = 30;
/// Queries running longer than this are interrupted and reported as errors.
pub const DEFAULT_QUERY_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("unknown database `{0}`")]
    UnknownDatabase(String),
    #[error("session is already terminal")]
    SessionTerminal,
    #[error("invalid session: {0}")]
    InvalidSession(String),
    #[error("database `{db_id}` at {path}: {message}")]
    Open { db_id: String, path: String, message: String },
    #[error("registry: {0}")]
    Registry(String),
}
