use std::time::Duration;

use rusqlite::Connection;
use serde::{Deserialize, Serialize};

use super::{execute_on, run_query, DatabaseRegistry, EnvError, DEFAULT_QUERY_TIMEOUT, DEFAULT_ROW_LIMIT};
use crate::protocol::{
    check_transition, parse_turn, render_turn, ActionContent, ActionKind, Observation, ProtocolVariant, TerminalReason,
    Trajectory, Turn,
};

const PREFILL_SQL: &str =
    "SELECT sql FROM sqlite_master WHERE type = 'table' AND sql IS NOT NULL AND name NOT LIKE 'sqlite_%' ORDER BY rowid";

const FORMAT_ERROR: &str = "format error: each response needs exactly one <think> block, exactly one <action> block \
naming explore_schema, propose_schema, generate_sql or confirm_answer, and that action's content tag \
(<tool_call> with an execute_sql_query call, <schema> with the schema JSON, or <answer> with the SQL)";

/// Everything needed to start a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInit {
    #[serde(default)]
    pub question_id: String,
    pub db_id: String,
    #[serde(default)]
    pub question: String,
    #[serde(default)]
    pub external_knowledge: String,
    #[serde(default)]
    pub variant: ProtocolVariant,
    #[serde(default = "default_max_turns")]
    pub max_turns: usize,
    #[serde(default)]
    pub prefill: bool,
    #[serde(default)]
    pub sample_index: usize,
}

fn default_max_turns() -> usize {
    15
}

impl SessionInit {
    pub fn new(question_id: &str, db_id: &str, question: &str) -> Self {
        Self {
            question_id: question_id.to_string(),
            db_id: db_id.to_string(),
            question: question.to_string(),
            external_knowledge: String::new(),
            variant: ProtocolVariant::Epgc,
            max_turns: default_max_turns(),
            prefill: false,
            sample_index: 0,
        }
    }
}

/// Result of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observation: Option<Observation>,
    pub terminal: bool,
    pub terminal_reason: Option<TerminalReason>,
}

/// One agent interaction against one database. Owns its read-only
/// connection; steps are strictly sequential.
pub struct Session {
    id: String,
    init: SessionInit,
    turns_used: usize,
    conn: Connection,
    trajectory: Trajectory,
    row_limit: usize,
    timeout: Duration,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("init", &self.init)
            .field("turns_used", &self.turns_used)
            .finish_non_exhaustive()
    }
}

impl Session {
    pub fn open(registry: &DatabaseRegistry, id: impl Into<String>, init: SessionInit) -> Result<Self, EnvError> {
        if init.max_turns == 0 {
            return Err(EnvError::InvalidSession("max_turns must be positive".into()));
        }
        let conn = registry.connect(&init.db_id)?;
        let mut trajectory = Trajectory::new(&init.question_id, &init.db_id, &init.question, &init.external_knowledge);
        trajectory.sample_index = init.sample_index;
        let mut session = Self {
            id: id.into(),
            init,
            turns_used: 0,
            conn,
            trajectory,
            row_limit: DEFAULT_ROW_LIMIT,
            timeout: DEFAULT_QUERY_TIMEOUT,
        };
        if session.init.prefill {
            let turn = prefill_turn(&session.conn, &session.init.db_id, session.timeout)?;
            session.trajectory.push_turn(turn);
            session.turns_used = 1;
            session.check_budget();
        }
        Ok(session)
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn init(&self) -> &SessionInit {
        &self.init
    }

    pub fn turns_used(&self) -> usize {
        self.turns_used
    }

    pub fn is_terminal(&self) -> bool {
        self.trajectory.is_terminal()
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn into_trajectory(self) -> Trajectory {
        self.trajectory
    }

    /// Observation of the synthetic prefill turn, when prefill is on.
    pub fn initial_observation(&self) -> Option<&Observation> {
        self.trajectory.turns.first().filter(|t| t.synthetic).and_then(|t| t.observation.as_ref())
    }

    /// Parses raw agent text and steps. Text without a locatable action
    /// ends the session with `parse_failure`.
    pub fn step_raw(&mut self, raw_text: &str, token_count: Option<u32>) -> Result<StepOutcome, EnvError> {
        if self.is_terminal() {
            return Err(EnvError::SessionTerminal);
        }
        match parse_turn(raw_text) {
            Ok(mut turn) => {
                turn.token_count = token_count;
                self.step(turn)
            }
            Err(e) => {
                self.trajectory.terminal_reason = Some(TerminalReason::ParseFailure);
                Ok(StepOutcome {
                    observation: Some(Observation::error(format!("parse error: {e}"))),
                    terminal: true,
                    terminal_reason: Some(TerminalReason::ParseFailure),
                })
            }
        }
    }

    pub fn step(&mut self, mut turn: Turn) -> Result<StepOutcome, EnvError> {
        if self.is_terminal() {
            return Err(EnvError::SessionTerminal);
        }
        let allowed = check_transition(self.init.variant, turn.action, &self.trajectory.turns);
        let observation = if !turn.format_ok {
            Some(Observation::error(FORMAT_ERROR))
        } else if !allowed {
            Some(Observation::error(format!(
                "protocol error: {} is not available under the {} protocol",
                turn.action, self.init.variant
            )))
        } else {
            match (&turn.action, &turn.content) {
                (ActionKind::Explore | ActionKind::Generate, ActionContent::ToolCall { sql, .. }) => {
                    Some(execute_on(&self.conn, sql, self.row_limit, self.timeout))
                }
                (ActionKind::Propose, _) => Some(Observation::ack()),
                (ActionKind::Confirm, _) => None,
                _ => Some(Observation::error(FORMAT_ERROR)),
            }
        };
        turn.observation = observation.clone();
        let confirmed = turn.format_ok && allowed && turn.action == ActionKind::Confirm;
        let final_sql = confirmed.then(|| turn.content.sql().unwrap_or_default().to_string());
        self.trajectory.push_turn(turn);
        self.turns_used += 1;

        if let Some(sql) = final_sql {
            self.trajectory.final_sql = Some(sql);
            self.trajectory.terminal_reason = Some(TerminalReason::Confirmed);
        } else {
            self.check_budget();
        }
        Ok(StepOutcome { observation, terminal: self.is_terminal(), terminal_reason: self.trajectory.terminal_reason })
    }

    fn check_budget(&mut self) {
        if !self.is_terminal() && self.turns_used >= self.init.max_turns {
            self.trajectory.terminal_reason = Some(TerminalReason::MaxTurns);
        }
    }
}

fn prefill_turn(conn: &Connection, db_id: &str, timeout: Duration) -> Result<Turn, EnvError> {
    let out = run_query(conn, PREFILL_SQL, None, timeout)
        .map_err(|message| EnvError::Open { db_id: db_id.to_string(), path: String::new(), message })?;
    let statements = out.rows.into_iter().filter_map(|r| r.into_iter().next()).map(|v| v.render()).collect();
    let content = ActionContent::ToolCall { db_id: db_id.to_string(), sql: PREFILL_SQL.to_string() };
    let think = "Schema prefill: the full database schema is provided by the environment.";
    let raw_text = render_turn(think, ActionKind::Explore, &content);
    Ok(Turn {
        index: 0,
        think_text: think.to_string(),
        action: ActionKind::Explore,
        content,
        char_count: raw_text.chars().count(),
        raw_text,
        observation: Some(Observation::prefill(statements)),
        format_ok: true,
        token_count: None,
        synthetic: true,
    })
}

/// Synthetic Explore turn whose observation lists every table's `CREATE`
/// statement. Not truncated.
pub fn render_prefill_turn(registry: &DatabaseRegistry, db_id: &str) -> Result<Turn, EnvError> {
    let conn = registry.connect(db_id)?;
    prefill_turn(&conn, db_id, DEFAULT_QUERY_TIMEOUT)
}
