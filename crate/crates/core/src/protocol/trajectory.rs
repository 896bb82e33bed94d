use serde::{Deserialize, Serialize};

use super::{parse_turn, ActionContent, ActionKind, Observation, ObservationKind, VerifiedSchema};

/// One agent emission together with the environment's reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub think_text: String,
    pub action: ActionKind,
    pub content: ActionContent,
    pub raw_text: String,
    pub observation: Option<Observation>,
    pub format_ok: bool,
    pub char_count: usize,
    #[serde(default)]
    pub token_count: Option<u32>,
    /// Environment-generated turn (schema prefill); never agent output.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub synthetic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    Confirmed,
    MaxTurns,
    ParseFailure,
}

/// Wall-clock split of a rollout.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub policy_ms: f64,
    pub env_ms: f64,
}

impl Latency {
    pub fn total_s(&self) -> f64 {
        (self.policy_ms + self.env_ms) / 1000.0
    }
}

/// A full interaction for one question: the unit of scoring, advantage
/// computation and evaluation. Serialized one object per JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub question_id: String,
    pub db_id: String,
    pub question: String,
    #[serde(default)]
    pub external_knowledge: String,
    /// Position within the question's sample group.
    #[serde(default)]
    pub sample_index: usize,
    pub turns: Vec<Turn>,
    pub propose_step: Option<usize>,
    pub final_sql: Option<String>,
    pub terminal_reason: Option<TerminalReason>,
    /// Schema committed at `propose_step`.
    #[serde(default)]
    pub verified_schema: VerifiedSchema,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<Latency>,
}

impl Trajectory {
    pub fn new(question_id: &str, db_id: &str, question: &str, external_knowledge: &str) -> Self {
        Self {
            question_id: question_id.to_string(),
            db_id: db_id.to_string(),
            question: question.to_string(),
            external_knowledge: external_knowledge.to_string(),
            sample_index: 0,
            turns: Vec::new(),
            propose_step: None,
            final_sql: None,
            terminal_reason: None,
            verified_schema: VerifiedSchema::default(),
            latency: None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal_reason.is_some()
    }

    /// Index of the last Propose turn, recomputed from the turns.
    pub fn last_propose_index(&self) -> Option<usize> {
        self.turns.iter().rposition(|t| t.action == ActionKind::Propose).map(|p| self.turns[p].index)
    }

    /// Agent-generated turns (excludes synthetic prefill).
    pub fn agent_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| !t.synthetic)
    }

    /// Explore and Generate turns issued by the agent.
    pub fn tool_call_count(&self) -> usize {
        self.agent_turns().filter(|t| t.action.is_tool_call()).count()
    }

    /// Appends a turn, assigning its index and keeping `propose_step`,
    /// `verified_schema` and `final_sql` in sync.
    pub fn push_turn(&mut self, mut turn: Turn) -> &Turn {
        turn.index = self.turns.len();
        if turn.action == ActionKind::Propose {
            self.propose_step = Some(turn.index);
            self.verified_schema = match &turn.content {
                ActionContent::Schema { schema } if turn.format_ok => schema.clone(),
                _ => VerifiedSchema::default(),
            };
        }
        self.turns.push(turn);
        self.turns.last().expect("just pushed")
    }

    /// Structural lint. Returns one message per violated invariant.
    pub fn validate(&self, row_limit: usize) -> Vec<String> {
        let mut issues = Vec::new();
        for (i, t) in self.turns.iter().enumerate() {
            if t.index != i {
                issues.push(format!("turn {i}: index {} is not contiguous", t.index));
            }
            if !t.content.matches(t.action) {
                issues.push(format!("turn {i}: content does not match action {}", t.action));
            }
            if !t.synthetic {
                match parse_turn(&t.raw_text) {
                    Ok(parsed) if parsed.format_ok != t.format_ok => {
                        issues.push(format!("turn {i}: format_ok={} but raw_text re-checks as {}", t.format_ok, parsed.format_ok))
                    }
                    Ok(parsed) if parsed.action != t.action => {
                        issues.push(format!("turn {i}: action {} but raw_text parses as {}", t.action, parsed.action))
                    }
                    Err(e) => issues.push(format!("turn {i}: raw_text does not parse: {e}")),
                    Ok(_) => {}
                }
            }
            if let Some(obs) = &t.observation {
                match obs.kind {
                    ObservationKind::Rows if obs.rows.len() > row_limit => {
                        issues.push(format!("turn {i}: observation has {} rows (limit {row_limit})", obs.rows.len()))
                    }
                    ObservationKind::Error if !obs.rows.is_empty() || obs.error_message.as_deref().unwrap_or("").is_empty() => {
                        issues.push(format!("turn {i}: error observation must have no rows and a message"))
                    }
                    _ => {}
                }
            }
        }
        if self.propose_step != self.last_propose_index() {
            issues.push(format!(
                "propose_step {:?} does not match last Propose turn {:?}",
                self.propose_step,
                self.last_propose_index()
            ));
        }
        if self.terminal_reason == Some(TerminalReason::Confirmed) {
            if self.final_sql.is_none() {
                issues.push("confirmed trajectory without final_sql".into());
            }
            if self.turns.last().map(|t| t.action) != Some(ActionKind::Confirm) {
                issues.push("confirmed trajectory does not end with a Confirm turn".into());
            }
        }
        issues
    }
}
