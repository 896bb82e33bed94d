use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::VerifiedSchema;

/// The four agent actions. Nothing else is representable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Explore,
    Propose,
    Generate,
    Confirm,
}

impl ActionKind {
    pub const ALL: [ActionKind; 4] = [Self::Explore, Self::Propose, Self::Generate, Self::Confirm];

    /// Name used inside the `<action>` block.
    pub fn tool_name(self) -> &'static str {
        match self {
            Self::Explore => "explore_schema",
            Self::Propose => "propose_schema",
            Self::Generate => "generate_sql",
            Self::Confirm => "confirm_answer",
        }
    }

    /// Tag that carries this action's content.
    pub fn content_tag(self) -> &'static str {
        match self {
            Self::Explore | Self::Generate => "tool_call",
            Self::Propose => "schema",
            Self::Confirm => "answer",
        }
    }

    pub fn from_tool_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.tool_name() == name)
    }

    /// Explore and Generate execute SQL against the database.
    pub fn is_tool_call(self) -> bool {
        matches!(self, Self::Explore | Self::Generate)
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tool_name())
    }
}

/// Parsed payload of a turn. The variant follows the action: tool calls for
/// Explore/Generate, a schema for Propose, answer SQL for Confirm. `Missing`
/// marks a turn whose content tag was absent or unparseable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ActionContent {
    ToolCall { db_id: String, sql: String },
    Schema { schema: VerifiedSchema },
    Answer { sql: String },
    Missing,
}

impl ActionContent {
    pub fn matches(&self, action: ActionKind) -> bool {
        match self {
            Self::ToolCall { .. } => action.is_tool_call(),
            Self::Schema { .. } => action == ActionKind::Propose,
            Self::Answer { .. } => action == ActionKind::Confirm,
            Self::Missing => true,
        }
    }

    pub fn sql(&self) -> Option<&str> {
        match self {
            Self::ToolCall { sql, .. } | Self::Answer { sql } => Some(sql),
            _ => None,
        }
    }
}

/// Protocol variants of increasing structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ProtocolVariant {
    /// Explore, then Confirm.
    #[serde(rename = "EC")]
    Ec,
    /// Explore, Generate, Confirm.
    #[serde(rename = "EGC")]
    Egc,
    /// Explore, Propose, Generate, Confirm.
    #[default]
    #[serde(rename = "EPGC")]
    Epgc,
}

impl ProtocolVariant {
    pub fn required_actions(self) -> &'static [ActionKind] {
        use ActionKind::*;
        match self {
            Self::Ec => &[Explore, Confirm],
            Self::Egc => &[Explore, Generate, Confirm],
            Self::Epgc => &[Explore, Propose, Generate, Confirm],
        }
    }

    pub fn allows(self, action: ActionKind) -> bool {
        self.required_actions().contains(&action)
    }
}

impl FromStr for ProtocolVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "EC" => Ok(Self::Ec),
            "EGC" => Ok(Self::Egc),
            "EPGC" => Ok(Self::Epgc),
            other => Err(format!("unknown protocol variant `{other}` (expected EC, EGC or EPGC)")),
        }
    }
}

impl fmt::Display for ProtocolVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ec => "EC",
            Self::Egc => "EGC",
            Self::Epgc => "EPGC",
        })
    }
}
