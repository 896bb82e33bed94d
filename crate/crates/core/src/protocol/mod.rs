//! Agent turn format, protocol state machine and trajectory data model.
//!
//! An agent turn is free text that must contain exactly one `<think>` block,
//! exactly one `<action>` block naming one of the four tools, and the content
//! tag that tool requires (`<tool_call>`, `<schema>` or `<answer>`). Parsing is
//! structural: blocks are located by their tags, must be balanced and may not
//! nest. Text outside the blocks is kept in `raw_text` but ignored.

mod action;
mod adherence;
mod observation;
mod parse;
mod schema;
mod trajectory;

pub use action::{ActionContent, ActionKind, ProtocolVariant};
pub use adherence::{check_transition, extract_proposed_schema, full_adherence, full_adherence_under};
pub use observation::{Observation, ObservationKind, Value};
pub use parse::{check_format, parse_turn, render_turn, ParseError};
pub use schema::{normalize_name, SchemaItem, SchemaParseError, VerifiedSchema};
pub use trajectory::{Latency, TerminalReason, Trajectory, Turn};
