//! Environment, reward, credit-assignment and evaluation harness for
//! multi-turn text-to-SQL agents that must discover the database schema
//! through tool calls instead of receiving it up front.
//!
//! The crate is organised around the life of a rollout:
//!
//! * [`protocol`] parses agent turns (`<think>`, `<action>`, content tags),
//!   checks their format and owns the trajectory data model.
//! * [`sqlenv`] hosts SQLite databases behind a read-only sandbox and turns
//!   tool calls into observations.
//! * [`rewards`] scores finished trajectories (execution, format and schema
//!   rewards) and extracts reference schemas from SQL.
//! * [`dualtrack`] turns rewards into masked, group-normalized advantages for
//!   a schema track and a full track, plus the clipped surrogate loss.
//! * [`evalkit`] aggregates execution accuracy, majority voting, Pass@K, the
//!   failure taxonomy, cost statistics and the data-filtering rules.
//! * [`harness`] drives policies through the environment and writes run
//!   artifacts.
//!
//! Numeric code in [`dualtrack`] is generic over [`Scalar`]; the aliases at
//! the crate root fix it to `f64`, which is what the rest of the crate uses.

pub mod dualtrack;
pub mod evalkit;
pub mod harness;
pub mod jsonl;
pub mod protocol;
pub mod rewards;
mod scalar;
pub mod sqlenv;

pub use scalar::Scalar;

pub use protocol::{
    ActionContent, ActionKind, Observation, ObservationKind, ProtocolVariant, TerminalReason, Turn,
    Trajectory, Value, VerifiedSchema,
};
pub use rewards::{ExecutionResult, RewardBundle, SchemaRewardMode, Scorer};
pub use sqlenv::{DatabaseRegistry, Session};

/// Group-relative advantage configuration in double precision.
pub type GrpoConfig = dualtrack::GrpoConfig<f64>;
/// Single-precision variant, for trainers that keep advantages in `f32`.
pub type GrpoConfigF32 = dualtrack::GrpoConfig<f32>;
/// Per-trajectory advantage export row in double precision.
pub type AdvantageRecord = dualtrack::AdvantageRecord<f64>;
pub type AdvantageRecordF32 = dualtrack::AdvantageRecord<f32>;
pub type TrackRewards = dualtrack::TrackRewards<f64>;
pub type LossBreakdown = dualtrack::LossBreakdown<f64>;
