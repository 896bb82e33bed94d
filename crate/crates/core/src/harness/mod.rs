//! Drives policies through the environment: replay and HTTP policies, run
//! configuration, single rollouts, benchmark runs and training groups.

mod benchmark;
mod config;
mod policy;
mod rollout;

pub use benchmark::{
    build_group, collect_groups, evaluate_trajectories, group_trajectories, rollout_questions, run_benchmark,
    score_question, score_rows, BenchmarkOutcome, GroupCollection, QuestionFailure, ScoreRow, FAILURES_FILE,
    REPORT_FILE, ROLLOUT_LOG_FILE, SCORES_FILE, TRAJECTORIES_FILE,
};
pub use config::{load_manifest, ManifestEntry, PolicySpec, RunConfig, DB_ROOT_ENV};
pub use policy::{
    ExternalPolicy, ExternalRequest, HistoryEntry, Policy, PolicyError, PolicyReply, PolicyRequest, ReplayPolicy,
    ReplayScript,
};
pub use rollout::{run_rollout, RolloutOptions, TrajectorySink};

use std::path::PathBuf;

use crate::dualtrack::DualTrackError;
use crate::jsonl::JsonlError;
use crate::rewards::RewardError;
use crate::sqlenv::EnvError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Group(#[from] DualTrackError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
}
