use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use super::{HarnessError, ManifestEntry, Policy, PolicyRequest, RunConfig};
use crate::protocol::{Latency, ProtocolVariant, Trajectory};
use crate::sqlenv::{DatabaseRegistry, Session, SessionInit};

/// Per-rollout settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions {
    pub variant: ProtocolVariant,
    pub max_turns: usize,
    pub prefill: bool,
    pub temperature: f64,
    pub sample_index: usize,
}

impl RolloutOptions {
    pub fn from_config(config: &RunConfig, sample_index: usize) -> Self {
        Self {
            variant: config.variant,
            max_turns: config.max_turns,
            prefill: config.prefill,
            temperature: config.temperature_for(sample_index),
            sample_index,
        }
    }
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self { variant: ProtocolVariant::Epgc, max_turns: 15, prefill: false, temperature: 0.0, sample_index: 0 }
    }
}

/// Append-only JSONL file of finished trajectories, safe to share between
/// workers.
#[derive(Debug)]
pub struct TrajectorySink {
    path: PathBuf,
    file: Mutex<File>,
}

impl TrajectorySink {
    /// Creates (or truncates) `path`.
    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        let file = File::create(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
        Ok(Self { path: path.to_path_buf(), file: Mutex::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, trajectory: &Trajectory) -> Result<(), HarnessError> {
        let mut line = serde_json::to_vec(trajectory).expect("trajectory serializes");
        line.push(b'\n');
        let mut f = self.file.lock().expect("sink poisoned");
        f.write_all(&line).and_then(|_| f.flush()).map_err(|source| HarnessError::Io { path: self.path.clone(), source })
    }
}

/// Alternates policy turns and environment steps until the session ends.
/// The finished trajectory is appended to `sink` before returning.
pub fn run_rollout(
    policy: &dyn Policy,
    registry: &DatabaseRegistry,
    entry: &ManifestEntry,
    options: &RolloutOptions,
    sink: Option<&TrajectorySink>,
) -> Result<Trajectory, HarnessError> {
    let init = SessionInit {
        question_id: entry.question_id.clone(),
        db_id: entry.db_id.clone(),
        question: entry.question.clone(),
        external_knowledge: entry.external_knowledge.clone(),
        variant: options.variant,
        max_turns: options.max_turns,
        prefill: options.prefill,
        sample_index: options.sample_index,
    };
    let mut latency = Latency::default();
    let started = Instant::now();
    let mut session = Session::open(registry, format!("{}#{}", entry.question_id, options.sample_index), init)?;
    latency.env_ms += ms(started);

    let mut step = 0;
    while !session.is_terminal() {
        let request = PolicyRequest {
            question_id: &entry.question_id,
            db_id: &entry.db_id,
            question: &entry.question,
            external_knowledge: &entry.external_knowledge,
            sample_index: options.sample_index,
            step,
            temperature: options.temperature,
            history: &session.trajectory().turns,
        };
        let t = Instant::now();
        let reply = policy.next_turn(&request)?;
        if policy.counts_latency() {
            latency.policy_ms += ms(t);
        }
        let t = Instant::now();
        session.step_raw(&reply.raw_text, reply.token_count)?;
        latency.env_ms += ms(t);
        step += 1;
    }

    let mut trajectory = session.into_trajectory();
    trajectory.latency = Some(latency);
    if let Some(sink) = sink {
        sink.append(&trajectory)?;
    }
    Ok(trajectory)
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1000.0
}
