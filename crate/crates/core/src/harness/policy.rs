use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError};
use crate::protocol::Turn;

/// What a policy sees before emitting its next turn.
#[derive(Debug, Clone, Copy)]
pub struct PolicyRequest<'a> {
    pub question_id: &'a str,
    pub db_id: &'a str,
    pub question: &'a str,
    pub external_knowledge: &'a str,
    pub sample_index: usize,
    /// Number of agent turns emitted so far (synthetic turns excluded).
    pub step: usize,
    pub temperature: f64,
    pub history: &'a [Turn],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyReply {
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<u32>,
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("policy unreachable: {0}")]
    Unreachable(String),
    #[error("policy returned an unusable reply: {0}")]
    BadReply(String),
    #[error("no scripted turn {step} for question `{question_id}` sample {sample_index}")]
    ScriptExhausted { question_id: String, sample_index: usize, step: usize },
}

/// Produces agent turns. Implementations are shared across rollout workers.
pub trait Policy: Send + Sync {
    fn next_turn(&self, request: &PolicyRequest<'_>) -> Result<PolicyReply, PolicyError>;

    /// Whether time spent in [`Policy::next_turn`] counts as policy latency.
    fn counts_latency(&self) -> bool {
        false
    }
}

/// Scripted turns for one question, optionally for one sample only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayScript {
    pub question_id: String,
    /// `None` applies to every sample without a script of its own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<usize>,
    pub turns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_counts: Option<Vec<u32>>,
}

/// Deterministic policy that replays fixed turn texts.
#[derive(Debug, Clone, Default)]
pub struct ReplayPolicy {
    scripts: HashMap<(String, Option<usize>), ReplayScript>,
}

impl ReplayPolicy {
    pub fn new(scripts: impl IntoIterator<Item = ReplayScript>) -> Self {
        let scripts = scripts.into_iter().map(|s| ((s.question_id.clone(), s.sample_index), s)).collect();
        Self { scripts }
    }

    pub fn from_jsonl(path: &Path) -> Result<Self, JsonlError> {
        Ok(Self::new(jsonl::read_path::<ReplayScript>(path)?))
    }

    pub fn script(&self, question_id: &str, sample_index: usize) -> Option<&ReplayScript> {
        self.scripts
            .get(&(question_id.to_string(), Some(sample_index)))
            .or_else(|| self.scripts.get(&(question_id.to_string(), None)))
    }

    pub fn len(&self) -> usize {
        self.scripts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scripts.is_empty()
    }
}

impl Policy for ReplayPolicy {
    fn next_turn(&self, req: &PolicyRequest<'_>) -> Result<PolicyReply, PolicyError> {
        let exhausted = || PolicyError::ScriptExhausted {
            question_id: req.question_id.to_string(),
            sample_index: req.sample_index,
            step: req.step,
        };
        let script = self.script(req.question_id, req.sample_index).ok_or_else(exhausted)?;
        let raw_text = script.turns.get(req.step).ok_or_else(exhausted)?.clone();
        let token_count = script.token_counts.as_ref().and_then(|c| c.get(req.step).copied());
        Ok(PolicyReply { raw_text, token_count })
    }
}

/// One prior turn as sent to an external policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub raw_text: String,
    /// Rendered observation text, absent after a Confirm.
    #[serde(default)]
    pub observation: Option<String>,
    #[serde(default)]
    pub synthetic: bool,
}

/// Request body posted to an external policy endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalRequest {
    pub question_id: String,
    pub db_id: String,
    pub question: String,
    pub external_knowledge: String,
    pub sample_index: usize,
    pub step: usize,
    pub temperature: f64,
    pub history: Vec<HistoryEntry>,
}

impl ExternalRequest {
    pub fn from_request(req: &PolicyRequest<'_>) -> Self {
        Self {
            question_id: req.question_id.to_string(),
            db_id: req.db_id.to_string(),
            question: req.question.to_string(),
            external_knowledge: req.external_knowledge.to_string(),
            sample_index: req.sample_index,
            step: req.step,
            temperature: req.temperature,
            history: req
                .history
                .iter()
                .map(|t| HistoryEntry {
                    raw_text: t.raw_text.clone(),
                    observation: t.observation.as_ref().map(|o| o.render()),
                    synthetic: t.synthetic,
                })
                .collect(),
        }
    }
}

/// Policy served over HTTP: POSTs an [`ExternalRequest`] as JSON and expects
/// a [`PolicyReply`] back.
#[derive(Debug, Clone)]
pub struct ExternalPolicy {
    url: String,
    client: reqwest::blocking::Client,
}

impl ExternalPolicy {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Result<Self, PolicyError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| PolicyError::Unreachable(e.to_string()))?;
        Ok(Self { url: url.into(), client })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Policy for ExternalPolicy {
    fn next_turn(&self, req: &PolicyRequest<'_>) -> Result<PolicyReply, PolicyError> {
        let body = ExternalRequest::from_request(req);
        let resp = self
            .client
            .post(&self.url)
            .json(&body)
            .send()
            .map_err(|e| PolicyError::Unreachable(format!("{}: {e}", self.url)))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(PolicyError::Unreachable(format!("{}: HTTP {status}", self.url)));
        }
        resp.json::<PolicyReply>().map_err(|e| PolicyError::BadReply(e.to_string()))
    }

    fn counts_latency(&self) -> bool {
        true
    }
}
