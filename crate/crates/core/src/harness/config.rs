use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{ExternalPolicy, HarnessError, Policy, ReplayPolicy};
use crate::jsonl;
use crate::protocol::{ProtocolVariant, VerifiedSchema};
use crate::rewards::{GoldReference, SchemaRewardMode};

/// Overrides `db_root` from the environment.
pub const DB_ROOT_ENV: &str = "TRUST_DB_ROOT";

/// One benchmark question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub question_id: String,
    pub db_id: String,
    pub question: String,
    #[serde(default)]
    pub external_knowledge: String,
    pub gold_sql: String,
    /// Reference schema; extracted from `gold_sql` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_schema: Option<VerifiedSchema>,
}

impl ManifestEntry {
    pub fn gold(&self) -> GoldReference {
        GoldReference { db_id: self.db_id.clone(), sql: self.gold_sql.clone(), schema: self.gold_schema.clone() }
    }
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, HarnessError> {
    let entries: Vec<ManifestEntry> = jsonl::read_path(path)?;
    let mut seen = std::collections::HashSet::new();
    for e in &entries {
        if !seen.insert(e.question_id.as_str()) {
            return Err(HarnessError::Config(format!("duplicate question_id `{}` in manifest", e.question_id)));
        }
    }
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    Replay { scripts: PathBuf },
    External {
        url: String,
        #[serde(default = "default_policy_timeout")]
        timeout_s: f64,
    },
}

fn default_policy_timeout() -> f64 {
    120.0
}

impl PolicySpec {
    pub fn build(&self) -> Result<Box<dyn Policy>, HarnessError> {
        Ok(match self {
            PolicySpec::Replay { scripts } => Box::new(ReplayPolicy::from_jsonl(scripts)?),
            PolicySpec::External { url, timeout_s } => {
                Box::new(ExternalPolicy::new(url.clone(), Duration::from_secs_f64(*timeout_s))?)
            }
        })
    }
}

/// Settings of a benchmark or rollout run, loadable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub db_root: PathBuf,
    #[serde(default)]
    pub variant: ProtocolVariant,
    #[serde(default = "default_max_turns")]
    pub max_turns: usize,
    #[serde(default)]
    pub prefill: bool,
    #[serde(default = "default_samples")]
    pub samples_per_question: usize,
    /// Sampling temperature of non-greedy samples.
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Sample 0 is decoded greedily (temperature 0).
    #[serde(default = "default_true")]
    pub greedy_first: bool,
    /// Seeds the manifest shuffle, and nothing else.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub shuffle: bool,
    /// Run only the first N questions (after shuffling).
    #[serde(default)]
    pub limit: Option<usize>,
    /// Rollout threads; 0 uses one per CPU.
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub schema_mode: SchemaRewardMode,
    #[serde(default)]
    pub policy: Option<PolicySpec>,
}

fn default_max_turns() -> usize {
    15
}
fn default_samples() -> usize {
    1
}
fn default_temperature() -> f64 {
    0.8
}
fn default_true() -> bool {
    true
}
fn default_workers() -> usize {
    1
}

impl RunConfig {
    pub fn new(manifest: impl Into<PathBuf>, db_root: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            db_root: db_root.into(),
            variant: ProtocolVariant::Epgc,
            max_turns: default_max_turns(),
            prefill: false,
            samples_per_question: default_samples(),
            temperature: default_temperature(),
            greedy_first: true,
            seed: 0,
            shuffle: false,
            limit: None,
            workers: default_workers(),
            schema_mode: SchemaRewardMode::default(),
            policy: None,
        }
    }

    /// Parses TOML. Relative paths stay relative to the working directory.
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a TOML file, resolves relative paths against its directory and
    /// applies the [`DB_ROOT_ENV`] override.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.manifest);
        resolve(&mut config.db_root);
        if let Some(PolicySpec::Replay { scripts }) = &mut config.policy {
            resolve(scripts);
        }
        config.apply_env();
        Ok(config)
    }

    pub fn apply_env(&mut self) {
        if let Some(root) = std::env::var_os(DB_ROOT_ENV).filter(|v| !v.is_empty()) {
            self.db_root = PathBuf::from(root);
        }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.samples_per_question == 0 {
            return Err(HarnessError::Config("samples_per_question must be at least 1".into()));
        }
        if self.max_turns == 0 {
            return Err(HarnessError::Config("max_turns must be at least 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(HarnessError::Config("temperature must be >= 0".into()));
        }
        Ok(())
    }

    pub fn temperature_for(&self, sample_index: usize) -> f64 {
        if self.greedy_first && sample_index == 0 {
            0.0
        } else {
            self.temperature
        }
    }

    /// Applies shuffling and the question limit.
    pub fn select(&self, mut entries: Vec<ManifestEntry>) -> Vec<ManifestEntry> {
        if self.shuffle {
            let mut rng = rand::rngs::StdRng::seed_from_u64(self.seed);
            entries.shuffle(&mut rng);
        }
        if let Some(n) = self.limit {
            entries.truncate(n);
        }
        entries
    }
}
