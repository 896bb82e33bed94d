use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{load_manifest, run_rollout, HarnessError, ManifestEntry, Policy, RolloutOptions, RunConfig, TrajectorySink};
use crate::dualtrack::GroupBatch;
use crate::evalkit::{build_report, classify_error, ErrorCategory, EvalRecord, EvalReport, EvalSample};
use crate::jsonl;
use crate::protocol::Trajectory;
use crate::rewards::{RewardBundle, Scorer};
use crate::sqlenv::DatabaseRegistry;

pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const REPORT_FILE: &str = "report.json";
/// Trajectories in completion order, written while the run progresses.
pub const ROLLOUT_LOG_FILE: &str = "rollouts.log.jsonl";

/// A question (or one of its samples) that could not be run or scored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionFailure {
    pub question_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<usize>,
    pub error: String,
}

impl QuestionFailure {
    fn new(question_id: &str, sample_index: Option<usize>, error: impl ToString) -> Self {
        Self { question_id: question_id.to_string(), sample_index, error: error.to_string() }
    }
}

/// Rewards of one trajectory, one JSONL line of the scores file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub question_id: String,
    pub sample_index: usize,
    #[serde(flatten)]
    pub rewards: RewardBundle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_category: Option<ErrorCategory>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub run_dir: PathBuf,
    pub report: EvalReport,
    pub records: Vec<EvalRecord>,
    pub failures: Vec<QuestionFailure>,
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))
}

/// Runs `samples` rollouts of every entry. A question fails as a whole when
/// any of its samples fails.
pub fn rollout_questions(
    policy: &dyn Policy,
    registry: &DatabaseRegistry,
    config: &RunConfig,
    entries: &[ManifestEntry],
    greedy_first: bool,
    sink: Option<&TrajectorySink>,
) -> Result<Vec<Result<Vec<Trajectory>, QuestionFailure>>, HarnessError> {
    let samples = config.samples_per_question;
    let jobs: Vec<(usize, usize)> = (0..entries.len()).flat_map(|q| (0..samples).map(move |s| (q, s))).collect();
    let mut cfg = config.clone();
    cfg.greedy_first = greedy_first;
    let results: Vec<Result<Trajectory, HarnessError>> = thread_pool(config.workers)?.install(|| {
        jobs.par_iter()
            .map(|&(q, s)| run_rollout(policy, registry, &entries[q], &RolloutOptions::from_config(&cfg, s), sink))
            .collect()
    });
    let mut per_question: Vec<Result<Vec<Trajectory>, QuestionFailure>> = entries.iter().map(|_| Ok(Vec::new())).collect();
    for (&(q, s), result) in jobs.iter().zip(results) {
        let slot = &mut per_question[q];
        match (slot.as_mut(), result) {
            (Ok(trajs), Ok(t)) => trajs.push(t),
            (Ok(_), Err(e)) => *slot = Err(QuestionFailure::new(&entries[q].question_id, Some(s), e)),
            (Err(_), _) => {}
        }
    }
    Ok(per_question)
}

/// Scores every sample of a question and classifies failures.
pub fn score_question(
    scorer: &Scorer,
    entry: &ManifestEntry,
    trajectories: Vec<Trajectory>,
) -> Result<EvalRecord, HarnessError> {
    let gold = entry.gold();
    let gold_schema = scorer.gold_schema(&gold)?;
    let catalog = scorer.catalog(&entry.db_id)?;
    let gold_result = scorer.gold_result(&entry.db_id, &entry.gold_sql)?;
    let mut samples = Vec::with_capacity(trajectories.len());
    for trajectory in trajectories {
        let scored = scorer.score_detailed(&trajectory, &gold, scorer.mode())?;
        let error_category =
            classify_error(&trajectory, scored.rewards.r_exec, scored.result.as_ref(), &catalog, &gold_schema);
        samples.push(EvalSample { trajectory, result: scored.result, rewards: scored.rewards, error_category });
    }
    Ok(EvalRecord {
        question_id: entry.question_id.clone(),
        gold_sql: entry.gold_sql.clone(),
        gold_result: (*gold_result).clone(),
        samples,
    })
}

pub fn score_rows(record: &EvalRecord) -> impl Iterator<Item = ScoreRow> + '_ {
    record.samples.iter().map(|s| ScoreRow {
        question_id: record.question_id.clone(),
        sample_index: s.trajectory.sample_index,
        rewards: s.rewards,
        error_category: s.error_category,
    })
}

/// Groups trajectories by question, each group sorted by sample index.
pub fn group_trajectories(trajectories: Vec<Trajectory>) -> BTreeMap<String, Vec<Trajectory>> {
    let mut groups: BTreeMap<String, Vec<Trajectory>> = BTreeMap::new();
    for t in trajectories {
        groups.entry(t.question_id.clone()).or_default().push(t);
    }
    for g in groups.values_mut() {
        g.sort_by_key(|t| t.sample_index);
    }
    groups
}

/// Scores already recorded trajectories. Questions missing from the
/// manifest or failing to score are reported as failures.
pub fn evaluate_trajectories(
    scorer: &Scorer,
    manifest: &[ManifestEntry],
    trajectories: Vec<Trajectory>,
) -> (Vec<EvalRecord>, Vec<QuestionFailure>) {
    let by_id: HashMap<&str, &ManifestEntry> = manifest.iter().map(|e| (e.question_id.as_str(), e)).collect();
    let groups: Vec<(String, Vec<Trajectory>)> = group_trajectories(trajectories).into_iter().collect();
    let scored: Vec<Result<EvalRecord, QuestionFailure>> = groups
        .into_par_iter()
        .map(|(qid, trajs)| {
            let entry = by_id.get(qid.as_str()).ok_or_else(|| QuestionFailure::new(&qid, None, "not in the manifest"))?;
            score_question(scorer, entry, trajs).map_err(|e| QuestionFailure::new(&qid, None, e))
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in scored {
        match r {
            Ok(rec) => records.push(rec),
            Err(f) => failures.push(f),
        }
    }
    (records, failures)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text + "\n").map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

/// Runs every question of the manifest, scores the samples and writes the
/// run directory: trajectories, scores, failures and the report.
pub fn run_benchmark(
    policy: &dyn Policy,
    registry: &DatabaseRegistry,
    config: &RunConfig,
    run_dir: &Path,
) -> Result<BenchmarkOutcome, HarnessError> {
    config.validate()?;
    std::fs::create_dir_all(run_dir).map_err(|source| HarnessError::Io { path: run_dir.to_path_buf(), source })?;
    let entries = config.select(load_manifest(&config.manifest)?);
    let sink = TrajectorySink::create(&run_dir.join(ROLLOUT_LOG_FILE))?;
    let rolled = rollout_questions(policy, registry, config, &entries, config.greedy_first, Some(&sink))?;

    let scorer = Scorer::new(registry.clone(), config.schema_mode).with_variant(config.variant);
    let pool = thread_pool(config.workers)?;
    let scored: Vec<Result<EvalRecord, QuestionFailure>> = pool.install(|| {
        entries
            .par_iter()
            .zip(rolled)
            .map(|(entry, trajs)| {
                let trajs = trajs?;
                score_question(&scorer, entry, trajs).map_err(|e| QuestionFailure::new(&entry.question_id, None, e))
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in scored {
        match r {
            Ok(rec) => records.push(rec),
            Err(f) => failures.push(f),
        }
    }
    let trajectories: Vec<&Trajectory> = records.iter().flat_map(|r| r.samples.iter().map(|s| &s.trajectory)).collect();
    jsonl::write(&run_dir.join(TRAJECTORIES_FILE), &trajectories)?;
    let rows: Vec<ScoreRow> = records.iter().flat_map(score_rows).collect();
    jsonl::write(&run_dir.join(SCORES_FILE), &rows)?;
    jsonl::write(&run_dir.join(FAILURES_FILE), &failures)?;
    let report = build_report(&records, failures.len());
    write_json(&run_dir.join(REPORT_FILE), &report)?;
    Ok(BenchmarkOutcome { run_dir: run_dir.to_path_buf(), report, records, failures })
}

/// Group batches ready for advantage computation, plus failed questions.
#[derive(Debug, Clone)]
pub struct GroupCollection {
    pub groups: Vec<GroupBatch>,
    pub failures: Vec<QuestionFailure>,
}

/// Builds a scored group batch from one question's trajectories.
pub fn build_group(scorer: &Scorer, entry: &ManifestEntry, trajectories: Vec<Trajectory>) -> Result<GroupBatch, HarnessError> {
    let record = score_question(scorer, entry, trajectories)?;
    let gold_schema = scorer.gold_schema(&entry.gold())?;
    let rewards = record.samples.iter().map(|s| s.rewards).collect();
    let trajectories = record.samples.into_iter().map(|s| s.trajectory).collect();
    Ok(GroupBatch::new(entry.question_id.clone(), trajectories, rewards, (*gold_schema).clone())?)
}

/// Samples `samples_per_question` trajectories per question, all at the
/// sampling temperature, and scores them into group batches.
pub fn collect_groups(
    policy: &dyn Policy,
    registry: &DatabaseRegistry,
    config: &RunConfig,
) -> Result<GroupCollection, HarnessError> {
    config.validate()?;
    if config.samples_per_question < 2 {
        return Err(HarnessError::Config("group collection needs samples_per_question >= 2".into()));
    }
    let entries = config.select(load_manifest(&config.manifest)?);
    let rolled = rollout_questions(policy, registry, config, &entries, false, None)?;
    let scorer = Scorer::new(registry.clone(), config.schema_mode).with_variant(config.variant);
    let mut groups = Vec::new();
    let mut failures = Vec::new();
    for (entry, trajs) in entries.iter().zip(rolled) {
        match trajs.map_err(|f| f.error).and_then(|t| build_group(&scorer, entry, t).map_err(|e| e.to_string())) {
            Ok(g) => groups.push(g),
            Err(e) => failures.push(QuestionFailure::new(&entry.question_id, None, e)),
        }
    }
    Ok(GroupCollection { groups, failures })
}
