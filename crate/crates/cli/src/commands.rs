//! Subcommand implementations. Each returns the process exit code.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sqlexplore::dualtrack::{compute_group_advantages, Baseline};
use sqlexplore::evalkit::{build_report, rl_difficulty_filter, sft_filter};
use sqlexplore::harness::{
    build_group, collect_groups, evaluate_trajectories, group_trajectories, load_manifest, run_benchmark, score_rows,
    ManifestEntry, QuestionFailure, RunConfig, DB_ROOT_ENV, TRAJECTORIES_FILE,
};
use sqlexplore::jsonl;
use sqlexplore::{DatabaseRegistry, GrpoConfig, ProtocolVariant, SchemaRewardMode, Scorer, Trajectory};

/// `--db-root`, falling back to the environment.
pub fn resolve_db_root(flag: Option<PathBuf>) -> Result<PathBuf> {
    flag.or_else(|| std::env::var_os(DB_ROOT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .with_context(|| format!("no database root: pass --db-root or set {DB_ROOT_ENV}"))
}

pub fn load_registry(db_root: &Path) -> Result<DatabaseRegistry> {
    let registry = DatabaseRegistry::load(db_root).with_context(|| format!("loading databases from {}", db_root.display()))?;
    if registry.is_empty() {
        bail!("no databases found under {}", db_root.display());
    }
    Ok(registry)
}

/// A run directory stands for its trajectories file.
pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let run_file = path.join(TRAJECTORIES_FILE);
    let file = if path.is_dir() && run_file.is_file() { run_file } else { path.to_path_buf() };
    jsonl::read_path(&file).with_context(|| format!("reading trajectories from {}", file.display()))
}

fn write_jsonl<T: Serialize>(out: Option<&Path>, items: &[T]) -> Result<()> {
    match out {
        Some(path) => jsonl::write(path, items).with_context(|| format!("writing {}", path.display())),
        None => {
            let stdout = std::io::stdout();
            jsonl::write_to(&mut stdout.lock(), items).context("writing to stdout")
        }
    }
}

fn warn_failures(failures: &[QuestionFailure]) {
    for f in failures {
        match f.sample_index {
            Some(s) => eprintln!("failed: {} sample {s}: {}", f.question_id, f.error),
            None => eprintln!("failed: {}: {}", f.question_id, f.error),
        }
    }
}

pub fn rollout(config_path: &Path, out: &Path, groups_out: Option<&Path>) -> Result<i32> {
    let config = RunConfig::load(config_path).with_context(|| format!("loading {}", config_path.display()))?;
    let spec = config.policy.as_ref().context("run config has no [policy] section")?;
    let policy = spec.build()?;
    let registry = load_registry(&config.db_root)?;
    let outcome = run_benchmark(policy.as_ref(), &registry, &config, out)?;
    warn_failures(&outcome.failures);
    println!("{}", serde_json::to_string_pretty(&outcome.report)?);
    if let Some(path) = groups_out {
        let collection = collect_groups(policy.as_ref(), &registry, &config)?;
        warn_failures(&collection.failures);
        write_jsonl(Some(path), &collection.groups)?;
    }
    Ok(0)
}

pub struct ScoringInputs {
    pub trajectories: PathBuf,
    pub gold: PathBuf,
    pub db_root: PathBuf,
    pub schema_mode: SchemaRewardMode,
    pub variant: Option<ProtocolVariant>,
}

impl ScoringInputs {
    fn load(&self) -> Result<(Scorer, Vec<ManifestEntry>, Vec<Trajectory>)> {
        let registry = load_registry(&self.db_root)?;
        let mut scorer = Scorer::new(registry, self.schema_mode);
        if let Some(v) = self.variant {
            scorer = scorer.with_variant(v);
        }
        let manifest = load_manifest(&self.gold).with_context(|| format!("reading {}", self.gold.display()))?;
        Ok((scorer, manifest, read_trajectories(&self.trajectories)?))
    }
}

pub fn evaluate(inputs: &ScoringInputs, report_out: Option<&Path>) -> Result<i32> {
    let (scorer, manifest, trajectories) = inputs.load()?;
    let (mut records, failures) = evaluate_trajectories(&scorer, &manifest, trajectories);
    warn_failures(&failures);
    records.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    let report = build_report(&records, failures.len());
    let text = serde_json::to_string_pretty(&report)?;
    match report_out {
        Some(path) => std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(0)
}

pub fn score(inputs: &ScoringInputs, out: Option<&Path>) -> Result<i32> {
    let (scorer, manifest, trajectories) = inputs.load()?;
    let (mut records, failures) = evaluate_trajectories(&scorer, &manifest, trajectories);
    warn_failures(&failures);
    records.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    let rows: Vec<_> = records.iter().flat_map(score_rows).collect();
    write_jsonl(out, &rows)?;
    Ok(if failures.is_empty() { 0 } else { 1 })
}

pub fn advantages(inputs: &ScoringInputs, lambda: f64, baseline: Baseline, out: Option<&Path>) -> Result<i32> {
    let config = GrpoConfig::default().with_lambda(lambda).with_baseline(baseline);
    config.validate()?;
    let (scorer, manifest, trajectories) = inputs.load()?;
    let by_id: HashMap<&str, &ManifestEntry> = manifest.iter().map(|e| (e.question_id.as_str(), e)).collect();
    let mut records = Vec::new();
    let mut failed = 0;
    for (qid, group) in group_trajectories(trajectories) {
        let result = by_id
            .get(qid.as_str())
            .context("not in the manifest")
            .and_then(|entry| Ok(build_group(&scorer, entry, group)?))
            .and_then(|batch| Ok(compute_group_advantages(&batch, &config)?));
        match result {
            Ok(recs) => records.extend(recs),
            Err(e) => {
                eprintln!("failed: {qid}: {e:#}");
                failed += 1;
            }
        }
    }
    write_jsonl(out, &records)?;
    Ok(if failed == 0 { 0 } else { 1 })
}

/// Keeps trajectories that both solved the question and followed the format.
pub fn filter_sft(inputs: &ScoringInputs, out: Option<&Path>) -> Result<i32> {
    let (scorer, manifest, trajectories) = inputs.load()?;
    let (mut records, failures) = evaluate_trajectories(&scorer, &manifest, trajectories);
    warn_failures(&failures);
    records.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    let kept: Vec<&Trajectory> = records
        .iter()
        .flat_map(|r| &r.samples)
        .filter(|s| sft_filter(&s.trajectory, s.rewards.r_exec))
        .map(|s| &s.trajectory)
        .collect();
    eprintln!("kept {} trajectories", kept.len());
    write_jsonl(out, &kept)?;
    Ok(0)
}

/// A manifest entry that survived the difficulty filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlEntry {
    #[serde(flatten)]
    pub entry: ManifestEntry,
    pub pass_count: usize,
    pub rollouts: usize,
}

/// Keeps manifest entries that the recorded rollouts did not already solve
/// too often.
pub fn filter_rl(inputs: &ScoringInputs, out: Option<&Path>) -> Result<i32> {
    let (scorer, manifest, trajectories) = inputs.load()?;
    let (records, failures) = evaluate_trajectories(&scorer, &manifest, trajectories);
    warn_failures(&failures);
    let by_id: HashMap<&str, &ManifestEntry> = manifest.iter().map(|e| (e.question_id.as_str(), e)).collect();
    let mut kept = Vec::new();
    for record in &records {
        let rollouts = record.samples.len();
        let pass_count = record.samples.iter().filter(|s| s.correct()).count();
        if rl_difficulty_filter(pass_count, rollouts)? {
            let entry = (*by_id[record.question_id.as_str()]).clone();
            kept.push(RlEntry { entry, pass_count, rollouts });
        }
    }
    kept.sort_by(|a, b| a.entry.question_id.cmp(&b.entry.question_id));
    eprintln!("kept {} of {} questions", kept.len(), records.len());
    write_jsonl(out, &kept)?;
    Ok(0)
}

/// Lints recorded trajectories. Exit code 1 when anything is off.
pub fn validate(trajectories: &Path, row_limit: usize) -> Result<i32> {
    let trajectories = read_trajectories(trajectories)?;
    let mut bad = 0;
    for t in &trajectories {
        let issues = t.validate(row_limit);
        if !issues.is_empty() {
            bad += 1;
        }
        for issue in issues {
            println!("{} sample {}: {issue}", t.question_id, t.sample_index);
        }
    }
    eprintln!("{} trajectories, {bad} with issues", trajectories.len());
    Ok(if bad == 0 { 0 } else { 1 })
}
