//! Benchmark metrics and data filters: execution accuracy, majority voting,
//! Pass@K, failure taxonomy, cost statistics and the SFT/RL filters.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::protocol::{TerminalReason, Trajectory, VerifiedSchema};
use crate::rewards::{
    collect_references, f_match, results_equivalent_with, DbCatalog, Density, ExecutionResult, QuotedFallback,
    RewardBundle, EXEC_CORRECT,
};

/// One sampled trajectory with its scored outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub trajectory: Trajectory,
    /// Result of the final SQL; `None` when there is none.
    pub result: Option<ExecutionResult>,
    pub rewards: RewardBundle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_category: Option<ErrorCategory>,
}

impl EvalSample {
    pub fn correct(&self) -> bool {
        self.rewards.r_exec == EXEC_CORRECT
    }
}

/// All samples of one question. Sample 0 is the greedy one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question_id: String,
    pub gold_sql: String,
    pub gold_result: ExecutionResult,
    pub samples: Vec<EvalSample>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("record `{question_id}` has {available} samples, {requested} requested")]
    InsufficientSamples { question_id: String, available: usize, requested: usize },
    #[error("pass count {pass} outside 0..={rollouts}")]
    BadPassCount { pass: usize, rollouts: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorCategory {
    Hallucination,
    SchemaLinking,
    Semantic,
    Syntax,
    Generation,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 5] = [
        ErrorCategory::Hallucination,
        ErrorCategory::SchemaLinking,
        ErrorCategory::Semantic,
        ErrorCategory::Syntax,
        ErrorCategory::Generation,
    ];
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Fraction of records whose greedy sample is correct. Empty input is 0.
pub fn ex_accuracy(records: &[EvalRecord]) -> f64 {
    mean(records.iter().map(|r| r.samples.first().is_some_and(EvalSample::correct) as u8 as f64))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Index of the sample chosen by execution-result majority.
///
/// Samples are clustered against each cluster's first member; samples
/// without an executable result join no cluster. The largest cluster wins,
/// ties go to the cluster holding the lowest index, and the chosen sample is
/// that cluster's lowest index. With no executable sample, sample 0.
pub fn majority_vote(record: &EvalRecord) -> usize {
    let ordered = record.gold_result.ordered;
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (i, sample) in record.samples.iter().enumerate() {
        let Some(result) = sample.result.as_ref().filter(|r| r.is_executable()) else { continue };
        let home = clusters.iter_mut().find(|c| {
            let rep = record.samples[c[0]].result.as_ref().expect("cluster members have results");
            results_equivalent_with(rep, result, ordered)
        });
        match home {
            Some(c) => c.push(i),
            None => clusters.push(vec![i]),
        }
    }
    // clusters are created in index order, so the earliest maximal one holds
    // the lowest index among the tied
    let mut best: Option<&Vec<usize>> = None;
    for c in &clusters {
        if best.is_none_or(|b| c.len() > b.len()) {
            best = Some(c);
        }
    }
    best.map_or(0, |c| c[0])
}

pub fn majority_correct(record: &EvalRecord) -> bool {
    record.samples.get(majority_vote(record)).is_some_and(EvalSample::correct)
}

pub fn majority_accuracy(records: &[EvalRecord]) -> f64 {
    mean(records.iter().map(|r| majority_correct(r) as u8 as f64))
}

/// Whether any of the first `k` samples is correct.
pub fn pass_at_k(record: &EvalRecord, k: usize) -> Result<bool, EvalError> {
    if k == 0 || record.samples.len() < k {
        return Err(EvalError::InsufficientSamples {
            question_id: record.question_id.clone(),
            available: record.samples.len(),
            requested: k,
        });
    }
    Ok(record.samples[..k].iter().any(EvalSample::correct))
}

pub fn pass_at_k_rate(records: &[EvalRecord], k: usize) -> Result<f64, EvalError> {
    let hits = records.iter().map(|r| pass_at_k(r, k)).collect::<Result<Vec<_>, _>>()?;
    Ok(mean(hits.into_iter().map(|h| h as u8 as f64)))
}

fn is_missing_object(message: &str) -> bool {
    let m = message.to_ascii_lowercase();
    m.contains("no such table") || m.contains("no such column")
}

/// Failure class of a trajectory, `None` when it is correct.
///
/// Precedence: Generation (no final SQL or turn budget exhausted), then an
/// execution error is Hallucination when it names objects absent from the
/// database and Syntax otherwise, then Hallucination for executable SQL with
/// unknown references, then SchemaLinking when the SQL's schema misses part
/// of the reference schema, then Semantic.
pub fn classify_error(
    trajectory: &Trajectory,
    r_exec: f64,
    final_result: Option<&ExecutionResult>,
    catalog: &DbCatalog,
    gold_schema: &VerifiedSchema,
) -> Option<ErrorCategory> {
    if r_exec == EXEC_CORRECT {
        return None;
    }
    let sql = match (&trajectory.final_sql, trajectory.terminal_reason) {
        (Some(sql), Some(TerminalReason::Confirmed)) if !sql.trim().is_empty() => sql,
        _ => return Some(ErrorCategory::Generation),
    };
    let refs = collect_references(sql, catalog, QuotedFallback::Unknown);
    let unknown = refs.as_ref().is_ok_and(|r| r.has_unknown());
    match final_result {
        Some(res) if res.is_executable() => {}
        Some(res) => {
            let missing = res.error.as_deref().is_some_and(is_missing_object);
            return Some(if unknown || missing { ErrorCategory::Hallucination } else { ErrorCategory::Syntax });
        }
        None => return Some(ErrorCategory::Generation),
    }
    if unknown {
        return Some(ErrorCategory::Hallucination);
    }
    match refs {
        Ok(r) if f_match(&r.schema, gold_schema, Density::Sparse) < 1.0 => Some(ErrorCategory::SchemaLinking),
        _ => Some(ErrorCategory::Semantic),
    }
}

/// Mean cost per trajectory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostStats {
    pub trajectories: usize,
    pub latency_s: f64,
    /// Characters of agent output (synthetic turns excluded).
    pub output_chars: f64,
    /// Present only when every agent turn carries a token count.
    pub output_tokens: Option<f64>,
    /// All turns, including a synthetic prefill turn.
    pub turns: f64,
    /// Agent Explore and Generate turns.
    pub tool_calls: f64,
}

/// Means over `(trajectory, wall time in seconds)` pairs. Empty input is all
/// zeros.
pub fn cost_stats<'a>(items: impl IntoIterator<Item = (&'a Trajectory, f64)>) -> CostStats {
    let mut s = CostStats::default();
    let mut tokens = Some(0.0);
    for (t, wall) in items {
        s.trajectories += 1;
        s.latency_s += wall;
        s.output_chars += t.agent_turns().map(|x| x.char_count).sum::<usize>() as f64;
        s.turns += t.turns.len() as f64;
        s.tool_calls += t.tool_call_count() as f64;
        let traj_tokens: Option<u64> = t.agent_turns().map(|x| x.token_count.map(u64::from)).sum();
        tokens = tokens.zip(traj_tokens).map(|(a, b)| a + b as f64);
    }
    if s.trajectories == 0 {
        return CostStats::default();
    }
    let n = s.trajectories as f64;
    s.latency_s /= n;
    s.output_chars /= n;
    s.turns /= n;
    s.tool_calls /= n;
    s.output_tokens = tokens.map(|t| t / n);
    s
}

/// [`cost_stats`] using each trajectory's recorded latency (0 when absent).
pub fn cost_stats_recorded<'a>(trajectories: impl IntoIterator<Item = &'a Trajectory>) -> CostStats {
    cost_stats(trajectories.into_iter().map(|t| (t, t.latency.map_or(0.0, |l| l.total_s()))))
}

/// Keep for supervised fine-tuning: correct and every turn well formed.
pub fn sft_filter(trajectory: &Trajectory, r_exec: f64) -> bool {
    r_exec == EXEC_CORRECT && trajectory.turns.iter().all(|t| t.format_ok)
}

/// Keep for RL: pass rate strictly below 6/8.
pub fn rl_difficulty_filter(pass_count: usize, rollouts: usize) -> Result<bool, EvalError> {
    if rollouts == 0 || pass_count > rollouts {
        return Err(EvalError::BadPassCount { pass: pass_count, rollouts });
    }
    // pass/rollouts < 6/8, in integers
    Ok(pass_count * 8 < 6 * rollouts)
}

/// Pass@K grid reported when enough samples exist.
pub const PASS_AT_K_GRID: [usize; 4] = [1, 4, 6, 8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub questions: usize,
    pub samples_per_question: usize,
    pub ex_greedy: f64,
    /// Only with two or more samples per question.
    pub ex_majority: Option<f64>,
    /// Keyed by K.
    pub pass_at_k: BTreeMap<usize, f64>,
    /// Failure classes of the greedy samples.
    pub error_categories: BTreeMap<ErrorCategory, usize>,
    /// Greedy samples only.
    pub cost: CostStats,
    /// Questions that could not be run or scored.
    pub failed_questions: usize,
}

pub fn build_report(records: &[EvalRecord], failed_questions: usize) -> EvalReport {
    let samples = records.iter().map(|r| r.samples.len()).min().unwrap_or(0);
    let pass_at_k = PASS_AT_K_GRID
        .iter()
        .filter(|&&k| k <= samples)
        .filter_map(|&k| pass_at_k_rate(records, k).ok().map(|v| (k, v)))
        .collect();
    let mut error_categories: BTreeMap<ErrorCategory, usize> = ErrorCategory::ALL.iter().map(|&c| (c, 0)).collect();
    for cat in records.iter().filter_map(|r| r.samples.first().and_then(|s| s.error_category)) {
        *error_categories.entry(cat).or_default() += 1;
    }
    EvalReport {
        questions: records.len(),
        samples_per_question: samples,
        ex_greedy: ex_accuracy(records),
        ex_majority: (samples >= 2).then(|| majority_accuracy(records)),
        pass_at_k,
        error_categories,
        cost: cost_stats_recorded(records.iter().filter_map(|r| r.samples.first()).map(|s| &s.trajectory)),
        failed_questions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Value;
    use crate::rewards::SchemaRewardMode;

    fn res(x: i64) -> ExecutionResult {
        ExecutionResult::from_rows(vec!["a".into()], vec![vec![Value::Integer(x)]], false)
    }

    fn sample(result: Option<ExecutionResult>, r_exec: f64) -> EvalSample {
        EvalSample {
            trajectory: Trajectory::new("q", "db", "?", ""),
            result,
            rewards: RewardBundle { r_exec, r_fmt: 0.0, r_schema: 0.0, mode: SchemaRewardMode::default() },
            error_category: None,
        }
    }

    fn record(samples: Vec<EvalSample>) -> EvalRecord {
        EvalRecord { question_id: "q".into(), gold_sql: "SELECT 1".into(), gold_result: res(1), samples }
    }

    #[test]
    fn greedy_accuracy_counts_sample_zero() {
        let recs: Vec<EvalRecord> = [1.0, 0.2, 1.0, 0.0].iter().map(|&r| record(vec![sample(None, r)])).collect();
        assert_eq!(ex_accuracy(&recs), 0.5);
        assert_eq!(ex_accuracy(&[]), 0.0);
    }

    #[test]
    fn majority_tie_breaks() {
        let r = record(vec![sample(Some(res(1)), 1.0), sample(Some(res(1)), 1.0), sample(Some(res(2)), 0.2)]);
        assert_eq!(majority_vote(&r), 0);
        let r = record(vec![sample(Some(res(2)), 0.2), sample(Some(res(1)), 1.0), sample(Some(res(2)), 0.2), sample(Some(res(1)), 1.0)]);
        assert_eq!(majority_vote(&r), 0);
        assert!(!majority_correct(&r));
        let r = record(vec![
            sample(Some(ExecutionResult::error("x", false)), 0.0),
            sample(Some(res(3)), 0.2),
            sample(Some(res(1)), 1.0),
            sample(Some(res(1)), 1.0),
        ]);
        assert_eq!(majority_vote(&r), 2);
        let r = record(vec![sample(None, 0.0), sample(Some(ExecutionResult::error("x", false)), 0.0)]);
        assert_eq!(majority_vote(&r), 0);
    }

    #[test]
    fn pass_at_k_uses_prefixes() {
        let mut samples: Vec<EvalSample> = (0..8).map(|_| sample(None, 0.0)).collect();
        samples[7].rewards.r_exec = 1.0;
        let r = record(samples);
        assert!(!pass_at_k(&r, 4).unwrap());
        assert!(pass_at_k(&r, 8).unwrap());
        assert!(matches!(pass_at_k(&r, 9), Err(EvalError::InsufficientSamples { .. })));
    }

    #[test]
    fn rl_filter_boundary() {
        assert!(rl_difficulty_filter(5, 8).unwrap());
        assert!(!rl_difficulty_filter(6, 8).unwrap());
        assert!(rl_difficulty_filter(0, 8).unwrap());
        assert!(rl_difficulty_filter(9, 8).is_err());
    }

    #[test]
    fn empty_cost_is_zero() {
        assert_eq!(cost_stats(std::iter::empty()), CostStats::default());
    }
}
