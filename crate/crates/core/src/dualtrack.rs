//! Dual-track group-relative advantages and the clipped surrogate loss.
//!
//! A group holds G trajectories for one question. Each trajectory gets a
//! schema-track reward (the schema reward) and a full-track reward
//! (execution + format). Each track is normalized within the group on its
//! own, and each advantage is applied only to the turns of its track: the
//! schema track covers turns up to and including the last Propose, the full
//! track covers every agent turn. Synthetic prefill turns belong to neither.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::protocol::{ActionKind, Trajectory, VerifiedSchema};
use crate::rewards::RewardBundle;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdMode {
    /// Divide by G.
    #[default]
    Population,
    /// Divide by G - 1.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    #[default]
    DualTrack,
    /// Full track only; the schema term is dropped from the loss.
    SingleTrack,
    /// One track whose reward folds the schema reward in with a fixed weight.
    NaiveAggregate,
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Baseline::DualTrack => "dual_track",
            Baseline::SingleTrack => "single_track",
            Baseline::NaiveAggregate => "naive_aggregate",
        })
    }
}

impl FromStr for Baseline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "dual_track" | "dual" => Ok(Baseline::DualTrack),
            "single_track" | "single" => Ok(Baseline::SingleTrack),
            "naive_aggregate" | "naive" => Ok(Baseline::NaiveAggregate),
            _ => Err(format!("unknown baseline `{s}` (dual_track, single_track or naive_aggregate)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Track {
    Schema,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig<T> {
    /// Weight of the schema-track loss.
    pub lambda: T,
    pub epsilon_norm: T,
    pub clip_eps: T,
    pub std_mode: StdMode,
    pub baseline: Baseline,
    /// Weight of the schema reward inside the naive aggregate reward.
    pub naive_schema_weight: T,
    /// Discount factor. Rewards are terminal and undiscounted, so anything
    /// other than 1 is rejected by [`GrpoConfig::validate`].
    pub gamma: T,
}

impl<T: Scalar> Default for GrpoConfig<T> {
    fn default() -> Self {
        Self {
            lambda: T::lit(0.25),
            epsilon_norm: T::lit(1e-6),
            clip_eps: T::lit(0.2),
            std_mode: StdMode::Population,
            baseline: Baseline::DualTrack,
            naive_schema_weight: T::lit(0.25),
            gamma: T::one(),
        }
    }
}

impl<T: Scalar> GrpoConfig<T> {
    // negated comparisons so that NaN fails too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), DualTrackError> {
        let bad = |m: &str| Err(DualTrackError::InvalidConfig(m.to_string()));
        if !(self.lambda >= T::zero()) {
            return bad("lambda must be >= 0");
        }
        if !(self.epsilon_norm > T::zero()) {
            return bad("epsilon_norm must be > 0");
        }
        if !(self.clip_eps >= T::zero()) {
            return bad("clip_eps must be >= 0");
        }
        if self.gamma != T::one() {
            return bad("gamma must be 1 (rewards are terminal)");
        }
        Ok(())
    }

    pub fn with_lambda(mut self, lambda: T) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_baseline(mut self, baseline: Baseline) -> Self {
        self.baseline = baseline;
        self
    }

    /// Lambda as applied to the loss: zero unless dual-track.
    pub fn effective_lambda(&self) -> T {
        match self.baseline {
            Baseline::DualTrack => self.lambda,
            Baseline::SingleTrack | Baseline::NaiveAggregate => T::zero(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DualTrackError {
    #[error("group of {0} trajectories; normalization needs at least 2")]
    GroupTooSmall(usize),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("inconsistent group: {0}")]
    InconsistentGroup(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Per-trajectory track rewards. `schema` is `None` for single-track
/// baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackRewards<T> {
    pub full: T,
    pub schema: Option<T>,
}

pub fn track_rewards<T: Scalar>(bundles: &[RewardBundle], config: &GrpoConfig<T>) -> Vec<TrackRewards<T>> {
    bundles
        .iter()
        .map(|b| {
            let full = T::lit(b.r_exec) + T::lit(b.r_fmt);
            match config.baseline {
                Baseline::DualTrack => TrackRewards { full, schema: Some(T::lit(b.r_schema)) },
                Baseline::SingleTrack => TrackRewards { full, schema: None },
                Baseline::NaiveAggregate => {
                    TrackRewards { full: full + config.naive_schema_weight * T::lit(b.r_schema), schema: None }
                }
            }
        })
        .collect()
}

/// `(R - mean) / (std + eps)` over the group.
pub fn normalize_advantages<T: Scalar>(values: &[T], epsilon: T, std_mode: StdMode) -> Result<Vec<T>, DualTrackError> {
    let g = values.len();
    if g < 2 {
        return Err(DualTrackError::GroupTooSmall(g));
    }
    // The rounded mean of a constant group can sit one ulp off the values,
    // which 1/epsilon would blow up to a visible advantage.
    if values.iter().all(|&v| v == values[0]) {
        return Ok(vec![T::zero(); g]);
    }
    let n = T::from_usize(g).expect("group size fits scalar");
    let mean = values.iter().fold(T::zero(), |acc, &v| acc + v) / n;
    let ss = values.iter().fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean));
    let denom = match std_mode {
        StdMode::Population => n,
        StdMode::Sample => n - T::one(),
    };
    let std = (ss / denom).sqrt();
    Ok(values.iter().map(|&v| (v - mean) / (std + epsilon)).collect())
}

/// Per-turn activity flags of both tracks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnMasks {
    pub schema: Vec<bool>,
    pub full: Vec<bool>,
}

pub fn build_masks(trajectory: &Trajectory) -> TurnMasks {
    let propose = trajectory.turns.iter().rposition(|t| t.action == ActionKind::Propose);
    let schema = trajectory
        .turns
        .iter()
        .enumerate()
        .map(|(i, t)| !t.synthetic && propose.is_some_and(|p| i <= p))
        .collect();
    let full = trajectory.turns.iter().map(|t| !t.synthetic).collect();
    TurnMasks { schema, full }
}

/// Per-turn token counts when every agent turn carries one. Synthetic turns
/// contribute no generated tokens.
pub fn turn_token_counts(trajectory: &Trajectory) -> Option<Vec<u32>> {
    trajectory.turns.iter().map(|t| if t.synthetic { Some(0) } else { t.token_count }).collect()
}

/// `token_counts[t]` copies of the advantage (or zero when the turn is
/// inactive), in turn order.
pub fn broadcast_advantage<T: Scalar>(advantage: T, flags: &[bool], token_counts: &[u32]) -> Result<Vec<T>, DualTrackError> {
    if flags.len() != token_counts.len() {
        return Err(DualTrackError::LengthMismatch { expected: flags.len(), found: token_counts.len() });
    }
    let mut out = Vec::with_capacity(token_counts.iter().map(|&c| c as usize).sum());
    for (&active, &count) in flags.iter().zip(token_counts) {
        let v = if active { advantage } else { T::zero() };
        out.extend(std::iter::repeat_n(v, count as usize));
    }
    Ok(out)
}

/// Clipped surrogate averaged over tokens with a nonzero advantage. No
/// active tokens gives 0.
pub fn grpo_loss<T: Scalar>(ratios: &[T], advantages: &[T], clip_eps: T) -> Result<T, DualTrackError> {
    if ratios.len() != advantages.len() {
        return Err(DualTrackError::LengthMismatch { expected: advantages.len(), found: ratios.len() });
    }
    let (lo, hi) = (T::one() - clip_eps, T::one() + clip_eps);
    let mut sum = T::zero();
    let mut active = 0usize;
    for (&r, &a) in ratios.iter().zip(advantages) {
        if a == T::zero() {
            continue;
        }
        let clipped = r.max(lo).min(hi);
        sum = sum - (r * a).min(clipped * a);
        active += 1;
    }
    if active == 0 {
        return Ok(T::zero());
    }
    Ok(sum / T::from_usize(active).expect("token count fits scalar"))
}

pub fn combine_loss<T: Scalar>(l_full: T, l_schema: T, lambda: T, baseline: Baseline) -> T {
    match baseline {
        Baseline::DualTrack => l_full + lambda * l_schema,
        Baseline::SingleTrack | Baseline::NaiveAggregate => l_full,
    }
}

/// G trajectories of one question with their rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBatch {
    pub question_id: String,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<RewardBundle>,
    #[serde(default)]
    pub gold_schema: VerifiedSchema,
}

impl GroupBatch {
    pub fn new(
        question_id: impl Into<String>,
        trajectories: Vec<Trajectory>,
        rewards: Vec<RewardBundle>,
        gold_schema: VerifiedSchema,
    ) -> Result<Self, DualTrackError> {
        let batch = Self { question_id: question_id.into(), trajectories, rewards, gold_schema };
        batch.check()?;
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn check(&self) -> Result<(), DualTrackError> {
        if self.trajectories.len() < 2 {
            return Err(DualTrackError::GroupTooSmall(self.trajectories.len()));
        }
        if self.rewards.len() != self.trajectories.len() {
            return Err(DualTrackError::LengthMismatch { expected: self.trajectories.len(), found: self.rewards.len() });
        }
        if let Some(t) = self.trajectories.iter().find(|t| t.question_id != self.question_id) {
            return Err(DualTrackError::InconsistentGroup(format!(
                "trajectory for `{}` in group `{}`",
                t.question_id, self.question_id
            )));
        }
        Ok(())
    }
}

/// One track's advantage for one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackAdvantage<T> {
    pub advantage: T,
    pub flags: Vec<bool>,
    /// Per-token broadcast, present when token counts were supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<T>>,
}

impl<T: Scalar> TrackAdvantage<T> {
    /// Per-token values, or one value per turn without token counts.
    pub fn units(&self) -> Vec<T> {
        match &self.tokens {
            Some(t) => t.clone(),
            None => self.flags.iter().map(|&f| if f { self.advantage } else { T::zero() }).collect(),
        }
    }
}

/// Advantage export row for one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageRecord<T> {
    pub question_id: String,
    pub sample_index: usize,
    pub rewards: TrackRewards<T>,
    pub full: TrackAdvantage<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<TrackAdvantage<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_counts: Option<Vec<u32>>,
}

fn track_advantage<T: Scalar>(
    advantage: T,
    flags: Vec<bool>,
    counts: Option<&[u32]>,
) -> Result<TrackAdvantage<T>, DualTrackError> {
    let tokens = counts.map(|c| broadcast_advantage(advantage, &flags, c)).transpose()?;
    Ok(TrackAdvantage { advantage, flags, tokens })
}

/// Track rewards, normalized advantages, masks and broadcasts for a group.
pub fn compute_group_advantages<T: Scalar>(
    batch: &GroupBatch,
    config: &GrpoConfig<T>,
) -> Result<Vec<AdvantageRecord<T>>, DualTrackError> {
    batch.check()?;
    config.validate()?;
    let rewards = track_rewards(&batch.rewards, config);
    let full_values: Vec<T> = rewards.iter().map(|r| r.full).collect();
    let full_adv = normalize_advantages(&full_values, config.epsilon_norm, config.std_mode)?;
    let schema_adv = match config.baseline {
        Baseline::DualTrack => {
            let values: Vec<T> = rewards.iter().map(|r| r.schema.unwrap_or_else(T::zero)).collect();
            Some(normalize_advantages(&values, config.epsilon_norm, config.std_mode)?)
        }
        _ => None,
    };
    // Tokens are the unit only when every trajectory of the group has counts.
    let counts: Vec<Option<Vec<u32>>> = batch.trajectories.iter().map(turn_token_counts).collect();
    let use_counts = counts.iter().all(Option::is_some);
    let mut out = Vec::with_capacity(batch.len());
    for (i, (traj, counts)) in batch.trajectories.iter().zip(counts).enumerate() {
        let masks = build_masks(traj);
        let counts = counts.filter(|_| use_counts);
        let full = track_advantage(full_adv[i], masks.full, counts.as_deref())?;
        let schema = match &schema_adv {
            Some(adv) => Some(track_advantage(adv[i], masks.schema, counts.as_deref())?),
            None => None,
        };
        out.push(AdvantageRecord {
            question_id: batch.question_id.clone(),
            sample_index: traj.sample_index,
            rewards: rewards[i],
            full,
            schema,
            token_counts: counts,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    pub l_full: T,
    pub l_schema: T,
    pub total: T,
}

/// Loss of a group given per-unit probability ratios aligned with
/// [`TrackAdvantage::units`] (per token, or per turn without counts). Each
/// track's loss is the mean over its own active units across the group.
pub fn group_loss<T: Scalar>(
    records: &[AdvantageRecord<T>],
    ratios: &[Vec<T>],
    config: &GrpoConfig<T>,
) -> Result<LossBreakdown<T>, DualTrackError> {
    if records.len() != ratios.len() {
        return Err(DualTrackError::LengthMismatch { expected: records.len(), found: ratios.len() });
    }
    let mut full_adv = Vec::new();
    let mut schema_adv = Vec::new();
    let mut full_ratio = Vec::new();
    let mut schema_ratio = Vec::new();
    for (rec, r) in records.iter().zip(ratios) {
        let units = rec.full.units();
        if units.len() != r.len() {
            return Err(DualTrackError::LengthMismatch { expected: units.len(), found: r.len() });
        }
        full_adv.extend(units);
        full_ratio.extend_from_slice(r);
        if let Some(schema) = &rec.schema {
            schema_adv.extend(schema.units());
            schema_ratio.extend_from_slice(r);
        }
    }
    let l_full = grpo_loss(&full_ratio, &full_adv, config.clip_eps)?;
    let l_schema = grpo_loss(&schema_ratio, &schema_adv, config.clip_eps)?;
    let total = combine_loss(l_full, l_schema, config.lambda, config.baseline);
    Ok(LossBreakdown { l_full, l_schema, total })
}
