//! Plain-loop reference for group advantages, written without the library's
//! helpers. Used to cross-check the dual-track pipeline.

use proptest::prelude::*;
use sqlexplore::protocol::{parse_turn, render_turn, ActionContent, ActionKind, Trajectory, VerifiedSchema};
use sqlexplore::rewards::RewardBundle;
use sqlexplore::SchemaRewardMode;

pub const EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct TurnSpec {
    pub action: ActionKind,
    pub synthetic: bool,
    pub tokens: u32,
}

#[derive(Debug, Clone)]
pub struct SampleSpec {
    pub turns: Vec<TurnSpec>,
    pub r_exec: f64,
    pub r_fmt: f64,
    pub r_schema: f64,
}

pub fn bundle(s: &SampleSpec) -> RewardBundle {
    RewardBundle { r_exec: s.r_exec, r_fmt: s.r_fmt, r_schema: s.r_schema, mode: SchemaRewardMode::default() }
}

pub fn content_for(action: ActionKind) -> ActionContent {
    match action {
        ActionKind::Explore | ActionKind::Generate => ActionContent::ToolCall { db_id: "toy".into(), sql: "SELECT 1".into() },
        ActionKind::Propose => ActionContent::Schema { schema: VerifiedSchema::new().with_columns("employee", &["name"]) },
        ActionKind::Confirm => ActionContent::Answer { sql: "SELECT 1".into() },
    }
}

/// Builds a trajectory; `with_counts` attaches token counts to agent turns.
pub fn build_trajectory(question_id: &str, sample_index: usize, spec: &SampleSpec, with_counts: bool) -> Trajectory {
    let mut t = Trajectory::new(question_id, "toy", "q", "");
    t.sample_index = sample_index;
    for ts in &spec.turns {
        let mut turn = parse_turn(&render_turn("x", ts.action, &content_for(ts.action))).unwrap();
        turn.synthetic = ts.synthetic;
        turn.token_count = (with_counts && !ts.synthetic).then_some(ts.tokens);
        t.push_turn(turn);
    }
    t
}

fn normalize(values: &[f64]) -> Vec<f64> {
    if values.iter().all(|v| *v == values[0]) {
        return vec![0.0; values.len()];
    }
    let g = values.len() as f64;
    let mut sum = 0.0;
    for v in values {
        sum += v;
    }
    let mean = sum / g;
    let mut ss = 0.0;
    for v in values {
        ss += (v - mean) * (v - mean);
    }
    let std = (ss / g).sqrt();
    values.iter().map(|v| (v - mean) / (std + EPS)).collect()
}

/// Expected per-unit advantages `(full, schema)` of every sample. A unit is a
/// token when `with_counts`, otherwise a turn.
pub fn expected_units(group: &[SampleSpec], with_counts: bool) -> Vec<(Vec<f64>, Vec<f64>)> {
    // a group made only of prefill turns still carries (empty) counts
    let with_counts = with_counts || group.iter().all(|s| s.turns.iter().all(|t| t.synthetic));
    let full: Vec<f64> = group.iter().map(|s| s.r_exec + s.r_fmt).collect();
    let schema: Vec<f64> = group.iter().map(|s| s.r_schema).collect();
    let a_full = normalize(&full);
    let a_schema = normalize(&schema);
    let mut out = Vec::new();
    for (i, s) in group.iter().enumerate() {
        let mut last_propose = None;
        for (t, ts) in s.turns.iter().enumerate() {
            if ts.action == ActionKind::Propose {
                last_propose = Some(t);
            }
        }
        let mut uf = Vec::new();
        let mut us = Vec::new();
        for (t, ts) in s.turns.iter().enumerate() {
            let reps = if !with_counts {
                1
            } else if ts.synthetic {
                0
            } else {
                ts.tokens
            };
            let in_schema = !ts.synthetic && matches!(last_propose, Some(p) if t <= p);
            for _ in 0..reps {
                uf.push(if ts.synthetic { 0.0 } else { a_full[i] });
                us.push(if in_schema { a_schema[i] } else { 0.0 });
            }
        }
        out.push((uf, us));
    }
    out
}

fn action() -> impl Strategy<Value = ActionKind> {
    prop_oneof![
        Just(ActionKind::Explore),
        Just(ActionKind::Propose),
        Just(ActionKind::Generate),
        Just(ActionKind::Confirm),
    ]
}

pub fn sample_spec(max_turns: usize) -> impl Strategy<Value = SampleSpec> {
    (
        any::<bool>(),
        prop::collection::vec((action(), 0u32..=5), 1..=max_turns),
        prop_oneof![Just(0.0), Just(0.2), Just(1.0)],
        prop_oneof![Just(0.0), Just(0.1)],
        prop_oneof![Just(0.0), Just(1.0), 0.0f64..1.0],
    )
        .prop_map(|(prefill, turns, r_exec, r_fmt, r_schema)| {
            let mut specs: Vec<TurnSpec> =
                turns.into_iter().map(|(action, tokens)| TurnSpec { action, synthetic: false, tokens }).collect();
            if prefill {
                specs[0] = TurnSpec { action: ActionKind::Explore, synthetic: true, tokens: 0 };
            }
            SampleSpec { turns: specs, r_exec, r_fmt, r_schema }
        })
}

pub fn group_spec() -> impl Strategy<Value = Vec<SampleSpec>> {
    prop::collection::vec(sample_spec(6), 2..=8)
}
