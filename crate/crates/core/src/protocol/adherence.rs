use std::collections::BTreeSet;

use super::{ActionContent, ActionKind, ProtocolVariant, Trajectory, Turn, VerifiedSchema};

/// Whether `action` may be taken next. Any action of the variant is allowed
/// at any step (looping back is fine); Confirm is always allowed.
pub fn check_transition(variant: ProtocolVariant, action: ActionKind, _prior_turns: &[Turn]) -> bool {
    action == ActionKind::Confirm || variant.allows(action)
}

/// Full protocol adherence under the four-phase protocol.
pub fn full_adherence(trajectory: &Trajectory) -> bool {
    full_adherence_under(ProtocolVariant::Epgc, trajectory)
}

/// Every turn well formed, every action category of the variant used at
/// least once, and no error observation anywhere.
pub fn full_adherence_under(variant: ProtocolVariant, trajectory: &Trajectory) -> bool {
    let used: BTreeSet<ActionKind> = trajectory.turns.iter().map(|t| t.action).collect();
    trajectory.turns.iter().all(|t| t.format_ok)
        && variant.required_actions().iter().all(|a| used.contains(a))
        && !trajectory.turns.iter().any(|t| t.observation.as_ref().is_some_and(|o| o.is_error()))
}

/// Schema of the last Propose turn, if any turn proposed a parseable schema.
pub fn extract_proposed_schema(trajectory: &Trajectory) -> Option<VerifiedSchema> {
    let last = trajectory.turns.iter().rev().find(|t| t.action == ActionKind::Propose)?;
    match &last.content {
        ActionContent::Schema { schema } => Some(schema.clone()),
        _ => None,
    }
}
