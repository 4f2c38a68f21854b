//! Turning a grounding into task events. Everything produced here goes
//! through the task state machine, so plans still wait for confirmation.

use crate::planning::TaskEvent;

use super::{LanguageError, SymbolKind, SymbolSpace};

/// Named pose used by the stow action.
pub const STOW_POSE: &str = "stow";

pub fn command_from_grounding(grounding: &[String], space: &SymbolSpace) -> Result<Vec<TaskEvent>, LanguageError> {
    let of_kind = |k: SymbolKind| -> Vec<&str> {
        grounding
            .iter()
            .filter(|id| space.get(id).is_some_and(|s| s.kind == k))
            .map(String::as_str)
            .collect()
    };
    let actions = of_kind(SymbolKind::Action);
    let [action] = actions.as_slice() else {
        return Err(LanguageError::AmbiguousAction(actions.iter().map(|s| s.to_string()).collect()));
    };
    let tool = |id: &str| space.get(id).and_then(|s| s.attributes.get("tool")).cloned();
    let events = match *action {
        "action:grasp" => {
            let objects = of_kind(SymbolKind::Object);
            let [object] = objects.as_slice() else {
                return Err(LanguageError::MissingObject(action.to_string()));
            };
            let tool = tool(object).ok_or_else(|| LanguageError::MissingObject(action.to_string()))?;
            vec![TaskEvent::SelectTool { tool }, TaskEvent::RequestPlan]
        }
        "action:release" | "action:goto_sample" => vec![TaskEvent::RequestPlan],
        "action:execute" => vec![TaskEvent::Confirm],
        "action:stow" => vec![TaskEvent::GotoNamedPose { name: STOW_POSE.into() }],
        "action:stop" => vec![TaskEvent::Stop],
        other => return Err(LanguageError::AmbiguousAction(vec![other.to_string()])),
    };
    Ok(events)
}
