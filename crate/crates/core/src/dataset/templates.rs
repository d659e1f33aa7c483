//! Template instruction realiser and its inverse.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::{object_index, target_phrase, SlotTuple, Task, OBJECTS, TARGETS};
use crate::error::{invalid, Result};
use crate::params::Param;

pub const TEMPLATES_PER_TASK: usize = 5;

fn templates(task: Task) -> [&'static str; TEMPLATES_PER_TASK] {
    match task {
        Task::GlobalOutline => [
            "Capture the overall outline of the {object}, including its {target}.",
            "Scan the whole {object} to record its outer shape and {target}.",
            "Get a complete contour of the {object} with the {target} in view.",
            "Record the global silhouette of the {object} around the {target}.",
            "Survey the entire {object} outline, covering the {target}.",
        ],
        Task::LocalOutline => [
            "Trace the outline of the {target} on the {object}.",
            "Capture the local contour around the {target} of the {object}.",
            "Scan just the {target} region of the {object} for its shape.",
            "Record the edge profile of the {target} on the {object}.",
            "Get the rough shape of the {target} area on the {object}.",
        ],
        Task::GlobalDetail => [
            "Inspect the entire {object} in fine detail, including the {target}.",
            "Scan the whole {object} at fine resolution, paying attention to the {target}.",
            "Capture fine surface detail across the complete {object} and its {target}.",
            "Examine every part of the {object} closely, {target} included.",
            "Perform a detailed scan over all of the {object} with its {target}.",
        ],
        Task::LocalDetail => [
            "Inspect the {target} on the {object} in detail.",
            "Examine the {target} of the {object} closely for small defects.",
            "Scan the {target} on the {object} at fine resolution.",
            "Look for tiny flaws in the {target} of the {object}.",
            "Capture fine detail of the {target} region on the {object}.",
        ],
        Task::Metrology => [
            "Measure the dimensions of the {target} on the {object}.",
            "Take precise measurements of the {target} of the {object}.",
            "Check the {target} on the {object} against its nominal geometry.",
            "Quantify the height and width of the {target} on the {object}.",
            "Gauge the {target} of the {object} for dimensional accuracy.",
        ],
        Task::Registration => [
            "Scan the {object} so it can be aligned using its {target}.",
            "Register the {object} pose with reference to the {target}.",
            "Capture the {object} for alignment against its {target}.",
            "Locate the {object} position using the {target} as a reference.",
            "Acquire the {object} geometry to register it by the {target}.",
        ],
    }
}

/// Render the instruction for `slot` on `object_id`. Template choice is
/// `template_seed mod 5`.
pub fn realize_instruction(slot: &SlotTuple, object_id: &str, template_seed: u64) -> Result<String> {
    slot.validate()?;
    let object = object_index(object_id)
        .map(|i| OBJECTS[i].1)
        .ok_or_else(|| invalid(format!("unknown object '{object_id}'")))?;
    let template = templates(slot.task)[(template_seed % TEMPLATES_PER_TASK as u64) as usize];
    Ok(template
        .replace("{object}", object)
        .replace("{target}", &target_phrase(&slot.target)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedInstruction {
    pub slot: SlotTuple,
    pub object_id: String,
    pub template: usize,
}

fn inverse_table() -> &'static HashMap<String, (Task, usize, usize, usize)> {
    static TABLE: OnceLock<HashMap<String, (Task, usize, usize, usize)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = HashMap::new();
        for task in Task::ALL {
            for (t, template) in templates(task).iter().enumerate() {
                for target in 0..TARGETS.len() {
                    for object in 0..OBJECTS.len() {
                        let text = template
                            .replace("{object}", OBJECTS[object].1)
                            .replace("{target}", &target_phrase(TARGETS[target]));
                        let prev = table.insert(text, (task, t, target, object));
                        debug_assert!(prev.is_none(), "template collision");
                    }
                }
            }
        }
        table
    })
}

/// Exact inverse of [`realize_instruction`]; `None` for any other text.
pub fn parse_instruction(text: &str) -> Option<ParsedInstruction> {
    let &(task, template, target, object) = inverse_table().get(text.trim())?;
    Some(ParsedInstruction {
        slot: SlotTuple::new(task, TARGETS[target]).expect("table slots are valid"),
        object_id: OBJECTS[object].0.to_string(),
        template,
    })
}

/// Keyword reading of free-form instructions. Falls back to the whole body
/// when no known target is named.
pub fn parse_instruction_loose(text: &str) -> (SlotTuple, Option<String>) {
    if let Some(p) = parse_instruction(text) {
        return (p.slot, Some(p.object_id));
    }
    let lower = text.to_lowercase();
    let has = |words: &[&str]| words.iter().any(|w| lower.contains(w));

    let mut targets: Vec<&str> = TARGETS.to_vec();
    targets.sort_by_key(|t| std::cmp::Reverse(t.len()));
    let target = targets
        .into_iter()
        .find(|t| lower.contains(&target_phrase(t)))
        .unwrap_or("full_body");
    let object = OBJECTS
        .iter()
        .find(|(_, phrase)| lower.contains(&phrase.to_lowercase()))
        .map(|(tok, _)| tok.to_string());

    let global = has(&["entire", "whole", "overall", "complete", "global", "every part", "all of"]);
    let task = if has(&["measure", "dimension", "gauge", "quantify", "nominal"]) {
        Task::Metrology
    } else if has(&["align", "register", "reference", "locate"]) {
        Task::Registration
    } else if has(&["detail", "fine", "closely", "flaw", "defect"]) {
        if global {
            Task::GlobalDetail
        } else {
            Task::LocalDetail
        }
    } else if global || target == "full_body" {
        Task::GlobalOutline
    } else {
        Task::LocalOutline
    };
    let slot = SlotTuple::new(task, target).expect("keyword slots are valid");
    (slot, object)
}

/// Whether `text` contains any parameter vocabulary token as a whole word.
pub fn mentions_parameter_value(text: &str) -> bool {
    let words: Vec<&str> = text
        .split(|c: char| c.is_whitespace() || matches!(c, ',' | '.' | ';' | ':' | '!' | '?' | '(' | ')'))
        .filter(|w| !w.is_empty())
        .collect();
    Param::ALL.iter().any(|p| {
        p.vocabulary()
            .iter()
            .any(|value| words.iter().any(|w| w == value) || (value.contains('/') && text.contains(value)))
    })
}
