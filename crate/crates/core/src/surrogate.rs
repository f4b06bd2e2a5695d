//! The conversational surrogate embedded in each subgroup.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::analyzer::{DialogAnalyzer, Insight};
use crate::domain::{Author, ChatMessage, ForecastQuestion, SubgroupId};

pub const DEFAULT_MIN_GAP_MS: u64 = 25_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub subgroup_id: SubgroupId,
    /// `None` until the agent first speaks in the round.
    pub last_expression_time: Option<u64>,
    pub observed_through_seq: u64,
}

impl AgentState {
    pub fn new(subgroup_id: SubgroupId) -> Self {
        AgentState {
            subgroup_id,
            last_expression_time: None,
            observed_through_seq: 0,
        }
    }
}

/// Feed unseen subgroup messages to the analyzer and advance the watermark.
///
/// Messages at or below the watermark, or from other subgroups, are ignored,
/// so re-observing a range yields nothing. Analyzer failures yield no
/// insights but still advance the watermark.
pub fn observe(
    state: &AgentState,
    new_messages: &[ChatMessage],
    question: &ForecastQuestion,
    analyzer: &mut dyn DialogAnalyzer,
) -> (AgentState, Vec<Insight>) {
    let fresh: Vec<ChatMessage> = new_messages
        .iter()
        .filter(|m| m.subgroup_id == state.subgroup_id && m.seq > state.observed_through_seq)
        .cloned()
        .collect();
    let mut next = state.clone();
    let Some(high) = fresh.iter().map(|m| m.seq).max() else {
        return (next, Vec::new());
    };
    next.observed_through_seq = high;
    let human: Vec<ChatMessage> = fresh
        .into_iter()
        .filter(|m| matches!(m.author, Author::Participant(_)))
        .collect();
    if human.is_empty() {
        return (next, Vec::new());
    }
    let insights = analyzer
        .extract_insights(&state.subgroup_id, &human, question)
        .unwrap_or_default();
    (next, insights)
}

const TEMPLATES: [(&str, &str, &str); 4] = [
    ("Another group is leaning ", ": ", "."),
    (
        "Some folks in another Thinktank like ",
        " to cover, because ",
        ".",
    ),
    ("A different group made this case for ", ": ", ". Thoughts?"),
    (
        "Over in another room they're backing ",
        ". Their reasoning: ",
        ".",
    ),
];

pub fn template_count() -> usize {
    TEMPLATES.len()
}

pub fn render(template: usize, team: &str, reasons: &[String]) -> String {
    let (lead, mid, tail) = TEMPLATES[template % TEMPLATES.len()];
    let mut text = String::new();
    text.push_str(lead);
    text.push_str(team);
    text.push_str(mid);
    text.push_str(&reasons.join("; "));
    text.push_str(tail);
    text
}

/// Voice an insight from another subgroup as a chat line by the surrogate.
///
/// Returns `None` for an insight that originated in the agent's own subgroup.
pub fn express(
    state: &AgentState,
    insight: &Insight,
    template_seed: u64,
    question: &ForecastQuestion,
    seq: u64,
    timestamp: u64,
) -> Option<ChatMessage> {
    if insight.origin_subgroup == state.subgroup_id {
        return None;
    }
    let template = (template_seed % TEMPLATES.len() as u64) as usize;
    Some(ChatMessage {
        seq,
        timestamp,
        author: Author::Surrogate(state.subgroup_id.clone()),
        subgroup_id: state.subgroup_id.clone(),
        text: render(template, question.team(insight.side), &insight.reasons),
        annotation: Some(insight.id.clone()),
    })
}

/// Whether at least `min_gap` ms have passed since the agent last spoke.
pub fn pace_gate(state: &AgentState, now: u64, min_gap: u64) -> bool {
    match state.last_expression_time {
        None => true,
        Some(last) => now.saturating_sub(last) >= min_gap && now >= last,
    }
}
