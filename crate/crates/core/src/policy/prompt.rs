//! Text prompts for the two policy queries.
//!
//! The templates are kept verbatim, spelling included. Slots are `{history}`,
//! `{colors}` and `{init_plan}`; every `<image>` token is followed by an
//! `[obs:<hash prefix>]` tag naming the observation that fills it.

use super::{ProposalRequest, ReflectionRequest};
use crate::env::{Action, Observation};
use crate::taskgen::Location;

pub const PROPOSE_TEMPLATE: &str = include_str!("../../templates/propose.txt");
pub const REFLECT_TEMPLATE: &str = include_str!("../../templates/reflect.txt");
pub const ZERO_SHOT_TEMPLATE: &str = include_str!("../../templates/zero_shot.txt");

pub const IMAGE_TOKEN: &str = "<image>";

/// Hex characters of the observation hash used as a reference.
pub const OBS_REF_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Propose,
    Reflect,
}

/// Content-addressed reference to an observation.
pub fn obs_ref(obs: &Observation) -> String {
    obs.content_hash()[..OBS_REF_LEN].to_string()
}

pub fn history_slot(history: &[String]) -> String {
    if history.is_empty() {
        "none".to_string()
    } else {
        history.join(", ")
    }
}

/// Movable piece colors in palette order.
pub fn colors_slot(obs: &Observation) -> String {
    let mut pieces: Vec<_> = obs.pieces.iter().collect();
    pieces.sort_by_key(|p| p.id);
    pieces
        .iter()
        .map(|p| p.color.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn plan_slot(plan: &[Action]) -> String {
    plan.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(", ")
}

fn fill_images(template: &str, refs: &[String]) -> String {
    let mut out = String::with_capacity(template.len() + refs.len() * 24);
    let mut parts = template.split(IMAGE_TOKEN);
    out.push_str(parts.next().unwrap_or_default());
    for (i, part) in parts.enumerate() {
        out.push_str(IMAGE_TOKEN);
        if let Some(r) = refs.get(i) {
            out.push_str("[obs:");
            out.push_str(r);
            out.push(']');
        }
        out.push_str(part);
    }
    out
}

pub fn render_proposal(req: &ProposalRequest) -> String {
    let refs = [obs_ref(&req.goal), obs_ref(&req.current)];
    fill_images(PROPOSE_TEMPLATE, &refs)
        .replace("{history}", &history_slot(&req.history))
        .replace("{colors}", &colors_slot(&req.goal))
}

pub fn render_reflection(req: &ReflectionRequest) -> String {
    let refs = [obs_ref(&req.goal), obs_ref(&req.current), obs_ref(&req.future)];
    fill_images(REFLECT_TEMPLATE, &refs)
        .replace("{history}", &history_slot(&req.history))
        .replace("{init_plan}", &plan_slot(&req.plan))
        .replace("{colors}", &colors_slot(&req.goal))
}

/// Either request, for callers that dispatch on kind.
pub enum PromptRequest<'a> {
    Propose(&'a ProposalRequest),
    Reflect(&'a ReflectionRequest),
}

impl PromptRequest<'_> {
    pub fn kind(&self) -> PromptKind {
        match self {
            PromptRequest::Propose(_) => PromptKind::Propose,
            PromptRequest::Reflect(_) => PromptKind::Reflect,
        }
    }

    /// Observations in `<image>` order.
    pub fn observations(&self) -> Vec<&Observation> {
        match self {
            PromptRequest::Propose(r) => vec![&r.goal, &r.current],
            PromptRequest::Reflect(r) => vec![&r.goal, &r.current, &r.future],
        }
    }
}

pub fn render_prompt(req: PromptRequest<'_>) -> String {
    match req {
        PromptRequest::Propose(r) => render_proposal(r),
        PromptRequest::Reflect(r) => render_reflection(r),
    }
}

/// Wraps a proposal prompt with the instructions used for zero-shot models.
pub fn render_zero_shot(req: &ProposalRequest) -> String {
    ZERO_SHOT_TEMPLATE.replace("{prompt}", &render_proposal(req))
}

/// Text description of an observation, for logs and replays.
pub fn describe(obs: &Observation) -> String {
    let mut lines = Vec::new();
    for p in &obs.pieces {
        let place = match p.location {
            Location::OnTable => "on table",
            Location::InBoard => "in board",
            Location::InHand => "in hand",
        };
        let orient = match p.orientation {
            crate::taskgen::Orientation::Up => "up",
            crate::taskgen::Orientation::Down => "down",
        };
        lines.push(format!("  {:<8} {place:<9} {orient}", p.color));
    }
    lines.join("\n")
}
