//! Turns a resolution into what the headset shows: a pointer with a short
//! summary, or the raw transcript when nothing was resolved.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::query::{EntitySpec, ReferenceQuery};
use crate::resolver::ResolutionResult;
use crate::scene_graph::{ObjectNode, RelationalGraph};

/// Gap between the top of the object and the pointer tip.
pub const POINTER_CLEARANCE_M: f64 = 0.1;
pub const MAX_SUMMARY_WORDS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DirectiveMode {
    Pointer,
    FallbackTranscript,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceStep {
    pub letter: char,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub referent_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceDirective {
    pub mode: DirectiveMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_point: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<GuidanceStep>,
    pub transcript: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub referent_id: Option<String>,
    pub active: bool,
}

/// Optional summary generator (an LLM upstream). Anything it returns that
/// is empty or over the word budget is replaced by the template.
pub trait Summarizer: Send + Sync {
    fn summarize(&self, action: &str, node: &ObjectNode, graph: &RelationalGraph) -> Result<String, String>;
}

pub fn pointer_anchor(node: &ObjectNode) -> Vec3 {
    node.center + Vec3::new(0.0, node.half_extents.y + POINTER_CLEARANCE_M, 0.0)
}

/// A descriptor of `node` that sets it apart from other nodes with the same
/// label, or `None` when the label alone is unique.
pub fn distinguishing_descriptor<'a>(node: &'a ObjectNode, graph: &RelationalGraph) -> Option<&'a str> {
    let peers: Vec<&ObjectNode> = graph
        .nodes()
        .filter(|n| n.id != node.id && n.label.eq_ignore_ascii_case(&node.label))
        .collect();
    if peers.is_empty() {
        return None;
    }
    let held_by = |d: &str| {
        peers
            .iter()
            .filter(|p| p.descriptors.iter().any(|pd| pd.eq_ignore_ascii_case(d)))
            .count()
    };
    node.descriptors
        .iter()
        .min_by_key(|d| held_by(d))
        .map(String::as_str)
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn clip_words(text: &str) -> String {
    text.split_whitespace().take(MAX_SUMMARY_WORDS).collect::<Vec<_>>().join(" ")
}

pub fn template_summary(action: &str, node: &ObjectNode, graph: &RelationalGraph) -> String {
    let mut words = vec![capitalize(action.trim()), "the".to_string()];
    if let Some(d) = distinguishing_descriptor(node, graph) {
        words.push(d.to_string());
    }
    words.push(node.label.clone());
    clip_words(&words.join(" "))
}

fn describe_spec(action: &str, spec: &EntitySpec) -> String {
    let what = spec.attribute_text();
    let what = if what.is_empty() { "object".to_string() } else { what };
    clip_words(&format!("{} the {}", capitalize(action.trim()), what))
}

fn summary_for(
    action: &str,
    node: &ObjectNode,
    graph: &RelationalGraph,
    summarizer: Option<&dyn Summarizer>,
) -> String {
    if let Some(s) = summarizer {
        match s.summarize(action, node, graph) {
            Ok(text) => {
                let n = text.split_whitespace().count();
                if n > 0 && n <= MAX_SUMMARY_WORDS {
                    return text;
                }
                log::warn!("summarizer output has {n} words; using template");
            }
            Err(e) => log::warn!("summarizer failed: {e}; using template"),
        }
    }
    template_summary(action, node, graph)
}

pub fn fallback_directive(transcript: &str) -> GuidanceDirective {
    GuidanceDirective {
        mode: DirectiveMode::FallbackTranscript,
        anchor_point: None,
        summary: None,
        steps: Vec::new(),
        transcript: transcript.to_string(),
        referent_id: None,
        active: true,
    }
}

/// Builds the directive for `result`. `step_referents` holds the resolved
/// node for each step of a multi-step query, in order.
pub fn make_directive(
    graph: &RelationalGraph,
    query: &ReferenceQuery,
    result: &ResolutionResult,
    step_referents: &[Option<String>],
    summarizer: Option<&dyn Summarizer>,
) -> GuidanceDirective {
    let node = match result.target_id.as_deref().and_then(|id| graph.node(id)) {
        Some(n) if result.is_resolved() => n,
        _ => return fallback_directive(&result.raw_transcript),
    };
    let steps = query
        .steps
        .iter()
        .enumerate()
        .map(|(i, step)| {
            let referent = step_referents.get(i).cloned().flatten();
            let text = match referent.as_deref().and_then(|id| graph.node(id)) {
                Some(n) => summary_for(&step.action, n, graph, summarizer),
                None => describe_spec(&step.action, &step.target),
            };
            GuidanceStep {
                letter: (b'A' + (i % 26) as u8) as char,
                text,
                referent_id: referent,
            }
        })
        .collect();
    GuidanceDirective {
        mode: DirectiveMode::Pointer,
        anchor_point: Some(pointer_anchor(node)),
        summary: Some(summary_for(&query.action, node, graph, summarizer)),
        steps,
        transcript: result.raw_transcript.clone(),
        referent_id: Some(node.id.clone()),
        active: true,
    }
}

/// Deactivates the directive once the operator acts on its referent.
/// Returns whether it changed.
pub fn expire_on_action(directive: &mut GuidanceDirective, target_id: &str) -> bool {
    if directive.active && directive.referent_id.as_deref() == Some(target_id) {
        directive.active = false;
        true
    } else {
        false
    }
}
