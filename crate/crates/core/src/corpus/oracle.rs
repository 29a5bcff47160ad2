//! Brute-force constraint-satisfaction reference used to label corpora.
//!
//! It reads a query literally: a node matches an entity when it carries the
//! label, every descriptor, a qualifying interaction record and, for each
//! relation clause, an edge from some node matching the anchor. It shares
//! no code with the resolver's filtering, ranking or memory windows.

use chrono::{DateTime, Utc};

use crate::query::{EntitySpec, ReferenceQuery, RelationClause, TimeWindow};
use crate::scene_graph::{ObjectNode, RelationalGraph, SpatialRelation};

/// Inflected forms the corpus generator may speak or record, by lemma.
pub const VERB_FORMS: &[(&str, &[&str])] = &[
    ("move", &["move", "moved", "moves", "moving"]),
    ("fix", &["fix", "fixed", "fixes", "fixing"]),
    ("rotate", &["rotate", "rotated", "rotates", "rotating"]),
    ("select", &["select", "selected", "selects", "selecting"]),
    ("touch", &["touch", "touched", "touches", "touching"]),
    ("check", &["check", "checked", "checks", "checking"]),
    ("lift", &["lift", "lifted", "lifts", "lifting"]),
    ("flip", &["flip", "flipped", "flips", "flipping"]),
    ("inspect", &["inspect", "inspected", "inspects", "inspecting"]),
    ("tap", &["tap", "tapped", "taps", "tapping"]),
    ("clean", &["clean", "cleaned", "cleans", "cleaning"]),
    ("mark", &["mark", "marked", "marks", "marking"]),
];

fn lemma(word: &str) -> Option<&'static str> {
    let w = word.to_lowercase();
    VERB_FORMS
        .iter()
        .find(|(_, forms)| forms.contains(&w.as_str()))
        .map(|(l, _)| *l)
}

/// Timing facts the oracle needs about the asking session.
#[derive(Debug, Clone)]
pub struct OracleClock {
    pub now: DateTime<Utc>,
    pub session_id: String,
    pub session_started_at: DateTime<Utc>,
    pub minutes_ago_s: i64,
}

impl OracleClock {
    pub fn for_graph(graph: &RelationalGraph, now: DateTime<Utc>, minutes_ago_s: i64) -> Self {
        OracleClock {
            now,
            session_id: graph.session_id().to_string(),
            session_started_at: graph.session_started_at(),
            minutes_ago_s,
        }
    }
}

const DAY_S: i64 = 86_400;

fn day_number(t: DateTime<Utc>) -> i64 {
    t.timestamp().div_euclid(DAY_S)
}

fn memory_ok(node: &ObjectNode, verb: Option<&str>, window: TimeWindow, clock: &OracleClock) -> bool {
    let want = verb.map(|v| lemma(v).map(str::to_string).unwrap_or_else(|| v.to_lowercase()));
    node.memory.iter().any(|r| {
        if let Some(want) = &want {
            let got = lemma(&r.action).map(str::to_string).unwrap_or_else(|| r.action.to_lowercase());
            if &got != want {
                return false;
            }
        }
        let age_us = clock.now.timestamp_micros() - r.ts.timestamp_micros();
        match window {
            TimeWindow::MinutesAgo => (0..=clock.minutes_ago_s * 1_000_000).contains(&age_us),
            TimeWindow::ThisSessionEarlier => r.session_id == clock.session_id && age_us > 0,
            TimeWindow::PreviousSession => {
                r.session_id != clock.session_id
                    && r.ts.timestamp_micros() < clock.session_started_at.timestamp_micros()
            }
            TimeWindow::Yesterday => day_number(r.ts) == day_number(clock.now) - 1,
        }
    })
}

fn relation_ok(graph: &RelationalGraph, node: &ObjectNode, clause: &RelationClause, clock: &OracleClock) -> bool {
    graph.nodes().any(|anchor| {
        anchor.id != node.id
            && matches(graph, anchor, &clause.anchor, &[], clock)
            && graph.edges().iter().any(|e| {
                e.from == anchor.id
                    && e.to == node.id
                    && (clause.relation == SpatialRelation::Adjacent || clause.relation == e.relation)
            })
    })
}

/// Does `node` literally satisfy `spec` plus the extra `clauses`?
pub fn matches(
    graph: &RelationalGraph,
    node: &ObjectNode,
    spec: &EntitySpec,
    clauses: &[RelationClause],
    clock: &OracleClock,
) -> bool {
    if let Some(label) = &spec.label {
        if !node.label.eq_ignore_ascii_case(label) {
            return false;
        }
    }
    for d in &spec.descriptors {
        if !node.descriptors.iter().any(|nd| nd.eq_ignore_ascii_case(d)) {
            return false;
        }
    }
    if let Some(cue) = &spec.memory_cue {
        if !memory_ok(node, cue.verb.as_deref(), cue.window, clock) {
            return false;
        }
    }
    spec.relations
        .iter()
        .chain(clauses)
        .all(|c| relation_ok(graph, node, c, clock))
}

/// Every node that satisfies the query's target, in id order.
pub fn satisfying(graph: &RelationalGraph, query: &ReferenceQuery, clock: &OracleClock) -> Vec<String> {
    graph
        .nodes()
        .filter(|n| matches(graph, n, &query.target, &query.relation_clauses, clock))
        .map(|n| n.id.clone())
        .collect()
}

/// Every anchor in the query (at any depth) is met by exactly one node.
pub fn anchors_unique(graph: &RelationalGraph, query: &ReferenceQuery, clock: &OracleClock) -> bool {
    fn walk(graph: &RelationalGraph, clauses: &[RelationClause], clock: &OracleClock) -> bool {
        clauses.iter().all(|c| {
            let n = graph
                .nodes()
                .filter(|node| matches(graph, node, &c.anchor, &[], clock))
                .count();
            n == 1 && walk(graph, &c.anchor.relations, clock)
        })
    }
    walk(graph, &query.relation_clauses, clock) && walk(graph, &query.target.relations, clock)
}

fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// What a literal reading predicts for a query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    /// Exactly one node satisfies every constraint.
    Unique(String),
    /// Several satisfy it and the description cannot tell the top two apart.
    Tied(Vec<String>),
    /// Nothing satisfies it, an anchor is not unique, or several satisfy it
    /// but one is described strictly better.
    Other,
}

/// Classifies a query. The tie rule covers the two spec shapes the
/// generator emits: a label-only or empty target, where survivors with the
/// same number of description words are indistinguishable, and a full
/// description shared verbatim by several nodes.
pub fn verdict(graph: &RelationalGraph, query: &ReferenceQuery, clock: &OracleClock) -> Verdict {
    if !anchors_unique(graph, query, clock) {
        return Verdict::Other;
    }
    let hits = satisfying(graph, query, clock);
    match hits.len() {
        0 => Verdict::Other,
        1 => Verdict::Unique(hits[0].clone()),
        _ => {
            let spec_words = token_count(&query.target.attribute_text());
            let word_counts: Vec<usize> = hits
                .iter()
                .map(|id| {
                    let n = graph.node(id).expect("hit from graph");
                    n.descriptors.iter().map(|d| token_count(d)).sum::<usize>() + token_count(&n.label)
                })
                .collect();
            let fewest = *word_counts.iter().min().expect("non-empty");
            let tied: Vec<String> = hits
                .iter()
                .zip(&word_counts)
                .filter(|(_, &c)| spec_words == 0 || c == fewest)
                .map(|(id, _)| id.clone())
                .collect();
            if tied.len() >= 2 {
                Verdict::Tied(tied)
            } else {
                Verdict::Other
            }
        }
    }
}
