//! Temporal-action matching against a node's interaction history.

use chrono::{DateTime, Duration, Utc};

use crate::query::{MemoryCue, TimeWindow};
use crate::scene_graph::{InteractionRecord, ObjectNode};

/// Where "now" sits relative to the session that is asking.
#[derive(Debug, Clone)]
pub struct MemoryContext<'a> {
    pub now: DateTime<Utc>,
    pub session_id: &'a str,
    pub session_started_at: DateTime<Utc>,
    pub minutes_ago_window: Duration,
}

const IRREGULAR: &[(&str, &str)] = &[
    ("took", "take"),
    ("taken", "take"),
    ("saw", "see"),
    ("seen", "see"),
    ("made", "make"),
    ("left", "leave"),
    ("brought", "bring"),
    ("held", "hold"),
    ("threw", "throw"),
    ("thrown", "throw"),
    ("got", "get"),
    ("gotten", "get"),
    ("put", "put"),
    ("set", "set"),
    ("hit", "hit"),
    ("spun", "spin"),
    ("stuck", "stick"),
    ("found", "find"),
    ("gave", "give"),
    ("given", "give"),
    ("went", "go"),
    ("did", "do"),
    ("done", "do"),
    ("built", "build"),
    ("wrote", "write"),
    ("written", "write"),
    ("broke", "break"),
    ("broken", "break"),
    ("shook", "shake"),
    ("chose", "choose"),
    ("chosen", "choose"),
];

/// Crude suffix stripper: "fixed", "fixes" and "fix" share a stem, as do
/// "moved", "moving" and "move".
pub fn stem(word: &str) -> String {
    let w = word.trim().to_lowercase();
    let irregular = IRREGULAR.iter().find(|(form, _)| *form == w).map(|(_, base)| *base);
    let mut s = irregular.unwrap_or(&w).to_string();
    if s.len() > 4 && s.ends_with("ied") {
        s.truncate(s.len() - 3);
        s.push('y');
    } else if s.len() > 4 && s.ends_with("ies") {
        s.truncate(s.len() - 3);
        s.push('y');
    } else if s.len() > 4 && s.ends_with("ing") {
        s.truncate(s.len() - 3);
    } else if s.len() > 3 && s.ends_with("ed") {
        s.truncate(s.len() - 2);
    } else if s.len() > 3 && (s.ends_with("xes") || s.ends_with("ches") || s.ends_with("shes") || s.ends_with("sses")) {
        s.truncate(s.len() - 2);
    } else if s.len() > 3 && s.ends_with('s') && !s.ends_with("ss") {
        s.truncate(s.len() - 1);
    }
    let b = s.as_bytes();
    if b.len() > 2 && b[b.len() - 1] == b[b.len() - 2] && !b"aeiou".contains(&b[b.len() - 1]) {
        s.truncate(s.len() - 1);
    }
    if s.len() > 2 && s.ends_with('e') {
        s.truncate(s.len() - 1);
    }
    s
}

pub fn verbs_match(a: &str, b: &str) -> bool {
    stem(a) == stem(b)
}

pub fn record_matches(record: &InteractionRecord, cue: &MemoryCue, ctx: &MemoryContext<'_>) -> bool {
    if let Some(verb) = &cue.verb {
        if !verbs_match(verb, &record.action) {
            return false;
        }
    }
    match cue.window {
        TimeWindow::MinutesAgo => record.ts <= ctx.now && ctx.now - record.ts <= ctx.minutes_ago_window,
        TimeWindow::ThisSessionEarlier => record.session_id == ctx.session_id && record.ts < ctx.now,
        TimeWindow::PreviousSession => {
            record.session_id != ctx.session_id && record.ts < ctx.session_started_at
        }
        TimeWindow::Yesterday => {
            let yesterday = ctx.now.date_naive().pred_opt();
            yesterday == Some(record.ts.date_naive())
        }
    }
}

pub fn match_memory(node: &ObjectNode, cue: &MemoryCue, ctx: &MemoryContext<'_>) -> bool {
    node.memory.iter().any(|r| record_matches(r, cue, ctx))
}
