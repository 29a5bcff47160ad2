//! Benchmark corpora: scenes, a literal oracle, a seeded generator and a
//! batch runner that scores the engine against generated ground truth.

pub mod batch;
pub mod generate;
pub mod oracle;
pub mod scenes;

use std::fmt;
use std::io::{BufRead, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::query::{Pattern, ReferenceQuery};
use crate::resolver::FallbackReason;
use crate::scene_graph::{InteractionRecord, RelationalGraph};

pub use batch::{run_batch, BatchError, BatchOptions, BatchReport};
pub use generate::{generate, CorpusKind, GenConfig, DEFAULT_WEIGHTS};
pub use scenes::{benchmark_scene, random_scene};

pub const EXPECT_FALLBACK: &str = "EXPECT_FALLBACK";

/// Ground truth for an entry: a node id, or the sentinel for "must not
/// point at anything".
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expected {
    Target(String),
    Fallback,
}

impl Expected {
    pub fn target(&self) -> Option<&str> {
        match self {
            Expected::Target(id) => Some(id),
            Expected::Fallback => None,
        }
    }
}

impl fmt::Display for Expected {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.target().unwrap_or(EXPECT_FALLBACK))
    }
}

impl Serialize for Expected {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Expected {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == EXPECT_FALLBACK {
            Ok(Expected::Fallback)
        } else if s.trim().is_empty() {
            Err(serde::de::Error::custom("expected_target_id is empty"))
        } else {
            Ok(Expected::Target(s))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntryKind {
    Unambiguous,
    Ambiguous,
    Malformed,
}

/// An interaction to record before the entry is resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupAction {
    pub target_id: String,
    pub actor: String,
    pub action: String,
    pub ts: DateTime<Utc>,
    pub session_id: String,
}

impl SetupAction {
    pub fn record(&self) -> InteractionRecord {
        InteractionRecord::new(&self.actor, &self.action, self.ts, self.session_id.clone())
    }

    pub fn apply(&self, graph: &mut RelationalGraph) -> Result<(), crate::scene_graph::GraphError> {
        graph.record_interaction(&self.target_id, self.record())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub index: usize,
    pub kind: EntryKind,
    pub transcript: String,
    pub expected_target_id: Expected,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_reason: Option<FallbackReason>,
    /// Patterns the transcript exhibits.
    #[serde(default)]
    pub patterns: Vec<Pattern>,
    /// Pattern the generator drew for this entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drawn: Option<Pattern>,
    pub scene_ref: String,
    pub now: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub setup: Vec<SetupAction>,
    /// The structured query the transcript was rendered from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<ReferenceQuery>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus line {line}: {message}")]
    Line { line: usize, message: String },
}

pub fn write_jsonl<W: Write>(mut w: W, entries: &[CorpusEntry]) -> std::io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl(entries: &[CorpusEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    write_jsonl(&mut out, entries).expect("writing to memory");
    out
}

/// Reads one entry per non-blank line.
pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<CorpusEntry>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| CorpusError::Line {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(entry);
    }
    Ok(out)
}
