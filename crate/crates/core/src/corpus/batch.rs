//! Runs a corpus through the engine and summarizes the outcome.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CorpusEntry, Expected};
use crate::engine::Engine;
use crate::query::Pattern;
use crate::resolver::{FallbackReason, ResolutionResult};
use crate::scene_graph::RelationalGraph;

#[derive(Debug, Error, PartialEq)]
pub enum BatchError {
    #[error("entry {index} references scene `{found}`, expected `{expected}`")]
    SceneMismatch {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("entry {index} references unknown node `{id}`")]
    UnknownNode { index: usize, id: String },
    #[error("--parallel requires a corpus without memory cues or setup actions (entry {0})")]
    ParallelWithMemory(usize),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BatchOptions {
    /// Resolve entries on several threads. Only valid when no entry
    /// depends on recorded interactions.
    pub parallel: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OutcomeClass {
    Resolved,
    Fallback,
    ParseError,
}

impl OutcomeClass {
    pub fn of(result: &ResolutionResult) -> Self {
        match result.reason {
            None => OutcomeClass::Resolved,
            Some(FallbackReason::ParseFailUpstream) => OutcomeClass::ParseError,
            Some(_) => OutcomeClass::Fallback,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryOutcome {
    pub index: usize,
    pub transcript: String,
    pub expected: Expected,
    pub class: OutcomeClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<FallbackReason>,
    pub correct: bool,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub entries: usize,
    pub resolved: usize,
    pub fallback: usize,
    pub parse_error: usize,
    pub resolved_rate: f64,
    pub fallback_rate: f64,
    pub parse_error_rate: f64,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternStats {
    pub entries: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub p50: f64,
    pub p95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub totals: Totals,
    pub per_pattern: BTreeMap<Pattern, PatternStats>,
    pub per_reason: BTreeMap<FallbackReason, usize>,
    pub latency_ms: Latency,
    /// Entries whose outcome disagreed with the expectation.
    pub mismatches: Vec<EntryOutcome>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

fn check(scene: &RelationalGraph, entries: &[CorpusEntry], opts: BatchOptions) -> Result<(), BatchError> {
    for e in entries {
        if e.scene_ref != scene.session_id() {
            return Err(BatchError::SceneMismatch {
                index: e.index,
                expected: scene.session_id().to_string(),
                found: e.scene_ref.clone(),
            });
        }
        let ids = e.expected_target_id.target().into_iter().chain(e.setup.iter().map(|s| s.target_id.as_str()));
        for id in ids {
            if scene.node(id).is_none() {
                return Err(BatchError::UnknownNode {
                    index: e.index,
                    id: id.to_string(),
                });
            }
        }
        if opts.parallel && (!e.setup.is_empty() || e.patterns.contains(&Pattern::Memory)) {
            return Err(BatchError::ParallelWithMemory(e.index));
        }
    }
    Ok(())
}

fn judge(entry: &CorpusEntry, result: &ResolutionResult, latency_ms: f64) -> EntryOutcome {
    let correct = match &entry.expected_target_id {
        Expected::Target(id) => result.target_id.as_deref() == Some(id.as_str()),
        Expected::Fallback => {
            !result.is_resolved() && entry.expected_reason.is_none_or(|r| result.reason == Some(r))
        }
    };
    EntryOutcome {
        index: entry.index,
        transcript: entry.transcript.clone(),
        expected: entry.expected_target_id.clone(),
        class: OutcomeClass::of(result),
        target_id: result.target_id.clone(),
        reason: result.reason,
        correct,
        latency_ms,
    }
}

fn run_one(engine: &Engine, graph: &RelationalGraph, entry: &CorpusEntry) -> EntryOutcome {
    let start = Instant::now();
    let out = engine.interpret(graph, &entry.transcript, None, entry.now);
    let ms = start.elapsed().as_secs_f64() * 1e3;
    judge(entry, &out.result, ms)
}

/// Runs `entries` in order against a copy of `scene`, applying each
/// entry's setup actions first.
pub fn run_batch(
    engine: &Engine,
    scene: &RelationalGraph,
    entries: &[CorpusEntry],
    opts: BatchOptions,
) -> Result<(BatchReport, Vec<EntryOutcome>), BatchError> {
    check(scene, entries, opts)?;
    let outcomes: Vec<EntryOutcome> = if opts.parallel {
        let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(2);
        let chunk = entries.len().div_ceil(threads).max(1);
        std::thread::scope(|s| {
            let handles: Vec<_> = entries
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(|e| run_one(engine, scene, e)).collect::<Vec<_>>()))
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("batch worker panicked")).collect()
        })
    } else {
        let mut graph = scene.clone();
        let mut v = Vec::with_capacity(entries.len());
        for e in entries {
            for s in &e.setup {
                s.apply(&mut graph).map_err(|_| BatchError::UnknownNode {
                    index: e.index,
                    id: s.target_id.clone(),
                })?;
            }
            v.push(run_one(engine, &graph, e));
        }
        v
    };
    Ok((summarize(entries, &outcomes), outcomes))
}

pub fn summarize(entries: &[CorpusEntry], outcomes: &[EntryOutcome]) -> BatchReport {
    let n = outcomes.len();
    let count = |c: OutcomeClass| outcomes.iter().filter(|o| o.class == c).count();
    let (resolved, fallback, parse_error) = (
        count(OutcomeClass::Resolved),
        count(OutcomeClass::Fallback),
        count(OutcomeClass::ParseError),
    );
    let correct = outcomes.iter().filter(|o| o.correct).count();

    let mut per_pattern: BTreeMap<Pattern, PatternStats> = BTreeMap::new();
    for (e, o) in entries.iter().zip(outcomes) {
        for p in &e.patterns {
            let s = per_pattern.entry(*p).or_insert(PatternStats {
                entries: 0,
                correct: 0,
                accuracy: 0.0,
            });
            s.entries += 1;
            s.correct += o.correct as usize;
        }
    }
    for s in per_pattern.values_mut() {
        s.accuracy = ratio(s.correct, s.entries);
    }
    let mut per_reason = BTreeMap::new();
    for o in outcomes {
        if let Some(r) = o.reason {
            *per_reason.entry(r).or_insert(0) += 1;
        }
    }
    let mut lat: Vec<f64> = outcomes.iter().map(|o| o.latency_ms).collect();
    lat.sort_by(f64::total_cmp);

    BatchReport {
        totals: Totals {
            entries: n,
            resolved,
            fallback,
            parse_error,
            resolved_rate: ratio(resolved, n),
            fallback_rate: ratio(fallback, n),
            parse_error_rate: ratio(parse_error, n),
            correct,
            accuracy: ratio(correct, n),
        },
        per_pattern,
        per_reason,
        latency_ms: Latency {
            p50: percentile(&lat, 50.0),
            p95: percentile(&lat, 95.0),
        },
        mismatches: outcomes.iter().filter(|o| !o.correct).cloned().collect(),
    }
}
