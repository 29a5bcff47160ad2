//! Session-level orchestration: parse, resolve, build guidance, record
//! operator actions.

use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::guidance::{expire_on_action, fallback_directive, make_directive, GuidanceDirective, Summarizer};
use crate::matcher::{CachedEmbedder, Embedder, HashingEmbedder};
use crate::parser::{GrammarParser, ReferenceParser};
use crate::query::{classify_pattern, Pattern, ReferenceQuery};
use crate::resolver::{FallbackReason, ResolutionConfig, ResolutionResult, Resolver, TraceStep};
use crate::scene_graph::{GraphError, InteractionRecord, ObjectNode, RelationalGraph};
use crate::view::CameraPose;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Settable clock for tests and replay.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(at: DateTime<Utc>) -> Self {
        ManualClock(Mutex::new(at))
    }

    pub fn set(&self, at: DateTime<Utc>) {
        *self.0.lock() = at;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock()
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub graph: RelationalGraph,
    pub directives: Vec<GuidanceDirective>,
    pub created_at: DateTime<Utc>,
}

impl Session {
    pub fn new(id: impl Into<String>, now: DateTime<Utc>) -> Self {
        let id = id.into();
        Session {
            graph: RelationalGraph::empty(id.clone(), now),
            id,
            directives: Vec::new(),
            created_at: now,
        }
    }

    /// Continues from a persisted graph under a new session id; the stored
    /// memory becomes "previous session" history.
    pub fn resume(id: impl Into<String>, saved: &[u8], now: DateTime<Utc>) -> Result<Self, GraphError> {
        let id = id.into();
        let graph = RelationalGraph::load(saved)?.resume(id.clone(), now);
        Ok(Session {
            id,
            graph,
            directives: Vec::new(),
            created_at: now,
        })
    }

    pub fn persist(&self) -> Vec<u8> {
        self.graph.save()
    }

    pub fn active_directives(&self) -> impl Iterator<Item = &GuidanceDirective> {
        self.directives.iter().filter(|d| d.active)
    }
}

/// New pose reported alongside an action (e.g. after a move).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub center: Vec3,
    pub half_extents: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionEvent {
    pub actor: String,
    pub action: String,
    pub target_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceOutcome {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<ReferenceQuery>,
    pub patterns: Vec<Pattern>,
    pub result: ResolutionResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination: Option<Vec3>,
    pub directive: GuidanceDirective,
}

pub struct Engine {
    parser: Arc<dyn ReferenceParser>,
    resolver: Resolver,
    summarizer: Option<Arc<dyn Summarizer>>,
}

impl Engine {
    /// Grammar parser, cached hashing embedder, no external hooks.
    pub fn new(config: ResolutionConfig) -> Self {
        let embedder: Arc<dyn Embedder> = Arc::new(CachedEmbedder::new(HashingEmbedder::default()));
        Engine {
            parser: Arc::new(GrammarParser),
            resolver: Resolver::new(embedder, config),
            summarizer: None,
        }
    }

    pub fn with_parts(
        parser: Arc<dyn ReferenceParser>,
        resolver: Resolver,
        summarizer: Option<Arc<dyn Summarizer>>,
    ) -> Self {
        Engine {
            parser,
            resolver,
            summarizer,
        }
    }

    pub fn resolver(&self) -> &Resolver {
        &self.resolver
    }

    pub fn config(&self) -> &ResolutionConfig {
        self.resolver.config()
    }

    /// Replaces the scene's nodes. Re-registering the same nodes is a no-op
    /// and interaction history survives for ids that remain.
    pub fn register_scene(&self, session: &mut Session, nodes: Vec<ObjectNode>) -> Result<(), GraphError> {
        session.graph.replace_nodes(nodes)
    }

    pub fn handle_utterance(
        &self,
        session: &mut Session,
        transcript: &str,
        cam: Option<&CameraPose>,
        now: DateTime<Utc>,
    ) -> UtteranceOutcome {
        let outcome = self.interpret(&session.graph, transcript, cam, now);
        session.directives.push(outcome.directive.clone());
        outcome
    }

    /// Parse and resolve without touching session state.
    pub fn interpret(
        &self,
        graph: &RelationalGraph,
        transcript: &str,
        cam: Option<&CameraPose>,
        now: DateTime<Utc>,
    ) -> UtteranceOutcome {
        let query = match self.parser.parse(transcript) {
            Ok(q) => q,
            Err(e) => {
                let trace = vec![TraceStep {
                    stage: "parse".into(),
                    nodes_in: graph.len(),
                    nodes_out: 0,
                    reason: Some(e.to_string()),
                }];
                let result = ResolutionResult::fallback(transcript, FallbackReason::ParseFailUpstream, trace);
                return UtteranceOutcome {
                    query: None,
                    patterns: Vec::new(),
                    result,
                    destination: None,
                    directive: fallback_directive(transcript),
                };
            }
        };
        let patterns = classify_pattern(&query).into_iter().collect();
        let mut result = self.resolver.resolve(graph, &query, cam, now);

        let mut destination = None;
        if result.is_resolved() {
            if let Some(dest) = &query.destination {
                match self.resolver.resolve_destination(graph, &query, dest, now) {
                    Ok(p) => destination = Some(p),
                    Err(reason) => {
                        let mut trace = std::mem::take(&mut result.trace);
                        trace.push(TraceStep {
                            stage: "destination".into(),
                            nodes_in: graph.len(),
                            nodes_out: 0,
                            reason: Some(reason.to_string()),
                        });
                        result = ResolutionResult::fallback(transcript, reason, trace);
                    }
                }
            }
        }

        let step_referents: Vec<Option<String>> = query
            .steps
            .iter()
            .enumerate()
            .map(|(i, step)| {
                if i == 0 {
                    return result.target_id.clone();
                }
                self.resolver.resolve_step(graph, &query, step, cam, now).target_id
            })
            .collect();
        let directive = make_directive(graph, &query, &result, &step_referents, self.summarizer.as_deref());
        UtteranceOutcome {
            query: Some(query),
            patterns,
            result,
            destination,
            directive,
        }
    }

    /// Records an operator action, applies a reported pose, and retires
    /// directives that pointed at the acted-on node. Returns how many
    /// directives were retired.
    pub fn record_action(&self, session: &mut Session, event: ActionEvent, now: DateTime<Utc>) -> Result<usize, GraphError> {
        let mut record = InteractionRecord::new(&event.actor, &event.action, now, session.id.clone());
        if let Some(intent) = &event.intent {
            record = record.with_intent(intent.clone());
        }
        match &event.pose {
            Some(p) => session.graph.update_node_pose(&event.target_id, p.center, p.half_extents, record)?,
            None => session.graph.record_interaction(&event.target_id, record)?,
        }
        Ok(session
            .directives
            .iter_mut()
            .map(|d| expire_on_action(d, &event.target_id))
            .filter(|&changed| changed)
            .count())
    }
}

impl Default for Engine {
    fn default() -> Self {
        Engine::new(ResolutionConfig::default())
    }
}
