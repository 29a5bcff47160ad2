//! Referent resolution over the scene graph.
//!
//! Anchors are resolved first (recursively, without visibility culling).
//! Relation and memory constraints are hard filters; attribute similarity
//! only ranks what survives them. Every failure ends in a fallback with a
//! reason, never in a guess.

use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::matcher::{score_candidates, top_k, Embedder, ScoredCandidate, ScoringOptions, DEFAULT_K};
use crate::memory::{match_memory, MemoryContext};
use crate::query::{EntitySpec, ReferenceQuery, RelationClause};
use crate::scene_graph::{ObjectNode, RelationalGraph};
use crate::view::{filter_visible, in_frustum, is_occluded, CameraPose};

/// Distance between an anchor and a placement point for move instructions.
pub const PLACEMENT_OFFSET_M: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResolutionConfig {
    pub k: usize,
    pub tau_min: f64,
    pub tau_margin: f64,
    /// Seconds a MINUTES_AGO cue reaches back.
    pub minutes_ago_window_s: i64,
    pub anchor_depth_limit: usize,
    pub include_scene_context: bool,
}

impl Default for ResolutionConfig {
    fn default() -> Self {
        ResolutionConfig {
            k: DEFAULT_K,
            tau_min: 0.2,
            tau_margin: 0.05,
            minutes_ago_window_s: 600,
            anchor_depth_limit: 3,
            include_scene_context: false,
        }
    }
}

impl ResolutionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.k < 1 {
            return Err("k must be at least 1".into());
        }
        if !(0.0..=2.0).contains(&self.tau_margin) {
            return Err("tau_margin must be within [0, 2]".into());
        }
        if !self.tau_min.is_finite() {
            return Err("tau_min must be finite".into());
        }
        if self.anchor_depth_limit < 1 {
            return Err("anchor_depth_limit must be at least 1".into());
        }
        if self.minutes_ago_window_s < 0 {
            return Err("minutes_ago_window_s must be non-negative".into());
        }
        Ok(())
    }

    pub fn minutes_ago_window(&self) -> Duration {
        Duration::seconds(self.minutes_ago_window_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ResolutionMode {
    Resolved,
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FallbackReason {
    ParseFailUpstream,
    AnchorUnresolved,
    NoCandidate,
    Ambiguous,
    VerifyFail,
}

impl FallbackReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FallbackReason::ParseFailUpstream => "PARSE_FAIL_UPSTREAM",
            FallbackReason::AnchorUnresolved => "ANCHOR_UNRESOLVED",
            FallbackReason::NoCandidate => "NO_CANDIDATE",
            FallbackReason::Ambiguous => "AMBIGUOUS",
            FallbackReason::VerifyFail => "VERIFY_FAIL",
        }
    }
}

impl fmt::Display for FallbackReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub stage: String,
    #[serde(rename = "in")]
    pub nodes_in: usize,
    #[serde(rename = "out")]
    pub nodes_out: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl TraceStep {
    fn new(stage: impl Into<String>, nodes_in: usize, nodes_out: usize) -> Self {
        TraceStep {
            stage: stage.into(),
            nodes_in,
            nodes_out,
            reason: None,
        }
    }

    fn because(mut self, reason: impl Into<String>) -> Self {
        self.reason = Some(reason.into());
        self
    }

    /// Anchor sub-resolutions run over the whole graph and are not part of
    /// the target's narrowing sequence.
    pub fn is_anchor(&self) -> bool {
        self.stage.starts_with("anchor")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionResult {
    pub mode: ResolutionMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_id: Option<String>,
    pub candidates: Vec<ScoredCandidate>,
    pub trace: Vec<TraceStep>,
    pub raw_transcript: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<FallbackReason>,
}

impl ResolutionResult {
    pub fn fallback(raw_transcript: impl Into<String>, reason: FallbackReason, trace: Vec<TraceStep>) -> Self {
        ResolutionResult {
            mode: ResolutionMode::Fallback,
            target_id: None,
            candidates: Vec::new(),
            trace,
            raw_transcript: raw_transcript.into(),
            reason: Some(reason),
        }
    }

    pub fn is_resolved(&self) -> bool {
        self.mode == ResolutionMode::Resolved
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReasonerChoice {
    Target(String),
    Abstain,
}

/// Final-pick hook over the ranked candidates (an LLM in the original
/// pipeline). Errors count as abstention.
pub trait Reasoner: Send + Sync {
    fn choose(
        &self,
        query: &ReferenceQuery,
        candidates: &[(ScoredCandidate, &ObjectNode)],
    ) -> Result<ReasonerChoice, String>;
}

/// JSON transport for an external reasoner.
pub trait ReasonerBackend: Send + Sync {
    fn request(&self, request_json: &str) -> Result<String, String>;
}

pub struct ExternalReasoner<B> {
    backend: B,
}

impl<B: ReasonerBackend> ExternalReasoner<B> {
    pub fn new(backend: B) -> Self {
        ExternalReasoner { backend }
    }
}

#[derive(Serialize)]
struct ReasonerCandidate<'a> {
    #[serde(flatten)]
    node: &'a ObjectNode,
    score: f64,
}

impl<B: ReasonerBackend> Reasoner for ExternalReasoner<B> {
    fn choose(
        &self,
        query: &ReferenceQuery,
        candidates: &[(ScoredCandidate, &ObjectNode)],
    ) -> Result<ReasonerChoice, String> {
        let cands: Vec<_> = candidates
            .iter()
            .map(|(s, n)| ReasonerCandidate { node: n, score: s.score })
            .collect();
        let req = serde_json::json!({ "query": query, "candidates": cands }).to_string();
        let body = self.backend.request(&req)?;
        let v: serde_json::Value = serde_json::from_str(&body).map_err(|e| e.to_string())?;
        if v == "abstain" {
            return Ok(ReasonerChoice::Abstain);
        }
        match v.get("target_id").and_then(|t| t.as_str()) {
            Some("abstain") => Ok(ReasonerChoice::Abstain),
            Some(id) => Ok(ReasonerChoice::Target(id.to_string())),
            None => Err(format!("unrecognized reasoner response: {body}")),
        }
    }
}

pub struct Resolver {
    embedder: Arc<dyn Embedder>,
    reasoner: Option<Arc<dyn Reasoner>>,
    config: ResolutionConfig,
}

struct Picked {
    id: String,
    candidates: Vec<ScoredCandidate>,
}

struct Failed {
    reason: FallbackReason,
    candidates: Vec<ScoredCandidate>,
}

impl Failed {
    fn new(reason: FallbackReason) -> Self {
        Failed {
            reason,
            candidates: Vec::new(),
        }
    }
}

struct Context<'a> {
    graph: &'a RelationalGraph,
    query: &'a ReferenceQuery,
    memory: MemoryContext<'a>,
}

impl Resolver {
    pub fn new(embedder: Arc<dyn Embedder>, config: ResolutionConfig) -> Self {
        Resolver {
            embedder,
            reasoner: None,
            config,
        }
    }

    pub fn with_reasoner(mut self, reasoner: Arc<dyn Reasoner>) -> Self {
        self.reasoner = Some(reasoner);
        self
    }

    pub fn config(&self) -> &ResolutionConfig {
        &self.config
    }

    fn memory_context<'a>(&self, graph: &'a RelationalGraph, now: DateTime<Utc>) -> MemoryContext<'a> {
        MemoryContext {
            now,
            session_id: graph.session_id(),
            session_started_at: graph.session_started_at(),
            minutes_ago_window: self.config.minutes_ago_window(),
        }
    }

    pub fn resolve(
        &self,
        graph: &RelationalGraph,
        query: &ReferenceQuery,
        cam: Option<&CameraPose>,
        now: DateTime<Utc>,
    ) -> ResolutionResult {
        let ctx = Context {
            graph,
            query,
            memory: self.memory_context(graph, now),
        };
        let mut clauses = query.relation_clauses.clone();
        clauses.extend(query.target.relations.iter().cloned());
        let mut trace = Vec::new();
        let outcome = self.pick(&ctx, &query.target, &clauses, cam, 0, "", &mut trace);
        match outcome {
            Ok(p) => ResolutionResult {
                mode: ResolutionMode::Resolved,
                target_id: Some(p.id),
                candidates: p.candidates,
                trace,
                raw_transcript: query.raw_transcript.clone(),
                reason: None,
            },
            Err(f) => ResolutionResult {
                mode: ResolutionMode::Fallback,
                target_id: None,
                candidates: f.candidates,
                trace,
                raw_transcript: query.raw_transcript.clone(),
                reason: Some(f.reason),
            },
        }
    }

    /// Resolves one step of a multi-step query; its clauses live on the
    /// step's target.
    pub fn resolve_step(
        &self,
        graph: &RelationalGraph,
        query: &ReferenceQuery,
        step: &crate::query::Step,
        cam: Option<&CameraPose>,
        now: DateTime<Utc>,
    ) -> ResolutionResult {
        let mut target = step.target.clone();
        let clauses = std::mem::take(&mut target.relations);
        let sub = ReferenceQuery {
            action: step.action.clone(),
            target,
            relation_clauses: clauses,
            destination: None,
            steps: Vec::new(),
            ..query.clone()
        };
        self.resolve(graph, &sub, cam, now)
    }

    /// Placement point that puts a moved object in `dest.relation` to the
    /// destination anchor.
    pub fn resolve_destination(
        &self,
        graph: &RelationalGraph,
        query: &ReferenceQuery,
        dest: &RelationClause,
        now: DateTime<Utc>,
    ) -> Result<Vec3, FallbackReason> {
        let ctx = Context {
            graph,
            query,
            memory: self.memory_context(graph, now),
        };
        let mut trace = Vec::new();
        let anchor = self
            .pick(&ctx, &dest.anchor, &dest.anchor.relations, None, 1, "destination", &mut trace)
            .map_err(|_| FallbackReason::AnchorUnresolved)?;
        let center = graph.node(&anchor.id).expect("picked from graph").center;
        Ok(center + dest.relation.direction() * PLACEMENT_OFFSET_M)
    }

    #[allow(clippy::too_many_arguments)]
    fn pick(
        &self,
        ctx: &Context<'_>,
        spec: &EntitySpec,
        clauses: &[RelationClause],
        cam: Option<&CameraPose>,
        depth: usize,
        prefix: &str,
        trace: &mut Vec<TraceStep>,
    ) -> Result<Picked, Failed> {
        let graph = ctx.graph;
        let total = graph.len();

        let mut anchors: Vec<(usize, String)> = Vec::with_capacity(clauses.len());
        for (i, clause) in clauses.iter().enumerate() {
            let stage = if prefix.is_empty() {
                format!("anchor[{i}]")
            } else {
                format!("{prefix}.anchor[{i}]")
            };
            if depth + 1 > self.config.anchor_depth_limit {
                trace.push(TraceStep::new(stage, total, 0).because("anchor depth limit exceeded"));
                return Err(Failed::new(FallbackReason::AnchorUnresolved));
            }
            let mut sub = Vec::new();
            match self.pick(ctx, &clause.anchor, &clause.anchor.relations, None, depth + 1, &stage, &mut sub) {
                Ok(p) => {
                    let nested: Vec<_> = sub.into_iter().filter(TraceStep::is_anchor).collect();
                    trace.extend(nested);
                    trace.push(TraceStep::new(stage, total, 1).because(format!("resolved {}", p.id)));
                    anchors.push((i, p.id));
                }
                Err(f) => {
                    let nested: Vec<_> = sub.into_iter().filter(TraceStep::is_anchor).collect();
                    trace.extend(nested);
                    trace.push(TraceStep::new(stage, total, 0).because(f.reason.as_str()));
                    return Err(Failed::new(FallbackReason::AnchorUnresolved));
                }
            }
        }

        let mut survivors: Vec<&ObjectNode> = graph.nodes().collect();
        trace.push(TraceStep::new(stage_name(prefix, "candidates"), total, total));

        if let Some(cam) = cam {
            let before = survivors.len();
            survivors = filter_visible(Some(cam), graph, survivors);
            trace.push(TraceStep::new(stage_name(prefix, "visibility"), before, survivors.len()));
        }

        for (i, anchor_id) in &anchors {
            let clause = &clauses[*i];
            let before = survivors.len();
            survivors.retain(|n| satisfies_relation(graph, anchor_id, &n.id, clause));
            trace.push(
                TraceStep::new(stage_name(prefix, &format!("relation:{}", clause.relation)), before, survivors.len())
                    .because(format!("anchor {anchor_id}")),
            );
        }

        if let Some(cue) = &spec.memory_cue {
            let before = survivors.len();
            survivors.retain(|n| match_memory(n, cue, &ctx.memory));
            trace.push(TraceStep::new(stage_name(prefix, "memory"), before, survivors.len()));
        }

        if survivors.is_empty() {
            if let Some(last) = trace.last_mut() {
                last.reason.get_or_insert_with(|| FallbackReason::NoCandidate.as_str().into());
            }
            return Err(Failed::new(FallbackReason::NoCandidate));
        }

        let constrained = !clauses.is_empty() || spec.memory_cue.is_some();
        let scored = if spec.has_attributes() {
            let opts = ScoringOptions {
                include_scene_context: self.config.include_scene_context,
            };
            match score_candidates(self.embedder.as_ref(), spec, survivors.iter().copied(), opts) {
                Ok(s) => s,
                Err(e) => {
                    trace.push(TraceStep::new(stage_name(prefix, "rank"), survivors.len(), 0).because(e.to_string()));
                    return Err(Failed::new(FallbackReason::NoCandidate));
                }
            }
        } else if constrained {
            // Constraint-only reference ("the one we moved earlier"):
            // every survivor matches equally.
            let mut s: Vec<_> = survivors
                .iter()
                .map(|n| ScoredCandidate {
                    node_id: n.id.clone(),
                    score: 1.0,
                })
                .collect();
            s.sort_by(crate::matcher::rank_order);
            s
        } else {
            trace.push(TraceStep::new(stage_name(prefix, "rank"), survivors.len(), 0).because("underspecified"));
            return Err(Failed::new(FallbackReason::NoCandidate));
        };
        let ranked = top_k(scored, self.config.k);
        trace.push(TraceStep::new(stage_name(prefix, "rank"), survivors.len(), ranked.len()));

        let chosen = match &self.reasoner {
            Some(r) if depth == 0 => {
                let with_nodes: Vec<_> = ranked
                    .iter()
                    .map(|c| (c.clone(), graph.node(&c.node_id).expect("ranked from graph")))
                    .collect();
                match r.choose(ctx.query, &with_nodes) {
                    Ok(ReasonerChoice::Target(id)) => Ok(id),
                    Ok(ReasonerChoice::Abstain) => Err((FallbackReason::Ambiguous, "reasoner abstained".to_string())),
                    Err(e) => Err((FallbackReason::Ambiguous, format!("reasoner failed: {e}"))),
                }
            }
            _ => self.select(&ranked),
        };
        let id = match chosen {
            Ok(id) => {
                trace.push(TraceStep::new(stage_name(prefix, "select"), ranked.len(), 1).because(format!("chose {id}")));
                id
            }
            Err((reason, why)) => {
                trace.push(
                    TraceStep::new(stage_name(prefix, "select"), ranked.len(), 0).because(format!("{reason}: {why}")),
                );
                return Err(Failed {
                    reason,
                    candidates: ranked,
                });
            }
        };

        let verdict = self.verify(ctx, &id, spec, clauses, &anchors, cam, &ranked);
        match verdict {
            Ok(()) => {
                trace.push(TraceStep::new(stage_name(prefix, "verify"), 1, 1));
                Ok(Picked { id, candidates: ranked })
            }
            Err(why) => {
                trace.push(TraceStep::new(stage_name(prefix, "verify"), 1, 0).because(why));
                Err(Failed {
                    reason: FallbackReason::VerifyFail,
                    candidates: ranked,
                })
            }
        }
    }

    fn select(&self, ranked: &[ScoredCandidate]) -> Result<String, (FallbackReason, String)> {
        let best = &ranked[0];
        if best.score < self.config.tau_min {
            return Err((
                FallbackReason::NoCandidate,
                format!("best score {:.3} below {}", best.score, self.config.tau_min),
            ));
        }
        if let Some(second) = ranked.get(1) {
            let gap = best.score - second.score;
            if gap < self.config.tau_margin {
                return Err((
                    FallbackReason::Ambiguous,
                    format!("{} and {} within {:.3}", best.node_id, second.node_id, gap),
                ));
            }
        }
        Ok(best.node_id.clone())
    }

    /// Re-evaluates every hard constraint on the winner.
    #[allow(clippy::too_many_arguments)]
    fn verify(
        &self,
        ctx: &Context<'_>,
        id: &str,
        spec: &EntitySpec,
        clauses: &[RelationClause],
        anchors: &[(usize, String)],
        cam: Option<&CameraPose>,
        ranked: &[ScoredCandidate],
    ) -> Result<(), String> {
        let graph = ctx.graph;
        let node = graph.node(id).ok_or_else(|| format!("{id} is not in the graph"))?;
        if !ranked.iter().any(|c| c.node_id == id) {
            return Err(format!("{id} was not among the ranked candidates"));
        }
        if let Some(cam) = cam {
            if !in_frustum(cam, node) || is_occluded(cam, node, graph) {
                return Err(format!("{id} is not visible"));
            }
        }
        for (i, anchor_id) in anchors {
            if !satisfies_relation(graph, anchor_id, id, &clauses[*i]) {
                return Err(format!("{id} is not {} {anchor_id}", clauses[*i].relation));
            }
        }
        if let Some(cue) = &spec.memory_cue {
            if !match_memory(node, cue, &ctx.memory) {
                return Err(format!("{id} has no matching memory"));
            }
        }
        Ok(())
    }
}

fn stage_name(prefix: &str, stage: &str) -> String {
    if prefix.is_empty() {
        stage.to_string()
    } else {
        format!("{prefix}.{stage}")
    }
}

fn satisfies_relation(graph: &RelationalGraph, anchor_id: &str, node_id: &str, clause: &RelationClause) -> bool {
    graph
        .edge(anchor_id, node_id)
        .is_some_and(|e| clause.relation.admits(e.relation))
}
