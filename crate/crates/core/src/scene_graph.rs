//! Object-centric relational graph.
//!
//! Nodes carry pose, attributes and their own interaction memory. Edges are
//! never edited directly: they are a pure function of node centers and the
//! relation radius, and every mutation re-derives the edges it touches.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;

pub const DEFAULT_RADIUS_M: f64 = 0.5;
pub const SCHEMA_VERSION: u32 = 1;
pub const AXES_RH_YUP: &str = "RH_Yup";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SpatialRelation {
    LeftOf,
    RightOf,
    Above,
    Below,
    InFrontOf,
    BehindOf,
    /// Query-only: "next to", any stored relation within the radius.
    Adjacent,
}

impl SpatialRelation {
    pub const CONCRETE: [SpatialRelation; 6] = [
        SpatialRelation::LeftOf,
        SpatialRelation::RightOf,
        SpatialRelation::Above,
        SpatialRelation::Below,
        SpatialRelation::InFrontOf,
        SpatialRelation::BehindOf,
    ];

    pub fn inverse(self) -> SpatialRelation {
        use SpatialRelation::*;
        match self {
            LeftOf => RightOf,
            RightOf => LeftOf,
            Above => Below,
            Below => Above,
            InFrontOf => BehindOf,
            BehindOf => InFrontOf,
            Adjacent => Adjacent,
        }
    }

    pub fn is_concrete(self) -> bool {
        self != SpatialRelation::Adjacent
    }

    /// Unit offset that places a point in this relation to a reference
    /// point. `Adjacent` maps to +X.
    pub fn direction(self) -> Vec3 {
        use SpatialRelation::*;
        match self {
            LeftOf => Vec3::new(-1.0, 0.0, 0.0),
            RightOf | Adjacent => Vec3::new(1.0, 0.0, 0.0),
            Above => Vec3::new(0.0, 1.0, 0.0),
            Below => Vec3::new(0.0, -1.0, 0.0),
            InFrontOf => Vec3::new(0.0, 0.0, -1.0),
            BehindOf => Vec3::new(0.0, 0.0, 1.0),
        }
    }

    /// Matches a stored edge label; `Adjacent` accepts any label.
    pub fn admits(self, stored: SpatialRelation) -> bool {
        self == SpatialRelation::Adjacent || self == stored
    }

    pub fn as_str(self) -> &'static str {
        use SpatialRelation::*;
        match self {
            LeftOf => "LEFT_OF",
            RightOf => "RIGHT_OF",
            Above => "ABOVE",
            Below => "BELOW",
            InFrontOf => "IN_FRONT_OF",
            BehindOf => "BEHIND_OF",
            Adjacent => "ADJACENT",
        }
    }
}

impl fmt::Display for SpatialRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub actor: String,
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    pub ts: DateTime<Utc>,
    pub session_id: String,
}

impl InteractionRecord {
    pub fn new(
        actor: impl Into<String>,
        action: impl Into<String>,
        ts: DateTime<Utc>,
        session_id: impl Into<String>,
    ) -> Self {
        InteractionRecord {
            actor: actor.into(),
            action: action.into(),
            intent: None,
            ts,
            session_id: session_id.into(),
        }
    }

    pub fn with_intent(mut self, intent: impl Into<String>) -> Self {
        self.intent = Some(intent.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectNode {
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub descriptors: Vec<String>,
    pub center: Vec3,
    pub half_extents: Vec3,
    #[serde(default)]
    pub scene_context: String,
    #[serde(default)]
    pub memory: Vec<InteractionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<DateTime<Utc>>,
}

impl ObjectNode {
    pub fn new(
        id: impl Into<String>,
        label: impl Into<String>,
        descriptors: &[&str],
        center: Vec3,
        half_extents: Vec3,
    ) -> Self {
        ObjectNode {
            id: id.into(),
            label: label.into(),
            descriptors: descriptors.iter().map(|d| d.to_string()).collect(),
            center,
            half_extents,
            scene_context: String::new(),
            memory: Vec::new(),
            created_at: None,
        }
    }

    /// Label and descriptors, descriptors first ("purple striped cube").
    pub fn attribute_text(&self) -> String {
        let mut parts: Vec<&str> = self.descriptors.iter().map(String::as_str).collect();
        parts.push(&self.label);
        parts.join(" ")
    }

    /// Same node, ignoring interaction memory.
    pub fn same_shape(&self, other: &ObjectNode) -> bool {
        self.id == other.id
            && self.label == other.label
            && self.descriptors == other.descriptors
            && self.center == other.center
            && self.half_extents == other.half_extents
            && self.scene_context == other.scene_context
    }

    fn validate(&self) -> Result<(), GraphError> {
        if self.id.trim().is_empty() {
            return Err(GraphError::InvalidNode {
                id: self.id.clone(),
                reason: "empty id".into(),
            });
        }
        if self.label.trim().is_empty() {
            return Err(GraphError::InvalidNode {
                id: self.id.clone(),
                reason: "empty label".into(),
            });
        }
        if !self.center.is_finite() {
            return Err(GraphError::InvalidNode {
                id: self.id.clone(),
                reason: "non-finite center".into(),
            });
        }
        check_extents(&self.id, self.half_extents)?;
        if let Some(r) = self.memory.iter().find(|r| r.action.trim().is_empty()) {
            return Err(GraphError::EmptyAction {
                id: self.id.clone(),
                actor: r.actor.clone(),
            });
        }
        Ok(())
    }
}

fn check_extents(id: &str, e: Vec3) -> Result<(), GraphError> {
    if !(e.is_finite() && e.x > 0.0 && e.y > 0.0 && e.z > 0.0) {
        return Err(GraphError::InvalidExtents {
            id: id.to_string(),
            extents: e,
        });
    }
    Ok(())
}

/// `to` is `relation` of `from`: edge (A, B, RIGHT_OF) reads "B is right of A".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationEdge {
    pub from: String,
    pub to: String,
    pub relation: SpatialRelation,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub origin: Vec3,
    pub axes: String,
}

impl Default for Frame {
    fn default() -> Self {
        Frame {
            origin: Vec3::ZERO,
            axes: AXES_RH_YUP.to_string(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{id}` has non-positive half extents {extents}")]
    InvalidExtents { id: String, extents: Vec3 },
    #[error("node `{id}` is invalid: {reason}")]
    InvalidNode { id: String, reason: String },
    #[error("interaction on `{id}` by `{actor}` has an empty action")]
    EmptyAction { id: String, actor: String },
    #[error("radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("unsupported axis convention `{0}`")]
    UnsupportedAxes(String),
    #[error("unsupported schema version {0}")]
    UnsupportedSchema(u32),
    #[error("malformed graph document at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("edge {from} -> {to} references a missing node")]
    DanglingEdge { from: String, to: String },
    #[error("stored edges disagree with node geometry: {0}")]
    EdgeMismatch(String),
}

/// Relation of `b` as seen from `a`, or `None` when out of range.
///
/// The dominant axis of `b - a` decides the label (ties prefer X, then Y);
/// coincident centers yield no edge.
pub fn derive_relation(
    a: &ObjectNode,
    b: &ObjectNode,
    radius_m: f64,
) -> Option<(SpatialRelation, f64)> {
    let d = b.center - a.center;
    let dist = d.norm();
    if dist > radius_m {
        return None;
    }
    if dist == 0.0 {
        log::warn!(
            "nodes `{}` and `{}` share a center; no relation derived",
            a.id,
            b.id
        );
        return None;
    }
    let (ax, ay, az) = (d.x.abs(), d.y.abs(), d.z.abs());
    let relation = if ax >= ay && ax >= az {
        if d.x > 0.0 {
            SpatialRelation::RightOf
        } else {
            SpatialRelation::LeftOf
        }
    } else if ay >= az {
        if d.y > 0.0 {
            SpatialRelation::Above
        } else {
            SpatialRelation::Below
        }
    } else if d.z < 0.0 {
        SpatialRelation::InFrontOf
    } else {
        SpatialRelation::BehindOf
    };
    Some((relation, dist))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationalGraph {
    session_id: String,
    session_started_at: DateTime<Utc>,
    frame: Frame,
    radius_m: f64,
    nodes: BTreeMap<String, ObjectNode>,
    /// Sorted by (from, to); at most one edge per ordered pair.
    edges: Vec<RelationEdge>,
}

impl RelationalGraph {
    pub fn empty(session_id: impl Into<String>, started_at: DateTime<Utc>) -> Self {
        RelationalGraph {
            session_id: session_id.into(),
            session_started_at: started_at,
            frame: Frame::default(),
            radius_m: DEFAULT_RADIUS_M,
            nodes: BTreeMap::new(),
            edges: Vec::new(),
        }
    }

    pub fn build(
        session_id: impl Into<String>,
        started_at: DateTime<Utc>,
        nodes: Vec<ObjectNode>,
        radius_m: f64,
        frame: Frame,
    ) -> Result<Self, GraphError> {
        if !(radius_m.is_finite() && radius_m > 0.0) {
            return Err(GraphError::InvalidRadius(radius_m));
        }
        if frame.axes != AXES_RH_YUP {
            return Err(GraphError::UnsupportedAxes(frame.axes));
        }
        let mut map = BTreeMap::new();
        for mut node in nodes {
            node.validate()?;
            node.memory.sort_by_key(|r| r.ts);
            if map.contains_key(&node.id) {
                return Err(GraphError::DuplicateId(node.id));
            }
            map.insert(node.id.clone(), node);
        }
        let edges = derive_all(&map, radius_m);
        Ok(RelationalGraph {
            session_id: session_id.into(),
            session_started_at: started_at,
            frame,
            radius_m,
            nodes: map,
            edges,
        })
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn session_started_at(&self) -> DateTime<Utc> {
        self.session_started_at
    }

    /// Starts a new session over the same nodes; memory is kept.
    pub fn resume(mut self, session_id: impl Into<String>, started_at: DateTime<Utc>) -> Self {
        self.session_id = session_id.into();
        self.session_started_at = started_at;
        self
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn radius_m(&self) -> f64 {
        self.radius_m
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &str) -> Option<&ObjectNode> {
        self.nodes.get(id)
    }

    /// Nodes in id order.
    pub fn nodes(&self) -> impl Iterator<Item = &ObjectNode> {
        self.nodes.values()
    }

    pub fn edges(&self) -> &[RelationEdge] {
        &self.edges
    }

    pub fn edge(&self, from: &str, to: &str) -> Option<&RelationEdge> {
        self.edges
            .binary_search_by(|e| (e.from.as_str(), e.to.as_str()).cmp(&(from, to)))
            .ok()
            .map(|i| &self.edges[i])
    }

    pub fn edges_from<'a>(&'a self, from: &'a str) -> impl Iterator<Item = &'a RelationEdge> + 'a {
        let start = self.edges.partition_point(|e| e.from.as_str() < from);
        self.edges[start..].iter().take_while(move |e| e.from == from)
    }

    /// Appends to the node's memory, keeping it ordered by timestamp.
    pub fn record_interaction(
        &mut self,
        node_id: &str,
        record: InteractionRecord,
    ) -> Result<(), GraphError> {
        if record.action.trim().is_empty() {
            return Err(GraphError::EmptyAction {
                id: node_id.to_string(),
                actor: record.actor,
            });
        }
        let node = self
            .nodes
            .get_mut(node_id)
            .ok_or_else(|| GraphError::UnknownNode(node_id.to_string()))?;
        let at = node.memory.partition_point(|r| r.ts <= record.ts);
        node.memory.insert(at, record);
        Ok(())
    }

    pub fn update_node_pose(
        &mut self,
        node_id: &str,
        center: Vec3,
        half_extents: Vec3,
        record: InteractionRecord,
    ) -> Result<(), GraphError> {
        if !self.nodes.contains_key(node_id) {
            return Err(GraphError::UnknownNode(node_id.to_string()));
        }
        if !center.is_finite() {
            return Err(GraphError::InvalidNode {
                id: node_id.to_string(),
                reason: "non-finite center".into(),
            });
        }
        check_extents(node_id, half_extents)?;
        self.record_interaction(node_id, record)?;
        let node = self.nodes.get_mut(node_id).expect("checked above");
        node.center = center;
        node.half_extents = half_extents;

        self.edges.retain(|e| e.from != node_id && e.to != node_id);
        let moved = &self.nodes[node_id];
        for other in self.nodes.values().filter(|n| n.id != node_id) {
            if let Some((rel, dist)) = derive_relation(moved, other, self.radius_m) {
                self.edges.push(RelationEdge {
                    from: moved.id.clone(),
                    to: other.id.clone(),
                    relation: rel,
                    distance: dist,
                });
                self.edges.push(RelationEdge {
                    from: other.id.clone(),
                    to: moved.id.clone(),
                    relation: rel.inverse(),
                    distance: dist,
                });
            }
        }
        sort_edges(&mut self.edges);
        Ok(())
    }

    /// Replaces the node set, carrying memory over for ids that persist.
    pub fn replace_nodes(&mut self, nodes: Vec<ObjectNode>) -> Result<(), GraphError> {
        let mut merged = Vec::with_capacity(nodes.len());
        for mut node in nodes {
            if let Some(prev) = self.nodes.get(&node.id) {
                let mut memory = prev.memory.clone();
                for r in node.memory.drain(..) {
                    if !memory.contains(&r) {
                        memory.push(r);
                    }
                }
                node.memory = memory;
                if node.created_at.is_none() {
                    node.created_at = prev.created_at;
                }
            }
            merged.push(node);
        }
        let rebuilt = RelationalGraph::build(
            self.session_id.clone(),
            self.session_started_at,
            merged,
            self.radius_m,
            self.frame.clone(),
        )?;
        *self = rebuilt;
        Ok(())
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            schema_version: SCHEMA_VERSION,
            session_id: self.session_id.clone(),
            session_started_at: Some(self.session_started_at),
            frame: self.frame.clone(),
            radius_m: self.radius_m,
            nodes: self.nodes.values().cloned().collect(),
            edges: Some(self.edges.clone()),
        }
    }

    pub fn save(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(&self.to_document()).expect("graph document serializes")
    }

    pub fn load(bytes: &[u8]) -> Result<Self, GraphError> {
        let doc: GraphDocument = serde_json::from_slice(bytes).map_err(|e| GraphError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        RelationalGraph::from_document(doc)
    }

    /// Validates a document. Stored edges, when present, must reference
    /// existing nodes and agree exactly with the geometry.
    pub fn from_document(doc: GraphDocument) -> Result<Self, GraphError> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(GraphError::UnsupportedSchema(doc.schema_version));
        }
        let started = doc
            .session_started_at
            .or_else(|| doc.nodes.iter().filter_map(|n| n.created_at).min())
            .unwrap_or(DateTime::<Utc>::UNIX_EPOCH);
        let stored = doc.edges;
        let graph = RelationalGraph::build(doc.session_id, started, doc.nodes, doc.radius_m, doc.frame)?;
        if let Some(mut stored) = stored {
            for e in &stored {
                if !graph.nodes.contains_key(&e.from) || !graph.nodes.contains_key(&e.to) {
                    return Err(GraphError::DanglingEdge {
                        from: e.from.clone(),
                        to: e.to.clone(),
                    });
                }
            }
            sort_edges(&mut stored);
            if stored != graph.edges {
                let want: HashSet<_> = graph.edges.iter().map(|e| (&e.from, &e.to, e.relation)).collect();
                let diff = stored
                    .iter()
                    .find(|e| !want.contains(&(&e.from, &e.to, e.relation)))
                    .map(|e| format!("unexpected {} -> {} {}", e.from, e.to, e.relation))
                    .unwrap_or_else(|| {
                        format!("expected {} edges, found {}", graph.edges.len(), stored.len())
                    });
                return Err(GraphError::EdgeMismatch(diff));
            }
        }
        Ok(graph)
    }
}

fn derive_all(nodes: &BTreeMap<String, ObjectNode>, radius_m: f64) -> Vec<RelationEdge> {
    let mut edges = Vec::new();
    for a in nodes.values() {
        for b in nodes.values() {
            if a.id == b.id {
                continue;
            }
            if let Some((rel, dist)) = derive_relation(a, b, radius_m) {
                edges.push(RelationEdge {
                    from: a.id.clone(),
                    to: b.id.clone(),
                    relation: rel,
                    distance: dist,
                });
            }
        }
    }
    // BTreeMap iteration already yields (from, to) order.
    edges
}

fn sort_edges(edges: &mut [RelationEdge]) {
    edges.sort_by(|a, b| (a.from.as_str(), a.to.as_str()).cmp(&(b.from.as_str(), b.to.as_str())));
}

/// On-disk / wire form of a session graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub session_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_started_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub frame: Frame,
    #[serde(default = "default_radius")]
    pub radius_m: f64,
    pub nodes: Vec<ObjectNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<RelationEdge>>,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_radius() -> f64 {
    DEFAULT_RADIUS_M
}
