//! Structured form of a referring instruction.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::scene_graph::SpatialRelation;

/// Nouns that ask for the referent rather than name it.
pub const GENERIC_NOUNS: [&str; 6] = ["thing", "things", "one", "ones", "it", "that"];

pub fn is_generic_noun(word: &str) -> bool {
    GENERIC_NOUNS.contains(&word)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TimeWindow {
    MinutesAgo,
    ThisSessionEarlier,
    PreviousSession,
    Yesterday,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryCue {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verb: Option<String>,
    pub window: TimeWindow,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EntitySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub descriptors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_cue: Option<MemoryCue>,
    /// Clauses that pin down this entity when it serves as an anchor
    /// ("the sphere behind the box").
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub relations: Vec<RelationClause>,
}

impl EntitySpec {
    pub fn labeled(label: &str, descriptors: &[&str]) -> Self {
        EntitySpec {
            label: Some(label.to_string()),
            descriptors: descriptors.iter().map(|d| d.to_string()).collect(),
            ..Default::default()
        }
    }

    pub fn with_memory(mut self, cue: MemoryCue) -> Self {
        self.memory_cue = Some(cue);
        self
    }

    pub fn with_relation(mut self, relation: SpatialRelation, anchor: EntitySpec) -> Self {
        self.relations.push(RelationClause { relation, anchor });
        self
    }

    /// Descriptors then label, space separated. Empty when neither is set.
    pub fn attribute_text(&self) -> String {
        let mut parts: Vec<&str> = self.descriptors.iter().map(String::as_str).collect();
        if let Some(l) = &self.label {
            parts.push(l);
        }
        parts.join(" ")
    }

    pub fn has_attributes(&self) -> bool {
        self.label.is_some() || !self.descriptors.is_empty()
    }

    /// Something to match on: attributes, a memory cue, or own relations.
    pub fn is_identifying(&self) -> bool {
        self.has_attributes() || self.memory_cue.is_some() || !self.relations.is_empty()
    }

    /// This spec and every nested anchor, depth first.
    pub fn walk(&self) -> Vec<&EntitySpec> {
        let mut out = vec![self];
        for c in &self.relations {
            out.extend(c.anchor.walk());
        }
        out
    }

    pub(crate) fn check(&self) -> Result<(), String> {
        if let Some(l) = &self.label {
            if l.trim().is_empty() || is_generic_noun(l) {
                return Err(format!("`{l}` is not a valid label"));
            }
        }
        if self.descriptors.iter().any(|d| d.trim().is_empty()) {
            return Err("empty descriptor".into());
        }
        for c in &self.relations {
            c.check()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationClause {
    pub relation: SpatialRelation,
    pub anchor: EntitySpec,
}

impl RelationClause {
    pub fn new(relation: SpatialRelation, anchor: EntitySpec) -> Self {
        RelationClause { relation, anchor }
    }

    pub(crate) fn check(&self) -> Result<(), String> {
        if !self.anchor.is_identifying() {
            return Err(format!("{} clause has an empty anchor", self.relation));
        }
        self.anchor.check()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub action: String,
    pub target: EntitySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceQuery {
    pub raw_transcript: String,
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    pub target: EntitySpec,
    #[serde(default)]
    pub relation_clauses: Vec<RelationClause>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination: Option<RelationClause>,
    /// Only filled for multi-step utterances, in spoken order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<Step>,
}

impl ReferenceQuery {
    pub fn new(raw: impl Into<String>, action: impl Into<String>, target: EntitySpec) -> Self {
        ReferenceQuery {
            raw_transcript: raw.into(),
            action: action.into(),
            intent: None,
            target,
            relation_clauses: Vec::new(),
            destination: None,
            steps: Vec::new(),
        }
    }

    /// Target and every anchor, including nested ones and the destination.
    pub fn entities(&self) -> Vec<&EntitySpec> {
        let mut out = self.target.walk();
        for c in &self.relation_clauses {
            out.extend(c.anchor.walk());
        }
        if let Some(d) = &self.destination {
            out.extend(d.anchor.walk());
        }
        out
    }

    /// Shape checks shared by the built-in grammar and external parsers.
    pub fn validate(&self) -> Result<(), String> {
        if self.action.trim().is_empty() {
            return Err("empty action".into());
        }
        if !self.target.is_identifying() && self.relation_clauses.is_empty() {
            return Err("target has nothing to match on".into());
        }
        self.target.check()?;
        for c in &self.relation_clauses {
            c.check()?;
        }
        if let Some(d) = &self.destination {
            if !d.relation.is_concrete() && d.relation != SpatialRelation::Adjacent {
                return Err("bad destination".into());
            }
            d.check()?;
        }
        for s in &self.steps {
            s.target.check()?;
        }
        Ok(())
    }
}

/// Referencing patterns observed in remote guidance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Pattern {
    DirectFeature,
    Relational,
    Memory,
    Chained,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [
        Pattern::DirectFeature,
        Pattern::Relational,
        Pattern::Memory,
        Pattern::Chained,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::DirectFeature => "DIRECT_FEATURE",
            Pattern::Relational => "RELATIONAL",
            Pattern::Memory => "MEMORY",
            Pattern::Chained => "CHAINED",
        }
    }
}

/// Tags a query with the patterns it uses.
///
/// Descriptors on any entity count as a direct feature; a bare label counts
/// only when the query carries no relational or memory cue.
pub fn classify_pattern(query: &ReferenceQuery) -> BTreeSet<Pattern> {
    let entities = query.entities();
    let identifying_clauses: usize = query.relation_clauses.len()
        + query
            .entities()
            .iter()
            .map(|e| e.relations.len())
            .sum::<usize>();
    let relational = identifying_clauses > 0;
    let memory = entities.iter().any(|e| e.memory_cue.is_some());
    let described = entities.iter().any(|e| !e.descriptors.is_empty());
    let bare_label = !relational && !memory && query.target.label.is_some();
    let direct = described || bare_label;

    let mut out = BTreeSet::new();
    if direct {
        out.insert(Pattern::DirectFeature);
    }
    if relational {
        out.insert(Pattern::Relational);
    }
    if memory {
        out.insert(Pattern::Memory);
    }
    let kinds = [direct, relational, memory].iter().filter(|b| **b).count();
    if kinds >= 2 || identifying_clauses >= 2 {
        out.insert(Pattern::Chained);
    }
    out
}
