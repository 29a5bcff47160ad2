//! Seeded corpus generation. Every entry is rendered from a structured
//! query and labelled by the literal oracle against the scene state as it
//! stands when the entry runs (setup actions accumulate in order).

use chrono::{DateTime, Duration, Utc};
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::oracle::{verdict, OracleClock, Verdict, VERB_FORMS};
use super::{CorpusEntry, EntryKind, Expected, SetupAction};
use crate::parser::parse;
use crate::query::{classify_pattern, EntitySpec, MemoryCue, Pattern, ReferenceQuery, RelationClause, TimeWindow};
use crate::resolver::FallbackReason;
use crate::scene_graph::{ObjectNode, RelationalGraph, SpatialRelation};

/// Direct, relational, memory, chained.
pub const DEFAULT_WEIGHTS: [f64; 4] = [57.6, 31.2, 11.2, 10.0];
pub const DEFAULT_PHRASINGS: usize = 4;
/// Construction attempts per entry before it is skipped.
const MAX_ATTEMPTS: usize = 400;
/// Gap between consecutive entries' clocks.
const ENTRY_SPACING_MIN: i64 = 10;

const VERBS: [&str; 6] = ["locate", "find", "select", "pick up", "grab", "highlight"];

/// Transcripts the grammar must refuse.
pub const MALFORMED: [&str; 10] = [
    "um, uh, hmm",
    "the second cube to the left of the red cube",
    "put it between the two cubes",
    "grab the cube to my left",
    "uh, the thing",
    "what's that",
    "select the first one from the right",
    "grab the cube on the table",
    "the third one over by the window",
    "erm",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusKind {
    Unambiguous,
    Ambiguous,
    /// `n` entries of which the given counts are ambiguous and malformed;
    /// the rest are unambiguous.
    Mixed { ambiguous: usize, malformed: usize },
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub n: usize,
    pub weights: [f64; 4],
    pub seed: u64,
    pub phrasings: usize,
    pub kind: CorpusKind,
    pub minutes_ago_s: i64,
    /// Scene name written to each entry; defaults to the scene's session id.
    pub scene_ref: Option<String>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n: 40,
            weights: DEFAULT_WEIGHTS,
            seed: 7,
            phrasings: DEFAULT_PHRASINGS,
            kind: CorpusKind::Unambiguous,
            minutes_ago_s: 600,
            scene_ref: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GenOutput {
    pub entries: Vec<CorpusEntry>,
    /// Index and reason for each slot that could not be filled.
    pub skipped: Vec<(usize, String)>,
}

struct Draft {
    query: ReferenceQuery,
    setup: Vec<SetupAction>,
}

struct Gen<'a> {
    rng: ChaCha8Rng,
    graph: RelationalGraph,
    now: DateTime<Utc>,
    cfg: &'a GenConfig,
}

fn full_spec(n: &ObjectNode) -> EntitySpec {
    EntitySpec {
        label: Some(n.label.clone()),
        descriptors: n.descriptors.clone(),
        ..Default::default()
    }
}

fn label_spec(n: &ObjectNode) -> EntitySpec {
    EntitySpec {
        label: Some(n.label.clone()),
        ..Default::default()
    }
}

fn relation_phrases(rel: SpatialRelation) -> &'static [&'static str] {
    match rel {
        SpatialRelation::LeftOf => &["to the left of", "left of", "on the left side of"],
        SpatialRelation::RightOf => &["to the right of", "right of", "on the right side of"],
        SpatialRelation::Above => &["above", "on top of", "over"],
        SpatialRelation::Below => &["below", "under", "beneath"],
        SpatialRelation::InFrontOf => &["in front of"],
        SpatialRelation::BehindOf => &["behind", "in back of"],
        SpatialRelation::Adjacent => &["next to", "beside", "near"],
    }
}

fn window_phrases(w: TimeWindow) -> &'static [&'static str] {
    match w {
        TimeWindow::MinutesAgo => &["a few minutes ago", "a minute ago", "just now", "a couple of minutes ago"],
        TimeWindow::ThisSessionEarlier => &["earlier", "earlier today", "before", "previously"],
        TimeWindow::PreviousSession => &["last time", "in the last session", "in the previous session", "during the last session"],
        TimeWindow::Yesterday => &["yesterday"],
    }
}

fn past_tense(verb: &str) -> &'static str {
    VERB_FORMS
        .iter()
        .find(|(_, forms)| forms.contains(&verb))
        .map(|(_, forms)| forms[1])
        .expect("verb from the table")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

impl Gen<'_> {
    fn pick<'s, T>(&mut self, items: &'s [T]) -> &'s T {
        &items[self.rng.gen_range(0..items.len())]
    }

    fn random_node(&mut self) -> ObjectNode {
        let ids: Vec<&ObjectNode> = self.graph.nodes().collect();
        ids[self.rng.gen_range(0..ids.len())].clone()
    }

    /// Shortest literal description that singles out `n`, if any.
    fn anchor_spec(&mut self, n: &ObjectNode) -> EntitySpec {
        let same_label = self.graph.nodes().filter(|o| o.label == n.label).count();
        if same_label == 1 && self.rng.gen_bool(0.5) {
            label_spec(n)
        } else {
            full_spec(n)
        }
    }

    fn incoming(&self, id: &str) -> Vec<(String, SpatialRelation)> {
        self.graph
            .edges()
            .iter()
            .filter(|e| e.to == id)
            .map(|e| (e.from.clone(), e.relation))
            .collect()
    }

    fn clause_into(&mut self, target: &ObjectNode, exclude: &[String]) -> Option<RelationClause> {
        let inc: Vec<_> = self
            .incoming(&target.id)
            .into_iter()
            .filter(|(a, _)| !exclude.contains(a))
            .collect();
        if inc.is_empty() {
            return None;
        }
        let (anchor_id, rel) = inc[self.rng.gen_range(0..inc.len())].clone();
        let rel = if self.rng.gen_bool(0.2) { SpatialRelation::Adjacent } else { rel };
        let anchor = self.graph.node(&anchor_id).expect("edge endpoint").clone();
        Some(RelationClause::new(rel, self.anchor_spec(&anchor)))
    }

    fn memory_setup(&mut self, target: &ObjectNode) -> (MemoryCue, SetupAction) {
        let (lemma, forms) = *self.pick(VERB_FORMS);
        let window = *self.pick(&[
            TimeWindow::MinutesAgo,
            TimeWindow::ThisSessionEarlier,
            TimeWindow::PreviousSession,
            TimeWindow::Yesterday,
        ]);
        let session = self.graph.session_id().to_string();
        let started = self.graph.session_started_at();
        let prev = format!("{session}-prev");
        let (ts, sid) = match window {
            TimeWindow::MinutesAgo => (self.now - Duration::minutes(self.rng.gen_range(1..=8)), session),
            TimeWindow::ThisSessionEarlier => {
                let span = (self.now - started).num_minutes().max(2);
                (self.now - Duration::minutes(self.rng.gen_range(1..span)), session)
            }
            TimeWindow::PreviousSession => (started - Duration::hours(self.rng.gen_range(1..=6)), prev),
            TimeWindow::Yesterday => {
                let midnight = self.now.date_naive().and_hms_opt(0, 0, 0).unwrap().and_utc();
                (midnight - Duration::minutes(self.rng.gen_range(30..=1380)), prev)
            }
        };
        let cue = MemoryCue {
            verb: Some(past_tense(lemma).to_string()),
            window,
        };
        let setup = SetupAction {
            target_id: target.id.clone(),
            actor: "operator".into(),
            action: self.pick(forms).to_string(),
            ts,
            session_id: sid,
        };
        (cue, setup)
    }

    fn draft(&mut self, pattern: Pattern) -> Option<Draft> {
        let t = self.random_node();
        let mut setup = Vec::new();
        let mut clauses = Vec::new();
        let target = match pattern {
            Pattern::DirectFeature => full_spec(&t),
            Pattern::Relational => {
                clauses.push(self.clause_into(&t, &[])?);
                label_spec(&t)
            }
            Pattern::Memory => {
                let (cue, s) = self.memory_setup(&t);
                setup.push(s);
                let base = if self.rng.gen_bool(0.3) { EntitySpec::default() } else { label_spec(&t) };
                base.with_memory(cue)
            }
            Pattern::Chained => match self.rng.gen_range(0..4) {
                0 => {
                    clauses.push(self.clause_into(&t, &[])?);
                    full_spec(&t)
                }
                1 => {
                    let first = self.clause_into(&t, &[])?;
                    let used: Vec<String> = self
                        .graph
                        .nodes()
                        .filter(|n| first.anchor.label.as_deref() == Some(n.label.as_str()))
                        .map(|n| n.id.clone())
                        .collect();
                    let second = self.clause_into(&t, &used)?;
                    clauses.push(first);
                    clauses.push(second);
                    label_spec(&t)
                }
                2 => {
                    let (cue, s) = self.memory_setup(&t);
                    setup.push(s);
                    clauses.push(self.clause_into(&t, &[])?);
                    label_spec(&t).with_memory(cue)
                }
                _ => {
                    let mut c = self.clause_into(&t, &[])?;
                    let anchor_id = self
                        .graph
                        .nodes()
                        .find(|n| {
                            c.anchor.label.as_deref() == Some(n.label.as_str())
                                && c.anchor.descriptors.iter().all(|d| n.descriptors.contains(d))
                                && self.graph.edge(&n.id, &t.id).is_some()
                        })?
                        .clone();
                    let nested = self.clause_into(&anchor_id, &[t.id.clone()])?;
                    c.anchor.relations.push(nested);
                    clauses.push(c);
                    label_spec(&t)
                }
            },
        };
        let mut q = ReferenceQuery::new("", "locate", target);
        q.relation_clauses = clauses;
        Some(Draft { query: q, setup })
    }

    /// A draft that several nodes satisfy equally.
    fn ambiguous_draft(&mut self, pattern: Pattern) -> Option<Draft> {
        let t = self.random_node();
        let mut q;
        let mut setup = Vec::new();
        match pattern {
            Pattern::DirectFeature | Pattern::Chained => {
                let spec = if self.rng.gen_bool(0.7) { label_spec(&t) } else { full_spec(&t) };
                q = ReferenceQuery::new("", "locate", spec);
            }
            Pattern::Relational => {
                let c = self.clause_into(&t, &[])?;
                q = ReferenceQuery::new("", "locate", label_spec(&t));
                q.relation_clauses.push(c);
            }
            Pattern::Memory => {
                let (cue, s) = self.memory_setup(&t);
                let others: Vec<ObjectNode> = self.graph.nodes().filter(|n| n.id != t.id).cloned().collect();
                let twin = others.choose(&mut self.rng)?.clone();
                let mut s2 = s.clone();
                s2.target_id = twin.id.clone();
                setup.push(s);
                setup.push(s2);
                let base = if twin.label == t.label && self.rng.gen_bool(0.5) {
                    label_spec(&t)
                } else {
                    EntitySpec::default()
                };
                q = ReferenceQuery::new("", "locate", base.with_memory(cue));
            }
        }
        Some(Draft { query: q, setup })
    }

    fn render_np(&mut self, spec: &EntitySpec) -> String {
        let mut words = vec!["the".to_string()];
        words.extend(spec.descriptors.iter().cloned());
        words.push(spec.label.clone().unwrap_or_else(|| "one".into()));
        words.join(" ")
    }

    fn render_entity(&mut self, spec: &EntitySpec) -> String {
        let mut out = self.render_np(spec);
        if let Some(cue) = &spec.memory_cue {
            let verb = cue.verb.clone().unwrap_or_default();
            if cue.window == TimeWindow::MinutesAgo && self.rng.gen_bool(0.25) {
                out.push_str(&format!(" we just {verb}"));
            } else {
                let phrase = *self.pick(window_phrases(cue.window));
                out.push_str(&format!(" we {verb} {phrase}"));
            }
        }
        for c in &spec.relations {
            let phrase = *self.pick(relation_phrases(c.relation));
            let anchor = self.render_entity(&c.anchor);
            out.push_str(&format!(" {phrase} {anchor}"));
        }
        out
    }

    fn render(&mut self, query: &mut ReferenceQuery) -> String {
        let mut body = self.render_entity(&query.target);
        for (i, c) in query.relation_clauses.iter().enumerate() {
            let phrase = *self.pick(relation_phrases(c.relation));
            let anchor = self.render_entity(&c.anchor);
            let joiner = if i == 0 { "" } else { " and" };
            body.push_str(&format!("{joiner} {phrase} {anchor}"));
        }
        let verb = *self.pick(&VERBS);
        query.action = verb.to_string();
        let templates = self.cfg.phrasings.clamp(1, 4);
        let text = match self.rng.gen_range(0..templates) {
            0 => format!("{} {body}", capitalize(verb)),
            1 => format!("{verb} {body}"),
            2 => format!("Can you {verb} {body}?"),
            _ => format!("Um, {verb} {body}, please."),
        };
        query.raw_transcript = text.clone();
        text
    }
}

/// Generates a corpus for `scene`. Slots that cannot be filled after
/// repeated attempts are skipped and reported in [`GenOutput::skipped`].
pub fn generate(scene: &RelationalGraph, cfg: &GenConfig) -> GenOutput {
    let scene_ref = cfg.scene_ref.clone().unwrap_or_else(|| scene.session_id().to_string());
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        graph: scene.clone(),
        now: scene.session_started_at(),
        cfg,
    };
    let mut kinds: Vec<EntryKind> = match cfg.kind {
        CorpusKind::Unambiguous => vec![EntryKind::Unambiguous; cfg.n],
        CorpusKind::Ambiguous => vec![EntryKind::Ambiguous; cfg.n],
        CorpusKind::Mixed { ambiguous, malformed } => {
            let ambiguous = ambiguous.min(cfg.n);
            let malformed = malformed.min(cfg.n - ambiguous);
            let mut k = vec![EntryKind::Unambiguous; cfg.n - ambiguous - malformed];
            k.extend(std::iter::repeat(EntryKind::Ambiguous).take(ambiguous));
            k.extend(std::iter::repeat(EntryKind::Malformed).take(malformed));
            k
        }
    };
    kinds.shuffle(&mut g.rng);
    let weights = WeightedIndex::new(cfg.weights.iter().map(|w| w.max(0.0))).ok();

    let mut out = GenOutput::default();
    let mut malformed_next = 0;
    for (slot, kind) in kinds.into_iter().enumerate() {
        g.now = scene.session_started_at() + Duration::hours(1) + Duration::minutes(ENTRY_SPACING_MIN * slot as i64);
        let index = out.entries.len();
        if kind == EntryKind::Malformed {
            let transcript = MALFORMED[malformed_next % MALFORMED.len()].to_string();
            malformed_next += 1;
            debug_assert!(parse(&transcript).is_err());
            out.entries.push(CorpusEntry {
                index,
                kind,
                transcript,
                expected_target_id: Expected::Fallback,
                expected_reason: Some(FallbackReason::ParseFailUpstream),
                patterns: Vec::new(),
                drawn: None,
                scene_ref: scene_ref.clone(),
                now: g.now,
                setup: Vec::new(),
                intent: None,
            });
            continue;
        }
        let pattern = match &weights {
            Some(w) => Pattern::ALL[w.sample(&mut g.rng)],
            None => {
                out.skipped.push((slot, "all pattern weights are zero".into()));
                continue;
            }
        };
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let draft = match kind {
                EntryKind::Ambiguous => g.ambiguous_draft(pattern),
                _ => g.draft(pattern),
            };
            let Some(mut draft) = draft else { continue };
            let mut trial = g.graph.clone();
            if draft.setup.iter().any(|s| s.apply(&mut trial).is_err()) {
                continue;
            }
            let transcript = g.render(&mut draft.query);
            let tags = classify_pattern(&draft.query);
            if kind == EntryKind::Unambiguous && !tags.contains(&pattern) {
                continue;
            }
            match parse(&transcript) {
                Ok(parsed) if parsed == draft.query => {}
                Ok(parsed) => {
                    log::warn!("`{transcript}` parses to {parsed:?}, not the generated intent; skipping");
                    continue;
                }
                Err(e) => {
                    log::warn!("`{transcript}` failed to parse: {e}; skipping");
                    continue;
                }
            }
            let clock = OracleClock::for_graph(&trial, g.now, cfg.minutes_ago_s);
            let expected = match (kind, verdict(&trial, &draft.query, &clock)) {
                (EntryKind::Unambiguous, Verdict::Unique(id)) => Expected::Target(id),
                (EntryKind::Ambiguous, Verdict::Tied(_)) => Expected::Fallback,
                _ => continue,
            };
            g.graph = trial;
            accepted = Some((draft, transcript, tags, expected));
            break;
        }
        let Some((draft, transcript, tags, expected)) = accepted else {
            log::warn!("could not build a {kind:?} {} entry for slot {slot}; skipped", pattern.as_str());
            out.skipped.push((slot, format!("unsatisfiable {} entry", pattern.as_str())));
            continue;
        };
        let expected_reason = (kind == EntryKind::Ambiguous).then_some(FallbackReason::Ambiguous);
        out.entries.push(CorpusEntry {
            index,
            kind,
            transcript,
            expected_target_id: expected,
            expected_reason,
            patterns: tags.into_iter().collect(),
            drawn: Some(pattern),
            scene_ref: scene_ref.clone(),
            now: g.now,
            setup: draft.setup,
            intent: Some(draft.query),
        });
    }
    out
}
