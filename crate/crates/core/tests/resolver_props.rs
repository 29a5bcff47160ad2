use std::collections::BTreeSet;
use std::sync::Arc;

use chrono::{Duration, TimeZone, Utc};
use grounder_core::corpus::oracle::{matches, OracleClock};
use grounder_core::corpus::scenes::random_scene;
use grounder_core::corpus::{generate, run_batch, BatchOptions, GenConfig};
use grounder_core::matcher::HashingEmbedder;
use grounder_core::scene_graph::{derive_relation, Frame};
use grounder_core::{
    parse, Engine, EntitySpec, FallbackReason, ObjectNode, RelationClause, RelationalGraph, ResolutionConfig, Resolver,
    SpatialRelation, Vec3,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn started() -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 3, 14, 0, 0, 0).unwrap()
}

fn resolver() -> Resolver {
    Resolver::new(Arc::new(HashingEmbedder::default()), ResolutionConfig::default())
}

/// The memory cue alone; attributes are soft and relations are checked
/// against the anchors the resolver actually chose.
fn memory_only(spec: &EntitySpec) -> EntitySpec {
    EntitySpec {
        memory_cue: spec.memory_cue.clone(),
        ..Default::default()
    }
}

#[test]
fn resolver_agrees_with_oracle_on_random_scenes() {
    let engine = Engine::default();
    let mut seen = BTreeSet::new();
    let mut total = 0;
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=10);
        let scene = random_scene(&mut rng, &format!("scene-{seed}"), started(), n);
        let cfg = GenConfig {
            n: 4,
            seed,
            ..Default::default()
        };
        let entries = generate(&scene, &cfg).entries;
        let (report, outcomes) = run_batch(&engine, &scene, &entries, BatchOptions::default()).unwrap();
        assert_eq!(report.totals.correct, entries.len(), "seed {seed}: {:#?}", report.mismatches);
        total += entries.len();
        for e in &entries {
            seen.extend(e.patterns.iter().copied());
        }
        // Soundness: literal re-check of every resolved winner.
        let mut g = scene.clone();
        for (e, o) in entries.iter().zip(&outcomes) {
            for s in &e.setup {
                s.apply(&mut g).unwrap();
            }
            let q = e.intent.as_ref().unwrap();
            let clock = OracleClock::for_graph(&g, e.now, 600);
            let node = g.node(o.target_id.as_deref().unwrap()).unwrap();
            assert!(matches(&g, node, &q.target, &q.relation_clauses, &clock));
        }
    }
    assert!(total > 3000, "only {total} entries generated");
    assert_eq!(seen.len(), 4, "{seen:?}");
}

#[test]
fn duplicating_the_winner_makes_it_ambiguous() {
    let r = resolver();
    let mut checked = 0;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=10);
        let scene = random_scene(&mut rng, "dup", started(), n);
        let cfg = GenConfig {
            n: 3,
            seed,
            weights: [1.0, 0.0, 0.0, 0.0],
            ..Default::default()
        };
        for e in generate(&scene, &cfg).entries {
            let q = e.intent.unwrap();
            let res = r.resolve(&scene, &q, None, e.now);
            let id = res.target_id.clone().unwrap();
            let mut twin = scene.node(&id).unwrap().clone();
            twin.id = format!("{id}-twin");
            twin.center = twin.center + Vec3::new(1e-4, 0.0, 0.0);
            let mut nodes: Vec<ObjectNode> = scene.nodes().cloned().collect();
            nodes.push(twin);
            let doubled = RelationalGraph::build("dup", started(), nodes, 0.5, Frame::default()).unwrap();
            let again = r.resolve(&doubled, &q, None, e.now);
            assert_eq!(again.reason, Some(FallbackReason::Ambiguous), "{}", e.transcript);
            checked += 1;
        }
    }
    assert!(checked > 300);
}

#[test]
fn placement_re_derives_the_requested_relation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let r = resolver();
    for _ in 0..200 {
        let a = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(-1.0..1.0));
        let anchor = ObjectNode::new("a", "panel", &["red"], a, Vec3::new(0.05, 0.05, 0.05));
        let other = ObjectNode::new("b", "mug", &[], a + Vec3::new(3.0, 0.0, 0.0), Vec3::new(0.05, 0.05, 0.05));
        let g = RelationalGraph::build("p", started(), vec![anchor.clone(), other.clone()], 0.5, Frame::default()).unwrap();
        for rel in SpatialRelation::CONCRETE.into_iter().chain([SpatialRelation::Adjacent]) {
            let dest = RelationClause::new(rel, EntitySpec::labeled("panel", &["red"]));
            let q = parse("move the mug to the left of the red panel").unwrap();
            let p = r.resolve_destination(&g, &q, &dest, started()).unwrap();
            let mut moved = other.clone();
            moved.center = p;
            let (got, dist) = derive_relation(&anchor, &moved, 0.5).unwrap();
            let want = if rel == SpatialRelation::Adjacent { SpatialRelation::RightOf } else { rel };
            assert_eq!(got, want);
            assert!((dist - 0.3).abs() < 1e-9);
        }
    }
}

const WORDS: &[&str] = &[
    "the", "a", "red", "blue", "striped", "cube", "sphere", "panel", "mug", "one", "we", "moved", "fixed", "earlier",
    "yesterday", "last", "time", "behind", "above", "left", "of", "to", "next", "and", "then", "select", "grab",
    "in", "front", "a", "minute", "ago", "it",
];

fn mixed_scene() -> RelationalGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut g = random_scene(&mut rng, "fuzz", started(), 9);
    let ids: Vec<String> = g.nodes().map(|n| n.id.clone()).collect();
    for (i, id) in ids.iter().enumerate().step_by(2) {
        let rec = grounder_core::InteractionRecord::new(
            "op",
            if i % 4 == 0 { "moved" } else { "fixed" },
            started() + Duration::minutes(30 + i as i64),
            "fuzz",
        );
        g.record_interaction(id, rec).unwrap();
    }
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    /// Whatever the utterance, a resolved winner honours every hard
    /// constraint and the trace only ever narrows.
    #[test]
    fn fallback_safety(words in prop::collection::vec(prop::sample::select(WORDS.to_vec()), 1..14)) {
        let g = mixed_scene();
        let now = started() + Duration::hours(2);
        let text = words.join(" ");
        let engine = Engine::default();
        let out = engine.interpret(&g, &text, None, now);
        let res = &out.result;
        if let Some(id) = &res.target_id {
            let q = out.query.as_ref().unwrap();
            prop_assert!(res.candidates.iter().any(|c| &c.node_id == id));
            let clock = OracleClock::for_graph(&g, now, 600);
            let node = g.node(id).unwrap();
            prop_assert!(matches(&g, node, &memory_only(&q.target), &[], &clock));
            let steps = res.trace.iter().filter(|t| t.stage.starts_with("relation:"));
            for t in steps {
                let rel = &t.stage["relation:".len()..];
                let anchor = t.reason.as_deref().unwrap().strip_prefix("anchor ").unwrap();
                let edge = g.edges().iter().find(|e| e.from == anchor && e.to == *id);
                prop_assert!(edge.is_some(), "{} has no edge to {}", anchor, id);
                let got = edge.unwrap().relation.to_string();
                prop_assert!(rel == "ADJACENT" || rel == got, "{} vs {}", rel, got);
            }
        } else {
            prop_assert!(res.reason.is_some());
        }
        let main: Vec<_> = res.trace.iter().filter(|t| !t.is_anchor() && !t.stage.contains('.')).collect();
        for t in &main {
            prop_assert!(t.nodes_out <= t.nodes_in);
        }
        for w in main.windows(2) {
            prop_assert!(w[1].nodes_in <= w[0].nodes_out.max(w[0].nodes_in));
            prop_assert!(w[1].nodes_out <= w[0].nodes_out || w[0].stage == "parse");
        }
        if let Some(rank) = main.iter().find(|t| t.stage == "rank") {
            prop_assert!(rank.nodes_out <= 5);
        }
    }
}

#[test]
fn unsatisfiable_queries_fall_back() {
    let g = mixed_scene();
    let now = started() + Duration::hours(2);
    let engine = Engine::default();
    for text in [
        "the cube we rotated yesterday",
        "the drill",
        "the one we fixed last time",
        "the cube behind the cube behind the cube behind the cube behind the cube",
    ] {
        let out = engine.interpret(&g, text, None, now);
        assert!(!out.result.is_resolved(), "{text}: {:?}", out.result);
    }
}
