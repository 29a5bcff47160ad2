//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use grounder_core::corpus::oracle::{satisfying, OracleClock};
use grounder_core::corpus::scenes::{benchmark_nodes, random_scene};
use grounder_core::corpus::{
    benchmark_scene, generate, run_batch, BatchOptions, CorpusKind, EntryKind, GenConfig,
};
use grounder_core::matcher::{score_candidates, top_k, ScoringOptions};
use grounder_core::scene_graph::{Frame, DEFAULT_RADIUS_M};
use grounder_core::view::{is_occluded, point_in_frustum, OcclusionInputs};
use grounder_core::{
    CachedEmbedder, EntitySpec, Engine, FallbackReason, HashingEmbedder, InteractionRecord, ObjectNode, Pattern,
    RelationalGraph, ScoredCandidate, Vec3,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{brute_force_edges, clip_space_in_frustum, edge_triples, random_box_scene, random_pose, sampled_occlusion};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn started() -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 3, 14, 0, 0, 0).unwrap()
}

fn oracle_equivalence() -> Outcome {
    let engine = Engine::default();
    let t = Instant::now();
    let mut patterns = BTreeSet::new();
    let mut checked = 0;
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=10);
        let scene = random_scene(&mut rng, &format!("scene-{seed}"), started(), n);
        let cfg = GenConfig {
            n: 4,
            seed,
            ..Default::default()
        };
        let mut g = scene.clone();
        for e in generate(&scene, &cfg).entries {
            for s in &e.setup {
                s.apply(&mut g).map_err(|err| err.to_string())?;
            }
            let intent = e.intent.as_ref().expect("generated entries carry intent");
            let want = satisfying(&g, intent, &OracleClock::for_graph(&g, e.now, 600));
            let got = engine.interpret(&g, &e.transcript, None, e.now).result.target_id;
            ensure(want.len() == 1 && got.as_ref() == want.first(), || {
                format!("seed {seed} {:?}: oracle {want:?}, resolver {got:?}", e.transcript)
            })?;
            patterns.extend(e.patterns.iter().copied());
            checked += 1;
        }
    }
    let elapsed = t.elapsed();
    ensure(patterns.len() == Pattern::ALL.len(), || format!("patterns seen: {patterns:?}"))?;
    ensure(checked >= 3000, || format!("only {checked} queries"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{checked} queries, 100% agreement, {:.1}s", elapsed.as_secs_f64()))
}

fn gen(kind: CorpusKind, n: usize) -> Vec<grounder_core::corpus::CorpusEntry> {
    let cfg = GenConfig {
        n,
        kind,
        ..Default::default()
    };
    generate(&benchmark_scene(), &cfg).entries
}

fn benchmark_suite() -> Outcome {
    let engine = Engine::default();
    let scene = benchmark_scene();
    let entries = gen(CorpusKind::Unambiguous, 40);
    ensure(entries.len() == 40, || format!("generated {}", entries.len()))?;
    let (report, _) = run_batch(&engine, &scene, &entries, BatchOptions::default()).map_err(|e| e.to_string())?;
    ensure(report.totals.resolved == 40 && report.totals.correct == 40, || {
        format!("{:?}", report.mismatches)
    })?;

    let amb = gen(CorpusKind::Ambiguous, 10);
    ensure(amb.len() == 10, || format!("generated {} ambiguous", amb.len()))?;
    let (report, outcomes) = run_batch(&engine, &scene, &amb, BatchOptions::default()).map_err(|e| e.to_string())?;
    ensure(
        report.totals.fallback == 10 && outcomes.iter().all(|o| o.reason == Some(FallbackReason::Ambiguous)),
        || format!("{outcomes:?}"),
    )?;
    Ok("40/40 resolved, 10/10 AMBIGUOUS".into())
}

fn mixed_corpus() -> Outcome {
    let entries = gen(CorpusKind::Mixed { ambiguous: 11, malformed: 7 }, 81);
    let count = |k: EntryKind| entries.iter().filter(|e| e.kind == k).count();
    let built = (count(EntryKind::Unambiguous), count(EntryKind::Ambiguous), count(EntryKind::Malformed));
    ensure(built == (63, 11, 7), || format!("constructed {built:?}"))?;
    let (report, _) =
        run_batch(&Engine::default(), &benchmark_scene(), &entries, BatchOptions::default()).map_err(|e| e.to_string())?;
    let t = &report.totals;
    let pct = |x: f64| (x * 1000.0).round() / 10.0;
    let got = (pct(t.resolved_rate), pct(t.fallback_rate), pct(t.parse_error_rate));
    ensure((t.resolved, t.fallback, t.parse_error) == (63, 11, 7), || format!("{t:?}"))?;
    ensure(got == (77.8, 13.6, 8.6), || format!("rates {got:?}"))?;
    Ok(format!("{:.1}% / {:.1}% / {:.1}%", got.0, got.1, got.2))
}

fn occlusion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut frustum_points = 0;
    for _ in 0..1000 {
        let cam = random_pose(&mut rng);
        for _ in 0..4 {
            let p = Vec3::new(rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0));
            if let Some(expected) = clip_space_in_frustum(&cam, p, 1e-9) {
                ensure(point_in_frustum(&cam, p) == expected, || format!("frustum {cam:?} {p:?}"))?;
                frustum_points += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut agree, mut occluded, mut borderline) = (0usize, 0usize, 0usize);
    for scene_no in 0..500 {
        let (cam, g) = random_box_scene(&mut rng);
        for target in g.nodes() {
            let oracle = sampled_occlusion(&cam, target, &g);
            if oracle.margin() < 1e-7 {
                borderline += 1;
                continue;
            }
            ensure(is_occluded(&cam, target, &g) == oracle.occluded(), || {
                format!("scene {scene_no}, target {}", target.id)
            })?;
            agree += 1;
            occluded += oracle.occluded() as usize;
        }
    }
    ensure(borderline <= agree / 1000, || format!("{borderline} borderline"))?;
    let occ = |a, b, s| OcclusionInputs { cam_to_obj: a, ray_hit: b, scale: s }.occluded();
    ensure(occ(3.0, 2.0, 0.5), || "D_A > D_B + delta not occluded".into())?;
    ensure(!occ(2.5, 2.0, 0.5), || "equality case occluded".into())?;
    ensure(!occ(3.0, f64::INFINITY, 0.5), || "no-hit case occluded".into())?;
    Ok(format!(
        "{agree} targets agree ({occluded} occluded, {borderline} borderline skipped), \
         {frustum_points} frustum points match clip space, 3 inequality cases"
    ))
}

fn graph_invariants() -> Outcome {
    let check = |g: &RelationalGraph| -> Result<(), String> {
        let nodes: Vec<ObjectNode> = g.nodes().cloned().collect();
        ensure(edge_triples(g) == brute_force_edges(&nodes, g.radius_m()), || "edges differ from enumeration".into())?;
        for e in g.edges() {
            ensure(e.distance <= DEFAULT_RADIUS_M, || format!("edge beyond radius: {e:?}"))?;
            let back = g.edge(&e.to, &e.from).map(|b| b.relation);
            ensure(back == Some(e.relation.inverse()), || format!("missing inverse of {e:?}"))?;
        }
        Ok(())
    };
    let bench = benchmark_scene();
    check(&bench)?;
    ensure(RelationalGraph::load(&bench.save()).map_err(|e| e.to_string())? == bench, || "benchmark round trip".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut g = random_scene(&mut rng, "s1", started(), 8);
    for step in 0..1000 {
        let ids: Vec<String> = g.nodes().map(|n| n.id.clone()).collect();
        let pick = ids[rng.gen_range(0..ids.len())].clone();
        let ts = started() + chrono::Duration::seconds(step);
        let result = match rng.gen_range(0..4) {
            0 | 1 => {
                let c = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(0.4..1.1), rng.gen_range(-0.5..0.5));
                let h = rng.gen_range(0.01..0.1);
                g.update_node_pose(&pick, c, Vec3::new(h, h, h), InteractionRecord::new("op", "moved", ts, "s1"))
            }
            2 => g.record_interaction(&pick, InteractionRecord::new("op", "tapped", ts, "s1")),
            _ if ids.len() > 3 => {
                let keep: Vec<ObjectNode> = g.nodes().filter(|n| n.id != pick).cloned().collect();
                g.replace_nodes(keep)
            }
            _ => {
                let mut nodes: Vec<ObjectNode> = g.nodes().cloned().collect();
                let c = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(0.4..1.1), rng.gen_range(-0.5..0.5));
                nodes.push(ObjectNode::new(format!("x{step}"), "valve", &["red"], c, Vec3::new(0.03, 0.03, 0.03)));
                g.replace_nodes(nodes)
            }
        };
        result.map_err(|e| format!("step {step}: {e}"))?;
        check(&g)?;
        let rebuilt = RelationalGraph::build(
            g.session_id(),
            g.session_started_at(),
            g.nodes().cloned().collect(),
            g.radius_m(),
            Frame::default(),
        )
        .map_err(|e| e.to_string())?;
        ensure(rebuilt == g, || format!("rebuild diverged at step {step}"))?;
        let back = RelationalGraph::load(&g.save()).map_err(|e| e.to_string())?;
        ensure(back == g && back.save() == g.save(), || format!("round trip failed at step {step}"))?;
    }
    Ok("closure, bound, 1000-mutation rebuild and round trip hold".into())
}

fn full_sort_prefix(mut v: Vec<ScoredCandidate>, k: usize) -> Vec<ScoredCandidate> {
    v.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then_with(|| a.node_id.cmp(&b.node_id)));
    v.truncate(k);
    v
}

fn top_k_and_cache() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..1000 {
        let n = rng.gen_range(1..60);
        let v: Vec<ScoredCandidate> = (0..n)
            .map(|i| ScoredCandidate {
                node_id: format!("n{i:03}"),
                score: rng.gen_range(-10..=10) as f64 / 10.0,
            })
            .collect();
        let k = rng.gen_range(1..12);
        ensure(top_k(v.clone(), k) == full_sort_prefix(v, k), || format!("trial {trial}"))?;
    }
    let plain = HashingEmbedder::default();
    let cached = CachedEmbedder::new(HashingEmbedder::default());
    let nodes = benchmark_nodes();
    let specs = [
        EntitySpec::labeled("cube", &["red"]),
        EntitySpec::labeled("cube", &["blue", "dotted"]),
        EntitySpec::labeled("sphere", &[]),
    ];
    let mut compared = 0;
    for _ in 0..3 {
        for spec in &specs {
            let opts = ScoringOptions::default();
            let a = score_candidates(&plain, spec, &nodes, opts).map_err(|e| e.to_string())?;
            let b = score_candidates(&cached, spec, &nodes, opts).map_err(|e| e.to_string())?;
            for (x, y) in a.iter().zip(&b) {
                ensure(x.node_id == y.node_id && x.score.to_bits() == y.score.to_bits(), || {
                    format!("{} differs", x.node_id)
                })?;
                compared += 1;
            }
        }
    }
    Ok(format!("1000 vectors match full sort, {compared} cached scores bit-identical"))
}

fn memory_lifecycle() -> Outcome {
    common::memory::two_session_recall();
    Ok("PREVIOUS_SESSION, YESTERDAY and MINUTES_AGO resolve across persist/resume".into())
}

fn misguidance() -> Outcome {
    let n = common::misguidance::failure_paths();
    Ok(format!("{n} failure paths show the transcript only"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("benchmark scene suite", benchmark_suite),
        ("mixed corpus fractions", mixed_corpus),
        ("occlusion and frustum", occlusion),
        ("graph invariants", graph_invariants),
        ("top-k and cache", top_k_and_cache),
        ("memory lifecycle", memory_lifecycle),
        ("misguidance avoidance", misguidance),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
