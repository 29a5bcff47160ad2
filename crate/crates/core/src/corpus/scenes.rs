//! The eight-cube benchmark layout and a seeded random scene generator.

use chrono::{DateTime, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::geometry::Vec3;
use crate::scene_graph::{Frame, ObjectNode, RelationalGraph, DEFAULT_RADIUS_M};

pub const BENCHMARK_SESSION: &str = "benchmark-cubes";

/// Color and surface of each benchmark cube, in grid order.
pub const BENCHMARK_CUBES: [(&str, &str); 8] = [
    ("purple", "striped"),
    ("blue", "dotted"),
    ("red", "checkered"),
    ("green", "marbled"),
    ("yellow", "zigzag"),
    ("orange", "speckled"),
    ("white", "dashed"),
    ("black", "glossy"),
];

/// Spacing between neighbouring cubes on the table.
pub const BENCHMARK_SPACING_M: f64 = 0.25;
pub const BENCHMARK_TABLE_Y: f64 = 0.78;
pub const BENCHMARK_HALF_EXTENT: f64 = 0.03;

pub fn benchmark_started_at() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 3, 14, 0, 0, 0).unwrap()
}

/// Eight textured cubes on a table, four across and two deep.
pub fn benchmark_nodes() -> Vec<ObjectNode> {
    BENCHMARK_CUBES
        .iter()
        .enumerate()
        .map(|(i, (color, surface))| {
            let col = (i % 4) as f64;
            let row = (i / 4) as f64;
            let center = Vec3::new(
                (col - 1.5) * BENCHMARK_SPACING_M,
                BENCHMARK_TABLE_Y,
                (row - 0.5) * BENCHMARK_SPACING_M,
            );
            let h = BENCHMARK_HALF_EXTENT;
            let mut n = ObjectNode::new(format!("cube-{}", i + 1), "cube", &[color, surface], center, Vec3::new(h, h, h));
            n.scene_context = "table".into();
            n
        })
        .collect()
}

pub fn benchmark_scene() -> RelationalGraph {
    RelationalGraph::build(
        BENCHMARK_SESSION,
        benchmark_started_at(),
        benchmark_nodes(),
        DEFAULT_RADIUS_M,
        Frame::default(),
    )
    .expect("benchmark scene is valid")
}

/// Words used by generated scenes. No two share a bucket under the default
/// hashing embedder.
pub const LABELS: [&str; 10] = ["cube", "sphere", "cone", "cylinder", "box", "mug", "drill", "panel", "valve", "lamp"];
pub const COLORS: [&str; 8] = ["red", "blue", "green", "yellow", "purple", "orange", "white", "black"];
pub const FINISHES: [&str; 8] = ["striped", "dotted", "checkered", "marbled", "glossy", "matte", "wooden", "speckled"];

/// Random scene with `n` nodes packed into a small workspace so that most
/// pairs fall within the relation radius. Labels are drawn from a handful
/// per scene so repeats are common.
pub fn random_scene<R: Rng>(rng: &mut R, session_id: &str, started_at: DateTime<Utc>, n: usize) -> RelationalGraph {
    let mut labels = LABELS.to_vec();
    labels.shuffle(rng);
    let pool = &labels[..rng.gen_range(2..=4)];
    let mut nodes: Vec<ObjectNode> = Vec::with_capacity(n);
    while nodes.len() < n {
        let label = pool[rng.gen_range(0..pool.len())];
        let mut desc: Vec<&str> = Vec::new();
        if rng.gen_bool(0.8) {
            desc.push(COLORS[rng.gen_range(0..COLORS.len())]);
        }
        if rng.gen_bool(0.5) {
            desc.push(FINISHES[rng.gen_range(0..FINISHES.len())]);
        }
        // Quantized positions keep the geometry readable in failures.
        let q = |v: f64| (v * 100.0).round() / 100.0;
        let center = Vec3::new(
            q(rng.gen_range(-0.4..0.4)),
            q(rng.gen_range(0.5..1.0)),
            q(rng.gen_range(-0.4..0.4)),
        );
        if nodes.iter().any(|o| o.center == center) {
            continue;
        }
        let h = q(rng.gen_range(0.02..0.08));
        let id = format!("n{}", nodes.len());
        nodes.push(ObjectNode::new(id, label, &desc, center, Vec3::new(h, h, h)));
    }
    RelationalGraph::build(session_id, started_at, nodes, DEFAULT_RADIUS_M, Frame::default())
        .expect("generated scene is valid")
}
