//! Independent reference implementations shared by the property suites and
//! the acceptance run.
#![allow(dead_code)]

pub mod memory;
pub mod misguidance;

use chrono::Utc;
use grounder_core::scene_graph::Frame;
use grounder_core::view::CameraPose;
use grounder_core::{ObjectNode, RelationalGraph, SpatialRelation, Vec3};
use nalgebra::{Isometry3, Perspective3, Point3, Quaternion, Translation3, UnitQuaternion, Vector3};
use rand::Rng;

/// Distance from `p` to the box around `n` (zero inside).
pub fn point_box_distance(p: Vec3, n: &ObjectNode) -> f64 {
    let c = n.center;
    let h = n.half_extents;
    let dx = ((p.x - c.x).abs() - h.x).max(0.0);
    let dy = ((p.y - c.y).abs() - h.y).max(0.0);
    let dz = ((p.z - c.z).abs() - h.z).max(0.0);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// First distance along `origin + t*dir`, `t` in `[0, t_max]`, where the ray
/// touches the box, found by dense sampling of the point-to-box distance
/// followed by refinement. The distance along a line to a convex set is
/// convex in `t`, so a ternary search around the best sample finds its
/// minimum and a bisection finds the entry point.
pub fn sampled_ray_hit(origin: Vec3, dir: Vec3, n: &ObjectNode, t_max: f64) -> Option<f64> {
    const SAMPLES: usize = 2000;
    let at = |t: f64| point_box_distance(origin + dir * t, n);
    if at(0.0) == 0.0 {
        return Some(0.0);
    }
    let step = t_max / SAMPLES as f64;
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for i in 0..=SAMPLES {
        let d = at(i as f64 * step);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    let (mut lo, mut hi) = (
        (best as f64 - 1.0).max(0.0) * step,
        ((best as f64 + 1.0) * step).min(t_max),
    );
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if at(m1) <= at(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let t_min = 0.5 * (lo + hi);
    if at(t_min) > 1e-12 {
        return None;
    }
    let (mut a, mut b) = (0.0, t_min);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if at(m) > 1e-12 {
            a = m;
        } else {
            b = m;
        }
    }
    Some(b)
}

pub struct SampledOcclusion {
    pub d_a: f64,
    pub d_b: f64,
    pub delta: f64,
}

impl SampledOcclusion {
    pub fn occluded(&self) -> bool {
        self.d_a > self.d_b + self.delta
    }

    /// Distance of the decision from its boundary.
    pub fn margin(&self) -> f64 {
        (self.d_a - self.d_b - self.delta).abs()
    }
}

pub fn sampled_occlusion(cam: &CameraPose, target: &ObjectNode, scene: &RelationalGraph) -> SampledOcclusion {
    let offset = target.center - cam.position;
    let d_a = offset.norm();
    let delta = target
        .half_extents
        .x
        .max(target.half_extents.y)
        .max(target.half_extents.z);
    let dir = offset * (1.0 / d_a);
    // Anything past D_A cannot occlude, but sample a little beyond it so
    // hits near the boundary are still measured.
    let reach = d_a + 1.0;
    let d_b = scene
        .nodes()
        .filter(|n| n.id != target.id)
        .filter_map(|n| sampled_ray_hit(cam.position, dir, n, reach))
        .fold(f64::INFINITY, f64::min);
    SampledOcclusion { d_a, d_b, delta }
}

/// Clip-space frustum test through nalgebra's projection matrix. Returns
/// `None` when the point sits within `eps` of a frustum face.
pub fn clip_space_in_frustum(cam: &CameraPose, p: Vec3, eps: f64) -> Option<bool> {
    let [w, x, y, z] = cam.orientation;
    let rot = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
    let pose = Isometry3::from_parts(Translation3::new(cam.position.x, cam.position.y, cam.position.z), rot);
    let view = pose.inverse().to_homogeneous();
    let tan_h = (cam.h_fov.to_radians() / 2.0).tan();
    let tan_v = (cam.v_fov.to_radians() / 2.0).tan();
    let proj = Perspective3::new(tan_h / tan_v, cam.v_fov.to_radians(), cam.near, cam.far);
    let clip = proj.as_matrix() * view * Point3::new(p.x, p.y, p.z).to_homogeneous();
    if clip.w <= 0.0 {
        return if clip.w.abs() < eps { None } else { Some(false) };
    }
    let ndc = [clip.x / clip.w, clip.y / clip.w, clip.z / clip.w];
    let worst = ndc.iter().map(|c| c.abs() - 1.0).fold(f64::NEG_INFINITY, f64::max);
    if worst.abs() < eps {
        None
    } else {
        Some(worst < 0.0)
    }
}

/// Every ordered pair run through the relation rule, no indexing.
pub fn brute_force_edges(nodes: &[ObjectNode], radius: f64) -> Vec<(String, String, SpatialRelation)> {
    let mut out = Vec::new();
    for a in nodes {
        for b in nodes {
            if a.id == b.id {
                continue;
            }
            if let Some((rel, _)) = grounder_core::scene_graph::derive_relation(a, b, radius) {
                out.push((a.id.clone(), b.id.clone(), rel));
            }
        }
    }
    out.sort();
    out
}

pub fn edge_triples(g: &RelationalGraph) -> Vec<(String, String, SpatialRelation)> {
    let mut v: Vec<_> = g
        .edges()
        .iter()
        .map(|e| (e.from.clone(), e.to.clone(), e.relation))
        .collect();
    v.sort();
    v
}

/// Non-overlapping boxes around a camera that looks roughly at them.
pub fn random_box_scene<R: Rng>(rng: &mut R) -> (CameraPose, RelationalGraph) {
    let n = rng.gen_range(2..=12);
    let mut nodes: Vec<ObjectNode> = Vec::new();
    while nodes.len() < n {
        let c = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-4.0..-0.5));
        let h = Vec3::new(rng.gen_range(0.03..0.3), rng.gen_range(0.03..0.3), rng.gen_range(0.03..0.3));
        let overlaps = nodes.iter().any(|o| {
            (o.center.x - c.x).abs() < o.half_extents.x + h.x
                && (o.center.y - c.y).abs() < o.half_extents.y + h.y
                && (o.center.z - c.z).abs() < o.half_extents.z + h.z
        });
        if !overlaps {
            nodes.push(ObjectNode::new(format!("n{}", nodes.len()), "box", &[], c, h));
        }
    }
    let g = RelationalGraph::build("v", Utc::now(), nodes, 0.5, Frame::default()).unwrap();
    let cam = CameraPose::with_yaw(
        Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(0.0..1.0)),
        rng.gen_range(-20.0..20.0),
    );
    (cam, g)
}

pub fn random_pose<R: Rng>(rng: &mut R) -> CameraPose {
    let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let q = UnitQuaternion::from_scaled_axis(axis * rng.gen_range(0.0..3.0));
    let mut cam = CameraPose::new(
        Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
        [q.w, q.i, q.j, q.k],
    );
    cam.h_fov = rng.gen_range(30.0..150.0);
    cam.v_fov = rng.gen_range(30.0..150.0);
    cam.near = rng.gen_range(0.05..0.5);
    cam.far = rng.gen_range(2.0..12.0);
    cam
}
