//! Viewpoint-aware candidate filtering: center-point frustum test plus a
//! single-ray depth test against the other nodes' boxes.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Vec3};
use crate::scene_graph::{ObjectNode, RelationalGraph};

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("near/far planes must satisfy 0 < near < far (got {near}, {far})")]
    Planes { near: f64, far: f64 },
    #[error("field of view must be in (0, 180) degrees, got {0}")]
    Fov(f64),
    #[error("orientation quaternion must be finite and non-zero")]
    Orientation,
}

/// Camera looking down its local -Z with +Y up. Orientation is `[w, x, y, z]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vec3,
    #[serde(default = "identity")]
    pub orientation: [f64; 4],
    #[serde(default = "default_h_fov")]
    pub h_fov: f64,
    #[serde(default = "default_v_fov")]
    pub v_fov: f64,
    #[serde(default = "default_near")]
    pub near: f64,
    #[serde(default = "default_far")]
    pub far: f64,
}

fn identity() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}
fn default_h_fov() -> f64 {
    104.0
}
fn default_v_fov() -> f64 {
    90.0
}
fn default_near() -> f64 {
    0.1
}
fn default_far() -> f64 {
    10.0
}

impl CameraPose {
    pub fn new(position: Vec3, orientation: [f64; 4]) -> Self {
        CameraPose {
            position,
            orientation,
            h_fov: default_h_fov(),
            v_fov: default_v_fov(),
            near: default_near(),
            far: default_far(),
        }
    }

    /// Camera at `position` turned `yaw_deg` about +Y (positive turns left).
    pub fn with_yaw(position: Vec3, yaw_deg: f64) -> Self {
        let q = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), yaw_deg.to_radians());
        CameraPose::new(position, [q.w, q.i, q.j, q.k])
    }

    /// Checks the invariants and normalizes the quaternion.
    pub fn validated(mut self) -> Result<Self, CameraError> {
        if !(self.near > 0.0 && self.near < self.far && self.far.is_finite()) {
            return Err(CameraError::Planes {
                near: self.near,
                far: self.far,
            });
        }
        for fov in [self.h_fov, self.v_fov] {
            if !(fov > 0.0 && fov < 180.0) {
                return Err(CameraError::Fov(fov));
            }
        }
        let [w, x, y, z] = self.orientation;
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(CameraError::Orientation);
        }
        self.orientation = [w / n, x / n, y / n, z / n];
        Ok(self)
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.orientation;
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
    }

    /// World point in camera coordinates.
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let d = p - self.position;
        let v = self.rotation().inverse_transform_vector(&Vector3::new(d.x, d.y, d.z));
        Vec3::new(v.x, v.y, v.z)
    }
}

pub fn in_frustum(cam: &CameraPose, node: &ObjectNode) -> bool {
    point_in_frustum(cam, node.center)
}

pub fn point_in_frustum(cam: &CameraPose, p: Vec3) -> bool {
    let local = cam.to_camera(p);
    let depth = -local.z;
    if depth < cam.near || depth > cam.far {
        return false;
    }
    let half_w = depth * (cam.h_fov.to_radians() / 2.0).tan();
    let half_h = depth * (cam.v_fov.to_radians() / 2.0).tan();
    local.x.abs() <= half_w && local.y.abs() <= half_h
}

/// Depth-test inputs: camera-to-object distance, ray hit distance (infinite
/// when nothing is hit), and the target's scale margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclusionInputs {
    pub cam_to_obj: f64,
    pub ray_hit: f64,
    pub scale: f64,
}

impl OcclusionInputs {
    pub fn occluded(&self) -> bool {
        self.cam_to_obj > self.ray_hit + self.scale
    }
}

pub fn occlusion_inputs(cam: &CameraPose, target: &ObjectNode, scene: &RelationalGraph) -> OcclusionInputs {
    let offset = target.center - cam.position;
    let cam_to_obj = offset.norm();
    let scale = target.half_extents.max_component();
    if cam_to_obj == 0.0 {
        return OcclusionInputs {
            cam_to_obj,
            ray_hit: f64::INFINITY,
            scale,
        };
    }
    let dir = offset * (1.0 / cam_to_obj);
    let ray_hit = scene
        .nodes()
        .filter(|n| n.id != target.id)
        .filter_map(|n| Aabb::from_center(n.center, n.half_extents).ray_hit(cam.position, dir))
        .fold(f64::INFINITY, f64::min);
    OcclusionInputs {
        cam_to_obj,
        ray_hit,
        scale,
    }
}

pub fn is_occluded(cam: &CameraPose, target: &ObjectNode, scene: &RelationalGraph) -> bool {
    occlusion_inputs(cam, target, scene).occluded()
}

/// Nodes from `nodes` that are in view and not hidden behind other nodes of
/// `scene`. Without a camera everything passes.
pub fn filter_visible<'a, I>(cam: Option<&CameraPose>, scene: &RelationalGraph, nodes: I) -> Vec<&'a ObjectNode>
where
    I: IntoIterator<Item = &'a ObjectNode>,
{
    match cam {
        None => nodes.into_iter().collect(),
        Some(cam) => nodes
            .into_iter()
            .filter(|n| in_frustum(cam, n) && !is_occluded(cam, n, scene))
            .collect(),
    }
}
