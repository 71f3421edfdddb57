//! Monitoring-position-based servoing: the look-at pose that keeps the
//! wrist camera's optical axis on the target, a rotation-valid pose blend,
//! and the camera frustum visibility test.

use nalgebra::Vector3;

use crate::se3::{rotation_between, rotation_exp, rotation_log, RigidTransform};
use crate::{Error, Result};

/// The servo target of one tick: grasp pose, monitoring pose and their
/// blend at the current activation value.
#[derive(Debug, Clone, Copy)]
pub struct ServoTarget {
    pub grasp_pose: RigidTransform,
    pub monitor_pose: RigidTransform,
    pub blended: RigidTransform,
    pub sig_used: f64,
}

impl ServoTarget {
    pub fn new(grasp: RigidTransform, monitor: RigidTransform, sig: f64) -> Self {
        ServoTarget {
            grasp_pose: grasp,
            monitor_pose: monitor,
            blended: blend(&grasp, &monitor, sig),
            sig_used: sig,
        }
    }
}

/// The monitoring pose: keeps the end-effector where it is and rotates the
/// camera z-axis onto the target direction.
///
/// The rotation is the minimal rotation taking the base-frame z-axis onto
/// `normalize(target - ee)`; its z-column therefore points at the target.
/// For a target exactly behind the z-axis the rotation axis is chosen by
/// the deterministic x-preference rule of [`rotation_between`].
pub fn monitoring_pose(
    ee_position: &Vector3<f64>,
    target_position: &Vector3<f64>,
) -> Result<RigidTransform> {
    let d = target_position - ee_position;
    let dist = d.norm();
    if dist < 1e-12 {
        return Err(Error::invalid(
            "monitoring pose undefined for coincident end-effector and target",
        ));
    }
    let rotation = rotation_between(&Vector3::z(), &(d / dist));
    Ok(RigidTransform::from_parts(rotation, *ee_position))
}

/// Blends two poses: linear interpolation of translations and geodesic
/// interpolation of rotations from `monitor` (s = 0) to `grasp` (s = 1).
///
/// Unlike a matrix convex combination this always yields a valid rotation.
pub fn blend(grasp: &RigidTransform, monitor: &RigidTransform, s: f64) -> RigidTransform {
    let translation = grasp.translation * s + monitor.translation * (1.0 - s);
    let rel = monitor.rotation.transpose() * grasp.rotation;
    let w = rotation_log(&rel);
    let rotation = monitor.rotation * rotation_exp(&(w * s));
    RigidTransform::from_parts(rotation, translation)
}

/// True when `target` lies inside the camera's viewing pyramid: in front of
/// the camera, within both half-angle cones and within range.
pub fn in_frustum(
    camera_pose: &RigidTransform,
    target: &Vector3<f64>,
    hfov: f64,
    vfov: f64,
    max_range: f64,
) -> bool {
    let local = camera_pose.inverse().transform_point(target);
    if local.z <= 0.0 {
        return false;
    }
    if local.norm() > max_range {
        return false;
    }
    let half_h = (hfov / 2.0).tan();
    let half_v = (vfov / 2.0).tan();
    local.x.abs() <= local.z * half_h && local.y.abs() <= local.z * half_v
}
