//! Kinematic model of the mobile manipulator.
//!
//! The platform is modelled as a virtual base — two perpendicular prismatic
//! joints plus one revolute joint in the world plane — carrying a 6-DOF arm
//! described in modified (Craig) DH convention. Nine joints total, ordered
//! `(x, y, theta, q1..q6)` in every vector and Jacobian column layout.
//!
//! All twists and Jacobians are expressed in the world frame, linear rows
//! first.

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3, Vector6};

use crate::se3::RigidTransform;
use crate::{Error, Result};

pub const BASE_DOF: usize = 3;
pub const ARM_DOF: usize = 6;
pub const TOTAL_DOF: usize = BASE_DOF + ARM_DOF;

/// Whole-body Jacobian type: 6 twist rows by 9 joint columns.
pub type WholeBodyJacobian = SMatrix<f64, 6, 9>;

/// One modified-DH joint descriptor: `a` (m) and `alpha` (rad) attach frame
/// i to i-1, `d` (m) is the z offset, `offset` (rad) is added to the joint
/// variable.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DhRow {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    pub offset: f64,
}

/// Joint position interval, `min < max`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct JointLimit {
    pub min: f64,
    pub max: f64,
}

/// The full kinematic description of the platform: DH chain, constant mount
/// transforms, joint limits and collision geometry.
#[derive(Debug, Clone)]
pub struct RobotModel {
    /// Modified-DH rows of the six arm joints.
    pub arm_dh: [DhRow; ARM_DOF],
    /// Virtual base frame to mobile base body (constant).
    pub t_vb: RigidTransform,
    /// Mobile base body to arm mount (constant).
    pub t_ba: RigidTransform,
    /// Flange to tool/camera point (constant).
    pub t_flange_tool: RigidTransform,
    /// Position limits, base joints first.
    pub joint_limits: [JointLimit; TOTAL_DOF],
    /// Per-joint velocity magnitude limits (m/s or rad/s).
    pub velocity_limits: [f64; TOTAL_DOF],
    /// Radius of the mobile base footprint disk.
    pub base_footprint_radius: f64,
    /// Height of the footprint collision ring above the ground plane.
    pub base_footprint_height: f64,
    /// Capsule radius used for arm link collision points.
    pub link_radius: f64,
}

impl Default for RobotModel {
    /// A 6-DOF arm with roughly 0.6 m reach (shoulder-elbow 0.30 m, elbow-
    /// wrist 0.25 m, wrist-flange 0.144 m) on a planar base. The geometry is
    /// config-driven; these are the built-in defaults.
    fn default() -> Self {
        use std::f64::consts::FRAC_PI_2;
        let big = 100.0;
        RobotModel {
            arm_dh: [
                DhRow { a: 0.0, alpha: 0.0, d: 0.2435, offset: 0.0 },
                DhRow { a: 0.0, alpha: -FRAC_PI_2, d: 0.0, offset: -FRAC_PI_2 },
                DhRow { a: 0.30, alpha: 0.0, d: 0.0, offset: 0.0 },
                DhRow { a: 0.0, alpha: -FRAC_PI_2, d: 0.25, offset: 0.0 },
                DhRow { a: 0.0, alpha: FRAC_PI_2, d: 0.0, offset: 0.0 },
                DhRow { a: 0.0, alpha: -FRAC_PI_2, d: 0.144, offset: 0.0 },
            ],
            t_vb: RigidTransform::from_translation(Vector3::new(0.0, 0.0, 0.10)),
            t_ba: RigidTransform::from_translation(Vector3::new(0.15, 0.0, 0.25)),
            t_flange_tool: RigidTransform::from_translation(Vector3::new(0.0, 0.0, 0.10)),
            joint_limits: [
                JointLimit { min: -big, max: big },
                JointLimit { min: -big, max: big },
                JointLimit { min: -2.0 * std::f64::consts::PI, max: 2.0 * std::f64::consts::PI },
                JointLimit { min: -3.1, max: 3.1 },
                JointLimit { min: -2.2, max: 2.2 },
                JointLimit { min: -2.6, max: 2.6 },
                JointLimit { min: -3.1, max: 3.1 },
                JointLimit { min: -2.2, max: 2.2 },
                JointLimit { min: -3.1, max: 3.1 },
            ],
            velocity_limits: [1.5, 1.5, 1.5, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0],
            base_footprint_radius: 0.25,
            base_footprint_height: 0.15,
            link_radius: 0.05,
        }
    }
}

impl RobotModel {
    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.joint_limits.iter().enumerate() {
            if !(l.min < l.max) {
                return Err(Error::invalid(format!(
                    "joint {i}: limit min {} must be below max {}",
                    l.min, l.max
                )));
            }
        }
        if self.velocity_limits.iter().any(|v| *v <= 0.0) {
            return Err(Error::invalid("velocity limits must be positive"));
        }
        if self.base_footprint_radius <= 0.0 || self.link_radius <= 0.0 {
            return Err(Error::invalid("collision radii must be positive"));
        }
        Ok(())
    }

    /// Upper bound on the arm's reach from the arm mount: sum of |a| and |d|
    /// plus the tool offset.
    pub fn arm_reach_bound(&self) -> f64 {
        self.arm_dh.iter().map(|r| r.a.abs() + r.d.abs()).sum::<f64>()
            + self.t_flange_tool.translation.norm()
    }
}

/// Joint state: planar base pose plus six arm angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Configuration {
    pub base_x: f64,
    pub base_y: f64,
    pub base_theta: f64,
    pub arm: [f64; ARM_DOF],
}

impl Configuration {
    pub fn new(base_x: f64, base_y: f64, base_theta: f64, arm: [f64; ARM_DOF]) -> Self {
        Self { base_x, base_y, base_theta, arm }
    }

    pub fn zeros() -> Self {
        Self::new(0.0, 0.0, 0.0, [0.0; ARM_DOF])
    }

    pub fn as_vector(&self) -> SMatrix<f64, 9, 1> {
        let mut v = SMatrix::<f64, 9, 1>::zeros();
        v[0] = self.base_x;
        v[1] = self.base_y;
        v[2] = self.base_theta;
        for i in 0..ARM_DOF {
            v[3 + i] = self.arm[i];
        }
        v
    }

    pub fn from_vector(v: &SMatrix<f64, 9, 1>) -> Self {
        let mut arm = [0.0; ARM_DOF];
        for i in 0..ARM_DOF {
            arm[i] = v[3 + i];
        }
        Self::new(v[0], v[1], v[2], arm)
    }

    pub fn joint(&self, i: usize) -> f64 {
        match i {
            0 => self.base_x,
            1 => self.base_y,
            2 => self.base_theta,
            _ => self.arm[i - 3],
        }
    }

    pub fn set_joint(&mut self, i: usize, value: f64) {
        match i {
            0 => self.base_x = value,
            1 => self.base_y = value,
            2 => self.base_theta = value,
            _ => self.arm[i - 3] = value,
        }
    }

    /// Wraps `theta` into `(-pi, pi]`.
    pub fn wrap_theta(&mut self) {
        self.base_theta = wrap_angle(self.base_theta);
    }

    pub fn is_within_limits(&self, model: &RobotModel) -> bool {
        (0..TOTAL_DOF).all(|i| {
            let l = model.joint_limits[i];
            self.joint(i) >= l.min && self.joint(i) <= l.max
        })
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        w = PI;
    }
    w
}

/// World poses of every frame along the chain, computed once per tick and
/// shared by FK, Jacobians and collision sampling.
#[derive(Debug, Clone)]
pub struct FrameChain {
    /// Virtual base pose in the world.
    pub virtual_base: RigidTransform,
    /// Arm mount pose in the world.
    pub mount: RigidTransform,
    /// Joint frame poses (modified DH frame i, on joint i's axis).
    pub arm_frames: [RigidTransform; ARM_DOF],
    /// Tool/camera point pose.
    pub tool: RigidTransform,
}

fn dh_transform(row: &DhRow, q: f64) -> RigidTransform {
    // Rx(alpha) * Tx(a) * Rz(q + offset) * Tz(d)
    let (sa, ca) = row.alpha.sin_cos();
    let (st, ct) = (q + row.offset).sin_cos();
    let rotation = Matrix3::new(
        ct, -st, 0.0, //
        st * ca, ct * ca, -sa, //
        st * sa, ct * sa, ca,
    );
    let translation = Vector3::new(row.a, -sa * row.d, ca * row.d);
    RigidTransform::from_parts(rotation, translation)
}

/// Forward kinematics of the arm alone: tool pose in the arm mount frame.
pub fn arm_fk(model: &RobotModel, q: &[f64; ARM_DOF]) -> RigidTransform {
    let mut t = RigidTransform::identity();
    for (row, qi) in model.arm_dh.iter().zip(q.iter()) {
        t = t.compose(&dh_transform(row, *qi));
    }
    t.compose(&model.t_flange_tool)
}

/// Computes every frame pose along the whole-body chain.
pub fn frame_chain(model: &RobotModel, cfg: &Configuration) -> FrameChain {
    let virtual_base = RigidTransform::planar(cfg.base_x, cfg.base_y, cfg.base_theta);
    let mount = virtual_base.compose(&model.t_vb).compose(&model.t_ba);
    let mut arm_frames = [RigidTransform::identity(); ARM_DOF];
    let mut t = mount;
    for i in 0..ARM_DOF {
        t = t.compose(&dh_transform(&model.arm_dh[i], cfg.arm[i]));
        arm_frames[i] = t;
    }
    let tool = t.compose(&model.t_flange_tool);
    FrameChain { virtual_base, mount, arm_frames, tool }
}

/// World-frame end-effector (tool) pose: the four-factor chain
/// virtual base · base mount · arm mount · arm FK.
pub fn fk_end_effector(model: &RobotModel, cfg: &Configuration) -> RigidTransform {
    frame_chain(model, cfg).tool
}

/// A collision sample point on the robot body.
#[derive(Debug, Clone, Copy)]
pub struct LinkPoint {
    /// World position.
    pub position: Vector3<f64>,
    /// Number of leading joints that move this point (3 for base-mounted
    /// points, 3 + i for points on arm link i).
    pub joint_count: usize,
    /// Collision radius around the point.
    pub radius: f64,
}

/// Samples collision points along each arm link segment plus the base
/// footprint circle.
///
/// With `samples_per_link == 1` each segment contributes its start frame
/// origin; for larger counts samples are uniform from segment start to end.
pub fn fk_link_points(
    model: &RobotModel,
    cfg: &Configuration,
    samples_per_link: usize,
) -> Vec<LinkPoint> {
    let chain = frame_chain(model, cfg);
    link_points_from_chain(model, &chain, samples_per_link)
}

pub fn link_points_from_chain(
    model: &RobotModel,
    chain: &FrameChain,
    samples_per_link: usize,
) -> Vec<LinkPoint> {
    assert!(samples_per_link >= 1, "samples_per_link must be >= 1");
    let mut points = Vec::new();

    // Base footprint circle, rigid with the virtual base.
    let n_ring = 8;
    for k in 0..n_ring {
        let phi = 2.0 * std::f64::consts::PI * (k as f64) / (n_ring as f64);
        let local = Vector3::new(
            model.base_footprint_radius * phi.cos(),
            model.base_footprint_radius * phi.sin(),
            model.base_footprint_height,
        );
        points.push(LinkPoint {
            position: chain.virtual_base.transform_point(&local),
            joint_count: BASE_DOF,
            radius: model.link_radius,
        });
    }

    // Arm link segments between consecutive frame origins. The segment
    // ending at frame i moves with joints up to i (inclusive), so use the
    // smaller joint count of its two endpoint frames for the whole segment:
    // every sample on the segment is rigid with the start frame's body.
    let mut origins: Vec<(Vector3<f64>, usize)> = Vec::with_capacity(ARM_DOF + 2);
    origins.push((chain.mount.translation, BASE_DOF));
    for i in 0..ARM_DOF {
        origins.push((chain.arm_frames[i].translation, BASE_DOF + i + 1));
    }
    origins.push((chain.tool.translation, BASE_DOF + ARM_DOF));

    for w in origins.windows(2) {
        let (start, start_joints) = w[0];
        let (end, end_joints) = w[1];
        let seg = end - start;
        if seg.norm() < 1e-9 {
            continue;
        }
        // Points strictly inside the segment are moved by the joints of the
        // start frame's body; the end frame origin itself belongs to the
        // next window, except for the tool point which closes the chain.
        let is_last = end_joints == BASE_DOF + ARM_DOF;
        if samples_per_link == 1 {
            points.push(LinkPoint { position: start, joint_count: start_joints, radius: model.link_radius });
            if is_last {
                points.push(LinkPoint { position: end, joint_count: end_joints, radius: model.link_radius });
            }
        } else {
            for k in 0..samples_per_link {
                let t = k as f64 / (samples_per_link - 1) as f64;
                let joint_count = if t >= 1.0 { end_joints } else { start_joints };
                if t >= 1.0 && !is_last {
                    continue; // owned by the next segment
                }
                points.push(LinkPoint {
                    position: start + seg * t,
                    joint_count,
                    radius: model.link_radius,
                });
            }
        }
    }
    points
}

/// Whole-body geometric Jacobian (6x9) in the world frame for the tool
/// point: columns 1-2 the prismatic base axes, column 3 the base revolute,
/// columns 4-9 the arm joints.
pub fn whole_body_jacobian(model: &RobotModel, cfg: &Configuration) -> WholeBodyJacobian {
    let chain = frame_chain(model, cfg);
    jacobian_from_chain(&chain, &chain.tool.translation)
}

/// Jacobian of an arbitrary world point rigidly attached past `joint_count`
/// joints (e.g. a link collision point). Rows are linear-first; columns for
/// joints beyond `joint_count` are zero.
pub fn point_jacobian(
    chain: &FrameChain,
    point: &Vector3<f64>,
    joint_count: usize,
) -> SMatrix<f64, 3, 9> {
    let mut j = SMatrix::<f64, 3, 9>::zeros();
    let full = jacobian_from_chain(chain, point);
    for c in 0..joint_count {
        j.set_column(c, &full.fixed_view::<3, 1>(0, c).into_owned());
    }
    j
}

fn jacobian_from_chain(chain: &FrameChain, point: &Vector3<f64>) -> WholeBodyJacobian {
    let mut j = WholeBodyJacobian::zeros();
    // Prismatic world axes.
    j[(0, 0)] = 1.0;
    j[(1, 1)] = 1.0;
    // Base revolute about world z through the virtual base origin.
    let z = Vector3::z();
    let lever = point - chain.virtual_base.translation;
    let lin = z.cross(&lever);
    j.fixed_view_mut::<3, 1>(0, 2).copy_from(&lin);
    j.fixed_view_mut::<3, 1>(3, 2).copy_from(&z);
    // Arm revolute joints: joint i rotates about frame i's z-axis.
    for i in 0..ARM_DOF {
        let zi = chain.arm_frames[i].z_axis();
        let oi = chain.arm_frames[i].translation;
        let lin = zi.cross(&(point - oi));
        j.fixed_view_mut::<3, 1>(0, 3 + i).copy_from(&lin);
        j.fixed_view_mut::<3, 1>(3, 3 + i).copy_from(&zi);
    }
    j
}

/// Arm-only geometric Jacobian in the arm mount frame (6x6, tool reference
/// point). Used by the reachability IK.
pub fn arm_jacobian(model: &RobotModel, q: &[f64; ARM_DOF]) -> Matrix6<f64> {
    let mut frames = [RigidTransform::identity(); ARM_DOF];
    let mut t = RigidTransform::identity();
    for i in 0..ARM_DOF {
        t = t.compose(&dh_transform(&model.arm_dh[i], q[i]));
        frames[i] = t;
    }
    let tool = t.compose(&model.t_flange_tool).translation;
    let mut j = Matrix6::zeros();
    for i in 0..ARM_DOF {
        let zi = frames[i].z_axis();
        let oi = frames[i].translation;
        let lin = zi.cross(&(tool - oi));
        j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
        j.fixed_view_mut::<3, 1>(3, i).copy_from(&zi);
    }
    j
}

/// Yoshikawa manipulability of the arm: sqrt(det(Ja Jaᵀ)) over the six arm
/// columns of the whole-body Jacobian. Base joints cannot change it.
pub fn manipulability(model: &RobotModel, cfg: &Configuration) -> f64 {
    let j = whole_body_jacobian(model, cfg);
    let ja = j.fixed_view::<6, 6>(0, 3).into_owned();
    let det = (ja * ja.transpose()).determinant();
    if det <= 0.0 {
        0.0
    } else {
        det.sqrt()
    }
}

/// Gradient of manipulability with respect to the nine joints; the base
/// entries are zero. Uses dm/dq_i = m * tr(Ja⁺ dJa/dq_i) with the analytic
/// Jacobian derivative of a revolute chain.
pub fn manipulability_jacobian(model: &RobotModel, cfg: &Configuration) -> SMatrix<f64, 9, 1> {
    let chain = frame_chain(model, cfg);
    let p = chain.tool.translation;

    let mut axes = [Vector3::zeros(); ARM_DOF];
    let mut cols_lin = [Vector3::zeros(); ARM_DOF];
    for i in 0..ARM_DOF {
        axes[i] = chain.arm_frames[i].z_axis();
        let oi = chain.arm_frames[i].translation;
        cols_lin[i] = axes[i].cross(&(p - oi));
    }

    let mut ja = Matrix6::zeros();
    for i in 0..ARM_DOF {
        ja.fixed_view_mut::<3, 1>(0, i).copy_from(&cols_lin[i]);
        ja.fixed_view_mut::<3, 1>(3, i).copy_from(&axes[i]);
    }
    let jjt = ja * ja.transpose();
    let det = jjt.determinant();
    let mut out = SMatrix::<f64, 9, 1>::zeros();
    if det <= 1e-18 {
        return out;
    }
    let m = det.sqrt();
    let Some(jjt_inv) = jjt.try_inverse() else {
        return out;
    };
    let ja_pinv = ja.transpose() * jjt_inv;

    // dJa/dq_i column j: for i < j the axis itself rotates,
    // [z_i × c_j; z_i × z_j]; for i >= j only the tool point moves,
    // [z_j × c_i; 0].
    for i in 0..ARM_DOF {
        let mut dja = Matrix6::zeros();
        for j in 0..ARM_DOF {
            let (dlin, dang) = if i < j {
                (axes[i].cross(&cols_lin[j]), axes[i].cross(&axes[j]))
            } else {
                (axes[j].cross(&cols_lin[i]), Vector3::zeros())
            };
            dja.fixed_view_mut::<3, 1>(0, j).copy_from(&dlin);
            dja.fixed_view_mut::<3, 1>(3, j).copy_from(&dang);
        }
        out[3 + i] = m * (ja_pinv * dja).trace();
    }
    out
}

/// Task-space pose error as a world-frame twist from `current` to `target`:
/// translation difference plus world-frame rotation log.
pub fn pose_error_world(current: &RigidTransform, target: &RigidTransform) -> Vector6<f64> {
    let lin = target.translation - current.translation;
    let rel = current.rotation.transpose() * target.rotation;
    let ang_body = crate::se3::rotation_log(&rel);
    let ang = current.rotation * ang_body;
    let mut e = Vector6::zeros();
    e.fixed_rows_mut::<3>(0).copy_from(&lin);
    e.fixed_rows_mut::<3>(3).copy_from(&ang);
    e
}
