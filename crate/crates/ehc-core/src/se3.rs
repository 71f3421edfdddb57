//! SO(3)/SE(3) primitives: rigid transforms, twists, Rodrigues' formula and
//! rotation logarithms.
//!
//! Twist ordering is linear-first, `(v, w)`, everywhere in this crate: in
//! [`Twist`], in Jacobian rows, and in the tracking equality of the
//! controller. The pose-to-twist map [`psi`] is the decoupled log: rotation
//! log in axis-angle vector form plus the raw translation, which is the form
//! position-based servo loops use as an error map.

use nalgebra::{Matrix3, Vector3};

use crate::{Error, Result};

/// Orthonormality tolerance for rotation matrices.
pub const ROTATION_TOL: f64 = 1e-9;

/// A rigid transform: orthonormal rotation plus translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, checking that `rotation` is a proper rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let t = Self {
            rotation,
            translation,
        };
        if !t.rotation_is_valid(1e-7) {
            return Err(Error::invalid(
                "rotation matrix is not orthonormal with determinant +1",
            ));
        }
        Ok(t)
    }

    /// Builds a transform without validating the rotation.
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation about the world z-axis plus a translation; the planar pose
    /// `(x, y, theta)` of a mobile base.
    pub fn planar(x: f64, y: f64, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let rotation = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Self {
            rotation,
            translation: Vector3::new(x, y, 0.0),
        }
    }

    pub fn rotation_is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).norm();
        ortho <= tol && (r.determinant() - 1.0).abs() <= tol
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Applies the transform to a point.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotates a direction (no translation).
    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// The rotation's z-axis column; the camera optical axis for the
    /// end-effector frame.
    pub fn z_axis(&self) -> Vector3<f64> {
        self.rotation.column(2).into()
    }

    /// Rotation angle between the two transforms' orientations, in radians.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }
}

impl std::ops::Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

/// A spatial velocity or pose error, linear part first.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Self { linear, angular }
    }

    pub fn norm(&self) -> f64 {
        (self.linear.norm_squared() + self.angular.norm_squared()).sqrt()
    }

    /// Caps the linear and angular norms independently.
    pub fn clamped(&self, max_linear: f64, max_angular: f64) -> Self {
        let mut out = *self;
        let ln = out.linear.norm();
        if ln > max_linear && ln > 0.0 {
            out.linear *= max_linear / ln;
        }
        let an = out.angular.norm();
        if an > max_angular && an > 0.0 {
            out.angular *= max_angular / an;
        }
        out
    }
}

/// Axis-angle rotation; `axis` must be unit-length whenever `angle != 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle {
    pub axis: Vector3<f64>,
    pub angle: f64,
}

impl AxisAngle {
    pub fn new(axis: Vector3<f64>, angle: f64) -> Self {
        Self { axis, angle }
    }
}

/// Skew-symmetric (cross-product) matrix of `v`: `skew(v) * w == v × w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -v.z, v.y, //
        v.z, 0.0, -v.x, //
        -v.y, v.x, 0.0,
    )
}

/// Rodrigues' rotation formula: `R = I + sin(θ)K + (1 − cos(θ))K²` with
/// `K = skew(axis)`.
pub fn rodrigues(aa: &AxisAngle) -> Result<Matrix3<f64>> {
    if aa.angle != 0.0 && (aa.axis.norm() - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "rodrigues: axis norm {} is not 1 for nonzero angle",
            aa.axis.norm()
        )));
    }
    Ok(rotation_exp(&(aa.axis * aa.angle)))
}

/// Exponential map for a rotation vector `w = axis * angle`.
pub fn rotation_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    if theta < 1e-12 {
        return Matrix3::identity() + skew(w);
    }
    let k = skew(&(w / theta));
    Matrix3::identity() + k * theta.sin() + k * k * (1.0 - theta.cos())
}

/// Rotation logarithm as an axis-angle vector, `|angle| <= π`.
///
/// Near θ = π the sin-normalised formula is singular; inside the band
/// `|trace + 1| < 1e-6` the axis is recovered from the symmetric part
/// `R + Rᵀ` instead.
pub fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let trace = r.trace();
    let cos_theta = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();

    if theta < 1e-9 {
        // vee of the antisymmetric part; exact at identity, first order nearby
        return Vector3::new(
            (r[(2, 1)] - r[(1, 2)]) / 2.0,
            (r[(0, 2)] - r[(2, 0)]) / 2.0,
            (r[(1, 0)] - r[(0, 1)]) / 2.0,
        );
    }

    if (trace + 1.0).abs() < 1e-6 {
        // θ ≈ π: R + Rᵀ = 2(cosθ I + (1−cosθ) kkᵀ) pins kkᵀ; signs come from
        // the largest diagonal entry and its row.
        let b = (r + r.transpose()) / 2.0;
        let kkt = (b - Matrix3::identity() * cos_theta) / (1.0 - cos_theta);
        let (i, _) = (0..3)
            .map(|i| (i, kkt[(i, i)]))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("3 diagonal entries");
        let ki = kkt[(i, i)].max(0.0).sqrt();
        let mut axis = Vector3::zeros();
        axis[i] = ki;
        if ki > 0.0 {
            for j in 0..3 {
                if j != i {
                    axis[j] = kkt[(i, j)] / ki;
                }
            }
        }
        let axis = axis.normalize();
        // Resolve the ±axis ambiguity against the antisymmetric residual,
        // which keeps the branch continuous for θ slightly below π.
        let asym = Vector3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        );
        let sign = if asym.dot(&axis) < 0.0 { -1.0 } else { 1.0 };
        return axis * sign * theta;
    }

    let axis = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    ) / (2.0 * theta.sin());
    axis * theta
}

/// Converts a rigid transform to a spatial twist: translation as the linear
/// part, rotation log as the angular part.
pub fn psi(t: &RigidTransform) -> Twist {
    Twist {
        linear: t.translation,
        angular: rotation_log(&t.rotation),
    }
}

/// Minimal rotation taking unit vector `from` onto unit vector `to`.
///
/// For the antiparallel case the rotation axis is ill-defined; the rule here
/// is deterministic: prefer the axis orthogonal to `from` closest to x̂, then
/// ŷ if `from` is itself x-aligned.
pub fn rotation_between(from: &Vector3<f64>, to: &Vector3<f64>) -> Matrix3<f64> {
    let cross = from.cross(to);
    let dot = from.dot(to).clamp(-1.0, 1.0);
    let angle = dot.acos();
    if angle < 1e-12 {
        return Matrix3::identity();
    }
    if (std::f64::consts::PI - angle).abs() < 1e-7 {
        let candidate = if from.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let axis = (candidate - from * from.dot(&candidate)).normalize();
        return rotation_exp(&(axis * std::f64::consts::PI));
    }
    rotation_exp(&(cross.normalize() * angle))
}
