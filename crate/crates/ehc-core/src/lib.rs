//! Whole-body velocity control for mobile manipulators.
//!
//! The crate implements a reactive controller that commands a planar mobile
//! base (two prismatic joints and a revolute joint, the "virtual base") and a
//! 6-DOF arm through a single quadratic program per control tick. The base/arm
//! trade-off is driven by an embodied weight `sig(omega)` derived from a
//! precomputed reachability map: far from the target the base is cheap and
//! does the travelling, once the target enters the arm's high-reachability
//! shell the base is penalised and the arm takes over. A monitoring servo
//! blends the commanded end-effector orientation so the wrist camera keeps
//! the target in view during the approach.
//!
//! Modules:
//! - [`se3`]: rigid transforms, twists, Rodrigues' formula, rotation logs.
//! - [`kinematics`]: the virtual-base + arm chain, whole-body Jacobian,
//!   manipulability and its gradient.
//! - [`reachability`]: capability-map construction and the embodied weight.
//! - [`qp`]: a dense dual active-set QP solver.
//! - [`controller`]: per-tick problem assembly (tracking equality with slack,
//!   obstacle dampers, joint limits) and the control methods.
//! - [`mpbs`]: monitoring pose, pose blending, camera frustum test.
//! - [`sim`]: deterministic discrete-time kinematic world with actuation noise.
//! - [`experiments`]: random-reach, sequential-grasp and monitoring suites.
//! - [`config`]: TOML schemas for robot model, controller parameters, scenes.

pub mod config;
pub mod controller;
pub mod experiments;
pub mod kinematics;
pub mod mpbs;
pub mod qp;
pub mod reachability;
pub mod se3;
pub mod sim;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("reachability map unusable: {0}")]
    UnusableMap(String),

    #[error("unknown method: {0}")]
    UnknownMethod(String),

    #[error("config error in {path}: {message}")]
    Config { path: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
