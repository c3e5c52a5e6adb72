//! Deterministic rigid-rod / cable-network dynamics for tensegrity joints.
//!
//! The crate is organised bottom-up:
//!
//! - [`structure`] declares rods, cables, world anchors and antagonistic pairs,
//!   with builder operations (add, transform, compose) and a validator.
//! - [`tsg`] reads and writes the plaintext `.tsg` structure format.
//! - [`dynamics`] advances rod states under gravity and tension-only
//!   spring-damper cables with a semi-implicit Euler step.
//! - [`actuation`] turns desired rest lengths into motor-feasible trajectories.
//! - [`controllers`] holds the per-tick policy seam and the policy runner.
//! - [`elbow`] generates the reference two-axis elbow and measures its angles.
//! - [`telemetry`] records runs, settles and probes structures, and exports CSV.
//! - [`cli`] wires everything into the `tenjoint` command.

pub mod actuation;
pub mod cli;
pub mod controllers;
pub mod dynamics;
pub mod elbow;
pub mod geometry;
pub mod structure;
pub mod telemetry;
pub mod tsg;

pub use nalgebra::{Quaternion, UnitQuaternion, Vector3};

/// World-frame 3-vector in SI units.
pub type Vec3 = Vector3<f64>;

pub use actuation::{filter_command, AntagonisticDrive, MotorState};
pub use controllers::{run_policy, Policy, PolicyInput, PolicyOutput};
pub use dynamics::{cable_force, CableState, Model, RodState, SimConfig, SimState};
pub use elbow::{build_elbow, ElbowFrame, ElbowParams, JointAngles};
pub use structure::{
    Anchor, AntagonisticPair, CableRole, CableSpec, End, MotorLimits, RodSpec, Structure,
    ValidationReport, Violation,
};
pub use telemetry::{export_csv, parse_csv, probe_compliance, settle, summarize, TelemetryRecord};
