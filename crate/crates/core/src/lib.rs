//! Spacecraft attitude dynamics and attitude recovery toolkit.
//!
//! The crate covers quaternion kinematics, rigid and flexible (plate appendage)
//! attitude dynamics, environmental disturbance torques, fixed and adaptive
//! step integrators, feedback-linearization recovery controllers, normal-form
//! and zero-dynamics analysis, and a scenario-driven simulation harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod env;
pub mod error;
pub mod flex;
pub mod harness;
pub mod integrate;
pub mod modal;
pub mod normal_form;
pub mod quad;
pub mod quat;
pub mod rigid;
pub mod scenario;

pub use control::{ControllerGains, FlcController};
pub use error::{AttError, Result};
pub use flex::{Appendage, FlexState, FlexibleSpacecraft};
pub use integrate::{SolverConfig, SolverKind, Trajectory};
pub use modal::{IntegralCatalog, ModalBasis};
pub use quat::{EulerSequence, Quaternion};
pub use rigid::{AnalyticCaseParams, RigidBody};
pub use scenario::Scenario;

pub use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
