//! Morphology-parametric quadruped locomotion simulation and analysis.

pub mod actuation;
pub mod allocation;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod gait;
pub mod kinematics;
pub mod morphology;
pub mod multibody;
pub mod simulation;
pub mod spatial;
pub mod telemetry;
pub mod urdf;
pub mod world;

pub use error::{Error, Result};
