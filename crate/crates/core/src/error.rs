use thiserror::Error;

use crate::morphology::{Leg, Violation};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("invalid morphology: {}", format_violations(.0))]
    InvalidMorphology(Vec<Violation>),

    /// The foot Jacobian is too close to rank deficient to invert.
    #[error("near-singular limb configuration (condition number {condition:.3e})")]
    Singular { condition: f64 },

    #[error("target {target:?} outside the limb workspace (nearest reachable point {nearest:?})")]
    Unreachable { target: [f64; 3], nearest: [f64; 3] },

    #[error("calibration undetermined on axis {axis}: all estimates are zero")]
    CalibrationUndetermined { axis: usize },

    #[error("inconsistent trajectory: {0}")]
    InconsistentTrajectory(String),

    #[error("phase {0} outside [0, 1]")]
    PhaseOutOfRange(f64),

    #[error("invalid gait: {0}")]
    InvalidGait(String),

    #[error("stance force allocation infeasible: {0}")]
    Infeasible(String),

    #[error("{0}")]
    EmptyInput(String),

    #[error("non-uniform sample timestamps at index {index}")]
    NonUniformTimestamps { index: usize },

    #[error("simulation diverged at t = {time:.4} s")]
    Diverged {
        time: f64,
        last_state: Box<crate::world::RobotState>,
    },

    #[error("protocol aborted: {0}")]
    ProtocolAborted(String),

    #[error("leg {leg}: {source}")]
    Leg {
        leg: Leg,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("robot description parse error: {0}")]
    Description(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn for_leg(self, leg: Leg) -> Self {
        Error::Leg {
            leg,
            source: Box::new(self),
        }
    }
}

fn format_violations(violations: &[Violation]) -> String {
    violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}
