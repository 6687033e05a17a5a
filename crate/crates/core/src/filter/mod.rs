//! Per-neighbor Gaussian beliefs: Kalman predict with learned mean propagation and identity
//! Jacobian, Joseph-form updates, and checkpointed rollouts to the current control step.

mod belief;
mod estimator;
mod kalman;

pub use belief::{
    build_belief, Belief, BeliefLayout, Checkpoint, FilterConfig, KinematicLayout, MeasurementMap,
    DEFAULT_NAIVE_DAMPING, DEFAULT_RHO, PROCESS_VARIANCE_FLOOR,
};
pub use estimator::{EstimatorDiagnostics, EstimatorMode, NeighborEstimator, Predictor};
pub use kalman::{kf_predict, kf_update, kinematic_matrix, naive_predict, DynamicsModel, LinearDynamics};
