//! Pose-graph fusion of PPP fixes and LiDAR odometry.
//!
//! The graph holds a shared alignment between the navigation frame N (local
//! ENU) and the LiDAR map frame M, the GNSS lever arm in the LiDAR body
//! frame, and one LiDAR pose per node. GNSS factors tie the antenna position
//! predicted from a node pose to a PPP fix; LiDAR factors constrain
//! consecutive nodes by the odometry's relative pose. All rotation
//! perturbations are left-multiplicative, `R ← Exp(δθ) R`.

mod extrapolate;
mod factors;
mod optimize;
mod pipeline;

pub use extrapolate::{extrapolate_lidar_pose, se3_exp, se3_log, DEFAULT_MAX_EXTRAPOLATION};
pub use factors::{
    gnss_jacobian, jacobians, lidar_prior_jacobian, predicted_antenna, residual_gnss, residual_lidar_prior,
    FactorJacobian, GnssJacobian, LidarJacobian,
};
pub use optimize::{
    antenna_covariance, marginalize_oldest, optimize, FusionProblem, LevelPrior, LeverArmPrior, MarginalPrior,
    OptimizeResult, OptimizerConfig,
};
pub use pipeline::{
    run_pipeline, PipelineConfig, PipelineOutput, TrajectoryPoint, TrajectoryRecord, TrajectorySource,
    TRAJECTORY_SCHEMA_VERSION,
};

use nalgebra::{Matrix3, Matrix6, Vector3};

use crate::geodesy::{CovMatrix3, Pose};
use crate::so3;

#[derive(Debug, Clone, thiserror::Error)]
pub enum FusionError {
    #[error("rotation log map is singular: {0}")]
    LogMapSingular(#[from] so3::LogMapError),
    #[error("state is not observable: {0}")]
    NotObservable(String),
    #[error("optimizer did not converge in {iterations} iterations")]
    NoConvergence { iterations: usize, best: Box<FusionState> },
    #[error("LiDAR data is stale: gap {gap:.3} s exceeds {limit:.3} s")]
    StaleData { gap: f64, limit: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("covariance is not positive definite")]
    BadCovariance,
}

/// LiDAR pose `L → M` at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodePose {
    pub time: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl NodePose {
    pub fn from_pose(time: f64, pose: &Pose) -> Self {
        Self { time, rotation: pose.rotation, translation: pose.translation }
    }

    /// Applies a left perturbation `(δθ, δt)`.
    pub fn perturbed(&self, dtheta: &Vector3<f64>, dt: &Vector3<f64>) -> Self {
        Self {
            time: self.time,
            rotation: so3::orthonormalize(&(so3::exp(dtheta) * self.rotation)),
            translation: self.translation + dt,
        }
    }
}

/// Alignment, lever arm and node poses.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionState {
    /// `R_N^M`: rotates ENU coordinates into the map frame.
    pub rot_n_to_m: Matrix3<f64>,
    /// Origin of N expressed in M.
    pub t_n_to_m: Vector3<f64>,
    /// Antenna phase center in the LiDAR body frame.
    pub lever_arm: Vector3<f64>,
    pub nodes: Vec<NodePose>,
}

/// Sanity bound on the lever-arm length (m).
pub const MAX_LEVER_ARM: f64 = 10.0;

/// PPP fix attached to a node.
#[derive(Debug, Clone, PartialEq)]
pub struct GnssFactor {
    pub node: usize,
    pub epoch: f64,
    /// Antenna position in ENU.
    pub p_g_n: Vector3<f64>,
    pub cov: CovMatrix3,
}

/// Relative pose `L_j → L_i` between nodes `from = i` and `to = j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarPriorFactor {
    pub from: usize,
    pub to: usize,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// Covariance of the residual `(r_t, r_θ)`.
    pub cov: Matrix6<f64>,
}

impl LidarPriorFactor {
    /// Builds the factor from a relative pose and its joint `(δθ, t)`
    /// covariance under the left convention (the registration output).
    pub fn from_relative(from: usize, to: usize, rotation: Matrix3<f64>, translation: Vector3<f64>, cov_joint: &Matrix6<f64>) -> Self {
        // r_t = −δt, r_θ = −Rᵀ δθ to first order
        let mut a = Matrix6::zeros();
        a.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-Matrix3::identity()));
        a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-rotation.transpose()));
        let cov = a * cov_joint * a.transpose();
        Self { from, to, rotation, translation, cov: (cov + cov.transpose()) * 0.5 }
    }
}
