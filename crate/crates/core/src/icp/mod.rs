//! Closed-form point-set registration via SVD and first-order covariance of
//! the estimated rotation and translation through the SVD Jacobian.
//!
//! The rotation covariance is expressed over the left small-angle vector
//! `δθ` (`R ≈ Exp(δθ) R̂`), the translation covariance in the target frame.

mod covariance;
mod register;
mod rigid;
mod svd;

pub use covariance::{propagate_cov, CovariancePropagation};
pub use register::{icp_register, IcpConfig, IcpTrace};
pub use rigid::{centroids, cross_covariance, solve_rigid, RigidSolution};
pub use svd::{svd3, svd_jacobian, SvdJacobian, SvdTriple};

use nalgebra::{Matrix3, Matrix6};

use crate::geodesy::{CovMatrix3, Pose};

#[derive(Debug, Clone, thiserror::Error)]
pub enum IcpError {
    #[error("point set is empty")]
    EmptySet,
    #[error("point sets differ in length ({a} vs {b})")]
    LengthMismatch { a: usize, b: usize },
    #[error("correspondence ({0}, {1}) is out of range")]
    InvalidCorrespondence(usize, usize),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("singular values too close to differentiate (gap {gap:.3e} < {tolerance:.3e})")]
    RepeatedSingularValues { gap: f64, tolerance: f64 },
    #[error("ICP did not converge in {iterations} iterations")]
    NoConvergence {
        iterations: usize,
        best: Box<(RegistrationResult, Correspondences)>,
    },
}

/// Index pairs `(i in A, j in B)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Correspondences {
    pairs: Vec<(usize, usize)>,
}

impl Correspondences {
    /// Validates indices against the sizes of both sets.
    pub fn new(pairs: Vec<(usize, usize)>, len_a: usize, len_b: usize) -> Result<Self, IcpError> {
        if pairs.is_empty() {
            return Err(IcpError::EmptySet);
        }
        if let Some(&(i, j)) = pairs.iter().find(|(i, j)| *i >= len_a || *j >= len_b) {
            return Err(IcpError::InvalidCorrespondence(i, j));
        }
        Ok(Self { pairs })
    }

    /// `i ↔ i` for `n` points.
    pub fn identity(n: usize) -> Self {
        Self { pairs: (0..n).map(|i| (i, i)).collect() }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Registration output: pose A→B and covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub pose: Pose,
    /// Covariance of the left small-angle perturbation (rad²).
    pub cov_rotation: Matrix3<f64>,
    /// Covariance of the translation (m²), in the frame of B.
    pub cov_translation: CovMatrix3,
    /// Joint `(δθ, t)` covariance including cross terms.
    pub cov_joint: Matrix6<f64>,
}
