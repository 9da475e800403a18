use nalgebra::{Matrix3, Vector3};

use super::svd::{svd3, SvdTriple};
use super::{Correspondences, IcpError};
use crate::geodesy::{FrameTag, Pose};

/// Second eigenvalue of the spread matrix below this fraction of the first
/// marks the correspondences as collinear.
const COLLINEAR_RATIO: f64 = 1e-9;

/// Arithmetic means of two equally sized point sets.
pub fn centroids(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<(Vector3<f64>, Vector3<f64>), IcpError> {
    check_lengths(a, b)?;
    let n = a.len() as f64;
    let ac = a.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;
    let bc = b.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;
    Ok((ac, bc))
}

/// `W = Σ (B_i − B_c)(A_i − A_c)ᵀ`.
pub fn cross_covariance(
    a: &[Vector3<f64>],
    b: &[Vector3<f64>],
    a_c: &Vector3<f64>,
    b_c: &Vector3<f64>,
) -> Result<Matrix3<f64>, IcpError> {
    check_lengths(a, b)?;
    Ok(a.iter().zip(b).fold(Matrix3::zeros(), |w, (pa, pb)| w + (pb - b_c) * (pa - a_c).transpose()))
}

fn check_lengths(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<(), IcpError> {
    if a.is_empty() || b.is_empty() {
        return Err(IcpError::EmptySet);
    }
    if a.len() != b.len() {
        return Err(IcpError::LengthMismatch { a: a.len(), b: b.len() });
    }
    Ok(())
}

/// Everything the closed-form solve produces, kept for covariance propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidSolution {
    pub pose: Pose,
    pub svd: SvdTriple,
    /// `det(U Vᵀ)`; `-1` when the reflection repair was applied.
    pub reflection_sign: f64,
    pub a_centroid: Vector3<f64>,
    pub b_centroid: Vector3<f64>,
}

pub(crate) fn gather(
    a: &[Vector3<f64>],
    b: &[Vector3<f64>],
    corr: &Correspondences,
) -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>), IcpError> {
    let mut pa = Vec::with_capacity(corr.len());
    let mut pb = Vec::with_capacity(corr.len());
    for &(i, j) in corr.pairs() {
        let (Some(x), Some(y)) = (a.get(i), b.get(j)) else {
            return Err(IcpError::InvalidCorrespondence(i, j));
        };
        pa.push(*x);
        pb.push(*y);
    }
    Ok((pa, pb))
}

/// Least-squares rigid transform with `B_i ≈ R A_i + t` over the given pairs.
///
/// `R = U diag(1, 1, det(U Vᵀ)) Vᵀ` so the result is always a proper rotation.
pub fn solve_rigid(a: &[Vector3<f64>], b: &[Vector3<f64>], corr: &Correspondences) -> Result<RigidSolution, IcpError> {
    let (pa, pb) = gather(a, b, corr)?;
    solve_paired(&pa, &pb)
}

pub(crate) fn solve_paired(pa: &[Vector3<f64>], pb: &[Vector3<f64>]) -> Result<RigidSolution, IcpError> {
    let (a_c, b_c) = centroids(pa, pb)?;
    check_spread(pa, &a_c)?;
    let w = cross_covariance(pa, pb, &a_c, &b_c)?;
    let svd = svd3(&w);
    let sign = (svd.u * svd.v.transpose()).determinant().signum();
    let s = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign));
    let rotation = svd.u * s * svd.v.transpose();
    let translation = b_c - rotation * a_c;
    Ok(RigidSolution {
        pose: Pose { rotation, translation, from: FrameTag::Lidar, to: FrameTag::Lidar },
        svd,
        reflection_sign: sign,
        a_centroid: a_c,
        b_centroid: b_c,
    })
}

fn check_spread(pa: &[Vector3<f64>], a_c: &Vector3<f64>) -> Result<(), IcpError> {
    if pa.len() < 3 {
        return Err(IcpError::Degenerate(format!("{} correspondences, need at least 3", pa.len())));
    }
    let spread = pa.iter().fold(Matrix3::zeros(), |s, p| s + (p - a_c) * (p - a_c).transpose());
    let mut eig: Vec<f64> = spread.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    if !(eig[0] > 0.0) || eig[1] < COLLINEAR_RATIO * eig[0] {
        return Err(IcpError::Degenerate(format!("collinear correspondences (spread eigenvalues {eig:?})")));
    }
    Ok(())
}
