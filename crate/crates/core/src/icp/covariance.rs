use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3};

use super::rigid::{gather, solve_paired};
use super::svd::svd_jacobian;
use super::{Correspondences, IcpError};
use crate::geodesy::{CovMatrix3, Pose};
use crate::pointcloud::CartPoint;
use crate::so3::{hat, vee};

pub type Matrix9 = SMatrix<f64, 9, 9>;
pub type Matrix3x9 = SMatrix<f64, 3, 9>;

/// First-order error propagation through the closed-form registration.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePropagation {
    /// Covariance of `δθ` (rad²).
    pub cov_rotation: Matrix3<f64>,
    /// Covariance of the translation (m²), frame of B.
    pub cov_translation: CovMatrix3,
    /// Joint `(δθ, t)` covariance.
    pub cov_joint: Matrix6<f64>,
    /// Covariance of `vec(W)` (row-major, index `3i + j`).
    pub cov_w: Matrix9,
    /// `∂δθ / ∂vec(W)`.
    pub rotation_jacobian: Matrix3x9,
}

/// Propagates per-point Cartesian covariances into the rotation and
/// translation of the registration `pose` (A→B) over fixed correspondences.
///
/// Point errors are independent across points and between sets. Each point
/// moves `W` through `∂W/∂A_k = N_k e_aᵀ` and `∂W/∂B_k = e_b M_kᵀ` (the
/// centroid terms cancel because the demeaned sets sum to zero), and `δθ`
/// follows from the SVD Jacobian as `vee(U (Ω_U + S Ω_V S) Uᵀ)`. The
/// translation `t = B_c − R A_c` picks up `δB_c − R δA_c + (R A_c)^∧ δθ`.
pub fn propagate_cov(
    a: &[CartPoint],
    b: &[CartPoint],
    corr: &Correspondences,
    pose: &Pose,
) -> Result<CovariancePropagation, IcpError> {
    let xa: Vec<Vector3<f64>> = a.iter().map(|p| p.xyz).collect();
    let xb: Vec<Vector3<f64>> = b.iter().map(|p| p.xyz).collect();
    let (pa, pb) = gather(&xa, &xb, corr)?;
    let solution = solve_paired(&pa, &pb)?;
    let jac = svd_jacobian(&solution.svd)?;

    let u = &solution.svd.u;
    let s = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, solution.reflection_sign));
    let mut rotation_jacobian = Matrix3x9::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let omega = jac.omega_u[i][j] + s * jac.omega_v[i][j] * s;
            let dtheta = vee(&(u * omega * u.transpose()));
            rotation_jacobian.set_column(3 * i + j, &dtheta);
        }
    }

    let n = pa.len() as f64;
    let r = pose.rotation;
    let lever = hat(&(r * solution.a_centroid));
    let identity_over_n = Matrix3::identity() / n;

    let mut cov_w = Matrix9::zeros();
    let mut joint = Matrix6::zeros();
    for (k, &(ia, ib)) in corr.pairs().iter().enumerate() {
        let m_k = pa[k] - solution.a_centroid;
        let n_k = pb[k] - solution.b_centroid;

        // ∂vec(W)/∂A_k and ∂vec(W)/∂B_k, both 9×3
        let mut dw_da = SMatrix::<f64, 9, 3>::zeros();
        let mut dw_db = SMatrix::<f64, 9, 3>::zeros();
        for i in 0..3 {
            for j in 0..3 {
                dw_da[(3 * i + j, j)] = n_k[i];
                dw_db[(3 * i + j, i)] = m_k[j];
            }
        }

        let cov_a = &a[ia].cov.matrix;
        let cov_b = &b[ib].cov.matrix;
        cov_w += dw_da * cov_a * dw_da.transpose() + dw_db * cov_b * dw_db.transpose();

        let jt_a = rotation_jacobian * dw_da;
        let jt_b = rotation_jacobian * dw_db;
        let jtr_a = -r * identity_over_n + lever * jt_a;
        let jtr_b = identity_over_n + lever * jt_b;

        let mut full_a = SMatrix::<f64, 6, 3>::zeros();
        full_a.fixed_view_mut::<3, 3>(0, 0).copy_from(&jt_a);
        full_a.fixed_view_mut::<3, 3>(3, 0).copy_from(&jtr_a);
        let mut full_b = SMatrix::<f64, 6, 3>::zeros();
        full_b.fixed_view_mut::<3, 3>(0, 0).copy_from(&jt_b);
        full_b.fixed_view_mut::<3, 3>(3, 0).copy_from(&jtr_b);
        joint += full_a * cov_a * full_a.transpose() + full_b * cov_b * full_b.transpose();
    }
    joint = (joint + joint.transpose()) * 0.5;

    let cov_rotation = joint.fixed_view::<3, 3>(0, 0).into_owned();
    let cov_translation = CovMatrix3::new(joint.fixed_view::<3, 3>(3, 3).into_owned(), pose.to);
    Ok(CovariancePropagation { cov_rotation, cov_translation, cov_joint: joint, cov_w, rotation_jacobian })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icp::solve_rigid;
    use crate::geodesy::FrameTag;
    use crate::so3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noisy_cloud(seed: u64, n: usize, cov: Matrix3<f64>) -> Vec<CartPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| CartPoint {
                xyz: Vector3::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0), rng.random_range(-3.0..3.0)),
                cov: CovMatrix3::new(cov, FrameTag::Lidar),
            })
            .collect()
    }

    #[test]
    fn zero_point_noise_gives_zero_covariance() {
        let a = noisy_cloud(1, 50, Matrix3::zeros());
        let pose = Pose::identity(FrameTag::Lidar, FrameTag::Lidar);
        let out = propagate_cov(&a, &a, &Correspondences::identity(50), &pose).unwrap();
        assert_eq!(out.cov_rotation, Matrix3::zeros());
        assert_eq!(out.cov_translation.matrix, Matrix3::zeros());
    }

    #[test]
    fn scaling_point_covariances_scales_output() {
        let a = noisy_cloud(2, 60, Matrix3::from_diagonal(&Vector3::new(1e-4, 2e-4, 5e-5)));
        let r = so3::exp(&Vector3::new(0.1, -0.2, 0.4));
        let b: Vec<CartPoint> = a.iter().map(|p| CartPoint { xyz: r * p.xyz + Vector3::new(1.0, 0.0, 2.0), cov: p.cov }).collect();
        let corr = Correspondences::identity(60);
        let xa: Vec<_> = a.iter().map(|p| p.xyz).collect();
        let xb: Vec<_> = b.iter().map(|p| p.xyz).collect();
        let pose = solve_rigid(&xa, &xb, &corr).unwrap().pose;
        let base = propagate_cov(&a, &b, &corr, &pose).unwrap();
        let k = 7.5;
        let scale = |v: &[CartPoint]| -> Vec<CartPoint> { v.iter().map(|p| CartPoint { xyz: p.xyz, cov: p.cov.scaled(k) }).collect() };
        let scaled = propagate_cov(&scale(&a), &scale(&b), &corr, &pose).unwrap();
        assert!((scaled.cov_rotation - base.cov_rotation * k).norm() <= 1e-12 * base.cov_rotation.norm() * k);
        assert!((scaled.cov_translation.matrix - base.cov_translation.matrix * k).norm() <= 1e-12 * base.cov_translation.matrix.norm() * k);
    }

    #[test]
    fn rotation_covariance_agrees_with_cov_w_route() {
        let a = noisy_cloud(3, 80, Matrix3::from_diagonal(&Vector3::new(4e-4, 1e-4, 1e-4)));
        let corr = Correspondences::identity(80);
        let pose = Pose::identity(FrameTag::Lidar, FrameTag::Lidar);
        let out = propagate_cov(&a, &a, &corr, &pose).unwrap();
        let via_w = out.rotation_jacobian * out.cov_w * out.rotation_jacobian.transpose();
        assert!((via_w - out.cov_rotation).norm() < 1e-12 * out.cov_rotation.norm());
    }
}
