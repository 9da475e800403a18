use nalgebra::{Matrix3, Vector3, Vector6};

use super::FusionError;
use crate::geodesy::Pose;
use crate::so3;

/// Longest extrapolation past the newest scan (s).
pub const DEFAULT_MAX_EXTRAPOLATION: f64 = 0.5;

/// `(ρ, φ) ↦ (Exp(φ), J_l(φ) ρ)`.
pub fn se3_exp(xi: &Vector6<f64>) -> (Matrix3<f64>, Vector3<f64>) {
    let rho = xi.fixed_rows::<3>(0).into_owned();
    let phi = xi.fixed_rows::<3>(3).into_owned();
    (so3::exp(&phi), so3::left_jacobian(&phi) * rho)
}

pub fn se3_log(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Result<Vector6<f64>, FusionError> {
    let phi = so3::log(rotation)?;
    let rho = so3::left_jacobian_inv(&phi) * translation;
    Ok(Vector6::new(rho.x, rho.y, rho.z, phi.x, phi.y, phi.z))
}

/// Virtual pose at `t_query` continuing the motion from `pose_a` to `pose_b`
/// with a constant body twist.
///
/// `T_q = T_b · Exp(s · Log(T_a⁻¹ T_b))` with `s = (t_q − t_b)/(t_b − t_a)`,
/// which scales the relative rotation's axis-angle by `s` and is exact on
/// screw motion, straight constant-velocity motion included.
pub fn extrapolate_lidar_pose(
    pose_a: &Pose,
    t_a: f64,
    pose_b: &Pose,
    t_b: f64,
    t_query: f64,
    max_gap: f64,
) -> Result<Pose, FusionError> {
    if !(t_a < t_b) {
        return Err(FusionError::InvalidInput(format!("need t_a < t_b, got {t_a} and {t_b}")));
    }
    let gap = t_query - t_b;
    if gap > max_gap || gap < -(t_b - t_a) {
        return Err(FusionError::StaleData { gap, limit: max_gap });
    }
    if gap == 0.0 {
        return Ok(*pose_b);
    }
    let rel_r = pose_a.rotation.transpose() * pose_b.rotation;
    let rel_t = pose_a.rotation.transpose() * (pose_b.translation - pose_a.translation);
    let s = gap / (t_b - t_a);
    let (dr, dt) = se3_exp(&(se3_log(&rel_r, &rel_t)? * s));
    Ok(Pose {
        rotation: so3::orthonormalize(&(pose_b.rotation * dr)),
        translation: pose_b.rotation * dt + pose_b.translation,
        from: pose_b.from,
        to: pose_b.to,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::FrameTag;

    fn pose(r: Matrix3<f64>, t: Vector3<f64>) -> Pose {
        Pose { rotation: r, translation: t, from: FrameTag::Lidar, to: FrameTag::Map }
    }

    /// Body twist `(v, ω)` held for `t` seconds from the identity.
    fn screw(v: &Vector3<f64>, w: &Vector3<f64>, t: f64) -> Pose {
        let (r, tr) = se3_exp(&Vector6::new(v.x * t, v.y * t, v.z * t, w.x * t, w.y * t, w.z * t));
        pose(r, tr)
    }

    #[test]
    fn query_at_b_returns_b() {
        let a = screw(&Vector3::new(1.0, 0.0, 0.0), &Vector3::new(0.0, 0.0, 0.2), 0.0);
        let b = screw(&Vector3::new(1.0, 0.0, 0.0), &Vector3::new(0.0, 0.0, 0.2), 0.1);
        assert_eq!(extrapolate_lidar_pose(&a, 0.0, &b, 0.1, 0.1, 0.5).unwrap(), b);
    }

    #[test]
    fn straight_motion_is_exact() {
        let v = Vector3::new(0.0, 8.0, 0.1);
        let a = pose(Matrix3::identity(), Vector3::zeros());
        let b = pose(Matrix3::identity(), v * 0.1);
        let q = extrapolate_lidar_pose(&a, 0.0, &b, 0.1, 0.35, 0.5).unwrap();
        assert!((q.translation - v * 0.35).norm() < 1e-12);
    }

    #[test]
    fn yaw_rate_scales() {
        let rate = 10f64.to_radians();
        let a = pose(so3::rot_z(0.3), Vector3::zeros());
        let b = pose(so3::rot_z(0.3 + rate * 0.1), Vector3::zeros());
        let q = extrapolate_lidar_pose(&a, 1.0, &b, 1.1, 1.2, 0.5).unwrap();
        let yaw = q.rotation[(1, 0)].atan2(q.rotation[(0, 0)]);
        assert!((yaw - (0.3 + rate * 0.2)).abs() < 1e-9);
    }

    #[test]
    fn screw_motion_is_exact() {
        let v = Vector3::new(5.0, 1.0, 0.3);
        let w = Vector3::new(0.1, -0.05, 0.6);
        for gap in [0.01, 0.1, 0.2] {
            let a = screw(&v, &w, 2.0);
            let b = screw(&v, &w, 2.1);
            let q = extrapolate_lidar_pose(&a, 2.0, &b, 2.1, 2.1 + gap, 0.5).unwrap();
            let truth = screw(&v, &w, 2.1 + gap);
            assert!((q.rotation - truth.rotation).norm() < 1e-9);
            assert!((q.translation - truth.translation).norm() < 1e-9);
        }
    }

    #[test]
    fn stale_data_rejected() {
        let a = pose(Matrix3::identity(), Vector3::zeros());
        let b = pose(Matrix3::identity(), Vector3::x());
        assert!(matches!(extrapolate_lidar_pose(&a, 0.0, &b, 0.1, 0.7, 0.5), Err(FusionError::StaleData { .. })));
        assert!(matches!(extrapolate_lidar_pose(&a, 0.1, &b, 0.1, 0.2, 0.5), Err(FusionError::InvalidInput(_))));
    }
}
