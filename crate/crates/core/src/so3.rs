//! Rotation group helpers: hat/vee, exponential and logarithm maps, and the
//! left/right Jacobians used by the perturbation models.
//!
//! All perturbations in this crate are left-multiplicative: a rotation `R`
//! perturbed by `δθ` becomes `Exp(δθ) · R`.

use nalgebra::{Matrix3, Rotation3, Vector3};

/// Angle below which series expansions replace the closed forms.
const SMALL_ANGLE: f64 = 1e-8;

/// Rotation angle above which the log map switches to the symmetric-part
/// axis extraction.
const NEAR_PI_BRANCH: f64 = 3.1;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum LogMapError {
    #[error("rotation log map is singular at angle {angle} (axis undefined at exactly pi)")]
    Singular { angle: f64 },
}

/// Skew-symmetric matrix such that `hat(a) * b == a.cross(&b)`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]; reads the antisymmetric part of `m`.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Rodrigues exponential.
pub fn exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Matrix3::identity() + a * k + b * k * k
}

/// Logarithm map returning the rotation vector.
///
/// Exactly at `pi` (within 1e-9) the axis sign is undefined and
/// [`LogMapError::Singular`] is returned. Above 3.1 rad the axis is read from
/// the symmetric part of `R`, which stays well conditioned.
pub fn log(r: &Matrix3<f64>) -> Result<Vector3<f64>, LogMapError> {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let axis_sin = vee(r);
    let theta = axis_sin.norm().atan2(cos_theta);
    if (std::f64::consts::PI - theta).abs() < 1e-9 {
        return Err(LogMapError::Singular { angle: theta });
    }
    if theta < SMALL_ANGLE {
        return Ok(axis_sin);
    }
    if theta > NEAR_PI_BRANCH {
        // R + R^T = 2 cos θ I + 2 (1 - cos θ) a a^T
        let b = (r + r.transpose() - 2.0 * cos_theta * Matrix3::identity()) / (2.0 * (1.0 - cos_theta));
        let col = (0..3)
            .max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]))
            .unwrap_or(0);
        let mut axis = b.column(col).into_owned() / b[(col, col)].max(f64::MIN_POSITIVE).sqrt();
        axis.normalize_mut();
        // the antisymmetric part fixes the sign
        if axis.dot(&axis_sin) < 0.0 {
            axis = -axis;
        }
        return Ok(axis * theta);
    }
    Ok(axis_sin * (theta / axis_sin.norm()))
}

/// Left Jacobian `J_l(phi)`, with `Exp(phi + d) ≈ Exp(J_l d) Exp(phi)`.
pub fn left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + 0.5 * k + k * k / 6.0;
    }
    let t2 = theta * theta;
    Matrix3::identity() + (1.0 - theta.cos()) / t2 * k + (theta - theta.sin()) / (t2 * theta) * k * k
}

/// Inverse of the left Jacobian.
pub fn left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() - 0.5 * k + k * k / 12.0;
    }
    let coef = 1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() - 0.5 * k + coef * k * k
}

/// Inverse of the right Jacobian; `J_r^{-1}(phi) = J_l^{-1}(-phi)`.
pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    left_jacobian_inv(&(-phi))
}

/// Projects a nearly orthonormal matrix back onto SO(3).
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return *m,
    };
    let d = (u * v_t).determinant().signum();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t
}

/// Rotation about +z by `angle` radians.
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), angle).into_inner()
}

/// Angle of the rotation `a^T b` in radians.
pub fn angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let r = a.transpose() * b;
    // atan2 keeps full precision near zero where acos does not
    vee(&r).norm().atan2((r.trace() - 1.0) * 0.5)
}
