//! LiDAR scans in polar form and their first-order conversion to Cartesian
//! points with covariance.
//!
//! Polar convention: `omega` is the elevation above the sensor's x–y plane and
//! `alpha` the azimuth measured from +y towards +x, so that
//! `xyz = d · (cos ω sin α, cos ω cos α, sin ω)`. A return at `d = 1`,
//! `ω = α = 0` therefore lands on `(0, 1, 0)`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geodesy::{CovMatrix3, FrameTag};

pub const DEFAULT_SIGMA_RANGE: f64 = 0.02;
pub const DEFAULT_SIGMA_ANGLE: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PointCloudError {
    #[error("scan is empty")]
    EmptyScan,
    #[error("invalid polar point: {0}")]
    InvalidPoint(String),
    #[error("scan timestamps must increase strictly ({prev} then {next})")]
    NonMonotonicTime { prev: f64, next: f64 },
}

/// One LiDAR return: range (m), elevation and azimuth (rad), with their
/// standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarPoint {
    pub range: f64,
    pub elevation: f64,
    pub azimuth: f64,
    pub sigma_range: f64,
    pub sigma_elevation: f64,
    pub sigma_azimuth: f64,
}

impl PolarPoint {
    pub fn new(range: f64, elevation: f64, azimuth: f64, sigmas: [f64; 3]) -> Result<Self, PointCloudError> {
        if !(range > 0.0) || !elevation.is_finite() || !azimuth.is_finite() {
            return Err(PointCloudError::InvalidPoint(format!("d={range} omega={elevation} alpha={azimuth}")));
        }
        if sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(PointCloudError::InvalidPoint(format!("negative sigma {sigmas:?}")));
        }
        Ok(Self {
            range,
            elevation,
            azimuth,
            sigma_range: sigmas[0],
            sigma_elevation: sigmas[1],
            sigma_azimuth: sigmas[2],
        })
    }

    /// Unit direction of the return.
    pub fn direction(&self) -> Vector3<f64> {
        let (sw, cw) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        Vector3::new(cw * sa, cw * ca, sw)
    }

    /// Inverse of the polar→Cartesian map (noise-free).
    pub fn from_cartesian(p: &Vector3<f64>, sigmas: [f64; 3]) -> Result<Self, PointCloudError> {
        let d = p.norm();
        let elevation = (p.z / d).clamp(-1.0, 1.0).asin();
        let azimuth = p.x.atan2(p.y);
        Self::new(d, elevation, azimuth, sigmas)
    }
}

/// Cartesian point in the sensor frame with its 3×3 covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoint {
    pub xyz: Vector3<f64>,
    pub cov: CovMatrix3,
}

impl CartPoint {
    /// Point with zero covariance.
    pub fn exact(xyz: Vector3<f64>) -> Self {
        Self { xyz, cov: CovMatrix3::zeros(FrameTag::Lidar) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub timestamp: f64,
    pub points: Vec<PolarPoint>,
}

/// Converts a polar return and propagates its noise: `Σ = J diag(σ²) Jᵀ`.
pub fn polar_to_cart(p: &PolarPoint) -> CartPoint {
    let (sw, cw) = p.elevation.sin_cos();
    let (sa, ca) = p.azimuth.sin_cos();
    let d = p.range;
    let xyz = Vector3::new(d * cw * sa, d * cw * ca, d * sw);
    #[rustfmt::skip]
    let jac = Matrix3::new(
        cw * sa, -d * sw * sa,  d * cw * ca,
        cw * ca, -d * sw * ca, -d * cw * sa,
        sw,       d * cw,       0.0,
    );
    let noise = Matrix3::from_diagonal(&Vector3::new(
        p.sigma_range * p.sigma_range,
        p.sigma_elevation * p.sigma_elevation,
        p.sigma_azimuth * p.sigma_azimuth,
    ));
    CartPoint { xyz, cov: CovMatrix3::new(jac * noise * jac.transpose(), FrameTag::Lidar) }
}

pub fn scan_to_cart(scan: &Scan) -> Result<Vec<CartPoint>, PointCloudError> {
    if scan.points.is_empty() {
        return Err(PointCloudError::EmptyScan);
    }
    Ok(scan.points.iter().map(polar_to_cart).collect())
}

/// Checks that a scan sequence is strictly increasing in time.
pub fn check_sequence(scans: &[Scan]) -> Result<(), PointCloudError> {
    for w in scans.windows(2) {
        if !(w[1].timestamp > w[0].timestamp) {
            return Err(PointCloudError::NonMonotonicTime { prev: w[0].timestamp, next: w[1].timestamp });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn anchor_point_lands_on_plus_y() {
        let p = PolarPoint::new(1.0, 0.0, 0.0, [0.0; 3]).unwrap();
        assert_relative_eq!(polar_to_cart(&p).xyz, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn range_only_noise_lies_along_ray() {
        let p = PolarPoint::new(7.0, 0.3, -1.1, [0.05, 0.0, 0.0]).unwrap();
        let c = polar_to_cart(&p);
        let u = c.xyz.normalize();
        assert_relative_eq!(c.cov.matrix, 0.05 * 0.05 * u * u.transpose(), epsilon = 1e-15);
    }

    #[test]
    fn covariance_matches_monte_carlo() {
        let p = PolarPoint::new(10.0, 0.1, 0.4, [0.02, 0.001, 0.001]).unwrap();
        let predicted = polar_to_cart(&p).cov.matrix;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nd = Normal::new(0.0, 0.02).unwrap();
        let na = Normal::new(0.0, 0.001).unwrap();
        let n = 100_000;
        let samples: Vec<Vector3<f64>> = (0..n)
            .map(|_| {
                let q = PolarPoint { range: 10.0 + nd.sample(&mut rng), elevation: 0.1 + na.sample(&mut rng), azimuth: 0.4 + na.sample(&mut rng), ..p };
                polar_to_cart(&q).xyz
            })
            .collect();
        let mean = samples.iter().sum::<Vector3<f64>>() / n as f64;
        let sample_cov = samples.iter().map(|s| (s - mean) * (s - mean).transpose()).sum::<Matrix3<f64>>() / (n - 1) as f64;
        let rel = (sample_cov - predicted).norm() / predicted.norm();
        assert!(rel < 0.10, "relative Frobenius error {rel}");
    }

    #[test]
    fn batch_conversion_is_elementwise() {
        let pts: Vec<PolarPoint> = (0..5)
            .map(|i| PolarPoint::new(2.0 + i as f64, 0.05 * i as f64, -0.3 * i as f64, [0.02, 0.001, 0.001]).unwrap())
            .collect();
        let scan = Scan { timestamp: 0.0, points: pts.clone() };
        let out = scan_to_cart(&scan).unwrap();
        for (p, c) in pts.iter().zip(&out) {
            assert_eq!(polar_to_cart(p), *c);
        }
        let mut rev = pts.clone();
        rev.reverse();
        let out_rev = scan_to_cart(&Scan { timestamp: 0.0, points: rev }).unwrap();
        assert_eq!(out_rev.first(), out.last());

        let single = Scan { timestamp: 0.0, points: vec![pts[0]] };
        assert_eq!(scan_to_cart(&single).unwrap().len(), 1);
        assert_eq!(scan_to_cart(&Scan { timestamp: 0.0, points: vec![] }), Err(PointCloudError::EmptyScan));
    }

    #[test]
    fn invalid_points_rejected() {
        assert!(PolarPoint::new(0.0, 0.0, 0.0, [0.0; 3]).is_err());
        assert!(PolarPoint::new(1.0, 0.0, 0.0, [-1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn cartesian_inverse() {
        let p = PolarPoint::new(12.0, -0.2, 2.5, [0.0; 3]).unwrap();
        let q = PolarPoint::from_cartesian(&polar_to_cart(&p).xyz, [0.0; 3]).unwrap();
        assert_relative_eq!(q.range, p.range, epsilon = 1e-12);
        assert_relative_eq!(q.elevation, p.elevation, epsilon = 1e-12);
        assert_relative_eq!(q.azimuth, p.azimuth, epsilon = 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn converted_norm_equals_range(d in 0.1f64..200.0, w in -1.5f64..1.5, a in -3.1f64..3.1) {
            let p = PolarPoint::new(d, w, a, [0.02, 0.001, 0.001]).unwrap();
            let c = polar_to_cart(&p);
            proptest::prop_assert!((c.xyz.norm() - d).abs() < 1e-12 * d.max(1.0));
            let eig = c.cov.matrix.symmetric_eigenvalues();
            proptest::prop_assert!(eig.min() > -1e-15);
        }
    }
}
