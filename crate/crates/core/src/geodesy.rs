//! Coordinate frames (ECEF, ENU, LiDAR, map), WGS-84 conversions and
//! frame-tagged poses and covariances.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// WGS-84 semi-major axis in meters.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
/// WGS-84 semi-minor axis in meters.
pub const WGS84_B: f64 = WGS84_A * (1.0 - WGS84_F);
/// First eccentricity squared.
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);

/// Positions closer than this to the Earth's center are rejected.
const MIN_ECEF_NORM: f64 = 6.3e6;
const LAT_TOLERANCE: f64 = 1e-12;
const LAT_MAX_ITER: usize = 10;
const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeodesyError {
    #[error("position {norm:.1} m from the Earth's center is too close for a geodetic solution")]
    NearSingular { norm: f64 },
    #[error("frame mismatch: expected {expected:?}, got {actual:?}")]
    FrameMismatch { expected: FrameTag, actual: FrameTag },
    #[error("matrix is not a proper rotation (orthonormality error {error:.3e}, det {det:.6})")]
    NotARotation { error: f64, det: f64 },
    #[error("invalid geodetic coordinate: {0}")]
    InvalidCoordinate(String),
}

/// Reference frames used throughout the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameTag {
    Ecef,
    Enu,
    Lidar,
    Map,
}

/// Ellipsoidal coordinates on WGS-84. Angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodeticCoord {
    pub lat: f64,
    pub lon: f64,
    pub height: f64,
}

impl GeodeticCoord {
    pub fn new(lat: f64, lon: f64, height: f64) -> Result<Self, GeodesyError> {
        if !(lat.is_finite() && lon.is_finite() && height.is_finite()) {
            return Err(GeodesyError::InvalidCoordinate("non-finite component".into()));
        }
        if lat.abs() > std::f64::consts::FRAC_PI_2 {
            return Err(GeodesyError::InvalidCoordinate(format!("|lat| = {lat} exceeds pi/2")));
        }
        Ok(Self { lat, lon: wrap_longitude(lon), height })
    }

    pub fn from_degrees(lat_deg: f64, lon_deg: f64, height: f64) -> Result<Self, GeodesyError> {
        Self::new(lat_deg.to_radians(), lon_deg.to_radians(), height)
    }
}

/// Wraps a longitude into (-pi, pi].
fn wrap_longitude(lon: f64) -> f64 {
    use std::f64::consts::PI;
    let mut l = lon.rem_euclid(2.0 * PI);
    if l > PI {
        l -= 2.0 * PI;
    }
    l
}

/// A 3×3 position covariance (m²) expressed in a tagged frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovMatrix3 {
    pub matrix: Matrix3<f64>,
    pub frame: FrameTag,
}

impl CovMatrix3 {
    pub fn new(matrix: Matrix3<f64>, frame: FrameTag) -> Self {
        Self { matrix: symmetrize(&matrix), frame }
    }

    pub fn zeros(frame: FrameTag) -> Self {
        Self { matrix: Matrix3::zeros(), frame }
    }

    pub fn isotropic(variance: f64, frame: FrameTag) -> Self {
        Self { matrix: Matrix3::identity() * variance, frame }
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// Upper-triangular entries `[xx, xy, xz, yy, yz, zz]`.
    pub fn upper_triangle(&self) -> [f64; 6] {
        let m = &self.matrix;
        [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 1)], m[(1, 2)], m[(2, 2)]]
    }

    pub fn from_upper_triangle(v: [f64; 6], frame: FrameTag) -> Self {
        let m = Matrix3::new(v[0], v[1], v[2], v[1], v[3], v[4], v[2], v[4], v[5]);
        Self { matrix: m, frame }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { matrix: self.matrix * k, frame: self.frame }
    }
}

pub(crate) fn symmetrize(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

/// Rigid transform mapping coordinates in `from` to coordinates in `to`:
/// `p_to = rotation * p_from + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub from: FrameTag,
    pub to: FrameTag,
}

impl Pose {
    /// Builds a pose after checking that `rotation` is orthonormal with
    /// determinant +1.
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        from: FrameTag,
        to: FrameTag,
    ) -> Result<Self, GeodesyError> {
        check_rotation(&rotation)?;
        Ok(Self { rotation, translation, from, to })
    }

    pub fn identity(from: FrameTag, to: FrameTag) -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros(), from, to }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation), from: self.to, to: self.from }
    }

    /// `self ∘ inner`: applies `inner` first. Requires `inner.to == self.from`.
    pub fn compose(&self, inner: &Pose) -> Result<Pose, GeodesyError> {
        if inner.to != self.from {
            return Err(GeodesyError::FrameMismatch { expected: self.from, actual: inner.to });
        }
        Ok(Pose {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
            from: inner.from,
            to: self.to,
        })
    }
}

pub(crate) fn check_rotation(r: &Matrix3<f64>) -> Result<(), GeodesyError> {
    let error = (r * r.transpose() - Matrix3::identity()).norm();
    let det = r.determinant();
    if error > ORTHONORMAL_TOLERANCE || (det - 1.0).abs() > ORTHONORMAL_TOLERANCE {
        return Err(GeodesyError::NotARotation { error, det });
    }
    Ok(())
}

/// Rotation from the local ENU frame at `origin` into ECEF.
///
/// Columns are the east, north and up unit vectors expressed in ECEF.
pub fn enu_rotation(origin: &GeodeticCoord) -> Pose {
    let (sb, cb) = origin.lat.sin_cos();
    let (sl, cl) = origin.lon.sin_cos();
    #[rustfmt::skip]
    let ecef_to_enu = Matrix3::new(
        -sl,       cl,      0.0,
        -sb * cl, -sb * sl, cb,
         cb * cl,  cb * sl, sb,
    );
    Pose {
        rotation: ecef_to_enu.transpose(),
        translation: Vector3::zeros(),
        from: FrameTag::Enu,
        to: FrameTag::Ecef,
    }
}

/// Full ENU→ECEF transform with the origin's ECEF position as translation.
pub fn enu_to_ecef_pose(origin: &GeodeticCoord) -> Pose {
    let mut pose = enu_rotation(origin);
    pose.translation = geodetic_to_ecef(origin);
    pose
}

pub fn geodetic_to_ecef(g: &GeodeticCoord) -> Vector3<f64> {
    let (sb, cb) = g.lat.sin_cos();
    let (sl, cl) = g.lon.sin_cos();
    let n = WGS84_A / (1.0 - WGS84_E2 * sb * sb).sqrt();
    Vector3::new(
        (n + g.height) * cb * cl,
        (n + g.height) * cb * sl,
        (n * (1.0 - WGS84_E2) + g.height) * sb,
    )
}

/// Iterative ECEF→geodetic conversion (fixed point on latitude).
pub fn ecef_to_geodetic(p: &Vector3<f64>) -> Result<GeodeticCoord, GeodesyError> {
    let norm = p.norm();
    if !(norm > MIN_ECEF_NORM) {
        return Err(GeodesyError::NearSingular { norm });
    }
    let rho = p.x.hypot(p.y);
    let lon = if rho > 0.0 { p.y.atan2(p.x) } else { 0.0 };
    let mut lat = p.z.atan2(rho * (1.0 - WGS84_E2));
    for _ in 0..LAT_MAX_ITER {
        let s = lat.sin();
        let n = WGS84_A / (1.0 - WGS84_E2 * s * s).sqrt();
        let next = (p.z + n * WGS84_E2 * s).atan2(rho);
        let done = (next - lat).abs() < LAT_TOLERANCE;
        lat = next;
        if done {
            break;
        }
    }
    let (s, c) = lat.sin_cos();
    let height = rho * c + p.z * s - WGS84_A * (1.0 - WGS84_E2 * s * s).sqrt();
    Ok(GeodeticCoord { lat, lon: wrap_longitude(lon), height })
}

/// Rotates a covariance through `pose`: `R · C · Rᵀ`. The covariance must be
/// expressed in `pose.from`; the result is tagged `pose.to`.
pub fn transform_cov(c: &CovMatrix3, pose: &Pose) -> Result<CovMatrix3, GeodesyError> {
    if c.frame != pose.from {
        return Err(GeodesyError::FrameMismatch { expected: pose.from, actual: c.frame });
    }
    let r = &pose.rotation;
    Ok(CovMatrix3 { matrix: symmetrize(&(r * c.matrix * r.transpose())), frame: pose.to })
}
