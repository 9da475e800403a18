//! Synthetic scenarios: a vehicle driving through box-shaped buildings, LiDAR
//! scans of the building faces and GNSS observations with blocked lines of
//! sight.

mod gnss;
mod lidar;
mod trajectory;

pub use gnss::{render_gnss, sky_directions};
pub use lidar::{face_lattice, render_scans, segment_hits_box};
pub use trajectory::{generate_trajectory, Path};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geodesy::{GeodesyError, GeodeticCoord, Pose};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;
pub const TRUTH_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("bad waypoints: {0}")]
    BadWaypoints(String),
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geodesy(#[from] GeodesyError),
}

fn default_version() -> u32 {
    SCENARIO_SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginConfig {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    /// Horizontal ENU waypoints (m).
    pub waypoints: Vec<[f64; 2]>,
    /// Speed along the path (m/s).
    pub speed: f64,
    /// Corner radius (m); corners are circular arcs tangent to both legs.
    pub turn_radius: f64,
    /// Height of the LiDAR origin above the ENU origin (m).
    pub sensor_height: f64,
}

/// Axis-aligned box in ENU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildingBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentConfig {
    pub boxes: Vec<BuildingBox>,
    /// Spacing of the surface points on each vertical face (m).
    pub grid_spacing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarConfig {
    pub rate: f64,
    /// Full vertical field of view (deg), centered on the horizon.
    pub vertical_fov_deg: f64,
    pub max_range: f64,
    pub sigma_range: f64,
    /// Elevation and azimuth sigma (rad).
    pub sigma_angle: f64,
    /// Per-scan random shift of the surface sampling grid, as a fraction of
    /// the grid spacing. Zero revisits the same surface points every scan.
    #[serde(default)]
    pub surface_jitter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NlosMode {
    /// Blocked satellites are not observed.
    Drop,
    /// Blocked satellites are observed with a positive code bias.
    Delay,
}

/// Constant pseudorange bias on one satellite over `[start, end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledBias {
    pub start: f64,
    pub end: f64,
    pub sat: String,
    pub bias: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Meteo {
    /// hPa
    pub pressure: f64,
    /// K
    pub temperature: f64,
    /// 0..1
    pub humidity: f64,
}

impl Default for Meteo {
    fn default() -> Self {
        Self { pressure: 1013.25, temperature: 288.15, humidity: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnssSimConfig {
    pub rate: f64,
    /// First epoch time (s); a non-zero value puts epochs between scans.
    #[serde(default)]
    pub offset: f64,
    pub n_sats: usize,
    pub sigma_pr: f64,
    pub sigma_phi: f64,
    pub nlos: NlosMode,
    /// Code bias of a blocked satellite in delay mode (m).
    #[serde(default)]
    pub nlos_bias: f64,
    #[serde(default)]
    pub outliers: Vec<ScheduledBias>,
    /// Receiver clock `c·dt` at t = 0 (m) and its drift (m/s).
    #[serde(default)]
    pub clock_offset: f64,
    #[serde(default)]
    pub clock_drift: f64,
    #[serde(default)]
    pub meteo: Meteo,
    /// Lowest satellite elevation on the sky grid (deg).
    #[serde(default = "default_min_elevation")]
    pub min_elevation_deg: f64,
}

fn default_min_elevation() -> f64 {
    15.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "default_version")]
    pub v: u32,
    pub seed: u64,
    pub duration: f64,
    pub origin: OriginConfig,
    pub trajectory: TrajectoryConfig,
    pub environment: EnvironmentConfig,
    pub lidar: LidarConfig,
    pub gnss: GnssSimConfig,
    /// Antenna phase center in the LiDAR frame (m).
    pub lever_arm_true: [f64; 3],
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.into()));
        if self.v != SCENARIO_SCHEMA_VERSION {
            return bad(&format!("unsupported schema version {}", self.v));
        }
        if !(self.duration > 0.0) || !(self.lidar.rate > 0.0) || !(self.gnss.rate > 0.0) {
            return bad("duration and rates must be positive");
        }
        if !(self.trajectory.speed >= 0.0) || !(self.trajectory.turn_radius > 0.0) {
            return bad("speed must be non-negative and turn radius positive");
        }
        if !(self.environment.grid_spacing > 0.0) || !(self.lidar.max_range > 0.0) {
            return bad("grid spacing and max range must be positive");
        }
        if !(0.0..=1.0).contains(&self.lidar.surface_jitter) {
            return Err(SimError::InvalidConfig("surface_jitter must be in [0, 1]".into()));
        }
        if !(self.lidar.vertical_fov_deg > 0.0 && self.lidar.vertical_fov_deg <= 180.0) {
            return bad("vertical field of view must be in (0, 180] deg");
        }
        let sigmas = [self.lidar.sigma_range, self.lidar.sigma_angle, self.gnss.sigma_pr, self.gnss.sigma_phi];
        if sigmas.iter().any(|s| !(*s >= 0.0)) {
            return bad("sigmas must be non-negative");
        }
        if self.gnss.n_sats < 6 {
            return bad("at least 6 satellites are required");
        }
        if !self.gnss.nlos_bias.is_finite() || self.gnss.outliers.iter().any(|o| !o.bias.is_finite()) {
            return bad("biases must be finite");
        }
        if self.environment.boxes.iter().any(|b| (0..3).any(|k| !(b.min[k] < b.max[k]))) {
            return bad("every box needs min < max");
        }
        if !(5.0..90.0).contains(&self.gnss.min_elevation_deg) {
            return bad("minimum sky elevation must be in [5, 90) deg");
        }
        Ok(())
    }

    pub fn origin(&self) -> Result<GeodeticCoord, SimError> {
        Ok(GeodeticCoord::from_degrees(self.origin.lat_deg, self.origin.lon_deg, self.origin.height)?)
    }

    pub fn lever_arm(&self) -> Vector3<f64> {
        Vector3::from(self.lever_arm_true)
    }

    pub fn scan_times(&self) -> Vec<f64> {
        grid_times(0.0, self.lidar.rate, self.duration)
    }

    pub fn epoch_times(&self) -> Vec<f64> {
        grid_times(self.gnss.offset, self.gnss.rate, self.duration)
    }
}

fn grid_times(offset: f64, rate: f64, duration: f64) -> Vec<f64> {
    (0..)
        .map(|k| offset + k as f64 / rate)
        .take_while(|&t| t <= duration + 1e-9)
        .collect()
}

/// Truth at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    /// LiDAR pose `L → N` (ENU).
    pub lidar_to_enu: Pose,
    /// LiDAR pose `L → M`.
    pub lidar_to_map: Pose,
    pub antenna_enu: Vector3<f64>,
    /// Receiver clock `c·dt` (m).
    pub clock: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    path: Path,
    speed: f64,
    sensor_height: f64,
    lever_arm: Vector3<f64>,
    clock_offset: f64,
    clock_drift: f64,
    /// `N → M`: rotation `R_N^M` and the origin of N in M.
    pub enu_to_map: Pose,
    /// Samples at every scan and epoch time, in time order.
    pub samples: Vec<TruthSample>,
}

impl GroundTruth {
    pub fn sample(&self, t: f64) -> TruthSample {
        let (p, heading) = self.path.at(self.speed * t.max(0.0));
        let lidar_to_enu = Pose {
            rotation: crate::so3::rot_z(heading - std::f64::consts::FRAC_PI_2),
            translation: Vector3::new(p.x, p.y, self.sensor_height),
            from: crate::geodesy::FrameTag::Lidar,
            to: crate::geodesy::FrameTag::Enu,
        };
        let lidar_to_map = self.enu_to_map.compose(&lidar_to_enu).expect("frames chain");
        TruthSample {
            t,
            lidar_to_enu,
            lidar_to_map,
            antenna_enu: lidar_to_enu.transform_point(&self.lever_arm),
            clock: self.clock_offset + self.clock_drift * t,
        }
    }

    /// Alignment `(R_N^M, t_N^M)`.
    pub fn alignment(&self) -> (Matrix3<f64>, Vector3<f64>) {
        (self.enu_to_map.rotation, self.enu_to_map.translation)
    }

    pub fn lever_arm(&self) -> Vector3<f64> {
        self.lever_arm
    }
}

/// One line of the truth JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub t: f64,
    /// Antenna position, ENU (m).
    pub enu: [f64; 3],
    /// LiDAR origin, ENU (m).
    pub lidar: [f64; 3],
    /// LiDAR yaw about ENU up (rad).
    pub yaw: f64,
    pub clock: f64,
    pub v: u32,
}

impl From<&TruthSample> for TruthRecord {
    fn from(s: &TruthSample) -> Self {
        let r = &s.lidar_to_enu.rotation;
        let p = &s.lidar_to_enu.translation;
        Self {
            t: s.t,
            enu: [s.antenna_enu.x, s.antenna_enu.y, s.antenna_enu.z],
            lidar: [p.x, p.y, p.z],
            yaw: r[(1, 0)].atan2(r[(0, 0)]),
            clock: s.clock,
            v: TRUTH_SCHEMA_VERSION,
        }
    }
}

/// Independent RNG stream for one generator and index.
pub(crate) fn sub_rng(seed: u64, stream: u64, index: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mixed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream.rotate_left(48) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    rand_chacha::ChaCha8Rng::seed_from_u64(mixed)
}

/// A small urban scenario: an L-shaped street lined by tall blocks, with
/// open sky at both ends.
pub fn example_scenario(seed: u64, duration: f64) -> ScenarioConfig {
    let mut boxes = Vec::new();
    // street along +E at y = 0, blocks on both sides between x = 150 and 450
    for k in 0..6 {
        let x0 = 150.0 + 50.0 * k as f64;
        let h = 35.0 + 12.0 * ((k * 7) % 5) as f64;
        boxes.push(BuildingBox { min: [x0, 9.0, 0.0], max: [x0 + 40.0, 30.0, h] });
        boxes.push(BuildingBox { min: [x0 + 5.0, -30.0, 0.0], max: [x0 + 45.0, -9.0, h + 8.0] });
    }
    // low blocks between the canyon and the first corner
    for k in 0..3 {
        let x0 = 460.0 + 40.0 * k as f64;
        boxes.push(BuildingBox { min: [x0, 12.0, 0.0], max: [x0 + 30.0, 35.0, 9.0] });
        boxes.push(BuildingBox { min: [x0 + 10.0, -35.0, 0.0], max: [x0 + 40.0, -12.0, 7.0] });
    }
    // low buildings along the northbound leg at x = 600
    for k in 0..6 {
        let y0 = 30.0 + 60.0 * k as f64;
        boxes.push(BuildingBox { min: [612.0, y0, 0.0], max: [640.0, y0 + 45.0, 12.0] });
        boxes.push(BuildingBox { min: [560.0, y0 + 10.0, 0.0], max: [588.0, y0 + 50.0, 10.0] });
    }
    // second canyon along the westbound leg at y = 400
    for k in 0..6 {
        let x0 = 250.0 + 50.0 * k as f64;
        let h = 30.0 + 10.0 * ((k * 3) % 4) as f64;
        boxes.push(BuildingBox { min: [x0, 410.0, 0.0], max: [x0 + 40.0, 430.0, h] });
        boxes.push(BuildingBox { min: [x0 + 5.0, 370.0, 0.0], max: [x0 + 45.0, 390.0, h + 6.0] });
    }
    // landmarks near the start
    boxes.push(BuildingBox { min: [20.0, 14.0, 0.0], max: [60.0, 40.0, 8.0] });
    boxes.push(BuildingBox { min: [70.0, -40.0, 0.0], max: [110.0, -14.0, 10.0] });
    boxes.push(BuildingBox { min: [115.0, 16.0, 0.0], max: [140.0, 36.0, 6.0] });
    ScenarioConfig {
        v: SCENARIO_SCHEMA_VERSION,
        seed,
        duration,
        origin: OriginConfig { lat_deg: 22.3, lon_deg: 114.2, height: 10.0 },
        trajectory: TrajectoryConfig {
            waypoints: vec![[0.0, 0.0], [600.0, 0.0], [600.0, 400.0], [300.0, 400.0]],
            speed: 4.0,
            turn_radius: 15.0,
            sensor_height: 2.0,
        },
        environment: EnvironmentConfig { boxes, grid_spacing: 1.0 },
        lidar: LidarConfig { rate: 10.0, vertical_fov_deg: 30.0, max_range: 60.0, sigma_range: 0.02, sigma_angle: 0.001, surface_jitter: 0.3 },
        gnss: GnssSimConfig {
            rate: 1.0,
            offset: 0.05,
            n_sats: 10,
            sigma_pr: 1.0,
            sigma_phi: 0.01,
            nlos: NlosMode::Drop,
            nlos_bias: 0.0,
            outliers: vec![
                ScheduledBias { start: 20.0, end: 60.0, sat: "G03".into(), bias: 40.0 },
                ScheduledBias { start: 150.0, end: 200.0, sat: "G07".into(), bias: 30.0 },
            ],
            clock_offset: 30.0,
            clock_drift: 0.2,
            meteo: Meteo::default(),
            min_elevation_deg: 15.0,
        },
        lever_arm_true: [0.1, -0.3, 0.5],
    }
}
