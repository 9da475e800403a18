//! JSON-lines readers and writers for every record schema.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::fusion::{TrajectoryRecord, TRAJECTORY_SCHEMA_VERSION};
use crate::geodesy::{CovMatrix3, FrameTag};
use crate::gnss::{EpochRecord, OBSERVATION_SCHEMA_VERSION};
use crate::icp::RegistrationResult;
use crate::pointcloud::{PolarPoint, Scan};
use crate::raim::{VerdictRecord, VERDICT_SCHEMA_VERSION};
use crate::sim::{TruthRecord, TRUTH_SCHEMA_VERSION};
use crate::so3;

pub const SCAN_SCHEMA_VERSION: u32 = 1;
pub const REGISTRATION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}:{line}: schema version {found}, expected {expected}")]
    Version { path: String, line: usize, found: u32, expected: u32 },
}

/// Records carrying a schema version field.
pub trait Versioned {
    const VERSION: u32;
    fn version(&self) -> u32;
}

macro_rules! versioned {
    ($($t:ty => $v:expr),* $(,)?) => {
        $(impl Versioned for $t {
            const VERSION: u32 = $v;
            fn version(&self) -> u32 { self.v }
        })*
    };
}

versioned! {
    ScanRecord => SCAN_SCHEMA_VERSION,
    EpochRecord => OBSERVATION_SCHEMA_VERSION,
    TrajectoryRecord => TRAJECTORY_SCHEMA_VERSION,
    VerdictRecord => VERDICT_SCHEMA_VERSION,
    TruthRecord => TRUTH_SCHEMA_VERSION,
    RegistrationRecord => REGISTRATION_SCHEMA_VERSION,
}

/// One line of the scan JSONL: `pts` holds `[range, elevation, azimuth]`
/// and `sigma` the shared standard deviations of the three.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub t: f64,
    pub pts: Vec<[f64; 3]>,
    pub sigma: [f64; 3],
    pub v: u32,
}

impl From<&Scan> for ScanRecord {
    /// Uses the first point's sigmas for the whole scan.
    fn from(s: &Scan) -> Self {
        let sigma = s.points.first().map_or([0.0; 3], |p| [p.sigma_range, p.sigma_elevation, p.sigma_azimuth]);
        Self {
            t: s.timestamp,
            pts: s.points.iter().map(|p| [p.range, p.elevation, p.azimuth]).collect(),
            sigma,
            v: SCAN_SCHEMA_VERSION,
        }
    }
}

impl TryFrom<&ScanRecord> for Scan {
    type Error = String;
    fn try_from(r: &ScanRecord) -> Result<Self, String> {
        let points = r
            .pts
            .iter()
            .map(|p| PolarPoint::new(p[0], p[1], p[2], r.sigma).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        Ok(Scan { timestamp: r.t, points })
    }
}

/// One scan-to-scan registration: the pose of scan `t` in scan `t_prev`,
/// with the rotation as a rotation vector and covariances as upper
/// triangles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationRecord {
    pub t_prev: f64,
    pub t: f64,
    pub rot: [f64; 3],
    pub trans: [f64; 3],
    pub cov_rot: [f64; 6],
    pub cov_trans: [f64; 6],
    pub v: u32,
}

impl RegistrationRecord {
    pub fn new(t_prev: f64, t: f64, r: &RegistrationResult) -> Result<Self, so3::LogMapError> {
        let rot = so3::log(&r.pose.rotation)?;
        let tr = r.pose.translation;
        Ok(Self {
            t_prev,
            t,
            rot: [rot.x, rot.y, rot.z],
            trans: [tr.x, tr.y, tr.z],
            cov_rot: CovMatrix3::new(r.cov_rotation, FrameTag::Lidar).upper_triangle(),
            cov_trans: r.cov_translation.upper_triangle(),
            v: REGISTRATION_SCHEMA_VERSION,
        })
    }
}

/// Time-stamped ENU position; reads both trajectory and truth lines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionRecord {
    pub t: f64,
    pub enu: [f64; 3],
}

impl PositionRecord {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::from(self.enu)
    }
}

fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| IoError::File { path: path.display().to_string(), source })
}

/// Every non-blank line of `path` parsed as `T`.
pub fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let name = path.display().to_string();
    let mut out = Vec::new();
    for (k, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|source| IoError::File { path: name.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| IoError::Parse { path: name.clone(), line: k + 1, msg: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

/// Like [`read_lines`], also checking each record's schema version.
pub fn read_jsonl<T: DeserializeOwned + Versioned>(path: &Path) -> Result<Vec<T>, IoError> {
    let records: Vec<T> = read_lines(path)?;
    if let Some((k, r)) = records.iter().enumerate().find(|(_, r)| r.version() != T::VERSION) {
        return Err(IoError::Version { path: path.display().to_string(), line: k + 1, found: r.version(), expected: T::VERSION });
    }
    Ok(records)
}

/// Serializes one record per line.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("records serialize"));
        s.push('\n');
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    let err = |source| IoError::File { path: path.display().to_string(), source };
    let mut w = BufWriter::new(File::create(path).map_err(err)?);
    w.write_all(text.as_bytes()).map_err(err)?;
    w.flush().map_err(err)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), IoError> {
    write_text(path, &to_jsonl(records))
}

/// Scans from a scan JSONL file.
pub fn read_scans(path: &Path) -> Result<Vec<Scan>, IoError> {
    read_jsonl::<ScanRecord>(path)?
        .iter()
        .enumerate()
        .map(|(k, r)| Scan::try_from(r).map_err(|msg| IoError::Parse { path: path.display().to_string(), line: k + 1, msg }))
        .collect()
}

/// Observation epochs from an observation JSONL file.
pub fn read_epochs(path: &Path) -> Result<Vec<crate::gnss::Epoch>, IoError> {
    read_jsonl::<EpochRecord>(path)?
        .into_iter()
        .enumerate()
        .map(|(k, r)| {
            crate::gnss::Epoch::try_from(r)
                .map_err(|e| IoError::Parse { path: path.display().to_string(), line: k + 1, msg: e.to_string() })
        })
        .collect()
}
