//! Pseudorange outlier screening around an externally aided position.
//!
//! A LiDAR-derived position is fused with the GNSS fix, the receiver clock
//! is taken as the median implied clock, and every satellite whose residual
//! lies more than `α·std` from the epoch mean is rejected together with its
//! carrier phase.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geodesy::CovMatrix3;
use crate::gnss::{predicted_pseudorange, Epoch};

pub const DEFAULT_ALPHA: f64 = 2.0;
/// Fewest satellites a screened epoch may keep.
pub const MIN_INLIERS: usize = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RaimError {
    #[error("covariance is singular or not positive definite")]
    SingularCovariance,
    #[error("epoch has no observations")]
    EmptyEpoch,
    #[error("{0} satellites, at least 2 required for a spread")]
    TooFewSatellites(usize),
    #[error("alpha must be positive, got {0}")]
    InvalidAlpha(f64),
    #[error("no aiding position available")]
    NoPosition,
}

/// Position with its covariance, both in the same frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionFix {
    pub position: Vector3<f64>,
    pub cov: CovMatrix3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaimVerdict {
    pub epoch: f64,
    pub inliers: BTreeSet<String>,
    pub outliers: BTreeSet<String>,
    pub residuals: BTreeMap<String, f64>,
    pub mean: f64,
    pub std: f64,
    pub alpha: f64,
    /// Set when the gate would have left fewer than `MIN_INLIERS` satellites
    /// and the closest ones were kept instead.
    pub degraded: bool,
}

/// Information-weighted mean of two position fixes.
pub fn fuse_position_for_raim(lidar: &PositionFix, gnss: &PositionFix) -> Result<Vector3<f64>, RaimError> {
    let info_l = invert_spd(&lidar.cov.matrix)?;
    let info_g = invert_spd(&gnss.cov.matrix)?;
    let total = invert_spd(&(info_l + info_g))?;
    Ok(total * (info_l * lidar.position + info_g * gnss.position))
}

fn invert_spd(m: &Matrix3<f64>) -> Result<Matrix3<f64>, RaimError> {
    m.cholesky().map(|c| c.inverse()).ok_or(RaimError::SingularCovariance)
}

/// Median over satellites of `Pr − predicted(x, clock = 0)`.
pub fn estimate_clock(x: &Vector3<f64>, epoch: &Epoch) -> Result<f64, RaimError> {
    if epoch.observations.is_empty() {
        return Err(RaimError::EmptyEpoch);
    }
    let mut implied: Vec<f64> =
        epoch.observations.iter().map(|o| o.pseudorange - predicted_pseudorange(x, 0.0, o)).collect();
    implied.sort_by(f64::total_cmp);
    let m = implied.len();
    Ok(if m % 2 == 1 { implied[m / 2] } else { 0.5 * (implied[m / 2 - 1] + implied[m / 2]) })
}

pub fn pseudorange_residuals(x: &Vector3<f64>, clock: f64, epoch: &Epoch) -> BTreeMap<String, f64> {
    epoch
        .observations
        .iter()
        .map(|o| (o.sat_id.clone(), o.pseudorange - predicted_pseudorange(x, clock, o)))
        .collect()
}

/// Population mean and standard deviation.
fn mean_std<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Gate residuals against their own epoch statistics.
///
/// The returned verdict has `epoch` set to 0; [`raim_epoch`] fills it in.
pub fn raim_gate(residuals: &BTreeMap<String, f64>, alpha: f64) -> Result<RaimVerdict, RaimError> {
    if !(alpha > 0.0) {
        return Err(RaimError::InvalidAlpha(alpha));
    }
    if residuals.len() < 2 {
        return Err(RaimError::TooFewSatellites(residuals.len()));
    }
    let (mean, std) = mean_std(residuals.values());
    let mut inliers = BTreeSet::new();
    let mut outliers = BTreeSet::new();
    for (id, v) in residuals {
        if std == 0.0 || (v - mean).abs() <= alpha * std {
            inliers.insert(id.clone());
        } else {
            outliers.insert(id.clone());
        }
    }
    let mut verdict = RaimVerdict {
        epoch: 0.0,
        inliers,
        outliers,
        residuals: residuals.clone(),
        mean,
        std,
        alpha,
        degraded: false,
    };
    keep_minimum(&mut verdict, |id| (residuals[id] - mean).abs());
    Ok(verdict)
}

/// Moves the best outliers back until `MIN_INLIERS` satellites remain.
fn keep_minimum(verdict: &mut RaimVerdict, score: impl Fn(&str) -> f64) {
    let total = verdict.inliers.len() + verdict.outliers.len();
    if verdict.inliers.len() >= MIN_INLIERS || verdict.outliers.is_empty() {
        return;
    }
    let mut ranked: Vec<String> = verdict.outliers.iter().cloned().collect();
    ranked.sort_by(|a, b| score(a).total_cmp(&score(b)).then_with(|| a.cmp(b)));
    let target = MIN_INLIERS.min(total);
    for id in ranked {
        if verdict.inliers.len() >= target {
            break;
        }
        verdict.outliers.remove(&id);
        verdict.inliers.insert(id);
    }
    verdict.degraded = true;
}

/// Aiding position for one epoch: the fused point when both fixes exist,
/// otherwise whichever is available.
pub fn aiding_position(lidar: Option<&PositionFix>, gnss: Option<&PositionFix>) -> Result<Vector3<f64>, RaimError> {
    match (lidar, gnss) {
        (Some(l), Some(g)) => fuse_position_for_raim(l, g),
        (Some(l), None) => Ok(l.position),
        (None, Some(g)) => Ok(g.position),
        (None, None) => Err(RaimError::NoPosition),
    }
}

/// Fuse, estimate the clock, compute residuals and gate.
pub fn raim_epoch(
    lidar: Option<&PositionFix>,
    gnss: Option<&PositionFix>,
    epoch: &Epoch,
    alpha: f64,
) -> Result<RaimVerdict, RaimError> {
    let x = aiding_position(lidar, gnss)?;
    let clock = estimate_clock(&x, epoch)?;
    let residuals = pseudorange_residuals(&x, clock, epoch);
    let mut verdict = raim_gate(&residuals, alpha)?;
    verdict.epoch = epoch.time;
    Ok(verdict)
}

/// Variant that gates each satellite against the history of its own
/// residuals over a sliding window, falling back to the epoch-wide gate
/// until enough history exists.
#[derive(Debug, Clone)]
pub struct WindowedRaim {
    pub window: usize,
    pub alpha: f64,
    history: BTreeMap<String, VecDeque<f64>>,
}

impl WindowedRaim {
    pub fn new(window: usize, alpha: f64) -> Self {
        Self { window: window.max(3), alpha, history: BTreeMap::new() }
    }

    pub fn process(
        &mut self,
        lidar: Option<&PositionFix>,
        gnss: Option<&PositionFix>,
        epoch: &Epoch,
    ) -> Result<RaimVerdict, RaimError> {
        let mut verdict = raim_epoch(lidar, gnss, epoch, self.alpha)?;
        let present: BTreeSet<&String> = verdict.residuals.keys().collect();
        self.history.retain(|id, _| present.contains(id));

        let mut deviations = BTreeMap::new();
        for (id, v) in &verdict.residuals {
            let Some(past) = self.history.get(id).filter(|h| h.len() >= 3) else { continue };
            let (mean, std) = mean_std(past.iter());
            let floor = std.max(1e-3);
            let dev = (v - mean).abs();
            deviations.insert(id.clone(), dev / floor);
            if dev <= self.alpha * floor {
                verdict.outliers.remove(id);
                verdict.inliers.insert(id.clone());
            } else {
                verdict.inliers.remove(id);
                verdict.outliers.insert(id.clone());
            }
        }
        verdict.degraded = false;
        let residuals = verdict.residuals.clone();
        let mean = verdict.mean;
        keep_minimum(&mut verdict, |id| deviations.get(id).copied().unwrap_or_else(|| (residuals[id] - mean).abs()));

        for (id, v) in &verdict.residuals {
            if verdict.inliers.contains(id) {
                let h = self.history.entry(id.clone()).or_default();
                h.push_back(*v);
                while h.len() > self.window {
                    h.pop_front();
                }
            }
        }
        Ok(verdict)
    }
}

/// One line of the verdict JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub t: f64,
    #[serde(rename = "in")]
    pub inliers: Vec<String>,
    #[serde(rename = "out")]
    pub outliers: Vec<String>,
    pub alpha: f64,
    pub v: u32,
}

pub const VERDICT_SCHEMA_VERSION: u32 = 1;

impl From<&RaimVerdict> for VerdictRecord {
    fn from(v: &RaimVerdict) -> Self {
        Self {
            t: v.epoch,
            inliers: v.inliers.iter().cloned().collect(),
            outliers: v.outliers.iter().cloned().collect(),
            alpha: v.alpha,
            v: VERDICT_SCHEMA_VERSION,
        }
    }
}
