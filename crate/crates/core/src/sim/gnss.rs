use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::lidar::segment_hits_box;
use super::{sub_rng, GroundTruth, NlosMode, ScenarioConfig, SimError};
use crate::geodesy::{enu_to_ecef_pose, geodetic_to_ecef};
use crate::gnss::{
    predicted_carrier, predicted_pseudorange, saastamoinen_zenith_delay, Corrections, Epoch, GnssObservation,
    L1_WAVELENGTH,
};

const SKY_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;
const AMBIGUITY_STREAM: u64 = 4;
/// Distance from the receiver to every simulated satellite (m).
const SAT_DISTANCE: f64 = 2.02e7;
/// Length of the line-of-sight segment tested against buildings (m).
const SIGHT_LENGTH: f64 = 1e4;

/// ENU unit vectors of the sky grid: azimuths spread by the golden angle,
/// elevations spread over `[min_elevation, 85°]`.
pub fn sky_directions(seed: u64, n: usize, min_elevation_deg: f64) -> Vec<Vector3<f64>> {
    let mut rng = sub_rng(seed, SKY_STREAM, 0);
    let az0: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let phase: f64 = rng.random_range(0.0..1.0);
    (0..n)
        .map(|k| {
            let az = az0 + k as f64 * 2.399_963;
            let frac = (phase + k as f64 * 0.618_034).fract();
            let el = (min_elevation_deg + (85.0 - min_elevation_deg) * frac).to_radians();
            Vector3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin())
        })
        .collect()
}

fn sat_id(k: usize) -> String {
    format!("G{:02}", k + 1)
}

/// Observation epochs along the truth trajectory.
///
/// Satellites whose line of sight crosses a building are dropped or given a
/// code bias depending on the NLOS mode. Each continuous visibility arc
/// carries its own integer ambiguity. Epochs with no visible satellite are
/// skipped.
pub fn render_gnss(cfg: &ScenarioConfig, gt: &GroundTruth) -> Result<Vec<Epoch>, SimError> {
    let g = &cfg.gnss;
    let origin = cfg.origin()?;
    let enu_to_ecef = enu_to_ecef_pose(&origin);
    let origin_ecef = geodetic_to_ecef(&origin);
    let dirs = sky_directions(cfg.seed, g.n_sats, g.min_elevation_deg);

    let mut corr_rng = sub_rng(cfg.seed, SKY_STREAM, 1);
    let sats: Vec<(Vector3<f64>, Corrections)> = dirs
        .iter()
        .map(|d| {
            let el = d.z.asin();
            let tropo = saastamoinen_zenith_delay(g.meteo.pressure, g.meteo.temperature, g.meteo.humidity, origin.height, el)
                .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
            let corrections = Corrections {
                sat_clock: corr_rng.random_range(-5e4..5e4),
                orbit: corr_rng.random_range(-1.0..1.0),
                iono: corr_rng.random_range(2.0..6.0) / el.sin().sqrt(),
                tropo,
                relativity: corr_rng.random_range(-0.5..0.5),
                windup: corr_rng.random_range(-0.05..0.05),
            };
            Ok((origin_ecef + enu_to_ecef.rotation * d * SAT_DISTANCE, corrections))
        })
        .collect::<Result<_, SimError>>()?;

    let mut arcs: BTreeMap<usize, (u64, f64)> = BTreeMap::new();
    let mut arc_count = vec![0u64; g.n_sats];
    let mut epochs = Vec::new();
    for (k, t) in cfg.epoch_times().into_iter().enumerate() {
        let truth = gt.sample(t);
        let antenna = truth.antenna_enu;
        let x = enu_to_ecef.transform_point(&antenna);
        let mut rng = sub_rng(cfg.seed, NOISE_STREAM, k as u64);
        let mut observations = Vec::new();
        for (s, (sat_pos, corrections)) in sats.iter().enumerate() {
            let los = enu_to_ecef.rotation.transpose() * (sat_pos - x).normalize();
            let end = antenna + los * SIGHT_LENGTH;
            let blocked = cfg.environment.boxes.iter().any(|b| segment_hits_box(&antenna, &end, b));
            // noise is drawn for every satellite so streams stay aligned
            let n_pr: f64 = StandardNormal.sample(&mut rng);
            let n_phi: f64 = StandardNormal.sample(&mut rng);
            if blocked && g.nlos == NlosMode::Drop {
                arcs.remove(&s);
                continue;
            }
            let ambiguity = arcs
                .entry(s)
                .or_insert_with(|| {
                    arc_count[s] += 1;
                    let mut a = sub_rng(cfg.seed, AMBIGUITY_STREAM, (s as u64) << 32 | arc_count[s]);
                    (arc_count[s], a.random_range(-200..=200) as f64)
                })
                .1;
            let id = sat_id(s);
            let mut bias = if blocked { g.nlos_bias } else { 0.0 };
            bias += g.outliers.iter().filter(|o| o.sat == id && o.start <= t && t <= o.end).map(|o| o.bias).sum::<f64>();
            let mut obs = GnssObservation {
                sat_id: id,
                epoch: t,
                pseudorange: 0.0,
                carrier: 0.0,
                sat_pos: *sat_pos,
                corrections: *corrections,
                sigma_pr: g.sigma_pr.max(1e-3),
                sigma_phi: g.sigma_phi.max(1e-4),
                wavelength: L1_WAVELENGTH,
            };
            obs.pseudorange = predicted_pseudorange(&x, truth.clock, &obs) + bias + g.sigma_pr * n_pr;
            obs.carrier = predicted_carrier(&x, truth.clock, ambiguity, &obs) + g.sigma_phi * n_phi;
            observations.push(obs);
        }
        if observations.is_empty() {
            log::warn!("epoch {t:.3} s has no visible satellite; skipped");
            continue;
        }
        epochs.push(Epoch::new(t, observations).map_err(|e| SimError::InvalidConfig(e.to_string()))?);
    }
    Ok(epochs)
}
