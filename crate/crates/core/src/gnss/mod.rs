//! Single-frequency PPP and pseudorange-only SPP.
//!
//! Observations carry their correction terms (satellite clock, orbit,
//! ionosphere, troposphere, relativity, phase wind-up) as input fields; the
//! solvers only evaluate the observation model and the least-squares
//! adjustment.

mod ambiguity;
mod solve;

pub use ambiguity::AmbiguityStore;
pub use solve::{ppp_solve_epoch, spp_solve_epoch, PppConfig, PppSolution};

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::geodesy::{ecef_to_geodetic, enu_rotation};

/// Speed of light (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// GPS L1 carrier wavelength (m).
pub const L1_WAVELENGTH: f64 = SPEED_OF_LIGHT / 1_575.42e6;
/// Default elevation mask (rad).
pub const DEFAULT_ELEVATION_MASK: f64 = 10.0 * std::f64::consts::PI / 180.0;
/// Saastamoinen is not evaluated below this elevation (rad).
pub const TROPO_MIN_ELEVATION: f64 = 5.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GnssError {
    #[error("{found} usable satellites, {required} required")]
    InsufficientSatellites { found: usize, required: usize },
    #[error("normal matrix is ill-conditioned (condition number {condition:.3e})")]
    SingularGeometry { condition: f64 },
    #[error("elevation {elevation:.4} rad is below the 5 degree troposphere mask")]
    LowElevation { elevation: f64 },
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("satellite {0} appears twice in one epoch")]
    DuplicateSatellite(String),
    #[error("epoch has no observations")]
    EmptyEpoch,
    #[error("meteorological input out of range: {0}")]
    InvalidMeteorology(String),
}

/// Correction terms in meters, each entering the observation model additively
/// (the satellite clock with a negative sign, the ionosphere with opposite
/// signs on code and phase).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Corrections {
    /// `c·dT^s`.
    #[serde(rename = "dts")]
    pub sat_clock: f64,
    #[serde(rename = "orb")]
    pub orbit: f64,
    #[serde(rename = "ion")]
    pub iono: f64,
    #[serde(rename = "trop")]
    pub tropo: f64,
    #[serde(rename = "rel")]
    pub relativity: f64,
    #[serde(rename = "pw")]
    pub windup: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnssObservation {
    pub sat_id: String,
    pub epoch: f64,
    /// Pseudorange (m).
    pub pseudorange: f64,
    /// Carrier phase scaled to meters.
    pub carrier: f64,
    pub sat_pos: Vector3<f64>,
    pub corrections: Corrections,
    pub sigma_pr: f64,
    pub sigma_phi: f64,
    pub wavelength: f64,
}

impl GnssObservation {
    pub fn validate(&self) -> Result<(), GnssError> {
        let bad = |msg: &str| Err(GnssError::InvalidObservation(format!("{}: {msg}", self.sat_id)));
        if !(self.pseudorange > 1e7) || !self.pseudorange.is_finite() {
            return bad("pseudorange must exceed 1e7 m");
        }
        if !self.carrier.is_finite() || !self.sat_pos.iter().all(|v| v.is_finite()) {
            return bad("non-finite carrier or satellite position");
        }
        if !(self.sigma_pr > 0.0 && self.sigma_phi > 0.0) {
            return bad("sigmas must be positive");
        }
        if !(self.wavelength > 0.0) {
            return bad("wavelength must be positive");
        }
        Ok(())
    }

    /// Everything in the code model except range and receiver clock.
    fn code_terms(&self) -> f64 {
        let c = &self.corrections;
        -c.sat_clock + c.orbit + c.iono + c.tropo + c.relativity
    }

    fn carrier_terms(&self) -> f64 {
        let c = &self.corrections;
        -c.sat_clock + c.orbit - c.iono + c.tropo + c.relativity + c.windup
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub time: f64,
    pub observations: Vec<GnssObservation>,
}

impl Epoch {
    pub fn new(time: f64, observations: Vec<GnssObservation>) -> Result<Self, GnssError> {
        if observations.is_empty() {
            return Err(GnssError::EmptyEpoch);
        }
        let mut seen = BTreeSet::new();
        for obs in &observations {
            obs.validate()?;
            if !seen.insert(obs.sat_id.as_str()) {
                return Err(GnssError::DuplicateSatellite(obs.sat_id.clone()));
            }
        }
        Ok(Self { time, observations })
    }

    /// Copy restricted to satellites accepted by `keep`.
    pub fn filtered(&self, mut keep: impl FnMut(&GnssObservation) -> bool) -> Epoch {
        Epoch { time: self.time, observations: self.observations.iter().filter(|o| keep(o)).cloned().collect() }
    }

    pub fn sat_ids(&self) -> Vec<&str> {
        self.observations.iter().map(|o| o.sat_id.as_str()).collect()
    }
}

/// Tropospheric slant delay (m) from surface meteorology.
///
/// Pressure in hPa, temperature in K, relative humidity in `[0, 1]`, station
/// height in meters, elevation in radians. The hydrostatic part uses the
/// height-corrected zenith term, the wet part the Magnus-type vapour pressure,
/// both mapped by `1/sin(el)`.
pub fn saastamoinen_zenith_delay(
    pressure: f64,
    temperature: f64,
    humidity: f64,
    height: f64,
    elevation: f64,
) -> Result<f64, GnssError> {
    if !(0.0..=1200.0).contains(&pressure) {
        return Err(GnssError::InvalidMeteorology(format!("pressure {pressure} hPa")));
    }
    if !(150.0..=350.0).contains(&temperature) {
        return Err(GnssError::InvalidMeteorology(format!("temperature {temperature} K")));
    }
    if !(0.0..=1.0).contains(&humidity) {
        return Err(GnssError::InvalidMeteorology(format!("humidity {humidity}")));
    }
    if !(-500.0..=9000.0).contains(&height) {
        return Err(GnssError::InvalidMeteorology(format!("height {height} m")));
    }
    if !(elevation <= std::f64::consts::FRAC_PI_2 + 1e-12) || elevation < TROPO_MIN_ELEVATION {
        return Err(GnssError::LowElevation { elevation });
    }
    let vapour = 6.108 * humidity * ((17.15 * temperature - 4684.0) / (temperature - 38.45)).exp();
    let hydro = 0.002_276_8 * pressure / (1.0 - 0.000_28 * height / 1000.0);
    let wet = 0.002_277 * (1255.0 / temperature + 0.05) * vapour;
    Ok((hydro + wet) / elevation.sin())
}

/// `|x − sat| + clock + code corrections`.
pub fn predicted_pseudorange(x: &Vector3<f64>, clock: f64, obs: &GnssObservation) -> f64 {
    (x - obs.sat_pos).norm() + clock + obs.code_terms()
}

/// `|x − sat| + clock + carrier corrections + λ·N`.
pub fn predicted_carrier(x: &Vector3<f64>, clock: f64, ambiguity: f64, obs: &GnssObservation) -> f64 {
    (x - obs.sat_pos).norm() + clock + obs.carrier_terms() + obs.wavelength * ambiguity
}

/// Elevation of `sat` seen from `receiver` (both ECEF).
pub fn elevation(receiver: &Vector3<f64>, sat: &Vector3<f64>) -> Option<f64> {
    let geo = ecef_to_geodetic(receiver).ok()?;
    let up = enu_rotation(&geo).rotation.column(2).into_owned();
    let los = (sat - receiver).normalize();
    Some(los.dot(&up).clamp(-1.0, 1.0).asin())
}

/// Receiver state at which an epoch is linearized.
///
/// The position is split as `reference + offset` so that ranges and
/// misclosures can be evaluated far below the resolution of an ECEF
/// coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationPoint {
    pub reference: Vector3<f64>,
    pub offset: Vector3<f64>,
    pub clock: f64,
    /// Float ambiguities (cycles) in observation order; `None` linearizes
    /// code only.
    pub ambiguities: Option<Vec<f64>>,
}

impl LinearizationPoint {
    pub fn position(&self) -> Vector3<f64> {
        self.reference + self.offset
    }
}

/// Stacked misclosures, design matrix and diagonal weights.
///
/// Rows are all carrier rows followed by all code rows (code only when no
/// ambiguities are supplied). Columns are `dx, dy, dz, clock, N_1..N_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub misclosure: DVector<f64>,
    pub design: DMatrix<f64>,
    pub weights: DVector<f64>,
}

impl Linearization {
    pub fn weight_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.weights)
    }

    /// `Bᵀ P Z`, which vanishes at a least-squares solution.
    pub fn normal_gradient(&self) -> DVector<f64> {
        self.design.transpose() * self.misclosure.component_mul(&self.weights)
    }
}

pub fn linearize_epoch(epoch: &Epoch, point: &LinearizationPoint) -> Linearization {
    let n = epoch.observations.len();
    let with_phase = point.ambiguities.is_some();
    let rows = if with_phase { 2 * n } else { n };
    let cols = if with_phase { 4 + n } else { 4 };
    let mut z = DVector::zeros(rows);
    let mut b = DMatrix::zeros(rows, cols);
    let mut w = DVector::zeros(rows);
    let code_offset = if with_phase { n } else { 0 };

    for (k, obs) in epoch.observations.iter().enumerate() {
        let range = SplitRange::new(&point.reference, &point.offset, &obs.sat_pos);
        let los = range.unit;

        let row = code_offset + k;
        z[row] = range.misclosure(obs.pseudorange, point.clock + obs.code_terms());
        b.fixed_view_mut::<1, 3>(row, 0).copy_from(&los.transpose());
        b[(row, 3)] = 1.0;
        w[row] = 1.0 / (obs.sigma_pr * obs.sigma_pr);

        if let Some(amb) = &point.ambiguities {
            z[k] = range.misclosure(obs.carrier, point.clock + obs.carrier_terms() + obs.wavelength * amb[k]);
            b.fixed_view_mut::<1, 3>(k, 0).copy_from(&los.transpose());
            b[(k, 3)] = 1.0;
            b[(k, 4 + k)] = obs.wavelength;
            w[k] = 1.0 / (obs.sigma_phi * obs.sigma_phi);
        }
    }
    Linearization { misclosure: z, design: b, weights: w }
}

/// Receiver–satellite range as `coarse + fine`, with `fine` carrying the
/// digits lost when the full range is rounded to a double.
struct SplitRange {
    coarse: f64,
    fine: f64,
    unit: Vector3<f64>,
}

impl SplitRange {
    fn new(reference: &Vector3<f64>, offset: &Vector3<f64>, sat: &Vector3<f64>) -> Self {
        let mut hi = [0.0; 3];
        let mut small = [0.0; 3];
        for i in 0..3 {
            let (h, l) = two_sum(reference[i], -sat[i]);
            hi[i] = h;
            small[i] = l + offset[i];
        }
        let coarse = (hi[0] * hi[0] + hi[1] * hi[1] + hi[2] * hi[2]).sqrt();

        // ρ² − coarse² accumulated without cancellation error
        let mut acc = Compensated::default();
        for i in 0..3 {
            let p = hi[i] * hi[i];
            acc.add(p);
            acc.add(hi[i].mul_add(hi[i], -p));
            let q = 2.0 * hi[i] * small[i];
            acc.add(q);
            acc.add((2.0 * hi[i]).mul_add(small[i], -q));
            acc.add(small[i] * small[i]);
        }
        let c2 = coarse * coarse;
        acc.add(-c2);
        acc.add(-coarse.mul_add(coarse, -c2));
        let excess = acc.value();
        let fine = excess / (coarse + (c2 + excess).sqrt());

        let full = Vector3::new(hi[0] + small[0], hi[1] + small[1], hi[2] + small[2]);
        Self { coarse, fine, unit: full / full.norm() }
    }

    /// `measured − (range + rest)`, ordered so that every rounding happens at
    /// the magnitude of the result.
    fn misclosure(&self, measured: f64, rest: f64) -> f64 {
        (measured - self.coarse) - rest - self.fine
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[derive(Default)]
struct Compensated {
    hi: f64,
    lo: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let (s, e) = two_sum(self.hi, x);
        self.hi = s;
        self.lo += e;
    }

    fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

/// One line of the observation JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub t: f64,
    pub obs: Vec<ObservationRecord>,
    pub v: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub sat: String,
    pub pr: f64,
    pub phi: f64,
    pub satpos: [f64; 3],
    pub corr: Corrections,
    pub sig: [f64; 2],
    pub lam: f64,
}

pub const OBSERVATION_SCHEMA_VERSION: u32 = 1;

impl From<&Epoch> for EpochRecord {
    fn from(e: &Epoch) -> Self {
        let obs = e
            .observations
            .iter()
            .map(|o| ObservationRecord {
                sat: o.sat_id.clone(),
                pr: o.pseudorange,
                phi: o.carrier,
                satpos: [o.sat_pos.x, o.sat_pos.y, o.sat_pos.z],
                corr: o.corrections,
                sig: [o.sigma_pr, o.sigma_phi],
                lam: o.wavelength,
            })
            .collect();
        EpochRecord { t: e.time, obs, v: OBSERVATION_SCHEMA_VERSION }
    }
}

impl TryFrom<EpochRecord> for Epoch {
    type Error = GnssError;

    fn try_from(r: EpochRecord) -> Result<Self, GnssError> {
        let obs = r
            .obs
            .into_iter()
            .map(|o| GnssObservation {
                sat_id: o.sat,
                epoch: r.t,
                pseudorange: o.pr,
                carrier: o.phi,
                sat_pos: Vector3::from(o.satpos),
                corrections: o.corr,
                sigma_pr: o.sig[0],
                sigma_phi: o.sig[1],
                wavelength: o.lam,
            })
            .collect();
        Epoch::new(r.t, obs)
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::geodesy::{enu_to_ecef_pose, GeodeticCoord};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    pub fn station() -> Vector3<f64> {
        let geo = GeodeticCoord::from_degrees(22.3, 114.2, 30.0).unwrap();
        crate::geodesy::geodetic_to_ecef(&geo)
    }

    /// Satellites at fixed azimuth/elevation around `station()`.
    pub fn sky(n: usize) -> Vec<Vector3<f64>> {
        let geo = GeodeticCoord::from_degrees(22.3, 114.2, 30.0).unwrap();
        let pose = enu_to_ecef_pose(&geo);
        (0..n)
            .map(|k| {
                let az = k as f64 * 2.399;
                let el = (15.0 + 70.0 * (k as f64 * 0.618_034 + 0.3).fract()).to_radians();
                let dir = Vector3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin());
                pose.transform_point(&(dir * 2.02e7))
            })
            .collect()
    }

    /// Epoch generated from the observation model at `truth`.
    pub fn synthetic_epoch(
        truth: &Vector3<f64>,
        clock: f64,
        sats: &[Vector3<f64>],
        sigma: (f64, f64),
        seed: Option<u64>,
    ) -> (Epoch, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
        let mut ambiguities = Vec::new();
        let obs = sats
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let n = (k as f64 * 37.0) - 100.0;
                ambiguities.push(n);
                let corrections = Corrections {
                    sat_clock: 1.2e4 * ((k as f64) - 3.5),
                    orbit: 0.3,
                    iono: 4.0 + k as f64 * 0.2,
                    tropo: 3.1,
                    relativity: -2.5,
                    windup: 0.05,
                };
                let mut o = GnssObservation {
                    sat_id: format!("G{:02}", k + 1),
                    epoch: 0.0,
                    pseudorange: 0.0,
                    carrier: 0.0,
                    sat_pos: *s,
                    corrections,
                    sigma_pr: sigma.0,
                    sigma_phi: sigma.1,
                    wavelength: L1_WAVELENGTH,
                };
                let (e_pr, e_phi): (f64, f64) = match seed {
                    Some(_) => (rng.sample(StandardNormal), rng.sample(StandardNormal)),
                    None => (0.0, 0.0),
                };
                o.pseudorange = predicted_pseudorange(truth, clock, &o) + sigma.0 * e_pr;
                o.carrier = predicted_carrier(truth, clock, n, &o) + sigma.1 * e_phi;
                o
            })
            .collect();
        (Epoch::new(0.0, obs).unwrap(), ambiguities)
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn saastamoinen_examples() {
        let zenith = saastamoinen_zenith_delay(1013.25, 288.15, 0.5, 0.0, std::f64::consts::FRAC_PI_2).unwrap();
        assert!((2.0..=2.6).contains(&zenith), "{zenith}");
        let low = saastamoinen_zenith_delay(1013.25, 288.15, 0.5, 0.0, 30f64.to_radians()).unwrap();
        assert!((low - zenith / 0.5).abs() <= 0.1 * zenith / 0.5);
        assert_eq!(saastamoinen_zenith_delay(0.0, 288.15, 0.0, 0.0, 1.0).unwrap(), 0.0);
        assert!(matches!(
            saastamoinen_zenith_delay(1013.25, 288.15, 0.5, 0.0, 4f64.to_radians()),
            Err(GnssError::LowElevation { .. })
        ));
        let mut prev = f64::INFINITY;
        for deg in 5..=90 {
            let d = saastamoinen_zenith_delay(1013.25, 288.15, 0.5, 0.0, (deg as f64).to_radians()).unwrap();
            assert!(d <= prev && d >= 0.0);
            prev = d;
        }
    }

    #[test]
    fn prediction_examples() {
        let sat = Vector3::new(2.0e7, 1.0e7, 5.0e6);
        let obs = GnssObservation {
            sat_id: "G01".into(),
            epoch: 0.0,
            pseudorange: 2.3e7,
            carrier: 2.3e7,
            sat_pos: sat,
            corrections: Corrections::default(),
            sigma_pr: 1.0,
            sigma_phi: 0.01,
            wavelength: L1_WAVELENGTH,
        };
        let x = station();
        let range = (x - sat).norm();
        assert_eq!(predicted_pseudorange(&x, 0.0, &obs), range);
        assert_eq!(predicted_pseudorange(&x, 5.0, &obs) - predicted_pseudorange(&x, 0.0, &obs), 5.0);
        assert_eq!(predicted_carrier(&x, 0.0, 0.0, &obs), range);
        assert_relative_eq!(
            predicted_carrier(&x, 0.0, 1.0, &obs) - predicted_carrier(&x, 0.0, 0.0, &obs),
            L1_WAVELENGTH,
            epsilon = 1e-8
        );
        let ion = GnssObservation { corrections: Corrections { iono: 3.0, ..Default::default() }, ..obs };
        assert_eq!(predicted_pseudorange(&x, 0.0, &ion) - range, 3.0);
        assert_eq!(predicted_carrier(&x, 0.0, 0.0, &ion) - range, -3.0);
    }

    #[test]
    fn overhead_satellite_line_of_sight() {
        let geo = crate::geodesy::GeodeticCoord::from_degrees(22.3, 114.2, 30.0).unwrap();
        let x = station();
        let up = enu_rotation(&geo).rotation.column(2).into_owned();
        let (epoch, amb) = synthetic_epoch(&x, 0.0, &[x + up * 2.02e7], (2.0, 0.02), None);
        let point = LinearizationPoint { reference: x, offset: Vector3::zeros(), clock: 0.0, ambiguities: Some(amb) };
        let lin = linearize_epoch(&epoch, &point);
        let los = lin.design.fixed_view::<1, 3>(1, 0).transpose();
        assert_relative_eq!(enu_rotation(&geo).rotation.transpose() * los, Vector3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
        assert_eq!(lin.weights[0], 1.0 / (0.02 * 0.02));
        assert_eq!(lin.weights[1], 1.0 / 4.0);
        assert_eq!(lin.design[(0, 4)], L1_WAVELENGTH);
        assert_eq!(lin.design[(1, 4)], 0.0);
    }

    #[test]
    fn noiseless_misclosures_vanish() {
        let x = station();
        let (epoch, amb) = synthetic_epoch(&x, 1234.5, &sky(8), (1.0, 0.01), None);
        let point = LinearizationPoint { reference: x, offset: Vector3::zeros(), clock: 1234.5, ambiguities: Some(amb) };
        let lin = linearize_epoch(&epoch, &point);
        assert!(lin.misclosure.amax() < 1e-8, "{}", lin.misclosure);
    }

    #[test]
    fn split_range_matches_plain_norm() {
        let x = station();
        for s in sky(10) {
            let offset = Vector3::new(12.5, -3.25, 7.0);
            let r = SplitRange::new(&x, &offset, &s);
            let plain = (x + offset - s).norm();
            assert!((r.coarse + r.fine - plain).abs() < 1e-8);
        }
    }

    #[test]
    fn record_roundtrip() {
        let (epoch, _) = synthetic_epoch(&station(), 10.0, &sky(6), (1.0, 0.01), Some(3));
        let rec = EpochRecord::from(&epoch);
        let text = serde_json::to_string(&rec).unwrap();
        let back: EpochRecord = serde_json::from_str(&text).unwrap();
        let mut again = Epoch::try_from(back).unwrap();
        for o in &mut again.observations {
            o.epoch = 0.0;
        }
        assert_eq!(again, epoch);
    }

    #[test]
    fn epoch_validation() {
        let (epoch, _) = synthetic_epoch(&station(), 0.0, &sky(4), (1.0, 0.01), None);
        let mut obs = epoch.observations.clone();
        obs[1].sat_id = obs[0].sat_id.clone();
        assert!(matches!(Epoch::new(0.0, obs), Err(GnssError::DuplicateSatellite(_))));
        let mut obs = epoch.observations.clone();
        obs[0].sigma_pr = 0.0;
        assert!(matches!(Epoch::new(0.0, obs), Err(GnssError::InvalidObservation(_))));
        assert!(matches!(Epoch::new(0.0, vec![]), Err(GnssError::EmptyEpoch)));
    }
}
