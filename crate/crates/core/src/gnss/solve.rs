use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix4, Vector3, Vector4};

use super::ambiguity::AmbiguityPrior;
use super::{
    elevation, linearize_epoch, predicted_pseudorange, AmbiguityStore, Epoch, GnssError, LinearizationPoint,
    DEFAULT_ELEVATION_MASK,
};
use crate::geodesy::{CovMatrix3, FrameTag};

#[derive(Debug, Clone, PartialEq)]
pub struct PppConfig {
    pub max_iter: usize,
    /// Position update (m) below which the iteration stops.
    pub tol: f64,
    pub elevation_mask: f64,
    pub max_condition: f64,
    /// Starting position; the solver falls back to a coarse code solution
    /// from the Earth's center.
    pub initial_position: Option<Vector3<f64>>,
}

impl Default for PppConfig {
    fn default() -> Self {
        Self {
            max_iter: 10,
            tol: 1e-4,
            elevation_mask: DEFAULT_ELEVATION_MASK,
            max_condition: 1e12,
            initial_position: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PppSolution {
    pub epoch: f64,
    pub x_ecef: Vector3<f64>,
    /// `c·dtr` (m).
    pub clock: f64,
    /// Float ambiguities (cycles); empty for code-only solutions.
    pub ambiguities: BTreeMap<String, f64>,
    /// `m0² · Q_xx`.
    pub cov_x: CovMatrix3,
    pub variance_factor: f64,
    /// Diagonal of the unscaled position cofactor.
    pub dop_diag: Vector3<f64>,
    /// Final linearization point; `x_ecef` is its rounded position.
    pub point: LinearizationPoint,
    /// Satellites in the adjustment, in column order.
    pub used: Vec<String>,
    /// Satellites removed by the elevation mask.
    pub excluded: Vec<String>,
    /// `(BᵀPB + prior)⁻¹` over all states.
    pub cofactor: DMatrix<f64>,
    pub redundancy: usize,
    pub iterations: usize,
}

/// Code + carrier float solution of one epoch.
///
/// `prior` carries ambiguities from earlier epochs; satellites it knows are
/// warm-started from and constrained by the carried estimate, the others
/// start at `(Φ − Pr)/λ`.
pub fn ppp_solve_epoch(epoch: &Epoch, prior: Option<&AmbiguityStore>, config: &PppConfig) -> Result<PppSolution, GnssError> {
    let (used, excluded, reference, clock) = prepare(epoch, config)?;
    let prior = prior.and_then(|s| s.prior_for(&used));
    let mut ambiguities: Vec<f64> =
        used.observations.iter().map(|o| (o.carrier - o.pseudorange) / o.wavelength).collect();
    if let Some(p) = &prior {
        for (k, &col) in p.columns.iter().enumerate() {
            ambiguities[col] = p.values[k];
        }
    }
    let point = LinearizationPoint { reference, offset: Vector3::zeros(), clock, ambiguities: Some(ambiguities) };
    adjust(&used, point, prior.as_ref(), excluded, config)
}

/// Pseudorange-only weighted least squares.
pub fn spp_solve_epoch(epoch: &Epoch, config: &PppConfig) -> Result<PppSolution, GnssError> {
    let (used, excluded, reference, clock) = prepare(epoch, config)?;
    let point = LinearizationPoint { reference, offset: Vector3::zeros(), clock, ambiguities: None };
    adjust(&used, point, None, excluded, config)
}

/// Coarse position, elevation mask and the satellites left for adjustment.
fn prepare(epoch: &Epoch, config: &PppConfig) -> Result<(Epoch, Vec<String>, Vector3<f64>, f64), GnssError> {
    let (x, clock) = coarse_solution(epoch, config.initial_position)?;
    let used = epoch.filtered(|o| elevation(&x, &o.sat_pos).is_none_or(|el| el >= config.elevation_mask));
    let excluded: Vec<String> = epoch
        .observations
        .iter()
        .filter(|o| !used.observations.iter().any(|u| u.sat_id == o.sat_id))
        .map(|o| o.sat_id.clone())
        .collect();
    if used.observations.len() < 4 {
        return Err(GnssError::InsufficientSatellites { found: used.observations.len(), required: 4 });
    }
    Ok((used, excluded, x, clock))
}

/// Plain Gauss–Newton on the pseudoranges, good to a few meters.
fn coarse_solution(epoch: &Epoch, start: Option<Vector3<f64>>) -> Result<(Vector3<f64>, f64), GnssError> {
    let n = epoch.observations.len();
    if n < 4 {
        return Err(GnssError::InsufficientSatellites { found: n, required: 4 });
    }
    let mut x = start.unwrap_or_else(Vector3::zeros);
    let mut clock = 0.0;
    for _ in 0..30 {
        let mut normal = Matrix4::zeros();
        let mut rhs = Vector4::zeros();
        for obs in &epoch.observations {
            let los = (x - obs.sat_pos).normalize();
            let row = Vector4::new(los.x, los.y, los.z, 1.0);
            let misclosure = obs.pseudorange - predicted_pseudorange(&x, clock, obs);
            normal += row * row.transpose();
            rhs += row * misclosure;
        }
        let step = normal
            .cholesky()
            .ok_or(GnssError::SingularGeometry { condition: f64::INFINITY })?
            .solve(&rhs);
        x += step.xyz();
        clock += step[3];
        if step.xyz().norm() < 1e-3 {
            return Ok((x, clock));
        }
    }
    Ok((x, clock))
}

fn normal_equations(
    epoch: &Epoch,
    point: &LinearizationPoint,
    prior: Option<&AmbiguityPrior>,
) -> (DMatrix<f64>, DVector<f64>, f64, usize) {
    let lin = linearize_epoch(epoch, point);
    let bt_p = lin.design.transpose() * DMatrix::from_diagonal(&lin.weights);
    let mut normal = &bt_p * &lin.design;
    let mut rhs = &bt_p * &lin.misclosure;
    let mut weighted_sq = lin.misclosure.dot(&lin.misclosure.component_mul(&lin.weights));
    let mut measurements = lin.misclosure.len();
    if let (Some(p), Some(amb)) = (prior, &point.ambiguities) {
        let diff = DVector::from_iterator(p.columns.len(), p.columns.iter().enumerate().map(|(k, &c)| p.values[k] - amb[c]));
        let info_diff = &p.information * &diff;
        for (a, &ca) in p.columns.iter().enumerate() {
            rhs[4 + ca] += info_diff[a];
            for (b, &cb) in p.columns.iter().enumerate() {
                normal[(4 + ca, 4 + cb)] += p.information[(a, b)];
            }
        }
        weighted_sq += diff.dot(&info_diff);
        measurements += p.columns.len();
    }
    (normal, rhs, weighted_sq, measurements)
}

fn condition_number(normal: &DMatrix<f64>) -> f64 {
    let eig = normal.clone().symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn adjust(
    epoch: &Epoch,
    mut point: LinearizationPoint,
    prior: Option<&AmbiguityPrior>,
    excluded: Vec<String>,
    config: &PppConfig,
) -> Result<PppSolution, GnssError> {
    let mut iterations = 0;
    for _ in 0..config.max_iter {
        iterations += 1;
        let (normal, rhs, _, _) = normal_equations(epoch, &point, prior);
        let condition = condition_number(&normal);
        if condition > config.max_condition {
            return Err(GnssError::SingularGeometry { condition });
        }
        let step = normal.cholesky().ok_or(GnssError::SingularGeometry { condition })?.solve(&rhs);
        point.offset += step.fixed_rows::<3>(0);
        point.clock += step[3];
        if let Some(amb) = &mut point.ambiguities {
            for (k, a) in amb.iter_mut().enumerate() {
                *a += step[4 + k];
            }
        }
        if step.fixed_rows::<3>(0).norm() < config.tol {
            break;
        }
    }

    let (normal, _, weighted_sq, measurements) = normal_equations(epoch, &point, prior);
    let states = normal.nrows();
    let cofactor = normal
        .cholesky()
        .ok_or(GnssError::SingularGeometry { condition: f64::INFINITY })?
        .inverse();
    let redundancy = measurements.saturating_sub(states);
    let variance_factor = if redundancy > 0 { weighted_sq / redundancy as f64 } else { 1.0 };
    let q_xx = cofactor.fixed_view::<3, 3>(0, 0).into_owned();

    let used: Vec<String> = epoch.observations.iter().map(|o| o.sat_id.clone()).collect();
    let ambiguities = match &point.ambiguities {
        Some(a) => used.iter().cloned().zip(a.iter().copied()).collect(),
        None => BTreeMap::new(),
    };
    Ok(PppSolution {
        epoch: epoch.time,
        x_ecef: point.position(),
        clock: point.clock,
        ambiguities,
        cov_x: CovMatrix3::new(q_xx * variance_factor, FrameTag::Ecef),
        variance_factor,
        dop_diag: q_xx.diagonal(),
        point,
        used,
        excluded,
        cofactor,
        redundancy,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::super::Linearization;
    use super::*;

    #[test]
    fn noiseless_ppp_recovers_truth() {
        let truth = station();
        let (epoch, amb) = synthetic_epoch(&truth, 812.0, &sky(8), (1.0, 0.01), None);
        let sol = ppp_solve_epoch(&epoch, None, &PppConfig::default()).unwrap();
        assert!((sol.x_ecef - truth).norm() < 1e-6);
        assert!((sol.clock - 812.0).abs() < 1e-6);
        for (k, id) in sol.used.iter().enumerate() {
            assert!((sol.ambiguities[id] - amb[k]).abs() < 1e-5);
        }
        assert_eq!(sol.redundancy, 4);
    }

    #[test]
    fn solving_twice_is_bit_identical() {
        let (epoch, _) = synthetic_epoch(&station(), 10.0, &sky(9), (1.0, 0.01), Some(5));
        let a = ppp_solve_epoch(&epoch, None, &PppConfig::default()).unwrap();
        let b = ppp_solve_epoch(&epoch, None, &PppConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stationarity_at_solution() {
        for seed in 0..20 {
            let (epoch, _) = synthetic_epoch(&station(), 10.0, &sky(8), (1.0, 0.01), Some(seed));
            let sol = ppp_solve_epoch(&epoch, None, &PppConfig::default()).unwrap();
            let lin: Linearization = linearize_epoch(&epoch, &sol.point);
            assert!(lin.normal_gradient().amax() < 1e-6, "{}", lin.normal_gradient());
        }
    }

    #[test]
    fn spp_noiseless_and_too_few() {
        let truth = station();
        let (epoch, _) = synthetic_epoch(&truth, -55.0, &sky(7), (1.0, 0.01), None);
        let sol = spp_solve_epoch(&epoch, &PppConfig::default()).unwrap();
        assert!((sol.x_ecef - truth).norm() < 1e-6);
        assert!(sol.ambiguities.is_empty());
        assert_eq!(sol.redundancy, 3);

        let (small, _) = synthetic_epoch(&truth, 0.0, &sky(3), (1.0, 0.01), None);
        assert!(matches!(spp_solve_epoch(&small, &PppConfig::default()), Err(GnssError::InsufficientSatellites { .. })));
        assert!(matches!(ppp_solve_epoch(&small, None, &PppConfig::default()), Err(GnssError::InsufficientSatellites { .. })));
    }

    #[test]
    fn spp_noisy_error_is_moderate() {
        let truth = station();
        let mut errors: Vec<f64> = (0..50)
            .map(|seed| {
                let (epoch, _) = synthetic_epoch(&truth, 0.0, &sky(8), (1.0, 0.01), Some(seed));
                (spp_solve_epoch(&epoch, &PppConfig::default()).unwrap().x_ecef - truth).norm()
            })
            .collect();
        errors.sort_by(f64::total_cmp);
        assert!(errors[25] < 5.0, "median {}", errors[25]);
    }

    #[test]
    fn adding_a_satellite_never_increases_dop() {
        let truth = station();
        let sats = sky(10);
        for n in 5..10 {
            let (small, _) = synthetic_epoch(&truth, 0.0, &sats[..n], (1.0, 0.01), None);
            let (large, _) = synthetic_epoch(&truth, 0.0, &sats[..n + 1], (1.0, 0.01), None);
            let a = ppp_solve_epoch(&small, None, &PppConfig::default()).unwrap().dop_diag;
            let b = ppp_solve_epoch(&large, None, &PppConfig::default()).unwrap().dop_diag;
            for k in 0..3 {
                assert!(b[k] <= a[k] * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn ambiguity_carry_over_converges() {
        let truth = station();
        let sats = sky(8);
        let mut store = AmbiguityStore::new();
        let mut last = f64::INFINITY;
        for seed in 0..100 {
            let (epoch, _) = synthetic_epoch(&truth, 100.0 + seed as f64, &sats, (1.0, 0.01), Some(1000 + seed));
            store.begin_epoch(&epoch, &[]);
            let sol = ppp_solve_epoch(&epoch, Some(&store), &PppConfig::default()).unwrap();
            store.update(&sol);
            let geo = crate::geodesy::ecef_to_geodetic(&truth).unwrap();
            let enu = crate::geodesy::enu_rotation(&geo).rotation.transpose() * (sol.x_ecef - truth);
            last = enu.xy().norm();
        }
        assert!(last < 0.5, "horizontal error {last}");
        assert_eq!(store.len(), 8);
    }

    #[test]
    fn mask_removes_low_satellites() {
        let truth = station();
        let mut sats = sky(8);
        let geo = crate::geodesy::ecef_to_geodetic(&truth).unwrap();
        let pose = crate::geodesy::enu_to_ecef_pose(&geo);
        let el = 5f64.to_radians();
        sats.push(pose.transform_point(&(Vector3::new(el.cos(), 0.0, el.sin()) * 2.02e7)));
        let (epoch, _) = synthetic_epoch(&truth, 0.0, &sats, (1.0, 0.01), None);
        let sol = ppp_solve_epoch(&epoch, None, &PppConfig::default()).unwrap();
        assert_eq!(sol.excluded, vec!["G09".to_string()]);
        assert_eq!(sol.used.len(), 8);
    }
}
