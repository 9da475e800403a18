//! Reference covariance for LiDAR positions built from a GNSS fix with known
//! covariance and the ground truth.
//!
//! The truth is projected onto the line through the GNSS and LiDAR
//! positions. Its place on that line fixes the distance ratio that an
//! inverse-variance weighting of the two fixes would need, and that ratio
//! scales the GNSS covariance into a LiDAR covariance.

use nalgebra::Vector3;

use crate::geodesy::{transform_cov, CovMatrix3, GeodesyError, Pose};

/// Baselines and distances below this length (m) are treated as zero.
pub const DEGENERATE_LENGTH: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CovTruthError {
    #[error("GNSS and LiDAR positions coincide")]
    DegenerateBaseline,
    #[error("projected truth coincides with the GNSS position")]
    OptAtGnss,
    #[error("both covariances have zero trace")]
    ZeroCovariance,
    #[error("epoch mismatch: {0}")]
    EpochMismatch(String),
    #[error(transparent)]
    Frame(#[from] GeodesyError),
}

/// Foot of the perpendicular from `x_gt` onto the line `x_g`–`x_l`.
pub fn project_opt(x_gt: &Vector3<f64>, x_g: &Vector3<f64>, x_l: &Vector3<f64>) -> Result<Vector3<f64>, CovTruthError> {
    let base = x_l - x_g;
    let len2 = base.norm_squared();
    if len2.sqrt() < DEGENERATE_LENGTH {
        return Err(CovTruthError::DegenerateBaseline);
    }
    Ok(x_g + base * ((x_gt - x_g).dot(&base) / len2))
}

/// `|x_opt − x_l| / |x_g − x_opt|`.
pub fn distance_ratio(x_opt: &Vector3<f64>, x_g: &Vector3<f64>, x_l: &Vector3<f64>) -> Result<f64, CovTruthError> {
    let to_gnss = (x_g - x_opt).norm();
    if to_gnss <= DEGENERATE_LENGTH {
        return Err(CovTruthError::OptAtGnss);
    }
    Ok((x_opt - x_l).norm() / to_gnss)
}

/// GNSS covariance scaled by the distance ratio.
pub fn cov_truth(
    x_opt: &Vector3<f64>,
    x_g: &Vector3<f64>,
    x_l: &Vector3<f64>,
    cov_g: &CovMatrix3,
) -> Result<CovMatrix3, CovTruthError> {
    Ok(cov_g.scaled(distance_ratio(x_opt, x_g, x_l)?))
}

/// Weight on the LiDAR position, `tr(cov_g) / (tr(cov_l) + tr(cov_g))`.
pub fn weighted_fusion_lambda(cov_l: &CovMatrix3, cov_g: &CovMatrix3) -> Result<f64, CovTruthError> {
    let (tl, tg) = (cov_l.trace(), cov_g.trace());
    if tl + tg <= 0.0 {
        return Err(CovTruthError::ZeroCovariance);
    }
    Ok(tg / (tl + tg))
}

/// `λ·x_l + (1 − λ)·x_g`.
pub fn fuse_with_lambda(x_g: &Vector3<f64>, x_l: &Vector3<f64>, lambda: f64) -> Vector3<f64> {
    x_g + (x_l - x_g) * lambda
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovTruthSample {
    pub epoch: f64,
    pub x_gt: Vector3<f64>,
    pub x_g: Vector3<f64>,
    pub x_l: Vector3<f64>,
    pub x_opt: Vector3<f64>,
    pub cov_l_truth: CovMatrix3,
    pub ratio: f64,
    /// `|x_gt − x_opt|`, large when the errors are far from collinear.
    pub perpendicular: f64,
}

/// One epoch of inputs for [`build_samples`].
#[derive(Debug, Clone, PartialEq)]
pub struct CovTruthInput {
    pub epoch: f64,
    pub x_gt: Vector3<f64>,
    pub x_g: Vector3<f64>,
    pub x_l: Vector3<f64>,
    pub cov_g: CovMatrix3,
}

/// Builds a sample per epoch, skipping degenerate ones. Returns the samples
/// and the number skipped.
pub fn build_samples(inputs: &[CovTruthInput]) -> (Vec<CovTruthSample>, usize) {
    let mut samples = Vec::with_capacity(inputs.len());
    let mut skipped = 0;
    for inp in inputs {
        let sample = project_opt(&inp.x_gt, &inp.x_g, &inp.x_l).and_then(|x_opt| {
            let ratio = distance_ratio(&x_opt, &inp.x_g, &inp.x_l)?;
            Ok(CovTruthSample {
                epoch: inp.epoch,
                x_gt: inp.x_gt,
                x_g: inp.x_g,
                x_l: inp.x_l,
                x_opt,
                cov_l_truth: inp.cov_g.scaled(ratio),
                ratio,
                perpendicular: (inp.x_gt - x_opt).norm(),
            })
        });
        match sample {
            Ok(s) => samples.push(s),
            Err(_) => skipped += 1,
        }
    }
    if skipped > 0 {
        log::info!("covariance truth: skipped {skipped} degenerate epochs");
    }
    (samples, skipped)
}

/// Component labels in table order.
pub const COMPONENTS: [&str; 6] = ["X", "Y", "Z", "XY", "YZ", "ZX"];

/// Mean and population std of `|estimate − truth|` per covariance component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifferenceTable {
    pub mean: [f64; 6],
    pub std: [f64; 6],
    pub count: usize,
}

fn components(c: &CovMatrix3) -> [f64; 6] {
    let m = &c.matrix;
    [m[(0, 0)], m[(1, 1)], m[(2, 2)], m[(0, 1)], m[(1, 2)], m[(2, 0)]]
}

/// Compares estimated covariances with the truth samples, epoch by epoch.
///
/// Estimates in a frame other than the samples' are rotated with `to_truth`
/// first.
pub fn evaluate_cov_estimates(
    samples: &[CovTruthSample],
    estimates: &[(f64, CovMatrix3)],
    to_truth: Option<&Pose>,
) -> Result<DifferenceTable, CovTruthError> {
    if samples.len() != estimates.len() {
        return Err(CovTruthError::EpochMismatch(format!("{} samples vs {} estimates", samples.len(), estimates.len())));
    }
    if samples.is_empty() {
        return Err(CovTruthError::EpochMismatch("no samples".into()));
    }
    let mut diffs = Vec::with_capacity(samples.len());
    for (s, (t, est)) in samples.iter().zip(estimates) {
        if (s.epoch - t).abs() > 1e-6 {
            return Err(CovTruthError::EpochMismatch(format!("sample at {} vs estimate at {}", s.epoch, t)));
        }
        let est = if est.frame == s.cov_l_truth.frame {
            *est
        } else {
            let pose = to_truth.ok_or(GeodesyError::FrameMismatch { expected: s.cov_l_truth.frame, actual: est.frame })?;
            transform_cov(est, pose)?
        };
        let (a, b) = (components(&est), components(&s.cov_l_truth));
        diffs.push(std::array::from_fn::<f64, 6, _>(|k| (a[k] - b[k]).abs()));
    }
    let n = diffs.len() as f64;
    let mean: [f64; 6] = std::array::from_fn(|k| diffs.iter().map(|d| d[k]).sum::<f64>() / n);
    let std = std::array::from_fn(|k| (diffs.iter().map(|d| (d[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt());
    Ok(DifferenceTable { mean, std, count: diffs.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::FrameTag;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;
    use proptest::prelude::*;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    #[test]
    fn hand_example() {
        let (g, l, gt) = (v(0.0, 0.0, 0.0), v(2.0, 0.0, 0.0), v(0.5, 3.0, 0.0));
        let opt = project_opt(&gt, &g, &l).unwrap();
        assert_eq!(opt, v(0.5, 0.0, 0.0));
        let cov = cov_truth(&opt, &g, &l, &CovMatrix3::isotropic(1.0, FrameTag::Enu)).unwrap();
        assert_eq!(cov.matrix, Matrix3::identity() * 3.0);
    }

    #[test]
    fn projection_edge_cases() {
        let (g, l) = (v(1.0, 1.0, 1.0), v(4.0, 5.0, 1.0));
        let on_line = v(2.5, 3.0, 1.0);
        assert_relative_eq!(project_opt(&on_line, &g, &l).unwrap(), on_line, epsilon = 1e-12);
        assert_eq!(project_opt(&on_line, &g, &g), Err(CovTruthError::DegenerateBaseline));
        let cov = CovMatrix3::isotropic(2.0, FrameTag::Enu);
        assert_eq!(cov_truth(&g, &g, &l, &cov), Err(CovTruthError::OptAtGnss));
        let mid = (g + l) * 0.5;
        assert_relative_eq!(cov_truth(&mid, &g, &l, &cov).unwrap().matrix, cov.matrix, epsilon = 1e-12);
        assert_eq!(cov_truth(&l, &g, &l, &cov).unwrap().matrix, Matrix3::zeros());
    }

    #[test]
    fn lambda_examples() {
        let g = CovMatrix3::new(Matrix3::from_diagonal(&v(1.0, 2.0, 0.5)), FrameTag::Enu);
        assert_eq!(weighted_fusion_lambda(&g, &g).unwrap(), 0.5);
        assert_relative_eq!(weighted_fusion_lambda(&g.scaled(3.0), &g).unwrap(), 0.25, epsilon = 1e-15);
        let zero = CovMatrix3::zeros(FrameTag::Enu);
        assert_eq!(weighted_fusion_lambda(&zero, &zero), Err(CovTruthError::ZeroCovariance));

        // λ minimizes λ²a + (1−λ)²b
        let (a, b) = (g.scaled(1.7).trace(), g.trace());
        let lambda = weighted_fusion_lambda(&g.scaled(1.7), &g).unwrap();
        let f = |x: f64| x * x * a + (1.0 - x) * (1.0 - x) * b;
        let best = (0..=1_000_000).map(|i| i as f64 * 1e-6).min_by(|x, y| f(*x).total_cmp(&f(*y))).unwrap();
        assert!((best - lambda).abs() <= 1e-6);
    }

    #[test]
    fn chain_reproduces_projection() {
        let (g, l) = (v(3.0, -1.0, 2.0), v(-2.0, 4.0, 0.5));
        let cov_g = CovMatrix3::new(Matrix3::new(2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 0.7), FrameTag::Enu);
        for k in 1..10 {
            let opt = g + (l - g) * (k as f64 / 10.0);
            let cov_l = cov_truth(&opt, &g, &l, &cov_g).unwrap();
            let lambda = weighted_fusion_lambda(&cov_l, &cov_g).unwrap();
            assert!((fuse_with_lambda(&g, &l, lambda) - opt).norm() < 1e-9);
        }
    }

    #[test]
    fn build_skips_degenerate() {
        let cov_g = CovMatrix3::isotropic(1.0, FrameTag::Enu);
        let inputs = vec![
            CovTruthInput { epoch: 0.0, x_gt: v(0.5, 3.0, 0.0), x_g: v(0.0, 0.0, 0.0), x_l: v(2.0, 0.0, 0.0), cov_g },
            CovTruthInput { epoch: 1.0, x_gt: v(0.5, 3.0, 0.0), x_g: v(1.0, 0.0, 0.0), x_l: v(1.0, 0.0, 0.0), cov_g },
            CovTruthInput { epoch: 2.0, x_gt: v(0.0, 3.0, 0.0), x_g: v(0.0, 0.0, 0.0), x_l: v(2.0, 0.0, 0.0), cov_g },
        ];
        let (samples, skipped) = build_samples(&inputs);
        assert_eq!(skipped, 2);
        assert_eq!(samples.len(), 1);
        assert_relative_eq!(samples[0].ratio, 3.0);
        assert_relative_eq!(samples[0].perpendicular, 3.0);
    }

    #[test]
    fn difference_table() {
        let cov_g = CovMatrix3::new(Matrix3::new(2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 0.7), FrameTag::Enu);
        let inputs: Vec<CovTruthInput> = (0..5)
            .map(|k| CovTruthInput {
                epoch: k as f64,
                x_gt: v(0.5, 1.0 + k as f64, 0.0),
                x_g: v(0.0, 0.0, 0.0),
                x_l: v(2.0, 0.0, 0.0),
                cov_g,
            })
            .collect();
        let (samples, _) = build_samples(&inputs);
        let exact: Vec<_> = samples.iter().map(|s| (s.epoch, s.cov_l_truth)).collect();
        let t = evaluate_cov_estimates(&samples, &exact, None).unwrap();
        assert_eq!(t.mean, [0.0; 6]);
        assert_eq!(t.std, [0.0; 6]);

        let c = 0.25;
        let shifted: Vec<_> = samples
            .iter()
            .map(|s| (s.epoch, CovMatrix3::new(s.cov_l_truth.matrix.add_scalar(c), FrameTag::Enu)))
            .collect();
        let t = evaluate_cov_estimates(&samples, &shifted, None).unwrap();
        for k in 0..6 {
            assert_relative_eq!(t.mean[k], c, epsilon = 1e-12);
            assert!(t.std[k] < 1e-12);
        }

        assert!(matches!(evaluate_cov_estimates(&samples, &exact[..4], None), Err(CovTruthError::EpochMismatch(_))));
        let lidar: Vec<_> = exact.iter().map(|(t, c)| (*t, CovMatrix3::new(c.matrix, FrameTag::Lidar))).collect();
        assert!(matches!(evaluate_cov_estimates(&samples, &lidar, None), Err(CovTruthError::Frame(_))));
        let pose = Pose::identity(FrameTag::Lidar, FrameTag::Enu);
        let t = evaluate_cov_estimates(&samples, &lidar, Some(&pose)).unwrap();
        assert!(t.mean.iter().all(|m| m.abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn projection_is_perpendicular(
            gt in prop::array::uniform3(-50.0f64..50.0),
            g in prop::array::uniform3(-50.0f64..50.0),
            l in prop::array::uniform3(-50.0f64..50.0),
            shift in prop::array::uniform3(-100.0f64..100.0),
        ) {
            let (gt, g, l, shift) = (Vector3::from(gt), Vector3::from(g), Vector3::from(l), Vector3::from(shift));
            prop_assume!((l - g).norm() > 1e-3);
            let opt = project_opt(&gt, &g, &l).unwrap();
            prop_assert!((gt - opt).dot(&(l - g).normalize()).abs() <= 1e-10);
            let moved = project_opt(&(gt + shift), &(g + shift), &(l + shift)).unwrap();
            prop_assert!((moved - opt - shift).norm() < 1e-9);
        }

        #[test]
        fn cov_truth_is_homogeneous(k in 0.01f64..100.0, t in 0.05f64..0.95) {
            let (g, l) = (Vector3::new(0.0, 1.0, 2.0), Vector3::new(5.0, -1.0, 0.0));
            let opt = g + (l - g) * t;
            let cov = CovMatrix3::new(Matrix3::new(2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 0.7), FrameTag::Enu);
            let base = cov_truth(&opt, &g, &l, &cov).unwrap();
            let scaled = cov_truth(&opt, &g, &l, &cov.scaled(k)).unwrap();
            prop_assert!((scaled.matrix - base.matrix * k).norm() <= 1e-12 * base.matrix.norm() * k);
        }
    }
}
