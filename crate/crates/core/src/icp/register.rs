use kiddo::immutable::float::kdtree::ImmutableKdTree;
use kiddo::SquaredEuclidean;
use nalgebra::{Matrix3, Vector3};

use super::covariance::propagate_cov;
use super::rigid::solve_rigid;
use super::{Correspondences, IcpError, RegistrationResult};
use crate::geodesy::{FrameTag, Pose};
use crate::pointcloud::CartPoint;
use crate::so3;

#[derive(Debug, Clone, PartialEq)]
pub struct IcpConfig {
    pub max_iter: usize,
    /// Stop once rotation change (rad) plus relative translation change fall
    /// below this value.
    pub tol: f64,
    /// Pairs farther apart than `gate_factor × median pair distance` are
    /// dropped each iteration.
    pub gate_factor: f64,
    /// Initial guess for the A→B transform.
    pub initial: Option<(Matrix3<f64>, Vector3<f64>)>,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self { max_iter: 50, tol: 1e-10, gate_factor: 3.0, initial: None }
    }
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IcpTrace {
    /// Mean distance over the kept pairs after each update.
    pub mean_residuals: Vec<f64>,
    pub converged: bool,
}

/// Point-to-point ICP: nearest-neighbour association around the closed-form
/// solve, followed by covariance propagation on the final correspondences.
pub fn icp_register(
    a: &[CartPoint],
    b: &[CartPoint],
    config: &IcpConfig,
) -> Result<(RegistrationResult, Correspondences, IcpTrace), IcpError> {
    if a.len() < 3 || b.len() < 3 {
        return Err(IcpError::Degenerate(format!("need at least 3 points per set ({} / {})", a.len(), b.len())));
    }
    let xa: Vec<Vector3<f64>> = a.iter().map(|p| p.xyz).collect();
    let xb: Vec<Vector3<f64>> = b.iter().map(|p| p.xyz).collect();
    let entries: Vec<[f64; 3]> = xb.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree: ImmutableKdTree<f64, u32, 3, 32> = ImmutableKdTree::new_from_slice(&entries);

    let (mut rot, mut trans) = config.initial.unwrap_or((Matrix3::identity(), Vector3::zeros()));
    let mut trace = IcpTrace::default();
    let mut best: Option<(f64, Pose, Correspondences)> = None;
    let mut seen: Vec<Correspondences> = Vec::new();

    for _ in 0..config.max_iter {
        let corr = associate(&xa, &xb, &tree, &rot, &trans, config.gate_factor)?;
        // a repeated pair set means the iteration has entered a cycle
        let cycled = seen.contains(&corr);
        let solution = solve_rigid(&xa, &xb, &corr)?;
        let new_rot = solution.pose.rotation;
        let new_trans = solution.pose.translation;

        let residual = mean_residual(&xa, &xb, &corr, &new_rot, &new_trans);
        trace.mean_residuals.push(residual);
        if best.as_ref().is_none_or(|(r, _, _)| residual <= *r) {
            best = Some((residual, solution.pose, corr.clone()));
        }

        let change = so3::angle_between(&rot, &new_rot) + (new_trans - trans).norm() / new_trans.norm().max(1.0);
        rot = new_rot;
        trans = new_trans;
        if change < config.tol || cycled {
            trace.converged = true;
            let pose = Pose { rotation: rot, translation: trans, from: FrameTag::Lidar, to: FrameTag::Lidar };
            let result = finish(a, b, &corr, pose)?;
            return Ok((result, corr, trace));
        }
        seen.push(corr);
    }

    let (_, pose, corr) = best.expect("at least one iteration ran");
    let result = finish(a, b, &corr, pose)?;
    Err(IcpError::NoConvergence { iterations: config.max_iter, best: Box::new((result, corr)) })
}

fn finish(a: &[CartPoint], b: &[CartPoint], corr: &Correspondences, pose: Pose) -> Result<RegistrationResult, IcpError> {
    let cov = propagate_cov(a, b, corr, &pose)?;
    Ok(RegistrationResult {
        pose,
        cov_rotation: cov.cov_rotation,
        cov_translation: cov.cov_translation,
        cov_joint: cov.cov_joint,
    })
}

fn associate(
    xa: &[Vector3<f64>],
    xb: &[Vector3<f64>],
    tree: &ImmutableKdTree<f64, u32, 3, 32>,
    rot: &Matrix3<f64>,
    trans: &Vector3<f64>,
    gate_factor: f64,
) -> Result<Correspondences, IcpError> {
    let mut candidates: Vec<(usize, usize, f64)> = xa
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let q = rot * p + trans;
            let nn = tree.nearest_one::<SquaredEuclidean>(&[q.x, q.y, q.z]);
            (i, nn.item as usize, nn.distance.sqrt())
        })
        .collect();
    let mut dists: Vec<f64> = candidates.iter().map(|c| c.2).collect();
    let mid = dists.len() / 2;
    let (_, median, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let gate = gate_factor * *median;
    candidates.retain(|c| c.2 <= gate);
    if candidates.len() < 3 {
        return Err(IcpError::Degenerate(format!("only {} pairs survive the association gate", candidates.len())));
    }
    Correspondences::new(candidates.into_iter().map(|(i, j, _)| (i, j)).collect(), xa.len(), xb.len())
}

fn mean_residual(
    xa: &[Vector3<f64>],
    xb: &[Vector3<f64>],
    corr: &Correspondences,
    rot: &Matrix3<f64>,
    trans: &Vector3<f64>,
) -> f64 {
    let sum: f64 = corr.pairs().iter().map(|&(i, j)| (xb[j] - (rot * xa[i] + trans)).norm()).sum();
    sum / corr.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Points on the faces of a few boxes, spaced on a 0.5 m grid.
    fn structured_cloud() -> Vec<Vector3<f64>> {
        let mut pts = Vec::new();
        for i in 0..10 {
            for k in 0..5 {
                let (u, h) = (i as f64 * 0.5, k as f64 * 0.5);
                pts.push(Vector3::new(u - 2.0, 6.0, h));
                pts.push(Vector3::new(5.0, u - 1.0, h + 0.25));
                pts.push(Vector3::new(-4.0, u + 0.3, h - 1.0));
                pts.push(Vector3::new(u * 0.8 - 3.0, -5.0, h * 1.2));
            }
        }
        for i in 0..5 {
            for j in 0..5 {
                pts.push(Vector3::new(i as f64 * 0.7 - 1.0, j as f64 * 0.7 - 1.5, -1.8));
            }
        }
        pts
    }

    #[test]
    fn shuffled_copy_registers_to_identity() {
        let pts = structured_cloud();
        let a: Vec<CartPoint> = pts.iter().map(|p| CartPoint::exact(*p)).collect();
        let mut b = a.clone();
        b.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
        let (res, _, trace) = icp_register(&a, &b, &IcpConfig::default()).unwrap();
        assert!(trace.converged);
        assert!((res.pose.rotation - Matrix3::identity()).norm() < 1e-9);
        assert!(res.pose.translation.norm() < 1e-9);
    }

    #[test]
    fn recovers_small_motion() {
        let pts = structured_cloud();
        assert!(pts.len() >= 200);
        let r = so3::exp(&(Vector3::new(0.2, 0.1, 1.0).normalize() * 1.5f64.to_radians()));
        let t = Vector3::new(0.06, -0.05, 0.06);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a: Vec<CartPoint> = pts.iter().map(|p| CartPoint::exact(*p)).collect();
        let b: Vec<CartPoint> = pts
            .iter()
            .map(|p| CartPoint::exact(r * p + t + Vector3::from_fn(|_, _| rng.random_range(-0.002..0.002))))
            .collect();
        let (res, _, trace) = icp_register(&a, &b, &IcpConfig::default()).unwrap();
        let angle = so3::angle_between(&res.pose.rotation, &r);
        assert!(angle.to_degrees() < 0.2, "angle error {} deg", angle.to_degrees());
        assert!((res.pose.translation - t).norm() < 0.005);
        for w in trace.mean_residuals.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", trace.mean_residuals);
        }
    }

    #[test]
    fn too_few_points() {
        let a = vec![CartPoint::exact(Vector3::zeros()); 2];
        assert!(matches!(icp_register(&a, &a, &IcpConfig::default()), Err(IcpError::Degenerate(_))));
    }
}
