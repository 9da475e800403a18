use nalgebra::{Matrix3, SMatrix, Vector3, Vector6};

use super::{FusionError, FusionState, GnssFactor, LidarPriorFactor, NodePose};
use crate::so3::{hat, log, right_jacobian_inv};

pub type Matrix6x3 = SMatrix<f64, 6, 3>;

/// Antenna position in ENU predicted from the alignment, lever arm and one
/// node pose.
pub fn predicted_antenna(state: &FusionState, node: &NodePose) -> Vector3<f64> {
    state.rot_n_to_m.transpose() * (node.rotation * state.lever_arm + node.translation - state.t_n_to_m)
}

/// `R_M^N (R_L^M P + t_L^M − t_N^M) − P_G^N`.
pub fn residual_gnss(state: &FusionState, f: &GnssFactor) -> Vector3<f64> {
    predicted_antenna(state, &state.nodes[f.node]) - f.p_g_n
}

/// Blocks of `∂r₁` with respect to each perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnssJacobian {
    pub d_theta_nm: Matrix3<f64>,
    pub d_t_nm: Matrix3<f64>,
    pub d_theta_l: Matrix3<f64>,
    pub d_t_l: Matrix3<f64>,
    pub d_lever: Matrix3<f64>,
}

pub fn gnss_jacobian(state: &FusionState, f: &GnssFactor) -> GnssJacobian {
    let node = &state.nodes[f.node];
    let r_mn = state.rot_n_to_m.transpose();
    let arm = node.rotation * state.lever_arm;
    let q = arm + node.translation - state.t_n_to_m;
    GnssJacobian {
        d_theta_nm: r_mn * hat(&q),
        d_t_nm: -r_mn,
        d_theta_l: -r_mn * hat(&arm),
        d_t_l: r_mn,
        d_lever: r_mn * node.rotation,
    }
}

/// `[R_iᵀ (t_j − t_i) − t_meas; Log(R_measᵀ R_iᵀ R_j)]`.
pub fn residual_lidar_prior(node_i: &NodePose, node_j: &NodePose, f: &LidarPriorFactor) -> Result<Vector6<f64>, FusionError> {
    let rt = node_i.rotation.transpose() * (node_j.translation - node_i.translation) - f.translation;
    let rr = log(&(f.rotation.transpose() * node_i.rotation.transpose() * node_j.rotation))?;
    Ok(Vector6::new(rt.x, rt.y, rt.z, rr.x, rr.y, rr.z))
}

/// Blocks of `∂r₂` with respect to both node perturbations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarJacobian {
    pub d_theta_i: Matrix6x3,
    pub d_t_i: Matrix6x3,
    pub d_theta_j: Matrix6x3,
    pub d_t_j: Matrix6x3,
}

pub fn lidar_prior_jacobian(node_i: &NodePose, node_j: &NodePose, f: &LidarPriorFactor) -> Result<LidarJacobian, FusionError> {
    let ri_t = node_i.rotation.transpose();
    let d = node_j.translation - node_i.translation;
    let rr = log(&(f.rotation.transpose() * ri_t * node_j.rotation))?;
    let rot_block = right_jacobian_inv(&rr) * node_j.rotation.transpose();

    let mut jac = LidarJacobian {
        d_theta_i: Matrix6x3::zeros(),
        d_t_i: Matrix6x3::zeros(),
        d_theta_j: Matrix6x3::zeros(),
        d_t_j: Matrix6x3::zeros(),
    };
    jac.d_theta_i.fixed_view_mut::<3, 3>(0, 0).copy_from(&(ri_t * hat(&d)));
    jac.d_theta_i.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-rot_block));
    jac.d_t_i.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-ri_t));
    jac.d_theta_j.fixed_view_mut::<3, 3>(3, 0).copy_from(&rot_block);
    jac.d_t_j.fixed_view_mut::<3, 3>(0, 0).copy_from(&ri_t);
    Ok(jac)
}

/// Jacobian of one factor, tagged by kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FactorJacobian {
    Gnss(GnssJacobian),
    Lidar(LidarJacobian),
}

/// Analytic Jacobians of every factor at `state`, GNSS factors first.
pub fn jacobians(
    state: &FusionState,
    gnss: &[GnssFactor],
    lidar: &[LidarPriorFactor],
) -> Result<Vec<FactorJacobian>, FusionError> {
    let mut out: Vec<FactorJacobian> = gnss.iter().map(|f| FactorJacobian::Gnss(gnss_jacobian(state, f))).collect();
    for f in lidar {
        out.push(FactorJacobian::Lidar(lidar_prior_jacobian(&state.nodes[f.from], &state.nodes[f.to], f)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::{CovMatrix3, FrameTag};
    use crate::so3;
    use approx::assert_relative_eq;
    use nalgebra::Matrix6;

    fn node(rv: [f64; 3], t: [f64; 3]) -> NodePose {
        NodePose { time: 0.0, rotation: so3::exp(&Vector3::from(rv)), translation: Vector3::from(t) }
    }

    #[test]
    fn gnss_residual_examples() {
        let mut state = FusionState {
            rot_n_to_m: Matrix3::identity(),
            t_n_to_m: Vector3::zeros(),
            lever_arm: Vector3::zeros(),
            nodes: vec![node([0.1, 0.2, 0.3], [4.0, 5.0, 6.0])],
        };
        let f = GnssFactor { node: 0, epoch: 0.0, p_g_n: Vector3::new(4.0, 5.0, 6.0), cov: CovMatrix3::isotropic(1.0, FrameTag::Enu) };
        assert_eq!(residual_gnss(&state, &f), Vector3::zeros());
        state.nodes[0].translation += Vector3::new(0.5, -1.0, 2.0);
        assert_eq!(residual_gnss(&state, &f), Vector3::new(0.5, -1.0, 2.0));

        // zero lever arm zeroes the node-rotation block
        let jac = gnss_jacobian(&state, &f);
        assert_eq!(jac.d_theta_l, Matrix3::zeros());
    }

    #[test]
    fn lidar_residual_examples() {
        let ni = node([0.0, 0.0, 0.4], [1.0, 2.0, 0.0]);
        let nj = node([0.0, 0.0, 0.6], [3.0, 1.0, 0.5]);
        let f = LidarPriorFactor {
            from: 0,
            to: 1,
            rotation: ni.rotation.transpose() * nj.rotation,
            translation: ni.rotation.transpose() * (nj.translation - ni.translation),
            cov: Matrix6::identity(),
        };
        assert!(residual_lidar_prior(&ni, &nj, &f).unwrap().norm() < 1e-12);

        let d = Vector3::new(0.3, -0.2, 0.1);
        let moved = NodePose { translation: nj.translation + d, ..nj };
        let r = residual_lidar_prior(&ni, &moved, &f).unwrap();
        assert_relative_eq!(r.fixed_rows::<3>(0).into_owned(), ni.rotation.transpose() * d, epsilon = 1e-12);
        assert!(r.fixed_rows::<3>(3).norm() < 1e-12);

        let yawed = NodePose { rotation: nj.rotation * so3::rot_z(10f64.to_radians()), ..nj };
        let r = residual_lidar_prior(&ni, &yawed, &f).unwrap();
        assert!((r.fixed_rows::<3>(3).norm() - 10f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn from_relative_maps_covariance() {
        let rot = so3::exp(&Vector3::new(0.0, 0.0, 0.7));
        let mut joint = Matrix6::zeros();
        joint.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::from_diagonal(&Vector3::new(1e-6, 2e-6, 3e-6)));
        joint.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * 1e-4));
        let f = LidarPriorFactor::from_relative(0, 1, rot, Vector3::zeros(), &joint);
        assert_relative_eq!(f.cov.fixed_view::<3, 3>(0, 0).into_owned(), Matrix3::identity() * 1e-4, epsilon = 1e-18);
        let expect = rot.transpose() * Matrix3::from_diagonal(&Vector3::new(1e-6, 2e-6, 3e-6)) * rot;
        assert_relative_eq!(f.cov.fixed_view::<3, 3>(3, 3).into_owned(), expect, epsilon = 1e-18);
    }

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 1e-7;

    fn rand_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
        Vector3::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale))
    }

    fn random_state(rng: &mut ChaCha8Rng) -> FusionState {
        let node = |rng: &mut ChaCha8Rng| NodePose {
            time: 0.0,
            rotation: so3::exp(&rand_vec(rng, 1.5)),
            translation: rand_vec(rng, 50.0),
        };
        FusionState {
            rot_n_to_m: so3::exp(&rand_vec(rng, 1.5)),
            t_n_to_m: rand_vec(rng, 50.0),
            lever_arm: rand_vec(rng, 2.0),
            nodes: vec![node(rng), node(rng)],
        }
    }

    /// Relative error of an analytic block against central differences of
    /// `f` along the unit perturbations.
    fn fd_check<const R: usize>(
        analytic: &SMatrix<f64, R, 3>,
        mut f: impl FnMut(&Vector3<f64>) -> SMatrix<f64, R, 1>,
    ) -> f64 {
        let mut fd = SMatrix::<f64, R, 3>::zeros();
        for k in 0..3 {
            let mut e = Vector3::zeros();
            e[k] = H;
            fd.set_column(k, &((f(&e) - f(&-e)) / (2.0 * H)));
        }
        (analytic - fd).norm() / fd.norm()
    }

    #[test]
    fn gnss_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let s = random_state(&mut rng);
            let f = GnssFactor { node: 1, epoch: 0.0, p_g_n: rand_vec(&mut rng, 50.0), cov: CovMatrix3::isotropic(1.0, FrameTag::Enu) };
            let jac = gnss_jacobian(&s, &f);
            let errs = [
                fd_check(&jac.d_theta_nm, |d| {
                    let mut p = s.clone();
                    p.rot_n_to_m = so3::exp(d) * s.rot_n_to_m;
                    residual_gnss(&p, &f)
                }),
                fd_check(&jac.d_t_nm, |d| {
                    let mut p = s.clone();
                    p.t_n_to_m += d;
                    residual_gnss(&p, &f)
                }),
                fd_check(&jac.d_theta_l, |d| {
                    let mut p = s.clone();
                    p.nodes[1].rotation = so3::exp(d) * s.nodes[1].rotation;
                    residual_gnss(&p, &f)
                }),
                fd_check(&jac.d_t_l, |d| {
                    let mut p = s.clone();
                    p.nodes[1].translation += d;
                    residual_gnss(&p, &f)
                }),
                fd_check(&jac.d_lever, |d| {
                    let mut p = s.clone();
                    p.lever_arm += d;
                    residual_gnss(&p, &f)
                }),
            ];
            assert!(errs.iter().all(|&e| e < 1e-5), "{errs:?}");
            // the other node's pose does not enter
            let mut p = s.clone();
            p.nodes[0] = p.nodes[0].perturbed(&Vector3::new(0.1, 0.2, 0.3), &Vector3::new(1.0, 2.0, 3.0));
            assert_eq!(residual_gnss(&p, &f), residual_gnss(&s, &f));
        }
    }

    #[test]
    fn lidar_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let s = random_state(&mut rng);
            let (ni, nj) = (s.nodes[0], s.nodes[1]);
            // measurement near the states so the log stays far from π
            let meas_r = ni.rotation.transpose() * nj.rotation * so3::exp(&rand_vec(&mut rng, 0.3));
            let f = LidarPriorFactor {
                from: 0,
                to: 1,
                rotation: meas_r,
                translation: rand_vec(&mut rng, 20.0),
                cov: Matrix6::identity(),
            };
            let jac = lidar_prior_jacobian(&ni, &nj, &f).unwrap();
            let r = |a: &NodePose, b: &NodePose| residual_lidar_prior(a, b, &f).unwrap();
            let errs = [
                fd_check(&jac.d_theta_i, |d| r(&NodePose { rotation: so3::exp(d) * ni.rotation, ..ni }, &nj)),
                fd_check(&jac.d_t_i, |d| r(&NodePose { translation: ni.translation + d, ..ni }, &nj)),
                fd_check(&jac.d_theta_j, |d| r(&ni, &NodePose { rotation: so3::exp(d) * nj.rotation, ..nj })),
                fd_check(&jac.d_t_j, |d| r(&ni, &NodePose { translation: nj.translation + d, ..nj })),
            ];
            assert!(errs.iter().all(|&e| e < 1e-5), "{errs:?}");
        }
    }

    proptest! {
        #[test]
        fn residuals_vanish_on_consistent_inputs(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_state(&mut rng);
            let f = GnssFactor { node: 0, epoch: 0.0, p_g_n: predicted_antenna(&s, &s.nodes[0]), cov: CovMatrix3::isotropic(1.0, FrameTag::Enu) };
            prop_assert!(residual_gnss(&s, &f).norm() < 1e-12);
            let (ni, nj) = (s.nodes[0], s.nodes[1]);
            let g = LidarPriorFactor {
                from: 0,
                to: 1,
                rotation: ni.rotation.transpose() * nj.rotation,
                translation: ni.rotation.transpose() * (nj.translation - ni.translation),
                cov: Matrix6::identity(),
            };
            prop_assert!(residual_lidar_prior(&ni, &nj, &g).unwrap().norm() < 1e-12);
        }
    }
}
