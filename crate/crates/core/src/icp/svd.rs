use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use super::IcpError;

/// Relative singular-value separation required by [`svd_jacobian`].
pub const SEPARATION_TOLERANCE: f64 = 1e-8;

/// `W = U · diag(d) · Vᵀ` with `d` sorted in descending order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvdTriple {
    pub u: Matrix3<f64>,
    pub d: Vector3<f64>,
    pub v: Matrix3<f64>,
}

impl SvdTriple {
    pub fn reconstruct(&self) -> Matrix3<f64> {
        self.u * Matrix3::from_diagonal(&self.d) * self.v.transpose()
    }
}

/// Singular value decomposition of a 3×3 matrix, singular values descending.
///
/// Each column of `V` is sign-normalized so that its largest-magnitude entry
/// is positive; the matching column of `U` follows from `W v = d u`.
pub fn svd3(w: &Matrix3<f64>) -> SvdTriple {
    let svd = w.svd(true, true);
    let u0 = svd.u.expect("requested U");
    let v0 = svd.v_t.expect("requested V^T").transpose();
    let s0 = svd.singular_values;

    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s0[b].total_cmp(&s0[a]));

    let mut u = Matrix3::zeros();
    let mut v = Matrix3::zeros();
    let mut d = Vector3::zeros();
    for (k, &src) in order.iter().enumerate() {
        let mut uc = u0.column(src).into_owned();
        let mut vc = v0.column(src).into_owned();
        let pivot = vc.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
        if pivot < 0.0 {
            uc = -uc;
            vc = -vc;
        }
        u.set_column(k, &uc);
        v.set_column(k, &vc);
        d[k] = s0[src];
    }
    SvdTriple { u, d, v }
}

/// Derivatives of `U`, `D` and `V` with respect to each entry `W_ij`.
///
/// Indexing is `[i][j]`. The antisymmetric `Ω_U^{ij}`, `Ω_V^{ij}` satisfy
/// `∂U/∂W_ij = U Ω_U^{ij}` and `∂V/∂W_ij = -V Ω_V^{ij}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdJacobian {
    pub d_u: [[Matrix3<f64>; 3]; 3],
    pub d_d: [[Vector3<f64>; 3]; 3],
    pub d_v: [[Matrix3<f64>; 3]; 3],
    pub omega_u: [[Matrix3<f64>; 3]; 3],
    pub omega_v: [[Matrix3<f64>; 3]; 3],
}

/// Analytic SVD Jacobian.
///
/// For every pair `k ≠ l` the entries of `Ω_U`, `Ω_V` solve
///
/// ```text
/// D_ll Ω_U[k,l] + D_kk Ω_V[k,l] =  U_ik V_jl
/// D_kk Ω_U[k,l] + D_ll Ω_V[k,l] = -U_il V_jk
/// ```
///
/// which is singular when `D_kk = D_ll`. Pairs closer than
/// `SEPARATION_TOLERANCE · D_max` are rejected rather than regularized.
pub fn svd_jacobian(t: &SvdTriple) -> Result<SvdJacobian, IcpError> {
    let d = &t.d;
    let tolerance = SEPARATION_TOLERANCE * d[0].abs().max(f64::MIN_POSITIVE);
    for (k, l) in [(0, 1), (0, 2), (1, 2)] {
        let gap = (d[k] - d[l]).abs();
        if gap <= tolerance {
            return Err(IcpError::RepeatedSingularValues { gap, tolerance });
        }
    }

    let (u, v) = (&t.u, &t.v);
    let zero3 = [[Matrix3::zeros(); 3]; 3];
    let mut jac = SvdJacobian {
        d_u: zero3,
        d_d: [[Vector3::zeros(); 3]; 3],
        d_v: zero3,
        omega_u: zero3,
        omega_v: zero3,
    };

    for i in 0..3 {
        for j in 0..3 {
            let mut om_u = Matrix3::zeros();
            let mut om_v = Matrix3::zeros();
            for k in 0..3 {
                jac.d_d[i][j][k] = u[(i, k)] * v[(j, k)];
                for l in (k + 1)..3 {
                    let system = Matrix2::new(d[l], d[k], d[k], d[l]);
                    let rhs = Vector2::new(u[(i, k)] * v[(j, l)], -u[(i, l)] * v[(j, k)]);
                    // determinant d_l² - d_k² is bounded away from zero above
                    let sol = system.lu().solve(&rhs).ok_or(IcpError::RepeatedSingularValues {
                        gap: (d[k] - d[l]).abs(),
                        tolerance,
                    })?;
                    om_u[(k, l)] = sol[0];
                    om_u[(l, k)] = -sol[0];
                    om_v[(k, l)] = sol[1];
                    om_v[(l, k)] = -sol[1];
                }
            }
            jac.d_u[i][j] = u * om_u;
            jac.d_v[i][j] = -(v * om_v);
            jac.omega_u[i][j] = om_u;
            jac.omega_v[i][j] = om_v;
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_and_diagonal() {
        let s = svd3(&Matrix3::identity());
        assert_relative_eq!(s.d, Vector3::new(1.0, 1.0, 1.0), epsilon = 1e-14);
        assert_relative_eq!(s.u * s.v.transpose(), Matrix3::identity(), epsilon = 1e-14);

        let s = svd3(&Matrix3::from_diagonal(&Vector3::new(3.0, 2.0, 1.0)));
        assert_relative_eq!(s.d, Vector3::new(3.0, 2.0, 1.0), epsilon = 1e-14);

        // unsorted input is returned sorted
        let s = svd3(&Matrix3::from_diagonal(&Vector3::new(1.0, 5.0, 2.0)));
        assert_relative_eq!(s.d, Vector3::new(5.0, 2.0, 1.0), epsilon = 1e-14);
    }

    #[test]
    fn random_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let w = random_matrix(&mut rng) * 10.0;
            let s = svd3(&w);
            assert!((s.reconstruct() - w).norm() < 1e-10);
            assert!(s.d[0] >= s.d[1] && s.d[1] >= s.d[2] && s.d[2] >= 0.0);
            assert!((s.u.transpose() * s.u - Matrix3::identity()).norm() < 1e-12);
            assert!((s.v.transpose() * s.v - Matrix3::identity()).norm() < 1e-12);
        }
    }

    #[test]
    fn diagonal_case_singular_value_derivatives() {
        let jac = svd_jacobian(&svd3(&Matrix3::from_diagonal(&Vector3::new(3.0, 2.0, 1.0)))).unwrap();
        assert_relative_eq!(jac.d_d[0][0][0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(jac.d_d[0][1][0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn omegas_are_antisymmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let jac = svd_jacobian(&svd3(&random_matrix(&mut rng))).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let ou = jac.omega_u[i][j];
                let ov = jac.omega_v[i][j];
                assert!((ou + ou.transpose()).norm() < 1e-12);
                assert!((ov + ov.transpose()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn repeated_singular_values_rejected() {
        let s = svd3(&Matrix3::from_diagonal(&Vector3::new(2.0, 2.0, 1.0)));
        assert!(matches!(svd_jacobian(&s), Err(IcpError::RepeatedSingularValues { .. })));
    }
}
