use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};

use super::factors::{gnss_jacobian, lidar_prior_jacobian, residual_gnss, residual_lidar_prior};
use super::{FusionError, FusionState, GnssFactor, LidarPriorFactor, NodePose, MAX_LEVER_ARM};
use crate::so3;

/// Number of shared variables: alignment rotation, alignment translation,
/// lever arm.
const SHARED_DIM: usize = 9;
const NODE_DIM: usize = 6;
/// Relative eigenvalue below which the normal matrix counts as singular.
const RANK_TOLERANCE: f64 = 1e-12;
/// Largest damping before the optimizer declares a stall.
const MAX_LAMBDA: f64 = 1e16;

/// Gaussian prior on the lever arm.
#[derive(Debug, Clone, PartialEq)]
pub struct LeverArmPrior {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

/// Keeps the map frame's up axis near the ENU up axis (roll and pitch of
/// the alignment), with `sigma` in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelPrior {
    pub sigma: f64,
}

/// Linear prior left behind by marginalizing nodes, over the shared
/// variables and optionally one node.
///
/// Residual `A·δ + b` with `δ = [Log(R R₀ᵀ), t − t₀, P − P₀, Log(R_n R_n₀ᵀ), t_n − t_n₀]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalPrior {
    pub node: Option<usize>,
    pub rot0: Matrix3<f64>,
    pub t0: Vector3<f64>,
    pub lever0: Vector3<f64>,
    pub node0: Option<NodePose>,
    pub sqrt_info: DMatrix<f64>,
    pub offset: DVector<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FusionProblem {
    pub gnss: Vec<GnssFactor>,
    pub lidar: Vec<LidarPriorFactor>,
    pub lever_prior: Option<LeverArmPrior>,
    pub level_prior: Option<LevelPrior>,
    pub marginal: Option<MarginalPrior>,
    /// Nodes held at their initial values (gauge).
    pub fixed_nodes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub lambda0: f64,
    pub max_iter: usize,
    pub rel_cost_tol: f64,
    pub grad_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { lambda0: 1e-4, max_iter: 100, rel_cost_tol: 1e-9, grad_tol: 1e-8 }
    }
}

/// Column layout of the free variables.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    node_offsets: Vec<Option<usize>>,
    dim: usize,
}

impl Layout {
    fn new(n_nodes: usize, fixed: &[usize]) -> Self {
        let mut dim = SHARED_DIM;
        let node_offsets = (0..n_nodes)
            .map(|k| {
                if fixed.contains(&k) {
                    None
                } else {
                    dim += NODE_DIM;
                    Some(dim - NODE_DIM)
                }
            })
            .collect();
        Self { node_offsets, dim }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub state: FusionState,
    /// Final cost `½ Σ ‖r‖²` in whitened units.
    pub cost: f64,
    pub iterations: usize,
    /// Cost after the initial evaluation and after every accepted step.
    pub cost_history: Vec<f64>,
    /// Inverse normal matrix over the free variables.
    pub covariance: DMatrix<f64>,
    layout: Layout,
}

impl OptimizeResult {
    /// Joint covariance of the shared variables and one node, 15×15 with
    /// zero node blocks for a fixed node.
    pub fn shared_node_covariance(&self, node: usize) -> DMatrix<f64> {
        let mut idx: Vec<Option<usize>> = (0..SHARED_DIM).map(Some).collect();
        match self.layout.node_offsets.get(node).copied().flatten() {
            Some(off) => idx.extend((0..NODE_DIM).map(|k| Some(off + k))),
            None => idx.extend((0..NODE_DIM).map(|_| None)),
        }
        DMatrix::from_fn(idx.len(), idx.len(), |i, j| match (idx[i], idx[j]) {
            (Some(a), Some(b)) => self.covariance[(a, b)],
            _ => 0.0,
        })
    }
}

/// Covariance of the predicted antenna position at `node` in ENU.
pub fn antenna_covariance(result: &OptimizeResult, node: usize) -> Matrix3<f64> {
    let f = GnssFactor {
        node,
        epoch: 0.0,
        p_g_n: Vector3::zeros(),
        cov: crate::geodesy::CovMatrix3::zeros(crate::geodesy::FrameTag::Enu),
    };
    let jac = gnss_jacobian(&result.state, &f);
    let mut j = DMatrix::zeros(3, SHARED_DIM + NODE_DIM);
    for (k, block) in [jac.d_theta_nm, jac.d_t_nm, jac.d_lever, jac.d_theta_l, jac.d_t_l].iter().enumerate() {
        j.view_mut((0, 3 * k), (3, 3)).copy_from(block);
    }
    let c = &j * result.shared_node_covariance(node) * j.transpose();
    let m = Matrix3::from_fn(|r, s| c[(r, s)]);
    (m + m.transpose()) * 0.5
}

/// One whitened factor: residual and Jacobian blocks.
struct Term {
    r: DVector<f64>,
    shared: Option<DMatrix<f64>>,
    nodes: Vec<(usize, DMatrix<f64>)>,
}

impl Term {
    fn whitened(mut self, cov: &DMatrix<f64>) -> Result<Self, FusionError> {
        let l = cov.clone().cholesky().ok_or(FusionError::BadCovariance)?.l();
        let solve = |m: &DMatrix<f64>| l.solve_lower_triangular(m).ok_or(FusionError::BadCovariance);
        self.r = l.solve_lower_triangular(&self.r).ok_or(FusionError::BadCovariance)?;
        if let Some(s) = &self.shared {
            self.shared = Some(solve(s)?);
        }
        for (_, j) in self.nodes.iter_mut() {
            *j = solve(j)?;
        }
        Ok(self)
    }
}

fn dm3(m: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(3, 3, |i, j| m[(i, j)])
}

fn gnss_term(state: &FusionState, f: &GnssFactor) -> Result<Term, FusionError> {
    let r = residual_gnss(state, f);
    let jac = gnss_jacobian(state, f);
    let mut shared = DMatrix::zeros(3, SHARED_DIM);
    shared.view_mut((0, 0), (3, 3)).copy_from(&jac.d_theta_nm);
    shared.view_mut((0, 3), (3, 3)).copy_from(&jac.d_t_nm);
    shared.view_mut((0, 6), (3, 3)).copy_from(&jac.d_lever);
    let mut node = DMatrix::zeros(3, NODE_DIM);
    node.view_mut((0, 0), (3, 3)).copy_from(&jac.d_theta_l);
    node.view_mut((0, 3), (3, 3)).copy_from(&jac.d_t_l);
    Term { r: DVector::from_column_slice(r.as_slice()), shared: Some(shared), nodes: vec![(f.node, node)] }
        .whitened(&dm3(&f.cov.matrix))
}

fn lidar_term(state: &FusionState, f: &LidarPriorFactor) -> Result<Term, FusionError> {
    let (ni, nj) = (&state.nodes[f.from], &state.nodes[f.to]);
    let r = residual_lidar_prior(ni, nj, f)?;
    let jac = lidar_prior_jacobian(ni, nj, f)?;
    let mut bi = DMatrix::zeros(6, NODE_DIM);
    bi.view_mut((0, 0), (6, 3)).copy_from(&jac.d_theta_i);
    bi.view_mut((0, 3), (6, 3)).copy_from(&jac.d_t_i);
    let mut bj = DMatrix::zeros(6, NODE_DIM);
    bj.view_mut((0, 0), (6, 3)).copy_from(&jac.d_theta_j);
    bj.view_mut((0, 3), (6, 3)).copy_from(&jac.d_t_j);
    let cov = DMatrix::from_fn(6, 6, |i, j| f.cov[(i, j)]);
    Term { r: DVector::from_column_slice(r.as_slice()), shared: None, nodes: vec![(f.from, bi), (f.to, bj)] }.whitened(&cov)
}

fn lever_term(state: &FusionState, p: &LeverArmPrior) -> Result<Term, FusionError> {
    let r = state.lever_arm - p.mean;
    let mut shared = DMatrix::zeros(3, SHARED_DIM);
    shared.view_mut((0, 6), (3, 3)).fill_with_identity();
    Term { r: DVector::from_column_slice(r.as_slice()), shared: Some(shared), nodes: vec![] }.whitened(&dm3(&p.cov))
}

fn level_term(state: &FusionState, p: &LevelPrior) -> Term {
    let up = state.rot_n_to_m * Vector3::z();
    let d = -so3::hat(&up) / p.sigma;
    let mut shared = DMatrix::zeros(2, SHARED_DIM);
    shared.view_mut((0, 0), (2, 3)).copy_from(&d.fixed_view::<2, 3>(0, 0));
    Term { r: DVector::from_vec(vec![up.x / p.sigma, up.y / p.sigma]), shared: Some(shared), nodes: vec![] }
}

fn marginal_term(state: &FusionState, m: &MarginalPrior) -> Result<Term, FusionError> {
    let dim = SHARED_DIM + if m.node.is_some() { NODE_DIM } else { 0 };
    let mut delta = DVector::zeros(dim);
    let mut local = DMatrix::identity(dim, dim);
    let phi = so3::log(&(state.rot_n_to_m * m.rot0.transpose()))?;
    delta.rows_mut(0, 3).copy_from(&phi);
    delta.rows_mut(3, 3).copy_from(&(state.t_n_to_m - m.t0));
    delta.rows_mut(6, 3).copy_from(&(state.lever_arm - m.lever0));
    local.view_mut((0, 0), (3, 3)).copy_from(&so3::left_jacobian_inv(&phi));
    if let (Some(k), Some(n0)) = (m.node, &m.node0) {
        let node = &state.nodes[k];
        let phi_n = so3::log(&(node.rotation * n0.rotation.transpose()))?;
        delta.rows_mut(9, 3).copy_from(&phi_n);
        delta.rows_mut(12, 3).copy_from(&(node.translation - n0.translation));
        local.view_mut((9, 9), (3, 3)).copy_from(&so3::left_jacobian_inv(&phi_n));
    }
    let r = &m.sqrt_info * delta + &m.offset;
    let j = &m.sqrt_info * local;
    let shared = j.columns(0, SHARED_DIM).into_owned();
    let nodes = match m.node {
        Some(k) => vec![(k, j.columns(SHARED_DIM, NODE_DIM).into_owned())],
        None => vec![],
    };
    Ok(Term { r, shared: Some(shared), nodes })
}

fn all_terms(problem: &FusionProblem, state: &FusionState) -> Result<Vec<Term>, FusionError> {
    let mut terms = Vec::with_capacity(problem.gnss.len() + problem.lidar.len() + 3);
    for f in &problem.gnss {
        terms.push(gnss_term(state, f)?);
    }
    for f in &problem.lidar {
        terms.push(lidar_term(state, f)?);
    }
    if let Some(p) = &problem.lever_prior {
        terms.push(lever_term(state, p)?);
    }
    if let Some(p) = &problem.level_prior {
        terms.push(level_term(state, p));
    }
    if let Some(m) = &problem.marginal {
        terms.push(marginal_term(state, m)?);
    }
    Ok(terms)
}

/// Normal matrix, gradient and cost over the free variables.
fn accumulate(terms: &[Term], layout: &Layout) -> (DMatrix<f64>, DVector<f64>, f64) {
    let mut h = DMatrix::zeros(layout.dim, layout.dim);
    let mut g = DVector::zeros(layout.dim);
    let mut cost = 0.0;
    for term in terms {
        cost += 0.5 * term.r.norm_squared();
        let mut blocks: Vec<(usize, &DMatrix<f64>)> = Vec::with_capacity(3);
        if let Some(s) = &term.shared {
            blocks.push((0, s));
        }
        for (node, j) in &term.nodes {
            if let Some(off) = layout.node_offsets[*node] {
                blocks.push((off, j));
            }
        }
        for &(a, ja) in &blocks {
            let mut ga = g.rows_mut(a, ja.ncols());
            ga += ja.tr_mul(&term.r);
            for &(b, jb) in &blocks {
                let mut hab = h.view_mut((a, b), (ja.ncols(), jb.ncols()));
                hab += ja.tr_mul(jb);
            }
        }
    }
    (h, g, cost)
}

fn total_cost(problem: &FusionProblem, state: &FusionState) -> Result<f64, FusionError> {
    Ok(all_terms(problem, state)?.iter().map(|t| 0.5 * t.r.norm_squared()).sum())
}

fn apply_step(state: &FusionState, step: &DVector<f64>, layout: &Layout) -> FusionState {
    let v = |o: usize| Vector3::new(step[o], step[o + 1], step[o + 2]);
    let mut next = state.clone();
    next.rot_n_to_m = so3::orthonormalize(&(so3::exp(&v(0)) * state.rot_n_to_m));
    next.t_n_to_m += v(3);
    next.lever_arm += v(6);
    for (k, off) in layout.node_offsets.iter().enumerate() {
        if let Some(o) = off {
            next.nodes[k] = state.nodes[k].perturbed(&v(*o), &v(o + 3));
        }
    }
    next
}

fn check_geometry(problem: &FusionProblem) -> Result<(), FusionError> {
    if problem.marginal.is_some() || problem.level_prior.is_some() {
        return Ok(());
    }
    let n = problem.gnss.len();
    if n < 3 {
        return Err(FusionError::NotObservable(format!("{n} GNSS factors, need 3 non-collinear")));
    }
    let mean = problem.gnss.iter().map(|f| f.p_g_n).sum::<Vector3<f64>>() / n as f64;
    let scatter: Matrix3<f64> = problem.gnss.iter().map(|f| (f.p_g_n - mean) * (f.p_g_n - mean).transpose()).sum();
    let mut ev: Vec<f64> = SymmetricEigen::new(scatter).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[1] <= 1e-12 * ev[0].max(1.0) {
        return Err(FusionError::NotObservable("GNSS factor positions are collinear".into()));
    }
    Ok(())
}

fn check_rank(h: &DMatrix<f64>) -> Result<(), FusionError> {
    let ev = SymmetricEigen::new(h.clone()).eigenvalues;
    let max = ev.amax();
    let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= RANK_TOLERANCE * max {
        return Err(FusionError::NotObservable(format!("normal matrix eigenvalues span [{min:e}, {max:e}]")));
    }
    Ok(())
}

fn validate(problem: &FusionProblem, state: &FusionState) -> Result<(), FusionError> {
    let n = state.nodes.len();
    let bad_node = problem.gnss.iter().any(|f| f.node >= n)
        || problem.lidar.iter().any(|f| f.from >= n || f.to >= n)
        || problem.fixed_nodes.iter().any(|&k| k >= n)
        || problem.marginal.as_ref().and_then(|m| m.node).is_some_and(|k| k >= n);
    if bad_node {
        return Err(FusionError::InvalidInput("factor references a missing node".into()));
    }
    let finite = state.rot_n_to_m.iter().chain(state.t_n_to_m.iter()).chain(state.lever_arm.iter()).all(|x| x.is_finite())
        && state.nodes.iter().all(|p| p.rotation.iter().chain(p.translation.iter()).all(|x| x.is_finite()));
    if !finite {
        return Err(FusionError::InvalidInput("initial state is not finite".into()));
    }
    Ok(())
}

/// Levenberg–Marquardt over the alignment, lever arm and free node poses.
///
/// Steps solve `(H + λ diag H) δ = −g`; λ is divided by 10 on an accepted
/// step and multiplied by 10 on a rejected one.
pub fn optimize(problem: &FusionProblem, initial: &FusionState, config: &OptimizerConfig) -> Result<OptimizeResult, FusionError> {
    validate(problem, initial)?;
    check_geometry(problem)?;
    let layout = Layout::new(initial.nodes.len(), &problem.fixed_nodes);
    let mut state = initial.clone();
    let (mut h, mut g, mut cost) = accumulate(&all_terms(problem, &state)?, &layout);
    check_rank(&h)?;

    let mut lambda = config.lambda0;
    let mut history = vec![cost];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        if g.amax() < config.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let floor = 1e-12 * h.diagonal().amax();
        let mut a = h.clone();
        for i in 0..layout.dim {
            a[(i, i)] += lambda * h[(i, i)].max(floor);
        }
        let step = a.cholesky().map(|c| c.solve(&(-&g)));
        let trial = step.map(|s| apply_step(&state, &s, &layout));
        let trial_cost = match &trial {
            Some(t) if t.lever_arm.norm() < MAX_LEVER_ARM => total_cost(problem, t).ok(),
            _ => None,
        };
        match (trial, trial_cost) {
            (Some(t), Some(c)) if c < cost => {
                let rel = (cost - c) / cost.max(f64::MIN_POSITIVE);
                state = t;
                (h, g, cost) = accumulate(&all_terms(problem, &state)?, &layout);
                history.push(cost);
                lambda = (lambda / 10.0).max(1e-15);
                if rel < config.rel_cost_tol {
                    converged = true;
                    break;
                }
            }
            _ => {
                lambda *= 10.0;
                if lambda > MAX_LAMBDA {
                    // no descent left at working precision
                    converged = true;
                    break;
                }
            }
        }
    }
    if !converged {
        return Err(FusionError::NoConvergence { iterations, best: Box::new(state) });
    }
    let covariance = h.cholesky().ok_or_else(|| FusionError::NotObservable("normal matrix lost rank".into()))?.inverse();
    Ok(OptimizeResult { state, cost, iterations, cost_history: history, covariance, layout })
}

/// Removes node 0, folding every factor that touches it into a linear prior
/// on the shared variables and the node it was linked to. Remaining node
/// indices shift down by one.
pub fn marginalize_oldest(problem: &FusionProblem, state: &FusionState) -> Result<(FusionProblem, FusionState), FusionError> {
    if state.nodes.len() < 2 {
        return Err(FusionError::InvalidInput("need at least two nodes to marginalize".into()));
    }
    let touches = |f: &LidarPriorFactor| f.from == 0 || f.to == 0;
    let mut partner: Option<usize> = None;
    for f in problem.lidar.iter().filter(|f| touches(f)) {
        let other = if f.from == 0 { f.to } else { f.from };
        match partner {
            Some(p) if p != other => return Err(FusionError::InvalidInput("oldest node links to several nodes".into())),
            _ => partner = Some(other),
        }
    }
    if let Some(m) = &problem.marginal {
        if let Some(k) = m.node.filter(|&k| k != 0) {
            if partner.is_some_and(|p| p != k) {
                return Err(FusionError::InvalidInput("marginal prior and link disagree".into()));
            }
            partner = Some(k);
        }
    }

    let mut terms = Vec::new();
    for f in problem.gnss.iter().filter(|f| f.node == 0) {
        terms.push(gnss_term(state, f)?);
    }
    for f in problem.lidar.iter().filter(|f| touches(f)) {
        terms.push(lidar_term(state, f)?);
    }
    if let Some(m) = &problem.marginal {
        terms.push(marginal_term(state, m)?);
    }

    // local layout: shared, then partner, then node 0 if free
    let n = state.nodes.len();
    let mut offsets = vec![None; n];
    let mut dim = SHARED_DIM;
    if let Some(p) = partner {
        offsets[p] = Some(dim);
        dim += NODE_DIM;
    }
    let keep = dim;
    if !problem.fixed_nodes.contains(&0) {
        offsets[0] = Some(dim);
        dim += NODE_DIM;
    }
    let (h, g, _) = accumulate(&terms, &Layout { node_offsets: offsets, dim });
    let (hk, gk) = if dim > keep {
        let hmm = h.view((keep, keep), (NODE_DIM, NODE_DIM)).into_owned();
        let inv = hmm.cholesky().ok_or(FusionError::BadCovariance)?.inverse();
        let hkm = h.view((0, keep), (keep, NODE_DIM)).into_owned();
        let hkk = h.view((0, 0), (keep, keep)).into_owned();
        (hkk - &hkm * &inv * hkm.transpose(), g.rows(0, keep) - &hkm * &inv * g.rows(keep, NODE_DIM))
    } else {
        (h, g)
    };

    let hk = (&hk + hk.transpose()) * 0.5;
    let eig = SymmetricEigen::new(hk);
    let max = eig.eigenvalues.amax();
    let kept: Vec<usize> = (0..keep).filter(|&i| eig.eigenvalues[i] > RANK_TOLERANCE * max).collect();
    let mut sqrt_info = DMatrix::zeros(kept.len(), keep);
    let mut offset = DVector::zeros(kept.len());
    for (row, &i) in kept.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        let v = eig.eigenvectors.column(i);
        sqrt_info.row_mut(row).copy_from(&(v.transpose() * s));
        offset[row] = v.dot(&gk) / s;
    }

    let shift = |k: usize| k - 1;
    let mut next_state = state.clone();
    next_state.nodes.remove(0);
    let next = FusionProblem {
        gnss: problem
            .gnss
            .iter()
            .filter(|f| f.node != 0)
            .map(|f| GnssFactor { node: shift(f.node), ..f.clone() })
            .collect(),
        lidar: problem
            .lidar
            .iter()
            .filter(|f| !touches(f))
            .map(|f| LidarPriorFactor { from: shift(f.from), to: shift(f.to), ..f.clone() })
            .collect(),
        lever_prior: problem.lever_prior.clone(),
        level_prior: problem.level_prior,
        marginal: Some(MarginalPrior {
            node: partner.map(shift),
            rot0: state.rot_n_to_m,
            t0: state.t_n_to_m,
            lever0: state.lever_arm,
            node0: partner.map(|p| state.nodes[p]),
            sqrt_info,
            offset,
        }),
        fixed_nodes: problem.fixed_nodes.iter().filter(|&&k| k != 0).map(|&k| shift(k)).collect(),
    };
    Ok((next, next_state))
}
