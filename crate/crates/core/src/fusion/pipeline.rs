use nalgebra::{Matrix3, Matrix6, Vector3};
use serde::{Deserialize, Serialize};

use super::extrapolate::extrapolate_lidar_pose;
use super::factors::predicted_antenna;
use super::optimize::{antenna_covariance, marginalize_oldest, optimize, OptimizeResult};
use super::{
    FusionError, FusionProblem, FusionState, GnssFactor, LevelPrior, LeverArmPrior, LidarPriorFactor, NodePose,
    OptimizerConfig, DEFAULT_MAX_EXTRAPOLATION,
};
use crate::geodesy::{enu_to_ecef_pose, transform_cov, CovMatrix3, FrameTag, GeodeticCoord, Pose};
use crate::gnss::{ppp_solve_epoch, spp_solve_epoch, AmbiguityStore, Epoch, PppConfig};
use crate::icp::{icp_register, IcpConfig, IcpError, RegistrationResult};
use crate::pointcloud::{scan_to_cart, Scan};
use crate::raim::{raim_epoch, PositionFix, RaimVerdict, DEFAULT_ALPHA};
use crate::so3;

pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

/// Registrations with fewer matched pairs, or departing further from the
/// previous step's motion, are replaced by a constant-motion step.
const MIN_STEP_PAIRS: usize = 30;
const MAX_STEP_JUMP: f64 = 1.0;
const MAX_STEP_TURN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub origin: GeodeticCoord,
    /// Nodes kept in the sliding window.
    pub window: usize,
    pub max_extrapolation: f64,
    pub alpha: f64,
    pub raim: bool,
    pub icp: IcpConfig,
    pub ppp: PppConfig,
    pub optimizer: OptimizerConfig,
    pub lever_prior: LeverArmPrior,
    pub level_sigma: Option<f64>,
    /// GNSS baseline (m) needed before the heading of the alignment is
    /// initialized.
    pub init_baseline: f64,
    /// Position sigma (m) of the graph prediction handed to RAIM.
    pub raim_lidar_sigma: f64,
    /// Added to each PPP covariance diagonal (m), guarding against
    /// overconfident fixes from low-redundancy epochs.
    pub gnss_sigma_floor: f64,
    /// Squared Mahalanobis bound between a PPP fix and the graph prediction;
    /// fixes beyond it are left out of the graph and restart the carried
    /// ambiguities. `None` disables the test.
    pub innovation_gate: Option<f64>,
    /// Alignment `(R_N^M, t_N^M)` used for the odometry-only track; the
    /// track falls back to the alignment found at initialization.
    pub odometry_alignment: Option<(Matrix3<f64>, Vector3<f64>)>,
}

impl PipelineConfig {
    pub fn new(origin: GeodeticCoord, lever_arm: Vector3<f64>) -> Self {
        Self {
            origin,
            window: 30,
            max_extrapolation: DEFAULT_MAX_EXTRAPOLATION,
            alpha: DEFAULT_ALPHA,
            raim: true,
            icp: IcpConfig::default(),
            ppp: PppConfig::default(),
            optimizer: OptimizerConfig::default(),
            lever_prior: LeverArmPrior { mean: lever_arm, cov: Matrix3::identity() * 0.05f64.powi(2) },
            level_sigma: Some(0.01),
            init_baseline: 30.0,
            raim_lidar_sigma: 0.5,
            gnss_sigma_floor: 0.1,
            // chi-square, 3 dof, 0.999
            innovation_gate: Some(16.27),
            odometry_alignment: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectorySource {
    Fused,
    Ppp,
    Odom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub enu: Vector3<f64>,
    pub cov: Matrix3<f64>,
    pub src: TrajectorySource,
}

/// One line of the trajectory JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub enu: [f64; 3],
    pub cov: [f64; 6],
    pub src: TrajectorySource,
    pub v: u32,
}

impl From<&TrajectoryPoint> for TrajectoryRecord {
    fn from(p: &TrajectoryPoint) -> Self {
        Self {
            t: p.t,
            enu: [p.enu.x, p.enu.y, p.enu.z],
            cov: CovMatrix3::new(p.cov, FrameTag::Enu).upper_triangle(),
            src: p.src,
            v: TRAJECTORY_SCHEMA_VERSION,
        }
    }
}

impl From<&TrajectoryRecord> for TrajectoryPoint {
    fn from(r: &TrajectoryRecord) -> Self {
        Self {
            t: r.t,
            enu: Vector3::from(r.enu),
            cov: CovMatrix3::from_upper_triangle(r.cov, FrameTag::Enu).matrix,
            src: r.src,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineOutput {
    /// Pipeline output, one point per solved epoch, in time order.
    pub fused: Vec<TrajectoryPoint>,
    /// PPP fixes after RAIM screening.
    pub ppp: Vec<TrajectoryPoint>,
    /// Dead-reckoned LiDAR track mapped into ENU.
    pub odometry: Vec<TrajectoryPoint>,
    pub verdicts: Vec<RaimVerdict>,
    /// Epochs with a reduced or missing solution, with the reason.
    pub degraded: Vec<(f64, String)>,
    pub observation_epochs: usize,
    /// Scan-to-scan registrations, keyed by the newer scan's time.
    pub registrations: Vec<(f64, RegistrationResult)>,
    /// Final alignment and lever arm, if the graph was initialized.
    pub alignment: Option<(Matrix3<f64>, Vector3<f64>, Vector3<f64>)>,
}

/// Scan-to-scan LiDAR odometry in the map frame (M = first scan).
struct Odometry {
    times: Vec<f64>,
    poses: Vec<Pose>,
    /// `(δθ, t)` covariance of step `k` (scan `k−1` to `k`).
    steps: Vec<Matrix6<f64>>,
    relatives: Vec<(Matrix3<f64>, Vector3<f64>)>,
}

impl Odometry {
    fn run(scans: &[Scan], icp: &IcpConfig, registrations: &mut Vec<(f64, RegistrationResult)>) -> Self {
        let mut odo = Odometry { times: vec![], poses: vec![], steps: vec![], relatives: vec![] };
        let mut prev_cloud = None;
        let mut velocity = (Matrix3::identity(), Vector3::zeros());
        for scan in scans {
            let cloud = match scan_to_cart(scan) {
                Ok(c) if c.len() >= 3 => c,
                _ => {
                    log::warn!("scan at {:.3} s skipped: too few points", scan.timestamp);
                    continue;
                }
            };
            let Some(prev) = prev_cloud.replace(cloud) else {
                odo.times.push(scan.timestamp);
                odo.poses.push(Pose::identity(FrameTag::Lidar, FrameTag::Map));
                odo.steps.push(Matrix6::zeros());
                odo.relatives.push((Matrix3::identity(), Vector3::zeros()));
                continue;
            };
            let cloud = prev_cloud.as_ref().expect("just stored");
            let register = |initial: (Matrix3<f64>, Vector3<f64>)| {
                let config = IcpConfig { initial: Some(initial), ..icp.clone() };
                let found = match icp_register(cloud, &prev, &config) {
                    Ok((r, c, _)) => Some((r, c.len())),
                    Err(IcpError::NoConvergence { best, .. }) => Some((best.0, best.1.len())),
                    Err(e) => {
                        log::debug!("registration at {:.3} s failed: {e}", scan.timestamp);
                        None
                    }
                };
                found.filter(|(r, pairs)| {
                    *pairs >= MIN_STEP_PAIRS
                        && (r.pose.translation - velocity.1).norm() <= MAX_STEP_JUMP
                        && so3::angle_between(&r.pose.rotation, &velocity.0) <= MAX_STEP_TURN
                })
            };
            let reg = register(velocity).or_else(|| register((Matrix3::identity(), Vector3::zeros()))).map(|(r, _)| r);
            if reg.is_none() {
                log::warn!("registration at {:.3} s rejected; holding the last motion", scan.timestamp);
            }
            let (rel, step) = match reg {
                Some(r) => {
                    let mut step = Matrix6::zeros();
                    step.fixed_view_mut::<3, 3>(0, 0).copy_from(&r.cov_rotation);
                    step.fixed_view_mut::<3, 3>(3, 3).copy_from(&r.cov_translation.matrix);
                    let rel = (r.pose.rotation, r.pose.translation);
                    registrations.push((scan.timestamp, r));
                    (rel, step)
                }
                None => (velocity, Matrix6::from_diagonal(&nalgebra::Vector6::new(1e-2, 1e-2, 1e-2, 1.0, 1.0, 1.0))),
            };
            velocity = rel;
            let last = odo.poses.last().expect("first scan stored");
            odo.poses.push(Pose {
                rotation: so3::orthonormalize(&(last.rotation * rel.0)),
                translation: last.rotation * rel.1 + last.translation,
                from: FrameTag::Lidar,
                to: FrameTag::Map,
            });
            odo.times.push(scan.timestamp);
            odo.steps.push(step);
            odo.relatives.push(rel);
        }
        odo
    }

    /// Virtual pose at `t` and the index of the scan it extends.
    fn virtual_pose(&self, t: f64, max_gap: f64) -> Result<(usize, Pose), FusionError> {
        let b = self.times.partition_point(|&s| s <= t);
        if b == 0 {
            return Err(FusionError::StaleData { gap: f64::INFINITY, limit: max_gap });
        }
        let b = b - 1;
        if self.times[b] == t {
            return Ok((b, self.poses[b]));
        }
        if b == 0 {
            return Err(FusionError::StaleData { gap: t - self.times[0], limit: max_gap });
        }
        let pose = extrapolate_lidar_pose(&self.poses[b - 1], self.times[b - 1], &self.poses[b], self.times[b], t, max_gap)?;
        Ok((b, pose))
    }

    /// Covariance of the composed relative pose from scan `from` to scan
    /// `to`, compounding the step covariances in order.
    fn compound(&self, from: usize, to: usize) -> Matrix6<f64> {
        let mut cov = Matrix6::zeros();
        let mut r_acc = Matrix3::identity();
        for k in from + 1..=to {
            let (r_k, t_k) = self.relatives[k];
            let mut j_acc = Matrix6::identity();
            j_acc.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-so3::hat(&(r_acc * t_k))));
            let mut j_k = Matrix6::zeros();
            j_k.fixed_view_mut::<3, 3>(0, 0).copy_from(&r_acc);
            j_k.fixed_view_mut::<3, 3>(3, 3).copy_from(&r_acc);
            cov = j_acc * cov * j_acc.transpose() + j_k * self.steps[k] * j_k.transpose();
            r_acc *= r_k;
        }
        (cov + cov.transpose()) * 0.5
    }
}

/// Heading-only alignment `q = Rz(β) p + t` from paired map-frame and ENU
/// points.
fn initial_alignment(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> (Matrix3<f64>, Vector3<f64>) {
    let n = pairs.len() as f64;
    let qm = pairs.iter().map(|p| p.0).sum::<Vector3<f64>>() / n;
    let pm = pairs.iter().map(|p| p.1).sum::<Vector3<f64>>() / n;
    let (mut s, mut c) = (0.0, 0.0);
    for (q, p) in pairs {
        let (q, p) = (q - qm, p - pm);
        s += p.x * q.y - p.y * q.x;
        c += p.x * q.x + p.y * q.y;
    }
    let r = so3::rot_z(s.atan2(c));
    (r, qm - r * pm)
}

struct NodeMeta {
    anchor: usize,
    virtual_pose: Pose,
    ppp: Option<TrajectoryPoint>,
}

struct Window<'a> {
    config: &'a PipelineConfig,
    problem: FusionProblem,
    state: FusionState,
    meta: Vec<NodeMeta>,
    initialized: bool,
    result: Option<OptimizeResult>,
    init_alignment: Option<(Matrix3<f64>, Vector3<f64>)>,
}

impl Window<'_> {
    fn predict_node(&self, odo_pose: &Pose, t: f64) -> NodePose {
        match (self.state.nodes.last(), self.meta.last()) {
            (Some(last), Some(meta)) => {
                let v = &meta.virtual_pose;
                let rel_r = v.rotation.transpose() * odo_pose.rotation;
                let rel_t = v.rotation.transpose() * (odo_pose.translation - v.translation);
                NodePose {
                    time: t,
                    rotation: so3::orthonormalize(&(last.rotation * rel_r)),
                    translation: last.rotation * rel_t + last.translation,
                }
            }
            _ => NodePose::from_pose(t, odo_pose),
        }
    }

    fn try_initialize(&mut self) {
        let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = self
            .problem
            .gnss
            .iter()
            .map(|f| {
                let n = &self.state.nodes[f.node];
                (n.rotation * self.state.lever_arm + n.translation, f.p_g_n)
            })
            .collect();
        let spread = pairs
            .iter()
            .flat_map(|a| pairs.iter().map(move |b| (a.1 - b.1).xy().norm()))
            .fold(0.0, f64::max);
        if pairs.len() < 2 || spread < self.config.init_baseline {
            return;
        }
        let (r, t) = initial_alignment(&pairs);
        self.state.rot_n_to_m = r;
        self.state.t_n_to_m = t;
        self.init_alignment = Some((r, t));
        self.initialized = true;
        log::info!("alignment initialized from {} fixes over {spread:.1} m", pairs.len());
    }

    fn solve(&mut self, t: f64, degraded: &mut Vec<(f64, String)>) {
        match optimize(&self.problem, &self.state, &self.config.optimizer) {
            Ok(r) => {
                self.state = r.state.clone();
                self.result = Some(r);
            }
            Err(FusionError::NoConvergence { best, .. }) => {
                log::warn!("graph solve at {t:.3} s stopped at the iteration limit");
                self.state = *best;
                self.result = None;
                degraded.push((t, "graph solve hit the iteration limit".into()));
            }
            Err(e) => {
                log::warn!("graph solve at {t:.3} s failed: {e}");
                self.result = None;
                degraded.push((t, format!("graph solve failed: {e}")));
            }
        }
    }

    /// Antenna covariance (ENU) of a node predicted from the newest window
    /// node by odometry up to scan `anchor`.
    fn prediction_cov(&self, odo: &Odometry, anchor: usize) -> Matrix3<f64> {
        let (Some(meta), Some(result)) = (self.meta.last(), &self.result) else {
            return Matrix3::identity() * self.config.raim_lidar_sigma.powi(2);
        };
        let last = self.meta.len() - 1;
        if result.state.nodes.len() <= last {
            return Matrix3::identity() * self.config.raim_lidar_sigma.powi(2);
        }
        let step = odo.compound(meta.anchor, anchor).fixed_view::<3, 3>(3, 3).into_owned();
        let r_mn = self.state.rot_n_to_m.transpose();
        antenna_covariance(result, last) + r_mn * step * r_mn.transpose()
    }

    /// Output for window node `k` from the latest solve.
    fn emit(&self, k: usize) -> Option<TrajectoryPoint> {
        let t = self.state.nodes[k].time;
        if !self.initialized {
            return self.meta[k].ppp.clone();
        }
        let cov = match &self.result {
            Some(r) => antenna_covariance(r, k),
            None => Matrix3::identity() * 1e4,
        };
        Some(TrajectoryPoint {
            t,
            enu: predicted_antenna(&self.state, &self.state.nodes[k]),
            cov,
            src: TrajectorySource::Fused,
        })
    }

    fn drop_oldest(&mut self) -> Result<(), FusionError> {
        if self.initialized && self.result.is_some() {
            let (p, s) = marginalize_oldest(&self.problem, &self.state)?;
            self.problem = p;
            self.state = s;
        } else {
            // nothing trustworthy to fold in: restart the gauge on the next node
            self.state.nodes.remove(0);
            self.problem.gnss.retain(|f| f.node != 0);
            self.problem.gnss.iter_mut().for_each(|f| f.node -= 1);
            self.problem.lidar.retain(|f| f.from != 0 && f.to != 0);
            self.problem.lidar.iter_mut().for_each(|f| {
                f.from -= 1;
                f.to -= 1;
            });
            self.problem.marginal = None;
            self.problem.fixed_nodes = vec![0];
        }
        self.meta.remove(0);
        Ok(())
    }
}

/// Runs odometry, RAIM-screened PPP and the sliding-window graph over time
/// ordered scans and epochs.
pub fn run_pipeline(scans: &[Scan], epochs: &[Epoch], config: &PipelineConfig) -> Result<PipelineOutput, FusionError> {
    if scans.windows(2).any(|w| !(w[1].timestamp > w[0].timestamp)) || epochs.windows(2).any(|w| !(w[1].time > w[0].time)) {
        return Err(FusionError::InvalidInput("inputs must be strictly time ordered".into()));
    }
    if config.window < 2 {
        return Err(FusionError::InvalidInput("window must hold at least two nodes".into()));
    }
    let mut out = PipelineOutput { observation_epochs: epochs.len(), ..Default::default() };
    let odo = Odometry::run(scans, &config.icp, &mut out.registrations);
    let enu_to_ecef = enu_to_ecef_pose(&config.origin);
    let ecef_to_enu = enu_to_ecef.inverse();

    let mut win = Window {
        config,
        problem: FusionProblem {
            lever_prior: Some(config.lever_prior.clone()),
            level_prior: config.level_sigma.map(|sigma| LevelPrior { sigma }),
            fixed_nodes: vec![0],
            ..Default::default()
        },
        state: FusionState {
            rot_n_to_m: Matrix3::identity(),
            t_n_to_m: Vector3::zeros(),
            lever_arm: config.lever_prior.mean,
            nodes: vec![],
        },
        meta: vec![],
        initialized: false,
        result: None,
        init_alignment: None,
    };
    let mut store = AmbiguityStore::new();
    let mut odo_nodes: Vec<(f64, usize, Pose)> = vec![];

    for epoch in epochs {
        let t = epoch.time;
        let virtual_pose = odo.virtual_pose(t, config.max_extrapolation);
        if let (Err(e), false) = (&virtual_pose, odo.times.is_empty()) {
            out.degraded.push((t, format!("no LiDAR pose: {e}")));
        }
        let predicted = virtual_pose.as_ref().ok().map(|(_, p)| win.predict_node(p, t));

        // aiding positions for RAIM
        let lidar_fix = match (&predicted, win.initialized) {
            (Some(node), true) => Some(PositionFix {
                position: enu_to_ecef.transform_point(&predicted_antenna(&win.state, node)),
                cov: CovMatrix3::isotropic(config.raim_lidar_sigma.powi(2), FrameTag::Ecef),
            }),
            _ => None,
        };
        let spp = spp_solve_epoch(epoch, &config.ppp).ok();
        let gnss_fix = spp.as_ref().map(|s| PositionFix { position: s.x_ecef, cov: s.cov_x });

        let mut screened = epoch.clone();
        let mut flagged: Vec<String> = vec![];
        if config.raim {
            match raim_epoch(lidar_fix.as_ref(), gnss_fix.as_ref(), epoch, config.alpha) {
                Ok(verdict) => {
                    if verdict.degraded {
                        out.degraded.push((t, "RAIM kept the minimum satellite set".into()));
                    }
                    flagged = verdict.outliers.iter().cloned().collect();
                    screened = epoch.filtered(|o| !verdict.outliers.contains(&o.sat_id));
                    out.verdicts.push(verdict);
                }
                Err(e) => log::debug!("RAIM skipped at {t:.3} s: {e}"),
            }
        }

        store.begin_epoch(&screened, &flagged);
        let ppp_config = PppConfig {
            initial_position: lidar_fix.as_ref().or(gnss_fix.as_ref()).map(|f| f.position),
            ..config.ppp.clone()
        };
        let ppp = match ppp_solve_epoch(&screened, Some(&store), &ppp_config) {
            Ok(sol) => {
                store.update(&sol);
                let cov = transform_cov(&sol.cov_x, &ecef_to_enu).map_err(|e| FusionError::InvalidInput(e.to_string()))?;
                let point = TrajectoryPoint {
                    t,
                    enu: ecef_to_enu.transform_point(&sol.x_ecef),
                    cov: cov.matrix,
                    src: TrajectorySource::Ppp,
                };
                out.ppp.push(point.clone());
                Some(point)
            }
            Err(e) => {
                out.degraded.push((t, format!("no PPP fix: {e}")));
                None
            }
        };

        let (Ok((anchor, vpose)), Some(node)) = (virtual_pose, predicted) else {
            match &ppp {
                Some(p) => out.fused.push(p.clone()),
                None => out.degraded.push((t, "no solution".into())),
            }
            continue;
        };
        odo_nodes.push((t, anchor, vpose));

        let k = win.state.nodes.len();
        win.state.nodes.push(node);
        if let Some(prev) = win.meta.last() {
            let v = &prev.virtual_pose;
            let rel_r = v.rotation.transpose() * vpose.rotation;
            let rel_t = v.rotation.transpose() * (vpose.translation - v.translation);
            let cov = odo.compound(prev.anchor, anchor) + Matrix6::identity() * 1e-12;
            win.problem.lidar.push(LidarPriorFactor::from_relative(k - 1, k, rel_r, rel_t, &cov));
        }
        let floor = Matrix3::identity() * config.gnss_sigma_floor.powi(2);
        let ppp = match (ppp, config.innovation_gate, win.initialized) {
            (Some(p), Some(gate), true) => {
                let predicted_enu = predicted_antenna(&win.state, &node);
                let mut cov = p.cov + floor + win.prediction_cov(&odo, anchor);
                cov = (cov + cov.transpose()) * 0.5;
                let d = p.enu - predicted_enu;
                let d2 = cov.cholesky().map_or(f64::INFINITY, |c| d.dot(&c.solve(&d)));
                if d2 > gate {
                    out.degraded.push((t, format!("PPP fix rejected against the LiDAR prediction (d2 = {d2:.1})")));
                    store.clear();
                    None
                } else {
                    Some(p)
                }
            }
            (p, _, _) => p,
        };
        if let Some(p) = &ppp {
            win.problem.gnss.push(GnssFactor {
                node: k,
                epoch: t,
                p_g_n: p.enu,
                cov: CovMatrix3::new(p.cov + floor, FrameTag::Enu),
            });
        }
        win.meta.push(NodeMeta { anchor, virtual_pose: vpose, ppp });

        if !win.initialized {
            win.try_initialize();
        }
        if win.initialized {
            win.solve(t, &mut out.degraded);
        }
        while win.state.nodes.len() > config.window {
            if let Some(p) = win.emit(0) {
                out.fused.push(p);
            }
            win.drop_oldest()?;
        }
    }
    for k in 0..win.state.nodes.len() {
        if let Some(p) = win.emit(k) {
            out.fused.push(p);
        }
    }
    out.fused.sort_by(|a, b| a.t.total_cmp(&b.t));
    out.degraded.sort_by(|a, b| a.0.total_cmp(&b.0));
    if win.initialized {
        out.alignment = Some((win.state.rot_n_to_m, win.state.t_n_to_m, win.state.lever_arm));
    }

    // odometry-only track
    if let Some((r_nm, t_nm)) = config.odometry_alignment.or(win.init_alignment) {
        let lever = config.lever_prior.mean;
        for (t, anchor, pose) in odo_nodes {
            let arm = pose.rotation * lever;
            let enu = r_nm.transpose() * (arm + pose.translation - t_nm);
            let cov6 = odo.compound(0, anchor);
            let mut j = nalgebra::SMatrix::<f64, 3, 6>::zeros();
            j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-r_nm.transpose() * so3::hat(&arm)));
            j.fixed_view_mut::<3, 3>(0, 3).copy_from(&r_nm.transpose());
            out.odometry.push(TrajectoryPoint { t, enu, cov: j * cov6 * j.transpose(), src: TrajectorySource::Odom });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heading_alignment_recovers_rotation() {
        let r = so3::rot_z(1.1);
        let t = Vector3::new(3.0, -4.0, 1.0);
        let pairs: Vec<_> = [[0.0, 0.0, 0.0], [10.0, 5.0, 0.2], [30.0, -2.0, 0.1]]
            .iter()
            .map(|p| {
                let p = Vector3::from(*p);
                (r * p + t, p)
            })
            .collect();
        let (re, te) = initial_alignment(&pairs);
        assert!((re - r).norm() < 1e-12);
        assert!((te - t).norm() < 1e-12);
    }

    #[test]
    fn trajectory_record_roundtrip() {
        let p = TrajectoryPoint {
            t: 12.5,
            enu: Vector3::new(1.0, 2.0, 3.0),
            cov: Matrix3::new(1.0, 0.1, 0.2, 0.1, 2.0, 0.3, 0.2, 0.3, 3.0),
            src: TrajectorySource::Fused,
        };
        let rec = TrajectoryRecord::from(&p);
        let line = serde_json::to_string(&rec).unwrap();
        assert!(line.contains("\"src\":\"fused\""));
        let back: TrajectoryRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(TrajectoryPoint::from(&back), p);
    }
}
