use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{sub_rng, BuildingBox, GroundTruth, ScenarioConfig};
use crate::pointcloud::{PolarPoint, Scan};

const LIDAR_STREAM: u64 = 1;

/// Surface point on a vertical building face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FacePoint {
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub building: usize,
}

/// Regular lattice over the four vertical faces of every box.
pub fn face_lattice(boxes: &[BuildingBox], spacing: f64) -> Vec<FacePoint> {
    let mut out = Vec::new();
    for (b, bx) in boxes.iter().enumerate() {
        push_box_lattice(bx, b, spacing, &mut out);
    }
    out
}

fn push_box_lattice(bx: &BuildingBox, b: usize, spacing: f64, out: &mut Vec<FacePoint>) {
    let steps = |len: f64| -> Vec<f64> {
        let n = (len / spacing).floor().max(1.0) as usize;
        let pad = (len - (n - 1) as f64 * spacing) / 2.0;
        (0..n).map(|k| pad + k as f64 * spacing).collect()
    };
    let (lo, hi) = (Vector3::from(bx.min), Vector3::from(bx.max));
    let zs = steps(hi.z - lo.z);
    // faces normal to x, then to y
    for axis in 0..2 {
        let other = 1 - axis;
        let us = steps(hi[other] - lo[other]);
        for (side, sign) in [(lo[axis], -1.0), (hi[axis], 1.0)] {
            let mut normal = Vector3::zeros();
            normal[axis] = sign;
            for &u in &us {
                for &z in &zs {
                    let mut p = Vector3::new(0.0, 0.0, lo.z + z);
                    p[axis] = side;
                    p[other] = lo[other] + u;
                    out.push(FacePoint { position: p, normal, building: b });
                }
            }
        }
    }
}

/// Moves a face point by up to `half` (m) along the face and in height,
/// staying on the face.
fn jitter_on_face(fp: &mut FacePoint, bx: &BuildingBox, half: f64, rng: &mut impl Rng) {
    let along = if fp.normal.x != 0.0 { 1 } else { 0 };
    for k in [along, 2] {
        let v = fp.position[k] + rng.random_range(-half..=half);
        fp.position[k] = v.clamp(bx.min[k], bx.max[k]);
    }
}

/// Parameter interval where `origin + s·dir` is inside the box.
fn ray_interval(origin: &Vector3<f64>, dir: &Vector3<f64>, bx: &BuildingBox) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..3 {
        if dir[k] == 0.0 {
            if origin[k] < bx.min[k] || origin[k] > bx.max[k] {
                return None;
            }
            continue;
        }
        let a = (bx.min[k] - origin[k]) / dir[k];
        let b = (bx.max[k] - origin[k]) / dir[k];
        lo = lo.max(a.min(b));
        hi = hi.min(a.max(b));
    }
    (lo <= hi).then_some((lo, hi))
}

/// Whether the open segment `a → b` passes through the box's interior.
pub fn segment_hits_box(a: &Vector3<f64>, b: &Vector3<f64>, bx: &BuildingBox) -> bool {
    const EPS: f64 = 1e-9;
    match ray_interval(a, &(b - a), bx) {
        Some((lo, hi)) => hi - lo > EPS && lo < 1.0 - EPS && hi > EPS,
        None => false,
    }
}

fn box_distance(p: &Vector3<f64>, bx: &BuildingBox) -> f64 {
    let d = Vector3::from_fn(|k, _| (bx.min[k] - p[k]).max(0.0).max(p[k] - bx.max[k]));
    d.norm()
}

/// Visible face points from each scan pose, in polar form with Gaussian
/// noise on range, elevation and azimuth.
pub fn render_scans(cfg: &ScenarioConfig, gt: &GroundTruth) -> Vec<Scan> {
    let boxes = &cfg.environment.boxes;
    let spacing = cfg.environment.grid_spacing;
    let l = &cfg.lidar;
    let half_fov = l.vertical_fov_deg.to_radians() / 2.0;
    let sigmas = [l.sigma_range, l.sigma_angle, l.sigma_angle];
    cfg.scan_times()
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let pose = gt.sample(t).lidar_to_enu;
            let eye = pose.translation;
            let near: Vec<bool> = boxes.iter().map(|b| box_distance(&eye, b) <= l.max_range).collect();
            let mut rng = sub_rng(cfg.seed, LIDAR_STREAM, k as u64);
            let half = 0.5 * l.surface_jitter * spacing;
            let mut lattice = Vec::new();
            for (b, bx) in boxes.iter().enumerate().filter(|(b, _)| near[*b]) {
                let start = lattice.len();
                push_box_lattice(bx, b, spacing, &mut lattice);
                if half > 0.0 {
                    lattice[start..].iter_mut().for_each(|fp| jitter_on_face(fp, bx, half, &mut rng));
                }
            }
            let mut points = Vec::new();
            for fp in &lattice {
                let d = fp.position - eye;
                let range = d.norm();
                if range > l.max_range || fp.normal.dot(&d) >= 0.0 || (d.z / range).asin().abs() > half_fov {
                    continue;
                }
                let blocked = boxes
                    .iter()
                    .enumerate()
                    .any(|(b, bx)| b != fp.building && near[b] && box_distance(&eye, bx) < range && segment_hits_box(&eye, &fp.position, bx));
                if blocked {
                    continue;
                }
                let body = pose.rotation.transpose() * d;
                let Ok(mut p) = PolarPoint::from_cartesian(&body, sigmas) else { continue };
                let mut noise = || -> f64 { StandardNormal.sample(&mut rng) };
                p.range += l.sigma_range * noise();
                p.elevation += l.sigma_angle * noise();
                p.azimuth += l.sigma_angle * noise();
                if p.range > 0.0 {
                    points.push(p);
                }
            }
            Scan { timestamp: t, points }
        })
        .collect()
}
