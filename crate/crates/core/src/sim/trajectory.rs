use nalgebra::{Vector2, Vector3};

use super::{GroundTruth, ScenarioConfig, SimError};
use crate::geodesy::{FrameTag, Pose};
use crate::so3;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Segment {
    Line { start: Vector2<f64>, dir: Vector2<f64>, length: f64 },
    Arc { center: Vector2<f64>, radius: f64, start_angle: f64, sweep: f64 },
}

impl Segment {
    fn length(&self) -> f64 {
        match *self {
            Segment::Line { length, .. } => length,
            Segment::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    /// Position and heading (rad from east, counter-clockwise) at arc length `u`.
    fn at(&self, u: f64) -> (Vector2<f64>, f64) {
        match *self {
            Segment::Line { start, dir, .. } => (start + dir * u, dir.y.atan2(dir.x)),
            Segment::Arc { center, radius, start_angle, sweep } => {
                let turn = sweep.signum();
                let a = start_angle + turn * u / radius;
                (center + Vector2::new(a.cos(), a.sin()) * radius, a + turn * std::f64::consts::FRAC_PI_2)
            }
        }
    }
}

/// Planar path of straight legs joined by tangent circular arcs.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    segments: Vec<Segment>,
    total: f64,
}

impl Path {
    pub fn new(waypoints: &[[f64; 2]], turn_radius: f64) -> Result<Self, SimError> {
        if waypoints.len() < 2 {
            return Err(SimError::BadWaypoints("need at least two waypoints".into()));
        }
        let w: Vec<Vector2<f64>> = waypoints.iter().map(|p| Vector2::new(p[0], p[1])).collect();
        if w.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(SimError::BadWaypoints("non-finite waypoint".into()));
        }
        let legs: Vec<(Vector2<f64>, f64)> = w
            .windows(2)
            .map(|p| {
                let d = p[1] - p[0];
                (d / d.norm(), d.norm())
            })
            .collect();
        if legs.iter().any(|l| !(l.1 > 1e-9)) {
            return Err(SimError::BadWaypoints("repeated waypoint".into()));
        }
        // per corner: signed turn and tangent length
        let mut corners = Vec::with_capacity(w.len().saturating_sub(2));
        for k in 1..w.len() - 1 {
            let (a, b) = (legs[k - 1].0, legs[k].0);
            let turn = (a.x * b.y - a.y * b.x).atan2(a.dot(&b));
            if turn.abs() > 0.99 * std::f64::consts::PI {
                return Err(SimError::BadWaypoints(format!("reversal at waypoint {k}")));
            }
            corners.push((turn, turn_radius * (turn.abs() / 2.0).tan()));
        }
        let tangent = |k: usize| -> f64 { if k == 0 || k == w.len() - 1 { 0.0 } else { corners[k - 1].1 } };
        let mut segments = Vec::new();
        for (k, &(dir, len)) in legs.iter().enumerate() {
            let (t0, t1) = (tangent(k), tangent(k + 1));
            if t0 + t1 > len + 1e-9 {
                return Err(SimError::BadWaypoints(format!("leg {k} is too short for its corners")));
            }
            segments.push(Segment::Line { start: w[k] + dir * t0, dir, length: len - t0 - t1 });
            if k + 1 < w.len() - 1 {
                let (turn, t) = corners[k];
                if turn != 0.0 {
                    let p1 = w[k + 1] - dir * t;
                    let normal = Vector2::new(-dir.y, dir.x) * turn.signum();
                    let center = p1 + normal * turn_radius;
                    let rel = p1 - center;
                    segments.push(Segment::Arc { center, radius: turn_radius, start_angle: rel.y.atan2(rel.x), sweep: turn });
                }
            }
        }
        let total = segments.iter().map(Segment::length).sum();
        Ok(Self { segments, total })
    }

    pub fn length(&self) -> f64 {
        self.total
    }

    /// Position and heading at arc length `s`, held at the end point past the
    /// end of the path.
    pub fn at(&self, s: f64) -> (Vector2<f64>, f64) {
        let mut rest = s.clamp(0.0, self.total);
        for seg in &self.segments {
            let len = seg.length();
            if rest <= len {
                return seg.at(rest);
            }
            rest -= len;
        }
        let last = self.segments.last().expect("non-empty path");
        last.at(last.length())
    }
}

/// Truth trajectory at every scan and epoch time.
pub fn generate_trajectory(cfg: &ScenarioConfig) -> Result<GroundTruth, SimError> {
    cfg.validate()?;
    let t = &cfg.trajectory;
    let path = Path::new(&t.waypoints, t.turn_radius)?;
    let (p0, h0) = path.at(0.0);
    let start = Pose {
        rotation: so3::rot_z(h0 - std::f64::consts::FRAC_PI_2),
        translation: Vector3::new(p0.x, p0.y, t.sensor_height),
        from: FrameTag::Lidar,
        to: FrameTag::Enu,
    };
    // M is the LiDAR frame at t = 0
    let enu_to_map = Pose { from: FrameTag::Enu, to: FrameTag::Map, ..start.inverse() };
    let mut gt = GroundTruth {
        path,
        speed: t.speed,
        sensor_height: t.sensor_height,
        lever_arm: cfg.lever_arm(),
        clock_offset: cfg.gnss.clock_offset,
        clock_drift: cfg.gnss.clock_drift,
        enu_to_map,
        samples: vec![],
    };
    let mut times = cfg.scan_times();
    times.extend(cfg.epoch_times());
    times.sort_by(f64::total_cmp);
    times.dedup();
    gt.samples = times.iter().map(|&t| gt.sample(t)).collect();
    Ok(gt)
}
