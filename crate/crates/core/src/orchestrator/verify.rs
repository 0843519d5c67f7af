//! Independent re-simulation of a finished plan.
//!
//! Poses are recomputed here from the raw knots rather than through the
//! planner's own evaluation code.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::{signed_distance, wrap_angle, Pose2, Shape};
use crate::skeletons::ActionKind;
use crate::world::{Event, Scene, TimedPath};

/// Goal and grasp tolerance.
pub const TOL_POSE: f64 = 1e-6;
const TOL_SPEED: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Finding {
    Collision { t: f64, a: String, b: String, depth: f64 },
    OutsideRegion { t: f64, robot: String },
    SpeedViolation { entity: String, segment: usize, speed: f64, limit: f64 },
    NonIncreasingTime { entity: String, segment: usize },
    GraspDrift { object: String, segment: usize, error: f64 },
    UnpoweredMotion { object: String, segment: usize },
    FinalPose { object: String, error: f64 },
    UnknownEntity { id: String },
    EventOverlap { robot: String, index: usize },
    PlaceCount { object: String, count: usize },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::Collision { t, a, b, depth } => write!(f, "collision t={t:.4} {a} {b} depth={depth:.3e}"),
            Finding::OutsideRegion { t, robot } => write!(f, "outside-region t={t:.4} {robot}"),
            Finding::SpeedViolation { entity, segment, speed, limit } => {
                write!(f, "speed {entity} segment={segment} speed={speed:.6} limit={limit:.6}")
            }
            Finding::NonIncreasingTime { entity, segment } => write!(f, "time-order {entity} segment={segment}"),
            Finding::GraspDrift { object, segment, error } => {
                write!(f, "grasp-drift {object} segment={segment} error={error:.3e}")
            }
            Finding::UnpoweredMotion { object, segment } => write!(f, "unpowered-motion {object} segment={segment}"),
            Finding::FinalPose { object, error } => write!(f, "final-pose {object} error={error:.3e}"),
            Finding::UnknownEntity { id } => write!(f, "unknown-entity {id}"),
            Finding::EventOverlap { robot, index } => write!(f, "event-overlap {robot} index={index}"),
            Finding::PlaceCount { object, count } => write!(f, "place-count {object} count={count}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub findings: Vec<Finding>,
    pub samples: usize,
}

impl VerifyReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn count(&self, pred: impl Fn(&Finding) -> bool) -> usize {
        self.findings.iter().filter(|f| pred(f)).count()
    }
}

fn lerp_pose(a: &Pose2, b: &Pose2, s: f64) -> Pose2 {
    let th = a.theta + s * wrap_angle(b.theta - a.theta);
    Pose2::new(a.x + s * (b.x - a.x), a.y + s * (b.y - a.y), th)
}

/// Raw knot interpolation, clamped at both ends.
fn knot_pose(path: &TimedPath, t: f64) -> Option<(Pose2, Option<usize>)> {
    let ks = &path.knots;
    let first = ks.first()?;
    if t <= first.t || ks.len() == 1 {
        return Some((first.q.pose(), None));
    }
    let last = ks.last()?;
    if t >= last.t {
        return Some((last.q.pose(), None));
    }
    let mut lo = 0;
    let mut hi = ks.len() - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if ks[mid].t <= t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = (t - ks[lo].t) / (ks[hi].t - ks[lo].t);
    Some((lerp_pose(&ks[lo].q.pose(), &ks[hi].q.pose(), s), Some(lo)))
}

struct Sim<'a> {
    scene: &'a Scene,
    paths: &'a BTreeMap<String, TimedPath>,
}

impl<'a> Sim<'a> {
    fn robot_pose(&self, id: &str, t: f64) -> Pose2 {
        let r = self.scene.robot(id).expect("checked");
        self.paths
            .get(id)
            .and_then(|p| knot_pose(p, t))
            .map_or(r.home_config.pose(), |(p, _)| p)
    }

    fn gripper(&self, robot: &str, t: f64) -> Pose2 {
        let r = self.scene.robot(robot).expect("checked");
        let p = self.robot_pose(robot, t);
        Pose2::new(
            p.x + r.gripper_offset * p.theta.cos(),
            p.y + r.gripper_offset * p.theta.sin(),
            p.theta,
        )
    }

    /// Object pose and its carrier at `t`.
    fn object_pose(&self, id: &str, t: f64) -> (Pose2, Option<&'a str>) {
        let o = self.scene.object(id).expect("checked");
        let Some(path) = self.paths.get(id) else {
            return (o.start_pose, None);
        };
        match knot_pose(path, t) {
            None => (o.start_pose, None),
            Some((p, None)) => (p, None),
            Some((p, Some(seg))) => match path.attachments.get(seg).and_then(|a| a.as_ref()) {
                Some(att) if self.scene.is_robot(&att.robot) => {
                    (self.gripper(&att.robot, t).compose(&att.grasp), Some(att.robot.as_str()))
                }
                _ => (p, None),
            },
        }
    }
}

fn pose_error(a: &Pose2, b: &Pose2) -> f64 {
    (a.x - b.x).hypot(a.y - b.y).max(wrap_angle(a.theta - b.theta).abs())
}

/// Re-simulates every committed path at resolution `dt` and reports all
/// findings. An empty report means the plan is accepted.
pub fn verify_paths(
    scene: &Scene,
    paths: &BTreeMap<String, TimedPath>,
    events: &BTreeMap<String, Vec<Event>>,
    dt: f64,
) -> VerifyReport {
    let mut findings = Vec::new();
    for id in paths.keys().chain(events.keys()) {
        if !scene.is_robot(id) && !scene.is_object(id) {
            findings.push(Finding::UnknownEntity { id: id.clone() });
        }
    }
    if !findings.is_empty() {
        return VerifyReport { findings, samples: 0 };
    }
    let sim = Sim { scene, paths };

    for (id, path) in paths {
        for (k, w) in path.knots.windows(2).enumerate() {
            let dt_seg = w[1].t - w[0].t;
            if !(dt_seg > 0.0) {
                findings.push(Finding::NonIncreasingTime {
                    entity: id.clone(),
                    segment: k,
                });
                continue;
            }
            let (a, b) = (w[0].q.pose(), w[1].q.pose());
            let lin = (b.x - a.x).hypot(b.y - a.y) / dt_seg;
            let ang = wrap_angle(b.theta - a.theta).abs() / dt_seg;
            if let Some(r) = scene.robot(id) {
                if lin > r.v_max + TOL_SPEED {
                    findings.push(Finding::SpeedViolation {
                        entity: id.clone(),
                        segment: k,
                        speed: lin,
                        limit: r.v_max,
                    });
                }
                if ang > r.omega_max + TOL_SPEED {
                    findings.push(Finding::SpeedViolation {
                        entity: id.clone(),
                        segment: k,
                        speed: ang,
                        limit: r.omega_max,
                    });
                }
            } else {
                match path.attachments.get(k).and_then(|a| a.as_ref()) {
                    Some(att) if scene.is_robot(&att.robot) => {
                        for (t, pose) in [(w[0].t, a), (w[1].t, b)] {
                            let err = pose_error(&sim.gripper(&att.robot, t).compose(&att.grasp), &pose);
                            if err > TOL_POSE {
                                findings.push(Finding::GraspDrift {
                                    object: id.clone(),
                                    segment: k,
                                    error: err,
                                });
                            }
                        }
                    }
                    Some(att) => findings.push(Finding::UnknownEntity { id: att.robot.clone() }),
                    None => {
                        if pose_error(&a, &b) > TOL_POSE {
                            findings.push(Finding::UnpoweredMotion {
                                object: id.clone(),
                                segment: k,
                            });
                        }
                    }
                }
            }
        }
    }

    let end = paths.values().filter_map(|p| p.knots.last()).map(|k| k.t).fold(0.0, f64::max);
    for o in &scene.objects {
        let (pose, _) = sim.object_pose(&o.id, f64::INFINITY.min(end + 1.0));
        let err = pose_error(&pose, &o.goal_pose);
        if err > TOL_POSE {
            findings.push(Finding::FinalPose {
                object: o.id.clone(),
                error: err,
            });
        }
    }

    let mut place_counts: BTreeMap<&str, usize> = scene.objects.iter().map(|o| (o.id.as_str(), 0)).collect();
    for (robot, evs) in events {
        for (i, w) in evs.windows(2).enumerate() {
            if w[1].start < w[0].end - 1e-9 {
                findings.push(Finding::EventOverlap {
                    robot: robot.clone(),
                    index: i + 1,
                });
            }
        }
        for (i, e) in evs.iter().enumerate() {
            if e.end < e.start {
                findings.push(Finding::EventOverlap {
                    robot: robot.clone(),
                    index: i,
                });
            }
            if e.action == ActionKind::Place {
                *place_counts.entry(e.object.as_str()).or_default() += 1;
            }
        }
    }
    for (o, c) in place_counts {
        if c != 1 {
            findings.push(Finding::PlaceCount {
                object: o.to_owned(),
                count: c,
            });
        }
    }

    let statics: Vec<Shape> = scene.static_obstacles.iter().map(|b| Shape::Box(b.as_box())).collect();
    let n = (end / dt).ceil() as usize;
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    let mut bodies: Vec<(Shape, &str, Option<&str>, (f64, f64))> = Vec::new();
    for k in 0..=n {
        let t = (k as f64 * dt).min(end);
        bodies.clear();
        for r in &scene.robots {
            let p = sim.robot_pose(&r.id, t);
            if !r.operating_region.contains([p.x, p.y]) && seen.insert((r.id.clone(), "region".into())) {
                findings.push(Finding::OutsideRegion { t, robot: r.id.clone() });
            }
            let s = Shape::disc([p.x, p.y], r.base_radius);
            bodies.push((s, &r.id, None, s.x_extent()));
        }
        for o in &scene.objects {
            let (p, carrier) = sim.object_pose(&o.id, t);
            let s = o.shape_at(p);
            bodies.push((s, &o.id, carrier, s.x_extent()));
        }
        bodies.sort_by(|a, b| a.3 .0.total_cmp(&b.3 .0));
        for i in 0..bodies.len() {
            let (sa, ida, ca, ea) = bodies[i];
            for &(sb, idb, cb, eb) in &bodies[i + 1..] {
                if eb.0 > ea.1 {
                    break;
                }
                if ca == Some(idb) || cb == Some(ida) {
                    continue;
                }
                let d = signed_distance(&sa, &sb);
                if d < 0.0 {
                    let key = if ida < idb { (ida, idb) } else { (idb, ida) };
                    let key = (key.0.to_owned(), key.1.to_owned());
                    if seen.insert(key.clone()) {
                        findings.push(Finding::Collision {
                            t,
                            a: key.0,
                            b: key.1,
                            depth: -d,
                        });
                    }
                }
            }
            for st in &statics {
                let d = signed_distance(&sa, st);
                if d < 0.0 && seen.insert((ida.to_owned(), "static".into())) {
                    findings.push(Finding::Collision {
                        t,
                        a: ida.to_owned(),
                        b: "static".into(),
                        depth: -d,
                    });
                }
            }
        }
        if k as f64 * dt >= end {
            break;
        }
    }
    VerifyReport {
        findings,
        samples: n + 1,
    }
}
