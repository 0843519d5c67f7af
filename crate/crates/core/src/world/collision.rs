//! Time-dependent collision queries against a committed plan.

use std::collections::BTreeMap;

use crate::geometry::{within, Pose2, Shape};
use crate::world::path::Knot;
use crate::world::plan_state::PlanState;
use crate::world::scene::{Config, ObjectSpec, RobotSpec, Scene};

/// Object held by a robot that is part of the query.
#[derive(Debug, Clone, PartialEq)]
pub struct CarriedObject {
    pub pose: Pose2,
    pub carrier: String,
}

/// An object rigidly attached to the gripper of the robot being swept.
#[derive(Debug, Clone, PartialEq)]
pub struct Carry {
    pub object: String,
    /// Object pose in the gripper frame.
    pub grasp: Pose2,
}

impl Carry {
    pub fn object_pose(&self, robot: &RobotSpec, q: &Config) -> Pose2 {
        q.gripper_pose(robot.gripper_offset).compose(&self.grasp)
    }
}

/// Distance bound from the robot base center to any point of a carried object.
pub fn carry_reach(robot: &RobotSpec, object: &ObjectSpec, grasp: &Pose2) -> f64 {
    robot.gripper_offset + grasp.x.hypot(grasp.y) + object.half_diagonal()
}

struct Probe<'a> {
    id: &'a str,
    shape: Shape,
    inflate: f64,
    carrier: Option<&'a str>,
    region: Option<&'a RobotSpec>,
}

/// Largest speed of any point of `object` over `[t0, t1]` along its committed path.
fn object_point_speed(plan: &PlanState, scene: &Scene, object: &ObjectSpec, t0: f64, t1: f64) -> f64 {
    let Some(path) = plan.committed.get(&object.id) else {
        return 0.0;
    };
    if path.knots.len() < 2 || t1 < path.start_time() || t0 > path.end_time() {
        return 0.0;
    }
    let lo = path.knots.partition_point(|k| k.t <= t0).saturating_sub(1);
    let mut speed: f64 = 0.0;
    for k in lo..path.segment_count() {
        let (a, b) = (&path.knots[k], &path.knots[k + 1]);
        if a.t > t1 {
            break;
        }
        let s = match path.attachment(k).and_then(|att| scene.robot(&att.robot).map(|r| (r, att))) {
            Some((carrier, att)) => {
                let (v, w) = plan
                    .committed
                    .get(&carrier.id)
                    .map_or((0.0, 0.0), |p| p.max_rates(a.t.max(t0), b.t.min(t1)));
                v + w * carry_reach(carrier, object, &att.grasp)
            }
            None => {
                let dt = b.t - a.t;
                (a.q.translation_to(&b.q) + a.q.rotation_to(&b.q) * object.half_diagonal()) / dt
            }
        };
        speed = speed.max(s);
    }
    speed
}

fn upper_speed_bound(scene: &Scene) -> (f64, f64) {
    let v = scene.robots.iter().map(|r| r.v_max).fold(0.0, f64::max);
    let w = scene
        .robots
        .iter()
        .map(|r| r.omega_max * (r.gripper_offset + 2.0 * max_half_diag(scene)))
        .fold(0.0, f64::max);
    (v, v + w)
}

fn max_half_diag(scene: &Scene) -> f64 {
    scene
        .objects
        .iter()
        .map(ObjectSpec::half_diagonal)
        .fold(0.0, f64::max)
}

/// Core check. With `half_step = Some(h)`, every committed entity is inflated
/// by its own largest point speed near `t` times `h / 2`.
fn probes_clear(plan: &PlanState, scene: &Scene, probes: &[Probe], t: f64, half_step: Option<f64>) -> bool {
    for p in probes {
        if let Some(robot) = p.region {
            if !robot.operating_region.contains(p.shape.center()) {
                return false;
            }
        }
    }
    for (i, a) in probes.iter().enumerate() {
        for b in &probes[i + 1..] {
            if a.carrier == Some(b.id) || b.carrier == Some(a.id) {
                continue;
            }
            if within(&a.shape, &b.shape, a.inflate + b.inflate) {
                return false;
            }
        }
    }
    let in_probes = |id: &str| probes.iter().any(|p| p.id == id);
    let probe_inflate = probes.iter().map(|p| p.inflate).fold(0.0, f64::max);
    let (robot_ub, object_ub) = match half_step {
        Some(h) => {
            let (v, o) = upper_speed_bound(scene);
            (v * h, o * h)
        }
        None => (0.0, 0.0),
    };

    for obstacle in &scene.static_obstacles {
        let shape = obstacle.as_box();
        let shape = Shape::Box(shape);
        if probes.iter().any(|p| within(&p.shape, &shape, p.inflate)) {
            return false;
        }
    }

    for robot in &scene.robots {
        if in_probes(&robot.id) {
            continue;
        }
        let shape = robot.shape_at(&plan.robot_config(robot, t));
        for p in probes {
            if !within(&p.shape, &shape, p.inflate + robot_ub) {
                continue;
            }
            let extra = match half_step {
                Some(h) => {
                    let (v, _) = plan
                        .committed
                        .get(&robot.id)
                        .map_or((0.0, 0.0), |path| path.max_rates(t - h, t + h));
                    v * h * 0.5
                }
                None => 0.0,
            };
            if within(&p.shape, &shape, p.inflate + extra) {
                return false;
            }
        }
    }

    for object in &scene.objects {
        if in_probes(&object.id) {
            continue;
        }
        let pose = plan.object_pose(scene, object, t);
        let shape = object.shape_at(pose);
        let mut speed = None;
        for p in probes {
            if !within(&p.shape, &shape, p.inflate.max(probe_inflate) + object_ub) {
                continue;
            }
            let extra = match half_step {
                Some(h) => {
                    let s = *speed.get_or_insert_with(|| object_point_speed(plan, scene, object, t - h, t + h));
                    s * h * 0.5
                }
                None => 0.0,
            };
            if within(&p.shape, &shape, p.inflate + extra) {
                return false;
            }
        }
    }
    true
}

/// True iff the given robots and carried objects at time `t` overlap nothing:
/// each other, every other entity evaluated along the plan, or static
/// obstacles; and every robot base lies in its operating region.
pub fn collision_free(
    plan: &PlanState,
    scene: &Scene,
    moving: &BTreeMap<String, Config>,
    carried: &BTreeMap<String, CarriedObject>,
    t: f64,
) -> bool {
    let mut probes = Vec::with_capacity(moving.len() + carried.len());
    for (id, q) in moving {
        let Some(robot) = scene.robot(id) else {
            return false;
        };
        probes.push(Probe {
            id,
            shape: robot.shape_at(q),
            inflate: 0.0,
            carrier: None,
            region: Some(robot),
        });
    }
    for (id, c) in carried {
        let Some(object) = scene.object(id) else {
            return false;
        };
        probes.push(Probe {
            id,
            shape: object.shape_at(c.pose),
            inflate: 0.0,
            carrier: Some(&c.carrier),
            region: None,
        });
    }
    probes_clear(plan, scene, &probes, t, None)
}

/// Default sampling step for edge checks, seconds.
pub const DT_CHECK: f64 = 0.05;

/// Conservative continuous-time check of one robot moving linearly between
/// two knots, optionally carrying an object. The segment is sampled at most
/// `dt_check` apart and every body is inflated by half the distance its
/// fastest point can travel between samples.
pub fn sweep_collision_free(
    plan: &PlanState,
    scene: &Scene,
    robot: &RobotSpec,
    from: &Knot,
    to: &Knot,
    carry: Option<&Carry>,
    dt_check: f64,
) -> bool {
    let duration = to.t - from.t;
    let carried_object = match carry {
        Some(c) => match scene.object(&c.object) {
            Some(o) => Some((o, c)),
            None => return false,
        },
        None => None,
    };
    if duration <= 0.0 {
        return point_clear(plan, scene, robot, &from.q, from.t, carried_object);
    }
    let n = (duration / dt_check).ceil().max(1.0) as usize;
    let h = duration / n as f64;
    let v = from.q.translation_to(&to.q) / duration;
    let w = from.q.rotation_to(&to.q) / duration;
    let robot_inflate = 0.5 * v * h;
    let object_inflate = carried_object.map_or(0.0, |(o, c)| {
        0.5 * (v + w * carry_reach(robot, o, &c.grasp)) * h
    });
    for k in 0..=n {
        let s = k as f64 / n as f64;
        let t = if k == n { to.t } else { from.t + s * duration };
        let q = if k == n { to.q } else { from.q.lerp(&to.q, s) };
        let mut probes = vec![Probe {
            id: &robot.id,
            shape: robot.shape_at(&q),
            inflate: robot_inflate,
            carrier: None,
            region: Some(robot),
        }];
        if let Some((o, c)) = carried_object {
            probes.push(Probe {
                id: &o.id,
                shape: o.shape_at(c.object_pose(robot, &q)),
                inflate: object_inflate,
                carrier: Some(&robot.id),
                region: None,
            });
        }
        if !probes_clear(plan, scene, &probes, t, Some(h)) {
            return false;
        }
    }
    true
}

/// Exact check of one robot (and its carried object) at a single instant.
pub fn point_clear(
    plan: &PlanState,
    scene: &Scene,
    robot: &RobotSpec,
    q: &Config,
    t: f64,
    carried: Option<(&ObjectSpec, &Carry)>,
) -> bool {
    let mut probes = vec![Probe {
        id: &robot.id,
        shape: robot.shape_at(q),
        inflate: 0.0,
        carrier: None,
        region: Some(robot),
    }];
    if let Some((o, c)) = carried {
        probes.push(Probe {
            id: &o.id,
            shape: o.shape_at(c.object_pose(robot, q)),
            inflate: 0.0,
            carrier: Some(&robot.id),
            region: None,
        });
    }
    probes_clear(plan, scene, &probes, t, None)
}

/// Conservative check that `object`, resting at `pose`, stays clear of the
/// plan over `[t0, t1]`.
pub fn static_object_clear(
    plan: &PlanState,
    scene: &Scene,
    object: &ObjectSpec,
    pose: Pose2,
    t0: f64,
    t1: f64,
    dt_check: f64,
) -> bool {
    let probes = [Probe {
        id: &object.id,
        shape: object.shape_at(pose),
        inflate: 0.0,
        carrier: None,
        region: None,
    }];
    let duration = (t1 - t0).max(0.0);
    let n = (duration / dt_check).ceil().max(1.0) as usize;
    let h = duration / n as f64;
    (0..=n).all(|k| {
        let t = if k == n { t0 + duration } else { t0 + h * k as f64 };
        probes_clear(plan, scene, &probes, t, (h > 0.0).then_some(h))
    })
}
