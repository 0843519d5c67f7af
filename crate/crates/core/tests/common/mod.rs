//! Independent oracles shared by the integration tests. Nothing here calls
//! into the planner's own geometry or distance code.

#![allow(dead_code)]

use std::f64::consts::{PI, TAU};

use rand::Rng;
use spacetime_assembly::geometry::{Aabb, Pose2};
use spacetime_assembly::world::{Config, Knot, ObjectSpec, PlanState, RobotSpec, Scene, TimedPath, GROUND};

pub fn wrap(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}

/// Reference space-time distance: position metric plus 0.3 m per radian.
pub fn oracle_distance(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64), lambda: f64, v_max: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let dt = b.3 - a.3;
    if dt <= 0.0 {
        return f64::INFINITY;
    }
    let dq = (b.0 - a.0).hypot(b.1 - a.1) + 0.3 * wrap(b.2 - a.2).abs();
    if dq / dt > v_max {
        return f64::INFINITY;
    }
    lambda * dq + (1.0 - lambda) * dt
}

pub fn block(id: &str, start: Pose2, goal: Pose2) -> ObjectSpec {
    ObjectSpec {
        id: id.into(),
        width: 0.2,
        height: 0.2,
        start_pose: start,
        goal_pose: goal,
        grasp_sites: vec![[0.1, 0.0], [-0.1, 0.0], [0.0, 0.1], [0.0, -0.1]],
    }
}

pub fn robot(id: &str, home: Config, region: Aabb) -> RobotSpec {
    RobotSpec {
        id: id.into(),
        base_radius: 0.15,
        gripper_offset: 0.3,
        v_max: 1.0,
        omega_max: 2.0,
        operating_region: region,
        home_config: home,
    }
}

/// Distance from a point to an axis-aligned box; zero inside.
pub fn point_box_distance(p: [f64; 2], min: [f64; 2], max: [f64; 2]) -> f64 {
    let dx = (min[0] - p[0]).max(0.0).max(p[0] - max[0]);
    let dy = (min[1] - p[1]).max(0.0).max(p[1] - max[1]);
    dx.hypot(dy)
}

pub fn boxes_overlap(a_min: [f64; 2], a_max: [f64; 2], b_min: [f64; 2], b_max: [f64; 2]) -> bool {
    a_min[0] < b_max[0] && b_min[0] < a_max[0] && a_min[1] < b_max[1] && b_min[1] < a_max[1]
}

/// Axis-aligned footprint of a block whose heading is a multiple of 90 degrees.
pub fn block_box(o: &ObjectSpec, pose: Pose2) -> ([f64; 2], [f64; 2]) {
    let quarter = (wrap(pose.theta) / (PI / 2.0)).round() as i64;
    let (w, h) = if quarter % 2 == 0 {
        (o.width, o.height)
    } else {
        (o.height, o.width)
    };
    (
        [pose.x - w / 2.0, pose.y - h / 2.0],
        [pose.x + w / 2.0, pose.y + h / 2.0],
    )
}

/// Linear interpolation of a knot list, held at the ends.
pub fn interpolate(knots: &[Knot], t: f64) -> [f64; 2] {
    let first = knots.first().expect("non-empty path");
    if t <= first.t {
        return [first.q.x, first.q.y];
    }
    for w in knots.windows(2) {
        if t <= w[1].t {
            let s = (t - w[0].t) / (w[1].t - w[0].t);
            return [
                w[0].q.x + s * (w[1].q.x - w[0].q.x),
                w[0].q.y + s * (w[1].q.y - w[0].q.y),
            ];
        }
    }
    let last = knots.last().unwrap();
    [last.q.x, last.q.y]
}

/// A small world for fuzzing motion checks: two static boxes, one block
/// resting at its goal, and a second robot on a committed zig-zag.
pub struct FuzzWorld {
    pub scene: Scene,
    pub plan: PlanState,
}

pub fn fuzz_world(rng: &mut impl Rng) -> FuzzWorld {
    let region = Aabb::new([-3.0, -3.0], [3.0, 3.0]);
    let b1 = Aabb::new([-1.2, 0.4], [-0.4, 0.9]);
    let b2 = Aabb::new([0.6, -1.5], [1.0, -0.3]);
    let goal = Pose2::new(rng.gen_range(-0.5..0.5), rng.gen_range(1.6..2.2), 0.0);
    let scene = Scene::new(
        vec![block("o", Pose2::new(2.5, 2.5, 0.0), goal)],
        vec![
            robot("r0", Config::new(-2.5, -2.5, 0.0), region),
            robot("r1", Config::new(2.5, -2.5, 0.0), region),
        ],
        vec![b1, b2],
        vec![(GROUND.into(), "o".into())],
    )
    .expect("fuzz scene is valid");
    let mut plan = PlanState::new();
    plan.commit(
        "o",
        &TimedPath::single(0.0, Config::from_pose(goal, false)),
    );
    plan.placed.push("o".into());
    let mut knots = vec![Knot::new(0.0, Config::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..0.0), 0.0))];
    for _ in 0..6 {
        let prev = *knots.last().unwrap();
        let q = Config::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.5..1.2), 0.0);
        let d = prev.q.translation_to(&q);
        let v = rng.gen_range(0.3..1.0);
        knots.push(Knot::new(prev.t + (d / v).max(0.1), q));
    }
    plan.commit("r1", &TimedPath { knots, attachments: vec![] });
    FuzzWorld { scene, plan }
}

/// Random straight segment for `r0`, roughly half of them aimed through an obstacle.
pub fn fuzz_segment(rng: &mut impl Rng) -> (Knot, Knot) {
    let a = Config::new(rng.gen_range(-2.8..2.8), rng.gen_range(-2.8..2.8), rng.gen_range(-PI..PI));
    let target = if rng.gen_bool(0.5) {
        [rng.gen_range(-1.2..1.0), rng.gen_range(-1.5..0.9)]
    } else {
        [rng.gen_range(-2.8..2.8), rng.gen_range(-2.8..2.8)]
    };
    let b = Config::new(target[0], target[1], rng.gen_range(-PI..PI));
    let d = a.translation_to(&b);
    let rot = wrap(b.theta - a.theta).abs();
    let speed = rng.gen_range(0.2..1.0);
    let dur = (d / speed).max(rot / (2.0 * speed)).max(0.01);
    let t0 = rng.gen_range(0.0..6.0);
    (Knot::new(t0, a), Knot::new(t0 + dur, b))
}

/// True iff the robot disc stays in its region and clear of every box,
/// block and other robot when sampled every `dt` along the segment.
pub fn oracle_segment_clear(w: &FuzzWorld, robot: &RobotSpec, from: &Knot, to: &Knot, dt: f64) -> bool {
    let n = ((to.t - from.t) / dt).ceil().max(1.0) as usize;
    let other = w.scene.robots.iter().find(|r| r.id != robot.id).unwrap();
    let other_knots = &w.plan.committed[&other.id].knots;
    let o = &w.scene.objects[0];
    let (omin, omax) = block_box(o, o.goal_pose);
    for k in 0..=n {
        let s = k as f64 / n as f64;
        let t = from.t + s * (to.t - from.t);
        let c = [from.q.x + s * (to.q.x - from.q.x), from.q.y + s * (to.q.y - from.q.y)];
        let reg = &robot.operating_region;
        if c[0] < reg.min[0] || c[0] > reg.max[0] || c[1] < reg.min[1] || c[1] > reg.max[1] {
            return false;
        }
        for b in &w.scene.static_obstacles {
            if point_box_distance(c, b.min, b.max) < robot.base_radius {
                return false;
            }
        }
        if point_box_distance(c, omin, omax) < robot.base_radius {
            return false;
        }
        let p = interpolate(other_knots, t);
        if (p[0] - c[0]).hypot(p[1] - c[1]) < robot.base_radius + other.base_radius {
            return false;
        }
    }
    true
}

/// Brute-force verdict for a one-robot, one-object pick and place: robot
/// bases on a 21 x 21 grid over the region times 8 headings. A grid cell
/// that brings the gripper within reach of a grasp site is snapped onto the
/// site; the grasp then fixes the place configuration. Feasible iff some
/// grasp gives a pick and a place with the base in the region and the base
/// and the carried block clear of every static box.
pub fn grid_oracle_feasible(scene: &Scene) -> bool {
    let r = &scene.robots[0];
    let o = &scene.objects[0];
    let reg = &r.operating_region;
    let n = 21;
    let hx = (reg.max[0] - reg.min[0]) / (n - 1) as f64;
    let hy = (reg.max[1] - reg.min[1]) / (n - 1) as f64;
    let tol = 0.5 * hx.hypot(hy);
    let inside = |c: [f64; 2]| c[0] >= reg.min[0] && c[0] <= reg.max[0] && c[1] >= reg.min[1] && c[1] <= reg.max[1];
    let base_clear = |c: [f64; 2]| {
        scene
            .static_obstacles
            .iter()
            .all(|b| point_box_distance(c, b.min, b.max) >= r.base_radius)
    };
    let block_clear = |pose: Pose2| {
        let (lo, hi) = block_box(o, pose);
        scene.static_obstacles.iter().all(|b| !boxes_overlap(lo, hi, b.min, b.max))
    };
    if !block_clear(o.start_pose) || !block_clear(o.goal_pose) {
        return false;
    }
    let world = |pose: Pose2, p: [f64; 2]| {
        let (s, c) = pose.theta.sin_cos();
        [pose.x + c * p[0] - s * p[1], pose.y + s * p[0] + c * p[1]]
    };
    for ix in 0..n {
        for iy in 0..n {
            for k in 0..8 {
                let th = wrap(TAU * k as f64 / 8.0);
                let dir = [th.cos(), th.sin()];
                let base = [reg.min[0] + hx * ix as f64, reg.min[1] + hy * iy as f64];
                let grip = [base[0] + r.gripper_offset * dir[0], base[1] + r.gripper_offset * dir[1]];
                for site in &o.grasp_sites {
                    let sp = world(o.start_pose, *site);
                    if (sp[0] - grip[0]).hypot(sp[1] - grip[1]) > tol {
                        continue;
                    }
                    let pick = [sp[0] - r.gripper_offset * dir[0], sp[1] - r.gripper_offset * dir[1]];
                    if !inside(pick) || !base_clear(pick) {
                        continue;
                    }
                    let gp = world(o.goal_pose, *site);
                    let th_place = th + (o.goal_pose.theta - o.start_pose.theta);
                    let place = [
                        gp[0] - r.gripper_offset * th_place.cos(),
                        gp[1] - r.gripper_offset * th_place.sin(),
                    ];
                    if inside(place) && base_clear(place) {
                        return true;
                    }
                }
            }
        }
    }
    false
}

/// Randomized one-robot instance. `kind` 0: open space; 1: goal beyond the
/// region's reach; 2: goal walled in so no base fits within reach.
pub fn keyframe_instance(kind: usize, rng: &mut impl Rng) -> Scene {
    let (w, h) = (rng.gen_range(2.5..4.0), rng.gen_range(2.5..4.0));
    let region = Aabb::new([-w / 2.0, -h / 2.0], [w / 2.0, h / 2.0]);
    let start = Pose2::new(rng.gen_range(-0.3..0.0) - w / 4.0, rng.gen_range(-0.5..0.5), 0.0);
    let quarter = if rng.gen_bool(0.5) { 0.0 } else { PI / 2.0 };
    let mut obstacles = Vec::new();
    let goal = match kind {
        0 => Pose2::new(w / 4.0 + rng.gen_range(-0.3..0.3), rng.gen_range(-0.5..0.5), quarter),
        1 => {
            let gap = rng.gen_range(0.6..1.5);
            Pose2::new(w / 2.0 + gap, rng.gen_range(-0.5..0.5), quarter)
        }
        _ => {
            let g = Pose2::new(w / 4.0 + rng.gen_range(-0.2..0.2), rng.gen_range(-0.4..0.4), quarter);
            let (i, o) = (rng.gen_range(0.12..0.18), rng.gen_range(0.5..0.6));
            obstacles.push(Aabb::new([g.x - o, g.y + i], [g.x + o, g.y + o]));
            obstacles.push(Aabb::new([g.x - o, g.y - o], [g.x + o, g.y - i]));
            obstacles.push(Aabb::new([g.x - o, g.y - i], [g.x - i, g.y + i]));
            obstacles.push(Aabb::new([g.x + i, g.y - i], [g.x + o, g.y + i]));
            g
        }
    };
    let home = Config::new(start.x, -h / 2.0 + 0.3, PI / 2.0);
    Scene::new(
        vec![block("o", start, goal)],
        vec![robot("r", home, region)],
        obstacles,
        vec![(GROUND.into(), "o".into())],
    )
    .expect("instance is valid")
}
