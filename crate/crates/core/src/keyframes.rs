//! Time-embedded keyframes: sample switch times for a skeleton and solve all
//! of its mode-switch configurations jointly by damped least squares with
//! random restarts.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bounding_gap, signed_distance, wrap_angle, Aabb, Pose2, Shape};
use crate::skeletons::{ActionKind, Skeleton};
use crate::world::{point_clear, sweep_collision_free, Attachment, Carry, Config, Knot, ObjectSpec, PlanState, RobotSpec, Scene, DT_CHECK};

/// Tolerance on every residual of an accepted keyframe set.
pub const TOL_KF: f64 = 1e-6;

/// Weight converting radians into meters in configuration distances.
pub const ANGLE_WEIGHT: f64 = 0.3;

/// One object, a robot team and a skeleton, with everything else frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct SubProblem {
    pub object: String,
    pub robots: Vec<String>,
    pub skeleton: Skeleton,
    /// Earliest free time over the team.
    pub t_bar: f64,
    /// Where and when each team member becomes free.
    pub ready: BTreeMap<String, Knot>,
    /// The place switch must happen strictly after this time.
    pub place_after: f64,
}

impl SubProblem {
    pub fn new(scene: &Scene, plan: &PlanState, object: &str, robots: &[String], skeleton: Skeleton) -> Result<Self> {
        if !scene.is_object(object) {
            return Err(Error::UnknownEntity(object.to_owned()));
        }
        let mut ready = BTreeMap::new();
        for r in robots {
            let spec = scene.robot(r).ok_or_else(|| Error::UnknownEntity(r.clone()))?;
            let t = plan.horizon(r);
            ready.insert(r.clone(), Knot::new(t, plan.robot_config(spec, t)));
        }
        let t_bar = ready.values().map(|k| k.t).fold(f64::INFINITY, f64::min);
        let mut robots = robots.to_vec();
        robots.sort();
        Ok(Self {
            object: object.to_owned(),
            robots,
            skeleton,
            t_bar: if t_bar.is_finite() { t_bar } else { 0.0 },
            ready,
            place_after: 0.0,
        })
    }

    fn place_index(&self) -> Option<usize> {
        self.skeleton
            .actions
            .iter()
            .position(|a| a.kind == ActionKind::Place)
    }
}

/// Switch times aligned with the skeleton's actions. A handover has one
/// time shared by giver and receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchTimeSample {
    pub action_times: Vec<f64>,
    pub window: f64,
}

impl SwitchTimeSample {
    /// The times of the switches `robot` takes part in, in order.
    pub fn robot_times(&self, skeleton: &Skeleton, robot: &str) -> Vec<f64> {
        skeleton
            .actions
            .iter()
            .zip(&self.action_times)
            .filter(|(a, _)| a.robots().any(|r| r == robot))
            .map(|(_, t)| *t)
            .collect()
    }
}

fn sorted_draws(rng: &mut impl Rng, n: usize, lo: f64, window: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| lo + window * (1.0 - rng.gen::<f64>())).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Per robot, sorted uniform draws in `(T_r, T_r + window]`; handovers take
/// the giver's draw and later switches of the receiver are redrawn after it.
pub fn sample_switch_times(sub: &SubProblem, window: f64, rng: &mut impl Rng) -> SwitchTimeSample {
    let acts = &sub.skeleton.actions;
    let mut times = vec![f64::NAN; acts.len()];
    for r in &sub.robots {
        let idx: Vec<usize> = (0..acts.len())
            .filter(|&i| acts[i].robots().any(|x| x == r) && acts[i].receiver.as_deref() != Some(r))
            .collect();
        let lo = sub.ready.get(r).map_or(sub.t_bar, |k| k.t);
        for (i, t) in idx.iter().zip(sorted_draws(rng, idx.len(), lo, window)) {
            times[*i] = t;
        }
    }
    // Redraw any tail that is not strictly after its predecessor.
    for i in 1..acts.len() {
        let mut lo = times[i - 1];
        if Some(i) == sub.place_index() {
            lo = lo.max(sub.place_after);
        }
        if !(times[i] > lo) {
            let tail = sorted_draws(rng, acts.len() - i, lo, window);
            times[i..].copy_from_slice(&tail);
        }
    }
    SwitchTimeSample {
        action_times: times,
        window,
    }
}

/// Slot-aligned times for the fixed-step baseline: action `i` happens at
/// `(k + i) * t_fix` with `k` the first slot after every member is free.
pub fn fixed_switch_times(sub: &SubProblem, t_fix: f64, slot_offset: usize) -> SwitchTimeSample {
    let free = sub.ready.values().map(|k| k.t).fold(sub.t_bar, f64::max);
    let mut k = (free / t_fix).floor() as usize + 1 + slot_offset;
    if let Some(p) = sub.place_index() {
        while ((k + p) as f64) * t_fix <= sub.place_after {
            k += 1;
        }
    }
    SwitchTimeSample {
        action_times: (0..sub.skeleton.actions.len())
            .map(|i| (k + i) as f64 * t_fix)
            .collect(),
        window: t_fix,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualKind {
    Grasp,
    Placement,
    HandoverSync,
    Region,
    Goal,
    Collision,
    Reach,
}

impl ResidualKind {
    pub fn is_equality(&self) -> bool {
        matches!(
            self,
            ResidualKind::Grasp | ResidualKind::Placement | ResidualKind::HandoverSync | ResidualKind::Goal
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintResidual {
    pub kind: ResidualKind,
    /// Index of the skeleton action the residual belongs to.
    pub action: usize,
    pub value: Vec<f64>,
}

impl ConstraintResidual {
    pub fn norm(&self) -> f64 {
        self.value.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    /// Weight of squared keyframe displacement.
    pub switch: f64,
    /// Weight of path length.
    pub length: f64,
    /// Weight of makespan contribution.
    pub makespan: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            switch: 1.0,
            length: 0.5,
            makespan: 0.5,
        }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [self.switch, self.length, self.makespan];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || all.iter().all(|w| *w == 0.0) {
            return Err(Error::InvalidConfig("cost weights must be non-negative and not all zero".into()));
        }
        Ok(())
    }
}

/// Solved configuration(s) at one switch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub t: f64,
    pub configs: BTreeMap<String, Config>,
    pub object_pose: Pose2,
    /// Holder of the object right after this switch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holder: Option<Attachment>,
    /// Grasp site used by the holder after this switch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeSet {
    pub keyframes: Vec<Keyframe>,
    pub times: SwitchTimeSample,
    pub cost: f64,
    pub restart: usize,
}

impl KeyframeSet {
    /// Configuration of `robot` at its `j`-th switch.
    pub fn config(&self, skeleton: &Skeleton, robot: &str, j: usize) -> Option<Config> {
        skeleton
            .actions
            .iter()
            .zip(&self.keyframes)
            .filter(|(a, _)| a.robots().any(|r| r == robot))
            .nth(j)
            .and_then(|(_, k)| k.configs.get(robot).copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeyframeOptions {
    pub restarts: usize,
    /// Stop after this many feasible restarts and keep the cheapest.
    pub keep: usize,
    pub max_iterations: usize,
    /// Clearance demanded by the collision hinges.
    pub margin: f64,
    /// Clearance between a resting robot and any goal or pending start footprint.
    pub rest_clearance: f64,
}

impl Default for KeyframeOptions {
    fn default() -> Self {
        Self {
            restarts: 20,
            keep: 4,
            max_iterations: 60,
            margin: 0.02,
            rest_clearance: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Prev {
    Fixed(Knot),
    Var(usize, f64),
}

#[derive(Debug, Clone)]
struct Slot<'a> {
    robot: &'a RobotSpec,
    var: usize,
    prev: Prev,
}

/// Variable layout plus the frozen environment at every switch time.
struct Problem<'a> {
    object: &'a ObjectSpec,
    actions: Vec<(ActionKind, Vec<Slot<'a>>, Option<usize>)>,
    times: Vec<f64>,
    env: Vec<Vec<Shape>>,
    footprints: Vec<Shape>,
    n_vars: usize,
    margin: f64,
    rest_clearance: f64,
}

fn region_hinge(region: &Aabb, p: [f64; 2]) -> [f64; 2] {
    [
        (region.min[0] - p[0]).max(p[0] - region.max[0]).max(0.0),
        (region.min[1] - p[1]).max(p[1] - region.max[1]).max(0.0),
    ]
}

fn pose_residual(a: &Pose2, b: &Pose2) -> [f64; 3] {
    [a.x - b.x, a.y - b.y, wrap_angle(a.theta - b.theta)]
}

fn var_config(x: &[f64], i: usize) -> Config {
    Config::new(x[i], x[i + 1], x[i + 2])
}

/// Sum of hinge penalties between `shape` and every nearby shape.
fn clearance_hinge(shape: &Shape, others: &[Shape], margin: f64) -> f64 {
    let mut total = 0.0;
    for o in others {
        if bounding_gap(shape, o) >= margin {
            continue;
        }
        total += (margin - signed_distance(shape, o)).max(0.0);
    }
    total
}

impl<'a> Problem<'a> {
    fn build(
        scene: &'a Scene,
        plan: &PlanState,
        sub: &SubProblem,
        times: &SwitchTimeSample,
        opts: &KeyframeOptions,
    ) -> Result<Self> {
        let object = scene
            .object(&sub.object)
            .ok_or_else(|| Error::UnknownEntity(sub.object.clone()))?;
        let mut n_vars = 0;
        let mut last: BTreeMap<&str, Prev> = sub
            .ready
            .iter()
            .map(|(r, k)| (r.as_str(), Prev::Fixed(*k)))
            .collect();
        let mut actions = Vec::new();
        for (a, &t) in sub.skeleton.actions.iter().zip(&times.action_times) {
            let mut slots = Vec::new();
            for r in a.robots() {
                let robot = scene.robot(r).ok_or_else(|| Error::UnknownEntity(r.to_owned()))?;
                let prev = *last
                    .get(r)
                    .ok_or_else(|| Error::InvalidConfig(format!("robot `{r}` is not in the team")))?;
                slots.push(Slot { robot, var: n_vars, prev });
                last.insert(robot.id.as_str(), Prev::Var(n_vars, t));
                n_vars += 3;
            }
            let pose_var = (a.kind == ActionKind::Handover).then(|| {
                n_vars += 3;
                n_vars - 3
            });
            actions.push((a.kind, slots, pose_var));
        }

        // Only shapes that can come near the team matter.
        let mut reach = Aabb::new([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for r in &sub.robots {
            let spec = scene.robot(r).expect("checked above");
            let grow = spec.gripper_offset + 2.0 * object.half_diagonal() + spec.base_radius + 1.0;
            for k in 0..2 {
                reach.min[k] = reach.min[k].min(spec.operating_region.min[k] - grow);
                reach.max[k] = reach.max[k].max(spec.operating_region.max[k] + grow);
            }
        }
        let near = |s: &Shape| reach.distance_outside(s.center()) <= s.bounding_radius();
        let statics: Vec<Shape> = scene
            .static_obstacles
            .iter()
            .map(|b| Shape::Box(b.as_box()))
            .filter(near)
            .collect();
        let max_reach = sub
            .robots
            .iter()
            .filter_map(|r| scene.robot(r))
            .map(|r| r.gripper_offset + r.base_radius)
            .fold(0.0, f64::max)
            + object.half_diagonal()
            + 0.5;
        let env = times
            .action_times
            .iter()
            .zip(&sub.skeleton.actions)
            .map(|(&t, a)| {
                // Pick and place configurations are pinned near the object.
                let focus = match a.kind {
                    ActionKind::Pick => Some(object.start_pose.position()),
                    ActionKind::Place => Some(object.goal_pose.position()),
                    _ => None,
                };
                let close = |s: &Shape| {
                    near(s)
                        && focus.is_none_or(|c| bounding_gap(s, &Shape::disc(c, max_reach)) < 0.0)
                };
                let mut shapes = statics.clone();
                for r in &scene.robots {
                    let in_team = sub.ready.get(&r.id);
                    if in_team.is_some_and(|k| t >= k.t) {
                        continue;
                    }
                    shapes.push(r.shape_at(&plan.robot_config(r, t)));
                }
                for o in &scene.objects {
                    if o.id != object.id {
                        shapes.push(o.shape_at(plan.object_pose(scene, o, t)));
                    }
                }
                shapes.retain(close);
                shapes
            })
            .collect();
        let placed = plan.placed_set();
        let mut footprints = Vec::new();
        for o in &scene.objects {
            footprints.push(o.shape_at(o.goal_pose));
            if o.id != object.id && !placed.contains(o.id.as_str()) {
                footprints.push(o.shape_at(o.start_pose));
            }
        }
        footprints.retain(near);
        Ok(Self {
            object,
            actions,
            times: times.action_times.clone(),
            env,
            footprints,
            n_vars,
            margin: opts.margin,
            rest_clearance: opts.rest_clearance,
        })
    }

    /// Evaluates every residual block for the given variables and sites.
    fn residuals(&self, x: &[f64], sites: &[usize]) -> Vec<ConstraintResidual> {
        let o = self.object;
        let mut out = Vec::new();
        let mut push = |kind, action, value: Vec<f64>| out.push(ConstraintResidual { kind, action, value });
        let mut grasp = Pose2::identity();
        let mut site = 0usize;
        let mut pose = o.start_pose;
        for (i, (kind, slots, pose_var)) in self.actions.iter().enumerate() {
            let t = self.times[i];
            let cfgs: Vec<Config> = slots.iter().map(|s| var_config(x, s.var)).collect();
            for (s, q) in slots.iter().zip(&cfgs) {
                let h = region_hinge(&s.robot.operating_region, q.position());
                push(ResidualKind::Region, i, h.to_vec());
                let (pq, pt) = match s.prev {
                    Prev::Fixed(k) => (k.q, k.t),
                    Prev::Var(v, pt) => (var_config(x, v), pt),
                };
                let dt = (t - pt).max(0.0);
                push(
                    ResidualKind::Reach,
                    i,
                    vec![
                        (pq.translation_to(q) - s.robot.v_max * dt).max(0.0),
                        ANGLE_WEIGHT * (pq.rotation_to(q) - s.robot.omega_max * dt).max(0.0),
                    ],
                );
            }
            let mut bodies: Vec<Shape> = slots.iter().zip(&cfgs).map(|(s, q)| s.robot.shape_at(q)).collect();
            let g = |k: usize| slots[k].robot.gripper_offset;
            match kind {
                ActionKind::Pick => {
                    site = sites[i];
                    let gp = cfgs[0].gripper_point(g(0));
                    let sw = o.site_world(&pose, site);
                    push(ResidualKind::Grasp, i, vec![gp[0] - sw[0], gp[1] - sw[1]]);
                    grasp = cfgs[0].gripper_pose(g(0)).inverse().compose(&pose);
                }
                ActionKind::Handover => {
                    let pv = pose_var.expect("handover has a pose variable");
                    let ph = Pose2::new(x[pv], x[pv + 1], x[pv + 2]);
                    let carried = cfgs[0].gripper_pose(g(0)).compose(&grasp);
                    push(ResidualKind::HandoverSync, i, pose_residual(&carried, &ph).to_vec());
                    site = sites[i];
                    let gp = cfgs[1].gripper_point(g(1));
                    let sw = o.site_world(&ph, site);
                    push(ResidualKind::HandoverSync, i, vec![gp[0] - sw[0], gp[1] - sw[1]]);
                    grasp = cfgs[1].gripper_pose(g(1)).inverse().compose(&ph);
                    pose = ph;
                }
                ActionKind::Place => {
                    let gp = cfgs[0].gripper_point(g(0));
                    let sw = o.site_world(&o.goal_pose, site);
                    push(ResidualKind::Placement, i, vec![gp[0] - sw[0], gp[1] - sw[1]]);
                    let carried = cfgs[0].gripper_pose(g(0)).compose(&grasp);
                    push(ResidualKind::Goal, i, pose_residual(&carried, &o.goal_pose).to_vec());
                    pose = o.goal_pose;
                }
                ActionKind::Retract => {
                    let c = clearance_hinge(&bodies[0], &self.footprints, self.rest_clearance);
                    push(ResidualKind::Collision, i, vec![c]);
                }
            }
            let obj = o.shape_at(pose);
            let mut c = 0.0;
            for b in &bodies {
                c += clearance_hinge(b, &self.env[i], self.margin);
                c += clearance_hinge(b, std::slice::from_ref(&obj), self.margin);
            }
            if bodies.len() == 2 {
                c += clearance_hinge(&bodies[0], &bodies[1..], self.margin);
            }
            if *kind == ActionKind::Handover {
                c += clearance_hinge(&obj, &self.env[i], self.margin);
            }
            bodies.clear();
            push(ResidualKind::Collision, i, vec![c]);
        }
        out
    }

    fn flat(&self, x: &[f64], sites: &[usize]) -> DVector<f64> {
        let r = self.residuals(x, sites);
        DVector::from_iterator(
            r.iter().map(|c| c.value.len()).sum(),
            r.into_iter().flat_map(|c| c.value),
        )
    }

    /// Makes every equality hold exactly by re-deriving positions from
    /// headings, sites and the pick grasp.
    fn project(&self, x: &mut [f64], sites: &[usize]) {
        let o = self.object;
        let mut grasp = Pose2::identity();
        let mut site = 0;
        let mut pose = o.start_pose;
        let place_at = |x: &mut [f64], v: usize, g: f64, target: [f64; 2]| {
            let (s, c) = x[v + 2].sin_cos();
            x[v] = target[0] - g * c;
            x[v + 1] = target[1] - g * s;
        };
        for (i, (kind, slots, pose_var)) in self.actions.iter().enumerate() {
            match kind {
                ActionKind::Pick => {
                    site = sites[i];
                    let v = slots[0].var;
                    x[v + 2] = wrap_angle(x[v + 2]);
                    place_at(x, v, slots[0].robot.gripper_offset, o.site_world(&pose, site));
                    grasp = var_config(x, v)
                        .gripper_pose(slots[0].robot.gripper_offset)
                        .inverse()
                        .compose(&pose);
                }
                ActionKind::Handover => {
                    let pv = pose_var.expect("handover has a pose variable");
                    let ph = var_config(x, slots[0].var)
                        .gripper_pose(slots[0].robot.gripper_offset)
                        .compose(&grasp);
                    x[pv] = ph.x;
                    x[pv + 1] = ph.y;
                    x[pv + 2] = ph.theta;
                    site = sites[i];
                    let v = slots[1].var;
                    x[v + 2] = wrap_angle(x[v + 2]);
                    place_at(x, v, slots[1].robot.gripper_offset, o.site_world(&ph, site));
                    grasp = var_config(x, v)
                        .gripper_pose(slots[1].robot.gripper_offset)
                        .inverse()
                        .compose(&ph);
                    pose = ph;
                }
                ActionKind::Place => {
                    let v = slots[0].var;
                    x[v + 2] = wrap_angle(o.goal_pose.theta - grasp.theta);
                    place_at(x, v, slots[0].robot.gripper_offset, o.site_world(&o.goal_pose, site));
                }
                ActionKind::Retract => {}
            }
        }
    }

    fn random_init(&self, rng: &mut impl Rng) -> (Vec<f64>, Vec<usize>) {
        use std::f64::consts::PI;
        let o = self.object;
        let mut x = vec![0.0; self.n_vars];
        let mut sites = vec![0; self.actions.len()];
        let n_sites = o.grasp_sites.len();
        let mut held = 0;
        let mut grasp = Pose2::identity();
        let put = |x: &mut [f64], var: usize, q: Config| {
            x[var] = q.x;
            x[var + 1] = q.y;
            x[var + 2] = q.theta;
        };
        // Base pose whose gripper touches `site` of `pose` from outside, roughly head on.
        let touch = |rng: &mut dyn rand::RngCore, pose: &Pose2, site: usize, offset: f64| {
            let sw = o.site_world(pose, site);
            let c = pose.position();
            let heading = (c[1] - sw[1]).atan2(c[0] - sw[0]) + rng.gen_range(-0.3..0.3);
            Config::new(sw[0] - offset * heading.cos(), sw[1] - offset * heading.sin(), heading)
        };
        let carrier_base = |pose: &Pose2, grasp: &Pose2, offset: f64| {
            let gp = pose.compose(&grasp.inverse());
            Config::new(gp.x - offset * gp.theta.cos(), gp.y - offset * gp.theta.sin(), gp.theta)
        };
        for (i, (kind, slots, pose_var)) in self.actions.iter().enumerate() {
            for s in slots {
                let r = &s.robot.operating_region;
                x[s.var] = rng.gen_range(r.min[0]..=r.max[0]);
                x[s.var + 1] = rng.gen_range(r.min[1]..=r.max[1]);
                x[s.var + 2] = rng.gen_range(-PI..PI);
            }
            match kind {
                ActionKind::Pick => {
                    held = rng.gen_range(0..n_sites);
                    sites[i] = held;
                    let q = touch(rng, &o.start_pose, held, slots[0].robot.gripper_offset);
                    put(&mut x, slots[0].var, q);
                    grasp = q.gripper_pose(slots[0].robot.gripper_offset).inverse().compose(&o.start_pose);
                }
                ActionKind::Handover => {
                    let mut s = rng.gen_range(0..n_sites);
                    if n_sites > 1 && s == held {
                        s = (s + 1 + rng.gen_range(0..n_sites - 1)) % n_sites;
                    }
                    held = s;
                    sites[i] = s;
                    let (ra, rb) = (&slots[0].robot.operating_region, &slots[1].robot.operating_region);
                    let a = ra.clamp(rb.center());
                    let b = rb.clamp(ra.center());
                    let pv = pose_var.expect("handover has a pose variable");
                    let pose = Pose2::new(
                        0.5 * (a[0] + b[0]) + rng.gen_range(-0.2..0.2),
                        0.5 * (a[1] + b[1]) + rng.gen_range(-0.5..0.5),
                        rng.gen_range(-PI..PI),
                    );
                    x[pv] = pose.x;
                    x[pv + 1] = pose.y;
                    x[pv + 2] = pose.theta;
                    put(&mut x, slots[0].var, carrier_base(&pose, &grasp, slots[0].robot.gripper_offset));
                    let q = touch(rng, &pose, s, slots[1].robot.gripper_offset);
                    put(&mut x, slots[1].var, q);
                    grasp = q.gripper_pose(slots[1].robot.gripper_offset).inverse().compose(&pose);
                }
                ActionKind::Place => {
                    put(&mut x, slots[0].var, carrier_base(&o.goal_pose, &grasp, slots[0].robot.gripper_offset));
                }
                ActionKind::Retract => {
                    // Start from a step back out of the place configuration.
                    if i > 0 {
                        if let Some(prev) = self.actions[i - 1].1.first() {
                            let v = prev.var;
                            let back = 0.25 + 0.5 * rng.gen::<f64>();
                            let heading = x[v + 2] + rng.gen_range(-0.6..0.6);
                            x[slots[0].var] = x[v] - back * heading.cos();
                            x[slots[0].var + 1] = x[v + 1] - back * heading.sin();
                            x[slots[0].var + 2] = x[v + 2];
                        }
                    }
                }
            }
        }
        (x, sites)
    }

    fn switch_cost(&self, x: &[f64]) -> f64 {
        let mut c = 0.0;
        for (_, slots, _) in &self.actions {
            for s in slots {
                let q = var_config(x, s.var);
                let p = match s.prev {
                    Prev::Fixed(k) => k.q,
                    Prev::Var(v, _) => var_config(x, v),
                };
                let d = p.translation_to(&q) + ANGLE_WEIGHT * p.rotation_to(&q);
                c += d * d;
            }
        }
        c
    }
}

/// Levenberg–Marquardt with a forward-difference Jacobian.
fn levenberg_marquardt(f: impl Fn(&[f64]) -> DVector<f64>, x0: Vec<f64>, max_iter: usize) -> Vec<f64> {
    let n = x0.len();
    let mut x = x0;
    let mut r = f(&x);
    let mut cost = r.norm_squared();
    let mut mu = 1e-3;
    for _ in 0..max_iter {
        if cost < 1e-24 {
            break;
        }
        let m = r.len();
        let mut jac = DMatrix::zeros(m, n);
        let mut xp = x.clone();
        for j in 0..n {
            let h = 1e-7 * (1.0 + x[j].abs());
            xp[j] = x[j] + h;
            let rj = f(&xp);
            xp[j] = x[j];
            jac.set_column(j, &((rj - &r) / h));
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let grad = &jt * &r;
        let mut improved = false;
        while mu < 1e12 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += mu * (1.0 + jtj[(k, k)]);
            }
            let Some(chol) = a.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&grad));
            let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rc = f(&cand);
            let c = rc.norm_squared();
            if c < cost {
                let small = step.norm() < 1e-13;
                x = cand;
                r = rc;
                cost = c;
                mu = (mu / 3.0).max(1e-12);
                improved = !small;
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
    x
}

fn to_keyframes(p: &Problem, sub: &SubProblem, times: &SwitchTimeSample, x: &[f64], sites: &[usize]) -> Vec<Keyframe> {
    let o = p.object;
    let mut out = Vec::new();
    let mut holder: Option<Attachment> = None;
    let mut site = None;
    let mut pose = o.start_pose;
    for (i, ((kind, slots, pose_var), a)) in p.actions.iter().zip(&sub.skeleton.actions).enumerate() {
        let mut configs = BTreeMap::new();
        for s in slots {
            configs.insert(s.robot.id.clone(), var_config(x, s.var));
        }
        match kind {
            ActionKind::Pick => {
                let q = configs[&a.robot];
                pose = o.start_pose;
                holder = Some(Attachment {
                    robot: a.robot.clone(),
                    grasp: q.gripper_pose(slots[0].robot.gripper_offset).inverse().compose(&pose),
                });
                site = Some(sites[i]);
                configs.insert(a.robot.clone(), q.with_grip(true));
            }
            ActionKind::Handover => {
                let pv = pose_var.expect("handover has a pose variable");
                pose = Pose2::new(x[pv], x[pv + 1], x[pv + 2]);
                let rx = a.receiver.clone().expect("handover has a receiver");
                let q = configs[&rx];
                holder = Some(Attachment {
                    robot: rx.clone(),
                    grasp: q.gripper_pose(slots[1].robot.gripper_offset).inverse().compose(&pose),
                });
                site = Some(sites[i]);
                configs.insert(rx, q.with_grip(true));
            }
            ActionKind::Place => {
                pose = o.goal_pose;
                holder = None;
                site = None;
            }
            ActionKind::Retract => {}
        }
        out.push(Keyframe {
            t: times.action_times[i],
            configs,
            object_pose: pose,
            holder: holder.clone(),
            site,
        });
    }
    out
}

/// Variables and sites recovered from a keyframe set, for re-checking.
fn from_keyframes(p: &Problem, ks: &KeyframeSet) -> Option<(Vec<f64>, Vec<usize>)> {
    let mut x = vec![0.0; p.n_vars];
    let mut sites = vec![0; p.actions.len()];
    for (i, (_, slots, pose_var)) in p.actions.iter().enumerate() {
        let kf = ks.keyframes.get(i)?;
        for s in slots {
            let q = kf.configs.get(&s.robot.id)?;
            x[s.var..s.var + 3].copy_from_slice(&[q.x, q.y, q.theta]);
        }
        if let Some(pv) = pose_var {
            let ph = kf.object_pose;
            x[*pv..*pv + 3].copy_from_slice(&[ph.x, ph.y, ph.theta]);
        }
        sites[i] = kf.site.unwrap_or(0);
    }
    Some((x, sites))
}

/// Residuals of a candidate keyframe set; independent of any randomness.
pub fn residuals(
    scene: &Scene,
    plan: &PlanState,
    sub: &SubProblem,
    times: &SwitchTimeSample,
    candidate: &KeyframeSet,
) -> Result<Vec<ConstraintResidual>> {
    let p = Problem::build(scene, plan, sub, times, &KeyframeOptions::default())?;
    let (x, sites) = from_keyframes(&p, candidate)
        .ok_or_else(|| Error::InvalidConfig("keyframe set does not match the skeleton".into()))?;
    Ok(p.residuals(&x, &sites))
}

/// Exact check of every keyframe against the frozen plan at its time.
fn keyframes_clear(scene: &Scene, plan: &PlanState, sub: &SubProblem, kfs: &[Keyframe]) -> bool {
    let mut carry: Option<Carry> = None;
    let object = scene.object(&sub.object).expect("validated");
    for (kf, a) in kfs.iter().zip(&sub.skeleton.actions) {
        for (r, q) in &kf.configs {
            let robot = scene.robot(r).expect("validated");
            let held = kf.holder.as_ref().filter(|h| &h.robot == r).map(|h| Carry {
                object: sub.object.clone(),
                grasp: h.grasp,
            });
            let c = held.as_ref().or(carry.as_ref().filter(|_| a.kind != ActionKind::Retract && &a.robot == r));
            // The object itself is part of the frozen plan only before the first switch.
            if !point_clear(plan, scene, robot, q, kf.t, c.map(|c| (object, c))) {
                return false;
            }
        }
        carry = kf.holder.as_ref().map(|h| Carry {
            object: sub.object.clone(),
            grasp: h.grasp,
        });
    }
    true
}

/// Solves all keyframes of the sub-problem jointly. Returns `None` when no
/// restart reaches tolerance with collision-free keyframes.
pub fn solve_keyframes(
    scene: &Scene,
    plan: &PlanState,
    sub: &SubProblem,
    times: &SwitchTimeSample,
    cost: &CostConfig,
    rng: &mut impl Rng,
    opts: &KeyframeOptions,
) -> Result<Option<KeyframeSet>> {
    if times.action_times.len() != sub.skeleton.actions.len() {
        return Err(Error::InvalidConfig("switch times do not match the skeleton".into()));
    }
    let p = Problem::build(scene, plan, sub, times, opts)?;
    let mut best: Option<KeyframeSet> = None;
    let mut found = 0;
    for restart in 0..opts.restarts {
        let (x0, sites) = p.random_init(rng);
        let mut x = levenberg_marquardt(|x| p.flat(x, &sites), x0, opts.max_iterations);
        p.project(&mut x, &sites);
        let res = p.residuals(&x, &sites);
        if res.iter().any(|r| r.norm() >= TOL_KF) {
            continue;
        }
        let kfs = to_keyframes(&p, sub, times, &x, &sites);
        if !keyframes_clear(scene, plan, sub, &kfs) {
            continue;
        }
        let c = cost.switch * p.switch_cost(&x);
        found += 1;
        if best.as_ref().is_none_or(|b| c < b.cost) {
            best = Some(KeyframeSet {
                keyframes: kfs,
                times: times.clone(),
                cost: c,
                restart,
            });
        }
        if found >= opts.keep {
            break;
        }
    }
    Ok(best)
}

/// A resting configuration for `robot` near `from`, clear of goal and
/// pending start footprints, reachable by time `t` and free of all committed
/// motion from then on.
pub fn solve_rest_config(
    scene: &Scene,
    plan: &PlanState,
    robot: &RobotSpec,
    from: &Knot,
    t: f64,
    rng: &mut impl Rng,
    opts: &KeyframeOptions,
) -> Option<Config> {
    let mut env: Vec<Shape> = scene.static_obstacles.iter().map(|b| Shape::Box(b.as_box())).collect();
    for r in &scene.robots {
        if r.id != robot.id {
            env.push(r.shape_at(&plan.robot_config(r, t)));
        }
    }
    let placed = plan.placed_set();
    let mut footprints = Vec::new();
    for o in &scene.objects {
        env.push(o.shape_at(plan.object_pose(scene, o, t)));
        footprints.push(o.shape_at(o.goal_pose));
        if !placed.contains(o.id.as_str()) {
            footprints.push(o.shape_at(o.start_pose));
        }
    }
    let local = robot.base_radius + 2.0 + robot.v_max * (t - from.t).max(0.0);
    let keep_near = |s: &Shape| bounding_gap(s, &Shape::disc(from.q.position(), local)) < 0.0;
    env.retain(keep_near);
    footprints.retain(keep_near);
    let f = |x: &[f64]| {
        let q = Config::new(x[0], x[1], x[2]);
        let body = robot.shape_at(&q);
        let h = region_hinge(&robot.operating_region, q.position());
        let dt = (t - from.t).max(0.0);
        DVector::from_vec(vec![
            h[0],
            h[1],
            (from.q.translation_to(&q) - robot.v_max * dt).max(0.0),
            clearance_hinge(&body, &env, opts.margin),
            clearance_hinge(&body, &footprints, opts.rest_clearance),
        ])
    };
    let mut best: Option<(f64, Config)> = None;
    for k in 0..opts.restarts {
        let back = 0.2 + 0.15 * k as f64 + 0.3 * rng.gen::<f64>();
        let heading = from.q.theta + std::f64::consts::PI + rng.gen_range(-1.2..1.2);
        let x0 = vec![
            from.q.x + back * heading.cos(),
            from.q.y + back * heading.sin(),
            from.q.theta,
        ];
        let x = levenberg_marquardt(f, x0, opts.max_iterations);
        if f(&x).norm() >= TOL_KF {
            continue;
        }
        let q = Config::new(x[0], x[1], x[2]);
        if !point_clear(plan, scene, robot, &q, t, None) {
            continue;
        }
        let end = plan.makespan();
        if end > t && !sweep_collision_free(plan, scene, robot, &Knot::new(t, q), &Knot::new(end, q), None, DT_CHECK) {
            continue;
        }
        let d = from.q.translation_to(&q);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, q));
        }
        if best.is_some() && k >= 2 {
            break;
        }
    }
    best.map(|(_, q)| q)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::skeletons::{enumerate_skeletons, SkeletonLimits};
    use crate::world::testing::*;
    use crate::world::GROUND;

    fn scene() -> Scene {
        Scene::new(
            vec![block("o", Pose2::new(-1.0, 0.0, 0.0), Pose2::new(1.5, 1.0, 0.7))],
            vec![
                robot("a", -2.0, -1.0, Aabb::new([-3.0, -3.0], [0.6, 3.0])),
                robot("b", 2.0, -1.0, Aabb::new([-0.6, -3.0], [3.0, 3.0])),
            ],
            vec![],
            vec![(GROUND.into(), "o".into())],
        )
        .unwrap()
    }

    fn sub(scene: &Scene, robots: &[&str], nth: usize) -> SubProblem {
        let robots: Vec<String> = robots.iter().map(|s| s.to_string()).collect();
        let refs: Vec<&str> = robots.iter().map(String::as_str).collect();
        let sk = enumerate_skeletons(&refs, "o", SkeletonLimits::default())
            .nth(nth)
            .unwrap();
        SubProblem::new(scene, &PlanState::new(), "o", &robots, sk).unwrap()
    }

    #[test]
    fn switch_times_are_increasing_and_in_window() {
        let s = scene();
        let mut p = sub(&s, &["a", "b"], 2);
        p.ready.get_mut("a").unwrap().t = 10.0;
        p.t_bar = 10.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let t = sample_switch_times(&p, 20.0, &mut rng);
            assert!(t.action_times.windows(2).all(|w| w[0] < w[1]));
            assert!(t.action_times.iter().all(|&x| x > 10.0));
        }
    }

    #[test]
    fn handover_time_is_shared() {
        let s = scene();
        let p = sub(&s, &["a", "b"], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = sample_switch_times(&p, 5.0, &mut rng);
        let ta = t.robot_times(&p.skeleton, "a");
        let tb = t.robot_times(&p.skeleton, "b");
        assert_eq!(ta[1], tb[0]);
        assert!(tb.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_robot_solution_has_exact_residuals_and_consistent_grasp() {
        let s = Scene::new(
            vec![block("o", Pose2::new(-1.0, 0.0, 0.0), Pose2::new(1.0, 1.0, 0.7))],
            vec![robot("a", -2.0, -1.0, open_region())],
            vec![],
            vec![(GROUND.into(), "o".into())],
        )
        .unwrap();
        let p = sub(&s, &["a"], 0);
        let plan = PlanState::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let times = sample_switch_times(&p, 20.0, &mut rng);
        let ks = solve_keyframes(&s, &plan, &p, &times, &CostConfig::default(), &mut rng, &KeyframeOptions::default())
            .unwrap()
            .expect("feasible");
        for r in residuals(&s, &plan, &p, &times, &ks).unwrap() {
            assert!(r.norm() < TOL_KF, "{r:?}");
        }
        let o = s.object("o").unwrap();
        let grasp = ks.keyframes[0].holder.as_ref().unwrap().grasp;
        let place = ks.keyframes[1].configs["a"];
        let carried = place.gripper_pose(0.3).compose(&grasp);
        assert!(pose_residual(&carried, &o.goal_pose).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn handover_solution_uses_distinct_sites() {
        let s = scene();
        let plan = PlanState::new();
        let p = sub(&s, &["a", "b"], 2);
        assert_eq!(p.skeleton.handover_count(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut solved = None;
        for _ in 0..5 {
            let times = sample_switch_times(&p, 20.0, &mut rng);
            if let Some(ks) =
                solve_keyframes(&s, &plan, &p, &times, &CostConfig::default(), &mut rng, &KeyframeOptions::default())
                    .unwrap()
            {
                solved = Some((times, ks));
                break;
            }
        }
        let (times, ks) = solved.expect("handover solvable");
        assert_ne!(ks.keyframes[0].site, ks.keyframes[1].site);
        assert_eq!(ks.keyframes[1].holder.as_ref().unwrap().robot, "b");
        for r in residuals(&s, &plan, &p, &times, &ks).unwrap() {
            assert!(r.norm() < TOL_KF, "{r:?}");
        }
    }

    #[test]
    fn grasp_residual_is_euclidean_offset() {
        let s = Scene::new(
            vec![block("o", Pose2::new(0.0, 0.0, 0.0), Pose2::new(1.0, 1.0, 0.0))],
            vec![robot("a", -2.0, -1.0, open_region())],
            vec![],
            vec![(GROUND.into(), "o".into())],
        )
        .unwrap();
        let p = sub(&s, &["a"], 0);
        let times = SwitchTimeSample {
            action_times: vec![10.0, 20.0, 30.0],
            window: 30.0,
        };
        // Gripper 0.3 m left of site 0 at (0.1, 0).
        let mk = |q: Config| Keyframe {
            t: 0.0,
            configs: BTreeMap::from([("a".to_string(), q)]),
            object_pose: Pose2::identity(),
            holder: None,
            site: Some(0),
        };
        let ks = KeyframeSet {
            keyframes: vec![
                mk(Config::new(-0.5, 0.0, 0.0)),
                mk(Config::new(0.8, 1.0, 0.0)),
                mk(Config::new(0.0, 2.0, 0.0)),
            ],
            times: times.clone(),
            cost: 0.0,
            restart: 0,
        };
        let r = residuals(&s, &PlanState::new(), &p, &times, &ks).unwrap();
        let g = r.iter().find(|r| r.kind == ResidualKind::Grasp).unwrap();
        assert!((g.norm() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn fixed_times_are_slot_multiples() {
        let s = scene();
        let mut p = sub(&s, &["a"], 0);
        p.ready.get_mut("a").unwrap().t = 7.5;
        let t = fixed_switch_times(&p, 2.0, 1);
        assert_eq!(t.action_times, vec![10.0, 12.0, 14.0]);
    }
}
