//! The top-level planning loop: pick the next object, choose a team and a
//! skeleton, solve keyframes, connect them with space-time paths, commit,
//! and backtrack when an object cannot be placed.

mod config;
mod verify;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::PlannerConfig;
pub use verify::{verify_paths, Finding, VerifyReport, TOL_POSE};

use crate::assembly::{next_object, placeable_set, prioritize_robots, AssemblyGraph};
use crate::error::{Error, Result};
use crate::geometry::{within, Pose2, Shape};
use crate::keyframes::{
    fixed_switch_times, sample_switch_times, solve_keyframes, solve_rest_config, KeyframeSet, SubProblem,
};
use crate::skeletons::{enumerate_skeletons, ActionKind, SkeletonLimits};
use crate::stplanner::{compress_arrival, shortcut_and_smooth, st_rrt_connect, DistanceParams, GoalSet, MotionQuery, SpaceTimePoint};
use crate::world::{
    static_object_clear, sweep_collision_free, Attachment, Carry, Config, Event, Knot, ObjectSpec, PlanState,
    RobotSpec, Scene, TimedPath,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneReason {
    Placement,
    Keyframes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LowerBound {
    Pass,
    Prune(PruneReason),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LedgerKey {
    pub object: String,
    pub team: Vec<String>,
    pub skeleton: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub failures: usize,
    pub last_step: usize,
    pub reason: Option<PruneReason>,
}

/// Assignments found infeasible so far; they are retried only after every
/// untried assignment for the same object.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InfeasibleLedger {
    pub entries: BTreeMap<LedgerKey, LedgerEntry>,
}

impl InfeasibleLedger {
    pub fn record(&mut self, key: LedgerKey, step: usize, reason: Option<PruneReason>) {
        let e = self.entries.entry(key).or_insert(LedgerEntry {
            failures: 0,
            last_step: step,
            reason,
        });
        e.failures += 1;
        e.last_step = step;
        e.reason = reason.or(e.reason);
    }

    pub fn failures(&self, key: &LedgerKey) -> usize {
        self.entries.get(key).map_or(0, |e| e.failures)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Wall-clock seconds per phase plus counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanStats {
    pub keyframes: f64,
    pub path: f64,
    pub post: f64,
    pub total: f64,
    pub keyframe_solves: usize,
    pub keyframe_failures: usize,
    pub rrt_calls: usize,
    pub rrt_failures: usize,
    pub backtracks: usize,
    pub pruned: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullPlan {
    pub state: PlanState,
    pub makespan: f64,
    pub seed: u64,
    pub stats: PlanStats,
    pub ledger: InfeasibleLedger,
}

impl FullPlan {
    pub fn events(&self) -> &BTreeMap<String, Vec<Event>> {
        &self.state.events
    }

    pub fn placement_order(&self) -> &[String] {
        &self.state.placed
    }

    /// Place events as `(robot, event)`, sorted by time.
    pub fn place_events(&self) -> Vec<(&str, &Event)> {
        let mut v: Vec<(&str, &Event)> = self
            .state
            .events
            .iter()
            .flat_map(|(r, es)| es.iter().map(move |e| (r.as_str(), e)))
            .filter(|(_, e)| e.action == ActionKind::Place)
            .collect();
        v.sort_by(|a, b| a.1.end.total_cmp(&b.1.end).then(a.0.cmp(b.0)));
        v
    }

    pub fn handovers_for(&self, object: &str) -> usize {
        self.state
            .events
            .values()
            .flatten()
            .filter(|e| e.action == ActionKind::Handover && e.object == object)
            .count()
            / 2
    }
}

/// Independent re-simulation of a full plan.
pub fn verify_plan(scene: &Scene, plan: &FullPlan, dt: f64) -> VerifyReport {
    verify_paths(scene, &plan.state.committed, &plan.state.events, dt)
}

/// Restores the plan from `depth` placements ago.
pub fn backtrack(plan: &mut PlanState, depth: usize) -> Result<()> {
    plan.rewind(depth)
}

fn place_time(plan: &PlanState, object: &str) -> Option<f64> {
    plan.events
        .values()
        .flatten()
        .find(|e| e.action == ActionKind::Place && e.object == object)
        .map(|e| e.end)
}

/// Cheap necessary conditions on reachability for every switch.
fn reachable(scene: &Scene, sub: &SubProblem) -> bool {
    let Some(o) = scene.object(&sub.object) else {
        return false;
    };
    let can_touch = |r: &RobotSpec, pose: &Pose2| {
        (0..o.grasp_sites.len())
            .any(|s| r.operating_region.distance_outside(o.site_world(pose, s)) <= r.gripper_offset)
    };
    let max_site = o
        .grasp_sites
        .iter()
        .map(|s| s[0].hypot(s[1]))
        .fold(0.0, f64::max);
    for a in &sub.skeleton.actions {
        let Some(r) = scene.robot(&a.robot) else {
            return false;
        };
        let ok = match a.kind {
            ActionKind::Pick => can_touch(r, &o.start_pose),
            ActionKind::Place => can_touch(r, &o.goal_pose),
            ActionKind::Handover => {
                let Some(b) = a.receiver.as_deref().and_then(|b| scene.robot(b)) else {
                    return false;
                };
                let (ra, rb) = (&r.operating_region, &b.operating_region);
                let gap_x = (ra.min[0] - rb.max[0]).max(rb.min[0] - ra.max[0]).max(0.0);
                let gap_y = (ra.min[1] - rb.max[1]).max(rb.min[1] - ra.max[1]).max(0.0);
                gap_x.hypot(gap_y) <= r.gripper_offset + b.gripper_offset + 2.0 * max_site
            }
            ActionKind::Retract => true,
        };
        if !ok {
            return false;
        }
    }
    true
}

/// Lower bounds: (i) the goal pose must be free of placed objects and static
/// obstacles; (ii) the keyframes alone must be solvable when every robot
/// outside the team and all motion are ignored.
pub fn lower_bound_checks(
    scene: &Scene,
    plan: &PlanState,
    sub: &SubProblem,
    config: &PlannerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LowerBound> {
    let o = scene
        .object(&sub.object)
        .ok_or_else(|| Error::UnknownEntity(sub.object.clone()))?;
    if goal_blocked(scene, plan, o) {
        return Ok(LowerBound::Prune(PruneReason::Placement));
    }
    if !reachable(scene, sub) {
        return Ok(LowerBound::Prune(PruneReason::Keyframes));
    }
    let team: BTreeSet<&str> = sub.robots.iter().map(String::as_str).collect();
    let relaxed_scene = Scene::new(
        scene.objects.clone(),
        scene
            .robots
            .iter()
            .filter(|r| team.contains(r.id.as_str()))
            .cloned()
            .collect(),
        scene.static_obstacles.clone(),
        scene.assembly_edges.clone(),
    )?;
    let mut relaxed = PlanState::new();
    for p in &plan.placed {
        if let Some(po) = scene.object(p) {
            relaxed.commit(p, &TimedPath::single(0.0, Config::from_pose(po.goal_pose, false)));
        }
    }
    let mut free = sub.clone();
    for k in free.ready.values_mut() {
        k.t = 0.0;
    }
    free.t_bar = 0.0;
    free.place_after = 0.0;
    // Generous times so that reachability between switches never binds.
    let window = 1e6;
    let times = sample_switch_times(&free, window, rng);
    let ok = solve_keyframes(&relaxed_scene, &relaxed, &free, &times, &config.cost, rng, &config.keyframes)?;
    Ok(if ok.is_some() {
        LowerBound::Pass
    } else {
        LowerBound::Prune(PruneReason::Keyframes)
    })
}

fn goal_blocked(scene: &Scene, plan: &PlanState, o: &ObjectSpec) -> bool {
    let goal = o.shape_at(o.goal_pose);
    scene
        .static_obstacles
        .iter()
        .any(|b| within(&goal, &Shape::Box(b.as_box()), 0.0))
        || plan
            .placed
            .iter()
            .filter_map(|p| scene.object(p))
            .any(|p| within(&goal, &p.shape_at(p.goal_pose), 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode {
    Variable,
    Fixed(f64),
}

enum Rest<'a> {
    None,
    Robot,
    Object(&'a ObjectSpec, Pose2),
}

struct Planner<'a> {
    scene: &'a Scene,
    graph: AssemblyGraph,
    cfg: &'a PlannerConfig,
    mode: Mode,
    rng: ChaCha8Rng,
    stats: PlanStats,
    ledger: InfeasibleLedger,
    step: usize,
}

fn elapsed(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

impl<'a> Planner<'a> {
    fn limits(&self) -> SkeletonLimits {
        SkeletonLimits {
            max_actions: self.cfg.max_actions,
            max_handover_hops: self.cfg.max_handover_hops.min(self.cfg.max_team.saturating_sub(1)),
        }
    }

    fn place_after(&self, plan: &PlanState, object: &str) -> f64 {
        if self.graph.touches_ground(object) {
            return 0.0;
        }
        self.graph
            .neighbors(object)
            .filter_map(|n| place_time(plan, n))
            .fold(f64::INFINITY, f64::min)
            .min(1e18)
    }

    fn run(&mut self) -> Result<PlanState> {
        let mut plan = PlanState::new();
        let mut forced: Option<String> = None;
        let mut streak: BTreeMap<String, u32> = BTreeMap::new();
        while plan.placed.len() < self.scene.objects.len() {
            let placed = plan.placed_set();
            let candidates = placeable_set(&self.graph, &placed);
            let object = match forced.take().filter(|o| candidates.contains(o)) {
                Some(o) => o,
                None => next_object(&self.graph, &placed)?,
            };
            match self.solve_object(&plan, &object)? {
                Some(work) => {
                    plan.adopt(work);
                    self.step += 1;
                }
                None => {
                    self.stats.backtracks += 1;
                    if self.stats.backtracks > self.cfg.max_backtracks || plan.placed.is_empty() {
                        return Err(Error::PlannerFailure(format!(
                            "could not place `{object}` after {} backtracks",
                            self.stats.backtracks - 1
                        )));
                    }
                    let k = streak.entry(object.clone()).or_insert(0);
                    let depth = (1usize << (*k).min(20)).min(plan.placed.len());
                    *k += 1;
                    backtrack(&mut plan, depth)?;
                    forced = Some(object);
                }
            }
        }
        Ok(plan)
    }

    fn solve_object(&mut self, plan: &PlanState, object: &str) -> Result<Option<PlanState>> {
        let o = self.scene.object(object).expect("graph nodes are scene objects");
        if goal_blocked(self.scene, plan, o) {
            self.stats.pruned += 1;
            return Ok(None);
        }
        let place_after = self.place_after(plan, object);
        let limits = self.limits();
        let mut candidates = Vec::new();
        for team in prioritize_robots(plan, self.scene, self.cfg.max_team).teams() {
            let refs: Vec<&str> = team.iter().map(String::as_str).collect();
            for sk in enumerate_skeletons(&refs, object, limits) {
                if sk.robots().len() != team.len() {
                    continue;
                }
                let key = LedgerKey {
                    object: object.to_owned(),
                    team: team.to_vec(),
                    skeleton: sk.label(),
                };
                candidates.push((self.ledger.failures(&key), key, team.to_vec(), sk));
            }
        }
        // Stable: untried assignments keep their priority order.
        candidates.sort_by_key(|c| c.0);
        for (_, key, team, sk) in candidates {
            let mut sub = SubProblem::new(self.scene, plan, object, &team, sk)?;
            sub.place_after = place_after;
            let t = Instant::now();
            let lb = lower_bound_checks(self.scene, plan, &sub, self.cfg, &mut self.rng)?;
            self.stats.keyframes += elapsed(t);
            if let LowerBound::Prune(reason) = lb {
                self.stats.pruned += 1;
                self.ledger.record(key, self.step, Some(reason));
                continue;
            }
            if let Some(work) = self.attempt(plan, &sub)? {
                return Ok(Some(work));
            }
            self.ledger.record(key, self.step, None);
        }
        Ok(None)
    }

    fn initial_window(&self, sub: &SubProblem) -> f64 {
        let o = self.scene.object(&sub.object).expect("validated");
        let mut longest: f64 = 0.0;
        for (r, k) in &sub.ready {
            let spec = self.scene.robot(r).expect("validated");
            let (s, g) = (o.start_pose.position(), o.goal_pose.position());
            let d = (k.q.x - s[0]).hypot(k.q.y - s[1]) + (s[0] - g[0]).hypot(s[1] - g[1]);
            longest = longest.max(d / spec.v_max);
        }
        (2.0 * longest).max(1.0)
    }

    fn attempt(&mut self, plan: &PlanState, sub: &SubProblem) -> Result<Option<PlanState>> {
        let w0 = self.initial_window(sub);
        for round in 0..self.cfg.window_doublings.max(1) {
            let window = w0 * 2f64.powi(round as i32);
            for rs in 0..self.cfg.time_resamples {
                let times = match self.mode {
                    Mode::Variable => sample_switch_times(sub, window, &mut self.rng),
                    Mode::Fixed(tf) => {
                        fixed_switch_times(sub, tf, round as usize * self.cfg.time_resamples + rs)
                    }
                };
                let t = Instant::now();
                let kf = solve_keyframes(
                    self.scene,
                    plan,
                    sub,
                    &times,
                    &self.cfg.cost,
                    &mut self.rng,
                    &self.cfg.keyframes,
                )?;
                self.stats.keyframes += elapsed(t);
                self.stats.keyframe_solves += 1;
                let Some(kf) = kf else {
                    self.stats.keyframe_failures += 1;
                    continue;
                };
                if let Some(work) = self.execute(plan, sub, &kf) {
                    return Ok(Some(work));
                }
            }
        }
        Ok(None)
    }

    /// Latest time up to which `robot` can keep holding still at `q`.
    fn max_wait(&self, work: &PlanState, robot: &RobotSpec, q: Config, carry: Option<&Carry>, t0: f64) -> f64 {
        let end = work.makespan();
        let mut t = t0;
        while t < end {
            let t1 = (t + 1.0).min(end);
            if !sweep_collision_free(
                work,
                self.scene,
                robot,
                &Knot::new(t, q),
                &Knot::new(t1, q),
                carry,
                self.cfg.dt_check,
            ) {
                return t;
            }
            t = t1;
        }
        f64::INFINITY
    }

    fn rest_ok(&self, work: &PlanState, robot: &RobotSpec, q: Config, t: f64, rest: &Rest) -> bool {
        let end = work.makespan();
        match rest {
            Rest::None => true,
            _ if t >= end => true,
            Rest::Robot => sweep_collision_free(
                work,
                self.scene,
                robot,
                &Knot::new(t, q),
                &Knot::new(end, q),
                None,
                self.cfg.dt_check,
            ),
            Rest::Object(o, pose) => static_object_clear(work, self.scene, o, *pose, t, end, self.cfg.dt_check),
        }
    }

    /// Plans one robot from `from` to `goal`, arriving no earlier than
    /// `lower` and no later than `upper`.
    #[allow(clippy::too_many_arguments)]
    fn segment(
        &mut self,
        work: &PlanState,
        robot: &RobotSpec,
        carry: Option<&Carry>,
        from: Knot,
        goal: Config,
        t_sample: f64,
        lower: f64,
        upper: f64,
        rest: Rest,
    ) -> Option<TimedPath> {
        let travel = robot.min_travel_time(&from.q, &goal);
        let mut t_min = if travel > 0.0 {
            from.t + travel * (1.0 + 1e-6) + 1e-6
        } else {
            from.t
        };
        t_min = t_min.max(lower);
        if t_min > upper {
            return None;
        }
        let query = MotionQuery {
            dt_check: self.cfg.dt_check,
            ..MotionQuery::new(self.scene, work, robot, carry)
        };
        let params = DistanceParams {
            lambda: self.cfg.lambda,
            v_max: robot.v_max,
            ..DistanceParams::default()
        };
        let start = SpaceTimePoint::new(from.q.with_grip(carry.is_some()), from.t);
        let goal = goal.with_grip(carry.is_some());
        let rounds = match self.mode {
            Mode::Fixed(_) => 1,
            Mode::Variable => self.cfg.goal_window_doublings + 1,
        };
        for g in 0..rounds {
            let mut times: Vec<f64> = match self.mode {
                Mode::Fixed(tf) => (0..4).map(|j| t_sample + tf * j as f64).collect(),
                Mode::Variable => {
                    let span = (t_sample - t_min).max(1.0) * 2f64.powi(g as i32);
                    let n = self.cfg.goal_points.max(2);
                    let mut v: Vec<f64> = (0..n).map(|k| t_min + span * k as f64 / (n - 1) as f64).collect();
                    v.push(t_sample);
                    v
                }
            };
            times.retain(|&t| t >= t_min && t <= upper);
            times.sort_by(f64::total_cmp);
            times.dedup();
            let t = Instant::now();
            // Resting is monotone in the start time: once a start fails, all earlier ones do.
            let mut keep = Vec::new();
            for &t in times.iter().rev() {
                if !self.rest_ok(work, robot, goal, t, &rest) {
                    break;
                }
                keep.push(t);
            }
            self.stats.post += elapsed(t);
            if keep.is_empty() {
                continue;
            }
            let goals = GoalSet::at_times(goal, keep);
            let t = Instant::now();
            self.stats.rrt_calls += 1;
            let path = st_rrt_connect(
                &query,
                start,
                &goals,
                &params,
                self.cfg.budget,
                self.cfg.goal_bias,
                &mut self.rng,
            );
            self.stats.path += elapsed(t);
            let Some(path) = path else {
                self.stats.rrt_failures += 1;
                continue;
            };
            let t = Instant::now();
            let mut smooth = shortcut_and_smooth(&path, &query, &params, from.t, self.cfg.shortcut_rounds, &mut self.rng);
            if self.mode == Mode::Variable {
                smooth = compress_arrival(&smooth, &query, from.t, 4, |t| {
                    t >= lower && t <= upper && self.rest_ok(work, robot, goal, t, &rest)
                });
            }
            self.stats.post += elapsed(t);
            return Some(smooth);
        }
        None
    }

    /// Turns solved keyframes into committed paths on a working copy.
    fn execute(&mut self, plan: &PlanState, sub: &SubProblem, kf: &KeyframeSet) -> Option<PlanState> {
        let scene = self.scene;
        let mut work = plan.working_copy();
        let object = scene.object(&sub.object)?;
        let mut cur: BTreeMap<String, Knot> = sub.ready.clone();
        let mut carry: Option<Carry> = None;
        let mut obj_path = TimedPath::default();
        let mut events: Vec<(String, Event)> = Vec::new();
        let mut giver: Option<(String, Knot)> = None;
        let mut t_pick = 0.0;
        let base = |i: usize| kf.keyframes[i].t;
        // Fixed mode: actions that overrun their slot push later ones back by whole slots.
        let mut shift = 0.0;
        let fixed = matches!(self.mode, Mode::Fixed(_));

        let attach = |path: &mut TimedPath, t: f64, pose: Pose2, att: Option<Attachment>| {
            let knot = Knot::new(t, Config::from_pose(pose, false));
            if path.knots.is_empty() {
                path.knots.push(knot);
            } else {
                path.knots.push(knot);
                path.attachments.push(att);
            }
        };

        for (i, a) in sub.skeleton.actions.iter().enumerate() {
            let key = &kf.keyframes[i];
            let r = scene.robot(&a.robot)?;
            let from = cur[&a.robot];
            match a.kind {
                ActionKind::Pick => {
                    let q = key.configs[&a.robot];
                    let path = self.segment(&work, r, None, from, q, base(i) + shift, from.t, f64::INFINITY, Rest::None)?;
                    work.commit(&r.id, &path);
                    t_pick = path.end_time();
                    shift = f64::max(shift, t_pick - base(i));
                    events.push((r.id.clone(), ev(ActionKind::Pick, object, from.t, t_pick, None)));
                    cur.insert(r.id.clone(), Knot::new(t_pick, q.with_grip(true)));
                    let h = key.holder.clone()?;
                    carry = Some(Carry {
                        object: object.id.clone(),
                        grasp: h.grasp,
                    });
                    attach(&mut obj_path, t_pick, object.start_pose, None);
                }
                ActionKind::Handover => {
                    let rx = a.receiver.as_deref()?;
                    let b = scene.robot(rx)?;
                    let qa = key.configs[&a.robot];
                    let qb = key.configs[rx];
                    let c = carry.clone()?;
                    let path = self.segment(&work, r, Some(&c), from, qa, base(i) + shift, from.t, f64::INFINITY, Rest::None)?;
                    work.commit(&r.id, &path);
                    let ta = path.end_time();
                    let att_a = Some(Attachment {
                        robot: r.id.clone(),
                        grasp: c.grasp,
                    });
                    attach(&mut obj_path, ta, key.object_pose, att_a.clone());
                    work.committed.insert(object.id.clone(), obj_path.clone());
                    let hold_until = if fixed {
                        f64::INFINITY
                    } else {
                        self.max_wait(&work, r, qa.with_grip(true), Some(&c), ta)
                    };
                    let lower = ta;
                    let upper = if fixed { ta } else { hold_until };
                    let fb = cur[rx];
                    let pb = self.segment(&work, b, None, fb, qb, base(i) + shift, lower.max(fb.t), upper, Rest::None)?;
                    let th = pb.end_time();
                    if th < ta {
                        return None;
                    }
                    shift = f64::max(shift, th - base(i));
                    work.commit(rx, &pb);
                    if th > ta {
                        work.commit(&r.id, &TimedPath::single(th, qa.with_grip(true)));
                        attach(&mut obj_path, th, key.object_pose, att_a);
                        work.committed.insert(object.id.clone(), obj_path.clone());
                    }
                    events.push((r.id.clone(), ev(ActionKind::Handover, object, t_pick, th, Some(rx))));
                    events.push((rx.to_owned(), ev(ActionKind::Handover, object, fb.t, th, Some(&r.id))));
                    let h = key.holder.clone()?;
                    carry = Some(Carry {
                        object: object.id.clone(),
                        grasp: h.grasp,
                    });
                    cur.insert(r.id.clone(), Knot::new(th, qa));
                    cur.insert(rx.to_owned(), Knot::new(th, qb.with_grip(true)));
                    giver = Some((r.id.clone(), Knot::new(th, qa.with_grip(false))));
                }
                ActionKind::Place => {
                    let q = key.configs[&a.robot];
                    let c = carry.clone()?;
                    let lower = from.t.max(sub.place_after + 1e-6);
                    let path = self.segment(
                        &work,
                        r,
                        Some(&c),
                        from,
                        q,
                        base(i) + shift,
                        lower,
                        f64::INFINITY,
                        Rest::Object(object, object.goal_pose),
                    )?;
                    work.commit(&r.id, &path);
                    let tp = path.end_time();
                    shift = f64::max(shift, tp - base(i));
                    attach(
                        &mut obj_path,
                        tp,
                        object.goal_pose,
                        Some(Attachment {
                            robot: r.id.clone(),
                            grasp: c.grasp,
                        }),
                    );
                    work.committed.insert(object.id.clone(), obj_path.clone());
                    events.push((r.id.clone(), ev(ActionKind::Place, object, from.t, tp, None)));
                    cur.insert(r.id.clone(), Knot::new(tp, q.with_grip(false)));
                    carry = None;
                }
                ActionKind::Retract => {
                    let mut q = key.configs[&a.robot];
                    {
                        let early = if fixed { base(i) + shift } else { from.t + r.min_travel_time(&from.q, &q) + 0.5 };
                        if !self.rest_ok(&work, r, q, early, &Rest::Robot) {
                            let t = Instant::now();
                            let t_rest = if fixed { base(i) + shift } else { from.t + 1.5 };
                            let alt = solve_rest_config(scene, &work, r, &from, t_rest, &mut self.rng, &self.cfg.keyframes);
                            self.stats.keyframes += elapsed(t);
                            q = alt.unwrap_or(q);
                        }
                    }
                    let path = self.segment(&work, r, None, from, q, base(i) + shift, from.t, f64::INFINITY, Rest::Robot)?;
                    work.commit(&r.id, &path);
                    shift = f64::max(shift, path.end_time() - base(i));
                    events.push((r.id.clone(), ev(ActionKind::Retract, object, from.t, path.end_time(), None)));
                    cur.insert(r.id.clone(), Knot::new(path.end_time(), q));
                }
            }
        }

        if let Some((gid, knot)) = giver {
            let r = scene.robot(&gid)?;
            let t_rest = if fixed {
                knot.t + self.mode_slot()
            } else {
                knot.t + 2.0
            };
            let t = Instant::now();
            let q = solve_rest_config(scene, &work, r, &knot, t_rest, &mut self.rng, &self.cfg.keyframes);
            self.stats.keyframes += elapsed(t);
            let q = q?;
            let path = self.segment(&work, r, None, knot, q, t_rest, knot.t, f64::INFINITY, Rest::Robot)?;
            work.commit(&gid, &path);
            events.push((gid, ev(ActionKind::Retract, object, knot.t, path.end_time(), None)));
        }

        work.committed.insert(object.id.clone(), obj_path);
        work.placed.push(object.id.clone());
        for (r, e) in events {
            work.push_event(&r, e);
        }
        Some(work)
    }

    fn mode_slot(&self) -> f64 {
        match self.mode {
            Mode::Fixed(t) => t,
            Mode::Variable => 1.0,
        }
    }
}

fn ev(action: ActionKind, object: &ObjectSpec, start: f64, end: f64, partner: Option<&str>) -> Event {
    Event {
        action,
        object: object.id.clone(),
        start,
        end,
        partner: partner.map(str::to_owned),
    }
}

fn effective_scene(scene: &Scene, config: &PlannerConfig) -> Result<Scene> {
    match config.v_max {
        None => Ok(scene.clone()),
        Some(v) => Scene::new(
            scene.objects.clone(),
            scene
                .robots
                .iter()
                .cloned()
                .map(|mut r| {
                    r.v_max = v;
                    r
                })
                .collect(),
            scene.static_obstacles.clone(),
            scene.assembly_edges.clone(),
        ),
    }
}

fn plan_with_mode(scene: &Scene, config: &PlannerConfig, seed: u64, mode: Mode) -> Result<FullPlan> {
    config.validate()?;
    let started = Instant::now();
    let scene = effective_scene(scene, config)?;
    let mut planner = Planner {
        scene: &scene,
        graph: AssemblyGraph::from_scene(&scene),
        cfg: config,
        mode,
        rng: ChaCha8Rng::seed_from_u64(seed),
        stats: PlanStats::default(),
        ledger: InfeasibleLedger::default(),
        step: 0,
    };
    let state = planner.run()?.working_copy();
    let mut stats = planner.stats;
    stats.total = elapsed(started);
    Ok(FullPlan {
        makespan: state.makespan(),
        state,
        seed,
        stats,
        ledger: planner.ledger,
    })
}

/// Plans the whole assembly with free switch times. Deterministic in `seed`.
pub fn plan_assembly(scene: &Scene, config: &PlannerConfig, seed: u64) -> Result<FullPlan> {
    match config.fixed_time {
        Some(t) => plan_assembly_fixed_time(scene, config, seed, t),
        None => plan_with_mode(scene, config, seed, Mode::Variable),
    }
}

/// Baseline: every switch lies on a multiple of `t_fix` and every action
/// takes exactly one slot.
pub fn plan_assembly_fixed_time(scene: &Scene, config: &PlannerConfig, seed: u64, t_fix: f64) -> Result<FullPlan> {
    if !(t_fix.is_finite() && t_fix > 0.0) {
        return Err(Error::InvalidConfig("fixed time step must be positive".into()));
    }
    plan_with_mode(scene, config, seed, Mode::Fixed(t_fix))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;
    use crate::skeletons::{Action, Skeleton};
    use crate::world::GROUND;

    fn block(id: &str, start: (f64, f64), goal: (f64, f64)) -> ObjectSpec {
        ObjectSpec {
            id: id.into(),
            width: 0.2,
            height: 0.2,
            start_pose: Pose2::new(start.0, start.1, 0.0),
            goal_pose: Pose2::new(goal.0, goal.1, 0.0),
            grasp_sites: vec![[0.1, 0.0], [-0.1, 0.0], [0.0, 0.1], [0.0, -0.1]],
        }
    }

    fn bot(id: &str, home: (f64, f64), region: Aabb) -> RobotSpec {
        RobotSpec {
            id: id.into(),
            base_radius: 0.15,
            gripper_offset: 0.3,
            v_max: 1.0,
            omega_max: 2.0,
            operating_region: region,
            home_config: Config::new(home.0, home.1, std::f64::consts::FRAC_PI_2),
        }
    }

    fn edge(a: &str, b: &str) -> (String, String) {
        (a.into(), b.into())
    }

    fn pair() -> Scene {
        let region = Aabb::new([-3.0, -2.0], [3.0, 3.0]);
        Scene::new(
            vec![block("a", (-1.5, 0.0), (0.0, 0.0)), block("b", (-1.5, 1.0), (0.0, 0.25))],
            vec![bot("r0", (0.0, -1.0), region)],
            vec![],
            vec![edge(GROUND, "a"), edge("a", "b")],
        )
        .unwrap()
    }

    fn single(robot: &str, object: &str) -> Skeleton {
        Skeleton {
            actions: vec![
                Action::new(ActionKind::Pick, robot, object),
                Action::new(ActionKind::Place, robot, object),
                Action::new(ActionKind::Retract, robot, object),
            ],
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    fn key(object: &str) -> LedgerKey {
        LedgerKey {
            object: object.into(),
            team: vec!["r0".into()],
            skeleton: single("r0", object).label(),
        }
    }

    #[test]
    fn ledger_counts_failures_and_keeps_reason() {
        let mut l = InfeasibleLedger::default();
        assert!(l.is_empty());
        l.record(key("a"), 3, Some(PruneReason::Placement));
        l.record(key("a"), 7, None);
        assert_eq!(l.failures(&key("a")), 2);
        assert_eq!(l.failures(&key("b")), 0);
        let e = &l.entries[&key("a")];
        assert_eq!(e.last_step, 7);
        assert_eq!(e.reason, Some(PruneReason::Placement));
        assert_eq!(l.len(), 1);
    }

    fn with_steps(n: usize) -> PlanState {
        let mut plan = PlanState::new();
        for k in 0..n {
            let mut work = plan.working_copy();
            work.placed.push(format!("o{k}"));
            work.commit("r0", &TimedPath::single(k as f64, Config::new(k as f64, 0.0, 0.0)));
            plan.adopt(work);
        }
        plan
    }

    #[test]
    fn backtrack_zero_is_a_no_op() {
        let mut plan = with_steps(3);
        let before = plan.clone();
        backtrack(&mut plan, 0).unwrap();
        assert_eq!(plan, before);
    }

    #[test]
    fn backtrack_one_drops_the_last_placement() {
        let mut plan = with_steps(3);
        backtrack(&mut plan, 1).unwrap();
        assert_eq!(plan.placed, vec!["o0", "o1"]);
        assert_eq!(plan.snapshot_count(), 2);
        assert_eq!(plan.committed["r0"].knots.last().unwrap().q.x, 1.0);
    }

    #[test]
    fn backtrack_beyond_history_fails() {
        let mut plan = with_steps(2);
        assert!(matches!(backtrack(&mut plan, 3), Err(Error::BacktrackTooDeep { depth: 3, available: 2 })));
        assert_eq!(plan.placed.len(), 2);
    }

    #[test]
    fn lower_bound_prunes_occupied_goal() {
        let region = Aabb::new([-3.0, -2.0], [3.0, 3.0]);
        let scene = Scene::new(
            vec![block("a", (-1.5, 0.0), (0.0, 0.0))],
            vec![bot("r0", (0.0, -1.0), region)],
            vec![Aabb::new([0.05, -0.5], [0.5, 0.5])],
            vec![edge(GROUND, "a")],
        )
        .unwrap();
        let plan = PlanState::new();
        let sub = SubProblem::new(&scene, &plan, "a", &["r0".into()], single("r0", "a")).unwrap();
        let lb = lower_bound_checks(&scene, &plan, &sub, &PlannerConfig::default(), &mut rng()).unwrap();
        assert_eq!(lb, LowerBound::Prune(PruneReason::Placement));
    }

    #[test]
    fn lower_bound_passes_free_goal() {
        let scene = pair();
        let plan = PlanState::new();
        let sub = SubProblem::new(&scene, &plan, "a", &["r0".into()], single("r0", "a")).unwrap();
        let lb = lower_bound_checks(&scene, &plan, &sub, &PlannerConfig::default(), &mut rng()).unwrap();
        assert_eq!(lb, LowerBound::Pass);
    }

    #[test]
    fn lower_bound_prunes_goal_out_of_reach() {
        let scene = Scene::new(
            vec![block("a", (-2.0, 0.0), (2.5, 0.0))],
            vec![bot("r0", (-2.0, -1.0), Aabb::new([-3.0, -2.0], [-1.0, 2.0]))],
            vec![],
            vec![edge(GROUND, "a")],
        )
        .unwrap();
        let plan = PlanState::new();
        let sub = SubProblem::new(&scene, &plan, "a", &["r0".into()], single("r0", "a")).unwrap();
        let lb = lower_bound_checks(&scene, &plan, &sub, &PlannerConfig::default(), &mut rng()).unwrap();
        assert_eq!(lb, LowerBound::Prune(PruneReason::Keyframes));
    }

    #[test]
    fn small_plan_verifies_in_order() {
        let scene = pair();
        let plan = plan_assembly(&scene, &PlannerConfig::default(), 1).unwrap();
        assert_eq!(plan.placement_order(), ["a", "b"]);
        assert_eq!(plan.stats.backtracks, 0);
        let report = verify_plan(&scene, &plan, 0.005);
        assert!(report.is_empty(), "{:?}", report.findings);
        let places = plan.place_events();
        assert_eq!(places.len(), 2);
        assert!(places[0].1.end < places[1].1.end);
        assert!((plan.makespan - plan.state.makespan()).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_plan() {
        let scene = pair();
        let a = plan_assembly(&scene, &PlannerConfig::default(), 9).unwrap();
        let b = plan_assembly(&scene, &PlannerConfig::default(), 9).unwrap();
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn corrupted_plans_are_reported() {
        let scene = pair();
        let plan = plan_assembly(&scene, &PlannerConfig::default(), 2).unwrap();

        let mut fast = plan.clone();
        let p = fast.state.committed.get_mut("r0").unwrap();
        let k = p.knots.len() / 2;
        p.knots[k].q.x += 5.0;
        let report = verify_plan(&scene, &fast, 0.005);
        assert!(report.count(|f| matches!(f, Finding::SpeedViolation { .. })) > 0);

        let mut off = plan.clone();
        let p = off.state.committed.get_mut("b").unwrap();
        p.knots.last_mut().unwrap().q.x += 0.01;
        let report = verify_plan(&scene, &off, 0.005);
        assert!(report.count(|f| matches!(f, Finding::FinalPose { object, .. } if object == "b")) == 1);
    }

    #[test]
    fn fixed_time_places_on_slot_boundaries() {
        let scene = pair();
        let t_fix = 4.0;
        let plan = plan_assembly_fixed_time(&scene, &PlannerConfig::default(), 0, t_fix).unwrap();
        assert!(verify_plan(&scene, &plan, 0.005).is_empty());
        for (_, e) in plan.place_events() {
            let slots = e.end / t_fix;
            assert!((slots - slots.round()).abs() < 1e-9, "place at {}", e.end);
        }
    }

    #[test]
    fn fixed_time_rejects_bad_step() {
        let scene = pair();
        assert!(plan_assembly_fixed_time(&scene, &PlannerConfig::default(), 0, 0.0).is_err());
    }
}
