//! Bi-directional RRT in configuration × time. A forward tree grows from the
//! start, a backward tree from a set of goal points that share one
//! configuration at several arrival times.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Aabb;
use crate::keyframes::ANGLE_WEIGHT;
use crate::world::{sweep_collision_free, point_clear, Carry, Config, Knot, PlanState, RobotSpec, Scene, TimedPath, DT_CHECK};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub q: Config,
    pub t: f64,
}

impl SpaceTimePoint {
    pub fn new(q: Config, t: f64) -> Self {
        Self { q, t }
    }

    pub fn knot(&self) -> Knot {
        Knot::new(self.t, self.q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistanceParams {
    pub lambda: f64,
    pub v_max: f64,
    pub angle_weight: f64,
}

impl Default for DistanceParams {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            v_max: 1.0,
            angle_weight: ANGLE_WEIGHT,
        }
    }
}

pub fn config_distance(a: &Config, b: &Config, angle_weight: f64) -> f64 {
    a.translation_to(b) + angle_weight * a.rotation_to(b)
}

/// Direction-dependent distance: finite only when `b` is later than `a` and
/// reachable without exceeding `v_max`.
pub fn st_distance(a: &SpaceTimePoint, b: &SpaceTimePoint, p: &DistanceParams) -> f64 {
    if a == b {
        return 0.0;
    }
    let dt = b.t - a.t;
    if dt <= 0.0 {
        return f64::INFINITY;
    }
    let dq = config_distance(&a.q, &b.q, p.angle_weight);
    if dq / dt > p.v_max {
        return f64::INFINITY;
    }
    p.lambda * dq + (1.0 - p.lambda) * dt
}

/// Candidate arrivals at one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalSet {
    pub points: Vec<SpaceTimePoint>,
    pub generation: u32,
}

impl GoalSet {
    pub fn at_times(q: Config, times: impl IntoIterator<Item = f64>) -> Self {
        let mut points: Vec<SpaceTimePoint> = times.into_iter().map(|t| SpaceTimePoint::new(q, t)).collect();
        points.sort_by(|a, b| a.t.total_cmp(&b.t));
        points.dedup_by(|a, b| a.t == b.t);
        Self { points, generation: 0 }
    }

    /// `n` evenly spaced arrivals over `[t_lo, t_hi]`.
    pub fn window(q: Config, t_lo: f64, t_hi: f64, n: usize) -> Self {
        let n = n.max(1);
        let times = (0..n).map(|k| {
            if n == 1 {
                t_lo
            } else {
                t_lo + (t_hi - t_lo) * k as f64 / (n - 1) as f64
            }
        });
        Self::at_times(q, times)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Uniform over the region box, any heading, and `[t_min, t_max]`.
pub fn sample_space_time(bounds: &Aabb, t_min: f64, t_max: f64, rng: &mut impl Rng) -> SpaceTimePoint {
    let mut u = |lo: f64, hi: f64| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let x = u(bounds.min[0], bounds.max[0]);
    let y = u(bounds.min[1], bounds.max[1]);
    let theta = u(-std::f64::consts::PI, std::f64::consts::PI);
    let t = u(t_min, t_max);
    SpaceTimePoint::new(Config::new(x, y, theta), t)
}

/// One robot moving against a frozen plan, optionally carrying an object.
#[derive(Debug, Clone, Copy)]
pub struct MotionQuery<'a> {
    pub scene: &'a Scene,
    pub plan: &'a PlanState,
    pub robot: &'a RobotSpec,
    pub carry: Option<&'a Carry>,
    pub dt_check: f64,
    /// Longest single extension, seconds.
    pub max_edge: f64,
}

impl<'a> MotionQuery<'a> {
    pub fn new(scene: &'a Scene, plan: &'a PlanState, robot: &'a RobotSpec, carry: Option<&'a Carry>) -> Self {
        Self {
            scene,
            plan,
            robot,
            carry,
            dt_check: DT_CHECK,
            max_edge: 0.5,
        }
    }

    pub fn speed_ok(&self, a: &SpaceTimePoint, b: &SpaceTimePoint) -> bool {
        let dt = b.t - a.t;
        if dt <= 0.0 {
            return dt == 0.0 && a.q.translation_to(&b.q) == 0.0 && a.q.rotation_to(&b.q) == 0.0;
        }
        a.q.translation_to(&b.q) <= self.robot.v_max * dt && a.q.rotation_to(&b.q) <= self.robot.omega_max * dt
    }

    pub fn edge_ok(&self, a: &SpaceTimePoint, b: &SpaceTimePoint) -> bool {
        self.speed_ok(a, b)
            && sweep_collision_free(self.plan, self.scene, self.robot, &a.knot(), &b.knot(), self.carry, self.dt_check)
    }

    pub fn point_ok(&self, p: &SpaceTimePoint) -> bool {
        let object = self.carry.and_then(|c| self.scene.object(&c.object));
        point_clear(self.plan, self.scene, self.robot, &p.q, p.t, object.zip(self.carry))
    }

    fn grip(&self) -> bool {
        self.carry.is_some()
    }
}

struct Node {
    p: SpaceTimePoint,
    parent: Option<usize>,
}

#[derive(PartialEq)]
enum Extend {
    Trapped,
    Advanced(usize),
    Reached(usize),
}

struct Tree {
    nodes: Vec<Node>,
    forward: bool,
}

impl Tree {
    /// Distance in the direction of travel of this tree.
    fn dist(&self, node: &SpaceTimePoint, target: &SpaceTimePoint, p: &DistanceParams) -> f64 {
        if self.forward {
            st_distance(node, target, p)
        } else {
            st_distance(target, node, p)
        }
    }

    fn nearest(&self, target: &SpaceTimePoint, p: &DistanceParams) -> Option<usize> {
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for (i, n) in self.nodes.iter().enumerate() {
            let d = self.dist(&n.p, target, p);
            if d < best_d {
                best_d = d;
                best = Some(i);
            }
        }
        best
    }

    fn extend(&mut self, q: &MotionQuery, target: &SpaceTimePoint, p: &DistanceParams) -> Extend {
        let Some(i) = self.nearest(target, p) else {
            return Extend::Trapped;
        };
        let from = self.nodes[i].p;
        let span = (target.t - from.t).abs();
        let (new, reached) = if span <= q.max_edge {
            (*target, true)
        } else {
            let s = q.max_edge / span;
            let mut c = from.q.lerp(&target.q, s);
            c.grip = q.grip();
            (SpaceTimePoint::new(c, from.t + s * (target.t - from.t)), false)
        };
        let ok = if self.forward {
            q.edge_ok(&from, &new)
        } else {
            q.edge_ok(&new, &from)
        };
        if !ok {
            return Extend::Trapped;
        }
        if new == from {
            return Extend::Reached(i);
        }
        self.nodes.push(Node {
            p: new,
            parent: Some(i),
        });
        let k = self.nodes.len() - 1;
        if reached {
            Extend::Reached(k)
        } else {
            Extend::Advanced(k)
        }
    }

    fn connect(&mut self, q: &MotionQuery, target: &SpaceTimePoint, p: &DistanceParams) -> Extend {
        loop {
            match self.extend(q, target, p) {
                Extend::Advanced(_) => continue,
                other => return other,
            }
        }
    }

    fn chain(&self, mut i: usize) -> Vec<SpaceTimePoint> {
        let mut out = vec![self.nodes[i].p];
        while let Some(parent) = self.nodes[i].parent {
            out.push(self.nodes[parent].p);
            i = parent;
        }
        out
    }
}

fn join(forward: &Tree, fi: usize, backward: &Tree, bi: usize, grip: bool) -> TimedPath {
    let mut pts = forward.chain(fi);
    pts.reverse();
    let back = backward.chain(bi);
    let skip = usize::from(pts.last() == back.first());
    pts.extend_from_slice(&back[skip..]);
    TimedPath::new(
        pts.into_iter()
            .map(|p| Knot::new(p.t, p.q.with_grip(grip)))
            .collect(),
    )
}

/// Plans from `start` to exactly one point of `goals`. Returns `None` when
/// the iteration budget runs out.
pub fn st_rrt_connect(
    query: &MotionQuery,
    start: SpaceTimePoint,
    goals: &GoalSet,
    params: &DistanceParams,
    budget: usize,
    goal_bias: f64,
    rng: &mut impl Rng,
) -> Option<TimedPath> {
    let grip = query.grip();
    let goals: Vec<SpaceTimePoint> = goals
        .points
        .iter()
        .filter(|g| g.t > start.t || **g == start)
        .filter(|g| query.point_ok(g))
        .copied()
        .collect();
    if goals.is_empty() {
        return None;
    }
    if goals.contains(&start) {
        return Some(TimedPath::single(start.t, start.q.with_grip(grip)));
    }
    let mut fwd = Tree {
        nodes: vec![Node { p: start, parent: None }],
        forward: true,
    };
    let mut bwd = Tree {
        nodes: goals.iter().map(|g| Node { p: *g, parent: None }).collect(),
        forward: false,
    };
    // Direct attempts, earliest arrival first.
    for (gi, g) in goals.iter().enumerate() {
        if let Extend::Reached(fi) = fwd.connect(query, g, params) {
            return Some(join(&fwd, fi, &bwd, gi, grip));
        }
        fwd.nodes.truncate(1);
    }
    let t_hi = goals.iter().map(|g| g.t).fold(start.t, f64::max);
    let bounds = query.robot.operating_region;
    for it in 0..budget {
        let forward_turn = it % 2 == 0;
        let sample = if rng.gen::<f64>() < goal_bias {
            if forward_turn {
                goals[rng.gen_range(0..goals.len())]
            } else {
                start
            }
        } else {
            let mut s = sample_space_time(&bounds, start.t, t_hi, rng);
            s.q.grip = grip;
            s
        };
        let (a, b) = if forward_turn {
            (&mut fwd, &mut bwd)
        } else {
            (&mut bwd, &mut fwd)
        };
        let new = match a.extend(query, &sample, params) {
            Extend::Advanced(k) | Extend::Reached(k) => k,
            Extend::Trapped => continue,
        };
        let target = a.nodes[new].p;
        if let Extend::Reached(other) = b.connect(query, &target, params) {
            return Some(if forward_turn {
                join(&fwd, new, &bwd, other, grip)
            } else {
                join(&fwd, other, &bwd, new, grip)
            });
        }
    }
    None
}

/// Weighted cost of a path: length and duration.
pub fn path_cost(path: &TimedPath, params: &DistanceParams) -> f64 {
    params.lambda * path.length(params.angle_weight) + (1.0 - params.lambda) * path.duration()
}

/// Shortcutting, smoothing and retiming that keep both endpoints and every
/// knot at or before `fixed_prefix_until`, never increase cost, and keep all
/// edges feasible.
pub fn shortcut_and_smooth(
    path: &TimedPath,
    query: &MotionQuery,
    params: &DistanceParams,
    fixed_prefix_until: f64,
    rounds: usize,
    rng: &mut impl Rng,
) -> TimedPath {
    let mut pts: Vec<SpaceTimePoint> = path.knots.iter().map(|k| SpaceTimePoint::new(k.q, k.t)).collect();
    if pts.len() < 3 {
        return path.clone();
    }
    // Knots strictly after `first_free` may change; the anchor itself stays.
    let anchor = pts
        .iter()
        .rposition(|p| p.t <= fixed_prefix_until)
        .unwrap_or(0);
    let seg_len = |a: &SpaceTimePoint, b: &SpaceTimePoint| config_distance(&a.q, &b.q, params.angle_weight);

    // Merge straight runs first.
    let mut i = anchor;
    while i + 2 < pts.len() {
        let (a, m, b) = (pts[i], pts[i + 1], pts[i + 2]);
        let s = (m.t - a.t) / (b.t - a.t);
        let mut on_line = a.q.lerp(&b.q, s);
        on_line.grip = m.q.grip;
        if on_line.translation_to(&m.q) < 1e-12 && on_line.rotation_to(&m.q) < 1e-12 && query.edge_ok(&a, &b) {
            pts.remove(i + 1);
        } else {
            i += 1;
        }
    }

    for _ in 0..rounds {
        let n = pts.len();
        if n < anchor + 3 {
            break;
        }
        match rng.gen_range(0..3) {
            0 => {
                let i = rng.gen_range(anchor..n - 2);
                let j = rng.gen_range(i + 2..n);
                let old: f64 = (i..j).map(|k| seg_len(&pts[k], &pts[k + 1])).sum();
                if seg_len(&pts[i], &pts[j]) <= old && query.edge_ok(&pts[i], &pts[j]) {
                    pts.drain(i + 1..j);
                }
            }
            1 => {
                let k = rng.gen_range(anchor + 1..n - 1);
                let (a, m, b) = (pts[k - 1], pts[k], pts[k + 1]);
                let s = (m.t - a.t) / (b.t - a.t);
                let mut target = a.q.lerp(&b.q, s);
                target.grip = m.q.grip;
                let mut cand = m;
                cand.q = m.q.lerp(&target, 0.5);
                cand.q.grip = m.q.grip;
                let old = seg_len(&a, &m) + seg_len(&m, &b);
                if seg_len(&a, &cand) + seg_len(&cand, &b) <= old && query.edge_ok(&a, &cand) && query.edge_ok(&cand, &b) {
                    pts[k] = cand;
                }
            }
            _ => {
                let k = rng.gen_range(anchor + 1..n - 1);
                let (a, m, b) = (pts[k - 1], pts[k], pts[k + 1]);
                let (la, lb) = (seg_len(&a, &m), seg_len(&m, &b));
                if la + lb <= 0.0 {
                    continue;
                }
                let mut cand = m;
                cand.t = a.t + (b.t - a.t) * la / (la + lb);
                if cand.t > a.t && cand.t < b.t && query.edge_ok(&a, &cand) && query.edge_ok(&cand, &b) {
                    pts[k] = cand;
                }
            }
        }
    }
    let mut out = TimedPath::new(pts.into_iter().map(|p| p.knot()).collect());
    out.attachments = path.attachments.clone();
    out.attachments.truncate(out.segment_count());
    if path_cost(&out, params) <= path_cost(path, params) {
        out
    } else {
        path.clone()
    }
}

/// Uniformly speeds up the part of `path` after `fixed_prefix_until` so that
/// it arrives earlier. The first scale whose edges stay feasible and whose
/// arrival time passes `accept` wins; the input is returned otherwise.
pub fn compress_arrival(
    path: &TimedPath,
    query: &MotionQuery,
    fixed_prefix_until: f64,
    steps: usize,
    mut accept: impl FnMut(f64) -> bool,
) -> TimedPath {
    let pts: Vec<SpaceTimePoint> = path.knots.iter().map(|k| SpaceTimePoint::new(k.q, k.t)).collect();
    let Some(anchor) = pts.iter().rposition(|p| p.t <= fixed_prefix_until) else {
        return path.clone();
    };
    if anchor + 1 >= pts.len() {
        return path.clone();
    }
    let t0 = pts[anchor].t;
    let mut s_min: f64 = 0.0;
    for w in pts[anchor..].windows(2) {
        let need = w[0].q.translation_to(&w[1].q) / query.robot.v_max;
        let need = need.max(w[0].q.rotation_to(&w[1].q) / query.robot.omega_max);
        s_min = s_min.max(need / (w[1].t - w[0].t));
    }
    let s_min = (s_min * (1.0 + 1e-9) + 1e-12).min(1.0);
    let steps = steps.max(1);
    for k in 0..steps {
        let s = s_min + (1.0 - s_min) * k as f64 / steps as f64;
        if s >= 1.0 {
            break;
        }
        let scaled: Vec<SpaceTimePoint> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if i <= anchor {
                    *p
                } else {
                    SpaceTimePoint::new(p.q, t0 + s * (p.t - t0))
                }
            })
            .collect();
        let end = scaled.last().map_or(t0, |p| p.t);
        if !accept(end) {
            continue;
        }
        if scaled[anchor..].windows(2).all(|w| w[1].t > w[0].t && query.edge_ok(&w[0], &w[1])) {
            let mut out = TimedPath::new(scaled.into_iter().map(|p| p.knot()).collect());
            out.attachments = path.attachments.clone();
            return out;
        }
    }
    path.clone()
}
