use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{signed_distance, wrap_angle, Aabb, Pose2, Shape};

/// Distinguished node of the assembly graph that stands for the ground.
pub const GROUND: &str = "GROUND";

/// Robot configuration: base pose plus gripper state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    #[serde(default)]
    pub grip: bool,
}

impl Config {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
            grip: false,
        }
    }

    pub fn with_grip(mut self, grip: bool) -> Self {
        self.grip = grip;
        self
    }

    pub fn from_pose(p: Pose2, grip: bool) -> Self {
        Self {
            x: p.x,
            y: p.y,
            theta: p.theta,
            grip,
        }
    }

    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.x, self.y, self.theta)
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// Gripper frame: `offset` ahead of the base along the heading.
    pub fn gripper_pose(&self, offset: f64) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(self.x + offset * c, self.y + offset * s, self.theta)
    }

    pub fn gripper_point(&self, offset: f64) -> [f64; 2] {
        self.gripper_pose(offset).position()
    }

    /// Straight interpolation; the heading follows the shorter arc and the
    /// grip flag is taken from `self`.
    pub fn lerp(&self, other: &Config, s: f64) -> Config {
        let p = self.pose().lerp(&other.pose(), s);
        Config::from_pose(p, self.grip)
    }

    pub fn translation_to(&self, other: &Config) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }

    pub fn rotation_to(&self, other: &Config) -> f64 {
        wrap_angle(other.theta - self.theta).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub id: String,
    pub width: f64,
    pub height: f64,
    pub start_pose: Pose2,
    pub goal_pose: Pose2,
    /// Grasp sites in the object frame.
    pub grasp_sites: Vec<[f64; 2]>,
}

impl ObjectSpec {
    pub fn shape_at(&self, pose: Pose2) -> Shape {
        Shape::rect(pose, self.width, self.height)
    }

    pub fn half_diagonal(&self) -> f64 {
        0.5 * self.width.hypot(self.height)
    }

    pub fn site_world(&self, pose: &Pose2, site: usize) -> [f64; 2] {
        pose.transform_point(self.grasp_sites[site])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub id: String,
    pub base_radius: f64,
    pub gripper_offset: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub operating_region: Aabb,
    pub home_config: Config,
}

impl RobotSpec {
    pub fn shape_at(&self, q: &Config) -> Shape {
        Shape::disc(q.position(), self.base_radius)
    }

    /// Minimum duration for moving between two configurations.
    pub fn min_travel_time(&self, a: &Config, b: &Config) -> f64 {
        (a.translation_to(b) / self.v_max).max(a.rotation_to(b) / self.omega_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    objects: Vec<ObjectSpec>,
    robots: Vec<RobotSpec>,
    static_obstacles: Vec<Aabb>,
    assembly_edges: Vec<(String, String)>,
}

/// Immutable world description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SceneFile", into = "SceneFile")]
pub struct Scene {
    pub objects: Vec<ObjectSpec>,
    pub robots: Vec<RobotSpec>,
    pub static_obstacles: Vec<Aabb>,
    pub assembly_edges: Vec<(String, String)>,
    object_index: BTreeMap<String, usize>,
    robot_index: BTreeMap<String, usize>,
}

impl TryFrom<SceneFile> for Scene {
    type Error = Error;

    fn try_from(f: SceneFile) -> Result<Self> {
        Scene::new(f.objects, f.robots, f.static_obstacles, f.assembly_edges)
    }
}

impl From<Scene> for SceneFile {
    fn from(s: Scene) -> Self {
        SceneFile {
            objects: s.objects,
            robots: s.robots,
            static_obstacles: s.static_obstacles,
            assembly_edges: s.assembly_edges,
        }
    }
}

impl Scene {
    pub fn new(
        objects: Vec<ObjectSpec>,
        robots: Vec<RobotSpec>,
        static_obstacles: Vec<Aabb>,
        assembly_edges: Vec<(String, String)>,
    ) -> Result<Self> {
        let object_index = objects
            .iter()
            .enumerate()
            .map(|(i, o)| (o.id.clone(), i))
            .collect();
        let robot_index = robots
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();
        let scene = Scene {
            objects,
            robots,
            static_obstacles,
            assembly_edges,
            object_index,
            robot_index,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: SceneFile = serde_json::from_str(s)?;
        file.try_into()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    /// SHA-256 over the canonical compact serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scene serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Same scene restricted to its first `m` robots.
    pub fn with_robots(&self, m: usize) -> Result<Scene> {
        if m == 0 || m > self.robots.len() {
            return Err(Error::InvalidScene(format!(
                "requested {m} robots, scene has {}",
                self.robots.len()
            )));
        }
        Scene::new(
            self.objects.clone(),
            self.robots[..m].to_vec(),
            self.static_obstacles.clone(),
            self.assembly_edges.clone(),
        )
    }

    pub fn object(&self, id: &str) -> Option<&ObjectSpec> {
        self.object_index.get(id).map(|&i| &self.objects[i])
    }

    pub fn robot(&self, id: &str) -> Option<&RobotSpec> {
        self.robot_index.get(id).map(|&i| &self.robots[i])
    }

    pub fn is_robot(&self, id: &str) -> bool {
        self.robot_index.contains_key(id)
    }

    pub fn is_object(&self, id: &str) -> bool {
        self.object_index.contains_key(id)
    }

    pub fn robot_ids(&self) -> impl Iterator<Item = &str> {
        self.robots.iter().map(|r| r.id.as_str())
    }

    pub fn object_ids(&self) -> impl Iterator<Item = &str> {
        self.objects.iter().map(|o| o.id.as_str())
    }

    /// Bounding box of all regions, obstacles and object poses.
    pub fn bounds(&self) -> Aabb {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        let mut add = |p: [f64; 2], r: f64| {
            lo[0] = lo[0].min(p[0] - r);
            lo[1] = lo[1].min(p[1] - r);
            hi[0] = hi[0].max(p[0] + r);
            hi[1] = hi[1].max(p[1] + r);
        };
        for r in &self.robots {
            add(r.operating_region.min, r.base_radius);
            add(r.operating_region.max, r.base_radius);
        }
        for o in &self.objects {
            add(o.start_pose.position(), o.half_diagonal());
            add(o.goal_pose.position(), o.half_diagonal());
        }
        for a in &self.static_obstacles {
            add(a.min, 0.0);
            add(a.max, 0.0);
        }
        if !lo[0].is_finite() {
            return Aabb::new([0.0, 0.0], [1.0, 1.0]);
        }
        Aabb::new(lo, hi)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScene(m));
        let mut ids = BTreeSet::new();
        for id in self.object_ids().chain(self.robot_ids()) {
            if id == GROUND || id.is_empty() {
                return bad(format!("reserved or empty id `{id}`"));
            }
            if !ids.insert(id) {
                return bad(format!("duplicate id `{id}`"));
            }
        }
        for o in &self.objects {
            if !(o.width > 0.0 && o.height > 0.0 && o.width.is_finite() && o.height.is_finite()) {
                return bad(format!("object `{}` must have positive finite size", o.id));
            }
            if o.grasp_sites.is_empty() {
                return bad(format!("object `{}` has no grasp sites", o.id));
            }
        }
        for r in &self.robots {
            let positive = |v: f64| v.is_finite() && v > 0.0;
            if !positive(r.base_radius)
                || !positive(r.v_max)
                || !positive(r.omega_max)
                || !(r.gripper_offset >= 0.0 && r.gripper_offset.is_finite())
            {
                return bad(format!("robot `{}` has invalid kinematic parameters", r.id));
            }
            if !r.operating_region.is_valid() {
                return bad(format!("robot `{}` has an invalid operating region", r.id));
            }
            if !r.operating_region.contains(r.home_config.position()) {
                return bad(format!("robot `{}` home lies outside its region", r.id));
            }
        }
        for a in &self.static_obstacles {
            if !a.is_valid() {
                return bad("static obstacle with min > max".into());
            }
        }
        for (i, a) in self.objects.iter().enumerate() {
            for b in &self.objects[i + 1..] {
                if signed_distance(&a.shape_at(a.start_pose), &b.shape_at(b.start_pose)) < 0.0 {
                    return bad(format!("start poses of `{}` and `{}` overlap", a.id, b.id));
                }
                if signed_distance(&a.shape_at(a.goal_pose), &b.shape_at(b.goal_pose)) < 0.0 {
                    return bad(format!("goal poses of `{}` and `{}` overlap", a.id, b.id));
                }
            }
        }
        self.validate_graph()
    }

    fn validate_graph(&self) -> Result<()> {
        let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (a, b) in &self.assembly_edges {
            for n in [a, b] {
                if n != GROUND && !self.is_object(n) {
                    return Err(Error::InvalidScene(format!(
                        "assembly edge references unknown node `{n}`"
                    )));
                }
            }
            if a == b {
                return Err(Error::InvalidScene(format!("self edge on `{a}`")));
            }
            adj.entry(a).or_default().push(b);
            adj.entry(b).or_default().push(a);
        }
        let mut seen = BTreeSet::from([GROUND]);
        let mut queue = VecDeque::from([GROUND]);
        while let Some(n) = queue.pop_front() {
            for &m in adj.get(n).into_iter().flatten() {
                if seen.insert(m) {
                    queue.push_back(m);
                }
            }
        }
        if let Some(o) = self.object_ids().find(|o| !seen.contains(o)) {
            return Err(Error::InvalidScene(format!(
                "object `{o}` is not connected to {GROUND}"
            )));
        }
        Ok(())
    }
}
