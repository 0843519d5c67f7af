use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose2;
use crate::skeletons::ActionKind;
use crate::world::path::TimedPath;
use crate::world::scene::{Config, ObjectSpec, RobotSpec, Scene};

/// One scheduled action of a robot: the active task between `start` and `end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub action: ActionKind,
    pub object: String,
    pub start: f64,
    pub end: f64,
    /// The other robot of a handover.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Snapshot {
    committed: BTreeMap<String, TimedPath>,
    placed: Vec<String>,
    events: BTreeMap<String, Vec<Event>>,
}

/// The growing global plan. Entities without a committed path rest at their
/// start pose (objects) or home configuration (robots); committed paths are
/// clamped at their last knot beyond their horizon.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlanState {
    pub committed: BTreeMap<String, TimedPath>,
    pub placed: Vec<String>,
    pub events: BTreeMap<String, Vec<Event>>,
    snapshots: Vec<Snapshot>,
}

impl PlanState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Last committed time of an entity, zero if it has no path.
    pub fn horizon(&self, id: &str) -> f64 {
        self.committed.get(id).map_or(0.0, TimedPath::end_time)
    }

    pub fn horizons(&self, scene: &Scene) -> BTreeMap<String, f64> {
        scene
            .robot_ids()
            .chain(scene.object_ids())
            .map(|id| (id.to_owned(), self.horizon(id)))
            .collect()
    }

    pub fn makespan(&self) -> f64 {
        self.committed
            .values()
            .map(TimedPath::end_time)
            .fold(0.0, f64::max)
    }

    pub fn placed_set(&self) -> BTreeSet<&str> {
        self.placed.iter().map(String::as_str).collect()
    }

    pub fn is_placed(&self, object: &str) -> bool {
        self.placed.iter().any(|o| o == object)
    }

    pub fn robot_config(&self, robot: &RobotSpec, t: f64) -> Config {
        self.committed
            .get(&robot.id)
            .and_then(|p| p.interpolate(t))
            .unwrap_or(robot.home_config)
    }

    pub fn object_pose(&self, scene: &Scene, object: &ObjectSpec, t: f64) -> Pose2 {
        let Some(path) = self.committed.get(&object.id) else {
            return object.start_pose;
        };
        if let Some(k) = path.segment_index(t) {
            if let Some(att) = path.attachment(k) {
                if let Some(carrier) = scene.robot(&att.robot) {
                    let q = self.robot_config(carrier, t);
                    return q.gripper_pose(carrier.gripper_offset).compose(&att.grasp);
                }
            }
        }
        path.interpolate(t)
            .map_or(object.start_pose, |q| q.pose())
    }

    pub fn commit(&mut self, id: &str, path: &TimedPath) {
        self.committed.entry(id.to_owned()).or_default().extend_with(path);
    }

    pub fn push_event(&mut self, robot: &str, event: Event) {
        self.events.entry(robot.to_owned()).or_default().push(event);
    }

    /// Records the current state so a later [`PlanState::rewind`] can restore it.
    pub fn push_snapshot(&mut self) {
        self.snapshots.push(Snapshot {
            committed: self.committed.clone(),
            placed: self.placed.clone(),
            events: self.events.clone(),
        });
    }

    /// Copy without the snapshot history, for tentative planning.
    pub fn working_copy(&self) -> PlanState {
        PlanState {
            committed: self.committed.clone(),
            placed: self.placed.clone(),
            events: self.events.clone(),
            snapshots: Vec::new(),
        }
    }

    /// Snapshots the current state, then adopts the content of `work`.
    pub fn adopt(&mut self, work: PlanState) {
        self.push_snapshot();
        self.committed = work.committed;
        self.placed = work.placed;
        self.events = work.events;
    }

    pub fn snapshot_count(&self) -> usize {
        self.snapshots.len()
    }

    /// Restores the state from `depth` snapshots ago; depth 0 is a no-op.
    pub fn rewind(&mut self, depth: usize) -> Result<()> {
        if depth > self.snapshots.len() {
            return Err(Error::BacktrackTooDeep {
                depth,
                available: self.snapshots.len(),
            });
        }
        if depth == 0 {
            return Ok(());
        }
        let keep = self.snapshots.len() - depth;
        let snap = self.snapshots.drain(keep..).next().expect("depth >= 1");
        self.committed = snap.committed;
        self.placed = snap.placed;
        self.events = snap.events;
        Ok(())
    }
}
