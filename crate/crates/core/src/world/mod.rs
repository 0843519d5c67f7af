//! Planar world model: scene description, committed plans, time-dependent
//! evaluation and collision checking.

mod collision;
mod path;
mod plan_state;
mod scene;

pub use collision::{
    carry_reach, collision_free, point_clear, static_object_clear, sweep_collision_free, CarriedObject, Carry,
    DT_CHECK,
};
pub use path::{Attachment, Knot, TimedPath};
pub use plan_state::{Event, PlanState};
pub use scene::{Config, ObjectSpec, RobotSpec, Scene, GROUND};

use crate::error::{Error, Result};
use crate::geometry::Pose2;

/// State of an entity at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EntityState {
    Robot(Config),
    Object(Pose2),
}

/// Evaluates an entity along the committed plan: interpolated up to its
/// horizon, held at its last value afterwards, at rest if never planned.
pub fn evaluate_entity(plan: &PlanState, scene: &Scene, entity: &str, t: f64) -> Result<EntityState> {
    if let Some(robot) = scene.robot(entity) {
        return Ok(EntityState::Robot(plan.robot_config(robot, t)));
    }
    if let Some(object) = scene.object(entity) {
        return Ok(EntityState::Object(plan.object_pose(scene, object, t)));
    }
    Err(Error::UnknownEntity(entity.to_owned()))
}
