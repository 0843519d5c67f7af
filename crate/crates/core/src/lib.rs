//! Multi-robot assembly planning in space and time.
//!
//! Objects are placed one by one. For each object a small team of robots is
//! chosen, a symbolic action skeleton is fixed, keyframe configurations and
//! switch times are solved, and the connecting motions are found by a
//! bi-directional space-time RRT against the plan committed so far.

pub mod assembly;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod keyframes;
pub mod orchestrator;
pub mod scenes;
pub mod skeletons;
pub mod stplanner;
pub mod world;

pub use error::{Error, Result};
