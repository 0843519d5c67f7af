use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keyframes::{CostConfig, KeyframeOptions};

/// Planner settings. Every field is optional in the JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub seed: u64,
    /// Weight of configuration distance against elapsed time.
    pub lambda: f64,
    /// Replaces every robot's speed bound when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
    pub max_team: usize,
    pub max_handover_hops: usize,
    pub max_actions: usize,
    /// RRT iterations per segment.
    pub budget: usize,
    pub goal_bias: f64,
    pub goal_points: usize,
    pub goal_window_doublings: u32,
    pub shortcut_rounds: usize,
    pub time_resamples: usize,
    pub window_doublings: u32,
    pub max_backtracks: usize,
    /// Slot length of the fixed-step baseline; `None` plans with free times.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_time: Option<f64>,
    pub keyframes: KeyframeOptions,
    pub cost: CostConfig,
    pub dt_check: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lambda: 0.5,
            v_max: None,
            max_team: 2,
            max_handover_hops: 1,
            max_actions: 8,
            budget: 5000,
            goal_bias: 0.1,
            goal_points: 8,
            goal_window_doublings: 3,
            shortcut_rounds: 100,
            time_resamples: 5,
            window_doublings: 8,
            max_backtracks: 64,
            fixed_time: None,
            keyframes: KeyframeOptions::default(),
            cost: CostConfig::default(),
            dt_check: crate::world::DT_CHECK,
        }
    }
}

impl PlannerConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad("lambda must lie in (0, 1]");
        }
        if self.v_max.is_some_and(|v| !(v.is_finite() && v > 0.0)) {
            return bad("v_max must be positive");
        }
        if self.max_team == 0 {
            return bad("max_team must be at least 1");
        }
        if self.max_actions < 3 {
            return bad("max_actions must allow pick, place and retract");
        }
        if self.fixed_time.is_some_and(|t| !(t.is_finite() && t > 0.0)) {
            return bad("fixed_time must be positive");
        }
        if !(self.dt_check > 0.0) {
            return bad("dt_check must be positive");
        }
        if !(0.0..=1.0).contains(&self.goal_bias) {
            return bad("goal_bias must lie in [0, 1]");
        }
        if self.goal_points == 0 || self.time_resamples == 0 || self.keyframes.restarts == 0 {
            return bad("goal_points, time_resamples and keyframes.restarts must be positive");
        }
        self.cost.validate()
    }
}
