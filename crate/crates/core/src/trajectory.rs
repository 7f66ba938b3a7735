//! The unit of experience: one open-loop plan and what came of it.

use serde::{Deserialize, Serialize};

use crate::sim::{Observation, Primitive, Split};

/// Episode reward: +1 opened, 0 failed, -1 safety stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Reward {
    Violation,
    Fail,
    Success,
}

impl Reward {
    pub fn value(self) -> f64 {
        match self {
            Reward::Violation => -1.0,
            Reward::Fail => 0.0,
            Reward::Success => 1.0,
        }
    }
}

impl TryFrom<i8> for Reward {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            -1 => Ok(Reward::Violation),
            0 => Ok(Reward::Fail),
            1 => Ok(Reward::Success),
            other => Err(format!("reward must be -1, 0 or 1, got {other}")),
        }
    }
}

impl From<Reward> for i8 {
    fn from(r: Reward) -> i8 {
        match r {
            Reward::Violation => -1,
            Reward::Fail => 0,
            Reward::Success => 1,
        }
    }
}

/// Grasp offset plus a sequence of primitives with their scalar commands.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub grasp: [f64; 3],
    pub tags: Vec<Primitive>,
    pub commands: Vec<f64>,
}

impl Action {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub object_id: String,
    pub split: Split,
    pub initial_obs: Observation,
    pub action: Action,
    pub final_obs: Observation,
    pub reward: Reward,
}

impl Trajectory {
    pub fn succeeded(&self) -> bool {
        self.reward == Reward::Success
    }
}
