//! Adaptive articulated-object manipulation with parameterized primitives.
//!
//! A kinematic door and drawer simulator is paired with a two-headed policy.
//! The policy is cloned from demonstrations, then adapted online with
//! REINFORCE anchored by the imitation loss.

pub mod learn;
pub mod policy;
pub mod reward;
pub mod sim;
pub mod store;
pub mod trajectory;

pub use trajectory::{Action, Reward, Trajectory};
