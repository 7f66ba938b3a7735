//! Kinematic simulator of articulated objects and primitive execution.

mod embed;
mod episode;
mod expert;
mod object;
mod world;

use rand::Rng;
use thiserror::Error;

pub use embed::{latent, Embedding, Observation, LATENT_SCALES, OPENNESS_INDEX};
pub use episode::{ControlVector, EpisodeState, PerturbationRange, Primitive, Se2, StepOutcome};
pub use expert::{expert_action, ExpertNoise};
pub use object::{
    sample_object_spec, Category, JointType, ObjectSpec, Sign, Split, SplitDistribution,
};
pub use world::{is_feasible, reach_probability, World, WorldCounts};

use crate::trajectory::Action;

pub const OBS_DIM: usize = 16;
pub const LATENT_DIM: usize = 12;
pub const DEFAULT_OBS_NOISE: f64 = 0.05;

pub const REVOLUTE_LIMIT: f64 = 1.57;
pub const PRISMATIC_LIMIT: f64 = 0.5;
pub const REVOLUTE_SUCCESS: f64 = 0.5;
pub const PRISMATIC_SUCCESS: f64 = 0.25;
pub const REVOLUTE_OPEN_GAIN: f64 = 0.8;
pub const PRISMATIC_OPEN_GAIN: f64 = 0.4;

pub const HANDLE_TRAVEL_LIMIT: f64 = 1.2;
pub const SAFETY_CURRENT_MAX: f64 = 0.2;
pub const GRASP_TOLERANCE: f64 = 0.03;
pub const GRASP_BOUND: f64 = 0.1;
/// Base travel per unit Open command when nothing is held.
pub const BASE_STEP_PER_COMMAND: f64 = 0.3;
pub const SPRING_RELAXATION: f64 = 0.8;
pub const SPRING_PROB: f64 = 0.3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("command {0} outside [-1, 1]")]
    CommandOutOfRange(f64),
    #[error("grasp offset {0:?} outside the +/-0.1 m box")]
    GraspOutOfBounds([f64; 3]),
    #[error("grasp must be the first primitive, step index is {0}")]
    GraspOutOfOrder(usize),
    #[error("episode already terminated by a safety stop")]
    SafetyLatched,
    #[error("invalid object: {0}")]
    InvalidSpec(String),
    #[error("{0}")]
    Parse(String),
}

/// Result of running one plan to completion.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub final_obs: Observation,
    pub final_state: EpisodeState,
    pub safety_violated: bool,
}

/// Grasps, then executes each primitive in order, stopping at a safety event.
/// The final observation is taken before the caller resets the scene.
pub fn execute_plan<R: Rng + ?Sized>(
    world: &World,
    env: &mut EpisodeState,
    action: &Action,
    rng: &mut R,
) -> Result<EpisodeOutcome, SimError> {
    env.exec_grasp(action.grasp)?;
    for (&tag, &c) in action.tags.iter().zip(&action.commands) {
        if env.exec_primitive(tag, c)?.safety_violated {
            break;
        }
    }
    let final_obs = world.observe(env, rng);
    Ok(EpisodeOutcome {
        final_obs,
        final_state: env.clone(),
        safety_violated: env.safety_violated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noiseless_expert_opens_every_train_object() {
        let world = World::generate(21, WorldCounts::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for spec in world.split(Split::Train) {
            let mut env = EpisodeState::spawn(spec.clone());
            env.reset(PerturbationRange::default(), &mut rng);
            let action = expert_action(spec, ExpertNoise::none(), &mut rng);
            let out = execute_plan(&world, &mut env, &action, &mut rng).unwrap();
            assert!(!out.safety_violated, "{}", spec.id);
            assert!(
                out.final_state.oracle_success(),
                "{} {:?}",
                spec.id,
                out.final_state
            );
        }
    }

    #[test]
    fn expert_plan_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = sample_object_spec("d", Category::D, Split::Train, &mut rng);
        let a = expert_action(&d, ExpertNoise::default(), &mut rng);
        assert_eq!(a.tags, vec![Primitive::Open, Primitive::Open]);
        let b = sample_object_spec("b", Category::B, Split::Train, &mut rng);
        let a = expert_action(&b, ExpertNoise::default(), &mut rng);
        assert_eq!(a.tags, vec![Primitive::Rotate, Primitive::Open]);
        assert!(a.commands.iter().all(|c| c.abs() <= 1.0));
    }
}
