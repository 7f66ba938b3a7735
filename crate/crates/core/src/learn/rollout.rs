use rand::Rng;

use super::LearnError;
use crate::policy::PolicyParams;
use crate::reward::{oracle_reward, EpisodeView, RewardModel};
use crate::sim::{
    execute_plan, expert_action, EpisodeOutcome, EpisodeState, ExpertNoise, ObjectSpec,
    Observation, PerturbationRange, World,
};
use crate::trajectory::{Action, Reward, Trajectory};

/// Anything that maps an initial observation to an open-loop plan.
///
/// `spec` is privileged ground truth; only the scripted expert reads it.
pub trait Controller {
    fn plan<R: Rng + ?Sized>(
        &self,
        obs: &Observation,
        spec: &ObjectSpec,
        rng: &mut R,
    ) -> Result<Action, LearnError>;
}

impl Controller for PolicyParams {
    fn plan<R: Rng + ?Sized>(
        &self,
        obs: &Observation,
        _spec: &ObjectSpec,
        rng: &mut R,
    ) -> Result<Action, LearnError> {
        Ok(self.sample_action(obs, rng)?.action)
    }
}

/// The scripted demonstrator as a controller.
#[derive(Debug, Clone, Copy)]
pub struct ScriptedExpert(pub ExpertNoise);

impl Controller for ScriptedExpert {
    fn plan<R: Rng + ?Sized>(
        &self,
        _obs: &Observation,
        spec: &ObjectSpec,
        rng: &mut R,
    ) -> Result<Action, LearnError> {
        Ok(expert_action(spec, self.0, rng))
    }
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub outcome: EpisodeOutcome,
}

/// Reset, observe, plan, execute, label. The scene is reset (and the base
/// perturbed) at the start of every episode.
pub fn rollout<C: Controller + ?Sized, R: Rng + ?Sized>(
    world: &World,
    env: &mut EpisodeState,
    controller: &C,
    reward: &mut dyn RewardModel,
    rng: &mut R,
) -> Result<Rollout, LearnError> {
    env.reset(PerturbationRange::default(), rng);
    let initial_obs = world.observe(env, rng);
    let action = controller.plan(&initial_obs, &env.spec, rng)?;
    let outcome = execute_plan(world, env, &action, rng)?;
    let label = reward.label(&EpisodeView {
        final_state: &outcome.final_state,
        final_obs: &outcome.final_obs,
        action: &action,
    })?;
    let trajectory = Trajectory {
        object_id: env.spec.id.clone(),
        split: env.spec.split,
        initial_obs,
        action,
        final_obs: outcome.final_obs,
        reward: label.value,
    };
    Ok(Rollout {
        trajectory,
        outcome,
    })
}

/// Ground-truth statistics of a batch of evaluation episodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub episodes: usize,
    pub successes: usize,
    pub safety_events: usize,
    pub reward_sum: f64,
}

impl EvalStats {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.episodes as f64
    }

    pub fn mean_reward(&self) -> f64 {
        self.reward_sum / self.episodes as f64
    }
}

/// Runs `episodes` stochastic episodes on a freshly spawned copy of `spec`
/// and scores them with the ground-truth oracle.
pub fn evaluate<C: Controller + ?Sized, R: Rng + ?Sized>(
    world: &World,
    controller: &C,
    spec: &ObjectSpec,
    episodes: usize,
    rng: &mut R,
) -> Result<EvalStats, LearnError> {
    if episodes == 0 {
        return Err(LearnError::Config(
            "evaluation needs at least one episode".into(),
        ));
    }
    let mut env = EpisodeState::spawn(spec.clone());
    let mut oracle = crate::reward::OracleReward;
    let mut stats = EvalStats {
        episodes,
        successes: 0,
        safety_events: 0,
        reward_sum: 0.0,
    };
    for _ in 0..episodes {
        let r = rollout(world, &mut env, controller, &mut oracle, rng)?;
        if r.outcome.final_state.oracle_success() {
            stats.successes += 1;
        }
        if r.outcome.safety_violated {
            stats.safety_events += 1;
        }
        stats.reward_sum += oracle_reward(&r.outcome.final_state, r.outcome.safety_violated)
            .value
            .value();
    }
    Ok(stats)
}

/// Expert demonstrations on every object in `objects`, `per_object` each.
pub fn generate_demos<'a, R: Rng + ?Sized>(
    world: &World,
    objects: impl IntoIterator<Item = &'a ObjectSpec>,
    per_object: usize,
    noise: ExpertNoise,
    rng: &mut R,
) -> Result<Vec<Trajectory>, LearnError> {
    let expert = ScriptedExpert(noise);
    let mut oracle = crate::reward::OracleReward;
    let mut out = Vec::new();
    for spec in objects {
        let mut env = EpisodeState::spawn(spec.clone());
        for _ in 0..per_object {
            out.push(rollout(world, &mut env, &expert, &mut oracle, rng)?.trajectory);
        }
    }
    Ok(out)
}

pub fn success_rate(records: &[Trajectory]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records
        .iter()
        .filter(|t| t.reward == Reward::Success)
        .count() as f64
        / records.len() as f64
}
