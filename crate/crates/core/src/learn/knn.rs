use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::rollout::EvalStats;
use super::LearnError;
use crate::sim::{EpisodeOutcome, EpisodeState, Observation, PerturbationRange, World};
use crate::trajectory::{Action, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnnMode {
    /// Replay the nearest demonstration's whole plan.
    OpenLoop,
    /// Re-query before every primitive and take that neighbor's step.
    ClosedLoop,
}

impl fmt::Display for KnnMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KnnMode::OpenLoop => "open_loop",
            KnnMode::ClosedLoop => "closed_loop",
        })
    }
}

impl FromStr for KnnMode {
    type Err = LearnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "open_loop" | "open-loop" | "open" => Ok(KnnMode::OpenLoop),
            "closed_loop" | "closed-loop" | "closed" => Ok(KnnMode::ClosedLoop),
            other => Err(LearnError::Config(format!("unknown knn mode `{other}`"))),
        }
    }
}

/// 1-nearest-neighbor action replay over demonstration start observations.
#[derive(Debug, Clone, Copy)]
pub struct KnnReplay<'a> {
    demos: &'a [Trajectory],
}

impl<'a> KnnReplay<'a> {
    pub fn new(demos: &'a [Trajectory]) -> Result<Self, LearnError> {
        if demos.is_empty() {
            return Err(LearnError::EmptyBatch);
        }
        Ok(KnnReplay { demos })
    }

    /// Index of the closest record; ties go to the lowest index.
    pub fn nearest(&self, obs: &Observation) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, t) in self.demos.iter().enumerate() {
            let d: f64 = t
                .initial_obs
                .iter()
                .zip(obs)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn plan(&self, obs: &Observation) -> &'a Action {
        &self.demos[self.nearest(obs)].action
    }
}

/// One replay episode. The scene is reset first, as for policy rollouts.
pub fn knn_episode<R: Rng + ?Sized>(
    world: &World,
    env: &mut EpisodeState,
    replay: &KnnReplay<'_>,
    mode: KnnMode,
    rng: &mut R,
) -> Result<EpisodeOutcome, LearnError> {
    env.reset(PerturbationRange::default(), rng);
    let obs = world.observe(env, rng);
    let first = replay.plan(&obs);
    match mode {
        KnnMode::OpenLoop => Ok(crate::sim::execute_plan(world, env, first, rng)?),
        KnnMode::ClosedLoop => {
            env.exec_grasp(first.grasp)?;
            for step in 0..first.len() {
                let action = if step == 0 {
                    first
                } else {
                    replay.plan(&world.observe(env, rng))
                };
                if env
                    .exec_primitive(action.tags[step], action.commands[step])?
                    .safety_violated
                {
                    break;
                }
            }
            Ok(EpisodeOutcome {
                final_obs: world.observe(env, rng),
                final_state: env.clone(),
                safety_violated: env.safety_violated,
            })
        }
    }
}

/// Success statistics of `trials` replay episodes on a fresh copy of `spec`.
pub fn knn_evaluate<R: Rng + ?Sized>(
    world: &World,
    replay: &KnnReplay<'_>,
    spec: &crate::sim::ObjectSpec,
    mode: KnnMode,
    trials: usize,
    rng: &mut R,
) -> Result<EvalStats, LearnError> {
    if trials == 0 {
        return Err(LearnError::Config(
            "evaluation needs at least one episode".into(),
        ));
    }
    let mut env = EpisodeState::spawn(spec.clone());
    let mut stats = EvalStats {
        episodes: trials,
        successes: 0,
        safety_events: 0,
        reward_sum: 0.0,
    };
    for _ in 0..trials {
        let out = knn_episode(world, &mut env, replay, mode, rng)?;
        let label = crate::reward::oracle_reward(&out.final_state, out.safety_violated);
        stats.successes += usize::from(out.final_state.oracle_success());
        stats.safety_events += usize::from(out.safety_violated);
        stats.reward_sum += label.value.value();
    }
    Ok(stats)
}
