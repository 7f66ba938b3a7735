use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::objectives::{bc_loss, combined_update};
use super::rollout::{evaluate, rollout};
use super::{fork, AdaptConfig, LearnError, TrainState};
use crate::policy::PolicyParams;
use crate::reward::RewardModel;
use crate::sim::{EpisodeState, ObjectSpec, World};
use crate::trajectory::Trajectory;

/// One evaluation point of an adaptation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub iteration: usize,
    pub success_rate: f64,
    pub mean_reward: f64,
    /// Safety events among the evaluation episodes.
    pub safety_count: usize,
    /// Mean online surrogate loss over the iteration's gradient steps.
    pub loss_online: f64,
    /// Imitation loss over the full demonstration set after the update.
    pub loss_offline: f64,
}

/// Row 0 is the evaluation before any update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdaptCurve {
    pub rows: Vec<CurveRow>,
}

impl AdaptCurve {
    pub fn initial(&self) -> Option<&CurveRow> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&CurveRow> {
        self.rows.last()
    }
}

/// Online adaptation on a single object.
pub struct Adapter<'a> {
    world: &'a World,
    spec: &'a ObjectSpec,
    demos: &'a [Trajectory],
    pub config: AdaptConfig,
    pub state: TrainState,
    pub curve: AdaptCurve,
    /// Every rollout collected so far, in order.
    pub rollouts: Vec<Trajectory>,
}

impl<'a> Adapter<'a> {
    /// Starts a run from imitation-trained parameters and records row 0.
    pub fn new(
        world: &'a World,
        spec: &'a ObjectSpec,
        demos: &'a [Trajectory],
        config: AdaptConfig,
        params: PolicyParams,
        rng: ChaCha8Rng,
    ) -> Result<Self, LearnError> {
        Self::from_state(world, spec, demos, config, TrainState::new(params, rng))
    }

    /// Like [`Adapter::new`] but starting from an existing optimizer state.
    pub fn from_state(
        world: &'a World,
        spec: &'a ObjectSpec,
        demos: &'a [Trajectory],
        config: AdaptConfig,
        state: TrainState,
    ) -> Result<Self, LearnError> {
        config.validate()?;
        if demos.is_empty() {
            return Err(LearnError::EmptyBatch);
        }
        let mut adapter = Adapter {
            world,
            spec,
            demos,
            config,
            state,
            curve: AdaptCurve::default(),
            rollouts: Vec::new(),
        };
        let row = adapter.evaluate_row(0.0)?;
        adapter.curve.rows.push(row);
        Ok(adapter)
    }

    /// Continues a run from saved state. `curve` must hold the rows recorded
    /// so far.
    pub fn resume(
        world: &'a World,
        spec: &'a ObjectSpec,
        demos: &'a [Trajectory],
        config: AdaptConfig,
        state: TrainState,
        curve: AdaptCurve,
    ) -> Result<Self, LearnError> {
        config.validate()?;
        if demos.is_empty() {
            return Err(LearnError::EmptyBatch);
        }
        if curve.rows.len() as u64 != state.step + 1 {
            return Err(LearnError::Config(format!(
                "curve has {} rows but state is at iteration {}",
                curve.rows.len(),
                state.step
            )));
        }
        Ok(Adapter {
            world,
            spec,
            demos,
            config,
            state,
            curve,
            rollouts: Vec::new(),
        })
    }

    pub fn finished(&self) -> bool {
        self.state.step as usize >= self.config.iterations
    }

    /// One iteration: collect rollouts, apply the combined updates, evaluate.
    pub fn step(&mut self, reward: &mut dyn RewardModel) -> Result<CurveRow, LearnError> {
        let mut collect_rng = fork(&mut self.state.rng);
        let mut update_rng = fork(&mut self.state.rng);

        let mut env = EpisodeState::spawn(self.spec.clone());
        let mut online = Vec::with_capacity(self.config.rollouts_per_iteration);
        for _ in 0..self.config.rollouts_per_iteration {
            let r = rollout(
                self.world,
                &mut env,
                &self.state.params,
                reward,
                &mut collect_rng,
            )?;
            self.state.reward_sum += r.trajectory.reward.value();
            self.state.reward_count += 1;
            online.push(r.trajectory);
        }

        let baseline = if self.config.reward_baseline {
            self.state.running_baseline()
        } else {
            0.0
        };
        let online_refs: Vec<&Trajectory> = online.iter().collect();
        let mut online_loss = 0.0;
        for _ in 0..self.config.grad_steps_per_iteration {
            let offline: Vec<&Trajectory> = (0..online_refs.len())
                .map(|_| &self.demos[update_rng.random_range(0..self.demos.len())])
                .collect();
            let losses = combined_update(
                &mut self.state.params,
                &mut self.state.opt,
                &online_refs,
                &offline,
                self.config.alpha,
                self.config.rl_lr,
                baseline,
            )?;
            online_loss += losses.online;
        }
        online_loss /= self.config.grad_steps_per_iteration as f64;

        self.rollouts.extend(online);
        self.state.step += 1;
        let row = self.evaluate_row(online_loss)?;
        self.curve.rows.push(row);
        Ok(row)
    }

    pub fn run(&mut self, reward: &mut dyn RewardModel) -> Result<(), LearnError> {
        while !self.finished() {
            self.step(reward)?;
        }
        Ok(())
    }

    pub fn into_parts(self) -> (TrainState, AdaptCurve) {
        (self.state, self.curve)
    }

    fn evaluate_row(&mut self, loss_online: f64) -> Result<CurveRow, LearnError> {
        let mut eval_rng = fork(&mut self.state.rng);
        let stats = evaluate(
            self.world,
            &self.state.params,
            self.spec,
            self.config.eval_episodes,
            &mut eval_rng,
        )?;
        let all: Vec<&Trajectory> = self.demos.iter().collect();
        Ok(CurveRow {
            iteration: self.state.step as usize,
            success_rate: stats.success_rate(),
            mean_reward: stats.mean_reward(),
            safety_count: stats.safety_events,
            loss_online,
            loss_offline: bc_loss(&self.state.params, &all)?,
        })
    }
}

/// Runs a full adaptation on `spec` and returns the final parameters and curve.
pub fn adapt_online(
    world: &World,
    spec: &ObjectSpec,
    demos: &[Trajectory],
    params: PolicyParams,
    reward: &mut dyn RewardModel,
    config: AdaptConfig,
    rng: ChaCha8Rng,
) -> Result<(PolicyParams, AdaptCurve), LearnError> {
    let mut adapter = Adapter::new(world, spec, demos, config, params, rng)?;
    adapter.run(reward)?;
    let (state, curve) = adapter.into_parts();
    Ok((state.params, curve))
}
