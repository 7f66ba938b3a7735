use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::objectives::bc_loss_and_grad;
use super::{AdaptConfig, LearnError, TrainState};
use crate::policy::{optimizer_step, PolicyParams};
use crate::trajectory::Trajectory;

/// Minibatch behavior cloning, one epoch at a time.
#[derive(Debug, Clone)]
pub struct BcTrainer {
    pub state: TrainState,
    pub config: AdaptConfig,
    /// Mean minibatch loss of each completed epoch.
    pub epoch_losses: Vec<f64>,
}

impl BcTrainer {
    pub fn new(config: AdaptConfig, mut rng: ChaCha8Rng) -> Result<Self, LearnError> {
        config.validate()?;
        let params = PolicyParams::init(config.n_primitives, &mut rng)?;
        Ok(Self::resume(config, TrainState::new(params, rng)))
    }

    pub fn resume(config: AdaptConfig, state: TrainState) -> Self {
        BcTrainer {
            state,
            config,
            epoch_losses: Vec::new(),
        }
    }

    pub fn run_epoch(&mut self, demos: &[Trajectory]) -> Result<f64, LearnError> {
        if demos.is_empty() {
            return Err(LearnError::EmptyBatch);
        }
        let mut order: Vec<usize> = (0..demos.len()).collect();
        order.shuffle(&mut self.state.rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(self.config.bc_batch) {
            let batch: Vec<&Trajectory> = chunk.iter().map(|&i| &demos[i]).collect();
            let (loss, grad) = bc_loss_and_grad(&self.state.params, &batch)?;
            optimizer_step(
                &mut self.state.params,
                &grad,
                &mut self.state.opt,
                self.config.bc_lr,
            )?;
            total += loss;
            batches += 1;
        }
        self.state.step += 1;
        let mean = total / batches as f64;
        self.epoch_losses.push(mean);
        Ok(mean)
    }

    /// Runs epochs until `config.bc_epochs` have been completed in total.
    pub fn run(&mut self, demos: &[Trajectory]) -> Result<(), LearnError> {
        while (self.state.step as usize) < self.config.bc_epochs {
            self.run_epoch(demos)?;
        }
        Ok(())
    }
}

/// Trains both heads on the demonstrations for `config.bc_epochs` epochs.
pub fn train_bc(
    demos: &[Trajectory],
    config: AdaptConfig,
    rng: ChaCha8Rng,
) -> Result<BcTrainer, LearnError> {
    let mut trainer = BcTrainer::new(config, rng)?;
    trainer.run(demos)?;
    Ok(trainer)
}
