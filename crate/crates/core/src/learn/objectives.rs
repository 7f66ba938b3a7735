//! Imitation, policy-gradient and combined objectives.
//!
//! All losses are minimized. The REINFORCE estimator is returned in the
//! ascent direction (as written for expected reward) and negated where it
//! enters the combined loss.

use super::LearnError;
use crate::policy::{optimizer_step, Adam, Gradient, PolicyParams};
use crate::trajectory::Trajectory;

/// `-mean(log pi_phi(C|I) + log pi_theta(g, c|C, I))` over demonstrations and
/// its gradient.
pub fn bc_loss_and_grad(
    params: &PolicyParams,
    batch: &[&Trajectory],
) -> Result<(f64, Gradient), LearnError> {
    if batch.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let k = -1.0 / batch.len() as f64;
    let mut grad = Gradient::zeros(params.len());
    let mut loss = 0.0;
    for t in batch {
        let (lp, lt) = params.accumulate_grad_log_prob(&t.initial_obs, &t.action, k, &mut grad)?;
        loss += k * (lp + lt);
    }
    Ok((loss, grad))
}

pub fn bc_loss(params: &PolicyParams, batch: &[&Trajectory]) -> Result<f64, LearnError> {
    if batch.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let mut loss = 0.0;
    for t in batch {
        let (lp, lt) = params.log_prob(&t.initial_obs, &t.action)?;
        loss -= lp + lt;
    }
    Ok(loss / batch.len() as f64)
}

/// `mean((R - baseline) * grad log pi)` in the ascent direction, plus the
/// online surrogate loss `-mean((R - baseline) * log pi)`.
pub fn reinforce_grad_with_baseline(
    params: &PolicyParams,
    batch: &[&Trajectory],
    baseline: f64,
) -> Result<(f64, Gradient), LearnError> {
    if batch.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let inv = 1.0 / batch.len() as f64;
    let mut grad = Gradient::zeros(params.len());
    let mut loss = 0.0;
    for t in batch {
        let weight = t.reward.value() - baseline;
        if weight == 0.0 {
            continue;
        }
        let (lp, lt) =
            params.accumulate_grad_log_prob(&t.initial_obs, &t.action, weight * inv, &mut grad)?;
        loss -= weight * inv * (lp + lt);
    }
    Ok((loss, grad))
}

/// Plain REINFORCE: no baseline.
pub fn reinforce_grad(
    params: &PolicyParams,
    batch: &[&Trajectory],
) -> Result<Gradient, LearnError> {
    Ok(reinforce_grad_with_baseline(params, batch, 0.0)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateLosses {
    pub online: f64,
    pub offline: f64,
}

/// Gradient of `L_online + alpha * L_offline`.
pub fn combined_grad(
    params: &PolicyParams,
    online: &[&Trajectory],
    offline: &[&Trajectory],
    alpha: f64,
    baseline: f64,
) -> Result<(UpdateLosses, Gradient), LearnError> {
    if online.len() != offline.len() {
        return Err(LearnError::BatchMismatch {
            online: online.len(),
            offline: offline.len(),
        });
    }
    let (online_loss, ascent) = reinforce_grad_with_baseline(params, online, baseline)?;
    let mut grad = ascent;
    grad.scale(-1.0);
    let mut offline_loss = 0.0;
    if alpha != 0.0 {
        let (l, g) = bc_loss_and_grad(params, offline)?;
        grad.add_scaled(&g, alpha);
        offline_loss = l;
    }
    Ok((
        UpdateLosses {
            online: online_loss,
            offline: offline_loss,
        },
        grad,
    ))
}

/// One optimizer step on the combined objective with equal-sized batches.
pub fn combined_update(
    params: &mut PolicyParams,
    opt: &mut Adam,
    online: &[&Trajectory],
    offline: &[&Trajectory],
    alpha: f64,
    lr: f64,
    baseline: f64,
) -> Result<UpdateLosses, LearnError> {
    let (losses, grad) = combined_grad(params, online, offline, alpha, baseline)?;
    optimizer_step(params, &grad, opt, lr)?;
    Ok(losses)
}
