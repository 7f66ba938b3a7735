//! Primitive-sequence classifier and conditional Gaussian parameter head.
//!
//! Both networks read the initial observation. The classifier emits one
//! categorical over `{Unlock, Rotate, Open}` per step; the conditional head also
//! sees the chosen tags and emits the mean of a diagonal Gaussian over the
//! normalized continuous action `(g / 0.1, c_1 .. c_N)`. Standard deviations are
//! global parameters. Everything lives in one flat `Vec<f64>` so gradients,
//! optimizer moments and checkpoints share a single layout.

mod adam;
mod net;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub use adam::Adam;
use net::Mlp;

use crate::sim::{Observation, Primitive, GRASP_BOUND, OBS_DIM};
use crate::trajectory::Action;

pub const HIDDEN: usize = 32;
pub const NUM_TAGS: usize = 3;
pub const GRASP_DIM: usize = 3;
pub const MIN_STD: f64 = 0.02;
pub const MAX_STD: f64 = 1.0;
pub const INIT_STD: f64 = 0.3;
pub const MAX_PRIMITIVES: usize = 4;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("observation contains a non-finite value")]
    NonFiniteInput,
    #[error("expected {expected} primitives, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("parameter vector has {got} entries, layout needs {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("number of primitives must be in 1..=4, got {0}")]
    BadPrimitiveCount(usize),
}

/// Offsets of the two networks and the log-std block inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    n: usize,
    classifier: Mlp,
    conditional: Mlp,
    log_std: usize,
}

impl Layout {
    pub fn new(n: usize) -> Result<Self, PolicyError> {
        if n == 0 || n > MAX_PRIMITIVES {
            return Err(PolicyError::BadPrimitiveCount(n));
        }
        let classifier = Mlp::new(OBS_DIM, HIDDEN, NUM_TAGS * n, 0);
        let conditional = Mlp::new(
            OBS_DIM + NUM_TAGS * n,
            HIDDEN,
            GRASP_DIM + n,
            classifier.len(),
        );
        let log_std = classifier.len() + conditional.len();
        Ok(Layout {
            n,
            classifier,
            conditional,
            log_std,
        })
    }

    pub fn n_primitives(&self) -> usize {
        self.n
    }

    pub fn action_dim(&self) -> usize {
        GRASP_DIM + self.n
    }

    pub fn len(&self) -> usize {
        self.log_std + self.action_dim()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index range of the classifier weights.
    pub fn phi(&self) -> std::ops::Range<usize> {
        self.classifier.range()
    }

    /// Index range of the conditional-head weights.
    pub fn theta(&self) -> std::ops::Range<usize> {
        self.conditional.range()
    }

    pub fn log_std(&self) -> std::ops::Range<usize> {
        self.log_std..self.len()
    }
}

/// All learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    layout: Layout,
    data: Vec<f64>,
}

/// A flat gradient with the same layout as [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(pub Vec<f64>);

impl Gradient {
    pub fn zeros(len: usize) -> Self {
        Gradient(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn add_scaled(&mut self, other: &Gradient, k: f64) {
        self.0
            .iter_mut()
            .zip(&other.0)
            .for_each(|(a, b)| *a += k * b);
    }

    pub fn scale(&mut self, k: f64) {
        self.0.iter_mut().for_each(|a| *a *= k);
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// A sampled plan with the log-probabilities of the pre-clip draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    /// Clipped action, ready to execute.
    pub action: Action,
    /// Unclipped draw in physical units.
    pub raw: Action,
    pub logp_phi: f64,
    pub logp_theta: f64,
}

fn softmax(logits: &[f64]) -> [f64; NUM_TAGS] {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: [f64; NUM_TAGS] = std::array::from_fn(|k| (logits[k] - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

fn log_softmax(logits: &[f64]) -> [f64; NUM_TAGS] {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    std::array::from_fn(|k| logits[k] - lse)
}

fn check_obs(obs: &Observation) -> Result<(), PolicyError> {
    if obs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PolicyError::NonFiniteInput)
    }
}

/// Normalized continuous action `(g / 0.1, c)`.
fn normalized(action: &Action) -> Vec<f64> {
    action
        .grasp
        .iter()
        .map(|g| g / GRASP_BOUND)
        .chain(action.commands.iter().copied())
        .collect()
}

/// Diagonal Gaussian head output.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    /// Mean in normalized action coordinates, each in `[-1, 1]`.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GaussianHead {
    /// Mean grasp offset in meters.
    pub fn grasp_mean(&self) -> [f64; 3] {
        std::array::from_fn(|i| self.mean[i] * GRASP_BOUND)
    }

    pub fn command_mean(&self) -> &[f64] {
        &self.mean[GRASP_DIM..]
    }
}

impl PolicyParams {
    /// Weights and biases uniform in `+/- 1/sqrt(fan_in)`, std set to 0.3.
    pub fn init<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self, PolicyError> {
        let layout = Layout::new(n)?;
        let mut data = vec![0.0; layout.len()];
        for mlp in [layout.classifier, layout.conditional] {
            for dense in [mlp.hidden, mlp.output] {
                let bound = 1.0 / (dense.cols as f64).sqrt();
                let r = dense.offset..dense.offset + dense.len();
                data[r]
                    .iter_mut()
                    .for_each(|w| *w = rng.random_range(-bound..bound));
            }
        }
        data[layout.log_std()]
            .iter_mut()
            .for_each(|v| *v = INIT_STD.ln());
        Ok(PolicyParams { layout, data })
    }

    pub fn zeros(n: usize) -> Result<Self, PolicyError> {
        let layout = Layout::new(n)?;
        let mut p = PolicyParams {
            layout,
            data: vec![0.0; layout.len()],
        };
        p.log_std_mut().iter_mut().for_each(|v| *v = INIT_STD.ln());
        Ok(p)
    }

    pub fn from_flat(n: usize, data: Vec<f64>) -> Result<Self, PolicyError> {
        let layout = Layout::new(n)?;
        if data.len() != layout.len() {
            return Err(PolicyError::ShapeMismatch {
                expected: layout.len(),
                got: data.len(),
            });
        }
        Ok(PolicyParams { layout, data })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn n_primitives(&self) -> usize {
        self.layout.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn log_std(&self) -> &[f64] {
        &self.data[self.layout.log_std()]
    }

    pub fn log_std_mut(&mut self) -> &mut [f64] {
        let r = self.layout.log_std();
        &mut self.data[r]
    }

    pub fn clamp_log_std(&mut self) {
        let (lo, hi) = (MIN_STD.ln(), MAX_STD.ln());
        self.log_std_mut()
            .iter_mut()
            .for_each(|v| *v = v.clamp(lo, hi));
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_tags(&self, tags: &[Primitive]) -> Result<(), PolicyError> {
        if tags.len() != self.layout.n {
            return Err(PolicyError::WrongLength {
                expected: self.layout.n,
                got: tags.len(),
            });
        }
        Ok(())
    }

    fn classifier_logits(&self, obs: &Observation) -> net::MlpCache {
        self.layout.classifier.forward(&self.data, obs)
    }

    /// Per-step tag distributions.
    pub fn classifier_forward(
        &self,
        obs: &Observation,
    ) -> Result<Vec<[f64; NUM_TAGS]>, PolicyError> {
        check_obs(obs)?;
        let cache = self.classifier_logits(obs);
        Ok(cache.output.chunks(NUM_TAGS).map(softmax).collect())
    }

    fn conditional_input(&self, obs: &Observation, tags: &[Primitive]) -> Vec<f64> {
        let mut x = Vec::with_capacity(OBS_DIM + NUM_TAGS * tags.len());
        x.extend_from_slice(obs);
        for t in tags {
            let mut onehot = [0.0; NUM_TAGS];
            onehot[t.index()] = 1.0;
            x.extend_from_slice(&onehot);
        }
        x
    }

    fn conditional_cache(&self, obs: &Observation, tags: &[Primitive]) -> net::MlpCache {
        let x = self.conditional_input(obs, tags);
        self.layout.conditional.forward(&self.data, &x)
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std().iter().map(|v| v.exp()).collect()
    }

    /// Gaussian over the normalized continuous action given the tags.
    pub fn conditional_forward(
        &self,
        obs: &Observation,
        tags: &[Primitive],
    ) -> Result<GaussianHead, PolicyError> {
        check_obs(obs)?;
        self.check_tags(tags)?;
        let cache = self.conditional_cache(obs, tags);
        Ok(GaussianHead {
            mean: cache.output.iter().map(|v| v.tanh()).collect(),
            std: self.std(),
        })
    }

    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        obs: &Observation,
        rng: &mut R,
    ) -> Result<ActionSample, PolicyError> {
        let probs = self.classifier_forward(obs)?;
        let mut tags = Vec::with_capacity(self.layout.n);
        let mut logp_phi = 0.0;
        for p in &probs {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = NUM_TAGS - 1;
            for (k, &pk) in p.iter().enumerate() {
                acc += pk;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            tags.push(Primitive::from_index(pick).expect("tag index"));
            logp_phi += p[pick].ln();
        }
        let head = self.conditional_forward(obs, &tags)?;
        let mut raw = Vec::with_capacity(head.mean.len());
        let mut logp_theta = 0.0;
        for (i, (&m, &s)) in head.mean.iter().zip(&head.std).enumerate() {
            let xi: f64 = rng.sample(StandardNormal);
            raw.push(m + s * xi);
            logp_theta += -0.5 * xi * xi - self.log_std()[i] - HALF_LN_2PI;
        }
        let raw_action = Action {
            grasp: std::array::from_fn(|i| raw[i] * GRASP_BOUND),
            tags: tags.clone(),
            commands: raw[GRASP_DIM..].to_vec(),
        };
        let action = Action {
            grasp: raw_action.grasp.map(|g| g.clamp(-GRASP_BOUND, GRASP_BOUND)),
            tags,
            commands: raw_action
                .commands
                .iter()
                .map(|c| c.clamp(-1.0, 1.0))
                .collect(),
        };
        Ok(ActionSample {
            action,
            raw: raw_action,
            logp_phi,
            logp_theta,
        })
    }

    /// Deterministic plan: most likely tags and the Gaussian mean.
    pub fn mode_action(&self, obs: &Observation) -> Result<Action, PolicyError> {
        let probs = self.classifier_forward(obs)?;
        let tags: Vec<Primitive> = probs
            .iter()
            .map(|p| {
                let k = (0..NUM_TAGS)
                    .max_by(|&a, &b| p[a].total_cmp(&p[b]))
                    .expect("non-empty");
                Primitive::from_index(k).expect("tag index")
            })
            .collect();
        let head = self.conditional_forward(obs, &tags)?;
        Ok(Action {
            grasp: head.grasp_mean(),
            commands: head.command_mean().to_vec(),
            tags,
        })
    }

    /// `(log P(tags | obs), log N(g, c | obs, tags))`; the density is over the
    /// normalized action.
    pub fn log_prob(&self, obs: &Observation, action: &Action) -> Result<(f64, f64), PolicyError> {
        check_obs(obs)?;
        self.check_tags(&action.tags)?;
        check_len(self.layout.n, action.commands.len())?;
        let cls = self.classifier_logits(obs);
        let logp_phi = cls
            .output
            .chunks(NUM_TAGS)
            .zip(&action.tags)
            .map(|(logits, t)| log_softmax(logits)[t.index()])
            .sum();
        let cond = self.conditional_cache(obs, &action.tags);
        let a = normalized(action);
        let logp_theta = cond
            .output
            .iter()
            .zip(&a)
            .zip(self.log_std())
            .map(|((&pre, &x), &ls)| {
                let z = (x - pre.tanh()) / ls.exp();
                -0.5 * z * z - ls - HALF_LN_2PI
            })
            .sum();
        Ok((logp_phi, logp_theta))
    }

    /// Adds `scale * d/dparams [log P(tags) + log N(g, c)]` into `grad` and
    /// returns the two log terms.
    pub fn accumulate_grad_log_prob(
        &self,
        obs: &Observation,
        action: &Action,
        scale: f64,
        grad: &mut Gradient,
    ) -> Result<(f64, f64), PolicyError> {
        check_obs(obs)?;
        self.check_tags(&action.tags)?;
        check_len(self.layout.n, action.commands.len())?;
        if grad.len() != self.len() {
            return Err(PolicyError::ShapeMismatch {
                expected: self.len(),
                got: grad.len(),
            });
        }

        // Classifier: d log softmax_k / d logits = onehot_k - p.
        let cls = self.classifier_logits(obs);
        let mut dlogits = vec![0.0; cls.output.len()];
        let mut logp_phi = 0.0;
        for (step, (logits, t)) in cls.output.chunks(NUM_TAGS).zip(&action.tags).enumerate() {
            let p = softmax(logits);
            logp_phi += log_softmax(logits)[t.index()];
            for k in 0..NUM_TAGS {
                let target = if k == t.index() { 1.0 } else { 0.0 };
                dlogits[step * NUM_TAGS + k] = target - p[k];
            }
        }
        self.layout
            .classifier
            .backward(&self.data, &cls, &dlogits, scale, &mut grad.0);

        // Conditional head through the tanh output squashing.
        let cond = self.conditional_cache(obs, &action.tags);
        let a = normalized(action);
        let mut dpre = vec![0.0; cond.output.len()];
        let mut logp_theta = 0.0;
        let ls_range = self.layout.log_std();
        for (i, ((&pre, &x), &ls)) in cond.output.iter().zip(&a).zip(self.log_std()).enumerate() {
            let mu = pre.tanh();
            let var = (2.0 * ls).exp();
            let diff = x - mu;
            logp_theta += -0.5 * diff * diff / var - ls - HALF_LN_2PI;
            dpre[i] = diff / var * (1.0 - mu * mu);
            grad.0[ls_range.start + i] += scale * (diff * diff / var - 1.0);
        }
        self.layout
            .conditional
            .backward(&self.data, &cond, &dpre, scale, &mut grad.0);
        Ok((logp_phi, logp_theta))
    }

    pub fn grad_log_prob(
        &self,
        obs: &Observation,
        action: &Action,
    ) -> Result<Gradient, PolicyError> {
        let mut g = Gradient::zeros(self.len());
        self.accumulate_grad_log_prob(obs, action, 1.0, &mut g)?;
        Ok(g)
    }
}

fn check_len(expected: usize, got: usize) -> Result<(), PolicyError> {
    if expected == got {
        Ok(())
    } else {
        Err(PolicyError::WrongLength { expected, got })
    }
}

/// One Adam descent step on `grad`, then re-clamp the log-stds.
pub fn optimizer_step(
    params: &mut PolicyParams,
    grad: &Gradient,
    opt: &mut Adam,
    lr: f64,
) -> Result<(), PolicyError> {
    if grad.len() != params.len() || opt.len() != params.len() {
        return Err(PolicyError::ShapeMismatch {
            expected: params.len(),
            got: if grad.len() != params.len() {
                grad.len()
            } else {
                opt.len()
            },
        });
    }
    opt.step(params.as_mut_slice(), &grad.0, lr);
    params.clamp_log_std();
    Ok(())
}
