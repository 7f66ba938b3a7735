use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::episode::Primitive;
use super::object::{Category, ObjectSpec};
use super::GRASP_BOUND;
use crate::trajectory::Action;

/// Noise levels of the scripted demonstrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertNoise {
    /// Per-axis grasp noise, meters.
    pub grasp: f64,
    /// Additive command noise.
    pub command: f64,
}

impl Default for ExpertNoise {
    fn default() -> Self {
        ExpertNoise {
            grasp: 0.005,
            command: 0.05,
        }
    }
}

impl ExpertNoise {
    pub fn none() -> Self {
        ExpertNoise {
            grasp: 0.0,
            command: 0.0,
        }
    }
}

fn gauss<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    if std == 0.0 {
        0.0
    } else {
        Normal::new(0.0, std).expect("finite std").sample(rng)
    }
}

/// Fraction of full travel the expert commands on a latched door, keeping
/// the demonstrated command clear of the tanh saturation.
const OPEN_PULL: f64 = 0.9;

/// Two-primitive plan built from the object's ground truth.
///
/// Latched doors get an unlock just past the threshold followed by a strong
/// pull; latch-free objects get two moderate opens.
pub fn expert_action<R: Rng + ?Sized>(
    spec: &ObjectSpec,
    noise: ExpertNoise,
    rng: &mut R,
) -> Action {
    let grasp = std::array::from_fn(|i| {
        (spec.handle_offset[i] + gauss(rng, noise.grasp)).clamp(-GRASP_BOUND, GRASP_BOUND)
    });
    let open = spec.open_dir.value();
    let unlock = spec.unlock_dir.value() * (spec.unlock_threshold + 0.15);
    let plan = match spec.category {
        Category::A => [
            (Primitive::Unlock, unlock),
            (Primitive::Open, open * OPEN_PULL),
        ],
        Category::B => [
            (Primitive::Rotate, unlock),
            (Primitive::Open, open * OPEN_PULL),
        ],
        Category::C | Category::D => [(Primitive::Open, open * 0.5), (Primitive::Open, open * 0.5)],
    };
    let mut tags = Vec::with_capacity(2);
    let mut commands = Vec::with_capacity(2);
    for (tag, c) in plan {
        tags.push(tag);
        commands.push((c + gauss(rng, noise.command)).clamp(-1.0, 1.0));
    }
    Action {
        grasp,
        tags,
        commands,
    }
}
