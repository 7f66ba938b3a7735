use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::embed::{Embedding, Observation};
use super::episode::{EpisodeState, PerturbationRange};
use super::expert::{expert_action, ExpertNoise};
use super::object::{sample_object_spec, Category, ObjectSpec, Split};
use super::{SimError, DEFAULT_OBS_NOISE};

/// Objects per category and split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorldCounts {
    pub train_per_category: usize,
    pub test_per_category: usize,
}

impl Default for WorldCounts {
    fn default() -> Self {
        WorldCounts {
            train_per_category: 3,
            test_per_category: 2,
        }
    }
}

/// A set of objects sharing one observation model.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub seed: u64,
    pub obs_noise: f64,
    pub objects: Vec<ObjectSpec>,
    embedding: Embedding,
}

/// Command noise used when judging whether a held-out object is reachable.
pub const REACH_COMMAND_NOISE: f64 = 0.1;
/// Smallest acceptable success rate of the noisy demonstrated rule.
pub const MIN_REACH: f64 = 0.3;
const REACH_TRIALS: usize = 200;

impl World {
    pub fn new(seed: u64, obs_noise: f64, objects: Vec<ObjectSpec>) -> Result<Self, SimError> {
        if !(obs_noise >= 0.0 && obs_noise.is_finite()) {
            return Err(SimError::InvalidSpec(format!("obs_noise = {obs_noise}")));
        }
        let mut seen = std::collections::HashSet::new();
        for o in &objects {
            o.validate()?;
            if !seen.insert(o.id.as_str()) {
                return Err(SimError::InvalidSpec(format!(
                    "duplicate object id `{}`",
                    o.id
                )));
            }
        }
        Ok(World {
            seed,
            obs_noise,
            objects,
            embedding: Embedding::from_seed(seed),
        })
    }

    /// Samples `counts` objects per category for each split.
    ///
    /// Held-out objects are redrawn until [`is_feasible`] holds. Training
    /// groups are redrawn until both opening directions (and, for latched
    /// categories, both unlock directions and both of their relative
    /// orientations) appear, so the direction features are identifiable from
    /// the demonstrations.
    pub fn generate(seed: u64, counts: WorldCounts) -> Result<Self, SimError> {
        if counts.train_per_category == 0 || counts.test_per_category == 0 {
            return Err(SimError::InvalidSpec(
                "every category needs at least one train and one test object".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut objects = Vec::new();
        for (split, per) in [
            (Split::Train, counts.train_per_category),
            (Split::Test, counts.test_per_category),
        ] {
            for cat in Category::ALL {
                loop {
                    let mut group = Vec::with_capacity(per);
                    for k in 0..per {
                        let id = format!("{split}-{cat}{k}");
                        let spec = loop {
                            let s = sample_object_spec(id.clone(), cat, split, &mut rng);
                            if split == Split::Train || is_feasible(&s) {
                                break s;
                            }
                        };
                        group.push(spec);
                    }
                    let mixed_unlock = !cat.has_latch()
                        || group.iter().any(|o| o.unlock_dir != group[0].unlock_dir);
                    let mixed_open = group.iter().any(|o| o.open_dir != group[0].open_dir);
                    let same = |o: &ObjectSpec| o.unlock_dir == o.open_dir;
                    let decorrelated = !cat.has_latch()
                        || per < 3
                        || group.iter().any(|o| same(o) != same(&group[0]));
                    if split == Split::Test
                        || per < 2
                        || (mixed_unlock && mixed_open && decorrelated)
                    {
                        objects.extend(group);
                        break;
                    }
                }
            }
        }
        World::new(seed, DEFAULT_OBS_NOISE, objects)
    }

    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    pub fn object(&self, id: &str) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ObjectSpec> {
        self.objects.iter().filter(move |o| o.split == split)
    }

    /// Noisy observation of the current scene.
    pub fn observe<R: Rng + ?Sized>(&self, state: &EpisodeState, rng: &mut R) -> Observation {
        self.observe_with_noise(state, self.obs_noise, rng)
    }

    pub fn observe_with_noise<R: Rng + ?Sized>(
        &self,
        state: &EpisodeState,
        noise: f64,
        rng: &mut R,
    ) -> Observation {
        let mut obs = self.embedding.embed(&state.spec, state.apparent_openness());
        if noise > 0.0 {
            for v in obs.iter_mut() {
                let eta: f64 = rng.sample(StandardNormal);
                *v += noise * eta;
            }
        }
        obs
    }

    /// Same world with a different observation noise level.
    pub fn with_obs_noise(mut self, noise: f64) -> Self {
        self.obs_noise = noise;
        self
    }
}

/// Fraction of `trials` noisy demonstrations (with reset perturbations)
/// that open the object. Deterministic for a given spec.
pub fn reach_probability(spec: &ObjectSpec, noise: ExpertNoise, trials: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut s = EpisodeState::spawn(spec.clone());
    let mut hits = 0;
    for _ in 0..trials {
        s.reset(PerturbationRange::default(), &mut rng);
        let plan = expert_action(spec, noise, &mut rng);
        if s.exec_grasp(plan.grasp).is_err() {
            continue;
        }
        for (&tag, &c) in plan.tags.iter().zip(&plan.commands) {
            match s.exec_primitive(tag, c) {
                Ok(out) if !out.safety_violated => {}
                _ => break,
            }
        }
        hits += usize::from(s.oracle_success());
    }
    hits as f64 / trials as f64
}

/// Whether the demonstrated rule, executed with exaggerated command noise,
/// still opens the object often enough for trial and error to find it.
pub fn is_feasible(spec: &ObjectSpec) -> bool {
    let noise = ExpertNoise {
        grasp: ExpertNoise::default().grasp,
        command: REACH_COMMAND_NOISE,
    };
    reach_probability(spec, noise, REACH_TRIALS) >= MIN_REACH
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_world_counts() {
        let w = World::generate(1, WorldCounts::default()).unwrap();
        assert_eq!(w.objects.len(), 20);
        assert_eq!(w.split(Split::Train).count(), 12);
        assert_eq!(w.split(Split::Test).count(), 8);
        for cat in Category::ALL {
            assert_eq!(w.objects.iter().filter(|o| o.category == cat).count(), 5);
        }
        assert!(w.split(Split::Test).all(is_feasible));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = World::generate(5, WorldCounts::default()).unwrap();
        let b = World::generate(5, WorldCounts::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_counts_rejected() {
        let counts = WorldCounts {
            train_per_category: 0,
            test_per_category: 2,
        };
        assert!(World::generate(1, counts).is_err());
    }

    #[test]
    fn zero_noise_observation_is_deterministic() {
        let w = World::generate(2, WorldCounts::default())
            .unwrap()
            .with_obs_noise(0.0);
        let s = EpisodeState::spawn(w.objects[0].clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(w.observe(&s, &mut rng), w.observe(&s, &mut rng));
    }

    #[test]
    fn open_and_closed_differ_along_openness_column() {
        let w = World::generate(2, WorldCounts::default())
            .unwrap()
            .with_obs_noise(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = EpisodeState::spawn(w.objects[6].clone());
        let closed = w.observe(&s, &mut rng);
        s.joint_pos = s.joint_type().limit();
        let open = w.observe(&s, &mut rng);
        let col = w.embedding().column(super::super::embed::OPENNESS_INDEX);
        for i in 0..closed.len() {
            assert!((open[i] - closed[i] - 2.0 * col[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn observation_noise_std_matches() {
        let w = World::generate(3, WorldCounts::default()).unwrap();
        let s = EpisodeState::spawn(w.objects[0].clone());
        let clean = w.observe_with_noise(&s, 0.0, &mut ChaCha8Rng::seed_from_u64(0));
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 1000;
        let mut sq = [0.0; 16];
        for _ in 0..n {
            let o = w.observe(&s, &mut rng);
            for i in 0..16 {
                sq[i] += (o[i] - clean[i]).powi(2);
            }
        }
        for v in sq {
            let std = (v / n as f64).sqrt();
            assert!((std - 0.05).abs() <= 0.01, "std {std}");
        }
    }
}
