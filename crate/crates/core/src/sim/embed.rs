//! Linear observation model standing in for camera images.
//!
//! An observation is `R z + noise`, where `z` stacks the object's latent
//! parameters and the door openness. `R` has orthogonal columns, each scaled so
//! that every latent spans a comparable observation distance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::object::{Category, ObjectSpec};
use super::{LATENT_DIM, OBS_DIM};

/// Column scales for `[onehot(4), unlock_dir, open_dir, threshold, friction, offset(3), openness]`.
pub const LATENT_SCALES: [f64; LATENT_DIM] = [
    2.0, 2.0, 2.0, 2.0, // category
    2.0, // unlock_dir
    2.0, // open_dir
    2.5, // unlock_threshold
    0.1, // friction
    2.0, 2.0, 2.0, // handle offset (m)
    4.0, // openness
];

pub const OPENNESS_INDEX: usize = LATENT_DIM - 1;

pub type Observation = [f64; OBS_DIM];

/// Latent vector of an object at a given apparent openness in `[-1, 1]`.
pub fn latent(spec: &ObjectSpec, openness: f64) -> [f64; LATENT_DIM] {
    let mut z = [0.0; LATENT_DIM];
    z[spec.category.index()] = 1.0;
    // Objects without a latch show no unlock direction.
    z[4] = if spec.category.has_latch() {
        spec.unlock_dir.value()
    } else {
        0.0
    };
    z[5] = spec.open_dir.value();
    z[6] = spec.unlock_threshold;
    z[7] = spec.friction;
    z[8..11].copy_from_slice(&spec.handle_offset);
    z[OPENNESS_INDEX] = openness;
    z
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    seed: u64,
    /// Row-major `OBS_DIM x LATENT_DIM`.
    matrix: [[f64; LATENT_DIM]; OBS_DIM],
}

impl Embedding {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x0e4b);
        // Gram-Schmidt on Gaussian columns; redraw a column on near-dependence.
        let mut cols: Vec<[f64; OBS_DIM]> = Vec::with_capacity(LATENT_DIM);
        while cols.len() < LATENT_DIM {
            let mut v: [f64; OBS_DIM] = std::array::from_fn(|_| rng.sample(StandardNormal));
            for c in &cols {
                let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm < 1e-6 {
                continue;
            }
            v.iter_mut().for_each(|a| *a /= norm);
            cols.push(v);
        }
        let mut matrix = [[0.0; LATENT_DIM]; OBS_DIM];
        for (j, col) in cols.iter().enumerate() {
            for i in 0..OBS_DIM {
                matrix[i][j] = col[i] * LATENT_SCALES[j];
            }
        }
        Embedding { seed, matrix }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn apply(&self, z: &[f64; LATENT_DIM]) -> Observation {
        std::array::from_fn(|i| self.matrix[i].iter().zip(z).map(|(r, x)| r * x).sum())
    }

    /// Noise-free observation of `spec` at the given apparent openness.
    pub fn embed(&self, spec: &ObjectSpec, openness: f64) -> Observation {
        self.apply(&latent(spec, openness))
    }

    /// Column `j` of the embedding matrix.
    pub fn column(&self, j: usize) -> Observation {
        std::array::from_fn(|i| self.matrix[i][j])
    }

    /// Observation of the `[category one-hot]` part alone; handy for tests.
    pub fn category_direction(&self, category: Category) -> Observation {
        self.column(category.index())
    }
}
