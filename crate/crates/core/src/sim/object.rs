use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimError;

/// Object families, split by handle articulation and main joint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    /// Lever handle with a latch, revolute door.
    A,
    /// Knob handle with a latch, revolute door.
    B,
    /// Fixed handle, revolute joint, no latch.
    C,
    /// Fixed handle, prismatic joint (drawer), no latch.
    D,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::A, Category::B, Category::C, Category::D];

    pub fn index(self) -> usize {
        match self {
            Category::A => 0,
            Category::B => 1,
            Category::C => 2,
            Category::D => 3,
        }
    }

    pub fn joint_type(self) -> JointType {
        match self {
            Category::D => JointType::Prismatic,
            _ => JointType::Revolute,
        }
    }

    pub fn has_latch(self) -> bool {
        matches!(self, Category::A | Category::B)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::A => "A",
            Category::B => "B",
            Category::C => "C",
            Category::D => "D",
        };
        f.write_str(s)
    }
}

impl FromStr for Category {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" => Ok(Category::A),
            "B" => Ok(Category::B),
            "C" => Ok(Category::C),
            "D" => Ok(Category::D),
            other => Err(SimError::Parse(format!("unknown category `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointType {
    Revolute,
    Prismatic,
}

impl JointType {
    /// Upper joint limit (rad for revolute, m for prismatic).
    pub fn limit(self) -> f64 {
        match self {
            JointType::Revolute => super::REVOLUTE_LIMIT,
            JointType::Prismatic => super::PRISMATIC_LIMIT,
        }
    }

    /// Joint displacement that counts as an opened door.
    pub fn success_threshold(self) -> f64 {
        match self {
            JointType::Revolute => super::REVOLUTE_SUCCESS,
            JointType::Prismatic => super::PRISMATIC_SUCCESS,
        }
    }

    /// Joint displacement per unit Open command at zero friction.
    pub fn open_gain(self) -> f64 {
        match self {
            JointType::Revolute => super::REVOLUTE_OPEN_GAIN,
            JointType::Prismatic => super::PRISMATIC_OPEN_GAIN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(SimError::Parse(format!("unknown split `{other}`"))),
        }
    }
}

/// Direction of actuation, serialized as `1` / `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Sign {
    Pos,
    Neg,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Pos => 1.0,
            Sign::Neg => -1.0,
        }
    }

    pub fn flipped(self) -> Sign {
        match self {
            Sign::Pos => Sign::Neg,
            Sign::Neg => Sign::Pos,
        }
    }

    /// Sign of a command; zero has no direction.
    pub fn of(x: f64) -> Option<Sign> {
        if x > 0.0 {
            Some(Sign::Pos)
        } else if x < 0.0 {
            Some(Sign::Neg)
        } else {
            None
        }
    }
}

impl TryFrom<i8> for Sign {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Sign::Pos),
            -1 => Ok(Sign::Neg),
            other => Err(format!("direction must be 1 or -1, got {other}")),
        }
    }
}

impl From<Sign> for i8 {
    fn from(s: Sign) -> i8 {
        match s {
            Sign::Pos => 1,
            Sign::Neg => -1,
        }
    }
}

/// Ground-truth physical parameters of one articulated object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: String,
    pub category: Category,
    pub split: Split,
    /// Handle direction that releases the latch. Unused for C and D.
    pub unlock_dir: Sign,
    /// Normalized handle travel needed to release the latch.
    pub unlock_threshold: f64,
    /// Pull (+1) or push (-1).
    pub open_dir: Sign,
    pub friction: f64,
    pub spring_loaded: bool,
    /// True grasp point relative to the nominal handle detection, meters.
    pub handle_offset: [f64; 3],
}

pub const MAX_UNLOCK_THRESHOLD: f64 = 1.2;
pub const MAX_FRICTION: f64 = 0.5;
pub const MAX_HANDLE_OFFSET: f64 = 0.05;
/// Range of generated handle offsets per axis.
pub const HANDLE_OFFSET_SPREAD: f64 = 0.005;

impl ObjectSpec {
    pub fn joint_type(&self) -> JointType {
        self.category.joint_type()
    }

    pub fn latched_at_spawn(&self) -> bool {
        self.category.has_latch()
    }

    /// Multiplier applied to Open displacement.
    pub fn open_efficiency(&self) -> f64 {
        1.0 - self.friction
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |what: &str, v: f64| {
            Err(SimError::InvalidSpec(format!(
                "object `{}`: {what} = {v} out of range",
                self.id
            )))
        };
        if !(self.unlock_threshold > 0.0 && self.unlock_threshold <= MAX_UNLOCK_THRESHOLD) {
            return bad("unlock_threshold", self.unlock_threshold);
        }
        if !(0.0..=MAX_FRICTION).contains(&self.friction) {
            return bad("friction", self.friction);
        }
        for &o in &self.handle_offset {
            if !(-MAX_HANDLE_OFFSET..=MAX_HANDLE_OFFSET).contains(&o) {
                return bad("handle_offset", o);
            }
        }
        if self.id.is_empty() || self.id.chars().any(char::is_whitespace) {
            return Err(SimError::InvalidSpec(format!(
                "object id `{}` must be non-empty without whitespace",
                self.id
            )));
        }
        Ok(())
    }
}

/// Per-split parameter ranges used by [`sample_object_spec`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitDistribution {
    /// Probability that `unlock_dir` is +1.
    pub unlock_pos_prob: f64,
    pub threshold: (f64, f64),
    pub friction: (f64, f64),
    pub spring_prob: f64,
}

impl SplitDistribution {
    pub fn for_split(split: Split) -> Self {
        match split {
            Split::Train => SplitDistribution {
                unlock_pos_prob: 0.75,
                threshold: (0.2, 0.6),
                friction: (0.0, 0.3),
                spring_prob: 0.0,
            },
            Split::Test => SplitDistribution {
                unlock_pos_prob: 0.25,
                threshold: (0.2, 0.6),
                friction: (0.25, 0.5),
                spring_prob: super::SPRING_PROB,
            },
        }
    }
}

/// Draws one object of `category` from the split's parameter distribution.
///
/// The test split flips the majority unlock direction and raises friction.
/// Spring loading only occurs there.
pub fn sample_object_spec<R: Rng + ?Sized>(
    id: impl Into<String>,
    category: Category,
    split: Split,
    rng: &mut R,
) -> ObjectSpec {
    let dist = SplitDistribution::for_split(split);
    let unlock_dir = if rng.random::<f64>() < dist.unlock_pos_prob {
        Sign::Pos
    } else {
        Sign::Neg
    };
    let open_dir = if rng.random::<bool>() {
        Sign::Pos
    } else {
        Sign::Neg
    };
    let unlock_threshold = rng.random_range(dist.threshold.0..=dist.threshold.1);
    let friction = rng.random_range(dist.friction.0..=dist.friction.1);
    let spring_loaded = rng.random::<f64>() < dist.spring_prob;
    let handle_offset =
        std::array::from_fn(|_| rng.random_range(-HANDLE_OFFSET_SPREAD..=HANDLE_OFFSET_SPREAD));
    ObjectSpec {
        id: id.into(),
        category,
        split,
        unlock_dir,
        unlock_threshold,
        open_dir,
        friction,
        spring_loaded,
        handle_offset,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unlatched_categories_spawn_unlatched() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = sample_object_spec("c0", Category::C, Split::Train, &mut rng);
        assert!(!spec.latched_at_spawn());
        let spec = sample_object_spec("d0", Category::D, Split::Test, &mut rng);
        assert!(!spec.latched_at_spawn());
        assert_eq!(spec.joint_type(), JointType::Prismatic);
    }

    #[test]
    fn sampled_objects_respect_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for split in [Split::Train, Split::Test] {
            for cat in Category::ALL {
                for _ in 0..200 {
                    let spec = sample_object_spec("x", cat, split, &mut rng);
                    spec.validate().unwrap();
                    assert_eq!(
                        spec.joint_type() == JointType::Prismatic,
                        cat == Category::D
                    );
                }
            }
        }
    }

    #[test]
    fn test_split_friction_is_shifted() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let spec = sample_object_spec("b", Category::B, Split::Test, &mut rng);
            assert!((0.25..=0.5).contains(&spec.friction), "{}", spec.friction);
            let spec = sample_object_spec("b", Category::B, Split::Train, &mut rng);
            assert!((0.0..=0.3).contains(&spec.friction), "{}", spec.friction);
        }
    }

    #[test]
    fn unlock_majority_flips_between_splits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let count = |split, rng: &mut ChaCha8Rng| {
            (0..4000)
                .filter(|_| {
                    sample_object_spec("a", Category::A, split, rng).unlock_dir == Sign::Pos
                })
                .count()
        };
        assert!(count(Split::Train, &mut rng) > 2000);
        assert!(count(Split::Test, &mut rng) < 2000);
    }

    #[test]
    fn validate_rejects_bad_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut spec = sample_object_spec("a", Category::A, Split::Train, &mut rng);
        spec.friction = 0.7;
        assert!(spec.validate().is_err());
        spec.friction = 0.1;
        spec.unlock_threshold = 0.0;
        assert!(spec.validate().is_err());
        spec.unlock_threshold = 0.4;
        spec.id = "has space".into();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn sign_serde_uses_integers() {
        assert_eq!(serde_json::to_string(&Sign::Neg).unwrap(), "-1");
        let s: Sign = serde_json::from_str("1").unwrap();
        assert_eq!(s, Sign::Pos);
        assert!(serde_json::from_str::<Sign>("0").is_err());
    }
}
