//! Reward backends. All of them map an episode to `{-1, 0, +1}` and give `-1`
//! whenever the safety stop fired.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::sim::{EpisodeState, Observation, Split, World, OBS_DIM};
use crate::trajectory::{Action, Reward};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("surrogate anchors coincide")]
    DegenerateAnchors,
    #[error("calibration needs at least 10 samples, got {0}")]
    TooFewSamples(usize),
    #[error("world has no training objects to calibrate on")]
    NoTrainObjects,
    #[error("label noise must lie in [0, 0.5), got {0}")]
    BadEpsilon(f64),
    #[error("final observation has zero norm")]
    ZeroObservation,
    #[error("reward input stream closed before a label was entered")]
    InputClosed,
    #[error("terminal i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown reward backend `{0}` (expected oracle, surrogate or human)")]
    UnknownBackend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardSource {
    Oracle,
    Surrogate,
    Human,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RewardLabel {
    pub value: Reward,
    pub source: RewardSource,
}

/// Everything a backend may look at once an episode is over.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeView<'a> {
    pub final_state: &'a EpisodeState,
    pub final_obs: &'a Observation,
    pub action: &'a Action,
}

impl EpisodeView<'_> {
    pub fn safety_violated(&self) -> bool {
        self.final_state.safety_violated
    }

    pub fn summary(&self) -> String {
        let plan: Vec<String> = self
            .action
            .tags
            .iter()
            .zip(&self.action.commands)
            .map(|(t, c)| format!("{t}({c:+.3})"))
            .collect();
        format!(
            "object {} | plan {} | final joint_pos {:.3}{}",
            self.final_state.spec.id,
            plan.join(" -> "),
            self.final_state.joint_pos,
            if self.safety_violated() {
                " | SAFETY STOP"
            } else {
                ""
            }
        )
    }
}

pub trait RewardModel {
    fn label(&mut self, episode: &EpisodeView<'_>) -> Result<RewardLabel, RewardError>;
}

pub fn oracle_reward(final_state: &EpisodeState, safety_violated: bool) -> RewardLabel {
    let value = if safety_violated {
        Reward::Violation
    } else if final_state.oracle_success() {
        Reward::Success
    } else {
        Reward::Fail
    };
    RewardLabel {
        value,
        source: RewardSource::Oracle,
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleReward;

impl RewardModel for OracleReward {
    fn label(&mut self, episode: &EpisodeView<'_>) -> Result<RewardLabel, RewardError> {
        Ok(oracle_reward(
            episode.final_state,
            episode.safety_violated(),
        ))
    }
}

/// Mean embeddings of open and closed doors plus a label-flip probability.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateAnchors {
    pub open: Observation,
    pub closed: Observation,
    pub epsilon: f64,
}

/// Averages `n_samples` noisy observations of fully open and fully closed
/// states, cycling over the training objects.
pub fn calibrate_surrogate<R: Rng + ?Sized>(
    world: &World,
    n_samples: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<SurrogateAnchors, RewardError> {
    if n_samples < 10 {
        return Err(RewardError::TooFewSamples(n_samples));
    }
    if !(0.0..0.5).contains(&epsilon) {
        return Err(RewardError::BadEpsilon(epsilon));
    }
    let train: Vec<_> = world.split(Split::Train).collect();
    if train.is_empty() {
        return Err(RewardError::NoTrainObjects);
    }
    let mut open = [0.0; OBS_DIM];
    let mut closed = [0.0; OBS_DIM];
    for k in 0..n_samples {
        let mut s = EpisodeState::spawn(train[k % train.len()].clone());
        let c = world.observe(&s, rng);
        s.latched = false;
        s.joint_pos = s.joint_type().limit();
        let o = world.observe(&s, rng);
        for i in 0..OBS_DIM {
            open[i] += o[i];
            closed[i] += c[i];
        }
    }
    let n = n_samples as f64;
    open.iter_mut().for_each(|v| *v /= n);
    closed.iter_mut().for_each(|v| *v /= n);
    let gap: f64 = open.iter().zip(&closed).map(|(a, b)| (a - b).powi(2)).sum();
    if gap == 0.0 {
        return Err(RewardError::DegenerateAnchors);
    }
    Ok(SurrogateAnchors {
        open,
        closed,
        epsilon,
    })
}

fn cosine(a: &Observation, b: &Observation) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(dot / (na * nb))
    }
}

/// Scores the final image against the two anchors; the 0/+1 label is flipped
/// with probability `epsilon`.
pub fn surrogate_reward<R: Rng + ?Sized>(
    final_obs: &Observation,
    anchors: &SurrogateAnchors,
    safety_violated: bool,
    rng: &mut R,
) -> Result<RewardLabel, RewardError> {
    let label = |value| RewardLabel {
        value,
        source: RewardSource::Surrogate,
    };
    if safety_violated {
        return Ok(label(Reward::Violation));
    }
    let s_open = cosine(final_obs, &anchors.open).ok_or(RewardError::ZeroObservation)?;
    let s_closed = cosine(final_obs, &anchors.closed).ok_or(RewardError::ZeroObservation)?;
    let mut opened = s_open > s_closed;
    if anchors.epsilon > 0.0 && rng.random::<f64>() < anchors.epsilon {
        opened = !opened;
    }
    Ok(label(if opened {
        Reward::Success
    } else {
        Reward::Fail
    }))
}

/// Surrogate backend with its own random stream for label noise.
#[derive(Debug, Clone)]
pub struct SurrogateReward {
    pub anchors: SurrogateAnchors,
    rng: ChaCha8Rng,
}

impl SurrogateReward {
    pub fn new(anchors: SurrogateAnchors, seed: u64) -> Self {
        SurrogateReward {
            anchors,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl RewardModel for SurrogateReward {
    fn label(&mut self, episode: &EpisodeView<'_>) -> Result<RewardLabel, RewardError> {
        surrogate_reward(
            episode.final_obs,
            &self.anchors,
            episode.safety_violated(),
            &mut self.rng,
        )
    }
}

/// Asks an operator for each label.
pub struct HumanReward<In, Out> {
    input: In,
    output: Out,
}

impl<In: BufRead, Out: Write> HumanReward<In, Out> {
    pub fn new(input: In, output: Out) -> Self {
        HumanReward { input, output }
    }
}

/// Prints the summary and reads until a valid label arrives. A safety stop is
/// reported but the operator still enters the label.
pub fn prompt_human_reward<In: BufRead, Out: Write>(
    summary: &str,
    input: &mut In,
    output: &mut Out,
) -> Result<RewardLabel, RewardError> {
    writeln!(output, "{summary}")?;
    loop {
        write!(output, "reward [-1/0/1]: ")?;
        output.flush()?;
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            return Err(RewardError::InputClosed);
        }
        let value = match line.trim() {
            "1" | "+1" => Reward::Success,
            "0" => Reward::Fail,
            "-1" => Reward::Violation,
            other => {
                writeln!(output, "invalid label `{other}`")?;
                continue;
            }
        };
        return Ok(RewardLabel {
            value,
            source: RewardSource::Human,
        });
    }
}

impl<In: BufRead, Out: Write> RewardModel for HumanReward<In, Out> {
    fn label(&mut self, episode: &EpisodeView<'_>) -> Result<RewardLabel, RewardError> {
        let label = prompt_human_reward(&episode.summary(), &mut self.input, &mut self.output)?;
        if episode.safety_violated() && label.value != Reward::Violation {
            writeln!(self.output, "safety stop recorded; label forced to -1")?;
            return Ok(RewardLabel {
                value: Reward::Violation,
                source: RewardSource::Human,
            });
        }
        Ok(label)
    }
}

/// Config-level backend selector (`reward.backend`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardBackend {
    Oracle,
    Surrogate,
    Human,
}

impl FromStr for RewardBackend {
    type Err = RewardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(RewardBackend::Oracle),
            "surrogate" => Ok(RewardBackend::Surrogate),
            "human" => Ok(RewardBackend::Human),
            other => Err(RewardError::UnknownBackend(other.to_string())),
        }
    }
}

impl fmt::Display for RewardBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardBackend::Oracle => "oracle",
            RewardBackend::Surrogate => "surrogate",
            RewardBackend::Human => "human",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Category, ObjectSpec, Primitive, Sign, WorldCounts};
    use std::io::Cursor;

    fn spec(category: Category) -> ObjectSpec {
        ObjectSpec {
            id: "r".into(),
            category,
            split: Split::Train,
            unlock_dir: Sign::Pos,
            unlock_threshold: 0.3,
            open_dir: Sign::Pos,
            friction: 0.1,
            spring_loaded: false,
            handle_offset: [0.0; 3],
        }
    }

    fn action() -> Action {
        Action {
            grasp: [0.0; 3],
            tags: vec![Primitive::Open, Primitive::Open],
            commands: vec![0.5, 0.5],
        }
    }

    #[test]
    fn oracle_labels() {
        let mut s = EpisodeState::spawn(spec(Category::C));
        s.joint_pos = 1.0;
        assert_eq!(oracle_reward(&s, true).value, Reward::Violation);
        assert_eq!(oracle_reward(&s, false).value, Reward::Success);
        s.joint_pos = 0.0;
        assert_eq!(oracle_reward(&s, false).value, Reward::Fail);
    }

    #[test]
    fn surrogate_anchor_extremes() {
        let world = crate::sim::World::generate(4, WorldCounts::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let anchors = calibrate_surrogate(&world, 100, 0.0, &mut rng).unwrap();
        let r = surrogate_reward(&anchors.open, &anchors, false, &mut rng).unwrap();
        assert_eq!(r.value, Reward::Success);
        let r = surrogate_reward(&anchors.closed, &anchors, false, &mut rng).unwrap();
        assert_eq!(r.value, Reward::Fail);
        let r = surrogate_reward(&anchors.open, &anchors, true, &mut rng).unwrap();
        assert_eq!(r.value, Reward::Violation);
        assert!(matches!(
            surrogate_reward(&[0.0; OBS_DIM], &anchors, false, &mut rng),
            Err(RewardError::ZeroObservation)
        ));
    }

    #[test]
    fn noiseless_single_object_anchors_differ_by_openness_column() {
        let mut only = spec(Category::C);
        only.id = "only".into();
        let world = World::new(8, 0.0, vec![only]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let anchors = calibrate_surrogate(&world, 10, 0.25, &mut rng).unwrap();
        assert_eq!(anchors.epsilon, 0.25);
        let col = world.embedding().column(crate::sim::OPENNESS_INDEX);
        for (i, c) in col.iter().enumerate() {
            assert!((anchors.open[i] - anchors.closed[i] - 2.0 * c).abs() < 1e-12);
        }
    }

    #[test]
    fn calibration_argument_checks() {
        let world = World::generate(4, WorldCounts::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            calibrate_surrogate(&world, 5, 0.1, &mut rng),
            Err(RewardError::TooFewSamples(5))
        ));
        assert!(matches!(
            calibrate_surrogate(&world, 50, 0.5, &mut rng),
            Err(RewardError::BadEpsilon(_))
        ));
    }

    #[test]
    fn label_flip_rate_matches_epsilon() {
        let world = World::generate(4, WorldCounts::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let anchors = calibrate_surrogate(&world, 100, 0.1, &mut rng).unwrap();
        let n = 10_000;
        let flips = (0..n)
            .filter(|_| {
                surrogate_reward(&anchors.closed, &anchors, false, &mut rng)
                    .unwrap()
                    .value
                    == Reward::Success
            })
            .count();
        let rate = flips as f64 / n as f64;
        assert!((rate - 0.1).abs() <= 0.01, "flip rate {rate}");
    }

    #[test]
    fn human_prompt_parses_and_reprompts() {
        let mut out = Vec::new();
        let l = prompt_human_reward("ep", &mut Cursor::new("1\n"), &mut out).unwrap();
        assert_eq!(l.value, Reward::Success);

        let mut out = Vec::new();
        let l = prompt_human_reward("ep", &mut Cursor::new("x\n0\n"), &mut out).unwrap();
        assert_eq!(l.value, Reward::Fail);
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.matches("reward [-1/0/1]").count(), 2);
        assert!(text.contains("invalid label `x`"));

        let mut out = Vec::new();
        assert!(matches!(
            prompt_human_reward("ep", &mut Cursor::new(""), &mut out),
            Err(RewardError::InputClosed)
        ));
    }

    #[test]
    fn human_backend_enforces_safety_precedence() {
        let mut s = EpisodeState::spawn(spec(Category::A));
        s.safety_violated = true;
        let obs = [1.0; OBS_DIM];
        let a = action();
        let view = EpisodeView {
            final_state: &s,
            final_obs: &obs,
            action: &a,
        };
        let mut human = HumanReward::new(Cursor::new("1\n"), Vec::new());
        assert_eq!(human.label(&view).unwrap().value, Reward::Violation);
        assert!(view.summary().contains("SAFETY STOP"));
    }

    #[test]
    fn backend_names() {
        for b in ["oracle", "surrogate", "human"] {
            assert_eq!(b.parse::<RewardBackend>().unwrap().to_string(), b);
        }
        assert!("clip".parse::<RewardBackend>().is_err());
    }
}
