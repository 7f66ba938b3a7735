//! Flat `section.key = value` run configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use primadapt::learn::AdaptConfig;
use primadapt::reward::RewardBackend;
use primadapt::sim::{WorldCounts, DEFAULT_OBS_NOISE};

#[derive(Debug)]
pub struct ConfigError {
    pub file: Option<PathBuf>,
    pub line: Option<usize>,
    pub msg: String,
}

impl ConfigError {
    pub fn new(msg: impl Into<String>) -> Self {
        ConfigError {
            file: None,
            line: None,
            msg: msg.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.file, self.line) {
            (Some(p), Some(l)) => write!(f, "{}:{l}: {}", p.display(), self.msg),
            (Some(p), None) => write!(f, "{}: {}", p.display(), self.msg),
            _ => f.write_str(&self.msg),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub counts: WorldCounts,
    pub obs_noise: f64,
    pub demos_per_object: usize,
    pub adapt: AdaptConfig,
    pub backend: RewardBackend,
    pub epsilon: f64,
    pub anchor_samples: usize,
    pub knn_trials: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            counts: WorldCounts::default(),
            obs_noise: DEFAULT_OBS_NOISE,
            demos_per_object: 10,
            adapt: AdaptConfig::default(),
            backend: RewardBackend::Oracle,
            epsilon: 0.1,
            anchor_samples: 200,
            knn_trials: 10,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let a = &mut self.adapt;
        match key {
            "world.seed" => self.seed = parse(key, value)?,
            "world.train_per_category" => self.counts.train_per_category = parse(key, value)?,
            "world.test_per_category" => self.counts.test_per_category = parse(key, value)?,
            "world.obs_noise" => self.obs_noise = parse(key, value)?,
            "world.demos_per_object" => self.demos_per_object = parse(key, value)?,
            "policy.n_primitives" => a.n_primitives = parse(key, value)?,
            "policy.bc_lr" => a.bc_lr = parse(key, value)?,
            "policy.bc_epochs" => a.bc_epochs = parse(key, value)?,
            "policy.bc_batch" => a.bc_batch = parse(key, value)?,
            "adapt.iterations" => a.iterations = parse(key, value)?,
            "adapt.rollouts_per_iteration" => a.rollouts_per_iteration = parse(key, value)?,
            "adapt.grad_steps_per_iteration" => a.grad_steps_per_iteration = parse(key, value)?,
            "adapt.alpha" => a.alpha = parse(key, value)?,
            "adapt.rl_lr" => a.rl_lr = parse(key, value)?,
            "adapt.eval_episodes" => a.eval_episodes = parse(key, value)?,
            "adapt.reward_baseline" => a.reward_baseline = parse(key, value)?,
            "adapt.knn_trials" => self.knn_trials = parse(key, value)?,
            "reward.backend" => {
                self.backend = value
                    .parse()
                    .map_err(|_| format!("unknown reward backend `{value}`"))?
            }
            "reward.surrogate.epsilon" => self.epsilon = parse(key, value)?,
            "reward.surrogate.anchor_samples" => self.anchor_samples = parse(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Parses configuration text on top of the defaults. `#` starts a comment.
    pub fn parse_text(text: &str, file: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ConfigError {
                file: file.map(Path::to_path_buf),
                line: Some(i + 1),
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            cfg.set(key.trim(), value.trim()).map_err(err)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            file: Some(path.to_path_buf()),
            line: None,
            msg: e.to_string(),
        })?;
        Self::parse_text(&text, Some(path))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.counts.train_per_category == 0 || self.counts.test_per_category == 0 {
            return Err(ConfigError::new(
                "world.train_per_category and world.test_per_category must be positive",
            ));
        }
        if !(self.obs_noise.is_finite() && self.obs_noise >= 0.0) {
            return Err(ConfigError::new("world.obs_noise must be non-negative"));
        }
        if self.demos_per_object == 0 {
            return Err(ConfigError::new("world.demos_per_object must be positive"));
        }
        if !(0.0..0.5).contains(&self.epsilon) {
            return Err(ConfigError::new(
                "reward.surrogate.epsilon must lie in [0, 0.5)",
            ));
        }
        if self.anchor_samples < 10 {
            return Err(ConfigError::new(
                "reward.surrogate.anchor_samples must be at least 10",
            ));
        }
        if self.knn_trials == 0 {
            return Err(ConfigError::new("adapt.knn_trials must be positive"));
        }
        self.adapt
            .validate()
            .map_err(|e| ConfigError::new(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_experiment_protocol() {
        let c = RunConfig::default();
        assert_eq!(c.counts.train_per_category, 3);
        assert_eq!(c.counts.test_per_category, 2);
        assert_eq!(c.demos_per_object, 10);
        assert_eq!(c.adapt.iterations, 5);
        assert_eq!(c.adapt.rollouts_per_iteration, 5);
        c.validate().unwrap();
    }

    #[test]
    fn parses_sections_and_comments() {
        let text = "# run\nworld.seed = 9\nadapt.alpha=0.5 # weight\n\nreward.backend = surrogate\nreward.surrogate.epsilon = 0\n";
        let c = RunConfig::parse_text(text, None).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.epsilon, 0.0);
        assert_eq!(c.adapt.alpha, 0.5);
        assert_eq!(c.backend, RewardBackend::Surrogate);
    }

    #[test]
    fn errors_name_file_and_line() {
        let e = RunConfig::parse_text(
            "world.seed = 1\nadapt.bogus = 2\n",
            Some(Path::new("run.cfg")),
        )
        .unwrap_err();
        assert_eq!(e.to_string(), "run.cfg:2: unknown key `adapt.bogus`");
        let e = RunConfig::parse_text("adapt.iterations = many\n", Some(Path::new("r.cfg")))
            .unwrap_err();
        assert_eq!(e.line, Some(1));
        let e = RunConfig::parse_text("no equals sign\n", None).unwrap_err();
        assert_eq!(e.line, Some(1));
    }

    #[test]
    fn zero_category_count_is_invalid() {
        let c = RunConfig::parse_text("world.test_per_category = 0\n", None).unwrap();
        assert!(c.validate().is_err());
    }
}
