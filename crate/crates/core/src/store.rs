//! Persistence of worlds, demonstration datasets and training checkpoints.
//!
//! All files are UTF-8 text. Floats are written in Rust's shortest
//! round-trip decimal form, so every value reads back bit-exactly. Writes go
//! to a temporary file in the target directory which is then renamed over the
//! destination.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::learn::{AdaptConfig, TrainState};
use crate::policy::{Adam, PolicyError, PolicyParams};
use crate::sim::{ObjectSpec, Observation, Primitive, Split, World, OBS_DIM};
use crate::trajectory::{Action, Reward, Trajectory};

pub const WORLD_FORMAT_VERSION: u32 = 1;
pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

const DATASET_MAGIC: &str = "primadapt-dataset";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: unsupported format version {found} (expected {expected})")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}: {msg}")]
    Shape { path: PathBuf, msg: String },
    #[error("{path}: {msg}")]
    Corrupt { path: PathBuf, msg: String },
    #[error("cannot write record: {0}")]
    Unwritable(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `contents` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), StoreError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(contents).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| StoreError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String, StoreError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn hex(bytes: &[u8]) -> String {
    bytes
        .iter()
        .fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

#[derive(Serialize, Deserialize)]
struct WorldFile {
    format_version: u32,
    seed: u64,
    obs_noise: f64,
    objects: Vec<ObjectSpec>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

/// Canonical text of a world file.
pub fn world_to_string(world: &World) -> String {
    let file = WorldFile {
        format_version: WORLD_FORMAT_VERSION,
        seed: world.seed,
        obs_noise: world.obs_noise,
        objects: world.objects.clone(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("world serializes");
    s.push('\n');
    s
}

/// SHA-256 of the canonical world text, hex encoded.
pub fn world_hash(world: &World) -> String {
    hex(&Sha256::digest(world_to_string(world).as_bytes()))
}

pub fn write_world(path: &Path, world: &World) -> Result<(), StoreError> {
    write_atomic(path, world_to_string(world).as_bytes())
}

fn check_version(path: &Path, text: &str, expected: u32) -> Result<(), StoreError> {
    let probe: VersionProbe = serde_json::from_str(text).map_err(|e| StoreError::Corrupt {
        path: path.to_path_buf(),
        msg: format!("line {}: {e}", e.line()),
    })?;
    if probe.format_version != expected {
        return Err(StoreError::Version {
            path: path.to_path_buf(),
            found: probe.format_version,
            expected,
        });
    }
    Ok(())
}

pub fn read_world(path: &Path) -> Result<World, StoreError> {
    let text = read_text(path)?;
    check_version(path, &text, WORLD_FORMAT_VERSION)?;
    let file: WorldFile = serde_json::from_str(&text).map_err(|e| StoreError::Malformed {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    World::new(file.seed, file.obs_noise, file.objects).map_err(|e| StoreError::Corrupt {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub n_primitives: usize,
    pub d_obs: usize,
    pub world_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<Trajectory>,
}

fn push_floats(line: &mut String, xs: &[f64]) {
    for x in xs {
        let _ = write!(line, " {x}");
    }
}

fn record_line(t: &Trajectory, n: usize) -> Result<String, StoreError> {
    if t.object_id.is_empty() || t.object_id.chars().any(char::is_whitespace) {
        return Err(StoreError::Unwritable(format!(
            "object id `{}` is empty or contains whitespace",
            t.object_id
        )));
    }
    if t.action.tags.len() != n || t.action.commands.len() != n {
        return Err(StoreError::Unwritable(format!(
            "record for `{}` has {} primitives, header says {n}",
            t.object_id,
            t.action.tags.len()
        )));
    }
    let mut line = format!("{} {}", t.object_id, t.split);
    push_floats(&mut line, &t.initial_obs);
    push_floats(&mut line, &t.action.grasp);
    for tag in &t.action.tags {
        let _ = write!(line, " {tag}");
    }
    push_floats(&mut line, &t.action.commands);
    push_floats(&mut line, &t.final_obs);
    let _ = write!(line, " {}", i8::from(t.reward));
    Ok(line)
}

/// Dataset text: four `key value` header lines, then one record per line.
pub fn dataset_to_string(
    records: &[Trajectory],
    n_primitives: usize,
    world_hash: &str,
) -> Result<String, StoreError> {
    let mut out = format!(
        "{DATASET_MAGIC} {DATASET_FORMAT_VERSION}\nn_primitives {n_primitives}\nd_obs {OBS_DIM}\nworld_hash {world_hash}\n"
    );
    for t in records {
        out.push_str(&record_line(t, n_primitives)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset(
    path: &Path,
    records: &[Trajectory],
    n_primitives: usize,
    world_hash: &str,
) -> Result<(), StoreError> {
    write_atomic(
        path,
        dataset_to_string(records, n_primitives, world_hash)?.as_bytes(),
    )
}

struct LineParser<'a> {
    path: &'a Path,
    line: usize,
    tokens: std::str::SplitAsciiWhitespace<'a>,
}

impl<'a> LineParser<'a> {
    fn fail(&self, msg: impl Into<String>) -> StoreError {
        StoreError::Malformed {
            path: self.path.to_path_buf(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn token(&mut self, what: &str) -> Result<&'a str, StoreError> {
        let line = self.line;
        let path = self.path;
        self.tokens.next().ok_or_else(|| StoreError::Malformed {
            path: path.to_path_buf(),
            line,
            msg: format!("missing {what}"),
        })
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, StoreError> {
        let tok = self.token(what)?;
        tok.parse()
            .map_err(|_| self.fail(format!("bad {what} `{tok}`")))
    }

    fn floats<const K: usize>(&mut self, what: &str) -> Result<[f64; K], StoreError> {
        let mut out = [0.0; K];
        for v in out.iter_mut() {
            *v = self.parse(what)?;
        }
        Ok(out)
    }

    fn finish(mut self) -> Result<(), StoreError> {
        match self.tokens.next() {
            None => Ok(()),
            Some(extra) => Err(self.fail(format!("unexpected trailing field `{extra}`"))),
        }
    }
}

fn header_value<'a>(
    path: &Path,
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    key: &str,
) -> Result<&'a str, StoreError> {
    let (no, line) = lines.next().ok_or_else(|| StoreError::Malformed {
        path: path.to_path_buf(),
        line: 0,
        msg: format!("missing header `{key}`"),
    })?;
    match line.split_once(' ') {
        Some((k, v)) if k == key => Ok(v.trim()),
        _ => Err(StoreError::Malformed {
            path: path.to_path_buf(),
            line: no,
            msg: format!("expected header `{key}`"),
        }),
    }
}

/// Parses dataset text. `path` is used only in error messages.
pub fn parse_dataset(path: &Path, text: &str) -> Result<Dataset, StoreError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let lines_ref = &mut lines;
    let version: u32 = {
        let v = header_value(path, lines_ref, DATASET_MAGIC)?;
        v.parse().map_err(|_| StoreError::Malformed {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("bad format version `{v}`"),
        })?
    };
    if version != DATASET_FORMAT_VERSION {
        return Err(StoreError::Version {
            path: path.to_path_buf(),
            found: version,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    let mut numbered = |key: &str, line: usize| -> Result<usize, StoreError> {
        let v = header_value(path, lines_ref, key)?;
        v.parse().map_err(|_| StoreError::Malformed {
            path: path.to_path_buf(),
            line,
            msg: format!("bad `{key}` value `{v}`"),
        })
    };
    let n_primitives = numbered("n_primitives", 2)?;
    let d_obs = numbered("d_obs", 3)?;
    let world_hash = header_value(path, lines_ref, "world_hash")?.to_string();
    if d_obs != OBS_DIM {
        return Err(StoreError::Shape {
            path: path.to_path_buf(),
            msg: format!("d_obs is {d_obs}, this build uses {OBS_DIM}"),
        });
    }
    if n_primitives == 0 || n_primitives > crate::policy::MAX_PRIMITIVES {
        return Err(StoreError::Shape {
            path: path.to_path_buf(),
            msg: format!("n_primitives {n_primitives} outside 1..=4"),
        });
    }

    let mut records = Vec::new();
    for (no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut p = LineParser {
            path,
            line: no,
            tokens: line.split_ascii_whitespace(),
        };
        let object_id = p.token("object id")?.to_string();
        let split: Split = p.parse("split")?;
        let initial_obs: Observation = p.floats("initial observation")?;
        let grasp: [f64; 3] = p.floats("grasp")?;
        let mut tags = Vec::with_capacity(n_primitives);
        for _ in 0..n_primitives {
            tags.push(p.parse::<Primitive>("primitive tag")?);
        }
        let mut commands = Vec::with_capacity(n_primitives);
        for _ in 0..n_primitives {
            commands.push(p.parse::<f64>("command")?);
        }
        let final_obs: Observation = p.floats("final observation")?;
        let r: i8 = p.parse("reward")?;
        let reward = Reward::try_from(r).map_err(|e| p.fail(e))?;
        p.finish()?;
        records.push(Trajectory {
            object_id,
            split,
            initial_obs,
            action: Action {
                grasp,
                tags,
                commands,
            },
            final_obs,
            reward,
        });
    }
    Ok(Dataset {
        header: DatasetHeader {
            format_version: version,
            n_primitives,
            d_obs,
            world_hash,
        },
        records,
    })
}

/// Reads a dataset and checks that its records have `n_primitives` steps.
pub fn read_dataset(path: &Path, n_primitives: usize) -> Result<Dataset, StoreError> {
    let text = read_text(path)?;
    let ds = parse_dataset(path, &text)?;
    if ds.header.n_primitives != n_primitives {
        return Err(StoreError::Shape {
            path: path.to_path_buf(),
            msg: format!(
                "dataset has {} primitives per record, configuration expects {n_primitives}",
                ds.header.n_primitives
            ),
        });
    }
    Ok(ds)
}

/// SHA-256 over every configuration field, hex encoded.
pub fn config_hash(config: &AdaptConfig) -> String {
    let text = format!(
        "n_primitives={} iterations={} rollouts_per_iteration={} grad_steps_per_iteration={} \
         alpha={:?} bc_lr={:?} rl_lr={:?} bc_epochs={} bc_batch={} eval_episodes={} reward_baseline={}",
        config.n_primitives,
        config.iterations,
        config.rollouts_per_iteration,
        config.grad_steps_per_iteration,
        config.alpha,
        config.bc_lr,
        config.rl_lr,
        config.bc_epochs,
        config.bc_batch,
        config.eval_episodes,
        config.reward_baseline,
    );
    hex(&Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RngState {
    seed: [u8; 32],
    stream: u64,
    word_pos: u128,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    config_hash: String,
    n_primitives: usize,
    step: u64,
    reward_sum: f64,
    reward_count: u64,
    params: Vec<f64>,
    optimizer: Adam,
    rng: RngState,
}

/// A training state tagged with the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn new(config: &AdaptConfig, state: TrainState) -> Self {
        Checkpoint {
            config_hash: config_hash(config),
            state,
        }
    }

    /// Warning text when the checkpoint was produced under another configuration.
    pub fn config_mismatch(&self, config: &AdaptConfig) -> Option<String> {
        let expected = config_hash(config);
        (self.config_hash != expected).then(|| {
            format!(
                "checkpoint config hash {} differs from current configuration {}",
                &self.config_hash[..12.min(self.config_hash.len())],
                &expected[..12]
            )
        })
    }
}

pub fn checkpoint_to_string(ck: &Checkpoint) -> String {
    let s = &ck.state;
    let file = CheckpointFile {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config_hash: ck.config_hash.clone(),
        n_primitives: s.params.n_primitives(),
        step: s.step,
        reward_sum: s.reward_sum,
        reward_count: s.reward_count,
        params: s.params.as_slice().to_vec(),
        optimizer: s.opt.clone(),
        rng: RngState::capture(&s.rng),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("checkpoint serializes");
    text.push('\n');
    text
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), StoreError> {
    write_atomic(path, checkpoint_to_string(ck).as_bytes())
}

pub fn parse_checkpoint(path: &Path, text: &str) -> Result<Checkpoint, StoreError> {
    check_version(path, text, CHECKPOINT_FORMAT_VERSION)?;
    let file: CheckpointFile = serde_json::from_str(text).map_err(|e| StoreError::Malformed {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let corrupt = |msg: String| StoreError::Corrupt {
        path: path.to_path_buf(),
        msg,
    };
    let params = PolicyParams::from_flat(file.n_primitives, file.params)
        .map_err(|e: PolicyError| corrupt(e.to_string()))?;
    if file.optimizer.len() != params.len() {
        return Err(corrupt(format!(
            "optimizer state has {} entries, parameters have {}",
            file.optimizer.len(),
            params.len()
        )));
    }
    if !params.is_finite() {
        return Err(corrupt("non-finite parameters".into()));
    }
    Ok(Checkpoint {
        config_hash: file.config_hash,
        state: TrainState {
            params,
            opt: file.optimizer,
            rng: file.rng.restore(),
            step: file.step,
            reward_sum: file.reward_sum,
            reward_count: file.reward_count,
        },
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, StoreError> {
    parse_checkpoint(path, &read_text(path)?)
}

/// Loads a checkpoint and logs a warning if it came from another configuration.
/// The warning is also returned so callers can surface it.
pub fn load_checkpoint_for(
    path: &Path,
    config: &AdaptConfig,
) -> Result<(Checkpoint, Option<String>), StoreError> {
    let ck = load_checkpoint(path)?;
    let warning = ck
        .config_mismatch(config)
        .map(|w| format!("{}: {w}", path.display()));
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok((ck, warning))
}
