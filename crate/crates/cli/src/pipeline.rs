//! Experiment stages shared by the CLI verbs and `reproduce`.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use primadapt::learn::{
    evaluate, generate_demos, knn_evaluate, success_rate, train_bc, AdaptCurve, Adapter, BcTrainer,
    EvalStats, KnnMode, KnnReplay,
};
use primadapt::policy::PolicyParams;
use primadapt::reward::{
    calibrate_surrogate, OracleReward, RewardBackend, RewardModel, SurrogateAnchors,
    SurrogateReward,
};
use primadapt::sim::{ExpertNoise, ObjectSpec, Split, World};
use primadapt::store;
use primadapt::Trajectory;

use crate::config::RunConfig;

/// Independent random streams derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Demos = 1,
    Bc = 2,
    Adapt = 3,
    Eval = 4,
    Knn = 5,
    Anchors = 6,
    LabelNoise = 7,
    Trials = 8,
}

pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) | index);
    rng
}

/// Marker for outputs that stand in for physical-robot measurements.
pub const ANALOG_NOTE: &str = "simulator analog; not a physical-robot measurement";

/// A small CSV table with a leading comment line.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub comment: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(comment: impl Into<String>, header: &[&'static str]) -> Self {
        Table {
            comment: comment.into(),
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        if !self.comment.is_empty() {
            let _ = writeln!(s, "# {}", self.comment);
        }
        let _ = writeln!(s, "{}", self.header.join(","));
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        store::write_atomic(path, self.render().as_bytes())?;
        Ok(())
    }
}

pub fn f(x: f64) -> String {
    format!("{x:.6}")
}

pub fn gen_world(cfg: &RunConfig) -> Result<World> {
    Ok(World::generate(cfg.seed, cfg.counts)?.with_obs_noise(cfg.obs_noise))
}

/// Noisy expert demonstrations on every training object.
pub fn gen_demos(cfg: &RunConfig, world: &World) -> Result<Vec<Trajectory>> {
    let mut rng = stream_rng(cfg.seed, Stream::Demos, 0);
    Ok(generate_demos(
        world,
        world.split(Split::Train),
        cfg.demos_per_object,
        ExpertNoise::default(),
        &mut rng,
    )?)
}

pub fn train(cfg: &RunConfig, demos: &[Trajectory]) -> Result<BcTrainer> {
    Ok(train_bc(
        demos,
        cfg.adapt,
        stream_rng(cfg.seed, Stream::Bc, 0),
    )?)
}

pub fn loss_table(trainer: &BcTrainer) -> Table {
    let mut t = Table::new("behavior cloning loss per epoch", &["epoch", "loss"]);
    for (i, l) in trainer.epoch_losses.iter().enumerate() {
        t.push(vec![(i + 1).to_string(), f(*l)]);
    }
    t
}

/// Evaluates `params` on `spec` with the stream reserved for object `index`.
pub fn eval_object(
    cfg: &RunConfig,
    world: &World,
    params: &PolicyParams,
    spec: &ObjectSpec,
    index: usize,
    episodes: usize,
) -> Result<EvalStats> {
    let mut rng = stream_rng(cfg.seed, Stream::Eval, index as u64);
    Ok(evaluate(world, params, spec, episodes, &mut rng)?)
}

pub fn anchors(cfg: &RunConfig, world: &World) -> Result<SurrogateAnchors> {
    let mut rng = stream_rng(cfg.seed, Stream::Anchors, 0);
    Ok(calibrate_surrogate(
        world,
        cfg.anchor_samples,
        cfg.epsilon,
        &mut rng,
    )?)
}

/// Builds the reward model for a non-interactive run.
pub fn reward_model(
    cfg: &RunConfig,
    backend: RewardBackend,
    anchors: Option<&SurrogateAnchors>,
    index: usize,
) -> Result<Box<dyn RewardModel>> {
    match backend {
        RewardBackend::Oracle => Ok(Box::new(OracleReward)),
        RewardBackend::Surrogate => {
            let a = anchors.context("surrogate reward needs calibrated anchors")?;
            let seed = cfg.seed ^ ((Stream::LabelNoise as u64) << 40) ^ index as u64;
            Ok(Box::new(SurrogateReward::new(a.clone(), seed)))
        }
        RewardBackend::Human => bail!("the human reward backend is interactive-only"),
    }
}

/// Adapts a copy of `params` on `spec`. Runs with the same `index` share all
/// rollout and evaluation streams, whatever the reward backend.
pub fn adapt_object(
    cfg: &RunConfig,
    world: &World,
    demos: &[Trajectory],
    params: &PolicyParams,
    spec: &ObjectSpec,
    index: usize,
    reward: &mut dyn RewardModel,
) -> Result<(PolicyParams, AdaptCurve)> {
    let rng = stream_rng(cfg.seed, Stream::Adapt, index as u64);
    let mut adapter = Adapter::new(world, spec, demos, cfg.adapt, params.clone(), rng)?;
    adapter.run(reward)?;
    let (state, curve) = adapter.into_parts();
    Ok((state.params, curve))
}

pub fn curve_table(rows: &[(String, &ObjectSpec, &AdaptCurve)]) -> Table {
    let mut t = Table::new(
        format!("{ANALOG_NOTE}: online improvement curve"),
        &[
            "backend",
            "object",
            "category",
            "iteration",
            "success_rate",
            "mean_reward",
            "safety_events",
            "loss_online",
            "loss_offline",
        ],
    );
    for (backend, spec, curve) in rows {
        for r in &curve.rows {
            t.push(vec![
                backend.clone(),
                spec.id.clone(),
                spec.category.to_string(),
                r.iteration.to_string(),
                f(r.success_rate),
                f(r.mean_reward),
                r.safety_count.to_string(),
                f(r.loss_online),
                f(r.loss_offline),
            ]);
        }
    }
    t
}

pub fn knn_object(
    cfg: &RunConfig,
    world: &World,
    demos: &[Trajectory],
    spec: &ObjectSpec,
    index: usize,
    mode: KnnMode,
) -> Result<EvalStats> {
    let replay = KnnReplay::new(demos)?;
    let sub = match mode {
        KnnMode::OpenLoop => 0,
        KnnMode::ClosedLoop => 1,
    };
    let mut rng = stream_rng(cfg.seed, Stream::Knn, ((index as u64) << 1) | sub);
    Ok(knn_evaluate(
        world,
        &replay,
        spec,
        mode,
        cfg.knn_trials,
        &mut rng,
    )?)
}

pub fn object_index(world: &World, id: &str) -> Option<usize> {
    world.objects.iter().position(|o| o.id == id)
}

/// Per-object outcome of the full pipeline.
#[derive(Debug, Clone)]
pub struct ObjectResult {
    pub spec: ObjectSpec,
    pub oracle: AdaptCurve,
    pub surrogate: AdaptCurve,
    pub adapted_trials: EvalStats,
    pub knn_open: EvalStats,
    pub knn_closed: EvalStats,
}

impl ObjectResult {
    pub fn bc_success(&self) -> f64 {
        self.oracle.initial().map_or(0.0, |r| r.success_rate)
    }

    pub fn oracle_final(&self) -> f64 {
        self.oracle.last().map_or(0.0, |r| r.success_rate)
    }

    pub fn surrogate_final(&self) -> f64 {
        self.surrogate.last().map_or(0.0, |r| r.success_rate)
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub expert_success: f64,
    pub bc_first_loss: f64,
    pub bc_final_loss: f64,
    pub held_in_success: f64,
    pub objects: Vec<ObjectResult>,
    /// Indices into `objects` of the two lowest imitation-success objects.
    pub hardest: Vec<usize>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl Report {
    pub fn bc_mean(&self) -> f64 {
        mean(self.objects.iter().map(ObjectResult::bc_success))
    }

    pub fn adapted_mean(&self) -> f64 {
        mean(self.objects.iter().map(ObjectResult::oracle_final))
    }

    pub fn surrogate_mean(&self) -> f64 {
        mean(self.objects.iter().map(ObjectResult::surrogate_final))
    }
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.with_context(|| format!("stage `{name}` failed"))
}

/// World, demonstrations, imitation, then adaptation (oracle and surrogate
/// reward) and replay baselines on every held-out object. Writes one CSV per
/// experiment into `out`.
pub fn reproduce(cfg: &RunConfig, out: &Path) -> Result<Report> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let world = stage("gen-world", gen_world(cfg))?;
    stage(
        "gen-world",
        store::write_world(&out.join("world.json"), &world).map_err(Into::into),
    )?;

    let demos = stage("gen-demos", gen_demos(cfg, &world))?;
    stage(
        "gen-demos",
        store::write_dataset(
            &out.join("demos.txt"),
            &demos,
            cfg.adapt.n_primitives,
            &store::world_hash(&world),
        )
        .map_err(Into::into),
    )?;
    let expert_success = success_rate(&demos);

    let trainer = stage("train-bc", train(cfg, &demos))?;
    stage(
        "train-bc",
        loss_table(&trainer).write(&out.join("bc_loss.csv")),
    )?;
    stage(
        "train-bc",
        store::save_checkpoint(
            &out.join("bc.ckpt.json"),
            &store::Checkpoint::new(&cfg.adapt, trainer.state.clone()),
        )
        .map_err(Into::into),
    )?;
    let params = trainer.state.params.clone();

    let train_ids: Vec<usize> = (0..world.objects.len())
        .filter(|&i| world.objects[i].split == Split::Train)
        .collect();
    let held_in: Vec<f64> = stage(
        "eval",
        train_ids
            .par_iter()
            .map(|&i| {
                eval_object(
                    cfg,
                    &world,
                    &params,
                    &world.objects[i],
                    i,
                    cfg.adapt.eval_episodes,
                )
                .map(|s| s.success_rate())
            })
            .collect(),
    )?;

    let anchors = stage("calibrate-surrogate", anchors(cfg, &world))?;
    let test_ids: Vec<usize> = (0..world.objects.len())
        .filter(|&i| world.objects[i].split == Split::Test)
        .collect();
    let objects: Vec<ObjectResult> = stage(
        "adapt",
        test_ids
            .par_iter()
            .map(|&i| -> Result<ObjectResult> {
                let spec = &world.objects[i];
                let mut oracle = reward_model(cfg, RewardBackend::Oracle, None, i)?;
                let (adapted, oracle_curve) =
                    adapt_object(cfg, &world, &demos, &params, spec, i, oracle.as_mut())?;
                let mut sur = reward_model(cfg, RewardBackend::Surrogate, Some(&anchors), i)?;
                let (_, sur_curve) =
                    adapt_object(cfg, &world, &demos, &params, spec, i, sur.as_mut())?;
                let mut trial_rng = stream_rng(cfg.seed, Stream::Trials, i as u64);
                let adapted_trials =
                    evaluate(&world, &adapted, spec, cfg.knn_trials, &mut trial_rng)?;
                Ok(ObjectResult {
                    spec: spec.clone(),
                    oracle: oracle_curve,
                    surrogate: sur_curve,
                    adapted_trials,
                    knn_open: knn_object(cfg, &world, &demos, spec, i, KnnMode::OpenLoop)?,
                    knn_closed: knn_object(cfg, &world, &demos, spec, i, KnnMode::ClosedLoop)?,
                })
            })
            .collect(),
    )?;

    let mut order: Vec<usize> = (0..objects.len()).collect();
    order.sort_by(|&a, &b| objects[a].bc_success().total_cmp(&objects[b].bc_success()));
    let hardest: Vec<usize> = order.into_iter().take(2).collect();

    let report = Report {
        expert_success,
        bc_first_loss: trainer.epoch_losses.first().copied().unwrap_or(f64::NAN),
        bc_final_loss: trainer.epoch_losses.last().copied().unwrap_or(f64::NAN),
        held_in_success: mean(held_in.into_iter()),
        objects,
        hardest,
    };
    stage("write-results", write_report(&report, out))?;
    Ok(report)
}

fn write_report(r: &Report, out: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for o in &r.objects {
        rows.push(("oracle".to_string(), &o.spec, &o.oracle));
    }
    for o in &r.objects {
        rows.push(("surrogate".to_string(), &o.spec, &o.surrogate));
    }
    curve_table(&rows).write(&out.join("online_improvement.csv"))?;

    let mut knn = Table::new(
        format!("{ANALOG_NOTE}: action-replay comparison on the two hardest held-out objects"),
        &["object", "category", "method", "trials", "successes"],
    );
    for &h in &r.hardest {
        let o = &r.objects[h];
        for (method, s) in [
            ("knn_open_loop", &o.knn_open),
            ("knn_closed_loop", &o.knn_closed),
            ("adapted", &o.adapted_trials),
        ] {
            knn.push(vec![
                o.spec.id.clone(),
                o.spec.category.to_string(),
                method.into(),
                s.episodes.to_string(),
                s.successes.to_string(),
            ]);
        }
    }
    knn.write(&out.join("action_replay.csv"))?;

    let mut cmp = Table::new(
        format!("{ANALOG_NOTE}: learned-reward comparison"),
        &[
            "object",
            "category",
            "bc_success",
            "oracle_final",
            "surrogate_final",
            "difference",
        ],
    );
    for o in &r.objects {
        cmp.push(vec![
            o.spec.id.clone(),
            o.spec.category.to_string(),
            f(o.bc_success()),
            f(o.oracle_final()),
            f(o.surrogate_final()),
            f(o.surrogate_final() - o.oracle_final()),
        ]);
    }
    cmp.write(&out.join("reward_comparison.csv"))?;

    let mut summary = Table::new(
        format!("{ANALOG_NOTE}: aggregate results"),
        &["metric", "value"],
    );
    for (k, v) in [
        ("expert_success", r.expert_success),
        ("bc_first_epoch_loss", r.bc_first_loss),
        ("bc_final_epoch_loss", r.bc_final_loss),
        ("bc_held_in_success", r.held_in_success),
        ("bc_held_out_success", r.bc_mean()),
        ("adapted_success", r.adapted_mean()),
        ("improvement", r.adapted_mean() - r.bc_mean()),
        ("surrogate_adapted_success", r.surrogate_mean()),
    ] {
        summary.push(vec![k.into(), f(v)]);
    }
    summary.write(&out.join("summary.csv"))
}
