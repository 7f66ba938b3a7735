use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use primadapt::learn::{Adapter, KnnMode};
use primadapt::reward::{HumanReward, RewardBackend};
use primadapt::sim::{ObjectSpec, Split, World};
use primadapt::store::{self, Checkpoint};
use primadapt::Trajectory;
use primadapt_cli::pipeline::{self, f, Stream, Table, ANALOG_NOTE};
use primadapt_cli::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(
    name = "primadapt",
    version,
    about = "Primitive-policy adaptation experiments"
)]
struct Cli {
    /// Run seed; overrides `world.seed` from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat `section.key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample train and held-out objects into world.json.
    GenWorld,
    /// Record expert demonstrations on every training object.
    GenDemos {
        #[arg(long)]
        world: PathBuf,
        /// Demonstrations per training object.
        #[arg(long)]
        n_per_object: Option<usize>,
    },
    /// Behavior cloning on a demonstration dataset.
    TrainBc {
        #[arg(long)]
        dataset: PathBuf,
        /// World used to evaluate the trained policy.
        #[arg(long)]
        world: Option<PathBuf>,
        /// Print held-out success (needs --world).
        #[arg(long)]
        eval_heldout: bool,
    },
    /// Online adaptation on one object.
    Adapt {
        #[command(flatten)]
        inputs: PolicyInputs,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        object: String,
    },
    /// Evaluate a checkpoint on one object or a whole split.
    Eval {
        #[command(flatten)]
        inputs: PolicyInputs,
        #[arg(long)]
        object: Option<String>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Nearest-neighbor action replay baseline.
    BaselineKnn {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        object: String,
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeArg,
    },
    /// Full pipeline; writes one CSV per experiment.
    Reproduce,
}

#[derive(Args)]
struct PolicyInputs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    world: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    OpenLoop,
    ClosedLoop,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<KnnMode> {
        match self {
            ModeArg::OpenLoop => vec![KnnMode::OpenLoop],
            ModeArg::ClosedLoop => vec![KnnMode::ClosedLoop],
            ModeArg::Both => vec![KnnMode::OpenLoop, KnnMode::ClosedLoop],
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn lookup<'a>(world: &'a World, id: &str) -> Result<(usize, &'a ObjectSpec)> {
    match pipeline::object_index(world, id) {
        Some(i) => Ok((i, &world.objects[i])),
        None => Err(ConfigError::new(format!("unknown object id `{id}`")).into()),
    }
}

fn load_demos(path: &Path, cfg: &RunConfig, world: Option<&World>) -> Result<Vec<Trajectory>> {
    let ds = store::read_dataset(path, cfg.adapt.n_primitives)?;
    if let Some(w) = world {
        if ds.header.world_hash != store::world_hash(w) {
            eprintln!(
                "warning: {}: dataset was recorded in a different world",
                path.display()
            );
        }
    }
    if ds.records.is_empty() {
        bail!("{}: dataset has no records", path.display());
    }
    Ok(ds.records)
}

fn load_params(path: &Path, cfg: &RunConfig) -> Result<Checkpoint> {
    let (ck, warning) = store::load_checkpoint_for(path, &cfg.adapt)?;
    if let Some(w) = warning {
        eprintln!("warning: {w}");
    }
    if ck.state.params.n_primitives() != cfg.adapt.n_primitives {
        bail!(
            "{}: checkpoint has {} primitives, configuration expects {}",
            path.display(),
            ck.state.params.n_primitives(),
            cfg.adapt.n_primitives
        );
    }
    Ok(ck)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::GenWorld => {
            prepare_out(out)?;
            let world = pipeline::gen_world(&cfg)?;
            let path = out.join("world.json");
            store::write_world(&path, &world)?;
            println!(
                "wrote {} objects ({} train, {} test) to {}",
                world.objects.len(),
                world.split(Split::Train).count(),
                world.split(Split::Test).count(),
                path.display()
            );
        }
        Command::GenDemos {
            world,
            n_per_object,
        } => {
            if let Some(n) = n_per_object {
                if *n == 0 {
                    return Err(ConfigError::new("--n-per-object must be positive").into());
                }
                cfg.demos_per_object = *n;
            }
            prepare_out(out)?;
            let world = store::read_world(world)?;
            let demos = pipeline::gen_demos(&cfg, &world)?;
            let path = out.join("demos.txt");
            store::write_dataset(
                &path,
                &demos,
                cfg.adapt.n_primitives,
                &store::world_hash(&world),
            )?;
            println!("wrote {} records to {}", demos.len(), path.display());
            println!(
                "expert success {:.1}%",
                100.0 * primadapt::learn::success_rate(&demos)
            );
        }
        Command::TrainBc {
            dataset,
            world,
            eval_heldout,
        } => {
            if *eval_heldout && world.is_none() {
                return Err(ConfigError::new("--eval-heldout needs --world").into());
            }
            prepare_out(out)?;
            let world = world.as_deref().map(store::read_world).transpose()?;
            let demos = load_demos(dataset, &cfg, world.as_ref())?;
            let trainer = pipeline::train(&cfg, &demos)?;
            pipeline::loss_table(&trainer).write(&out.join("bc_loss.csv"))?;
            let ck_path = out.join("bc.ckpt.json");
            store::save_checkpoint(
                &ck_path,
                &Checkpoint::new(&cfg.adapt, trainer.state.clone()),
            )?;
            let losses = &trainer.epoch_losses;
            println!(
                "epoch 1 loss {:.4}, epoch {} loss {:.4}; checkpoint {}",
                losses[0],
                losses.len(),
                losses[losses.len() - 1],
                ck_path.display()
            );
            if let (true, Some(w)) = (*eval_heldout, world.as_ref()) {
                let table = eval_split(&cfg, w, &trainer.state.params, Split::Test)?;
                println!("held-out success {:.1}%", 100.0 * mean_success(&table));
            }
        }
        Command::Adapt {
            inputs,
            dataset,
            object,
        } => {
            prepare_out(out)?;
            let world = store::read_world(&inputs.world)?;
            let (index, spec) = lookup(&world, object)?;
            let demos = load_demos(dataset, &cfg, Some(&world))?;
            let ck = load_params(&inputs.checkpoint, &cfg)?;
            let params = ck.state.params;
            let (state, curve) = match cfg.backend {
                RewardBackend::Human => {
                    let stdin = io::stdin();
                    let mut reward = HumanReward::new(stdin.lock(), io::stdout());
                    let rng = pipeline::stream_rng(cfg.seed, Stream::Adapt, index as u64);
                    let mut adapter = Adapter::new(&world, spec, &demos, cfg.adapt, params, rng)?;
                    adapter.run(&mut reward)?;
                    adapter.into_parts()
                }
                backend => {
                    let anchors = match backend {
                        RewardBackend::Surrogate => Some(pipeline::anchors(&cfg, &world)?),
                        _ => None,
                    };
                    let mut reward =
                        pipeline::reward_model(&cfg, backend, anchors.as_ref(), index)?;
                    let rng = pipeline::stream_rng(cfg.seed, Stream::Adapt, index as u64);
                    let mut adapter = Adapter::new(&world, spec, &demos, cfg.adapt, params, rng)?;
                    adapter.run(reward.as_mut())?;
                    adapter.into_parts()
                }
            };
            let stem = format!("adapt_{}", spec.id);
            pipeline::curve_table(&[(cfg.backend.to_string(), spec, &curve)])
                .write(&out.join(format!("{stem}.csv")))?;
            store::save_checkpoint(
                &out.join(format!("{stem}.ckpt.json")),
                &Checkpoint::new(&cfg.adapt, state),
            )?;
            let first = curve.initial().map_or(0.0, |r| r.success_rate);
            let last = curve.last().map_or(0.0, |r| r.success_rate);
            println!(
                "{}: success {:.1}% -> {:.1}% over {} iterations",
                spec.id,
                100.0 * first,
                100.0 * last,
                curve.rows.len() - 1
            );
        }
        Command::Eval {
            inputs,
            object,
            split,
        } => {
            prepare_out(out)?;
            let world = store::read_world(&inputs.world)?;
            let ck = load_params(&inputs.checkpoint, &cfg)?;
            let table = match object {
                Some(id) => {
                    let (index, spec) = lookup(&world, id)?;
                    let mut t = eval_header();
                    let s = pipeline::eval_object(
                        &cfg,
                        &world,
                        &ck.state.params,
                        spec,
                        index,
                        cfg.adapt.eval_episodes,
                    )?;
                    push_eval(&mut t, spec, &s);
                    t
                }
                None => {
                    let split = match split {
                        SplitArg::Train => Split::Train,
                        SplitArg::Test => Split::Test,
                    };
                    eval_split(&cfg, &world, &ck.state.params, split)?
                }
            };
            table.write(&out.join("eval.csv"))?;
            io::stdout().write_all(table.render().as_bytes())?;
        }
        Command::BaselineKnn {
            dataset,
            world,
            object,
            mode,
        } => {
            prepare_out(out)?;
            let world = store::read_world(world)?;
            let (index, spec) = lookup(&world, object)?;
            let demos = load_demos(dataset, &cfg, Some(&world))?;
            let mut t = Table::new(
                format!("{ANALOG_NOTE}: action replay on {}", spec.id),
                &["mode", "trials", "successes"],
            );
            for m in mode.modes() {
                let s = pipeline::knn_object(&cfg, &world, &demos, spec, index, m)?;
                t.push(vec![
                    m.to_string(),
                    s.episodes.to_string(),
                    s.successes.to_string(),
                ]);
            }
            t.write(&out.join(format!("knn_{}.csv", spec.id)))?;
            io::stdout().write_all(t.render().as_bytes())?;
        }
        Command::Reproduce => {
            let report = pipeline::reproduce(&cfg, out)?;
            println!("expert success      {:.1}%", 100.0 * report.expert_success);
            println!("imitation held-in   {:.1}%", 100.0 * report.held_in_success);
            println!("imitation held-out  {:.1}%", 100.0 * report.bc_mean());
            println!("adapted (oracle)    {:.1}%", 100.0 * report.adapted_mean());
            println!(
                "adapted (surrogate) {:.1}%",
                100.0 * report.surrogate_mean()
            );
            println!("results in {}", out.display());
        }
    }
    Ok(())
}

fn eval_header() -> Table {
    Table::new(
        "policy evaluation",
        &[
            "object",
            "category",
            "episodes",
            "successes",
            "success_rate",
            "safety_events",
        ],
    )
}

fn push_eval(t: &mut Table, spec: &ObjectSpec, s: &primadapt::learn::EvalStats) {
    t.push(vec![
        spec.id.clone(),
        spec.category.to_string(),
        s.episodes.to_string(),
        s.successes.to_string(),
        f(s.success_rate()),
        s.safety_events.to_string(),
    ]);
}

fn eval_split(
    cfg: &RunConfig,
    world: &World,
    params: &primadapt::policy::PolicyParams,
    split: Split,
) -> Result<Table> {
    let mut t = eval_header();
    for (i, spec) in world
        .objects
        .iter()
        .enumerate()
        .filter(|(_, o)| o.split == split)
    {
        let s = pipeline::eval_object(cfg, world, params, spec, i, cfg.adapt.eval_episodes)?;
        push_eval(&mut t, spec, &s);
    }
    Ok(t)
}

fn mean_success(t: &Table) -> f64 {
    let n = t.rows.len().max(1) as f64;
    t.rows
        .iter()
        .map(|r| r[4].parse::<f64>().unwrap_or(0.0))
        .sum::<f64>()
        / n
}
