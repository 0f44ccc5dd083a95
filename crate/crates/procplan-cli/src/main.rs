//! `procplan`: synthetic-world generation, model training, planning, and
//! evaluation from the command line.
//!
//! Verbosity is controlled by `RUST_LOG` (error/warn/info/debug).

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::{Args, Parser, Subcommand};

use procplan_core::context::{train_context, ContextNet};
use procplan_core::gail::{self, AblationFlags, Discriminator};
use procplan_core::genmodel::{bc_fit, BehaviorPolicy, GenStack, Variant};
use procplan_core::gradcheck::run_gradient_suite;
use procplan_core::harness::checkpoint::Checkpoint;
use procplan_core::harness::config::ExperimentConfig;
use procplan_core::harness::embed::{embed_rows, write_embed_csv};
use procplan_core::harness::experiment::{
    build_queries, evaluate_checkpoint, run_experiment, shuffled_pool, uniform_baseline,
};
use procplan_core::harness::plot::plot_log;
use procplan_core::planner::{plan_procedure, walkthrough, PlanQuery, PlanRecord};
use procplan_core::rng::Rng;
use procplan_core::taskworld::{her_relabel, read_trajectories, write_trajectories, World};

#[derive(Parser)]
#[command(name = "procplan", version, about = "Goal-conditioned procedure planning on synthetic instructional tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON). Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configuration's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world and its demonstration dataset (70/30 split).
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train context, behavior, and adversarial models on generated data.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding tasks.json / train.jsonl (from `gen`).
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "ext")]
        variant: Variant,
        /// Comma-separated ablations: no_reward,no_disc,no_her.
        #[arg(long, default_value = "")]
        ablate: String,
    },
    /// Plan action sequences for held-out queries.
    Plan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Trajectory file providing the evaluation queries.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 3)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        limit: usize,
    },
    /// Order shuffled observation pools between start and goal.
    Walk {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 4)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        limit: usize,
        /// Use the greedy solver for pools beyond the exact limit.
        #[arg(long)]
        greedy: bool,
    },
    /// Evaluate a checkpoint (and the uniform baseline) on a test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Export context-embedding CSV for external projection.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 100)]
        pairs_per_task: usize,
    },
    /// Verify reverse-mode gradients against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        instantiations: usize,
    },
    /// Render a JSONL training/metrics log to CSV and SVG.
    Plot {
        #[command(flatten)]
        common: Common,
        /// Input log (e.g. train_report.jsonl).
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the full pipeline: gen, train, eval, embed in one go.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ext")]
        variant: Variant,
        #[arg(long, default_value = "")]
        ablate: String,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.world.seed = seed;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (stage, result) = dispatch(cli.command);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error in stage `{stage}`: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> (&'static str, Result<()>) {
    match command {
        Command::Gen { common } => ("gen", cmd_gen(common)),
        Command::Train {
            common,
            data,
            variant,
            ablate,
        } => ("train", cmd_train(common, data, variant, &ablate)),
        Command::Plan {
            common,
            checkpoint,
            data,
            horizon,
            limit,
        } => ("plan", cmd_plan(common, checkpoint, data, horizon, limit)),
        Command::Walk {
            common,
            checkpoint,
            data,
            horizon,
            limit,
            greedy,
        } => ("walk", cmd_walk(common, checkpoint, data, horizon, limit, greedy)),
        Command::Eval {
            common,
            checkpoint,
            data,
        } => ("eval", cmd_eval(common, checkpoint, data)),
        Command::Embed {
            common,
            checkpoint,
            data,
            pairs_per_task,
        } => ("embed", cmd_embed(common, checkpoint, data, pairs_per_task)),
        Command::Gradcheck {
            common,
            instantiations,
        } => ("gradcheck", cmd_gradcheck(common, instantiations)),
        Command::Plot { common, input } => ("plot", cmd_plot(common, input)),
        Command::Run {
            common,
            variant,
            ablate,
        } => ("run", cmd_run(common, variant, &ablate)),
    }
}

fn cmd_gen(common: Common) -> Result<()> {
    let cfg = load_config(&common)?;
    std::fs::create_dir_all(&common.out)?;
    cfg.save(&common.out.join("config.json"))?;
    let world = World::generate(cfg.world.clone())?;
    std::fs::write(
        common.out.join("tasks.json"),
        serde_json::to_string_pretty(&world)?,
    )?;
    let mut master = Rng::seed_from(cfg.seed);
    let mut rng_data = master.split();
    let mut rng_split = master.split();
    let dataset = world.sample_dataset(cfg.data.demos_per_task, &mut rng_data);
    let n_train = (cfg.data.train_fraction * dataset.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    rng_split.shuffle(&mut order);
    let train: Vec<_> = order[..n_train].iter().map(|&i| dataset[i].clone()).collect();
    let test: Vec<_> = order[n_train..].iter().map(|&i| dataset[i].clone()).collect();
    write_trajectories(&common.out.join("train.jsonl"), &train)?;
    write_trajectories(&common.out.join("test.jsonl"), &test)?;
    println!(
        "generated {} tasks, {} train / {} test trajectories -> {}",
        world.tasks.len(),
        train.len(),
        test.len(),
        common.out.display()
    );
    Ok(())
}

fn cmd_train(common: Common, data: PathBuf, variant: Variant, ablate: &str) -> Result<()> {
    let cfg = load_config(&common)?;
    let ablations = AblationFlags::parse(ablate)?;
    std::fs::create_dir_all(&common.out)?;
    let mut train_set = read_trajectories(
        &data.join("train.jsonl"),
        cfg.world.action_vocab,
        cfg.world.obs_dim,
    )?;

    let mut master = Rng::seed_from(cfg.gail_train.seed ^ cfg.seed);
    let mut rng_her = master.split();
    let mut rng_context = master.split();
    let mut rng_bc = master.split();
    let mut rng_gail = master.split();

    if !ablations.no_her && cfg.data.her_fraction > 0.0 {
        let report = her_relabel(&mut train_set, cfg.data.her_fraction, &mut rng_her)?;
        log::info!("relabeled {} trajectories", report.relabeled);
    }

    let dims = cfg.model_dims();
    let mut context = ContextNet::new(
        dims.state_dim,
        dims.latent_dim,
        cfg.nets.context_hidden_dim,
        &mut rng_context,
    );
    let curve = train_context(&mut context, &train_set, &cfg.context_train, &mut rng_context)?;
    log::info!(
        "context training: loss {:.4} -> {:.4}",
        curve.first().map(|e| e.loss).unwrap_or(f64::NAN),
        curve.last().map(|e| e.loss).unwrap_or(f64::NAN)
    );

    let mut behavior = BehaviorPolicy::new(dims, &mut rng_bc);
    let bc = bc_fit(&mut behavior, &train_set, &cfg.bc_train, &mut rng_bc)?;
    log::info!(
        "behavior cloning accuracy: {:.1}%",
        100.0 * bc.last().map(|e| e.accuracy).unwrap_or(0.0)
    );

    let mut stack = GenStack::new(variant, dims, &mut rng_gail);
    let mut disc = Discriminator::new(dims, &mut rng_gail);
    let report = gail::train(
        &mut stack,
        &mut disc,
        &context,
        &behavior,
        &train_set,
        &cfg.gail_train,
        ablations,
        &mut rng_gail,
    )?;
    std::fs::write(common.out.join("train_report.jsonl"), report.to_jsonl())?;

    let ckpt = Checkpoint {
        dims,
        context_hidden_dim: cfg.nets.context_hidden_dim,
        variant,
        seed: cfg.seed,
        train_config: cfg.gail_train.clone(),
        context,
        stack,
        disc,
        behavior,
    };
    let path = common.out.join("checkpoint.ppck");
    ckpt.save(&path)?;
    println!("trained {variant} model ({ablations}) -> {}", path.display());
    Ok(())
}

fn cmd_plan(common: Common, checkpoint: PathBuf, data: PathBuf, horizon: usize, limit: usize) -> Result<()> {
    let cfg = load_config(&common)?;
    let ckpt = Checkpoint::load(&checkpoint)?;
    let test = read_trajectories(&data, ckpt.dims.action_vocab, ckpt.dims.state_dim)?;
    std::fs::create_dir_all(&common.out)?;
    let mut rng = Rng::seed_from(cfg.seed);
    let max = if limit == 0 { usize::MAX } else { limit };
    let queries = build_queries(&test, horizon, max, &mut rng);
    let mut out = String::new();
    for case in &queries {
        let query = PlanQuery {
            start: case.start.clone(),
            goal: case.goal.clone(),
            horizon,
            mode: cfg.eval.plan_mode,
            num_samples: cfg.eval.plan_samples,
        };
        let plan = plan_procedure(&ckpt.context, &ckpt.stack, &ckpt.disc, &query, cfg.eval.max_horizon, &mut rng)?;
        let record = PlanRecord {
            actions: plan.actions,
            walk_order: Vec::new(),
            scores: plan.step_rewards,
        };
        out.push_str(&serde_json::to_string(&record)?);
        out.push('\n');
    }
    let path = common.out.join("plans.jsonl");
    std::fs::write(&path, out)?;
    println!("planned {} queries -> {}", queries.len(), path.display());
    Ok(())
}

fn cmd_walk(
    common: Common,
    checkpoint: PathBuf,
    data: PathBuf,
    horizon: usize,
    limit: usize,
    greedy: bool,
) -> Result<()> {
    let cfg = load_config(&common)?;
    let ckpt = Checkpoint::load(&checkpoint)?;
    let test = read_trajectories(&data, ckpt.dims.action_vocab, ckpt.dims.state_dim)?;
    std::fs::create_dir_all(&common.out)?;
    let mut rng = Rng::seed_from(cfg.seed);
    let max = if limit == 0 { usize::MAX } else { limit };
    let queries = build_queries(&test, horizon, max, &mut rng);
    let mut out = String::new();
    for case in &queries {
        let (pool, _) = shuffled_pool(&case.window_obs, &mut rng);
        let walk = walkthrough(&ckpt.context, &ckpt.stack, &case.start, &case.goal, &pool, greedy)?;
        let record = PlanRecord {
            actions: Vec::new(),
            walk_order: walk.plan.order,
            scores: walk.step_scores,
        };
        out.push_str(&serde_json::to_string(&record)?);
        out.push('\n');
    }
    let path = common.out.join("walks.jsonl");
    std::fs::write(&path, out)?;
    println!("ordered {} pools -> {}", queries.len(), path.display());
    Ok(())
}

fn cmd_eval(common: Common, checkpoint: PathBuf, data: PathBuf) -> Result<()> {
    let cfg = load_config(&common)?;
    let ckpt = Checkpoint::load(&checkpoint)?;
    let test = read_trajectories(&data, ckpt.dims.action_vocab, ckpt.dims.state_dim)?;
    std::fs::create_dir_all(&common.out)?;
    let mut rng = Rng::seed_from(cfg.seed);
    let eval = evaluate_checkpoint(&ckpt, &test, &cfg.eval, &mut rng)?;
    let uniform = uniform_baseline(&test, &cfg.eval, ckpt.dims.action_vocab, &mut rng)?;
    std::fs::write(
        common.out.join("metrics.json"),
        serde_json::to_string_pretty(&eval.report)?,
    )?;
    std::fs::write(
        common.out.join("uniform.json"),
        serde_json::to_string_pretty(&uniform.report)?,
    )?;
    for block in &eval.report.per_horizon {
        println!(
            "T={}: success {:.2}%  accuracy {:.2}%  mIoU {:.2}%  hamming {:.3}  pair-acc {:.2}%  (n={})",
            block.horizon,
            block.success_rate,
            block.accuracy,
            block.miou,
            block.hamming_mean,
            block.pair_accuracy,
            block.sample_count
        );
    }
    for block in &uniform.report.per_horizon {
        println!(
            "T={} uniform: success {:.2}%  accuracy {:.2}%  hamming {:.3} (free {:.3})  pair-acc {:.2}%",
            block.horizon,
            block.success_rate,
            block.accuracy,
            block.hamming_mean,
            block.hamming_free_mean.unwrap_or(f64::NAN),
            block.pair_accuracy
        );
    }
    Ok(())
}

fn cmd_embed(common: Common, checkpoint: PathBuf, data: PathBuf, pairs_per_task: usize) -> Result<()> {
    let cfg = load_config(&common)?;
    let ckpt = Checkpoint::load(&checkpoint)?;
    let dataset = read_trajectories(&data, ckpt.dims.action_vocab, ckpt.dims.state_dim)?;
    std::fs::create_dir_all(&common.out)?;
    let mut rng = Rng::seed_from(cfg.seed);
    let rows = embed_rows(&ckpt.context, &dataset, pairs_per_task, &mut rng)?;
    let path = common.out.join("embeddings.csv");
    write_embed_csv(&path, &rows)?;
    println!("wrote {} embeddings -> {}", rows.len(), path.display());
    Ok(())
}

fn cmd_gradcheck(common: Common, instantiations: usize) -> Result<()> {
    let cfg = load_config(&common)?;
    let checks = run_gradient_suite(instantiations, 1e-4, cfg.seed)?;
    let mut all_ok = true;
    for c in &checks {
        println!(
            "{:<16} runs={:<3} max rel err={:<12.3e} {}",
            c.component,
            c.instantiations,
            c.max_rel_error,
            if c.passed { "PASS" } else { "FAIL" }
        );
        all_ok &= c.passed;
    }
    anyhow::ensure!(all_ok, "gradient check failed");
    Ok(())
}

fn cmd_plot(common: Common, input: PathBuf) -> Result<()> {
    let written = plot_log(&input, &common.out)?;
    for p in &written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_run(common: Common, variant: Variant, ablate: &str) -> Result<()> {
    let cfg = load_config(&common)?;
    let ablations = AblationFlags::parse(ablate)?;
    let outcome = run_experiment(&cfg, variant, ablations, &common.out)?;
    for block in &outcome.metrics.per_horizon {
        println!(
            "T={}: success {:.2}%  accuracy {:.2}%  mIoU {:.2}%  hamming {:.3}  pair-acc {:.2}%",
            block.horizon, block.success_rate, block.accuracy, block.miou, block.hamming_mean, block.pair_accuracy
        );
    }
    println!("artifacts -> {}", outcome.out_dir.display());
    Ok(())
}
