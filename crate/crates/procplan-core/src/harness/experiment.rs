//! End-to-end experiment orchestration: world generation, splitting,
//! relabeling, training, evaluation, and artifact persistence.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::context::{train_context, ContextEpoch, ContextNet};
use crate::error::{Error, Result};
use crate::gail::{self, AblationFlags, Discriminator, TrainReport};
use crate::genmodel::{bc_fit, BcEpoch, BehaviorPolicy, GenStack, Variant};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::{EvalConfig, ExperimentConfig};
use crate::harness::embed::{embed_rows, write_embed_csv};
use crate::harness::metrics::{
    action_metrics, aggregate_horizon, order_metrics, MetricsReport, QueryLog,
};
use crate::planner::{plan_procedure, walkthrough, PlanQuery};
use crate::rng::Rng;
use crate::taskworld::{her_relabel, write_trajectories, Trajectory, World};

/// One evaluation query: plan from (start, goal) at a fixed horizon; the
/// window observations double as the walk-through candidate pool.
#[derive(Clone, Debug)]
pub struct PlanCase {
    pub task_id: usize,
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    pub gt_actions: Vec<usize>,
    /// Window observations in ground-truth order.
    pub window_obs: Vec<Vec<f64>>,
}

/// Sliding-window queries over a test split at one horizon, subsampled to
/// `max_queries` deterministically.
pub fn build_queries(
    test: &[Trajectory],
    horizon: usize,
    max_queries: usize,
    rng: &mut Rng,
) -> Vec<PlanCase> {
    let mut cases = Vec::new();
    for traj in test {
        if traj.len() < horizon {
            continue;
        }
        for m in 0..=traj.len() - horizon {
            cases.push(PlanCase {
                task_id: traj.task_id,
                start: traj.observations[m].clone(),
                goal: traj.observations[m + horizon - 1].clone(),
                gt_actions: traj.actions[m..m + horizon].to_vec(),
                window_obs: traj.observations[m..m + horizon].to_vec(),
            });
        }
    }
    if cases.len() > max_queries {
        let mut keep = rng.sample_indices(cases.len(), max_queries);
        keep.sort_unstable();
        cases = keep.into_iter().map(|i| cases[i].clone()).collect();
    }
    cases
}

/// Shuffled walk pool and the ground-truth pool ordering (1-based): the
/// start stays at pool position 1 and the goal at position T, the interior
/// is permuted.
pub fn shuffled_pool(window: &[Vec<f64>], rng: &mut Rng) -> (Vec<Vec<f64>>, Vec<usize>) {
    let t = window.len();
    let mut interior: Vec<usize> = (1..t - 1).collect();
    rng.shuffle(&mut interior);
    let mut pool = Vec::with_capacity(t);
    pool.push(window[0].clone());
    for &w in &interior {
        pool.push(window[w].clone());
    }
    pool.push(window[t - 1].clone());
    // gt_order[i] = 1-based pool index of the window's i-th observation.
    let mut gt_order = vec![0usize; t];
    gt_order[0] = 1;
    gt_order[t - 1] = t;
    for (k, &w) in interior.iter().enumerate() {
        gt_order[w] = k + 2;
    }
    (pool, gt_order)
}

/// Evaluation of one checkpoint over a test split.
pub struct EvalOutcome {
    pub report: MetricsReport,
    pub logs: Vec<QueryLog>,
}

pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    test: &[Trajectory],
    eval_cfg: &EvalConfig,
    rng: &mut Rng,
) -> Result<EvalOutcome> {
    let mut all_logs = Vec::new();
    let mut report = MetricsReport::default();
    for &horizon in &eval_cfg.horizons {
        let queries = build_queries(test, horizon, eval_cfg.max_queries_per_horizon, rng);
        let mut logs = Vec::with_capacity(queries.len());
        for case in &queries {
            let query = PlanQuery {
                start: case.start.clone(),
                goal: case.goal.clone(),
                horizon,
                mode: eval_cfg.plan_mode,
                num_samples: eval_cfg.plan_samples,
            };
            let plan = plan_procedure(
                &ckpt.context,
                &ckpt.stack,
                &ckpt.disc,
                &query,
                eval_cfg.max_horizon,
                rng,
            )?;
            let am = action_metrics(&case.gt_actions, &plan.actions)?;

            let (pool, gt_order) = shuffled_pool(&case.window_obs, rng);
            let walk = walkthrough(&ckpt.context, &ckpt.stack, &case.start, &case.goal, &pool, false)?;
            let om = order_metrics(&gt_order, &walk.plan.order)?;

            logs.push(QueryLog {
                horizon,
                task_id: case.task_id,
                gt_actions: case.gt_actions.clone(),
                pred_actions: plan.actions,
                success: am.success,
                accuracy: am.accuracy,
                iou: am.iou,
                gt_order: Some(gt_order),
                pred_order: Some(walk.plan.order),
                hamming: Some(om.hamming),
                pair_accuracy: Some(om.pair_accuracy),
            });
        }
        report.per_horizon.push(aggregate_horizon(horizon, &logs));
        all_logs.extend(logs);
    }
    Ok(EvalOutcome {
        report,
        logs: all_logs,
    })
}

/// Uniform-random baseline over the same query set: i.i.d. uniform action
/// plans and uniform feasible walk orders (fixed endpoints). The free
/// (unconstrained) permutation Hamming is reported alongside.
pub fn uniform_baseline(
    test: &[Trajectory],
    eval_cfg: &EvalConfig,
    action_vocab: usize,
    rng: &mut Rng,
) -> Result<EvalOutcome> {
    if action_vocab == 0 {
        return Err(Error::InvalidConfig("action vocabulary must be positive".into()));
    }
    let mut all_logs = Vec::new();
    let mut report = MetricsReport::default();
    for &horizon in &eval_cfg.horizons {
        let queries = build_queries(test, horizon, eval_cfg.max_queries_per_horizon, rng);
        let mut logs = Vec::with_capacity(queries.len());
        let mut free_hamming_sum = 0.0;
        for case in &queries {
            let pred: Vec<usize> = (0..horizon).map(|_| rng.below(action_vocab)).collect();
            let am = action_metrics(&case.gt_actions, &pred)?;

            let (_, gt_order) = shuffled_pool(&case.window_obs, rng);
            // Feasible uniform order: endpoints fixed, interior shuffled.
            let mut interior: Vec<usize> = (2..horizon).collect();
            rng.shuffle(&mut interior);
            let mut pred_order = vec![1usize];
            pred_order.extend_from_slice(&interior);
            pred_order.push(horizon);
            let om = order_metrics(&gt_order, &pred_order)?;

            // Free-permutation variant of the order baseline.
            let mut free: Vec<usize> = (1..=horizon).collect();
            rng.shuffle(&mut free);
            let free_om = order_metrics(&gt_order, &free)?;
            free_hamming_sum += free_om.hamming as f64;

            logs.push(QueryLog {
                horizon,
                task_id: case.task_id,
                gt_actions: case.gt_actions.clone(),
                pred_actions: pred,
                success: am.success,
                accuracy: am.accuracy,
                iou: am.iou,
                gt_order: Some(gt_order),
                pred_order: Some(pred_order),
                hamming: Some(om.hamming),
                pair_accuracy: Some(om.pair_accuracy),
            });
        }
        let mut block = aggregate_horizon(horizon, &logs);
        if !logs.is_empty() {
            block.hamming_free_mean = Some(free_hamming_sum / logs.len() as f64);
        }
        report.per_horizon.push(block);
        all_logs.extend(logs);
    }
    Ok(EvalOutcome {
        report,
        logs: all_logs,
    })
}

// ── Full pipeline ───────────────────────────────────────────────────

/// Progress marker persisted to `status.json`; after a failure it names the
/// stage that did not complete.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: String,
    pub completed: Vec<String>,
}

fn mark_stage(out_dir: &Path, status: &mut StageStatus, stage: &str) -> Result<()> {
    if !status.stage.is_empty() {
        status.completed.push(status.stage.clone());
    }
    status.stage = stage.to_string();
    std::fs::write(
        out_dir.join("status.json"),
        serde_json::to_string_pretty(status)?,
    )?;
    Ok(())
}

/// Everything a finished experiment produced.
pub struct ExperimentOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: MetricsReport,
    pub uniform: MetricsReport,
    pub train_report: TrainReport,
    pub context_curve: Vec<ContextEpoch>,
    pub bc_curve: Vec<BcEpoch>,
    pub her_relabeled: usize,
    pub out_dir: PathBuf,
}

/// Runs the whole pipeline: generate world, sample demonstrations, split by
/// trajectory, optionally relabel the train split, train context + behavior
/// + adversarial stack, evaluate on the held-out split, and persist every
/// artifact under `out_dir`. Deterministic in `config.seed`.
pub fn run_experiment(
    config: &ExperimentConfig,
    variant: Variant,
    ablations: AblationFlags,
    out_dir: &Path,
) -> Result<ExperimentOutcome> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut status = StageStatus {
        stage: String::new(),
        completed: Vec::new(),
    };

    mark_stage(out_dir, &mut status, "config")?;
    config.save(&out_dir.join("config.json"))?;

    mark_stage(out_dir, &mut status, "world")?;
    let world = World::generate(config.world.clone())?;
    std::fs::write(
        out_dir.join("tasks.json"),
        serde_json::to_string_pretty(&world)?,
    )?;

    // Fixed split order: every stage draws its stream up front so ablations
    // that skip a stage leave the others' randomness untouched.
    let mut master = Rng::seed_from(config.seed);
    let mut rng_data = master.split();
    let mut rng_split = master.split();
    let mut rng_her = master.split();
    let mut rng_context = master.split();
    let mut rng_bc = master.split();
    let mut rng_gail = master.split();
    let mut rng_eval = master.split();
    let mut rng_embed = master.split();

    mark_stage(out_dir, &mut status, "dataset")?;
    let dataset = world.sample_dataset(config.data.demos_per_task, &mut rng_data);
    let n_train = (config.data.train_fraction * dataset.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    rng_split.shuffle(&mut order);
    let mut train: Vec<Trajectory> = order[..n_train].iter().map(|&i| dataset[i].clone()).collect();
    let test: Vec<Trajectory> = order[n_train..].iter().map(|&i| dataset[i].clone()).collect();
    write_trajectories(&out_dir.join("train.jsonl"), &train)?;
    write_trajectories(&out_dir.join("test.jsonl"), &test)?;

    mark_stage(out_dir, &mut status, "her")?;
    let her_report = if ablations.no_her || config.data.her_fraction == 0.0 {
        Default::default()
    } else {
        her_relabel(&mut train, config.data.her_fraction, &mut rng_her)?
    };
    log::info!(
        "relabeled {} trajectories ({} skipped as too short)",
        her_report.relabeled,
        her_report.skipped_too_short
    );

    mark_stage(out_dir, &mut status, "context")?;
    let dims = config.model_dims();
    let mut context = ContextNet::new(
        dims.state_dim,
        dims.latent_dim,
        config.nets.context_hidden_dim,
        &mut rng_context,
    );
    let context_curve = train_context(&mut context, &train, &config.context_train, &mut rng_context)?;
    write_jsonl(&out_dir.join("context_curve.jsonl"), &context_curve)?;

    mark_stage(out_dir, &mut status, "bc")?;
    let mut behavior = BehaviorPolicy::new(dims, &mut rng_bc);
    let bc_curve = bc_fit(&mut behavior, &train, &config.bc_train, &mut rng_bc)?;
    write_jsonl(&out_dir.join("bc_curve.jsonl"), &bc_curve)?;

    mark_stage(out_dir, &mut status, "gail")?;
    let mut stack = GenStack::new(variant, dims, &mut rng_gail);
    let mut disc = Discriminator::new(dims, &mut rng_gail);
    let train_report = gail::train(
        &mut stack,
        &mut disc,
        &context,
        &behavior,
        &train,
        &config.gail_train,
        ablations,
        &mut rng_gail,
    )?;
    std::fs::write(out_dir.join("train_report.jsonl"), train_report.to_jsonl())?;

    mark_stage(out_dir, &mut status, "checkpoint")?;
    let checkpoint = Checkpoint {
        dims,
        context_hidden_dim: config.nets.context_hidden_dim,
        variant,
        seed: config.seed,
        train_config: config.gail_train.clone(),
        context,
        stack,
        disc,
        behavior,
    };
    checkpoint.save(&out_dir.join("checkpoint.ppck"))?;

    mark_stage(out_dir, &mut status, "eval")?;
    let eval = evaluate_checkpoint(&checkpoint, &test, &config.eval, &mut rng_eval)?;
    let uniform = uniform_baseline(&test, &config.eval, config.world.action_vocab, &mut rng_eval)?;
    std::fs::write(
        out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&eval.report)?,
    )?;
    std::fs::write(
        out_dir.join("uniform.json"),
        serde_json::to_string_pretty(&uniform.report)?,
    )?;
    write_jsonl(&out_dir.join("query_log.jsonl"), &eval.logs)?;

    mark_stage(out_dir, &mut status, "embed")?;
    let rows = embed_rows(&checkpoint.context, &test, 100, &mut rng_embed)?;
    write_embed_csv(&out_dir.join("embeddings.csv"), &rows)?;

    mark_stage(out_dir, &mut status, "done")?;
    Ok(ExperimentOutcome {
        checkpoint,
        metrics: eval.report,
        uniform: uniform.report,
        train_report,
        context_curve,
        bc_curve,
        her_relabeled: her_report.relabeled,
        out_dir: out_dir.to_path_buf(),
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.world.num_tasks = 2;
        cfg.world.steps_min = 3;
        cfg.world.steps_max = 4;
        cfg.world.action_vocab = 8;
        cfg.world.obs_dim = 10;
        cfg.world.seed = 3;
        cfg.data.demos_per_task = 12;
        cfg.nets.latent_dim = 4;
        cfg.nets.hidden_dim = 16;
        cfg.nets.context_hidden_dim = 16;
        cfg.context_train.epochs = 3;
        cfg.bc_train.epochs = 3;
        cfg.gail_train.epochs = 2;
        cfg.gail_train.batch_size = 8;
        cfg.eval.horizons = vec![3];
        cfg.eval.max_queries_per_horizon = 40;
        cfg.seed = 11;
        cfg
    }

    #[test]
    fn split_has_no_trajectory_leakage() {
        let cfg = tiny_config();
        let world = World::generate(cfg.world.clone()).unwrap();
        let mut rng = Rng::seed_from(1);
        let dataset = world.sample_dataset(10, &mut rng);
        let n_train = (0.7 * dataset.len() as f64).round() as usize;
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        rng.shuffle(&mut order);
        let train: Vec<usize> = order[..n_train].to_vec();
        let test: Vec<usize> = order[n_train..].to_vec();
        assert!(train.iter().all(|i| !test.contains(i)));
        assert_eq!(train.len() + test.len(), dataset.len());
    }

    #[test]
    fn queries_cover_sliding_windows() {
        let cfg = tiny_config();
        let world = World::generate(cfg.world.clone()).unwrap();
        let mut rng = Rng::seed_from(2);
        let data = world.sample_dataset(3, &mut rng);
        let queries = build_queries(&data, 3, usize::MAX, &mut rng);
        let expected: usize = data
            .iter()
            .map(|t| if t.len() >= 3 { t.len() - 2 } else { 0 })
            .sum();
        assert_eq!(queries.len(), expected);
        for q in &queries {
            assert_eq!(q.gt_actions.len(), 3);
            assert_eq!(q.window_obs.len(), 3);
            assert_eq!(q.start, q.window_obs[0]);
            assert_eq!(q.goal, q.window_obs[2]);
        }
    }

    #[test]
    fn shuffled_pool_orders_are_consistent() {
        let mut rng = Rng::seed_from(3);
        let window: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64; 2]).collect();
        for _ in 0..50 {
            let (pool, gt_order) = shuffled_pool(&window, &mut rng);
            assert_eq!(gt_order[0], 1);
            assert_eq!(gt_order[4], 5);
            // Reconstruct: pool[gt_order[i] - 1] must equal window[i].
            for (i, &p) in gt_order.iter().enumerate() {
                assert_eq!(pool[p - 1], window[i]);
            }
        }
    }

    #[test]
    fn run_experiment_is_bit_deterministic() {
        let cfg = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let out1 = dir.path().join("run1");
        let out2 = dir.path().join("run2");
        run_experiment(&cfg, Variant::Int, AblationFlags::default(), &out1).unwrap();
        run_experiment(&cfg, Variant::Int, AblationFlags::default(), &out2).unwrap();
        for file in [
            "metrics.json",
            "uniform.json",
            "train_report.jsonl",
            "checkpoint.ppck",
            "query_log.jsonl",
            "embeddings.csv",
        ] {
            let a = std::fs::read(out1.join(file)).unwrap();
            let b = std::fs::read(out2.join(file)).unwrap();
            assert_eq!(a, b, "artifact {file} differs between identical runs");
        }
    }

    #[test]
    fn uniform_baseline_accuracy_matches_analytic_expectation() {
        // Per-step accuracy of uniform plans is 1/M; check within 3 SE on a
        // large query set.
        let cfg = tiny_config();
        let world = World::generate(cfg.world.clone()).unwrap();
        let mut rng = Rng::seed_from(4);
        let data = world.sample_dataset(400, &mut rng);
        let eval_cfg = EvalConfig {
            horizons: vec![3],
            max_queries_per_horizon: usize::MAX,
            ..Default::default()
        };
        let m = cfg.world.action_vocab;
        let out = uniform_baseline(&data, &eval_cfg, m, &mut rng).unwrap();
        let block = &out.report.per_horizon[0];
        let trials = (block.position_total) as f64;
        let p = 1.0 / m as f64;
        let se = (p * (1.0 - p) / trials).sqrt();
        let observed = block.accuracy / 100.0;
        assert!(
            (observed - p).abs() < 3.0 * se,
            "accuracy {observed} vs expected {p} (se {se})"
        );
        assert!(block.hamming_free_mean.is_some());
    }

    #[test]
    fn uniform_baseline_m1_always_succeeds() {
        let mut cfg = tiny_config();
        cfg.world.action_vocab = 8; // world needs room for distinct steps
        let world = World::generate(cfg.world.clone()).unwrap();
        let mut rng = Rng::seed_from(5);
        let mut data = world.sample_dataset(5, &mut rng);
        // Degenerate vocabulary: every action id is 0.
        for t in &mut data {
            t.actions.iter_mut().for_each(|a| *a = 0);
        }
        let eval_cfg = EvalConfig {
            horizons: vec![3],
            ..Default::default()
        };
        let out = uniform_baseline(&data, &eval_cfg, 1, &mut rng).unwrap();
        assert_eq!(out.report.per_horizon[0].success_rate, 100.0);
    }

    #[test]
    fn uniform_walk_at_t3_fixed_endpoints_never_misses() {
        let cfg = tiny_config();
        let world = World::generate(cfg.world.clone()).unwrap();
        let mut rng = Rng::seed_from(6);
        let data = world.sample_dataset(20, &mut rng);
        let eval_cfg = EvalConfig {
            horizons: vec![3],
            ..Default::default()
        };
        let out = uniform_baseline(&data, &eval_cfg, cfg.world.action_vocab, &mut rng).unwrap();
        assert_eq!(out.report.per_horizon[0].hamming_mean, 0.0);
    }
}
