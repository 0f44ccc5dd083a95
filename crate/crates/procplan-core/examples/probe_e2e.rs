// probe: variant comparison with a larger budget
use procplan_core::gail::AblationFlags;
use procplan_core::genmodel::Variant;
use procplan_core::harness::config::ExperimentConfig;
use procplan_core::harness::experiment::run_experiment;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let gail_epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let lr_t: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let mut cfg = ExperimentConfig::default();
    cfg.world.num_tasks = 4;
    cfg.data.demos_per_task = 80;
    cfg.context_train.epochs = 40;
    cfg.bc_train.epochs = 50;
    cfg.gail_train.epochs = gail_epochs;
    cfg.gail_train.lr_transition = lr_t;
    cfg.eval.horizons = vec![3, 4];
    cfg.eval.max_queries_per_horizon = 500;
    cfg.seed = 5;
    cfg.world.seed = 5;

    let dir = std::env::temp_dir().join(format!("probe_cmp_{}", std::process::id()));
    for (name, variant, flags) in [
        ("ext", Variant::Ext, AblationFlags::default()),
        ("int", Variant::Int, AblationFlags::default()),
        ("wor", Variant::Ext, AblationFlags { no_reward: true, ..Default::default() }),
        ("wodis", Variant::Int, AblationFlags::without_discriminator()),
    ] {
        let t0 = std::time::Instant::now();
        let out = run_experiment(&cfg, variant, flags, &dir.join(name)).unwrap();
        let h3 = &out.metrics.per_horizon[0];
        let h4 = &out.metrics.per_horizon[1];
        let u3 = &out.uniform.per_horizon[0];
        println!(
            "{name:>6}: T3 succ {:5.2}% acc {:5.2}% miou {:5.2}% | T4 succ {:5.2}% acc {:5.2}% ham {:.3} pacc {:5.2}% | uni succ {:.3}% | {:.0}s",
            h3.success_rate, h3.accuracy, h3.miou,
            h4.success_rate, h4.accuracy, h4.hamming_mean, h4.pair_accuracy,
            u3.success_rate,
            t0.elapsed().as_secs_f64()
        );
    }
    let _ = std::fs::remove_dir_all(&dir);
}
