// probe: acceptance-scale world, variants and HER effect
use procplan_core::gail::AblationFlags;
use procplan_core::genmodel::Variant;
use procplan_core::harness::config::ExperimentConfig;
use procplan_core::harness::experiment::run_experiment;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let gail_epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(40);
    let mut cfg = ExperimentConfig::default();
    cfg.gail_train.epochs = gail_epochs;
    cfg.gail_train.lr_transition = 3e-3;
    cfg.eval.horizons = vec![3, 4];
    cfg.eval.max_queries_per_horizon = 800;
    cfg.seed = seed;
    cfg.world.seed = seed;

    let dir = std::env::temp_dir().join(format!("probe_acc_{}_{}", std::process::id(), seed));
    for (name, variant, flags) in [
        ("ext", Variant::Ext, AblationFlags::default()),
        ("int", Variant::Int, AblationFlags::default()),
        ("wodis", Variant::Int, AblationFlags::without_discriminator()),
        ("ext-noher", Variant::Ext, AblationFlags { no_her: true, ..Default::default() }),
    ] {
        let t0 = std::time::Instant::now();
        let out = run_experiment(&cfg, variant, flags, &dir.join(name)).unwrap();
        let h3 = &out.metrics.per_horizon[0];
        let h4 = &out.metrics.per_horizon[1];
        let u3 = &out.uniform.per_horizon[0];
        let u4 = &out.uniform.per_horizon[1];
        println!(
            "{name:>10} seed{seed}: T3 succ {:5.2}% acc {:5.2}% miou {:5.2}% | T4 succ {:5.2}% ham {:.3} pacc {:5.2}% | uniT3 succ {:.3}% uniT4 ham {:.3} pacc {:.2}% | {:.0}s",
            h3.success_rate, h3.accuracy, h3.miou,
            h4.success_rate, h4.hamming_mean, h4.pair_accuracy,
            u3.success_rate, u4.hamming_mean, u4.pair_accuracy,
            t0.elapsed().as_secs_f64()
        );
    }
    let _ = std::fs::remove_dir_all(&dir);
}
