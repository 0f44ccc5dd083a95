//! Metrics, baselines, experiment orchestration, checkpoints, configuration,
//! and export of plot/embedding data.

pub mod checkpoint;
pub mod config;
pub mod embed;
pub mod experiment;
pub mod metrics;
pub mod plot;

pub use checkpoint::Checkpoint;
pub use config::{DataConfig, EvalConfig, ExperimentConfig, NetConfig};
pub use experiment::{
    build_queries, evaluate_checkpoint, run_experiment, shuffled_pool, uniform_baseline,
    EvalOutcome, ExperimentOutcome, PlanCase,
};
pub use metrics::{
    action_metrics, aggregate_horizon, intra_inter_cosine, order_metrics, silhouette_score,
    ActionMetrics, HorizonMetrics, MetricsReport, OrderMetrics, QueryLog,
};
