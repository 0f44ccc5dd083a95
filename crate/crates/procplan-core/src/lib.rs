//! Goal-conditioned procedure planning and walk-through planning on
//! synthetic instructional tasks.
//!
//! The pipeline: a predictive VAE infers a task context from start/goal
//! observations; a model-based adversarial imitation learner (deterministic
//! interior-cell or stochastic exterior-transition variant) rolls out latent
//! states and actions conditioned on that context; a permutation solver
//! orders observation pools along learned transitions. The `harness` module
//! provides metrics, experiment orchestration, checkpoints, and data export.

pub mod autodiff;
pub mod context;
pub mod error;
pub mod gail;
pub mod genmodel;
pub mod gradcheck;
pub mod harness;
pub mod nn;
pub mod planner;
pub mod rng;
pub mod taskworld;

pub use autodiff::{Adam, AdamConfig, Graph, NodeId, ParamId, Params, Tensor};
pub use context::{ContextNet, ContextPosterior, ContextVariable};
pub use error::{Error, Result};
pub use gail::{AblationFlags, TrainConfig, TrainReport};
pub use genmodel::{ActionDistribution, BehaviorPolicy, GenStack, LatentState, Variant};
pub use harness::checkpoint::Checkpoint;
pub use harness::config::ExperimentConfig;
pub use harness::metrics::MetricsReport;
pub use planner::{PlanQuery, ScoreMatrix, WalkPlan};
pub use rng::Rng;
pub use taskworld::{TaskSpec, Trajectory, World, WorldConfig};
