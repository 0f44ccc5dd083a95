//! Benchmark fixtures: small prebuilt models and batches shared by the
//! criterion targets.

use procplan_core::context::ContextNet;
use procplan_core::gail::{Discriminator, TrajBatch};
use procplan_core::genmodel::{GenStack, ModelDims, Variant};
use procplan_core::rng::Rng;
use procplan_core::taskworld::{World, WorldConfig};

pub struct BenchFixture {
    pub dims: ModelDims,
    pub context: ContextNet,
    pub stack: GenStack,
    pub disc: Discriminator,
    pub batch: TrajBatch,
    pub pool: Vec<Vec<f64>>,
}

pub fn fixture(variant: Variant) -> BenchFixture {
    let mut rng = Rng::seed_from(42);
    let world = World::generate(WorldConfig {
        num_tasks: 4,
        steps_min: 5,
        steps_max: 5,
        action_vocab: 30,
        obs_dim: 40,
        noise_sigma: 0.05,
        interchangeable_fraction: 0.5,
        seed: 42,
    })
    .expect("valid bench config");
    let dims = ModelDims {
        state_dim: 40,
        latent_dim: 16,
        action_vocab: 30,
        hidden_dim: 64,
    };
    let dataset = world.sample_dataset(8, &mut rng);
    let context = ContextNet::new(dims.state_dim, dims.latent_dim, 64, &mut rng);
    let stack = GenStack::new(variant, dims, &mut rng);
    let disc = Discriminator::new(dims, &mut rng);
    let indices: Vec<usize> = (0..32).collect();
    let batch = TrajBatch::build(&dataset, &indices, &context, dims, &mut rng)
        .expect("batch builds");
    let pool: Vec<Vec<f64>> = (0..10).map(|_| rng.normal_vec(40)).collect();
    BenchFixture {
        dims,
        context,
        stack,
        disc,
        batch,
        pool,
    }
}
