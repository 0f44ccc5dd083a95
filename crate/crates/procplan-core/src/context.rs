//! Context inference: a two-head predictive VAE over (start, goal) pairs.
//!
//! Two parallel encoders embed the start and goal observations; a fused head
//! parameterizes a diagonal-Gaussian posterior over the time-invariant
//! context variable. A decoder reconstructs both observations from the
//! context, so everything the generation model learns about the goal flows
//! through the context bottleneck.

use serde::{Deserialize, Serialize};

use crate::autodiff::{next_store_id, Adam, AdamConfig, Graph, NodeId, Params, StoreId, Tensor};
use crate::error::{Error, Result};
use crate::nn::{Init, Linear};
use crate::rng::Rng;
use crate::taskworld::Trajectory;

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// Diagonal-Gaussian posterior over the context variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextPosterior {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl ContextPosterior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// A concrete draw (or the mean) of the context variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextVariable {
    pub z: Vec<f64>,
}

/// Closed-form KL(N(mu, diag e^lv) || N(0, I)).
pub fn gaussian_kl(mean: &[f64], log_var: &[f64]) -> f64 {
    mean.iter()
        .zip(log_var)
        .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

/// Encoder/decoder parameters and dimensions of the context model.
#[derive(Clone)]
pub struct ContextNet {
    pub store: Params,
    pub store_id: StoreId,
    pub obs_dim: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    enc_start: Linear,
    enc_goal: Linear,
    fuse: Linear,
    mu_head: Linear,
    lv_head: Linear,
    dec_in: Linear,
    dec_start: Linear,
    dec_goal: Linear,
}

pub(crate) struct ElboNodes {
    pub loss: NodeId,
    pub kl_mean: NodeId,
    pub recon_mean: NodeId,
}

impl ContextNet {
    /// Same layout with a replacement parameter store.
    pub fn with_params(&self, store: Params) -> Self {
        ContextNet {
            store,
            ..self.clone()
        }
    }

    pub fn new(obs_dim: usize, latent_dim: usize, hidden_dim: usize, rng: &mut Rng) -> Self {
        let mut store = Params::new();
        let enc_start = Linear::new(&mut store, "enc_start", obs_dim, hidden_dim, Init::Scaled, rng);
        let enc_goal = Linear::new(&mut store, "enc_goal", obs_dim, hidden_dim, Init::Scaled, rng);
        let fuse = Linear::new(&mut store, "fuse", 2 * hidden_dim, hidden_dim, Init::Scaled, rng);
        let mu_head = Linear::new(&mut store, "mu_head", hidden_dim, latent_dim, Init::Zero, rng);
        let lv_head = Linear::new(&mut store, "lv_head", hidden_dim, latent_dim, Init::Zero, rng);
        let dec_in = Linear::new(&mut store, "dec_in", latent_dim, hidden_dim, Init::Scaled, rng);
        let dec_start = Linear::new(&mut store, "dec_start", hidden_dim, obs_dim, Init::Zero, rng);
        let dec_goal = Linear::new(&mut store, "dec_goal", hidden_dim, obs_dim, Init::Zero, rng);
        ContextNet {
            store,
            store_id: next_store_id(),
            obs_dim,
            latent_dim,
            hidden_dim,
            enc_start,
            enc_goal,
            fuse,
            mu_head,
            lv_head,
            dec_in,
            dec_start,
            dec_goal,
        }
    }

    /// Posterior parameter nodes for a batch of (start, goal) rows.
    pub(crate) fn posterior_nodes(
        &self,
        g: &mut Graph,
        o_start: NodeId,
        o_goal: NodeId,
        live: bool,
    ) -> Result<(NodeId, NodeId)> {
        let h1 = self.enc_start.forward_with(g, &self.store, self.store_id, o_start, live)?;
        let h1 = g.tanh(h1);
        let h2 = self.enc_goal.forward_with(g, &self.store, self.store_id, o_goal, live)?;
        let h2 = g.tanh(h2);
        let cat = g.concat_cols(h1, h2)?;
        let hf = self.fuse.forward_with(g, &self.store, self.store_id, cat, live)?;
        let hf = g.tanh(hf);
        let mu = self.mu_head.forward_with(g, &self.store, self.store_id, hf, live)?;
        let lv = self.lv_head.forward_with(g, &self.store, self.store_id, hf, live)?;
        let lv = g.clamp(lv, LOG_VAR_MIN, LOG_VAR_MAX);
        Ok((mu, lv))
    }

    fn decode_nodes(&self, g: &mut Graph, z: NodeId, live: bool) -> Result<(NodeId, NodeId)> {
        let hd = self.dec_in.forward_with(g, &self.store, self.store_id, z, live)?;
        let hd = g.tanh(hd);
        let r1 = self.dec_start.forward_with(g, &self.store, self.store_id, hd, live)?;
        let r2 = self.dec_goal.forward_with(g, &self.store, self.store_id, hd, live)?;
        Ok((r1, r2))
    }

    /// Infers the posterior for one (start, goal) pair. Deterministic.
    pub fn encode(&self, o_start: &[f64], o_goal: &[f64]) -> Result<ContextPosterior> {
        if o_start.len() != self.obs_dim || o_goal.len() != self.obs_dim {
            return Err(Error::ShapeMismatch {
                op: "context.encode",
                lhs: vec![o_start.len(), o_goal.len()],
                rhs: vec![self.obs_dim, self.obs_dim],
            });
        }
        let mut g = Graph::new();
        let s = g.constant_data(1, self.obs_dim, o_start.to_vec());
        let t = g.constant_data(1, self.obs_dim, o_goal.to_vec());
        let (mu, lv) = self.posterior_nodes(&mut g, s, t, false)?;
        Ok(ContextPosterior {
            mean: g.value(mu).to_vec(),
            log_var: g.value(lv).to_vec(),
        })
    }

    /// Decodes a context variable back to (start, goal) reconstructions.
    pub fn reconstruct(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if z.len() != self.latent_dim {
            return Err(Error::ShapeMismatch {
                op: "context.reconstruct",
                lhs: vec![z.len()],
                rhs: vec![self.latent_dim],
            });
        }
        let mut g = Graph::new();
        let zn = g.constant_data(1, self.latent_dim, z.to_vec());
        let (r1, r2) = self.decode_nodes(&mut g, zn, false)?;
        Ok((g.value(r1).to_vec(), g.value(r2).to_vec()))
    }

    /// Batched posterior means (diagnostics, embedding export).
    pub fn encode_means(&self, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(pairs.len());
        for (s, t) in pairs {
            out.push(self.encode(s, t)?.mean);
        }
        Ok(out)
    }

    /// Negated-ELBO graph over a batch; `eps` supplies the reparameterization
    /// draws, shape `[batch, latent_dim]`.
    pub(crate) fn elbo_graph(
        &self,
        g: &mut Graph,
        o_start: &Tensor,
        o_goal: &Tensor,
        eps: &Tensor,
        kl_weight: f64,
        live: bool,
    ) -> Result<ElboNodes> {
        let s = g.constant(o_start);
        let t = g.constant(o_goal);
        let e = g.constant(eps);
        let (mu, lv) = self.posterior_nodes(g, s, t, live)?;
        let z = g.gaussian_reparam(mu, lv, e)?;
        let (r1, r2) = self.decode_nodes(g, z, live)?;

        let d1 = g.sub(r1, s)?;
        let sq1 = g.mul(d1, d1)?;
        let s1 = g.row_sum(sq1);
        let d2 = g.sub(r2, t)?;
        let sq2 = g.mul(d2, d2)?;
        let s2 = g.row_sum(sq2);
        let recon_rows = g.add(s1, s2)?;
        let recon_rows = g.scale(recon_rows, 0.5);

        // KL per row: 0.5 Σ (mu² + e^lv − 1 − lv)
        let mu2 = g.mul(mu, mu)?;
        let elv = g.exp(lv);
        let lv1 = g.add_scalar(lv, 1.0);
        let a = g.add(mu2, elv)?;
        let kl_terms = g.sub(a, lv1)?;
        let kl_rows = g.row_sum(kl_terms);
        let kl_rows = g.scale(kl_rows, 0.5);

        let weighted_kl = g.scale(kl_rows, kl_weight);
        let total_rows = g.add(recon_rows, weighted_kl)?;
        let loss = g.mean(total_rows);
        let kl_mean = g.mean(kl_rows);
        let recon_mean = g.mean(recon_rows);
        Ok(ElboNodes {
            loss,
            kl_mean,
            recon_mean,
        })
    }

    /// Negated ELBO of a batch (reconstruction + weighted KL,
    /// batch-averaged).
    pub fn elbo_loss(
        &self,
        pairs: &[(Vec<f64>, Vec<f64>)],
        kl_weight: f64,
        rng: &mut Rng,
    ) -> Result<f64> {
        let (o1, ot) = pairs_to_tensors(pairs, self.obs_dim)?;
        let eps = Tensor::new(
            pairs.len(),
            self.latent_dim,
            rng.normal_vec(pairs.len() * self.latent_dim),
        );
        let mut g = Graph::new();
        let nodes = self.elbo_graph(&mut g, &o1, &ot, &eps, kl_weight, false)?;
        Ok(g.value(nodes.loss)[0])
    }
}

/// Reparameterized draw z = mu + exp(log_var/2)·eps with eps ~ N(0, I).
pub fn sample_context(post: &ContextPosterior, rng: &mut Rng) -> ContextVariable {
    let eps: Vec<f64> = rng.normal_vec(post.mean.len());
    sample_context_with_eps(post, &eps)
}

/// Same draw with caller-provided noise (deterministic).
pub fn sample_context_with_eps(post: &ContextPosterior, eps: &[f64]) -> ContextVariable {
    let z = post
        .mean
        .iter()
        .zip(&post.log_var)
        .zip(eps)
        .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
        .collect();
    ContextVariable { z }
}

/// Posterior mean as the context (the planning-time default).
pub fn mean_context(post: &ContextPosterior) -> ContextVariable {
    ContextVariable {
        z: post.mean.clone(),
    }
}

fn pairs_to_tensors(pairs: &[(Vec<f64>, Vec<f64>)], obs_dim: usize) -> Result<(Tensor, Tensor)> {
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    for (s, t) in pairs {
        if s.len() != obs_dim || t.len() != obs_dim {
            return Err(Error::ShapeMismatch {
                op: "context.batch",
                lhs: vec![s.len(), t.len()],
                rhs: vec![obs_dim, obs_dim],
            });
        }
    }
    let starts: Vec<Vec<f64>> = pairs.iter().map(|(s, _)| s.clone()).collect();
    let goals: Vec<Vec<f64>> = pairs.iter().map(|(_, t)| t.clone()).collect();
    Ok((Tensor::from_rows(&starts), Tensor::from_rows(&goals)))
}

/// Per-epoch record of the context training curve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContextEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub kl: f64,
    pub recon: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Weight of the KL term in the loss. On unit-scale synthetic
    /// observations the unweighted bound prefers a collapsed posterior
    /// (separating K tasks costs ln K nats of KL but saves less than that
    /// in reconstruction), so the default keeps the bottleneck loose enough
    /// for the context to carry task identity.
    pub kl_weight: f64,
}

impl Default for ContextTrainConfig {
    fn default() -> Self {
        ContextTrainConfig {
            epochs: 60,
            batch_size: 64,
            lr: 1e-3,
            kl_weight: 0.1,
        }
    }
}

/// Trains the VAE on the (start, goal) pairs of a dataset. On divergence the
/// parameters roll back to the last finite epoch. Returns the training curve.
pub fn train_context(
    net: &mut ContextNet,
    dataset: &[Trajectory],
    cfg: &ContextTrainConfig,
    rng: &mut Rng,
) -> Result<Vec<ContextEpoch>> {
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("empty dataset".into()));
    }
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = dataset
        .iter()
        .map(|t| {
            (
                t.observations.first().unwrap().clone(),
                t.observations.last().unwrap().clone(),
            )
        })
        .collect();

    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), &net.store);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut last_finite = net.store.clone();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut epoch_kl = 0.0;
        let mut epoch_recon = 0.0;
        let mut batches = 0usize;

        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<(Vec<f64>, Vec<f64>)> =
                chunk.iter().map(|&i| pairs[i].clone()).collect();
            let (o1, ot) = pairs_to_tensors(&batch, net.obs_dim)?;
            let eps = Tensor::new(
                batch.len(),
                net.latent_dim,
                rng.normal_vec(batch.len() * net.latent_dim),
            );
            let mut g = Graph::new();
            let nodes = net.elbo_graph(&mut g, &o1, &ot, &eps, cfg.kl_weight, true)?;
            let loss = g.value(nodes.loss)[0];
            let kl = g.value(nodes.kl_mean)[0];
            debug_assert!(kl >= -1e-12, "KL must be nonnegative, got {kl}");
            if !loss.is_finite() {
                net.store = last_finite;
                return Err(Error::NonFinite {
                    stage: "context training",
                });
            }
            g.backward(nodes.loss)?;
            g.write_grads(&mut net.store, net.store_id);
            adam.step(&mut net.store);
            epoch_loss += loss;
            epoch_kl += kl;
            epoch_recon += g.value(nodes.recon_mean)[0];
            batches += 1;
        }

        last_finite = net.store.clone();
        curve.push(ContextEpoch {
            epoch,
            loss: epoch_loss / batches as f64,
            kl: epoch_kl / batches as f64,
            recon: epoch_recon / batches as f64,
        });
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskworld::{World, WorldConfig};

    fn tiny_world(sigma: f64) -> World {
        World::generate(WorldConfig {
            num_tasks: 2,
            steps_min: 3,
            steps_max: 4,
            action_vocab: 8,
            obs_dim: 10,
            noise_sigma: sigma,
            interchangeable_fraction: 0.5,
            seed: 21,
        })
        .unwrap()
    }

    #[test]
    fn zero_init_head_gives_zero_mean() {
        let mut rng = Rng::seed_from(1);
        let net = ContextNet::new(10, 4, 16, &mut rng);
        let o: Vec<f64> = rng.normal_vec(10);
        let post = net.encode(&o, &o).unwrap();
        assert!(post.mean.iter().all(|&m| m == 0.0));
        assert!(post.log_var.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_is_deterministic() {
        let mut rng = Rng::seed_from(2);
        let net = ContextNet::new(10, 4, 16, &mut rng);
        let a: Vec<f64> = rng.normal_vec(10);
        let b: Vec<f64> = rng.normal_vec(10);
        assert_eq!(net.encode(&a, &b).unwrap(), net.encode(&a, &b).unwrap());
    }

    #[test]
    fn encode_rejects_wrong_dim() {
        let mut rng = Rng::seed_from(2);
        let net = ContextNet::new(10, 4, 16, &mut rng);
        assert!(net.encode(&[0.0; 7], &[0.0; 10]).is_err());
    }

    #[test]
    fn sample_at_log_var_floor_is_nearly_mean() {
        let post = ContextPosterior {
            mean: vec![0.3, -0.7, 1.1],
            log_var: vec![LOG_VAR_MIN; 3],
        };
        let mut rng = Rng::seed_from(3);
        let z = sample_context(&post, &mut rng);
        for (zi, mi) in z.z.iter().zip(&post.mean) {
            assert!((zi - mi).abs() < 3.0 * (-5.0f64).exp(), "{zi} vs {mi}");
        }
    }

    #[test]
    fn sample_with_fixed_eps_is_exact() {
        let post = ContextPosterior {
            mean: vec![1.0, -2.0],
            log_var: vec![0.4, -0.8],
        };
        let eps = vec![0.5, -1.5];
        let z = sample_context_with_eps(&post, &eps);
        for i in 0..2 {
            let expected = post.mean[i] + (0.5 * post.log_var[i]).exp() * eps[i];
            assert_eq!(z.z[i], expected);
        }
    }

    #[test]
    fn standard_posterior_samples_have_unit_moments() {
        let d = 4;
        let post = ContextPosterior {
            mean: vec![0.0; d],
            log_var: vec![0.0; d],
        };
        let mut rng = Rng::seed_from(4);
        let n = 100_000;
        let mut sums = vec![0.0; d];
        let mut sqs = vec![0.0; d];
        for _ in 0..n {
            let z = sample_context(&post, &mut rng);
            for i in 0..d {
                sums[i] += z.z[i];
                sqs[i] += z.z[i] * z.z[i];
            }
        }
        for i in 0..d {
            let mean = sums[i] / n as f64;
            let var = sqs[i] / n as f64 - mean * mean;
            assert!(mean.abs() < 0.02, "mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "var {var}");
        }
    }

    #[test]
    fn kl_closed_form_cases() {
        assert_eq!(gaussian_kl(&[0.0], &[0.0]), 0.0);
        assert!((gaussian_kl(&[1.0], &[0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        // E_q[log q - log p] over 10^6 draws vs the closed form, within 1%.
        let mean = [0.7, -0.4, 0.2];
        let log_var = [0.4, -0.6, 0.1];
        let closed = gaussian_kl(&mean, &log_var);
        let mut rng = Rng::seed_from(5);
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let mut log_q = 0.0;
            let mut log_p = 0.0;
            for i in 0..mean.len() {
                let sigma = (0.5 * log_var[i]).exp();
                let z = mean[i] + sigma * rng.normal();
                // log N(z; mu, sigma^2) up to the shared -0.5 ln(2π) per dim,
                // which cancels in the difference.
                log_q += -0.5 * log_var[i] - 0.5 * (z - mean[i]).powi(2) / sigma.powi(2);
                log_p += -0.5 * z * z;
            }
            acc += log_q - log_p;
        }
        let mc = acc / n as f64;
        assert!(
            (mc - closed).abs() / closed.abs() < 0.01,
            "mc {mc} vs closed {closed}"
        );
    }

    #[test]
    fn kl_is_nonnegative_for_random_posteriors() {
        let mut rng = Rng::seed_from(6);
        for _ in 0..1000 {
            let mean: Vec<f64> = rng.normal_vec(5);
            let log_var: Vec<f64> = rng.normal_vec(5).iter().map(|v| v * 2.0).collect();
            assert!(gaussian_kl(&mean, &log_var) >= 0.0);
        }
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let world = tiny_world(0.1);
        let mut rng = Rng::seed_from(7);
        let data = world.sample_dataset(1, &mut rng);
        let mut net = ContextNet::new(10, 4, 16, &mut rng);
        let before: Vec<Vec<f64>> = net.store.iter().map(|(_, t)| t.data.clone()).collect();
        let cfg = ContextTrainConfig {
            epochs: 1,
            batch_size: 4,
            lr: 0.0,
            ..Default::default()
        };
        train_context(&mut net, &data[..1], &cfg, &mut rng).unwrap();
        let after: Vec<Vec<f64>> = net.store.iter().map(|(_, t)| t.data.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn training_reduces_loss() {
        let world = tiny_world(0.05);
        let mut rng = Rng::seed_from(8);
        let data = world.sample_dataset(40, &mut rng);
        let mut net = ContextNet::new(10, 4, 24, &mut rng);
        let cfg = ContextTrainConfig {
            epochs: 50,
            batch_size: 16,
            lr: 1e-3,
            ..Default::default()
        };
        let curve = train_context(&mut net, &data, &cfg, &mut rng).unwrap();
        assert_eq!(curve.len(), 50);
        assert!(
            curve.last().unwrap().loss < curve[0].loss,
            "loss {} -> {}",
            curve[0].loss,
            curve.last().unwrap().loss
        );
        assert!(curve.iter().all(|e| e.kl >= 0.0));
    }

    #[test]
    fn sigma_zero_goal_reconstruction_becomes_small() {
        // Noise-free world: decoding from the posterior mean must recover
        // the goal observation of every seen task almost exactly.
        let world = tiny_world(0.0);
        let mut rng = Rng::seed_from(9);
        let data = world.sample_dataset(60, &mut rng);
        let mut net = ContextNet::new(10, 6, 32, &mut rng);
        let cfg = ContextTrainConfig {
            epochs: 200,
            batch_size: 32,
            lr: 2e-3,
            ..Default::default()
        };
        let curve = train_context(&mut net, &data, &cfg, &mut rng).unwrap();
        assert!(curve.last().unwrap().recon < curve[0].recon);
        for task in &world.tasks {
            let start = world.clean_observation(task.task_id, &[]);
            let goal = world.goal_observation(task);
            let post = net.encode(&start, &goal).unwrap();
            let (_, goal_hat) = net.reconstruct(&post.mean).unwrap();
            let err: f64 = goal
                .iter()
                .zip(&goal_hat)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let norm: f64 = goal.iter().map(|v| v * v).sum();
            assert!(
                err < 0.05 * norm,
                "task {}: goal reconstruction error {err:.4} vs norm {norm:.4}",
                task.task_id
            );
        }
    }

    #[test]
    fn elbo_grads_match_finite_differences() {
        use crate::autodiff::{finite_difference_grads, grad_rel_error};
        let mut rng = Rng::seed_from(10);
        let mut net = ContextNet::new(6, 3, 8, &mut rng);
        // Perturb the zero heads so gradients are generic.
        for id in net.store.ids().collect::<Vec<_>>() {
            let t = net.store.get_mut(id);
            for v in t.data.iter_mut() {
                *v += 0.05 * rng.normal();
            }
        }
        let o1 = Tensor::from_rows(&[rng.normal_vec(6), rng.normal_vec(6)]);
        let ot = Tensor::from_rows(&[rng.normal_vec(6), rng.normal_vec(6)]);
        let eps = Tensor::new(2, 3, rng.normal_vec(6));

        let mut g = Graph::new();
        let nodes = net.elbo_graph(&mut g, &o1, &ot, &eps, 0.7, true).unwrap();
        g.backward(nodes.loss).unwrap();
        g.write_grads(&mut net.store, net.store_id);
        let analytic: Vec<Vec<f64>> = net
            .store
            .ids()
            .map(|id| net.store.get(id).grad.clone().unwrap())
            .collect();

        let mut store = net.store.clone();
        let numeric = finite_difference_grads(&mut store, 1e-5, |p| {
            let probe = net.with_params(p.clone());
            let mut g = Graph::new();
            let nodes = probe.elbo_graph(&mut g, &o1, &ot, &eps, 0.7, false).unwrap();
            g.value(nodes.loss)[0]
        });
        for (a, n) in analytic.iter().zip(&numeric) {
            for (&x, &y) in a.iter().zip(n) {
                assert!(grad_rel_error(x, y) < 1e-4, "{x} vs {y}");
            }
        }
    }
}
