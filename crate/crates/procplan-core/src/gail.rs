//! Adversarial training of discriminator, transition model, and policy.
//!
//! Each batch runs three updates in order: the discriminator ascends its
//! separation objective, the transition model descends an adversarial +
//! state-distance loss through the rolled-out trajectory, and the policy
//! takes an importance-weighted off-policy gradient step on discounted
//! discriminator rewards (with an entropy bonus), sampling actions from the
//! cloned behavior policy.

use serde::{Deserialize, Serialize};

use crate::autodiff::{
    next_store_id, sigmoid, softmax_row, softplus, Adam, AdamConfig, Graph, NodeId, Params,
    StoreId, Tensor,
};
use crate::context::{sample_context_with_eps, ContextNet};
use crate::error::{Error, Result};
use crate::genmodel::{BehaviorPolicy, GenStack, LatentState, ModelDims};
use crate::nn::{one_hot_rows, Init, Linear};
use crate::rng::Rng;
use crate::taskworld::Trajectory;

// ── Discriminator ───────────────────────────────────────────────────

/// Two-layer classifier over `[state; action-representation]` pairs. A fresh
/// discriminator outputs 0.5 everywhere (zero-initialized head).
#[derive(Clone)]
pub struct Discriminator {
    pub dims: ModelDims,
    pub store: Params,
    pub store_id: StoreId,
    l_in: Linear,
    l_out: Linear,
}

impl Discriminator {
    /// Same layout with a replacement parameter store.
    pub fn with_params(&self, store: Params) -> Self {
        Discriminator {
            store,
            ..self.clone()
        }
    }

    pub fn new(dims: ModelDims, rng: &mut Rng) -> Self {
        let mut store = Params::new();
        let in_dim = dims.state_dim + dims.action_vocab;
        let l_in = Linear::new(&mut store, "disc_in", in_dim, dims.hidden_dim, Init::Scaled, rng);
        let l_out = Linear::new(&mut store, "disc_out", dims.hidden_dim, 1, Init::Zero, rng);
        Discriminator {
            dims,
            store,
            store_id: next_store_id(),
            l_in,
            l_out,
        }
    }

    pub(crate) fn logit_nodes(
        &self,
        g: &mut Graph,
        s: NodeId,
        a_repr: NodeId,
        live: bool,
    ) -> Result<NodeId> {
        let inp = g.concat_cols(s, a_repr)?;
        let h = self.l_in.forward_with(g, &self.store, self.store_id, inp, live)?;
        let h = g.tanh(h);
        self.l_out.forward_with(g, &self.store, self.store_id, h, live)
    }

    /// Raw logits for `[rows, state]` × `[rows, vocab]` batches.
    pub fn logits_eval(&self, states: &[f64], a_reprs: &[f64], rows: usize) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let s = g.constant_data(rows, self.dims.state_dim, states.to_vec());
        let a = g.constant_data(rows, self.dims.action_vocab, a_reprs.to_vec());
        let logit = self.logit_nodes(&mut g, s, a, false)?;
        Ok(g.value(logit).to_vec())
    }

    /// D(s, a) in (0, 1).
    pub fn forward(&self, s: &LatentState, a_repr: &[f64]) -> Result<f64> {
        let logit = self.logits_eval(&s.s, a_repr, 1)?[0];
        Ok(sigmoid(logit))
    }

    /// Local reward r(s, a) = log D(s, a), computed stably from the logit.
    pub fn reward(&self, s: &LatentState, a_repr: &[f64]) -> Result<f64> {
        let logit = self.logits_eval(&s.s, a_repr, 1)?[0];
        Ok(-softplus(-logit))
    }
}

// ── Configuration and reporting ─────────────────────────────────────

/// Which loss components to disable (the ablation grid).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    /// Drop the accumulated-reward policy gradient; the policy trains by
    /// supervised sequence mapping instead.
    pub no_reward: bool,
    /// Drop the discriminator entirely (no updates, no adversarial terms).
    pub no_disc: bool,
    /// Skip hindsight relabeling when the dataset is built (orchestration
    /// level; the loss formulas never change).
    pub no_her: bool,
}

impl AblationFlags {
    pub fn parse(list: &str) -> Result<Self> {
        let mut flags = AblationFlags::default();
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "no_reward" => flags.no_reward = true,
                "no_disc" => flags.no_disc = true,
                "no_her" => flags.no_her = true,
                other => {
                    return Err(Error::InvalidConfig(format!("unknown ablation `{other}`")));
                }
            }
        }
        Ok(flags)
    }

    /// The supervised-seq2seq configuration from the ablation grid.
    pub fn without_discriminator() -> Self {
        AblationFlags {
            no_reward: true,
            no_disc: true,
            no_her: false,
        }
    }
}

impl std::fmt::Display for AblationFlags {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut parts = Vec::new();
        if self.no_reward {
            parts.push("no_reward");
        }
        if self.no_disc {
            parts.push("no_disc");
        }
        if self.no_her {
            parts.push("no_her");
        }
        if parts.is_empty() {
            write!(f, "none")
        } else {
            write!(f, "{}", parts.join(","))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_disc: f64,
    pub lr_transition: f64,
    pub lr_policy: f64,
    /// Entropy-bonus weight λ.
    pub entropy_weight: f64,
    /// Discount γ of the Monte-Carlo return.
    pub discount: f64,
    pub is_clip_lo: f64,
    pub is_clip_hi: f64,
    /// Weight of the squared-distance term in the transition loss.
    pub distance_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 80,
            batch_size: 32,
            lr_disc: 1e-3,
            lr_transition: 3e-3,
            lr_policy: 1e-3,
            entropy_weight: 0.01,
            discount: 0.99,
            is_clip_lo: 0.1,
            is_clip_hi: 10.0,
            distance_weight: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.entropy_weight < 0.0 {
            return Err(Error::InvalidConfig("entropy_weight must be >= 0".into()));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::InvalidConfig("discount must lie in (0, 1]".into()));
        }
        if !(0.0 < self.is_clip_lo && self.is_clip_lo <= 1.0 && 1.0 <= self.is_clip_hi) {
            return Err(Error::InvalidConfig(
                "IS clip bounds must satisfy 0 < lo <= 1 <= hi".into(),
            ));
        }
        if self.distance_weight < 0.0 {
            return Err(Error::InvalidConfig("distance_weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// One epoch of training telemetry.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_t: f64,
    pub loss_pi: f64,
    pub mean_reward: f64,
    pub entropy: f64,
    pub grad_norm_d: f64,
    pub grad_norm_t: f64,
    pub grad_norm_pi: f64,
    pub ratio_clamp_events: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Set when training aborted at this epoch with the last finite state.
    pub diverged_at: Option<usize>,
}

impl TrainReport {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("epoch record serializes"));
            out.push('\n');
        }
        out
    }
}

// ── Batches ─────────────────────────────────────────────────────────

/// Same-length expert trajectories prepared for one update: per-step
/// observation and one-hot tensors plus the sampled context variables.
pub struct TrajBatch {
    pub t_len: usize,
    pub batch: usize,
    /// `[t] -> [batch, obs]` expert states.
    pub obs: Vec<Tensor>,
    /// `[t] -> [batch]` expert action ids.
    pub actions: Vec<Vec<usize>>,
    /// `[t] -> [batch, vocab]` one-hot expert actions.
    pub onehots: Vec<Tensor>,
    /// `[batch, latent]` sampled context variables.
    pub z: Tensor,
}

impl TrajBatch {
    pub fn build(
        dataset: &[Trajectory],
        indices: &[usize],
        context: &ContextNet,
        dims: ModelDims,
        rng: &mut Rng,
    ) -> Result<TrajBatch> {
        let batch = indices.len();
        if batch == 0 {
            return Err(Error::InvalidConfig("empty trajectory batch".into()));
        }
        let t_len = dataset[indices[0]].len();
        let mut obs = Vec::with_capacity(t_len);
        let mut actions = Vec::with_capacity(t_len);
        let mut onehots = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let rows: Vec<Vec<f64>> = indices
                .iter()
                .map(|&i| dataset[i].observations[t].clone())
                .collect();
            let acts: Vec<usize> = indices.iter().map(|&i| dataset[i].actions[t]).collect();
            obs.push(Tensor::from_rows(&rows));
            onehots.push(one_hot_rows(&acts, dims.action_vocab));
            actions.push(acts);
        }

        // Sampled context per trajectory.
        let mut z_rows = Vec::with_capacity(batch);
        for &i in indices {
            let traj = &dataset[i];
            let post = context.encode(
                traj.observations.first().unwrap(),
                traj.observations.last().unwrap(),
            )?;
            let eps: Vec<f64> = rng.normal_vec(post.dim());
            z_rows.push(sample_context_with_eps(&post, &eps).z);
        }
        let z = Tensor::from_rows(&z_rows);

        Ok(TrajBatch {
            t_len,
            batch,
            obs,
            actions,
            onehots,
            z,
        })
    }

    /// Expert (state, one-hot action) rows flattened across time.
    pub fn expert_pairs(&self) -> PairBatch {
        let mut srows = Vec::with_capacity(self.batch * self.t_len);
        let mut arows = Vec::with_capacity(self.batch * self.t_len);
        for t in 0..self.t_len {
            for b in 0..self.batch {
                let d = self.obs[t].cols;
                srows.push(self.obs[t].data[b * d..(b + 1) * d].to_vec());
                let m = self.onehots[t].cols;
                arows.push(self.onehots[t].data[b * m..(b + 1) * m].to_vec());
            }
        }
        PairBatch::new(Tensor::from_rows(&srows), Tensor::from_rows(&arows))
    }
}

/// Flattened (state, action-representation) rows for a discriminator batch.
#[derive(Clone, Debug)]
pub struct PairBatch {
    pub states: Tensor,
    pub actions: Tensor,
}

impl PairBatch {
    pub fn new(states: Tensor, actions: Tensor) -> Self {
        assert_eq!(states.rows, actions.rows);
        PairBatch { states, actions }
    }
}

/// Per-step arrays of a value-only sampled rollout from the zero convention.
pub struct SampledRollout {
    /// `[t][batch * state_dim]`
    pub states: Vec<Vec<f64>>,
    /// `[t][batch]` chosen action ids.
    pub actions: Vec<Vec<usize>>,
    /// `[t][batch * vocab]` policy probabilities at each state.
    pub pi_probs: Vec<Vec<f64>>,
    /// `[t][batch * vocab]` probabilities of the sampling policy (equals
    /// `pi_probs` when actions come from the policy itself).
    pub sample_probs: Vec<Vec<f64>>,
    /// Exterior reparameterization draws used for `states[t]`; replaying
    /// them in a state graph reproduces this rollout differentiably.
    pub eps: Option<Vec<Tensor>>,
}

/// Rolls the model forward sampling discrete actions, which feed back into
/// the transition as one-hots. Actions come from the behavior policy when
/// one is given, otherwise from the acting policy itself.
pub fn sampled_rollout(
    stack: &GenStack,
    z: &Tensor,
    t_len: usize,
    behavior: Option<&BehaviorPolicy>,
    rng: &mut Rng,
) -> Result<SampledRollout> {
    let dims = stack.dims();
    let m = dims.action_vocab;
    let b_rows = z.rows;
    let is_ext = matches!(stack, GenStack::Ext(_));

    let mut states = Vec::with_capacity(t_len);
    let mut actions = Vec::with_capacity(t_len);
    let mut pi_probs = Vec::with_capacity(t_len);
    let mut sample_probs = Vec::with_capacity(t_len);

    let zeros_s = vec![0.0; b_rows * dims.state_dim];
    let zeros_a = vec![0.0; b_rows * m];
    let mut eps_log: Vec<Tensor> = Vec::with_capacity(t_len);
    let draw_eps = |rng: &mut Rng, eps_log: &mut Vec<Tensor>| -> Option<Vec<f64>> {
        if is_ext {
            let e = rng.normal_vec(b_rows * dims.state_dim);
            eps_log.push(Tensor::new(b_rows, dims.state_dim, e.clone()));
            Some(e)
        } else {
            None
        }
    };
    let first_eps = draw_eps(rng, &mut eps_log);
    let mut cur = stack.next_states_eval(&zeros_s, &zeros_a, b_rows, z, first_eps.as_deref())?;
    for t in 0..t_len {
        let logits = stack.policy_logits_eval(&cur, b_rows)?;
        let mut pi = vec![0.0; b_rows * m];
        for b in 0..b_rows {
            softmax_row(&logits[b * m..(b + 1) * m], &mut pi[b * m..(b + 1) * m]);
        }
        let sampler = match behavior {
            Some(beta) => beta.probs_eval(&cur, b_rows)?,
            None => pi.clone(),
        };
        let acts: Vec<usize> = (0..b_rows)
            .map(|b| rng.weighted(&sampler[b * m..(b + 1) * m]))
            .collect();
        states.push(cur.clone());
        pi_probs.push(pi);
        sample_probs.push(sampler);
        if t + 1 < t_len {
            let mut onehot = vec![0.0; b_rows * m];
            for (b, &a) in acts.iter().enumerate() {
                onehot[b * m + a] = 1.0;
            }
            let eps = draw_eps(rng, &mut eps_log);
            cur = stack.next_states_eval(&cur, &onehot, b_rows, z, eps.as_deref())?;
        }
        actions.push(acts);
    }
    Ok(SampledRollout {
        states,
        actions,
        pi_probs,
        sample_probs,
        eps: is_ext.then_some(eps_log),
    })
}

/// Flattens a sampled rollout into (state, one-hot action) rows: the
/// generated side of the discriminator batch.
pub fn rollout_pairs(rollout: &SampledRollout, dims: ModelDims) -> PairBatch {
    let t_len = rollout.states.len();
    let b_rows = if t_len == 0 {
        0
    } else {
        rollout.states[0].len() / dims.state_dim
    };
    let mut srows = Vec::with_capacity(b_rows * t_len);
    let mut acts = Vec::with_capacity(b_rows * t_len);
    for t in 0..t_len {
        for b in 0..b_rows {
            srows.push(rollout.states[t][b * dims.state_dim..(b + 1) * dims.state_dim].to_vec());
            acts.push(rollout.actions[t][b]);
        }
    }
    PairBatch::new(Tensor::from_rows(&srows), one_hot_rows(&acts, dims.action_vocab))
}

/// Rolls the current policy forward and returns the generated discriminator
/// pairs (convenience over [`sampled_rollout`] + [`rollout_pairs`]).
pub fn generated_pairs(stack: &GenStack, batch: &TrajBatch, rng: &mut Rng) -> Result<PairBatch> {
    let rollout = sampled_rollout(stack, &batch.z, batch.t_len, None, rng)?;
    Ok(rollout_pairs(&rollout, stack.dims()))
}

// ── Operation: discriminator update ─────────────────────────────────

/// The separation objective E_expert[log D] + E_generated[log(1−D)].
pub fn disc_objective(
    disc: &Discriminator,
    expert: &PairBatch,
    generated: &PairBatch,
) -> Result<f64> {
    let el = disc.logits_eval(&expert.states.data, &expert.actions.data, expert.states.rows)?;
    let gl = disc.logits_eval(
        &generated.states.data,
        &generated.actions.data,
        generated.states.rows,
    )?;
    let e_term: f64 = el.iter().map(|&x| -softplus(-x)).sum::<f64>() / el.len() as f64;
    let g_term: f64 = gl.iter().map(|&x| -softplus(x)).sum::<f64>() / gl.len() as f64;
    Ok(e_term + g_term)
}

#[derive(Clone, Copy, Debug)]
pub struct DiscStepStats {
    pub loss: f64,
    pub grad_norm: f64,
}

/// One ascent step on the separation objective (descent on its negation).
pub fn disc_update(
    disc: &mut Discriminator,
    adam: &mut Adam,
    expert: &PairBatch,
    generated: &PairBatch,
) -> Result<DiscStepStats> {
    if expert.states.rows == 0 || generated.states.rows == 0 {
        return Err(Error::InvalidConfig("empty discriminator batch".into()));
    }
    let mut g = Graph::new();
    let es = g.constant(&expert.states);
    let ea = g.constant(&expert.actions);
    let gs = g.constant(&generated.states);
    let ga = g.constant(&generated.actions);
    let e_logit = disc.logit_nodes(&mut g, es, ea, true)?;
    let g_logit = disc.logit_nodes(&mut g, gs, ga, true)?;
    // loss = E[softplus(−x_e)] + E[softplus(x_g)] = −objective
    let neg_e = g.scale(e_logit, -1.0);
    let sp_e = g.softplus(neg_e);
    let m_e = g.mean(sp_e);
    let sp_g = g.softplus(g_logit);
    let m_g = g.mean(sp_g);
    let loss = g.add(m_e, m_g)?;
    let loss_v = g.value(loss)[0];
    if !loss_v.is_finite() {
        return Err(Error::NonFinite {
            stage: "discriminator update",
        });
    }
    g.backward(loss)?;
    g.write_grads(&mut disc.store, disc.store_id);
    let grad_norm = disc.store.grad_norm();
    adam.step(&mut disc.store);
    Ok(DiscStepStats {
        loss: loss_v,
        grad_norm,
    })
}

// ── Operation: transition update ────────────────────────────────────

#[derive(Clone, Copy, Debug)]
pub struct TransitionStepStats {
    pub loss: f64,
    pub adversarial: f64,
    pub distance: f64,
    pub grad_norm: f64,
}

/// Teacher-forced one-step predictions: state nodes where step t is the
/// transition applied to the *expert* state and action of step t−1 (step 0
/// applies the zero-start convention). These are the inputs the planner
/// queries at inference time, so the distance term must be fit on them
/// rather than on the model's own recursive chain, which otherwise learns
/// chain-internal shortcuts that do not transfer to real observations.
pub(crate) fn teacher_forced_nodes(
    stack: &GenStack,
    g: &mut Graph,
    batch: &TrajBatch,
    live: bool,
    rng: &mut Rng,
) -> Result<Vec<NodeId>> {
    let dims = stack.dims();
    let zn = g.constant(&batch.z);
    let mut out = Vec::with_capacity(batch.t_len);
    match stack {
        GenStack::Int(cell) => {
            for t in 0..batch.t_len {
                let prev = if t == 0 {
                    g.constant_data(
                        batch.batch,
                        dims.state_dim,
                        vec![0.0; batch.batch * dims.state_dim],
                    )
                } else {
                    g.constant(&batch.obs[t - 1])
                };
                out.push(cell.step_nodes(g, prev, zn, live, false)?.next_state);
            }
        }
        GenStack::Ext(model) => {
            for t in 0..batch.t_len {
                let (prev_s, prev_a) = if t == 0 {
                    (
                        g.constant_data(
                            batch.batch,
                            dims.state_dim,
                            vec![0.0; batch.batch * dims.state_dim],
                        ),
                        g.constant_data(
                            batch.batch,
                            dims.action_vocab,
                            vec![0.0; batch.batch * dims.action_vocab],
                        ),
                    )
                } else {
                    (
                        g.constant(&batch.obs[t - 1]),
                        g.constant(&batch.onehots[t - 1]),
                    )
                };
                let eps = Tensor::new(
                    batch.batch,
                    dims.state_dim,
                    rng.normal_vec(batch.batch * dims.state_dim),
                );
                let eps_n = g.constant(&eps);
                out.push(
                    model
                        .transition_nodes(g, prev_s, prev_a, zn, Some(eps_n), live)?
                        .state,
                );
            }
        }
    }
    Ok(out)
}

/// One descent step on the transition loss. The adversarial term follows
/// the policy-sampled rollout (replayed from `gen` so gradients flow through
/// the exact chain the discriminator saw) and pairs its states with the
/// time-aligned *expert* actions. The distance term averages two views of
/// the expert trajectory: teacher-forced one-step predictions (accuracy on
/// the real observation manifold, which the planner queries directly) and
/// the model's recursive chain under expert actions (multi-step
/// self-consistency, which rollouts need).
#[allow(clippy::too_many_arguments)]
pub fn transition_update(
    stack: &mut GenStack,
    disc: &Discriminator,
    batch: &TrajBatch,
    gen: &SampledRollout,
    cfg: &TrainConfig,
    ablations: AblationFlags,
    adam: &mut Adam,
    rng: &mut Rng,
) -> Result<TransitionStepStats> {
    let is_ext = matches!(stack, GenStack::Ext(_));
    let mut g = Graph::new();
    let expert_forced = teacher_forced_nodes(stack, &mut g, batch, true, rng)?;
    let expert_chain = if is_ext {
        let eps: Vec<Tensor> = (0..batch.t_len)
            .map(|_| {
                Tensor::new(
                    batch.batch,
                    stack.dims().state_dim,
                    rng.normal_vec(batch.batch * stack.dims().state_dim),
                )
            })
            .collect();
        stack.rollout_state_graph(&mut g, &batch.z, &batch.actions, Some(&eps), true)?
    } else {
        stack.rollout_state_graph(&mut g, &batch.z, &batch.actions, None, true)?
    };
    let policy_chain = if ablations.no_disc {
        Vec::new()
    } else {
        stack.rollout_state_graph(&mut g, &batch.z, &gen.actions, gen.eps.as_deref(), true)?
    };

    let mut adv_acc: Option<NodeId> = None;
    let mut dist_acc: Option<NodeId> = None;
    for t in 0..batch.t_len {
        if !ablations.no_disc {
            let ea = g.constant(&batch.onehots[t]);
            let logit = disc.logit_nodes(&mut g, policy_chain[t], ea, false)?;
            // log(1 − D) = −softplus(logit)
            let sp = g.softplus(logit);
            let m = g.mean(sp);
            let neg = g.scale(m, -1.0);
            adv_acc = Some(match adv_acc {
                Some(acc) => g.add(acc, neg)?,
                None => neg,
            });
        }
        let eo = g.constant(&batch.obs[t]);
        let d1 = g.sub(expert_forced[t], eo)?;
        let sq1 = g.mul(d1, d1)?;
        let r1 = g.row_sum(sq1);
        let d2 = g.sub(expert_chain[t], eo)?;
        let sq2 = g.mul(d2, d2)?;
        let r2 = g.row_sum(sq2);
        let both = g.add(r1, r2)?;
        let both = g.scale(both, 0.5);
        let m = g.mean(both);
        dist_acc = Some(match dist_acc {
            Some(acc) => g.add(acc, m)?,
            None => m,
        });
    }

    let inv_t = 1.0 / batch.t_len as f64;
    let dist_mean = g.scale(dist_acc.expect("t_len >= 1"), inv_t);
    let dist_v = g.value(dist_mean)[0];
    let weighted_dist = g.scale(dist_mean, cfg.distance_weight);
    let (loss, adv_v) = match adv_acc {
        Some(adv) => {
            let adv_mean = g.scale(adv, inv_t);
            let v = g.value(adv_mean)[0];
            (g.add(adv_mean, weighted_dist)?, v)
        }
        None => (weighted_dist, 0.0),
    };
    let loss_v = g.value(loss)[0];
    if !loss_v.is_finite() {
        return Err(Error::NonFinite {
            stage: "transition update",
        });
    }
    g.backward(loss)?;
    let (trans, trans_id) = stack.trans_params_mut();
    g.write_grads(trans, trans_id);
    let grad_norm = trans.grad_norm();
    adam.step(trans);
    Ok(TransitionStepStats {
        loss: loss_v,
        adversarial: adv_v,
        distance: dist_v,
        grad_norm,
    })
}

// ── Operation: policy update ────────────────────────────────────────

/// Discounted Monte-Carlo returns: Q_t = r_t + γ Q_{t+1}, Q_{T+1} = 0.
pub fn compute_returns(rewards: &[Vec<f64>], discount: f64) -> Vec<Vec<f64>> {
    let t_len = rewards.len();
    if t_len == 0 {
        return Vec::new();
    }
    let batch = rewards[0].len();
    let mut q = vec![vec![0.0; batch]; t_len];
    for t in (0..t_len).rev() {
        for b in 0..batch {
            let future = if t + 1 < t_len { q[t + 1][b] } else { 0.0 };
            q[t][b] = rewards[t][b] + discount * future;
        }
    }
    q
}

/// Per-pair importance ratios π(a|s)/β(a|s): tiny β is clamped (counted),
/// then the ratio is clipped into `[lo, hi]`.
pub fn importance_ratios(pi: &[f64], beta: &[f64], lo: f64, hi: f64) -> (Vec<f64>, usize) {
    debug_assert_eq!(pi.len(), beta.len());
    let mut clamped = 0usize;
    let ratios = pi
        .iter()
        .zip(beta)
        .map(|(&p, &b)| {
            let b = if b < 1e-8 {
                clamped += 1;
                1e-8
            } else {
                b
            };
            (p / b).clamp(lo, hi)
        })
        .collect();
    (ratios, clamped)
}

#[derive(Clone, Copy, Debug)]
pub struct PolicyStepStats {
    pub loss: f64,
    pub mean_reward: f64,
    pub entropy: f64,
    pub grad_norm: f64,
    pub ratio_clamp_events: usize,
}

/// One policy step. The supervised sequence-mapping cross-entropy (expert
/// actions along the rolled-out states) is always part of the loss; unless
/// `no_reward` is set, the importance-weighted policy gradient on discounted
/// log-D returns over a behavior-sampled model rollout is added, together
/// with the entropy bonus.
#[allow(clippy::too_many_arguments)]
pub fn policy_update(
    stack: &mut GenStack,
    disc: &Discriminator,
    behavior: &BehaviorPolicy,
    batch: &TrajBatch,
    gen: &SampledRollout,
    cfg: &TrainConfig,
    ablations: AblationFlags,
    adam: &mut Adam,
    rng: &mut Rng,
) -> Result<PolicyStepStats> {
    let dims = stack.dims();
    let m = dims.action_vocab;
    let b_rows = batch.batch;
    let t_len = batch.t_len;
    let inv_t = 1.0 / t_len as f64;

    // Sequence-mapping states: the shared policy rollout, treated as given.
    let ce_states = &gen.states;

    // Reward side: behavior-sampled rollout, log-D returns, IS weights.
    let reward_side = if ablations.no_reward {
        None
    } else {
        let rollout = sampled_rollout(stack, &batch.z, t_len, Some(behavior), rng)?;
        let mut rewards: Vec<Vec<f64>> = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let onehot = one_hot_rows(&rollout.actions[t], m);
            let logits = disc.logits_eval(&rollout.states[t], &onehot.data, b_rows)?;
            rewards.push(logits.iter().map(|&x| -softplus(-x)).collect());
        }
        let returns = compute_returns(&rewards, cfg.discount);

        // Advantage weights: Q centered by its per-timestep batch mean.
        // With uniformly negative log-D returns and clipped off-policy
        // ratios an uncentered estimator pushes every sampled action down,
        // driving the policy onto actions the behavior policy never
        // proposes.
        let mut clamp_events = 0usize;
        let mut weights: Vec<Vec<f64>> = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let pi_a: Vec<f64> = (0..b_rows)
                .map(|b| rollout.pi_probs[t][b * m + rollout.actions[t][b]])
                .collect();
            let beta_a: Vec<f64> = (0..b_rows)
                .map(|b| rollout.sample_probs[t][b * m + rollout.actions[t][b]])
                .collect();
            let (ratios, c) = importance_ratios(&pi_a, &beta_a, cfg.is_clip_lo, cfg.is_clip_hi);
            clamp_events += c;
            let baseline = returns[t].iter().sum::<f64>() / b_rows as f64;
            weights.push(
                ratios
                    .iter()
                    .zip(&returns[t])
                    .map(|(r, q)| r * (q - baseline))
                    .collect(),
            );
        }
        let mean_reward = rewards.iter().flatten().sum::<f64>() / (t_len * b_rows) as f64;
        Some((rollout, weights, clamp_events, mean_reward))
    };

    // Gradient graph: states are constants, the policy side is live. The
    // sequence-mapping term averages the model's own rollout states and the
    // expert observations, so the action head fits both the states eval
    // rollouts visit and the underlying expert manifold.
    let mut g = Graph::new();
    let mut ce_acc: Option<NodeId> = None;
    let mut pg_acc: Option<NodeId> = None;
    let mut ent_acc: Option<NodeId> = None;
    for t in 0..t_len {
        let s = g.constant_data(b_rows, dims.state_dim, ce_states[t].clone());
        let logits = stack.policy_logits_nodes(&mut g, s, true)?;
        let logp = g.log_softmax(logits);
        let mask = g.constant(&batch.onehots[t]);
        let picked = g.mul(logp, mask)?;
        let picked_rows = g.row_sum(picked);
        let mlp = g.mean(picked_rows);

        let se = g.constant(&batch.obs[t]);
        let logits_e = stack.policy_logits_nodes(&mut g, se, true)?;
        let logp_e = g.log_softmax(logits_e);
        let mask_e = g.constant(&batch.onehots[t]);
        let picked_e = g.mul(logp_e, mask_e)?;
        let picked_rows_e = g.row_sum(picked_e);
        let mlp_e = g.mean(picked_rows_e);

        let both = g.add(mlp, mlp_e)?;
        let both = g.scale(both, 0.5);
        ce_acc = Some(match ce_acc {
            Some(acc) => g.add(acc, both)?,
            None => both,
        });

        // Entropy over the states the policy acts on.
        let probs = g.softmax(logits);
        let plogp = g.mul(probs, logp)?;
        let h_rows = g.row_sum(plogp);
        let h_rows = g.scale(h_rows, -1.0);
        let mh = g.mean(h_rows);
        ent_acc = Some(match ent_acc {
            Some(acc) => g.add(acc, mh)?,
            None => mh,
        });

        if let Some((rollout, weights, _, _)) = &reward_side {
            let s = g.constant_data(b_rows, dims.state_dim, rollout.states[t].clone());
            let logits = stack.policy_logits_nodes(&mut g, s, true)?;
            let logp = g.log_softmax(logits);
            let mask = g.constant(&one_hot_rows(&rollout.actions[t], m));
            let picked = g.mul(logp, mask)?;
            let picked_rows = g.row_sum(picked);
            let w = g.constant_data(b_rows, 1, weights[t].clone());
            let weighted = g.mul(picked_rows, w)?;
            let mw = g.mean(weighted);
            pg_acc = Some(match pg_acc {
                Some(acc) => g.add(acc, mw)?,
                None => mw,
            });
        }
    }

    let ce_mean = g.scale(ce_acc.expect("t_len >= 1"), inv_t);
    let mut loss = g.scale(ce_mean, -1.0);
    let ent_mean = g.scale(ent_acc.expect("t_len >= 1"), inv_t);
    let entropy_v = g.value(ent_mean)[0];
    debug_assert!(entropy_v >= -1e-12 && entropy_v <= (m as f64).ln() + 1e-9);
    if let Some(pg) = pg_acc {
        let pg_mean = g.scale(pg, inv_t);
        let neg_pg = g.scale(pg_mean, -1.0);
        let neg_ent = g.scale(ent_mean, -cfg.entropy_weight);
        let with_pg = g.add(loss, neg_pg)?;
        loss = g.add(with_pg, neg_ent)?;
    }
    let loss_v = g.value(loss)[0];
    if !loss_v.is_finite() {
        return Err(Error::NonFinite {
            stage: "policy update",
        });
    }
    g.backward(loss)?;
    let (policy, policy_id) = stack.policy_params_mut();
    g.write_grads(policy, policy_id);
    let grad_norm = policy.grad_norm();
    adam.step(policy);

    let (clamp_events, mean_reward) = match &reward_side {
        Some((_, _, c, r)) => (*c, *r),
        None => {
            // Reported reward: discriminator score of the rollout paired
            // with the expert actions.
            let mut acc = 0.0;
            for t in 0..t_len {
                let logits = disc.logits_eval(&ce_states[t], &batch.onehots[t].data, b_rows)?;
                acc += logits.iter().map(|&x| -softplus(-x)).sum::<f64>();
            }
            (0, acc / (t_len * b_rows) as f64)
        }
    };
    Ok(PolicyStepStats {
        loss: loss_v,
        mean_reward,
        entropy: entropy_v,
        grad_norm,
        ratio_clamp_events: clamp_events,
    })
}

// ── Full training loop ──────────────────────────────────────────────

/// Groups dataset indices by trajectory length so each batch is rectangular.
fn length_groups(dataset: &[Trajectory]) -> Vec<Vec<usize>> {
    let mut by_len: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, t) in dataset.iter().enumerate() {
        by_len.entry(t.len()).or_default().push(i);
    }
    by_len.into_values().collect()
}

/// Joint adversarial training. The context and behavior nets are frozen
/// inputs; the stack and discriminator are updated in place. On divergence
/// the last finite epoch's parameters are restored and the report notes the
/// aborted epoch.
pub fn train(
    stack: &mut GenStack,
    disc: &mut Discriminator,
    context: &ContextNet,
    behavior: &BehaviorPolicy,
    dataset: &[Trajectory],
    cfg: &TrainConfig,
    ablations: AblationFlags,
    rng: &mut Rng,
) -> Result<TrainReport> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("empty dataset".into()));
    }
    let dims = stack.dims();
    let groups = length_groups(dataset);

    let mut adam_d = Adam::new(AdamConfig::with_lr(cfg.lr_disc), &disc.store);
    let mut adam_t = Adam::new(AdamConfig::with_lr(cfg.lr_transition), stack.trans_params());
    let mut adam_p = Adam::new(AdamConfig::with_lr(cfg.lr_policy), stack.policy_params());

    let mut report = TrainReport::default();
    let mut snapshot = (
        stack.trans_params().clone(),
        stack.policy_params().clone(),
        disc.store.clone(),
    );

    'epochs: for epoch in 0..cfg.epochs {
        // Batch schedule: shuffle within groups, then shuffle batch order.
        let mut batches: Vec<Vec<usize>> = Vec::new();
        for group in &groups {
            let mut idx = group.clone();
            rng.shuffle(&mut idx);
            for chunk in idx.chunks(cfg.batch_size.max(1)) {
                batches.push(chunk.to_vec());
            }
        }
        rng.shuffle(&mut batches);

        let mut acc = EpochAccumulator::default();
        for indices in &batches {
            let tb = TrajBatch::build(dataset, indices, context, dims, rng)?;
            let gen = sampled_rollout(stack, &tb.z, tb.t_len, None, rng)?;

            let d_stats = if ablations.no_disc {
                None
            } else {
                let expert = tb.expert_pairs();
                let generated = rollout_pairs(&gen, dims);
                Some(disc_update(disc, &mut adam_d, &expert, &generated))
            };
            let t_stats =
                transition_update(stack, disc, &tb, &gen, cfg, ablations, &mut adam_t, rng);
            let p_stats =
                policy_update(stack, disc, behavior, &tb, &gen, cfg, ablations, &mut adam_p, rng);

            match (d_stats.transpose(), t_stats, p_stats) {
                (Ok(d), Ok(t), Ok(p)) => acc.push(d, t, p),
                _ => {
                    log::error!("training diverged at epoch {epoch}; restoring last finite state");
                    let (trans, _) = stack.trans_params_mut();
                    *trans = snapshot.0.clone();
                    let (policy, _) = stack.policy_params_mut();
                    *policy = snapshot.1.clone();
                    disc.store = snapshot.2.clone();
                    report.diverged_at = Some(epoch);
                    break 'epochs;
                }
            }
        }
        report.epochs.push(acc.into_record(epoch));
        snapshot = (
            stack.trans_params().clone(),
            stack.policy_params().clone(),
            disc.store.clone(),
        );
    }
    Ok(report)
}

#[derive(Default)]
struct EpochAccumulator {
    n: usize,
    loss_d: f64,
    loss_t: f64,
    loss_pi: f64,
    mean_reward: f64,
    entropy: f64,
    grad_d: f64,
    grad_t: f64,
    grad_pi: f64,
    clamps: usize,
}

impl EpochAccumulator {
    fn push(&mut self, d: Option<DiscStepStats>, t: TransitionStepStats, p: PolicyStepStats) {
        self.n += 1;
        if let Some(d) = d {
            self.loss_d += d.loss;
            self.grad_d += d.grad_norm;
        }
        self.loss_t += t.loss;
        self.grad_t += t.grad_norm;
        self.loss_pi += p.loss;
        self.mean_reward += p.mean_reward;
        self.entropy += p.entropy;
        self.grad_pi += p.grad_norm;
        self.clamps += p.ratio_clamp_events;
    }

    fn into_record(self, epoch: usize) -> EpochRecord {
        let n = self.n.max(1) as f64;
        EpochRecord {
            epoch,
            loss_d: self.loss_d / n,
            loss_t: self.loss_t / n,
            loss_pi: self.loss_pi / n,
            mean_reward: self.mean_reward / n,
            entropy: self.entropy / n,
            grad_norm_d: self.grad_d / n,
            grad_norm_t: self.grad_t / n,
            grad_norm_pi: self.grad_pi / n,
            ratio_clamp_events: self.clamps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genmodel::Variant;

    fn dims() -> ModelDims {
        ModelDims {
            state_dim: 6,
            latent_dim: 3,
            action_vocab: 4,
            hidden_dim: 12,
        }
    }

    fn random_pairs(n: usize, dims: ModelDims, shift: f64, rng: &mut Rng) -> PairBatch {
        let states: Vec<Vec<f64>> = (0..n)
            .map(|_| rng.normal_vec(dims.state_dim).iter().map(|v| v + shift).collect())
            .collect();
        let actions: Vec<usize> = (0..n).map(|_| rng.below(dims.action_vocab)).collect();
        PairBatch::new(
            Tensor::from_rows(&states),
            one_hot_rows(&actions, dims.action_vocab),
        )
    }

    #[test]
    fn fresh_discriminator_outputs_half() {
        let mut rng = Rng::seed_from(1);
        let disc = Discriminator::new(dims(), &mut rng);
        let s = LatentState {
            s: rng.normal_vec(6),
        };
        let a = crate::nn::one_hot(2, 4);
        let d = disc.forward(&s, &a).unwrap();
        assert_eq!(d, 0.5);
        let r = disc.reward(&s, &a).unwrap();
        assert!((r - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn reward_increases_with_discriminator_output() {
        // log is monotone: larger logit -> larger D -> larger reward.
        let logits = [-3.0, -1.0, 0.0, 1.0, 3.0];
        let rewards: Vec<f64> = logits.iter().map(|&x| -softplus(-x)).collect();
        for w in rewards.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn disc_separates_disjoint_toy_sets() {
        let mut rng = Rng::seed_from(2);
        let d = dims();
        let mut disc = Discriminator::new(d, &mut rng);
        let mut adam = Adam::new(AdamConfig::with_lr(5e-3), &disc.store);
        let expert = random_pairs(32, d, 2.0, &mut rng);
        let generated = random_pairs(32, d, -2.0, &mut rng);
        for _ in 0..300 {
            disc_update(&mut disc, &mut adam, &expert, &generated).unwrap();
        }
        let el = disc
            .logits_eval(&expert.states.data, &expert.actions.data, 32)
            .unwrap();
        let gl = disc
            .logits_eval(&generated.states.data, &generated.actions.data, 32)
            .unwrap();
        let me: f64 = el.iter().map(|&x| sigmoid(x)).sum::<f64>() / 32.0;
        let mg: f64 = gl.iter().map(|&x| sigmoid(x)).sum::<f64>() / 32.0;
        assert!(me > 0.5 && mg < 0.5, "D(expert)={me}, D(gen)={mg}");
    }

    #[test]
    fn disc_on_identical_sources_converges_to_half() {
        let mut rng = Rng::seed_from(3);
        let d = dims();
        let mut disc = Discriminator::new(d, &mut rng);
        let mut adam = Adam::new(AdamConfig::with_lr(5e-3), &disc.store);
        // Same frozen batch on both sides: the optimum is D = 0.5.
        let batch = random_pairs(64, d, 0.0, &mut rng);
        for _ in 0..200 {
            disc_update(&mut disc, &mut adam, &batch, &batch).unwrap();
        }
        let logits = disc
            .logits_eval(&batch.states.data, &batch.actions.data, 64)
            .unwrap();
        for &x in &logits {
            let p = sigmoid(x);
            assert!((p - 0.5).abs() < 0.05, "D = {p}");
        }
    }

    #[test]
    fn disc_separates_single_pair_quickly() {
        let mut rng = Rng::seed_from(4);
        let d = dims();
        let mut disc = Discriminator::new(d, &mut rng);
        let mut adam = Adam::new(AdamConfig::with_lr(5e-3), &disc.store);
        let expert = random_pairs(1, d, 1.0, &mut rng);
        let generated = random_pairs(1, d, -1.0, &mut rng);
        for _ in 0..500 {
            disc_update(&mut disc, &mut adam, &expert, &generated).unwrap();
        }
        let e = disc
            .logits_eval(&expert.states.data, &expert.actions.data, 1)
            .unwrap()[0];
        assert!(sigmoid(e) > 0.9, "D(expert) = {}", sigmoid(e));
    }

    #[test]
    fn disc_zero_lr_leaves_params_unchanged() {
        let mut rng = Rng::seed_from(5);
        let d = dims();
        let mut disc = Discriminator::new(d, &mut rng);
        let mut adam = Adam::new(AdamConfig::with_lr(0.0), &disc.store);
        let before: Vec<Vec<f64>> = disc.store.iter().map(|(_, t)| t.data.clone()).collect();
        let expert = random_pairs(8, d, 1.0, &mut rng);
        let generated = random_pairs(8, d, -1.0, &mut rng);
        disc_update(&mut disc, &mut adam, &expert, &generated).unwrap();
        let after: Vec<Vec<f64>> = disc.store.iter().map(|(_, t)| t.data.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn disc_step_ascends_objective_at_small_lr() {
        // Line-search property of the ascent step on a frozen batch.
        let mut rng = Rng::seed_from(6);
        let d = dims();
        for lr in [1e-4, 1e-5] {
            let mut disc = Discriminator::new(d, &mut rng);
            // Nudge off the exact saddle at zero-init.
            for id in disc.store.ids().collect::<Vec<_>>() {
                for v in disc.store.get_mut(id).data.iter_mut() {
                    *v += 0.05 * rng.normal();
                }
            }
            let mut adam = Adam::new(AdamConfig::with_lr(lr), &disc.store);
            let expert = random_pairs(16, d, 1.0, &mut rng);
            let generated = random_pairs(16, d, -1.0, &mut rng);
            let before = disc_objective(&disc, &expert, &generated).unwrap();
            disc_update(&mut disc, &mut adam, &expert, &generated).unwrap();
            let after = disc_objective(&disc, &expert, &generated).unwrap();
            assert!(after > before, "lr {lr}: {before} -> {after}");
        }
    }

    fn toy_batch(stack: &GenStack, context: &ContextNet, rng: &mut Rng) -> (Vec<Trajectory>, TrajBatch) {
        let d = stack.dims();
        let dataset: Vec<Trajectory> = (0..6)
            .map(|_| {
                let t_len = 4;
                Trajectory {
                    task_id: 0,
                    observations: (0..t_len).map(|_| rng.normal_vec(d.state_dim)).collect(),
                    actions: (0..t_len).map(|_| rng.below(d.action_vocab)).collect(),
                    relabeled: false,
                }
            })
            .collect();
        let indices: Vec<usize> = (0..dataset.len()).collect();
        let tb = TrajBatch::build(&dataset, &indices, context, d, rng).unwrap();
        (dataset, tb)
    }

    #[test]
    fn transition_distance_term_is_zero_on_own_rollout() {
        let mut rng = Rng::seed_from(7);
        let d = dims();
        let mut stack = GenStack::new(Variant::Int, d, &mut rng);
        let context = ContextNet::new(d.state_dim, d.latent_dim, 8, &mut rng);
        let disc = Discriminator::new(d, &mut rng);
        let (_, mut tb) = toy_batch(&stack, &context, &mut rng);
        // Replace the expert observations with the model's own chained
        // one-step predictions so generated and "expert" states coincide.
        let gen = sampled_rollout(&stack, &tb.z, tb.t_len, None, &mut rng).unwrap();
        let mut prev = vec![0.0; tb.batch * d.state_dim];
        for t in 0..tb.t_len {
            let next = stack
                .next_states_eval(&prev, &vec![0.0; tb.batch * d.action_vocab], tb.batch, &tb.z, None)
                .unwrap();
            tb.obs[t] = Tensor::new(tb.batch, d.state_dim, next.clone());
            prev = next;
        }
        let cfg = TrainConfig {
            lr_transition: 0.0,
            ..Default::default()
        };
        let mut adam = Adam::new(AdamConfig::with_lr(0.0), stack.trans_params());
        let stats = transition_update(
            &mut stack,
            &disc,
            &tb,
            &gen,
            &cfg,
            AblationFlags::default(),
            &mut adam,
            &mut rng,
        )
        .unwrap();
        assert!(stats.distance.abs() < 1e-18, "distance {}", stats.distance);
    }

    #[test]
    fn transition_weight_zero_reduces_to_adversarial() {
        let mut rng = Rng::seed_from(8);
        let d = dims();
        let mut stack = GenStack::new(Variant::Ext, d, &mut rng);
        let context = ContextNet::new(d.state_dim, d.latent_dim, 8, &mut rng);
        let disc = Discriminator::new(d, &mut rng);
        let (_, tb) = toy_batch(&stack, &context, &mut rng);
        let gen = sampled_rollout(&stack, &tb.z, tb.t_len, None, &mut rng).unwrap();
        let cfg = TrainConfig {
            distance_weight: 0.0,
            ..Default::default()
        };
        let mut adam = Adam::new(AdamConfig::with_lr(0.0), stack.trans_params());
        let stats = transition_update(
            &mut stack,
            &disc,
            &tb,
            &gen,
            &cfg,
            AblationFlags::default(),
            &mut adam,
            &mut rng,
        )
        .unwrap();
        assert!((stats.loss - stats.adversarial).abs() < 1e-15);
    }

    #[test]
    fn transition_distance_gradient_matches_finite_differences() {
        use crate::autodiff::{finite_difference_grads, grad_rel_error};
        let mut rng = Rng::seed_from(9);
        let d = dims();
        let mut stack = GenStack::new(Variant::Int, d, &mut rng);
        let context = ContextNet::new(d.state_dim, d.latent_dim, 8, &mut rng);
        let (_, tb) = toy_batch(&stack, &context, &mut rng);
        // Nudge zero-initialized heads for generic gradients.
        {
            let (trans, _) = stack.trans_params_mut();
            for id in trans.ids().collect::<Vec<_>>() {
                for v in trans.get_mut(id).data.iter_mut() {
                    *v += 0.03 * rng.normal();
                }
            }
        }
        let gen = sampled_rollout(&stack, &tb.z, tb.t_len, None, &mut rng).unwrap();

        let distance_loss = |stack: &GenStack| -> f64 {
            let mut g = Graph::new();
            let steps = stack
                .rollout_state_graph(&mut g, &tb.z, &gen.actions, gen.eps.as_deref(), false)
                .unwrap();
            let mut total = 0.0;
            for (t, &state) in steps.iter().enumerate() {
                let sv = g.value(state);
                let ov = &tb.obs[t].data;
                let mut acc = 0.0;
                for (a, b) in sv.iter().zip(ov) {
                    acc += (a - b) * (a - b);
                }
                total += acc / tb.batch as f64;
            }
            total / tb.t_len as f64
        };

        // Analytic gradients of the pure distance loss via a live rollout.
        let mut g = Graph::new();
        let steps = stack
            .rollout_state_graph(&mut g, &tb.z, &gen.actions, gen.eps.as_deref(), true)
            .unwrap();
        let mut acc: Option<NodeId> = None;
        for (t, &state) in steps.iter().enumerate() {
            let eo = g.constant(&tb.obs[t]);
            let diff = g.sub(state, eo).unwrap();
            let sq = g.mul(diff, diff).unwrap();
            let rows = g.row_sum(sq);
            let m = g.mean(rows);
            acc = Some(match acc {
                Some(a) => g.add(a, m).unwrap(),
                None => m,
            });
        }
        let loss = g.scale(acc.unwrap(), 1.0 / tb.t_len as f64);
        g.backward(loss).unwrap();
        let (trans, trans_id) = stack.trans_params_mut();
        g.write_grads(trans, trans_id);
        let analytic: Vec<Vec<f64>> = trans
            .ids()
            .map(|id| trans.get(id).grad.clone().unwrap())
            .collect();

        let GenStack::Int(cell) = &stack else { unreachable!() };
        let mut probe_store = cell.trans.clone();
        let numeric = finite_difference_grads(&mut probe_store, 1e-5, |p| {
            let probe = GenStack::Int(cell.with_params(p.clone(), cell.policy.clone()));
            distance_loss(&probe)
        });
        for (a, n) in analytic.iter().zip(&numeric) {
            for (&x, &y) in a.iter().zip(n) {
                assert!(grad_rel_error(x, y) < 1e-4, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn returns_recursion_and_zero_discount() {
        let rewards = vec![vec![1.0, -1.0], vec![0.5, 2.0], vec![-0.25, 0.0]];
        let q = compute_returns(&rewards, 0.5);
        for t in 0..3 {
            for b in 0..2 {
                let future = if t + 1 < 3 { q[t + 1][b] } else { 0.0 };
                assert!((q[t][b] - (rewards[t][b] + 0.5 * future)).abs() < 1e-15);
            }
        }
        // γ = 0 degenerates to the per-step reward.
        let q0 = compute_returns(&rewards, f64::MIN_POSITIVE);
        for t in 0..3 {
            for b in 0..2 {
                assert!((q0[t][b] - rewards[t][b]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ratios_are_one_for_identical_policies() {
        let mut rng = Rng::seed_from(10);
        let probs: Vec<f64> = (0..100).map(|_| rng.uniform() * 0.9 + 0.05).collect();
        let (ratios, clamped) = importance_ratios(&probs, &probs, 0.1, 10.0);
        assert_eq!(clamped, 0);
        assert!(ratios.iter().all(|&r| r == 1.0));
    }

    #[test]
    fn ratios_respect_clip_bounds_and_count_clamps() {
        let pi = vec![0.9, 0.5, 1e-12, 0.8];
        let beta = vec![1e-12, 0.5, 0.9, 0.1];
        let (ratios, clamped) = importance_ratios(&pi, &beta, 0.1, 10.0);
        assert_eq!(clamped, 1);
        for &r in &ratios {
            assert!((0.1..=10.0).contains(&r));
        }
        assert_eq!(ratios[0], 10.0);
        assert_eq!(ratios[1], 1.0);
        assert_eq!(ratios[2], 0.1);
    }

    #[test]
    fn train_same_seed_gives_identical_reports() {
        let run = || {
            let mut rng = Rng::seed_from(42);
            let d = dims();
            let world = crate::taskworld::World::generate(crate::taskworld::WorldConfig {
                num_tasks: 2,
                steps_min: 3,
                steps_max: 4,
                action_vocab: d.action_vocab,
                obs_dim: d.state_dim,
                noise_sigma: 0.05,
                interchangeable_fraction: 0.5,
                seed: 5,
            })
            .unwrap();
            let dataset = world.sample_dataset(10, &mut rng);
            let context = ContextNet::new(d.state_dim, d.latent_dim, 8, &mut rng);
            let behavior = BehaviorPolicy::new(d, &mut rng);
            let mut stack = GenStack::new(Variant::Ext, d, &mut rng);
            let mut disc = Discriminator::new(d, &mut rng);
            let cfg = TrainConfig {
                epochs: 3,
                batch_size: 8,
                ..Default::default()
            };
            let report = train(
                &mut stack,
                &mut disc,
                &context,
                &behavior,
                &dataset,
                &cfg,
                AblationFlags::default(),
                &mut rng,
            )
            .unwrap();
            serde_json::to_string(&report).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn state_graph_replays_sampled_rollout_for_ext() {
        let mut rng = Rng::seed_from(21);
        let d = dims();
        let stack = GenStack::new(crate::genmodel::Variant::Ext, d, &mut rng);
        let context = ContextNet::new(d.state_dim, d.latent_dim, 8, &mut rng);
        let (_, tb) = toy_batch(&stack, &context, &mut rng);
        let gen = sampled_rollout(&stack, &tb.z, tb.t_len, None, &mut rng).unwrap();
        let mut g = Graph::new();
        let steps = stack
            .rollout_state_graph(&mut g, &tb.z, &gen.actions, gen.eps.as_deref(), false)
            .unwrap();
        for (t, &state) in steps.iter().enumerate() {
            assert_eq!(g.value(state), &gen.states[t][..], "step {t} replay differs");
        }
    }

    #[test]
    fn ablation_flags_parse_and_display() {
        let f = AblationFlags::parse("no_reward, no_her").unwrap();
        assert!(f.no_reward && f.no_her && !f.no_disc);
        assert!(AblationFlags::parse("bogus").is_err());
        assert_eq!(AblationFlags::parse("").unwrap(), AblationFlags::default());
        assert_eq!(AblationFlags::without_discriminator().to_string(), "no_reward,no_disc");
    }

    #[test]
    fn no_disc_ablation_trains_without_discriminator_updates() {
        let mut rng = Rng::seed_from(11);
        let d = dims();
        let world = crate::taskworld::World::generate(crate::taskworld::WorldConfig {
            num_tasks: 1,
            steps_min: 3,
            steps_max: 3,
            action_vocab: d.action_vocab,
            obs_dim: d.state_dim,
            noise_sigma: 0.0,
            interchangeable_fraction: 0.0,
            seed: 6,
        })
        .unwrap();
        let dataset = world.sample_dataset(8, &mut rng);
        let context = ContextNet::new(d.state_dim, d.latent_dim, 8, &mut rng);
        let behavior = BehaviorPolicy::new(d, &mut rng);
        let mut stack = GenStack::new(Variant::Int, d, &mut rng);
        let mut disc = Discriminator::new(d, &mut rng);
        let disc_before: Vec<Vec<f64>> = disc.store.iter().map(|(_, t)| t.data.clone()).collect();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..Default::default()
        };
        let report = train(
            &mut stack,
            &mut disc,
            &context,
            &behavior,
            &dataset,
            &cfg,
            AblationFlags::without_discriminator(),
            &mut rng,
        )
        .unwrap();
        let disc_after: Vec<Vec<f64>> = disc.store.iter().map(|(_, t)| t.data.clone()).collect();
        assert_eq!(disc_before, disc_after, "discriminator must stay frozen");
        assert_eq!(report.epochs.len(), 2);
        assert!(report.epochs.iter().all(|e| e.loss_d == 0.0));
    }

    #[test]
    fn her_flag_never_changes_single_batch_losses() {
        // Identical batch, flags differing only in no_her: bitwise-equal losses.
        let mut rng = Rng::seed_from(12);
        let d = dims();
        let context = ContextNet::new(d.state_dim, d.latent_dim, 8, &mut rng);
        let run = |no_her: bool| {
            let mut rng = Rng::seed_from(77);
            let mut stack = GenStack::new(Variant::Ext, d, &mut rng);
            let mut disc = Discriminator::new(d, &mut rng);
            let behavior = BehaviorPolicy::new(d, &mut rng);
            let mut rng2 = Rng::seed_from(78);
            let (_, tb) = toy_batch(&stack, &context, &mut rng2);
            let cfg = TrainConfig::default();
            let flags = AblationFlags {
                no_her,
                ..Default::default()
            };
            let expert = tb.expert_pairs();
            let mut rng_g = Rng::seed_from(80);
            let gen = sampled_rollout(&stack, &tb.z, tb.t_len, None, &mut rng_g).unwrap();
            let generated = rollout_pairs(&gen, d);
            let mut adam_d = Adam::new(AdamConfig::with_lr(cfg.lr_disc), &disc.store);
            let d_stats = disc_update(&mut disc, &mut adam_d, &expert, &generated).unwrap();
            let mut adam_t = Adam::new(AdamConfig::with_lr(cfg.lr_transition), stack.trans_params());
            let mut rng_t = Rng::seed_from(81);
            let t_stats =
                transition_update(&mut stack, &disc, &tb, &gen, &cfg, flags, &mut adam_t, &mut rng_t)
                    .unwrap();
            let mut adam_p = Adam::new(AdamConfig::with_lr(cfg.lr_policy), stack.policy_params());
            let mut rng3 = Rng::seed_from(79);
            let p_stats = policy_update(
                &mut stack, &disc, &behavior, &tb, &gen, &cfg, flags, &mut adam_p, &mut rng3,
            )
            .unwrap();
            (d_stats.loss, t_stats.loss, p_stats.loss)
        };
        assert_eq!(run(false), run(true));
    }
}
