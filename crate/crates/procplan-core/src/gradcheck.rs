//! Finite-difference verification of every learned component.
//!
//! Each component gets freshly randomized parameters and inputs per
//! instantiation; reverse-mode gradients of a scalar loss are compared
//! against central finite differences coordinate by coordinate.

use serde::{Deserialize, Serialize};

use crate::autodiff::{finite_difference_grads, grad_rel_error, Graph, Params, Tensor};
use crate::context::ContextNet;
use crate::error::Result;
use crate::gail::Discriminator;
use crate::genmodel::{ExtModel, GenStack, IntCell, ModelDims, Variant};
use crate::nn::one_hot_rows;
use crate::rng::Rng;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComponentCheck {
    pub component: String,
    pub instantiations: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn small_dims() -> ModelDims {
    ModelDims {
        state_dim: 7,
        latent_dim: 4,
        action_vocab: 5,
        hidden_dim: 8,
    }
}

fn perturb(store: &mut Params, scale: f64, rng: &mut Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.get_mut(id).data.iter_mut() {
            *v += scale * rng.normal();
        }
    }
}

fn max_err(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        for (&x, &y) in a.iter().zip(n) {
            worst = worst.max(grad_rel_error(x, y));
        }
    }
    worst
}

fn check_context(seed: u64) -> Result<f64> {
    let mut rng = Rng::seed_from(seed);
    let d = small_dims();
    let mut net = ContextNet::new(d.state_dim, d.latent_dim, d.hidden_dim, &mut rng);
    perturb(&mut net.store, 0.1, &mut rng);
    let o1 = Tensor::from_rows(&[rng.normal_vec(d.state_dim), rng.normal_vec(d.state_dim)]);
    let ot = Tensor::from_rows(&[rng.normal_vec(d.state_dim), rng.normal_vec(d.state_dim)]);
    let eps = Tensor::new(2, d.latent_dim, rng.normal_vec(2 * d.latent_dim));

    let mut g = Graph::new();
    let nodes = net.elbo_graph(&mut g, &o1, &ot, &eps, 0.5, true)?;
    g.backward(nodes.loss)?;
    g.write_grads(&mut net.store, net.store_id);
    let analytic: Vec<Vec<f64>> = net
        .store
        .ids()
        .map(|id| net.store.get(id).grad.clone().unwrap())
        .collect();
    let mut probe_store = net.store.clone();
    let numeric = finite_difference_grads(&mut probe_store, 1e-5, |p| {
        let probe = net.with_params(p.clone());
        let mut g = Graph::new();
        let nodes = probe.elbo_graph(&mut g, &o1, &ot, &eps, 0.5, false).unwrap();
        g.value(nodes.loss)[0]
    });
    Ok(max_err(&analytic, &numeric))
}

/// Loss covering all interior-cell parameters: squared next-state norm plus
/// randomly weighted action probabilities.
fn int_cell_loss(cell: &IntCell, s: &Tensor, z: &Tensor, w: &Tensor, live: bool) -> (f64, Option<(Params, Params)>) {
    let mut g = Graph::new();
    let sn = g.constant(s);
    let zn = g.constant(z);
    let nodes = cell.step_nodes(&mut g, sn, zn, live, live).unwrap();
    let sq = g.mul(nodes.next_state, nodes.next_state).unwrap();
    let a = g.sum(sq);
    let probs = g.softmax(nodes.logits);
    let wn = g.constant(w);
    let weighted = g.mul(probs, wn).unwrap();
    let b = g.sum(weighted);
    let loss = g.add(a, b).unwrap();
    let v = g.value(loss)[0];
    if live {
        g.backward(loss).unwrap();
        let mut trans = cell.trans.clone();
        let mut policy = cell.policy.clone();
        g.write_grads(&mut trans, cell.trans_id);
        g.write_grads(&mut policy, cell.policy_id);
        (v, Some((trans, policy)))
    } else {
        (v, None)
    }
}

fn check_int_cell(seed: u64) -> Result<f64> {
    let mut rng = Rng::seed_from(seed);
    let d = small_dims();
    let mut cell = IntCell::new(d, &mut rng);
    perturb(&mut cell.trans, 0.1, &mut rng);
    perturb(&mut cell.policy, 0.1, &mut rng);
    let s = Tensor::from_rows(&[rng.normal_vec(d.state_dim), rng.normal_vec(d.state_dim)]);
    let z = Tensor::from_rows(&[rng.normal_vec(d.latent_dim), rng.normal_vec(d.latent_dim)]);
    let w = Tensor::new(2, d.action_vocab, rng.normal_vec(2 * d.action_vocab));

    let (_, grads) = int_cell_loss(&cell, &s, &z, &w, true);
    let (trans_g, policy_g) = grads.unwrap();
    let analytic_t: Vec<Vec<f64>> = trans_g.ids().map(|id| trans_g.get(id).grad.clone().unwrap()).collect();
    let analytic_p: Vec<Vec<f64>> = policy_g.ids().map(|id| policy_g.get(id).grad.clone().unwrap()).collect();

    let mut probe_t = cell.trans.clone();
    let numeric_t = finite_difference_grads(&mut probe_t, 1e-5, |p| {
        int_cell_loss(&cell.with_params(p.clone(), cell.policy.clone()), &s, &z, &w, false).0
    });
    let mut probe_p = cell.policy.clone();
    let numeric_p = finite_difference_grads(&mut probe_p, 1e-5, |p| {
        int_cell_loss(&cell.with_params(cell.trans.clone(), p.clone()), &s, &z, &w, false).0
    });
    Ok(max_err(&analytic_t, &numeric_t).max(max_err(&analytic_p, &numeric_p)))
}

fn ext_transition_loss(model: &ExtModel, s: &Tensor, a: &Tensor, z: &Tensor, eps: &Tensor, live: bool) -> (f64, Option<Params>) {
    let mut g = Graph::new();
    let sn = g.constant(s);
    let an = g.constant(a);
    let zn = g.constant(z);
    let en = g.constant(eps);
    let nodes = model.transition_nodes(&mut g, sn, an, zn, Some(en), live).unwrap();
    let sq = g.mul(nodes.state, nodes.state).unwrap();
    let loss = g.sum(sq);
    let v = g.value(loss)[0];
    if live {
        g.backward(loss).unwrap();
        let mut trans = model.trans.clone();
        g.write_grads(&mut trans, model.trans_id);
        (v, Some(trans))
    } else {
        (v, None)
    }
}

fn check_ext_transition(seed: u64) -> Result<f64> {
    let mut rng = Rng::seed_from(seed);
    let d = small_dims();
    let mut model = ExtModel::new(d, &mut rng);
    perturb(&mut model.trans, 0.1, &mut rng);
    let s = Tensor::from_rows(&[rng.normal_vec(d.state_dim), rng.normal_vec(d.state_dim)]);
    let acts: Vec<usize> = vec![rng.below(d.action_vocab), rng.below(d.action_vocab)];
    let a = one_hot_rows(&acts, d.action_vocab);
    let z = Tensor::from_rows(&[rng.normal_vec(d.latent_dim), rng.normal_vec(d.latent_dim)]);
    let eps = Tensor::new(2, d.state_dim, rng.normal_vec(2 * d.state_dim));

    let (_, grads) = ext_transition_loss(&model, &s, &a, &z, &eps, true);
    let trans_g = grads.unwrap();
    let analytic: Vec<Vec<f64>> = trans_g.ids().map(|id| trans_g.get(id).grad.clone().unwrap()).collect();
    let mut probe = model.trans.clone();
    let numeric = finite_difference_grads(&mut probe, 1e-5, |p| {
        ext_transition_loss(&model.with_params(p.clone(), model.policy.clone()), &s, &a, &z, &eps, false).0
    });
    Ok(max_err(&analytic, &numeric))
}

fn policy_loss(stack: &GenStack, s: &Tensor, mask: &Tensor, w: &Tensor, live: bool) -> (f64, Option<Params>) {
    let mut g = Graph::new();
    let sn = g.constant(s);
    let logits = stack.policy_logits_nodes(&mut g, sn, live).unwrap();
    let logp = g.log_softmax(logits);
    let mn = g.constant(mask);
    let picked = g.mul(logp, mn).unwrap();
    let rows = g.row_sum(picked);
    let wn = g.constant(w);
    let weighted = g.mul(rows, wn).unwrap();
    let pg = g.mean(weighted);
    // entropy term exercises the softmax path too
    let probs = g.softmax(logits);
    let plogp = g.mul(probs, logp).unwrap();
    let h = g.sum(plogp);
    let h = g.scale(h, -0.05);
    let loss = g.add(pg, h).unwrap();
    let v = g.value(loss)[0];
    if live {
        g.backward(loss).unwrap();
        let mut policy = stack.policy_params().clone();
        let (_, pid) = match stack {
            GenStack::Int(c) => (&c.policy, c.policy_id),
            GenStack::Ext(m) => (&m.policy, m.policy_id),
        };
        g.write_grads(&mut policy, pid);
        (v, Some(policy))
    } else {
        (v, None)
    }
}

fn check_policy(seed: u64, variant: Variant) -> Result<f64> {
    let mut rng = Rng::seed_from(seed);
    let d = small_dims();
    let mut stack = GenStack::new(variant, d, &mut rng);
    {
        let (p, _) = stack.policy_params_mut();
        perturb(p, 0.1, &mut rng);
    }
    let s = Tensor::from_rows(&[rng.normal_vec(d.state_dim), rng.normal_vec(d.state_dim)]);
    let acts: Vec<usize> = vec![rng.below(d.action_vocab), rng.below(d.action_vocab)];
    let mask = one_hot_rows(&acts, d.action_vocab);
    let w = Tensor::new(2, 1, rng.normal_vec(2));

    let (_, grads) = policy_loss(&stack, &s, &mask, &w, true);
    let policy_g = grads.unwrap();
    let analytic: Vec<Vec<f64>> = policy_g.ids().map(|id| policy_g.get(id).grad.clone().unwrap()).collect();
    let mut probe = stack.policy_params().clone();
    let numeric = finite_difference_grads(&mut probe, 1e-5, |p| {
        let probe_stack = stack.with_params(stack.trans_params().clone(), p.clone());
        policy_loss(&probe_stack, &s, &mask, &w, false).0
    });
    Ok(max_err(&analytic, &numeric))
}

fn disc_loss(disc: &Discriminator, s: &Tensor, a: &Tensor, live: bool) -> (f64, Option<Params>) {
    let mut g = Graph::new();
    let sn = g.constant(s);
    let an = g.constant(a);
    let logit = disc.logit_nodes(&mut g, sn, an, live).unwrap();
    let sp = g.softplus(logit);
    let neg = g.scale(logit, -1.0);
    let sp2 = g.softplus(neg);
    let both = g.add(sp, sp2).unwrap();
    let loss = g.mean(both);
    let v = g.value(loss)[0];
    if live {
        g.backward(loss).unwrap();
        let mut store = disc.store.clone();
        g.write_grads(&mut store, disc.store_id);
        (v, Some(store))
    } else {
        (v, None)
    }
}

fn check_discriminator(seed: u64) -> Result<f64> {
    let mut rng = Rng::seed_from(seed);
    let d = small_dims();
    let mut disc = Discriminator::new(d, &mut rng);
    perturb(&mut disc.store, 0.1, &mut rng);
    let s = Tensor::from_rows(&[rng.normal_vec(d.state_dim), rng.normal_vec(d.state_dim)]);
    let acts: Vec<usize> = vec![rng.below(d.action_vocab), rng.below(d.action_vocab)];
    let a = one_hot_rows(&acts, d.action_vocab);

    let (_, grads) = disc_loss(&disc, &s, &a, true);
    let store_g = grads.unwrap();
    let analytic: Vec<Vec<f64>> = store_g.ids().map(|id| store_g.get(id).grad.clone().unwrap()).collect();
    let mut probe = disc.store.clone();
    let numeric = finite_difference_grads(&mut probe, 1e-5, |p| {
        disc_loss(&disc.with_params(p.clone()), &s, &a, false).0
    });
    Ok(max_err(&analytic, &numeric))
}

/// Runs the whole suite: `instantiations` random configurations per learned
/// component, each compared against central finite differences.
pub fn run_gradient_suite(instantiations: usize, tolerance: f64, seed: u64) -> Result<Vec<ComponentCheck>> {
    let mut out = Vec::new();
    let components: Vec<(&str, Box<dyn Fn(u64) -> Result<f64>>)> = vec![
        ("context_vae", Box::new(check_context)),
        ("int_cell", Box::new(check_int_cell)),
        ("ext_transition", Box::new(check_ext_transition)),
        ("policy_ext", Box::new(|s| check_policy(s, Variant::Ext))),
        ("policy_int", Box::new(|s| check_policy(s, Variant::Int))),
        ("discriminator", Box::new(check_discriminator)),
    ];
    for (name, check) in components {
        let mut worst: f64 = 0.0;
        for k in 0..instantiations {
            let err = check(seed.wrapping_add(k as u64).wrapping_mul(2654435761).wrapping_add(k as u64))?;
            worst = worst.max(err);
        }
        out.push(ComponentCheck {
            component: name.to_string(),
            instantiations,
            max_rel_error: worst,
            tolerance,
            passed: worst < tolerance,
        });
    }
    Ok(out)
}
