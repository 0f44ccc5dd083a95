//! Minimal dense-tensor math with reverse-mode differentiation.
//!
//! Everything learned in this crate (context encoder, generation stacks,
//! discriminator, behavior policy) builds its computation graphs here.
//! 64-bit floats throughout; dense row-major storage; no broadcasting beyond
//! bias-add.

mod adam;
mod graph;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{matmul_into, next_store_id, sigmoid, softmax_row, softplus, Graph, NodeId, StoreId};
pub use tensor::{ParamId, Params, Tensor};

/// Central finite-difference gradient of `f` w.r.t. every parameter entry.
///
/// `f` must evaluate the loss from scratch (rebuild its graph); it is called
/// twice per coordinate. Used by the gradient-check suite as the independent
/// oracle against reverse-mode results.
pub fn finite_difference_grads<F>(params: &mut Params, h: f64, mut f: F) -> Vec<Vec<f64>>
where
    F: FnMut(&Params) -> f64,
{
    let mut out = Vec::with_capacity(params.len());
    for id in params.ids().collect::<Vec<_>>() {
        let n = params.get(id).len();
        let mut g = vec![0.0; n];
        for i in 0..n {
            let orig = params.get(id).data[i];
            params.get_mut(id).data[i] = orig + h;
            let fp = f(params);
            params.get_mut(id).data[i] = orig - h;
            let fm = f(params);
            params.get_mut(id).data[i] = orig;
            g[i] = (fp - fm) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// Relative error between analytic and numeric gradients, with a unit floor
/// so near-zero pairs compare absolutely.
pub fn grad_rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1.0);
    (analytic - numeric).abs() / denom
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = g.scalar(0.0);
        let y = g.sigmoid(x);
        assert_eq!(g.value(y), &[0.5]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant_data(1, 3, vec![0.0, 0.0, 0.0]);
        let y = g.softmax(x);
        for v in g.value(y) {
            assert_close(*v, 1.0 / 3.0, 1e-15);
        }
    }

    #[test]
    fn matmul_identity() {
        let mut rng = Rng::seed_from(1);
        let m = Tensor::randn_scaled(3, 3, 3, &mut rng);
        let mut g = Graph::new();
        let eye = g.constant_data(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let mm = g.constant(&m);
        let y = g.matmul(eye, mm).unwrap();
        assert_eq!(g.value(y), &m.data[..]);
    }

    #[test]
    fn matmul_shape_error_names_op() {
        let mut g = Graph::new();
        let a = g.constant_data(2, 3, vec![0.0; 6]);
        let b = g.constant_data(2, 2, vec![0.0; 4]);
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn product_rule() {
        let mut store = Params::new();
        let sid = next_store_id();
        let xi = store.add("x", Tensor::scalar(2.0));
        let yi = store.add("y", Tensor::scalar(3.0));
        let mut g = Graph::new();
        let x = g.param(&store, sid, xi);
        let y = g.param(&store, sid, yi);
        let z = g.mul(x, y).unwrap();
        g.backward(z).unwrap();
        g.write_grads(&mut store, sid);
        assert_eq!(store.get(xi).grad.as_deref().unwrap(), &[3.0]);
        assert_eq!(store.get(yi).grad.as_deref().unwrap(), &[2.0]);
    }

    #[test]
    fn tanh_grad_at_zero_is_one() {
        let mut store = Params::new();
        let sid = next_store_id();
        let xi = store.add("x", Tensor::row(vec![0.0, 0.0, 0.0]));
        let mut g = Graph::new();
        let x = g.param(&store, sid, xi);
        let t = g.tanh(x);
        let s = g.sum(t);
        g.backward(s).unwrap();
        g.write_grads(&mut store, sid);
        assert_eq!(store.get(xi).grad.as_deref().unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let x = g.constant_data(1, 2, vec![1.0, 2.0]);
        let y = g.scale(x, 2.0);
        assert!(g.backward(y).is_err());
    }

    /// Two-layer network gradients against the finite-difference oracle.
    #[test]
    fn two_layer_network_matches_finite_differences() {
        let mut rng = Rng::seed_from(7);
        let mut store = Params::new();
        let sid = next_store_id();
        let w1 = store.add("w1", Tensor::randn_scaled(4, 5, 4, &mut rng));
        let b1 = store.add("b1", Tensor::randn_scaled(1, 5, 4, &mut rng));
        let w2 = store.add("w2", Tensor::randn_scaled(5, 2, 5, &mut rng));
        let b2 = store.add("b2", Tensor::randn_scaled(1, 2, 5, &mut rng));
        let input = Tensor::from_rows(&[rng.normal_vec(4), rng.normal_vec(4), rng.normal_vec(4)]);
        let target = Tensor::from_rows(&[rng.normal_vec(2), rng.normal_vec(2), rng.normal_vec(2)]);

        let build = |g: &mut Graph, p: &Params, live: bool| {
            let x = g.constant(&input);
            let t = g.constant(&target);
            let bind = |g: &mut Graph, id| {
                if live {
                    g.param(p, sid, id)
                } else {
                    g.frozen(p, id)
                }
            };
            let w1n = bind(g, w1);
            let b1n = bind(g, b1);
            let w2n = bind(g, w2);
            let b2n = bind(g, b2);
            let h = g.matmul(x, w1n).unwrap();
            let h = g.add_row(h, b1n).unwrap();
            let h = g.tanh(h);
            let o = g.matmul(h, w2n).unwrap();
            let o = g.add_row(o, b2n).unwrap();
            let d = g.sub(o, t).unwrap();
            let sq = g.mul(d, d).unwrap();
            g.mean(sq)
        };

        let mut g = Graph::new();
        let loss = build(&mut g, &store, true);
        g.backward(loss).unwrap();
        g.write_grads(&mut store, sid);
        let analytic: Vec<Vec<f64>> = store
            .ids()
            .map(|id| store.get(id).grad.clone().unwrap())
            .collect();

        let numeric = finite_difference_grads(&mut store, 1e-5, |p| {
            let mut g = Graph::new();
            let loss = build(&mut g, p, false);
            g.value(loss)[0]
        });

        let mut max_err: f64 = 0.0;
        for (a, n) in analytic.iter().zip(&numeric) {
            for (&x, &y) in a.iter().zip(n) {
                max_err = max_err.max(grad_rel_error(x, y));
            }
        }
        assert!(max_err < 1e-4, "max rel err {max_err}");
    }

    /// z = mu + sigma·eps has dz/dmu = 1 and dz/dsigma = eps exactly.
    #[test]
    fn reparam_grads_are_exact() {
        let mut rng = Rng::seed_from(3);
        let eps_draw = rng.normal_vec(4);
        let mut store = Params::new();
        let sid = next_store_id();
        let mu = store.add("mu", Tensor::row(rng.normal_vec(4)));
        let sigma = store.add("sigma", Tensor::row(vec![0.3, 0.7, 1.1, 0.2]));
        let mut g = Graph::new();
        let mu_n = g.param(&store, sid, mu);
        let sg_n = g.param(&store, sid, sigma);
        let eps = g.constant_data(1, 4, eps_draw.clone());
        let noise = g.mul(sg_n, eps).unwrap();
        let z = g.add(mu_n, noise).unwrap();
        let s = g.sum(z);
        g.backward(s).unwrap();
        g.write_grads(&mut store, sid);
        assert_eq!(store.get(mu).grad.as_deref().unwrap(), &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(store.get(sigma).grad.as_deref().unwrap(), &eps_draw[..]);
    }

    #[test]
    fn backward_twice_gives_identical_grads() {
        let mut store = Params::new();
        let sid = next_store_id();
        let xi = store.add("x", Tensor::row(vec![0.4, -1.2]));
        let mut g = Graph::new();
        let x = g.param(&store, sid, xi);
        let t = g.tanh(x);
        let m = g.mul(t, t).unwrap();
        let s = g.sum(m);
        g.backward(s).unwrap();
        g.write_grads(&mut store, sid);
        let first = store.get(xi).grad.clone().unwrap();
        g.backward(s).unwrap();
        g.write_grads(&mut store, sid);
        assert_eq!(store.get(xi).grad.as_deref().unwrap(), &first[..]);
    }

    /// Randomly composed graphs match finite differences (property test).
    #[test]
    fn random_graphs_match_finite_differences() {
        for seed in 0..20u64 {
            let mut rng = Rng::seed_from(1000 + seed);
            let rows = 1 + rng.below(3);
            let cols = 2 + rng.below(3);
            let mut store = Params::new();
            let sid = next_store_id();
            let x = store.add("x", Tensor::randn_scaled(rows, cols, 1, &mut rng));
            let w = store.add("w", Tensor::randn_scaled(cols, cols, cols, &mut rng));
            let ops: Vec<usize> = (0..4).map(|_| rng.below(7)).collect();

            let build = |g: &mut Graph, p: &Params, live: bool| {
                let bind = |g: &mut Graph, id| {
                    if live {
                        g.param(p, sid, id)
                    } else {
                        g.frozen(p, id)
                    }
                };
                let xn = bind(g, x);
                let wn = bind(g, w);
                let mut cur = g.matmul(xn, wn).unwrap();
                for &op in &ops {
                    cur = match op {
                        0 => g.tanh(cur),
                        1 => g.sigmoid(cur),
                        2 => g.softmax(cur),
                        3 => g.scale(cur, 0.7),
                        4 => g.softplus(cur),
                        5 => {
                            let e = g.exp(cur);
                            g.scale(e, 0.5)
                        }
                        _ => {
                            let m = g.mul(cur, cur).unwrap();
                            g.add_scalar(m, 0.1)
                        }
                    };
                }
                g.mean(cur)
            };

            let mut g = Graph::new();
            let loss = build(&mut g, &store, true);
            g.backward(loss).unwrap();
            g.write_grads(&mut store, sid);
            let analytic: Vec<Vec<f64>> = store
                .ids()
                .map(|id| store.get(id).grad.clone().unwrap())
                .collect();
            let numeric = finite_difference_grads(&mut store, 1e-5, |p| {
                let mut g = Graph::new();
                let l = build(&mut g, p, false);
                g.value(l)[0]
            });
            for (a, n) in analytic.iter().zip(&numeric) {
                for (&x1, &y1) in a.iter().zip(n) {
                    let e = grad_rel_error(x1, y1);
                    assert!(e < 1e-4, "seed {seed}: rel err {e} ({x1} vs {y1})");
                }
            }
        }
    }

    #[test]
    fn concat_slice_roundtrip_grads() {
        let mut store = Params::new();
        let sid = next_store_id();
        let a = store.add("a", Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = store.add("b", Tensor::from_rows(&[vec![5.0], vec![6.0]]));
        let mut g = Graph::new();
        let an = g.param(&store, sid, a);
        let bn = g.param(&store, sid, b);
        let cat = g.concat_cols(an, bn).unwrap();
        assert_eq!(g.shape(cat), [2, 3]);
        let right = g.slice_cols(cat, 2, 3).unwrap();
        let s = g.sum(right);
        g.backward(s).unwrap();
        g.write_grads(&mut store, sid);
        assert_eq!(store.get(a).grad.as_deref().unwrap(), &[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(store.get(b).grad.as_deref().unwrap(), &[1.0, 1.0]);
    }
}
