//! Dense-layer building blocks shared by the learned components.

use crate::autodiff::{Graph, NodeId, ParamId, Params, StoreId, Tensor};
use crate::error::Result;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Gaussian scaled by 1/sqrt(fan_in).
    Scaled,
    /// All zeros; used for output heads so fresh models start neutral
    /// (uniform policies, 0.5 discriminators, zero posterior means).
    Zero,
}

/// Weight + bias of one dense layer, registered in a parameter store.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut Params,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut Rng,
    ) -> Self {
        let w = match init {
            Init::Scaled => Tensor::randn_scaled(in_dim, out_dim, in_dim, rng),
            Init::Zero => Tensor::zeros(in_dim, out_dim),
        };
        let b = Tensor::zeros(1, out_dim);
        Linear {
            w: store.add(&format!("{name}.w"), w),
            b: store.add(&format!("{name}.b"), b),
            in_dim,
            out_dim,
        }
    }

    /// Same layer with a custom constant bias start (e.g. a low log-variance).
    pub fn with_bias(
        store: &mut Params,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        bias_value: f64,
        rng: &mut Rng,
    ) -> Self {
        let w = match init {
            Init::Scaled => Tensor::randn_scaled(in_dim, out_dim, in_dim, rng),
            Init::Zero => Tensor::zeros(in_dim, out_dim),
        };
        let mut b = Tensor::zeros(1, out_dim);
        b.fill(bias_value);
        Linear {
            w: store.add(&format!("{name}.w"), w),
            b: store.add(&format!("{name}.b"), b),
            in_dim,
            out_dim,
        }
    }

    /// x·W + b with the layer bound as differentiable leaves.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &Params,
        sid: StoreId,
        x: NodeId,
    ) -> Result<NodeId> {
        let w = g.param(store, sid, self.w);
        let b = g.param(store, sid, self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    /// x·W + b with the layer bound as constants (no gradient).
    pub fn forward_frozen(&self, g: &mut Graph, store: &Params, x: NodeId) -> Result<NodeId> {
        let w = g.frozen(store, self.w);
        let b = g.frozen(store, self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    pub fn forward_with(
        &self,
        g: &mut Graph,
        store: &Params,
        sid: StoreId,
        x: NodeId,
        live: bool,
    ) -> Result<NodeId> {
        if live {
            self.forward(g, store, sid, x)
        } else {
            self.forward_frozen(g, store, x)
        }
    }
}

/// Plain (graph-free) dense evaluation for hot read-only paths.
pub fn linear_eval(store: &Params, layer: &Linear, x: &[f64], rows: usize) -> Vec<f64> {
    let w = store.get(layer.w);
    let b = store.get(layer.b);
    debug_assert_eq!(x.len(), rows * layer.in_dim);
    let mut out = vec![0.0; rows * layer.out_dim];
    crate::autodiff::matmul_into(x, &w.data, rows, layer.in_dim, layer.out_dim, &mut out);
    for i in 0..rows {
        for j in 0..layer.out_dim {
            out[i * layer.out_dim + j] += b.data[j];
        }
    }
    out
}

/// One-hot action row of width `m`.
pub fn one_hot(action: usize, m: usize) -> Vec<f64> {
    debug_assert!(action < m);
    let mut v = vec![0.0; m];
    v[action] = 1.0;
    v
}

/// One-hot rows for a batch of action ids.
pub fn one_hot_rows(actions: &[usize], m: usize) -> Tensor {
    let mut data = vec![0.0; actions.len() * m];
    for (i, &a) in actions.iter().enumerate() {
        debug_assert!(a < m);
        data[i * m + a] = 1.0;
    }
    Tensor::new(actions.len(), m, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::next_store_id;

    #[test]
    fn frozen_and_live_forward_agree() {
        let mut rng = Rng::seed_from(5);
        let mut store = Params::new();
        let sid = next_store_id();
        let lin = Linear::new(&mut store, "l", 3, 2, Init::Scaled, &mut rng);
        let x = Tensor::from_rows(&[rng.normal_vec(3), rng.normal_vec(3)]);

        let mut g1 = Graph::new();
        let xn = g1.constant(&x);
        let y1 = lin.forward(&mut g1, &store, sid, xn).unwrap();

        let mut g2 = Graph::new();
        let xn = g2.constant(&x);
        let y2 = lin.forward_frozen(&mut g2, &store, xn).unwrap();

        assert_eq!(g1.value(y1), g2.value(y2));
        assert_eq!(g1.value(y1), &linear_eval(&store, &lin, &x.data, 2)[..]);
    }

    #[test]
    fn one_hot_rows_layout() {
        let t = one_hot_rows(&[2, 0], 3);
        assert_eq!(t.data, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }
}
