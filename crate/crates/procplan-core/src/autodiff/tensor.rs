//! Dense row-major f64 tensors and the parameter store.

use crate::rng::Rng;
use serde::{Deserialize, Serialize};

/// A dense 2-D tensor (scalars are `[1,1]`, row vectors `[1,d]`).
///
/// `grad` is populated by [`crate::autodiff::Graph::write_grads`] after a
/// backward pass for tensors with `requires_grad`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    #[serde(skip)]
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data length must equal rows*cols");
        Tensor {
            rows,
            cols,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(1, 1, vec![v])
    }

    pub fn row(data: Vec<f64>) -> Self {
        Tensor::new(1, data.len(), data)
    }

    /// Stacks equal-length rows into a `[n, d]` tensor.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty(), "from_rows needs at least one row");
        let d = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            assert_eq!(r.len(), d, "ragged rows");
            data.extend_from_slice(r);
        }
        Tensor::new(rows.len(), d, data)
    }

    /// Gaussian init scaled by 1/sqrt(fan_in); the usual dense-layer start.
    pub fn randn_scaled(rows: usize, cols: usize, fan_in: usize, rng: &mut Rng) -> Self {
        let scale = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.normal() * scale).collect();
        Tensor::new(rows, cols, data)
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

/// Identifier of a parameter tensor inside a [`Params`] store.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Named parameter tensors for one learned component.
///
/// Graphs borrow values in by id and write gradients back out; the optimizer
/// mutates values in place. Names are stable and used by the checkpoint file.
#[derive(Clone, Debug, Default)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name {name}"
        );
        let mut t = tensor;
        t.requires_grad = true;
        self.names.push(name.to_string());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            match &mut t.grad {
                Some(g) => g.iter_mut().for_each(|x| *x = 0.0),
                None => t.grad = Some(vec![0.0; t.data.len()]),
            }
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) {
        let t = &mut self.tensors[id.0];
        let buf = t.grad.get_or_insert_with(|| vec![0.0; t.data.len()]);
        debug_assert_eq!(buf.len(), g.len());
        for (b, v) in buf.iter_mut().zip(g) {
            *b += v;
        }
    }

    /// Euclidean norm over all stored gradients.
    pub fn grad_norm(&self) -> f64 {
        let mut acc = 0.0;
        for t in &self.tensors {
            if let Some(g) = &t.grad {
                acc += g.iter().map(|v| v * v).sum::<f64>();
            }
        }
        acc.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_rows_layout() {
        let t = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(t.shape(), [2, 2]);
        assert_eq!(t.data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn params_names_and_grads() {
        let mut p = Params::new();
        let a = p.add("w", Tensor::zeros(2, 2));
        assert_eq!(p.name(a), "w");
        p.zero_grad();
        p.accumulate_grad(a, &[1.0, 2.0, 3.0, 4.0]);
        p.accumulate_grad(a, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.get(a).grad.as_deref().unwrap(), &[2.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    #[should_panic]
    fn duplicate_name_panics() {
        let mut p = Params::new();
        p.add("w", Tensor::zeros(1, 1));
        p.add("w", Tensor::zeros(1, 1));
    }
}
