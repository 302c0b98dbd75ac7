//! Reverse-mode automatic differentiation over a recorded list of ops.
//!
//! Every op appends a node holding its output value. [`Tape::backward`]
//! walks the nodes in reverse and adds into the gradient buffers, so calling
//! it twice without [`Tape::zero_grads`] doubles every gradient.

use super::ops::{self, Padding};
use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, stride: usize, padding: Padding },
    Relu(Var),
    Add(Var, Var),
    Concat(Var, Var),
    Upsample2(Var),
    AvgPool(Var),
    Fc { x: Var, w: Var, b: Var },
    Reshape(Var),
    Channelwise { x: Var, kern: Var, k: usize },
    CrossChannel { x: Var, w: Var, c_out: usize },
    DynamicFull { x: Var, kern: Var, k: usize, c_out: usize },
    SoftmaxCe { logits: Var, grad: Tensor },
}

#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check(&self, v: Var) -> Result<(), TensorError> {
        if v.0 < self.values.len() {
            Ok(())
        } else {
            Err(TensorError::UnknownVar(v.0))
        }
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var, TensorError> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        self.values.push(value);
        self.ops.push(op);
        self.grads.push(None);
        Ok(Var(self.values.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.values.push(value);
        self.ops.push(Op::Leaf);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    /// Accumulated gradient of `v`, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: Padding) -> Result<Var, TensorError> {
        for v in [x, w, b] {
            self.check(v)?;
        }
        let out = ops::conv2d(self.value(x), self.value(w), self.value(b), stride, padding)?;
        self.push("conv2d", out, Op::Conv2d { x, w, b, stride, padding })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        let out = ops::relu(self.value(x));
        self.push("relu", out, Op::Relu(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check(a)?;
        self.check(b)?;
        let out = self.value(a).add(self.value(b))?;
        self.push("add", out, Op::Add(a, b))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check(a)?;
        self.check(b)?;
        let out = ops::concat_channels(self.value(a), self.value(b))?;
        self.push("concat", out, Op::Concat(a, b))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        let out = ops::upsample2(self.value(x))?;
        self.push("upsample2", out, Op::Upsample2(x))
    }

    pub fn avg_pool_global(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        let out = ops::avg_pool_global(self.value(x))?;
        self.push("avg_pool_global", out, Op::AvgPool(x))
    }

    pub fn fully_connected(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        for v in [x, w, b] {
            self.check(v)?;
        }
        let out = ops::fully_connected(self.value(x), self.value(w), self.value(b))?;
        self.push("fully_connected", out, Op::Fc { x, w, b })
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var, TensorError> {
        self.check(x)?;
        let out = self.value(x).clone().reshape(dims)?;
        self.push("reshape", out, Op::Reshape(x))
    }

    pub fn channelwise_dynamic(&mut self, x: Var, kern: Var, k: usize) -> Result<Var, TensorError> {
        self.check(x)?;
        self.check(kern)?;
        let out = ops::channelwise_dynamic(self.value(x), self.value(kern), k)?;
        self.push("channelwise_dynamic", out, Op::Channelwise { x, kern, k })
    }

    pub fn cross_channel(&mut self, x: Var, w: Var, c_out: usize) -> Result<Var, TensorError> {
        self.check(x)?;
        self.check(w)?;
        let out = ops::cross_channel(self.value(x), self.value(w), c_out)?;
        self.push("cross_channel", out, Op::CrossChannel { x, w, c_out })
    }

    pub fn dynamic_full(&mut self, x: Var, kern: Var, k: usize, c_out: usize) -> Result<Var, TensorError> {
        self.check(x)?;
        self.check(kern)?;
        let out = ops::dynamic_full(self.value(x), self.value(kern), k, c_out)?;
        self.push("dynamic_full", out, Op::DynamicFull { x, kern, k, c_out })
    }

    /// Scalar weighted cross-entropy; see [`ops::softmax_ce`].
    pub fn softmax_ce(&mut self, logits: Var, labels: &[u8], class_weights: &[f64], ignore: Option<u8>) -> Result<Var, TensorError> {
        self.check(logits)?;
        let (loss, grad) = ops::softmax_ce(self.value(logits), labels, class_weights, ignore)?;
        self.push("softmax_ce", Tensor::scalar(loss), Op::SoftmaxCe { logits, grad })
    }

    fn accumulate(&mut self, v: Var, g: Tensor) -> Result<(), TensorError> {
        match &mut self.grads[v.0] {
            Some(acc) => {
                acc.check_same("backward", &g)?;
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    /// Backpropagates from `root`, seeding its gradient with ones (the
    /// derivative of the sum of its entries).
    pub fn backward(&mut self, root: Var) -> Result<(), TensorError> {
        if self.values.is_empty() {
            return Err(TensorError::BackwardBeforeForward);
        }
        self.check(root)?;
        let seed = Tensor::filled(self.values[root.0].dims(), 1.0);
        self.backward_with(root, seed)
    }

    /// Backpropagates an explicit upstream gradient for `root`.
    pub fn backward_with(&mut self, root: Var, seed: Tensor) -> Result<(), TensorError> {
        if self.values.is_empty() {
            return Err(TensorError::BackwardBeforeForward);
        }
        self.check(root)?;
        self.values[root.0].check_same("backward", &seed)?;
        let mut pending: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        pending[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            let mut send = |v: Var, t: Tensor| -> Result<(), TensorError> {
                match &mut pending[v.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(t.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(t),
                }
                Ok(())
            };
            let val = &self.values;
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Conv2d { x, w, b, stride, padding } => {
                    let (gx, gw, gb) = ops::conv2d_backward(&val[x.0], &val[w.0], &val[b.0], *stride, *padding, &g)?;
                    send(*x, gx)?;
                    send(*w, gw)?;
                    send(*b, gb)?;
                }
                Op::Relu(x) => send(*x, ops::relu_backward(&val[x.0], &g))?,
                Op::Add(a, b) => {
                    send(*a, g.clone())?;
                    send(*b, g.clone())?;
                }
                Op::Concat(a, b) => {
                    let (ga, gb) = ops::concat_channels_backward(val[a.0].dims()[2], val[b.0].dims()[2], &g)?;
                    send(*a, ga)?;
                    send(*b, gb)?;
                }
                Op::Upsample2(x) => send(*x, ops::upsample2_backward(val[x.0].dims(), &g)?)?,
                Op::AvgPool(x) => send(*x, ops::avg_pool_global_backward(&val[x.0], &g)?)?,
                Op::Fc { x, w, b } => {
                    let (gx, gw, gb) = ops::fully_connected_backward(&val[x.0], &val[w.0], &val[b.0], &g)?;
                    send(*x, gx)?;
                    send(*w, gw)?;
                    send(*b, gb)?;
                }
                Op::Reshape(x) => send(*x, g.clone().reshape(val[x.0].dims())?)?,
                Op::Channelwise { x, kern, k } => {
                    let (gx, gk) = ops::channelwise_dynamic_backward(&val[x.0], &val[kern.0], *k, &g)?;
                    send(*x, gx)?;
                    send(*kern, gk)?;
                }
                Op::CrossChannel { x, w, c_out } => {
                    let (gx, gw) = ops::cross_channel_backward(&val[x.0], &val[w.0], *c_out, &g)?;
                    send(*x, gx)?;
                    send(*w, gw)?;
                }
                Op::DynamicFull { x, kern, k, c_out } => {
                    let (gx, gk) = ops::dynamic_full_backward(&val[x.0], &val[kern.0], *k, *c_out, &g)?;
                    send(*x, gx)?;
                    send(*kern, gk)?;
                }
                Op::SoftmaxCe { logits, grad } => send(*logits, grad.scale(g.data()[0]))?,
            }
            self.accumulate(Var(i), g)?;
        }
        Ok(())
    }
}
