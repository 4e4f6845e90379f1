//! A minimal reverse-mode tape over the primitives in [`ops`](crate::ops).
//!
//! A recording tape keeps every intermediate value and the caches each backward rule
//! needs. An inference tape keeps only values, and intermediates can be dropped early
//! with [`Tape::release`].

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::{self, BnCache, Mode};
use crate::params::{BnLayer, ConvLayer, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T: Scalar> {
    Leaf,
    Conv {
        x: Var,
        layer: ConvLayer,
    },
    BatchNorm {
        x: Var,
        layer: BnLayer,
        cache: BnCache<T>,
    },
    Relu {
        x: Var,
    },
    MaxPool {
        x: Var,
        in_shape: Shape,
        argmax: Vec<u32>,
    },
    Resize {
        x: Var,
        in_shape: Shape,
    },
    Add {
        a: Var,
        b: Var,
    },
    Softmax {
        x: Var,
    },
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Batch statistics observed by a training-mode normalization, pending a running-average update.
#[derive(Clone, Debug)]
pub struct StatUpdate {
    pub layer: BnLayer,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Debug)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    recording: bool,
    stat_updates: Vec<StatUpdate>,
}

/// Gradients returned by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T: Scalar> {
    params: Vec<Option<Tensor<T>>>,
    leaves: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of a leaf created with `requires_grad = true`.
    pub fn var(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(v.0).and_then(Option::as_ref)
    }

    pub fn params(&self) -> &[Option<Tensor<T>>] {
        &self.params
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<T: Scalar> Tape<T> {
    /// Tape that supports [`backward`](Self::backward).
    pub fn recording() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
            stat_updates: Vec::new(),
        }
    }

    /// Forward-only tape.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            recording: false,
            stat_updates: Vec::new(),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let op = if self.recording { op } else { Op::Leaf };
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad: requires_grad && self.recording,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Value of `v`. Panics if it was released.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.nodes[v.0]
            .value
            .as_ref()
            .expect("tape value was released")
    }

    pub fn take_value(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].value.take()
    }

    /// Drops an intermediate on a forward-only tape; no-op while recording.
    pub fn release(&mut self, v: Var) {
        if !self.recording {
            self.nodes[v.0].value = None;
        }
    }

    pub fn conv2d(&mut self, params: &ParamStore<T>, x: Var, layer: ConvLayer) -> Result<Var> {
        let bias = layer.bias.map(|b| params.get(b));
        let out = ops::conv2d(self.value(x), params.get(layer.weight), bias, layer.padding)?;
        Ok(self.push(out, Op::Conv { x, layer }, true))
    }

    pub fn batch_norm(
        &mut self,
        params: &ParamStore<T>,
        x: Var,
        layer: BnLayer,
        mode: Mode,
    ) -> Result<Var> {
        let input = self.value(x);
        let (gamma, beta) = (params.get(layer.gamma), params.get(layer.beta));
        let (out, cache) = match mode {
            Mode::Training => ops::batch_norm_train(input, gamma, beta, layer.epsilon)?,
            Mode::Inference => ops::batch_norm_infer(
                input,
                gamma,
                beta,
                params.get(layer.running_mean),
                params.get(layer.running_var),
                layer.epsilon,
            )?,
        };
        if mode == Mode::Training {
            self.stat_updates.push(StatUpdate {
                layer,
                mean: cache.mean.clone(),
                var: cache.var.clone(),
                count: cache.count,
            });
        }
        Ok(self.push(out, Op::BatchNorm { x, layer, cache }, true))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        let rg = self.requires(x);
        self.push(out, Op::Relu { x }, rg)
    }

    pub fn maxpool2(&mut self, x: Var) -> Var {
        let in_shape = self.value(x).shape();
        let pooled = ops::maxpool2(self.value(x));
        let rg = self.requires(x);
        let argmax = if self.recording {
            pooled.argmax
        } else {
            Vec::new()
        };
        self.push(
            pooled.output,
            Op::MaxPool {
                x,
                in_shape,
                argmax,
            },
            rg,
        )
    }

    pub fn resize(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let in_shape = self.value(x).shape();
        let out = ops::bilinear_resize(self.value(x), h, w)?;
        let rg = self.requires(x);
        Ok(self.push(out, Op::Resize { x, in_shape }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let out = ops::softmax_channels(self.value(x));
        let rg = self.requires(x);
        self.push(out, Op::Softmax { x }, rg)
    }

    /// Batch statistics gathered by training-mode normalizations since the last call.
    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate> {
        core::mem::take(&mut self.stat_updates)
    }

    /// Back-propagates `seed` (the gradient of some scalar w.r.t. `root`) through the tape.
    pub fn backward(
        mut self,
        params: &ParamStore<T>,
        root: Var,
        seed: Tensor<T>,
    ) -> Result<Gradients<T>> {
        if !self.recording {
            return Err(Error::Other(
                "backward called on a forward-only tape".into(),
            ));
        }
        let root_shape = self.value(root).shape();
        if seed.shape() != root_shape {
            return Err(Error::Shape {
                op: "backward seed",
                expected: root_shape,
                actual: seed.shape(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        let mut param_grads: Vec<Option<Tensor<T>>> = vec![None; params.len()];
        let mut leaves: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed);
        self.nodes.truncate(root.0 + 1);

        while let Some(node) = self.nodes.pop() {
            let i = self.nodes.len();
            let Some(g) = grads[i].take() else { continue };
            match node.op {
                Op::Leaf => {
                    if node.requires_grad {
                        leaves[i] = Some(g);
                    }
                }
                Op::Conv { x, layer } => {
                    let need_input = self.requires(x);
                    let cg = ops::conv2d_backward(
                        self.value(x),
                        params.get(layer.weight),
                        layer.padding,
                        &g,
                        need_input,
                    )?;
                    accumulate(&mut param_grads[layer.weight.0], cg.weight);
                    if let Some(b) = layer.bias {
                        accumulate(&mut param_grads[b.0], cg.bias);
                    }
                    if let Some(gi) = cg.input {
                        accumulate(&mut grads[x.0], gi);
                    }
                }
                Op::BatchNorm { x, layer, cache } => {
                    let (gx, gg, gb) =
                        ops::batch_norm_backward(&cache, params.get(layer.gamma), &g)?;
                    accumulate(&mut param_grads[layer.gamma.0], gg);
                    accumulate(&mut param_grads[layer.beta.0], gb);
                    if self.requires(x) {
                        accumulate(&mut grads[x.0], gx);
                    }
                }
                Op::Relu { x } => {
                    let gx = ops::relu_backward(self.value(x), &g)?;
                    accumulate(&mut grads[x.0], gx);
                }
                Op::MaxPool {
                    x,
                    in_shape,
                    argmax,
                } => {
                    let gx = ops::maxpool2_backward(in_shape, &argmax, &g)?;
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Resize { x, in_shape } => {
                    let gx = ops::bilinear_resize_backward(in_shape, &g)?;
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Add { a, b } => {
                    if self.requires(b) {
                        accumulate(&mut grads[b.0], g.clone());
                    }
                    if self.requires(a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Softmax { x } => {
                    let probs = node.value.as_ref().expect("recorded value");
                    let gx = ops::softmax_backward(probs, &g)?;
                    accumulate(&mut grads[x.0], gx);
                }
            }
        }
        Ok(Gradients {
            params: param_grads,
            leaves,
        })
    }
}
