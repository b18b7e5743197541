//! Reverse-mode differentiation over a linear tape of recorded kernels.
//!
//! Every operation executed through a recording [`Tape`] appends one node
//! holding its output and whatever the backward pass needs. [`Tape::backward`]
//! walks the nodes in reverse, visiting each once, and accumulates gradients
//! additively when a value feeds several consumers.
//!
//! A tape built with [`Tape::no_grad`] runs the same kernels without keeping
//! anything, so intermediates are dropped as soon as the caller lets go of
//! them.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::ops::{self, activation, conv, norm, pool, upsample, BnConfig, ConvSpec, Mode};
use crate::ops::norm::BnSaved;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const UNTRACKED: usize = usize::MAX;

/// Handle to a value produced on a tape.
#[derive(Clone, Debug)]
pub struct Var<T> {
    id: usize,
    requires_grad: bool,
    value: Arc<Tensor<T>>,
}

impl<T: Scalar> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shared(&self) -> Arc<Tensor<T>> {
        Arc::clone(&self.value)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: usize,
        weight: usize,
        bias: Option<usize>,
        spec: ConvSpec,
    },
    MaxPool {
        input: usize,
        argmax: Vec<usize>,
    },
    AvgPool {
        input: usize,
        factor: usize,
    },
    Upsample {
        input: usize,
        factor: usize,
    },
    Prelu {
        input: usize,
        alpha: usize,
    },
    BatchNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        saved: BnSaved,
    },
    Concat {
        inputs: Vec<usize>,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sum {
        input: usize,
    },
    WeightedSum {
        input: usize,
        weights: Arc<Tensor<T>>,
    },
    Select {
        input: usize,
        index: usize,
    },
    CrossEntropy {
        logits: usize,
        grad: Tensor<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Arc<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Operation recorder. Confined to one thread.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    recording: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every leaf recorded on a tape.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf, or `None` if it did not influence the loss.
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, zero-filled when it did not influence the loss.
    pub fn wrt(&self, var: &Var<T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A tape that evaluates without recording; `backward` is unavailable.
    pub fn no_grad() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of recorded operations, leaves included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var<T> {
        self.push_shared(Arc::new(value), requires_grad, op)
    }

    fn push_shared(&mut self, value: Arc<Tensor<T>>, requires_grad: bool, op: Op<T>) -> Var<T> {
        if !self.recording {
            return Var {
                id: UNTRACKED,
                requires_grad: false,
                value,
            };
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            value: Arc::clone(&value),
            requires_grad,
            op,
        });
        Var {
            id,
            requires_grad,
            value,
        }
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var<T> {
        self.push(value, true, Op::Leaf)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var<T> {
        self.push(value, false, Op::Leaf)
    }

    /// A leaf sharing storage with the caller (used for parameters).
    pub fn leaf_shared(&mut self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var<T> {
        self.push_shared(value, requires_grad, Op::Leaf)
    }

    pub fn conv2d(
        &mut self,
        input: &Var<T>,
        weight: &Var<T>,
        bias: Option<&Var<T>>,
        spec: &ConvSpec,
    ) -> Result<Var<T>> {
        let out = ops::conv2d(input.value(), weight.value(), bias.map(|b| b.value()), spec)?;
        let rg = input.requires_grad || weight.requires_grad || bias.is_some_and(|b| b.requires_grad);
        Ok(self.push(
            out,
            rg,
            Op::Conv2d {
                input: input.id,
                weight: weight.id,
                bias: bias.map(|b| b.id),
                spec: *spec,
            },
        ))
    }

    pub fn maxpool2x2(&mut self, input: &Var<T>) -> Result<Var<T>> {
        let (out, argmax) = pool::maxpool2x2(input.value())?;
        let argmax = if self.recording { argmax } else { Vec::new() };
        Ok(self.push(
            out,
            input.requires_grad,
            Op::MaxPool {
                input: input.id,
                argmax,
            },
        ))
    }

    pub fn avgpool(&mut self, input: &Var<T>, factor: usize) -> Result<Var<T>> {
        let out = pool::avgpool(input.value(), factor)?;
        Ok(self.push(
            out,
            input.requires_grad,
            Op::AvgPool {
                input: input.id,
                factor,
            },
        ))
    }

    pub fn upsample_bilinear(&mut self, input: &Var<T>, factor: usize) -> Result<Var<T>> {
        let out = upsample::bilinear_upsample(input.value(), factor)?;
        Ok(self.push(
            out,
            input.requires_grad,
            Op::Upsample {
                input: input.id,
                factor,
            },
        ))
    }

    pub fn prelu(&mut self, input: &Var<T>, alpha: &Var<T>) -> Result<Var<T>> {
        let out = activation::prelu(input.value(), alpha.value())?;
        Ok(self.push(
            out,
            input.requires_grad || alpha.requires_grad,
            Op::Prelu {
                input: input.id,
                alpha: alpha.id,
            },
        ))
    }

    /// Batch normalization. In train mode the returned [`BnSaved`] carries
    /// the batch statistics the caller should fold into its running buffers.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        input: &Var<T>,
        gamma: &Var<T>,
        beta: &Var<T>,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        mode: Mode,
        cfg: BnConfig,
    ) -> Result<(Var<T>, BnSaved)> {
        let (out, saved) = norm::batch_norm(
            input.value(),
            gamma.value(),
            beta.value(),
            running_mean,
            running_var,
            mode,
            cfg,
        )?;
        let rg = input.requires_grad || gamma.requires_grad || beta.requires_grad;
        let var = self.push(
            out,
            rg,
            Op::BatchNorm {
                input: input.id,
                gamma: gamma.id,
                beta: beta.id,
                saved: saved.clone(),
            },
        );
        Ok((var, saved))
    }

    pub fn concat(&mut self, inputs: &[&Var<T>]) -> Result<Var<T>> {
        let values: Vec<&Tensor<T>> = inputs.iter().map(|v| v.value()).collect();
        let out = ops::concat_channels(&values)?;
        Ok(self.push(
            out,
            inputs.iter().any(|v| v.requires_grad),
            Op::Concat {
                inputs: inputs.iter().map(|v| v.id).collect(),
            },
        ))
    }

    pub fn add(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let mut out = a.value().clone();
        out.add_assign(b.value())?;
        Ok(self.push(
            out,
            a.requires_grad || b.requires_grad,
            Op::Add { a: a.id, b: b.id },
        ))
    }

    /// Sum of all elements, as a `[1, 1, 1, 1]` tensor.
    pub fn sum(&mut self, input: &Var<T>) -> Var<T> {
        let s = input.value().data().iter().copied().sum::<T>();
        self.push(
            Tensor::scalar(s),
            input.requires_grad,
            Op::Sum { input: input.id },
        )
    }

    /// `sum(input * weights)` for a constant weight tensor of the same shape.
    pub fn weighted_sum(&mut self, input: &Var<T>, weights: &Tensor<T>) -> Result<Var<T>> {
        if weights.shape() != input.shape() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{:?} vs {:?}", weights.shape(), input.shape()),
            ));
        }
        let s = input
            .value()
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| a * b)
            .sum::<T>();
        Ok(self.push(
            Tensor::scalar(s),
            input.requires_grad,
            Op::WeightedSum {
                input: input.id,
                weights: Arc::new(weights.clone()),
            },
        ))
    }

    /// The single element at `[n, c, y, x]`, as a scalar.
    pub fn select(&mut self, input: &Var<T>, index: [usize; 4]) -> Result<Var<T>> {
        let shape = input.shape();
        if index.iter().zip(shape).any(|(&i, e)| i >= e) {
            return Err(Error::OutOfRange(format!(
                "index {index:?} outside shape {shape:?}"
            )));
        }
        let flat = input.value().offset(index[0], index[1], index[2], index[3]);
        let v = input.value().data()[flat];
        Ok(self.push(
            Tensor::scalar(v),
            input.requires_grad,
            Op::Select {
                input: input.id,
                index: flat,
            },
        ))
    }

    /// Mean softmax cross-entropy over non-ignored pixels, as a scalar.
    pub fn cross_entropy(&mut self, logits: &Var<T>, labels: &LabelMap, ignore: u8) -> Result<Var<T>> {
        let (loss, grad) = ops::cross_entropy(logits.value(), labels, ignore)?;
        let grad = if self.recording { grad } else { Tensor::zeros([0, 0, 0, 0]) };
        Ok(self.push(
            Tensor::scalar(T::of(loss)),
            logits.requires_grad,
            Op::CrossEntropy {
                logits: logits.id,
                grad,
            },
        ))
    }

    /// Sign pattern of every PReLU input and the winners of every max-pool
    /// window. Two evaluations with equal fingerprints lie on the same smooth
    /// piece of the function, which finite-difference checks rely on.
    pub fn nonsmooth_fingerprint(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Prelu { input, .. } => out.extend(
                    self.nodes[*input]
                        .value
                        .data()
                        .iter()
                        .map(|v| usize::from(*v < T::zero())),
                ),
                Op::MaxPool { argmax, .. } => out.extend_from_slice(argmax),
                _ => {}
            }
        }
        out
    }

    /// Differentiate the scalar `loss` with respect to every recorded leaf.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        if !self.recording || loss.id == UNTRACKED {
            return Err(Error::Autodiff(
                "backward needs a value recorded on a gradient tape".into(),
            ));
        }
        if loss.value().numel() != 1 {
            return Err(Error::Autodiff(format!(
                "backward seed must be a scalar, got shape {:?}",
                loss.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(loss.shape(), T::one()));
        for id in (0..=loss.id).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
        }
        // only leaf gradients remain meaningful
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    fn value(&self, id: usize) -> &Tensor<T> {
        &self.nodes[id].value
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut acc = |id: usize, t: Tensor<T>| -> Result<()> {
            match &mut grads[id] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => {
                    *slot = Some(t);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            } => {
                if self.wants(*input) {
                    let gi = conv::conv2d_grad_input(g, self.value(*weight), spec, self.value(*input).shape())?;
                    acc(*input, gi)?;
                }
                if self.wants(*weight) {
                    acc(*weight, conv::conv2d_grad_weight(g, self.value(*input), spec)?)?;
                }
                if let Some(b) = bias {
                    if self.wants(*b) {
                        acc(*b, conv::conv2d_grad_bias(g))?;
                    }
                }
            }
            Op::MaxPool { input, argmax } => {
                acc(*input, pool::maxpool2x2_backward(g, argmax, self.value(*input).shape()))?;
            }
            Op::AvgPool { input, factor } => {
                acc(*input, pool::avgpool_backward(g, *factor, self.value(*input).shape()))?;
            }
            Op::Upsample { input, factor } => {
                acc(
                    *input,
                    upsample::bilinear_upsample_backward(g, *factor, self.value(*input).shape()),
                )?;
            }
            Op::Prelu { input, alpha } => {
                let (gi, ga) = activation::prelu_backward(g, self.value(*input), self.value(*alpha))?;
                if self.wants(*input) {
                    acc(*input, gi)?;
                }
                if self.wants(*alpha) {
                    acc(*alpha, ga.reshape(self.value(*alpha).shape())?)?;
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                saved,
            } => {
                let (gi, gg, gb) = norm::batch_norm_backward(g, self.value(*input), self.value(*gamma), saved);
                if self.wants(*input) {
                    acc(*input, gi)?;
                }
                if self.wants(*gamma) {
                    acc(*gamma, gg.reshape(self.value(*gamma).shape())?)?;
                }
                if self.wants(*beta) {
                    acc(*beta, gb.reshape(self.value(*beta).shape())?)?;
                }
            }
            Op::Concat { inputs } => {
                let widths: Vec<usize> = inputs.iter().map(|&i| self.value(i).c()).collect();
                let parts = ops::concat::split_channels(g, &widths)?;
                for (&i, part) in inputs.iter().zip(parts) {
                    if self.wants(i) {
                        acc(i, part)?;
                    }
                }
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    acc(*a, g.clone())?;
                }
                if self.wants(*b) {
                    acc(*b, g.clone())?;
                }
            }
            Op::Sum { input } => {
                let seed = g.data()[0];
                acc(*input, Tensor::full(self.value(*input).shape(), seed))?;
            }
            Op::WeightedSum { input, weights } => {
                let seed = g.data()[0];
                acc(*input, weights.map(|w| w * seed))?;
            }
            Op::Select { input, index } => {
                let mut t = Tensor::zeros(self.value(*input).shape());
                t.data_mut()[*index] = g.data()[0];
                acc(*input, t)?;
            }
            Op::CrossEntropy { logits, grad } => {
                let seed = g.data()[0];
                acc(*logits, grad.map(|v| v * seed))?;
            }
        }
        Ok(())
    }
}
