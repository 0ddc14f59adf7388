//! Minimal feed-forward networks with hand-written backpropagation.
//!
//! A [`Network`] is a plain sequence of [`Layer`]s. Forward passes are pure
//! (`&self`); training passes additionally return a [`Tape`] from which
//! [`Network::backward`] produces input and parameter gradients, and from
//! which batch-norm running statistics are folded in explicitly.

mod conv;
mod layer;
mod optim;

pub use conv::{col2im, im2col, ConvGeom};
pub use layer::{BatchNorm, Conv2d, ConvTranspose2d, Layer, Linear, Mode, Tensor};
pub use optim::{Adam, Optimizer, OptimizerKind, Sgd};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use layer::Cache;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Activations recorded by a forward pass.
#[derive(Debug)]
pub struct Tape {
    caches: Vec<Cache>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    /// Inference-mode forward pass.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        self.forward_mode(x, Mode::Eval)
    }

    pub fn forward_mode(&self, x: &Tensor, mode: Mode) -> Tensor {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h, mode, false).0;
        }
        h
    }

    /// Forward pass that records what the backward pass needs.
    pub fn forward_tape(&self, x: &Tensor, mode: Mode) -> (Tensor, Tape) {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = layer.forward(&h, mode, true);
            caches.push(cache);
            h = out;
        }
        (h, Tape { caches })
    }

    /// Gradient with respect to the input, and parameter gradients ordered as [`Network::params`].
    pub fn backward(&self, tape: &Tape, grad_out: &Tensor) -> (Tensor, Vec<Tensor>) {
        assert_eq!(tape.caches.len(), self.layers.len(), "tape from a different network");
        let mut per_layer: Vec<Vec<Tensor>> = self
            .layers
            .iter()
            .map(|l| vec![Tensor::zeros(ndarray::IxDyn(&[0])); l.params().len()])
            .collect();
        let mut g = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            g = layer.backward(&tape.caches[i], &g, &mut per_layer[i]);
        }
        (g, per_layer.into_iter().flatten().collect())
    }

    /// Fold the batch statistics recorded on a training-mode tape into the running averages.
    pub fn update_running_stats(&mut self, tape: &Tape) {
        for (layer, cache) in self.layers.iter_mut().zip(&tape.caches) {
            if let (
                Layer::BatchNorm(bn),
                Cache::Norm { train: true, batch_mean, batch_var_unbiased, .. },
            ) = (layer, cache)
            {
                bn.update_running(batch_mean, batch_var_unbiased);
            }
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Per-sample output shape, or a configuration error naming the first incompatible layer.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut shape = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer.output_shape(&shape).ok_or_else(|| {
                Error::Config(format!("layer {i} ({}) cannot accept input shape {shape:?}", layer_name(layer)))
            })?;
        }
        Ok(shape)
    }

    /// Parameters and buffers keyed `"{prefix}.{layer}.{name}"`.
    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in layer.named_tensors() {
                out.push((format!("{prefix}.{i}.{name}"), t.clone()));
            }
        }
        out
    }

    /// Overwrite every parameter and buffer from `tensors`; shapes must match.
    pub fn load_named(&mut self, prefix: &str, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (name, slot) in layer.named_tensors_mut() {
                let key = format!("{prefix}.{i}.{name}");
                let t = tensors.get(&key).ok_or_else(|| Error::MissingTensor(key.clone()))?;
                if t.shape() != slot.shape() {
                    return Err(Error::Format(format!(
                        "tensor `{key}` has shape {:?}, expected {:?}",
                        t.shape(),
                        slot.shape()
                    )));
                }
                slot.assign(t);
            }
        }
        Ok(())
    }
}

fn layer_name(layer: &Layer) -> &'static str {
    match layer {
        Layer::Linear(_) => "linear",
        Layer::BatchNorm(_) => "batch_norm",
        Layer::Relu => "relu",
        Layer::Tanh => "tanh",
        Layer::UnitNorm => "unit_norm",
        Layer::Reshape(_) => "reshape",
        Layer::Flatten => "flatten",
        Layer::Conv2d(_) => "conv2d",
        Layer::ConvTranspose2d(_) => "conv_transpose2d",
    }
}
