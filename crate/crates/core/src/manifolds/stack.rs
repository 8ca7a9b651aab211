//! Plain convolution stacks: `conv -> act -> conv -> ... -> conv`, no
//! activation after the last layer.

use serde::{Deserialize, Serialize};

use crate::conv::{conv2d, conv2d_input_grad, conv2d_kernel_grad, ConvKernel, KernelGrad, Padding};
use crate::error::{Error, Result};
use crate::init::{init_kernel, InitScheme};
use crate::rng::SeededRng;
use crate::tensor::{relu, relu_vjp, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Relu => relu(x),
            Activation::Tanh => x.map(f64::tanh),
        }
    }

    fn vjp(self, pre: &Tensor, upstream: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Relu => relu_vjp(pre, upstream),
            Activation::Tanh => {
                let d = pre.map(|v| 1.0 - v.tanh().powi(2));
                Ok(Tensor::from_raw(
                    d.shape(),
                    d.data().iter().zip(upstream.data()).map(|(a, b)| a * b).collect(),
                ))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvStack {
    layers: Vec<ConvKernel>,
    activation: Activation,
    padding: Padding,
}

/// Intermediate values kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct StackTrace {
    /// Input to each layer.
    inputs: Vec<Tensor>,
    /// Pre-activation output of each layer except the last.
    pre: Vec<Tensor>,
}

impl ConvStack {
    pub fn new(layers: Vec<ConvKernel>, activation: Activation, padding: Padding) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("ConvStack::new", "a stack needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_channels() != pair[1].in_channels() {
                return Err(Error::invalid(
                    "ConvStack::new",
                    format!(
                        "layer emits {} channels but the next expects {}",
                        pair[0].out_channels(),
                        pair[1].in_channels()
                    ),
                ));
            }
        }
        Ok(ConvStack {
            layers,
            activation,
            padding,
        })
    }

    /// `depth` layers mapping `in_c -> hidden -> ... -> hidden -> out_c`.
    #[allow(clippy::too_many_arguments)]
    pub fn random(
        rng: &mut SeededRng,
        in_c: usize,
        hidden: usize,
        out_c: usize,
        depth: usize,
        kernel: usize,
        scheme: InitScheme,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::invalid("ConvStack::random", "depth must be at least 1"));
        }
        let layers = (0..depth)
            .map(|l| {
                let i = if l == 0 { in_c } else { hidden };
                let o = if l + 1 == depth { out_c } else { hidden };
                init_kernel(rng, o, i, kernel, scheme)
            })
            .collect::<Result<Vec<_>>>()?;
        ConvStack::new(layers, Activation::Relu, Padding::Zero)
    }

    pub fn layers(&self) -> &[ConvKernel] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvKernel] {
        &mut self.layers
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.layers[self.layers.len() - 1].out_channels()
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = conv2d(x, &self.layers[0], self.padding)?;
        for k in &self.layers[1..] {
            h = conv2d(&self.activation.apply(&h), k, self.padding)?;
        }
        Ok(h)
    }

    pub fn forward_traced(&self, x: &Tensor) -> Result<(Tensor, StackTrace)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut h = x.clone();
        for (l, k) in self.layers.iter().enumerate() {
            let z = conv2d(&h, k, self.padding)?;
            inputs.push(h);
            if l + 1 == self.layers.len() {
                return Ok((z, StackTrace { inputs, pre }));
            }
            h = self.activation.apply(&z);
            pre.push(z);
        }
        unreachable!("stack has at least one layer")
    }

    /// Gradient with respect to the stack input.
    pub fn input_grad(&self, trace: &StackTrace, upstream: &Tensor) -> Result<Tensor> {
        let mut g = upstream.clone();
        for l in (0..self.layers.len()).rev() {
            g = conv2d_input_grad(trace.inputs[l].shape(), &self.layers[l], &g, self.padding)?;
            if l > 0 {
                g = self.activation.vjp(&trace.pre[l - 1], &g)?;
            }
        }
        Ok(g)
    }

    /// Gradients with respect to the input and every layer's parameters.
    pub fn backward(&self, trace: &StackTrace, upstream: &Tensor) -> Result<(Tensor, Vec<KernelGrad>)> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = upstream.clone();
        for l in (0..self.layers.len()).rev() {
            grads.push(conv2d_kernel_grad(&trace.inputs[l], &self.layers[l], &g, self.padding)?);
            g = conv2d_input_grad(trace.inputs[l].shape(), &self.layers[l], &g, self.padding)?;
            if l > 0 {
                g = self.activation.vjp(&trace.pre[l - 1], &g)?;
            }
        }
        grads.reverse();
        Ok((g, grads))
    }

    /// Smallest distance of any ReLU input from its kink, or infinity for
    /// smooth activations.
    pub fn kink_margin(&self, trace: &StackTrace) -> f64 {
        match self.activation {
            Activation::Tanh => f64::INFINITY,
            Activation::Relu => trace
                .pre
                .iter()
                .flat_map(|t| t.data().iter())
                .fold(f64::INFINITY, |m, v| m.min(v.abs())),
        }
    }
}
