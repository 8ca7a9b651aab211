//! Residual denoiser: `out = x - net(x)`.

use serde::{Deserialize, Serialize};

use crate::conv::KernelGrad;
use crate::error::{Error, Result};
use crate::init::InitScheme;
use crate::manifolds::{ConvStack, StackTrace};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub layers: usize,
    pub channels: usize,
    pub kernel: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            layers: 5,
            channels: 16,
            kernel: 3,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self, path: &str) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::config(format!("{path}.layers"), "must be at least 1"));
        }
        if self.channels == 0 {
            return Err(Error::config(format!("{path}.channels"), "must be at least 1"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config(format!("{path}.kernel"), "must be odd"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    net: ConvStack,
}

impl DenoiserModel {
    pub fn new(net: ConvStack) -> Result<Self> {
        if net.in_channels() != net.out_channels() {
            return Err(Error::invalid("DenoiserModel::new", "net must preserve the channel count"));
        }
        Ok(DenoiserModel { net })
    }

    pub fn random(rng: &mut SeededRng, spec: &ModelSpec, image_channels: usize) -> Result<Self> {
        let net = ConvStack::random(
            rng,
            image_channels,
            spec.channels,
            image_channels,
            spec.layers,
            spec.kernel,
            InitScheme::Kaiming,
        )?;
        DenoiserModel::new(net)
    }

    pub fn net(&self) -> &ConvStack {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut ConvStack {
        &mut self.net
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.sub(&self.net.forward(x)?)
    }

    pub fn forward_traced(&self, x: &Tensor) -> Result<(Tensor, StackTrace)> {
        let (noise, trace) = self.net.forward_traced(x)?;
        Ok((x.sub(&noise)?, trace))
    }

    /// Parameter gradients given `d loss / d output`.
    pub fn param_grads(&self, trace: &StackTrace, upstream: &Tensor) -> Result<Vec<KernelGrad>> {
        Ok(self.net.backward(trace, &upstream.scale(-1.0))?.1)
    }
}
