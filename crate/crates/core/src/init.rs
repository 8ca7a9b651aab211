//! Gaussian Kaiming / Xavier kernel initialization and the two weight
//! refresh policies for loss networks.

use serde::{Deserialize, Serialize};

use crate::conv::ConvKernel;
use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    /// `std = sqrt(2 / fan_in)`
    #[default]
    Kaiming,
    /// `std = sqrt(2 / (fan_in + fan_out))`
    Xavier,
}

impl InitScheme {
    /// Standard deviation for a kernel shaped `(out, in, kh, kw)`.
    pub fn std(&self, out_channels: usize, in_channels: usize, kh: usize, kw: usize) -> f64 {
        let fan_in = (in_channels * kh * kw) as f64;
        let fan_out = (out_channels * kh * kw) as f64;
        match self {
            InitScheme::Kaiming => (2.0 / fan_in).sqrt(),
            InitScheme::Xavier => (2.0 / (fan_in + fan_out)).sqrt(),
        }
    }
}

/// When loss-network weights are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReinitPolicy {
    /// Once before training.
    #[default]
    Once,
    /// At the start of every epoch ("epochR").
    EachEpoch,
}

/// Draws a `(out, in, k, k)` kernel from `Normal(0, std^2)` with zero bias.
pub fn init_kernel(
    rng: &mut SeededRng,
    out_channels: usize,
    in_channels: usize,
    size: usize,
    scheme: InitScheme,
) -> Result<ConvKernel> {
    let std = scheme.std(out_channels, in_channels, size, size);
    let shape = Shape::new(out_channels, in_channels, size, size);
    let values = rng.normal_sample(shape.numel()).into_iter().map(|v| v * std).collect();
    ConvKernel::new(Tensor::from_vec(shape, values)?, Some(vec![0.0; out_channels]))
}
