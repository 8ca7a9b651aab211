//! Central difference convolution.
//!
//! Blending a central-difference convolution with a vanilla one,
//!
//! ```text
//! y(p0) = theta * sum w(pn) (x(p0 + pn) - x(p0)) + (1 - theta) * sum w(pn) x(p0 + pn)
//!       = sum w(pn) x(p0 + pn) - theta * x(p0) * sum w(pn)
//! ```
//!
//! The second form is what runs: a vanilla convolution plus a 1x1 term whose
//! weights are the kernel's tap sums scaled by `-theta`.

use crate::conv::{conv2d, conv2d_input_grad, ConvKernel, Padding};
use crate::error::{Error, Result};
use crate::init::{init_kernel, InitScheme};
use crate::rng::SeededRng;
use crate::tensor::{relu, relu_vjp, Tensor};

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::invalid("cdc_layer", format!("theta must lie in [0, 1], got {theta}")));
    }
    Ok(())
}

/// `out[o] -= theta * sum_i S[o][i] * x[i]` pointwise, or its adjoint when
/// `transpose` is set.
fn central_term(x: &Tensor, k: &ConvKernel, theta: f64, out: &mut Tensor, transpose: bool) {
    let sums = k.tap_sums();
    let (oc, ic) = (k.out_channels(), k.in_channels());
    let s = x.shape();
    let (xc, yc) = if transpose { (oc, ic) } else { (ic, oc) };
    let plane = s.plane();
    let src = x.data();
    let dst = out.data_mut();
    for n in 0..s.n {
        for a in 0..yc {
            let d = &mut dst[(n * yc + a) * plane..(n * yc + a + 1) * plane];
            for b in 0..xc {
                let sum = if transpose { sums[b * ic + a] } else { sums[a * ic + b] };
                let coef = -theta * sum;
                if coef == 0.0 {
                    continue;
                }
                let v = &src[(n * xc + b) * plane..(n * xc + b + 1) * plane];
                for (o, i) in d.iter_mut().zip(v) {
                    *o += coef * i;
                }
            }
        }
    }
}

pub fn cdc_layer(x: &Tensor, k: &ConvKernel, theta: f64) -> Result<Tensor> {
    check_theta(theta)?;
    let mut out = conv2d(x, k, Padding::Zero)?;
    if theta != 0.0 {
        central_term(x, k, theta, &mut out, false);
    }
    Ok(out)
}

pub fn cdc_layer_input_grad(x: &Tensor, k: &ConvKernel, theta: f64, upstream: &Tensor) -> Result<Tensor> {
    check_theta(theta)?;
    let mut g = conv2d_input_grad(x.shape(), k, upstream, Padding::Zero)?;
    if theta != 0.0 {
        central_term(upstream, k, theta, &mut g, true);
    }
    Ok(g)
}

/// Stack of CDC layers sharing one `theta`, ReLU between layers.
#[derive(Clone, Debug, PartialEq)]
pub struct CdcNet {
    layers: Vec<ConvKernel>,
    theta: f64,
}

#[derive(Clone, Debug)]
pub struct CdcTrace {
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
}

impl CdcNet {
    pub fn new(layers: Vec<ConvKernel>, theta: f64) -> Result<Self> {
        check_theta(theta)?;
        if layers.is_empty() {
            return Err(Error::invalid("CdcNet::new", "need at least one layer"));
        }
        if layers.windows(2).any(|p| p[0].out_channels() != p[1].in_channels()) {
            return Err(Error::invalid("CdcNet::new", "layer channel counts do not chain"));
        }
        Ok(CdcNet { layers, theta })
    }

    pub fn random(
        rng: &mut SeededRng,
        image_channels: usize,
        channels: usize,
        depth: usize,
        kernel: usize,
        theta: f64,
        scheme: InitScheme,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::invalid("CdcNet::random", "depth must be at least 1"));
        }
        let layers = (0..depth)
            .map(|l| {
                let i = if l == 0 { image_channels } else { channels };
                init_kernel(rng, channels, i, kernel, scheme)
            })
            .collect::<Result<Vec<_>>>()?;
        CdcNet::new(layers, theta)
    }

    pub fn layers(&self) -> &[ConvKernel] {
        &self.layers
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(x)?.0)
    }

    pub fn forward_traced(&self, x: &Tensor) -> Result<(Tensor, CdcTrace)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::new();
        let mut h = x.clone();
        for (l, k) in self.layers.iter().enumerate() {
            let z = cdc_layer(&h, k, self.theta)?;
            inputs.push(h);
            if l + 1 == self.layers.len() {
                return Ok((z, CdcTrace { inputs, pre }));
            }
            h = relu(&z);
            pre.push(z);
        }
        unreachable!("net has at least one layer")
    }

    pub fn input_grad(&self, trace: &CdcTrace, upstream: &Tensor) -> Result<Tensor> {
        let mut g = upstream.clone();
        for l in (0..self.layers.len()).rev() {
            g = cdc_layer_input_grad(&trace.inputs[l], &self.layers[l], self.theta, &g)?;
            if l > 0 {
                g = relu_vjp(&trace.pre[l - 1], &g)?;
            }
        }
        Ok(g)
    }

    pub fn kink_margin(&self, trace: &CdcTrace) -> f64 {
        trace
            .pre
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}
