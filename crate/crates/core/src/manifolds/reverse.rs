//! Reverse filtering by fixed-point iteration.
//!
//! Given a smoothing filter `f` and an observation `y`, iterate
//!
//! ```text
//! x0   = y
//! xk+1 = xk + y - f(xk)
//! ```
//!
//! Successive differences obey `xk+1 - xk = (I - f)(xk - xk-1)`. With
//! circular padding `f` is diagonalised by the 2-D DFT, so the best
//! contraction constant of `I - f` is `max |1 - lambda|` over the filter's
//! eigenvalues `lambda`, which [`contraction_coefficient`] computes exactly.
//!
//! The filter here is a convex mixture of normalized Gaussians. Only the
//! mixture weights are random.

use std::f64::consts::TAU;

use crate::conv::{depthwise, depthwise_input_grad, ConvKernel, Padding};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Shape, Tensor};

/// Normalized, truncated Gaussian kernels of side `2 * ceil(3 sigma) + 1`,
/// one per scale.
pub fn gaussian_bank(sigmas: &[f64]) -> Result<Vec<ConvKernel>> {
    sigmas.iter().map(|&s| gaussian_kernel(s)).collect()
}

pub fn gaussian_kernel(sigma: f64) -> Result<ConvKernel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("gaussian_bank", format!("sigma must be positive, got {sigma}")));
    }
    let r = (3.0 * sigma).ceil() as usize;
    let side = 2 * r + 1;
    let mut w: Vec<f64> = (0..side * side)
        .map(|i| {
            let dy = (i / side) as f64 - r as f64;
            let dx = (i % side) as f64 - r as f64;
            (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    ConvKernel::new(Tensor::from_vec(Shape::new(1, 1, side, side), w)?, None)
}

/// Sums single-channel kernels of possibly different sizes, centre-aligned.
fn mix_kernels(kernels: &[ConvKernel], weights: &[f64]) -> Result<ConvKernel> {
    let side = kernels.iter().map(|k| k.size().0).max().unwrap_or(1);
    let mut out = vec![0.0; side * side];
    for (k, &m) in kernels.iter().zip(weights) {
        let ks = k.size().0;
        let off = (side - ks) / 2;
        for y in 0..ks {
            for x in 0..ks {
                out[(y + off) * side + x + off] += m * k.weights().data()[y * ks + x];
            }
        }
    }
    ConvKernel::new(Tensor::from_vec(Shape::new(1, 1, side, side), out)?, None)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReverseNet {
    sigmas: Vec<f64>,
    mix_weights: Vec<f64>,
    filter: ConvKernel,
    iterations: usize,
}

impl ReverseNet {
    /// Mixture of Gaussians at `sigmas` with the given convex weights.
    pub fn new(sigmas: Vec<f64>, mix_weights: Vec<f64>, iterations: usize) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(Error::invalid("ReverseNet::new", "need at least one sigma"));
        }
        if mix_weights.len() != sigmas.len() {
            return Err(Error::invalid("ReverseNet::new", "one mix weight per sigma"));
        }
        if mix_weights.iter().any(|&w| !(w > 0.0)) || (mix_weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("ReverseNet::new", "mix weights must be positive and sum to 1"));
        }
        let filter = mix_kernels(&gaussian_bank(&sigmas)?, &mix_weights)?;
        ReverseNet::check_iterations(iterations)?;
        Ok(ReverseNet {
            sigmas,
            mix_weights,
            filter,
            iterations,
        })
    }

    /// Uniform mixture.
    pub fn uniform(sigmas: Vec<f64>, iterations: usize) -> Result<Self> {
        let w = vec![1.0 / sigmas.len().max(1) as f64; sigmas.len()];
        ReverseNet::new(sigmas, w, iterations)
    }

    /// Mixture weights are the softmax of standard normal draws.
    pub fn random(rng: &mut SeededRng, sigmas: Vec<f64>, iterations: usize) -> Result<Self> {
        let logits = rng.normal_sample(sigmas.len());
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        let w: Vec<f64> = exp.iter().map(|e| e / total).collect();
        ReverseNet::new(sigmas, w, iterations)
    }

    /// Arbitrary single-channel filter, for analysis.
    pub fn from_filter(filter: ConvKernel, iterations: usize) -> Result<Self> {
        if filter.in_channels() != 1 || filter.out_channels() != 1 {
            return Err(Error::invalid("ReverseNet::from_filter", "filter must be 1x1xkxk"));
        }
        ReverseNet::check_iterations(iterations)?;
        Ok(ReverseNet {
            sigmas: Vec::new(),
            mix_weights: Vec::new(),
            filter,
            iterations,
        })
    }

    fn check_iterations(iterations: usize) -> Result<()> {
        if iterations == 0 {
            return Err(Error::invalid("reverse_filter", "iterations must be at least 1"));
        }
        Ok(())
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn mix_weights(&self) -> &[f64] {
        &self.mix_weights
    }

    pub fn filter(&self) -> &ConvKernel {
        &self.filter
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn with_iterations(mut self, iterations: usize) -> Result<Self> {
        ReverseNet::check_iterations(iterations)?;
        self.iterations = iterations;
        Ok(self)
    }

    /// The smoothing filter `f`, applied per channel with circular padding.
    pub fn smooth(&self, x: &Tensor) -> Result<Tensor> {
        depthwise(x, &self.filter, Padding::Circular)
    }

    /// All iterates `[x0, x1, ..., xK]`.
    pub fn iterates(&self, y: &Tensor) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(self.iterations + 1);
        let mut x = y.clone();
        for _ in 0..self.iterations {
            let mut next = x.add(y)?;
            next.axpy(-1.0, &self.smooth(&x)?)?;
            out.push(x);
            x = next;
        }
        out.push(x);
        Ok(out)
    }

    pub fn forward(&self, y: &Tensor) -> Result<Tensor> {
        let mut x = y.clone();
        for _ in 0..self.iterations {
            let mut next = x.add(y)?;
            next.axpy(-1.0, &self.smooth(&x)?)?;
            x = next;
        }
        Ok(x)
    }

    /// The output is linear in `y`: `xK = T^K y + sum_{j<K} T^j y` with
    /// `T = I - f`, so the adjoint applies `T^T` the same number of times.
    pub fn input_grad(&self, upstream: &Tensor) -> Result<Tensor> {
        let mut g = upstream.clone();
        let mut total = Tensor::zeros(upstream.shape());
        for _ in 0..self.iterations {
            total.axpy(1.0, &g)?;
            let ft = depthwise_input_grad(&self.filter, &g, Padding::Circular)?;
            g.axpy(-1.0, &ft)?;
        }
        total.axpy(1.0, &g)?;
        Ok(total)
    }
}

/// Result of [`contraction_coefficient`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contraction {
    /// `max |1 - lambda|` over all DFT bins.
    pub coefficient: f64,
    /// Smallest real part among the filter eigenvalues.
    pub min_eigenvalue: f64,
    pub is_contraction: bool,
}

/// Exact Lipschitz constant of `x -> x - f(x)` on an `h x w` circular grid.
pub fn contraction_coefficient(net: &ReverseNet, h: usize, w: usize, padding: Padding) -> Result<Contraction> {
    if padding != Padding::Circular {
        return Err(Error::invalid(
            "contraction_coefficient",
            "eigenvalues are only available for circular padding",
        ));
    }
    if h == 0 || w == 0 {
        return Err(Error::invalid("contraction_coefficient", "empty grid"));
    }
    let k = net.filter();
    let (kh, kw) = k.size();
    let (ch, cw) = ((kh / 2) as f64, (kw / 2) as f64);
    let taps = k.weights().data();
    let mut coefficient: f64 = 0.0;
    let mut min_eigenvalue = f64::INFINITY;
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for ky in 0..kh {
                for kx in 0..kw {
                    let phase = TAU * (u as f64 * (ky as f64 - ch) / h as f64 + v as f64 * (kx as f64 - cw) / w as f64);
                    let t = taps[ky * kw + kx];
                    re += t * phase.cos();
                    im += t * phase.sin();
                }
            }
            coefficient = coefficient.max(((1.0 - re).powi(2) + im * im).sqrt());
            min_eigenvalue = min_eigenvalue.min(re);
        }
    }
    Ok(Contraction {
        coefficient,
        min_eigenvalue,
        is_contraction: coefficient < 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(seed: u64, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, h, w), SeededRng::new(seed).normal_sample(h * w)).unwrap()
    }

    #[test]
    fn tiny_sigma_is_delta() {
        let k = gaussian_kernel(0.1).unwrap();
        assert_eq!(k.size(), (3, 3));
        assert!(k.weights().at(0, 0, 1, 1) > 0.999);
    }

    #[test]
    fn bank_normalized_and_symmetric() {
        for k in gaussian_bank(&[0.5, 1.0, 2.0, 3.3]).unwrap() {
            assert!((k.weights().sum() - 1.0).abs() < 1e-12);
            assert!(k.weights().data().iter().all(|&v| v > 0.0));
        }
        let k = gaussian_kernel(1.0).unwrap();
        assert_eq!(k.size(), (7, 7));
        let w = |y: usize, x: usize| k.weights().at(0, 0, y, x);
        for y in 0..7 {
            for x in 0..7 {
                assert_eq!(w(y, x), w(y, 6 - x));
                assert_eq!(w(y, x), w(6 - y, x));
                assert_eq!(w(y, x), w(x, y));
            }
        }
    }

    #[test]
    fn bank_rejects_non_positive_sigma() {
        assert!(gaussian_bank(&[1.0, 0.0]).is_err());
        assert!(gaussian_bank(&[-1.0]).is_err());
    }

    #[test]
    fn random_mixture_is_convex() {
        let net = ReverseNet::random(&mut SeededRng::new(5), vec![0.5, 1.0, 2.0], 3).unwrap();
        assert!((net.mix_weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(net.mix_weights().iter().all(|&w| w > 0.0));
        assert!((net.filter().weights().sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_image_is_fixed_point() {
        let net = ReverseNet::uniform(vec![0.5, 1.0, 2.0], 4).unwrap();
        let y = Tensor::full(Shape::new(1, 1, 8, 8), 0.3);
        for x in net.iterates(&y).unwrap() {
            assert!(x.max_abs_diff(&y).unwrap() < 1e-12);
        }
    }

    #[test]
    fn one_step_is_two_y_minus_fy() {
        let net = ReverseNet::uniform(vec![0.5, 1.0], 1).unwrap();
        let y = image(1, 6, 6);
        let mut expect = y.scale(2.0);
        expect.axpy(-1.0, &net.smooth(&y).unwrap()).unwrap();
        assert!(net.forward(&y).unwrap().max_abs_diff(&expect).unwrap() < 1e-15);
    }

    #[test]
    fn recovers_pre_image() {
        let net = ReverseNet::uniform(vec![0.5, 1.0, 2.0], 20).unwrap();
        let truth = image(2, 16, 16);
        let y = net.smooth(&truth).unwrap();
        let errs: Vec<f64> = net
            .iterates(&y)
            .unwrap()
            .iter()
            .map(|x| x.sub(&truth).unwrap().l2_norm())
            .collect();
        for w in errs.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(errs[20] * 2.0 <= errs[1], "{} vs {}", errs[20], errs[1]);
    }

    #[test]
    fn analyzer_cases() {
        let delta = ReverseNet::uniform(vec![0.1], 1).unwrap();
        let c = contraction_coefficient(&delta, 16, 16, Padding::Circular).unwrap();
        assert!(c.coefficient < 1e-9 && c.is_contraction);

        let bank = ReverseNet::uniform(vec![0.5, 1.0, 2.0], 1).unwrap();
        let c = contraction_coefficient(&bank, 16, 16, Padding::Circular).unwrap();
        assert!(c.is_contraction && c.coefficient > 0.5, "{c:?}");

        let boxf = ConvKernel::new(Tensor::full(Shape::new(1, 1, 5, 5), 1.0 / 25.0), None).unwrap();
        let boxnet = ReverseNet::from_filter(boxf, 1).unwrap();
        let c = contraction_coefficient(&boxnet, 16, 16, Padding::Circular).unwrap();
        assert!(c.min_eigenvalue < 0.0);
        assert!(!c.is_contraction);

        assert!(contraction_coefficient(&bank, 16, 16, Padding::Zero).is_err());
    }

    #[test]
    fn difference_ratios_bounded() {
        let net = ReverseNet::uniform(vec![0.5, 1.0, 2.0], 12).unwrap();
        let c = contraction_coefficient(&net, 16, 16, Padding::Circular).unwrap().coefficient;
        let xs = net.iterates(&image(3, 16, 16)).unwrap();
        for k in 1..xs.len() - 1 {
            let num = xs[k + 1].sub(&xs[k]).unwrap().l2_norm();
            let den = xs[k].sub(&xs[k - 1]).unwrap().l2_norm();
            assert!(num / den <= c + 1e-6);
        }
    }

    #[test]
    fn input_grad_matches_finite_differences() {
        let net = ReverseNet::random(&mut SeededRng::new(9), vec![0.5, 1.0, 2.0], 4).unwrap();
        let y = image(4, 6, 5);
        let w = image(5, 6, 5);
        let g = net.input_grad(&w).unwrap();
        let fd = crate::tensor::finite_diff_grad(
            |t| Ok(net.forward(t)?.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()),
            &y,
            1e-5,
        )
        .unwrap();
        assert!(g.max_abs_diff(&fd).unwrap() / fd.max_abs() < 1e-7);
    }
}
