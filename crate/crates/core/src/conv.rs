//! Stride-1 "same" 2-D convolution (cross-correlation) and its adjoints.
//!
//! Output at `p0` is `sum_{pn in R} w(pn) * x(p0 + pn) + bias`, where `R` is
//! the kernel footprint centred on `p0`. Reads outside the image are resolved
//! by [`Padding`]. All three routines pad the input once and then run a
//! valid-mode loop over contiguous rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    #[default]
    Zero,
    Circular,
}

/// Weights shaped `(out_channels, in_channels, kh, kw)` plus optional bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    weights: Tensor,
    bias: Option<Vec<f64>>,
}

impl ConvKernel {
    pub fn new(weights: Tensor, bias: Option<Vec<f64>>) -> Result<Self> {
        let s = weights.shape();
        if s.h % 2 == 0 || s.w % 2 == 0 {
            return Err(Error::invalid(
                "ConvKernel::new",
                format!("kernel extents must be odd, got {}x{}", s.h, s.w),
            ));
        }
        if let Some(b) = &bias {
            if b.len() != s.n {
                return Err(Error::invalid(
                    "ConvKernel::new",
                    format!("bias has {} entries for {} output channels", b.len(), s.n),
                ));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("ConvKernel::new", "non-finite bias"));
            }
        }
        if !weights.all_finite() {
            return Err(Error::invalid("ConvKernel::new", "non-finite weights"));
        }
        Ok(ConvKernel { weights, bias })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, size: usize) -> Result<Self> {
        ConvKernel::new(Tensor::zeros(Shape::new(out_channels, in_channels, size, size)), None)
    }

    /// `out = in` kernel: 1 at the centre of each matching channel pair.
    pub fn identity(channels: usize, size: usize) -> Result<Self> {
        let c = size / 2;
        let w = Tensor::from_fn(Shape::new(channels, channels, size, size), |o, i, y, x| {
            if o == i && y == c && x == c {
                1.0
            } else {
                0.0
            }
        });
        ConvKernel::new(w, None)
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn bias_mut(&mut self) -> Option<&mut Vec<f64>> {
        self.bias.as_mut()
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape().c
    }

    /// `(kh, kw)`.
    pub fn size(&self) -> (usize, usize) {
        (self.weights.shape().h, self.weights.shape().w)
    }

    /// `S[o][i] = sum over the footprint of w[o, i, ., .]`.
    pub fn tap_sums(&self) -> Vec<f64> {
        let s = self.weights.shape();
        self.weights
            .data()
            .chunks_exact(s.h * s.w)
            .map(|taps| taps.iter().sum())
            .collect()
    }
}

/// Gradients of a scalar with respect to a kernel's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelGrad {
    pub weights: Tensor,
    pub bias: Option<Vec<f64>>,
}

struct Padded {
    data: Vec<f64>,
    hp: usize,
    wp: usize,
}

fn check(op: &'static str, x: &Tensor, k: &ConvKernel) -> Result<()> {
    if x.shape().c != k.in_channels() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: x.shape(),
            rhs: k.weights.shape(),
        });
    }
    Ok(())
}

fn pad(x: &Tensor, ph: usize, pw: usize, mode: Padding) -> Padded {
    let s = x.shape();
    let (hp, wp) = (s.h + 2 * ph, s.w + 2 * pw);
    let mut data = vec![0.0; s.n * s.c * hp * wp];
    for (plane, src) in data.chunks_exact_mut(hp * wp).zip(x.data().chunks_exact(s.plane())) {
        match mode {
            Padding::Zero => {
                for y in 0..s.h {
                    let dst = (y + ph) * wp + pw;
                    plane[dst..dst + s.w].copy_from_slice(&src[y * s.w..(y + 1) * s.w]);
                }
            }
            Padding::Circular => {
                for py in 0..hp {
                    let sy = wrap(py, ph, s.h);
                    for px in 0..wp {
                        plane[py * wp + px] = src[sy * s.w + wrap(px, pw, s.w)];
                    }
                }
            }
        }
    }
    Padded { data, hp, wp }
}

#[inline]
fn wrap(padded: usize, pad: usize, extent: usize) -> usize {
    (padded as isize - pad as isize).rem_euclid(extent as isize) as usize
}

/// Adjoint of [`pad`]: folds padded-grid gradients back onto the image.
fn unpad(grad: &[f64], shape: Shape, ph: usize, pw: usize, mode: Padding) -> Tensor {
    let (hp, wp) = (shape.h + 2 * ph, shape.w + 2 * pw);
    let mut out = vec![0.0; shape.numel()];
    for (dst, plane) in out.chunks_exact_mut(shape.plane()).zip(grad.chunks_exact(hp * wp)) {
        match mode {
            Padding::Zero => {
                for y in 0..shape.h {
                    let src = (y + ph) * wp + pw;
                    dst[y * shape.w..(y + 1) * shape.w].copy_from_slice(&plane[src..src + shape.w]);
                }
            }
            Padding::Circular => {
                for py in 0..hp {
                    let sy = wrap(py, ph, shape.h);
                    for px in 0..wp {
                        dst[sy * shape.w + wrap(px, pw, shape.w)] += plane[py * wp + px];
                    }
                }
            }
        }
    }
    Tensor::from_raw(shape, out)
}

#[inline]
fn axpy(dst: &mut [f64], alpha: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn conv2d(x: &Tensor, k: &ConvKernel, padding: Padding) -> Result<Tensor> {
    check("conv2d", x, k)?;
    let s = x.shape();
    let (kh, kw) = k.size();
    let (oc, ic) = (k.out_channels(), k.in_channels());
    let p = pad(x, kh / 2, kw / 2, padding);
    let out_shape = s.with_channels(oc);
    let mut out = vec![0.0; out_shape.numel()];
    let w = k.weights.data();
    let pplane = p.hp * p.wp;
    for n in 0..s.n {
        for o in 0..oc {
            let dst = &mut out[(n * oc + o) * s.plane()..(n * oc + o + 1) * s.plane()];
            if let Some(b) = &k.bias {
                dst.fill(b[o]);
            }
            for i in 0..ic {
                let src = &p.data[(n * ic + i) * pplane..(n * ic + i + 1) * pplane];
                let taps = &w[(o * ic + i) * kh * kw..(o * ic + i + 1) * kh * kw];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wt = taps[ky * kw + kx];
                        if wt == 0.0 {
                            continue;
                        }
                        for y in 0..s.h {
                            let row = (y + ky) * p.wp + kx;
                            axpy(&mut dst[y * s.w..(y + 1) * s.w], wt, &src[row..row + s.w]);
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_raw(out_shape, out))
}

fn check_upstream(op: &'static str, x: &Tensor, k: &ConvKernel, upstream: &Tensor) -> Result<()> {
    check(op, x, k)?;
    let expect = x.shape().with_channels(k.out_channels());
    if upstream.shape() != expect {
        return Err(Error::ShapeMismatch {
            op,
            lhs: upstream.shape(),
            rhs: expect,
        });
    }
    Ok(())
}

/// Input gradient only. The fixed loss networks never need kernel gradients.
pub fn conv2d_input_grad(
    input_shape: Shape,
    k: &ConvKernel,
    upstream: &Tensor,
    padding: Padding,
) -> Result<Tensor> {
    let expect = input_shape.with_channels(k.out_channels());
    if input_shape.c != k.in_channels() || upstream.shape() != expect {
        return Err(Error::ShapeMismatch {
            op: "conv2d_vjp",
            lhs: upstream.shape(),
            rhs: expect,
        });
    }
    let s = input_shape;
    let (kh, kw) = k.size();
    let (ph, pw) = (kh / 2, kw / 2);
    let (oc, ic) = (k.out_channels(), k.in_channels());
    let (hp, wp) = (s.h + 2 * ph, s.w + 2 * pw);
    let mut grad = vec![0.0; s.n * ic * hp * wp];
    let w = k.weights.data();
    let up = upstream.data();
    for n in 0..s.n {
        for o in 0..oc {
            let u = &up[(n * oc + o) * s.plane()..(n * oc + o + 1) * s.plane()];
            for i in 0..ic {
                let dst = &mut grad[(n * ic + i) * hp * wp..(n * ic + i + 1) * hp * wp];
                let taps = &w[(o * ic + i) * kh * kw..(o * ic + i + 1) * kh * kw];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wt = taps[ky * kw + kx];
                        if wt == 0.0 {
                            continue;
                        }
                        for y in 0..s.h {
                            let row = (y + ky) * wp + kx;
                            axpy(&mut dst[row..row + s.w], wt, &u[y * s.w..(y + 1) * s.w]);
                        }
                    }
                }
            }
        }
    }
    Ok(unpad(&grad, s, ph, pw, padding))
}

/// Exact adjoint of [`conv2d`]: returns `(dL/dx, dL/dk)` given `dL/dy`.
pub fn conv2d_vjp(
    x: &Tensor,
    k: &ConvKernel,
    upstream: &Tensor,
    padding: Padding,
) -> Result<(Tensor, KernelGrad)> {
    check_upstream("conv2d_vjp", x, k, upstream)?;
    let grad_x = conv2d_input_grad(x.shape(), k, upstream, padding)?;
    Ok((grad_x, conv2d_kernel_grad(x, k, upstream, padding)?))
}

/// Kernel (and bias) gradient only.
pub fn conv2d_kernel_grad(
    x: &Tensor,
    k: &ConvKernel,
    upstream: &Tensor,
    padding: Padding,
) -> Result<KernelGrad> {
    check_upstream("conv2d_vjp", x, k, upstream)?;
    let s = x.shape();
    let (kh, kw) = k.size();
    let (oc, ic) = (k.out_channels(), k.in_channels());
    let p = pad(x, kh / 2, kw / 2, padding);
    let pplane = p.hp * p.wp;
    let up = upstream.data();
    let mut gw = vec![0.0; k.weights.len()];
    for n in 0..s.n {
        for o in 0..oc {
            let u = &up[(n * oc + o) * s.plane()..(n * oc + o + 1) * s.plane()];
            for i in 0..ic {
                let src = &p.data[(n * ic + i) * pplane..(n * ic + i + 1) * pplane];
                let taps = &mut gw[(o * ic + i) * kh * kw..(o * ic + i + 1) * kh * kw];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = 0.0;
                        for y in 0..s.h {
                            let row = (y + ky) * p.wp + kx;
                            acc += dot(&u[y * s.w..(y + 1) * s.w], &src[row..row + s.w]);
                        }
                        taps[ky * kw + kx] += acc;
                    }
                }
            }
        }
    }
    let bias = k.bias.as_ref().map(|_| {
        let mut gb = vec![0.0; oc];
        for n in 0..s.n {
            for (o, g) in gb.iter_mut().enumerate() {
                *g += up[(n * oc + o) * s.plane()..(n * oc + o + 1) * s.plane()]
                    .iter()
                    .sum::<f64>();
            }
        }
        gb
    });
    Ok(KernelGrad {
        weights: Tensor::from_raw(k.weights.shape(), gw),
        bias,
    })
}

/// Applies a single-channel kernel to every channel independently.
pub fn depthwise(x: &Tensor, k: &ConvKernel, padding: Padding) -> Result<Tensor> {
    let s = x.shape();
    let flat = x.clone().reshaped(Shape::new(s.n * s.c, 1, s.h, s.w))?;
    conv2d(&flat, k, padding)?.reshaped(s)
}

/// Input gradient of [`depthwise`].
pub fn depthwise_input_grad(k: &ConvKernel, upstream: &Tensor, padding: Padding) -> Result<Tensor> {
    let s = upstream.shape();
    let flat_shape = Shape::new(s.n * s.c, 1, s.h, s.w);
    let flat = upstream.clone().reshaped(flat_shape)?;
    conv2d_input_grad(flat_shape, k, &flat, padding)?.reshaped(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_grad;

    /// Direct nested-loop oracle with explicit bounds checks.
    fn conv_oracle(x: &Tensor, k: &ConvKernel, padding: Padding) -> Tensor {
        let s = x.shape();
        let (kh, kw) = k.size();
        let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
        Tensor::from_fn(s.with_channels(k.out_channels()), |n, o, y, xx| {
            let mut acc = k.bias().map_or(0.0, |b| b[o]);
            for i in 0..k.in_channels() {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let sy = y as isize + ky as isize - ph;
                        let sx = xx as isize + kx as isize - pw;
                        let v = match padding {
                            Padding::Zero => {
                                if sy < 0 || sx < 0 || sy >= s.h as isize || sx >= s.w as isize {
                                    continue;
                                }
                                x.at(n, i, sy as usize, sx as usize)
                            }
                            Padding::Circular => x.at(
                                n,
                                i,
                                sy.rem_euclid(s.h as isize) as usize,
                                sx.rem_euclid(s.w as isize) as usize,
                            ),
                        };
                        acc += k.weights().at(o, i, ky, kx) * v;
                    }
                }
            }
            acc
        })
    }

    fn pseudo(shape: Shape, salt: f64) -> Tensor {
        Tensor::from_fn(shape, |n, c, y, x| {
            ((n * 131 + c * 31 + y * 7 + x) as f64 * 0.731 + salt).sin()
        })
    }

    #[test]
    fn zeros_in_zeros_out() {
        let x = Tensor::zeros(Shape::new(1, 2, 4, 4));
        let k = ConvKernel::new(pseudo(Shape::new(3, 2, 3, 3), 0.1), None).unwrap();
        assert!(conv2d(&x, &k, Padding::Zero).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_ones_kernel_on_2x2() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = ConvKernel::new(Tensor::full(Shape::new(1, 1, 3, 3), 1.0), None).unwrap();
        let y = conv2d(&x, &k, Padding::Zero).unwrap();
        assert_eq!(y.data(), &[10.0, 10.0, 10.0, 10.0]);
        assert_eq!(y, conv_oracle(&x, &k, Padding::Zero));
    }

    #[test]
    fn identity_kernel_is_exact() {
        let x = pseudo(Shape::new(2, 3, 5, 4), 0.3);
        let k = ConvKernel::identity(3, 3).unwrap();
        for p in [Padding::Zero, Padding::Circular] {
            assert_eq!(conv2d(&x, &k, p).unwrap(), x);
        }
    }

    #[test]
    fn matches_oracle_both_paddings() {
        let x = pseudo(Shape::new(2, 3, 5, 6), 0.2);
        let k = ConvKernel::new(pseudo(Shape::new(4, 3, 5, 3), 1.3), Some(vec![0.1, -0.2, 0.3, 0.0])).unwrap();
        for p in [Padding::Zero, Padding::Circular] {
            let d = conv2d(&x, &k, p).unwrap().max_abs_diff(&conv_oracle(&x, &k, p)).unwrap();
            assert!(d < 1e-12, "{p:?}: {d}");
        }
    }

    #[test]
    fn circular_kernel_wider_than_image() {
        let x = pseudo(Shape::new(1, 1, 3, 3), 0.4);
        let k = ConvKernel::new(pseudo(Shape::new(1, 1, 7, 7), 2.0), None).unwrap();
        let d = conv2d(&x, &k, Padding::Circular)
            .unwrap()
            .max_abs_diff(&conv_oracle(&x, &k, Padding::Circular))
            .unwrap();
        assert!(d < 1e-12);
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = Tensor::zeros(Shape::new(1, 2, 3, 3));
        let k = ConvKernel::zeros(1, 3, 3).unwrap();
        let err = conv2d(&x, &k, Padding::Zero).unwrap_err().to_string();
        assert!(err.contains("1x2x3x3") && err.contains("1x3x3x3"), "{err}");
    }

    #[test]
    fn rejects_even_kernel() {
        assert!(ConvKernel::new(Tensor::zeros(Shape::new(1, 1, 2, 2)), None).is_err());
    }

    #[test]
    fn vjp_zero_upstream() {
        let x = pseudo(Shape::new(1, 2, 4, 4), 0.0);
        let k = ConvKernel::new(pseudo(Shape::new(2, 2, 3, 3), 0.5), Some(vec![0.0; 2])).unwrap();
        let (gx, gk) = conv2d_vjp(&x, &k, &Tensor::zeros(x.shape()), Padding::Zero).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(gk.weights.data().iter().all(|&v| v == 0.0));
        assert!(gk.bias.unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vjp_identity_kernel() {
        let x = pseudo(Shape::new(1, 2, 4, 4), 0.0);
        let up = pseudo(x.shape(), 0.9);
        let k = ConvKernel::identity(2, 3).unwrap();
        let (gx, _) = conv2d_vjp(&x, &k, &up, Padding::Zero).unwrap();
        assert_eq!(gx, up);
    }

    #[test]
    fn vjp_rejects_bad_upstream() {
        let x = pseudo(Shape::new(1, 2, 4, 4), 0.0);
        let k = ConvKernel::identity(2, 3).unwrap();
        assert!(conv2d_vjp(&x, &k, &Tensor::zeros(Shape::new(1, 3, 4, 4)), Padding::Zero).is_err());
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let x = pseudo(Shape::new(1, 1, 4, 4), 0.7);
        let k = ConvKernel::new(pseudo(Shape::new(1, 1, 3, 3), 0.2), Some(vec![0.3])).unwrap();
        let up = pseudo(x.shape(), 1.9);
        for p in [Padding::Zero, Padding::Circular] {
            let loss = |x: &Tensor, k: &ConvKernel| -> Result<f64> {
                let y = conv2d(x, k, p)?;
                Ok(y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum())
            };
            let (gx, gk) = conv2d_vjp(&x, &k, &up, p).unwrap();
            let fdx = finite_diff_grad(|t| loss(t, &k), &x, 1e-5).unwrap();
            let rel = gx.max_abs_diff(&fdx).unwrap() / fdx.max_abs();
            assert!(rel < 1e-6, "{p:?} grad_x rel {rel}");
            let fdk = finite_diff_grad(
                |w| loss(&x, &ConvKernel::new(w.clone(), Some(vec![0.3]))?),
                k.weights(),
                1e-5,
            )
            .unwrap();
            let rel = gk.weights.max_abs_diff(&fdk).unwrap() / fdk.max_abs();
            assert!(rel < 1e-6, "{p:?} grad_k rel {rel}");
            let gb = gk.bias.unwrap()[0];
            assert!((gb - up.sum()).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_is_linear() {
        let x = pseudo(Shape::new(1, 2, 5, 5), 0.1);
        let z = pseudo(Shape::new(1, 2, 5, 5), 2.1);
        let k = ConvKernel::new(pseudo(Shape::new(3, 2, 3, 3), 0.5), None).unwrap();
        let (a, b) = (0.7, -1.3);
        let mut mix = x.scale(a);
        mix.axpy(b, &z).unwrap();
        let lhs = conv2d(&mix, &k, Padding::Zero).unwrap();
        let mut rhs = conv2d(&x, &k, Padding::Zero).unwrap().scale(a);
        rhs.axpy(b, &conv2d(&z, &k, Padding::Zero).unwrap()).unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }
}
