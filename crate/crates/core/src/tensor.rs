//! Dense NCHW tensors of `f64` and the shape-level operations the loss
//! networks are built from.
//!
//! Every operation here is a pure function. Where an operation is not its
//! own adjoint, the matching vector-Jacobian product sits next to it.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extents of a 4-D tensor in (batch, channels, height, width) order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn with_channels(&self, c: usize) -> Self {
        Shape::new(self.n, c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    /// Builds a tensor from row-major NCHW values. Rejects a length that does
    /// not match the shape and any non-finite value.
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::invalid(
                "Tensor::from_vec",
                format!("shape {shape} needs {} values, got {}", shape.numel(), data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "Tensor::from_vec",
                format!("non-finite value at flat index {pos}"),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub(crate) fn from_raw(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), shape.numel());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    /// Same values viewed under a different shape with the same element count.
    pub fn reshaped(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_raw(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        self.ensure_same("axpy", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.ensure_same("max_abs_diff", other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs())))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Batch item `i` as a tensor with `n == 1`.
    pub fn batch_item(&self, i: usize) -> Tensor {
        let item = self.shape.c * self.shape.plane();
        Tensor::from_raw(
            Shape::new(1, self.shape.c, self.shape.h, self.shape.w),
            self.data[i * item..(i + 1) * item].to_vec(),
        )
    }

    /// Concatenates tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("stack", "no tensors to stack"))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        let mut n = 0;
        for t in items {
            let s = t.shape;
            if (s.c, s.h, s.w) != (first.shape.c, first.shape.h, first.shape.w) {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    lhs: first.shape,
                    rhs: s,
                });
            }
            n += s.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor::from_raw(first.shape.with_n(n), data))
    }

    pub(crate) fn ensure_same(&self, op: &'static str, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape,
                rhs: other.shape,
            });
        }
        Ok(())
    }

    fn zip_with(&self, op: &'static str, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.ensure_same(op, other)?;
        Ok(Tensor::from_raw(
            self.shape,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }
}

impl Shape {
    pub const fn with_n(&self, n: usize) -> Self {
        Shape::new(n, self.c, self.h, self.w)
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient of ReLU given its *input* `pre`; the derivative at 0 is taken as 0.
pub fn relu_vjp(pre: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    pre.zip_with("relu_vjp", upstream, |p, u| if p > 0.0 { u } else { 0.0 })
}

/// Splits channels into `[0, C/2)` and `[C/2, C)`.
pub fn channel_split(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let s = x.shape;
    if s.c % 2 != 0 {
        return Err(Error::invalid(
            "channel_split",
            format!("channel count must be even, got shape {s}"),
        ));
    }
    let half = s.c / 2;
    let block = half * s.plane();
    let mut a = Vec::with_capacity(s.numel() / 2);
    let mut b = Vec::with_capacity(s.numel() / 2);
    for item in x.data.chunks_exact(s.c * s.plane()) {
        a.extend_from_slice(&item[..block]);
        b.extend_from_slice(&item[block..]);
    }
    let hs = s.with_channels(half);
    Ok((Tensor::from_raw(hs, a), Tensor::from_raw(hs, b)))
}

/// Concatenates along channels; `a` provides the leading channels.
pub fn channel_concat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape, b.shape);
    if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
        return Err(Error::ShapeMismatch {
            op: "channel_concat",
            lhs: sa,
            rhs: sb,
        });
    }
    let mut data = Vec::with_capacity(sa.numel() + sb.numel());
    let (ia, ib) = (sa.c * sa.plane(), sb.c * sb.plane());
    for n in 0..sa.n {
        data.extend_from_slice(&a.data[n * ia..(n + 1) * ia]);
        data.extend_from_slice(&b.data[n * ib..(n + 1) * ib]);
    }
    Ok(Tensor::from_raw(sa.with_channels(sa.c + sb.c), data))
}

/// Splits off the first `c` channels from the rest. Adjoint of
/// [`channel_concat`] for arbitrary channel counts.
pub fn channel_split_at(x: &Tensor, c: usize) -> Result<(Tensor, Tensor)> {
    let s = x.shape;
    if c > s.c {
        return Err(Error::invalid(
            "channel_split_at",
            format!("cannot take {c} channels from shape {s}"),
        ));
    }
    let block = c * s.plane();
    let mut a = Vec::with_capacity(s.n * block);
    let mut b = Vec::with_capacity(s.numel() - s.n * block);
    for item in x.data.chunks_exact(s.c * s.plane()) {
        a.extend_from_slice(&item[..block]);
        b.extend_from_slice(&item[block..]);
    }
    Ok((
        Tensor::from_raw(s.with_channels(c), a),
        Tensor::from_raw(s.with_channels(s.c - c), b),
    ))
}

/// Rearranges each 2x2 spatial block into four channels.
///
/// Output channel `4*c + 2*dy + dx` at `(i, j)` holds input channel `c` at
/// `(2i + dy, 2j + dx)`, so a single 2x2 plane `[[1, 2], [3, 4]]` becomes the
/// channel vector `(1, 2, 3, 4)`. The map is a permutation of elements.
pub fn space_to_depth(x: &Tensor) -> Result<Tensor> {
    let s = x.shape;
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::invalid(
            "space_to_depth",
            format!("height and width must be divisible by 2, got shape {s}"),
        ));
    }
    let out = Shape::new(s.n, s.c * 4, s.h / 2, s.w / 2);
    Ok(Tensor::from_fn(out, |n, oc, i, j| {
        let (c, sub) = (oc / 4, oc % 4);
        x.at(n, c, 2 * i + sub / 2, 2 * j + sub % 2)
    }))
}

/// Inverse of [`space_to_depth`]; also its adjoint, since the map is a
/// permutation.
pub fn depth_to_space(x: &Tensor) -> Result<Tensor> {
    let s = x.shape;
    if s.c % 4 != 0 {
        return Err(Error::invalid(
            "depth_to_space",
            format!("channel count must be divisible by 4, got shape {s}"),
        ));
    }
    let out = Shape::new(s.n, s.c / 4, s.h * 2, s.w * 2);
    Ok(Tensor::from_fn(out, |n, c, y, xx| {
        x.at(n, 4 * c + 2 * (y % 2) + xx % 2, y / 2, xx / 2)
    }))
}

/// Image-level distance used both as the base loss and inside the prior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    #[default]
    L2,
}

/// Mean absolute (L1) or mean squared (L2) difference.
pub fn reduce_norm(a: &Tensor, b: &Tensor, norm: Norm) -> Result<f64> {
    a.ensure_same("reduce_norm", b)?;
    if a.is_empty() {
        return Err(Error::invalid("reduce_norm", "empty tensors"));
    }
    let pairs = a.data.iter().zip(&b.data);
    let total: f64 = match norm {
        Norm::L1 => pairs.map(|(x, y)| (x - y).abs()).sum(),
        Norm::L2 => pairs.map(|(x, y)| (x - y) * (x - y)).sum(),
    };
    Ok(total / a.len() as f64)
}

/// Gradient of [`reduce_norm`] with respect to its second argument.
pub fn reduce_norm_grad(a: &Tensor, b: &Tensor, norm: Norm) -> Result<Tensor> {
    a.ensure_same("reduce_norm_grad", b)?;
    if a.is_empty() {
        return Err(Error::invalid("reduce_norm_grad", "empty tensors"));
    }
    let inv = 1.0 / a.len() as f64;
    Ok(match norm {
        Norm::L1 => b.zip_with("reduce_norm_grad", a, |y, x| {
            let r = y - x;
            if r > 0.0 {
                inv
            } else if r < 0.0 {
                -inv
            } else {
                0.0
            }
        })?,
        Norm::L2 => b.zip_with("reduce_norm_grad", a, |y, x| 2.0 * (y - x) * inv)?,
    })
}

/// Central-difference gradient of a scalar function, one coordinate at a
/// time. This is the reference every analytic backward pass is tested
/// against.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, step: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::invalid("finite_diff_grad", format!("step must be positive, got {step}")));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape);
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + step;
        let plus = f(&probe)?;
        probe.data[i] = orig - step;
        let minus = f(&probe)?;
        probe.data[i] = orig;
        grad.data[i] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}
