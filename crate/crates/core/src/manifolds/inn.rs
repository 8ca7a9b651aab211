//! Additive-coupling invertible network.
//!
//! The image is first folded with [`space_to_depth`] so the channel count is
//! even, then split into halves `(x1, x2)` and passed through coupling blocks
//!
//! ```text
//! y1 = x1 + F(x2)        x2 = y2 - G(y1)
//! y2 = x2 + G(y1)        x1 = y1 - F(x2)
//! ```
//!
//! The right column is the exact inverse whatever `F` and `G` are. The block
//! Jacobian is `[[I, dF], [dG, I + dG dF]]`, whose determinant is 1.

use crate::error::{Error, Result};
use crate::init::InitScheme;
use crate::rng::SeededRng;
use crate::tensor::{channel_concat, channel_split, depth_to_space, space_to_depth, Shape, Tensor};

use super::stack::{ConvStack, StackTrace};

/// Largest input, in elements, for which a dense Jacobian is built.
pub const MAX_JACOBIAN_ELEMENTS: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingBlock {
    pub f: ConvStack,
    pub g: ConvStack,
}

impl CouplingBlock {
    pub fn new(f: ConvStack, g: ConvStack) -> Result<Self> {
        let half = f.in_channels();
        if f.out_channels() != half || g.in_channels() != half || g.out_channels() != half {
            return Err(Error::invalid(
                "CouplingBlock::new",
                "F and G must both map C/2 channels to C/2 channels",
            ));
        }
        Ok(CouplingBlock { f, g })
    }

    fn forward(&self, x1: &Tensor, x2: &Tensor) -> Result<(Tensor, Tensor)> {
        let y1 = x1.add(&self.f.forward(x2)?)?;
        let y2 = x2.add(&self.g.forward(&y1)?)?;
        Ok((y1, y2))
    }

    fn inverse(&self, y1: &Tensor, y2: &Tensor) -> Result<(Tensor, Tensor)> {
        let x2 = y2.sub(&self.g.forward(y1)?)?;
        let x1 = y1.sub(&self.f.forward(&x2)?)?;
        Ok((x1, x2))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InnNet {
    blocks: Vec<CouplingBlock>,
}

#[derive(Clone, Debug)]
pub struct InnTrace {
    blocks: Vec<(StackTrace, StackTrace)>,
}

impl InnNet {
    pub fn new(blocks: Vec<CouplingBlock>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::invalid("InnNet::new", "need at least one coupling block"))?;
        let half = first.f.in_channels();
        if blocks.iter().any(|b| b.f.in_channels() != half) {
            return Err(Error::invalid("InnNet::new", "blocks disagree on channel count"));
        }
        Ok(InnNet { blocks })
    }

    /// `blocks` coupling blocks for images with `image_channels` channels.
    /// Each translation net is `conv -> ReLU -> conv` with `hidden` channels.
    pub fn random(
        rng: &mut SeededRng,
        image_channels: usize,
        hidden: usize,
        blocks: usize,
        kernel: usize,
        scheme: InitScheme,
    ) -> Result<Self> {
        let half = image_channels * 2;
        let blocks = (0..blocks)
            .map(|_| {
                let f = ConvStack::random(rng, half, hidden, half, 2, kernel, scheme)?;
                let g = ConvStack::random(rng, half, hidden, half, 2, kernel, scheme)?;
                CouplingBlock::new(f, g)
            })
            .collect::<Result<Vec<_>>>()?;
        InnNet::new(blocks)
    }

    pub fn blocks(&self) -> &[CouplingBlock] {
        &self.blocks
    }

    /// Channel count the coupling body works on.
    pub fn body_channels(&self) -> usize {
        self.blocks[0].f.in_channels() * 2
    }

    fn check_body(&self, op: &'static str, z: &Tensor) -> Result<()> {
        if z.shape().c != self.body_channels() {
            return Err(Error::invalid(
                op,
                format!("coupling body expects {} channels, got shape {}", self.body_channels(), z.shape()),
            ));
        }
        Ok(())
    }

    /// Coupling blocks only, without the space-to-depth fold.
    pub fn body_forward(&self, z: &Tensor) -> Result<Tensor> {
        self.check_body("inn_forward", z)?;
        let (mut a, mut b) = channel_split(z)?;
        for block in &self.blocks {
            (a, b) = block.forward(&a, &b)?;
        }
        channel_concat(&a, &b)
    }

    pub fn body_inverse(&self, y: &Tensor) -> Result<Tensor> {
        self.check_body("inn_inverse", y)?;
        let (mut a, mut b) = channel_split(y)?;
        for block in self.blocks.iter().rev() {
            (a, b) = block.inverse(&a, &b)?;
        }
        channel_concat(&a, &b)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.body_forward(&space_to_depth(x)?)
    }

    pub fn inverse(&self, y: &Tensor) -> Result<Tensor> {
        depth_to_space(&self.body_inverse(y)?)
    }

    pub fn forward_traced(&self, x: &Tensor) -> Result<(Tensor, InnTrace)> {
        let z = space_to_depth(x)?;
        self.check_body("inn_forward", &z)?;
        let (mut a, mut b) = channel_split(&z)?;
        let mut traces = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (fx, tf) = block.f.forward_traced(&b)?;
            let y1 = a.add(&fx)?;
            let (gy, tg) = block.g.forward_traced(&y1)?;
            let y2 = b.add(&gy)?;
            traces.push((tf, tg));
            (a, b) = (y1, y2);
        }
        Ok((channel_concat(&a, &b)?, InnTrace { blocks: traces }))
    }

    pub fn input_grad(&self, trace: &InnTrace, upstream: &Tensor) -> Result<Tensor> {
        let (mut u1, mut u2) = channel_split(upstream)?;
        for (block, (tf, tg)) in self.blocks.iter().zip(&trace.blocks).rev() {
            let gy1 = u1.add(&block.g.input_grad(tg, &u2)?)?;
            let gx2 = u2.add(&block.f.input_grad(tf, &gy1)?)?;
            (u1, u2) = (gy1, gx2);
        }
        depth_to_space(&channel_concat(&u1, &u2)?)
    }

    pub fn kink_margin(&self, trace: &InnTrace) -> f64 {
        self.blocks
            .iter()
            .zip(&trace.blocks)
            .map(|(b, (tf, tg))| b.f.kink_margin(tf).min(b.g.kink_margin(tg)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Determinant of the central-difference Jacobian of the coupling body at
    /// `z`. Each column is divided by the step actually realised in floating
    /// point, so an identity body yields exactly 1.
    pub fn body_jacobian_det(&self, z: &Tensor, step: f64) -> Result<f64> {
        let n = z.len();
        if n > MAX_JACOBIAN_ELEMENTS {
            return Err(Error::invalid(
                "inn_jacobian_det",
                format!("input has {n} elements, limit is {MAX_JACOBIAN_ELEMENTS}"),
            ));
        }
        if !(step > 0.0) {
            return Err(Error::invalid("inn_jacobian_det", "step must be positive"));
        }
        self.check_body("inn_jacobian_det", z)?;
        let mut jac = vec![0.0; n * n];
        let mut probe = z.clone();
        for j in 0..n {
            let orig = probe.data()[j];
            let (hi, lo) = (orig + step, orig - step);
            probe.data_mut()[j] = hi;
            let plus = self.body_forward(&probe)?;
            probe.data_mut()[j] = lo;
            let minus = self.body_forward(&probe)?;
            probe.data_mut()[j] = orig;
            let width = hi - lo;
            for i in 0..n {
                jac[i * n + j] = (plus.data()[i] - minus.data()[i]) / width;
            }
        }
        Ok(determinant(jac, n))
    }

    /// [`InnNet::body_jacobian_det`] after folding an image with
    /// space-to-depth (a permutation, contributing a factor of +-1 that is
    /// not included).
    pub fn jacobian_det(&self, x: &Tensor, step: f64) -> Result<f64> {
        self.body_jacobian_det(&space_to_depth(x)?, step)
    }
}

/// Shape an [`InnNet`] emits for an image of shape `s`.
pub fn inn_output_shape(s: Shape) -> Shape {
    Shape::new(s.n, s.c * 4, s.h / 2, s.w / 2)
}

/// LU decomposition with partial pivoting, row-major `n x n`.
fn determinant(mut a: Vec<f64>, n: usize) -> f64 {
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| a[r * n + col].abs().total_cmp(&a[s * n + col].abs()))
            .unwrap_or(col);
        if a[pivot * n + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            det = -det;
        }
        let p = a[col * n + col];
        det *= p;
        for r in col + 1..n {
            let factor = a[r * n + col] / p;
            if factor != 0.0 {
                for k in col..n {
                    a[r * n + k] -= factor * a[col * n + k];
                }
            }
        }
    }
    det
}
