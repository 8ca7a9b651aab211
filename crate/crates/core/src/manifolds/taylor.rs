//! Taylor unfolding network.
//!
//! A mapping part `F` produces the main term and a derivative part `G`,
//! shared across orders, produces the higher-order terms:
//!
//! ```text
//! f   = F(y)
//! g1  = G([f,  y])
//! gk+1 = G([gk, y])
//! O   = f + sum_{k=1..n} gk / k!
//! ```
//!
//! `[a, b]` is channel concatenation.

use crate::error::{Error, Result};
use crate::init::InitScheme;
use crate::rng::SeededRng;
use crate::tensor::{channel_concat, channel_split_at, Tensor};

use super::stack::{ConvStack, StackTrace};

#[derive(Clone, Debug, PartialEq)]
pub struct TaylorNet {
    mapping: ConvStack,
    derivative: ConvStack,
    image_channels: usize,
    order: usize,
}

#[derive(Clone, Debug)]
pub struct TaylorTrace {
    mapping: StackTrace,
    derivative: Vec<StackTrace>,
    terms: Vec<Tensor>,
}

impl TaylorTrace {
    /// `[f, g1, ..., gn]`.
    pub fn terms(&self) -> &[Tensor] {
        &self.terms
    }
}

impl TaylorNet {
    pub fn new(mapping: ConvStack, derivative: ConvStack, image_channels: usize, order: usize) -> Result<Self> {
        let c = mapping.out_channels();
        if mapping.in_channels() != image_channels {
            return Err(Error::invalid(
                "TaylorNet::new",
                format!("F expects {} channels, image has {image_channels}", mapping.in_channels()),
            ));
        }
        if derivative.in_channels() != c + image_channels || derivative.out_channels() != c {
            return Err(Error::invalid(
                "TaylorNet::new",
                format!(
                    "G must map {} -> {c} channels, got {} -> {}",
                    c + image_channels,
                    derivative.in_channels(),
                    derivative.out_channels()
                ),
            ));
        }
        Ok(TaylorNet {
            mapping,
            derivative,
            image_channels,
            order,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn random(
        rng: &mut SeededRng,
        image_channels: usize,
        channels: usize,
        depth: usize,
        kernel: usize,
        order: usize,
        scheme: InitScheme,
    ) -> Result<Self> {
        let mapping = ConvStack::random(rng, image_channels, channels, channels, depth, kernel, scheme)?;
        let derivative = ConvStack::random(rng, channels + image_channels, channels, channels, depth, kernel, scheme)?;
        TaylorNet::new(mapping, derivative, image_channels, order)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn with_order(mut self, order: usize) -> Self {
        self.order = order;
        self
    }

    pub fn mapping(&self) -> &ConvStack {
        &self.mapping
    }

    pub fn derivative(&self) -> &ConvStack {
        &self.derivative
    }

    fn check(&self, y: &Tensor) -> Result<()> {
        if y.shape().c != self.image_channels {
            return Err(Error::invalid(
                "taylor_forward",
                format!("expected {} image channels, got shape {}", self.image_channels, y.shape()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, y: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(y)?.0)
    }

    pub fn forward_traced(&self, y: &Tensor) -> Result<(Tensor, TaylorTrace)> {
        self.check(y)?;
        let (f, mapping) = self.mapping.forward_traced(y)?;
        let mut out = f.clone();
        let mut terms = vec![f];
        let mut derivative = Vec::with_capacity(self.order);
        let mut factorial = 1.0;
        for k in 1..=self.order {
            factorial *= k as f64;
            let input = channel_concat(&terms[k - 1], y)?;
            let (g, trace) = self.derivative.forward_traced(&input)?;
            out.axpy(1.0 / factorial, &g)?;
            terms.push(g);
            derivative.push(trace);
        }
        Ok((
            out,
            TaylorTrace {
                mapping,
                derivative,
                terms,
            },
        ))
    }

    pub fn input_grad(&self, trace: &TaylorTrace, upstream: &Tensor) -> Result<Tensor> {
        let c = self.mapping.out_channels();
        let inv_fact: Vec<f64> = (0..=self.order)
            .scan(1.0, |f, k| {
                if k > 0 {
                    *f *= k as f64;
                }
                Some(1.0 / *f)
            })
            .collect();
        let mut grad_y = Tensor::zeros(upstream.shape().with_channels(self.image_channels));
        // Gradient flowing into term k from later terms.
        let mut carry: Option<Tensor> = None;
        for k in (1..=self.order).rev() {
            let mut g = upstream.scale(inv_fact[k]);
            if let Some(c) = carry.take() {
                g.axpy(1.0, &c)?;
            }
            let gin = self.derivative.input_grad(&trace.derivative[k - 1], &g)?;
            let (to_prev, to_y) = channel_split_at(&gin, c)?;
            grad_y.axpy(1.0, &to_y)?;
            carry = Some(to_prev);
        }
        let mut gf = upstream.clone();
        if let Some(c) = carry {
            gf.axpy(1.0, &c)?;
        }
        grad_y.axpy(1.0, &self.mapping.input_grad(&trace.mapping, &gf)?)?;
        Ok(grad_y)
    }

    pub fn kink_margin(&self, trace: &TaylorTrace) -> f64 {
        trace
            .derivative
            .iter()
            .map(|t| self.derivative.kink_margin(t))
            .fold(self.mapping.kink_margin(&trace.mapping), f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_grad, Shape};

    fn net(order: usize, seed: u64) -> TaylorNet {
        TaylorNet::random(&mut SeededRng::new(seed), 1, 4, 2, 3, order, InitScheme::Kaiming).unwrap()
    }

    fn image(seed: u64) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, 5, 5), SeededRng::new(seed).normal_sample(25)).unwrap()
    }

    #[test]
    fn order_zero_is_mapping_only() {
        let n = net(0, 1);
        let y = image(2);
        assert_eq!(n.forward(&y).unwrap(), n.mapping().forward(&y).unwrap());
    }

    #[test]
    fn order_two_unrolled_by_hand() {
        let n = net(2, 3);
        let y = image(4);
        let f = n.mapping().forward(&y).unwrap();
        let g1 = n.derivative().forward(&channel_concat(&f, &y).unwrap()).unwrap();
        let g2 = n.derivative().forward(&channel_concat(&g1, &y).unwrap()).unwrap();
        let mut expect = f.clone();
        expect.axpy(1.0, &g1).unwrap();
        expect.axpy(0.5, &g2).unwrap();
        assert!(n.forward(&y).unwrap().max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn consecutive_orders_differ_by_last_term() {
        let y = image(6);
        let n5 = net(5, 5);
        let n4 = n5.clone().with_order(4);
        let (o5, trace) = n5.forward_traced(&y).unwrap();
        let o4 = n4.forward(&y).unwrap();
        let diff = o5.sub(&o4).unwrap();
        let expect = trace.terms()[5].scale(1.0 / 120.0);
        assert!(diff.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn rejects_wrong_channels() {
        let n = net(1, 7);
        assert!(n.forward(&Tensor::zeros(Shape::new(1, 2, 4, 4))).is_err());
    }

    #[test]
    fn input_grad_matches_finite_differences() {
        let n = net(3, 9);
        let y = image(10);
        let w = Tensor::from_vec(Shape::new(1, 4, 5, 5), SeededRng::new(11).normal_sample(100)).unwrap();
        let (_, trace) = n.forward_traced(&y).unwrap();
        assert!(n.kink_margin(&trace) > 1e-5);
        let g = n.input_grad(&trace, &w).unwrap();
        let fd = finite_diff_grad(
            |t| Ok(n.forward(t)?.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()),
            &y,
            1e-6,
        )
        .unwrap();
        assert!(g.max_abs_diff(&fd).unwrap() / fd.max_abs() < 1e-6);
    }
}
