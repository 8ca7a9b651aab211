//! Adam over the kernels of a conv stack.

use crate::conv::{ConvKernel, KernelGrad};
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

fn flat_grad(g: &KernelGrad) -> impl Iterator<Item = f64> + '_ {
    g.weights.data().iter().copied().chain(g.bias.iter().flatten().copied())
}

fn param_count(k: &ConvKernel) -> usize {
    k.weights().len() + k.bias().map_or(0, |b| b.len())
}

impl Adam {
    pub fn new(lr: f64, params: &[ConvKernel]) -> Self {
        Adam {
            lr,
            step: 0,
            m: params.iter().map(|k| vec![0.0; param_count(k)]).collect(),
            v: params.iter().map(|k| vec![0.0; param_count(k)]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [ConvKernel], grads: &[KernelGrad]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::invalid("Adam::step", "parameter and gradient lists differ in length"));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for ((k, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let mut update = Vec::with_capacity(m.len());
            for ((gi, mi), vi) in flat_grad(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                update.push(self.lr * (*mi / c1) / ((*vi / c2).sqrt() + EPSILON));
            }
            if update.len() != m.len() {
                return Err(Error::invalid("Adam::step", "gradient does not match parameter layout"));
            }
            let nw = k.weights().len();
            for (p, u) in k.weights_mut().data_mut().iter_mut().zip(&update[..nw]) {
                *p -= u;
            }
            if let Some(b) = k.bias_mut() {
                for (p, u) in b.iter_mut().zip(&update[nw..]) {
                    *p -= u;
                }
            }
        }
        Ok(())
    }
}
