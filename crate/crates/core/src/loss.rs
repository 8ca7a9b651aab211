//! Image-level loss plus the random-network feature prior:
//!
//! ```text
//! total = ||gt - y|| + lambda * mean_i ||f_i(gt) - f_i(y)||
//! ```
//!
//! Both distances use the same norm. `f_i(gt)` and `f_i(y)` are always
//! evaluated with the same drawn weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::ReinitPolicy;
use crate::manifolds::{Manifold, RandomNetConfig};
use crate::rng::derive_epoch_seed;
use crate::tensor::{reduce_norm, reduce_norm_grad, Norm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleReduce {
    #[default]
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSpec {
    pub base_norm: Norm,
    pub lambda: f64,
    pub nets: Vec<RandomNetConfig>,
    pub ensemble_reduce: EnsembleReduce,
    /// Redraw `each_epoch` nets at every optimizer step instead of every
    /// epoch.
    pub reinit_per_iteration: bool,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            base_norm: Norm::L2,
            lambda: 0.1,
            nets: Vec::new(),
            ensemble_reduce: EnsembleReduce::Mean,
            reinit_per_iteration: false,
        }
    }
}

impl LossSpec {
    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!("{path}.lambda"), "must be a finite value >= 0"));
        }
        for (i, n) in self.nets.iter().enumerate() {
            n.validate(&format!("{path}.nets[{i}]"))?;
        }
        Ok(())
    }

    /// True when the prior cannot affect the total.
    pub fn prior_inactive(&self) -> bool {
        self.nets.is_empty() || self.lambda == 0.0
    }
}

/// Loss value split into its parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub base: f64,
    pub prior: f64,
}

fn check(gt: &Tensor, y: &Tensor) -> Result<()> {
    if gt.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            op: "loss",
            lhs: gt.shape(),
            rhs: y.shape(),
        });
    }
    Ok(())
}

/// Mean over nets of the feature distance; 0 for an empty ensemble.
pub fn prior_loss(spec: &LossSpec, weights: &[Manifold], gt: &Tensor, y: &Tensor) -> Result<f64> {
    check(gt, y)?;
    if weights.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for net in weights {
        sum += reduce_norm(&net.forward(gt)?, &net.forward(y)?, spec.base_norm)?;
    }
    Ok(sum / weights.len() as f64)
}

pub fn total_loss(spec: &LossSpec, weights: &[Manifold], gt: &Tensor, y: &Tensor) -> Result<LossBreakdown> {
    check(gt, y)?;
    let base = reduce_norm(gt, y, spec.base_norm)?;
    let prior = prior_loss(spec, weights, gt, y)?;
    Ok(LossBreakdown {
        total: base + spec.lambda * prior,
        base,
        prior,
    })
}

/// Loss and its gradient with respect to `y` from one set of forward passes.
pub fn total_loss_and_grad(
    spec: &LossSpec,
    weights: &[Manifold],
    gt: &Tensor,
    y: &Tensor,
) -> Result<(LossBreakdown, Tensor)> {
    check(gt, y)?;
    let base = reduce_norm(gt, y, spec.base_norm)?;
    let mut grad = reduce_norm_grad(gt, y, spec.base_norm)?;
    let mut prior = 0.0;
    if !weights.is_empty() {
        let scale = spec.lambda / weights.len() as f64;
        for net in weights {
            let fgt = net.forward(gt)?;
            let (fy, trace) = net.forward_traced(y)?;
            prior += reduce_norm(&fgt, &fy, spec.base_norm)?;
            if scale != 0.0 {
                let up = reduce_norm_grad(&fgt, &fy, spec.base_norm)?;
                grad.axpy(scale, &net.input_grad(&trace, &up)?)?;
            }
        }
        prior /= weights.len() as f64;
    }
    Ok((
        LossBreakdown {
            total: base + spec.lambda * prior,
            base,
            prior,
        },
        grad,
    ))
}

/// `d total / d y`. Network weights are constants.
pub fn total_loss_grad(spec: &LossSpec, weights: &[Manifold], gt: &Tensor, y: &Tensor) -> Result<Tensor> {
    Ok(total_loss_and_grad(spec, weights, gt, y)?.1)
}

/// Smallest distance from a point where the loss is not differentiable:
/// ReLU inputs inside the nets evaluated at `y` and, under L1, the residuals.
/// Finite-difference checks need a step well below this.
pub fn kink_margin(spec: &LossSpec, weights: &[Manifold], gt: &Tensor, y: &Tensor) -> Result<f64> {
    check(gt, y)?;
    let residual_margin = |a: &Tensor, b: &Tensor| -> Result<f64> {
        Ok(match spec.base_norm {
            Norm::L2 => f64::INFINITY,
            Norm::L1 => a.sub(b)?.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs())),
        })
    };
    let mut m = residual_margin(gt, y)?;
    for net in weights {
        let (fy, trace) = net.forward_traced(y)?;
        m = m.min(net.kink_margin(&trace));
        m = m.min(residual_margin(&net.forward(gt)?, &fy)?);
    }
    Ok(m)
}

/// Seed for net `net_index` of `spec` at refresh index `index` (an epoch,
/// or an optimizer step under `reinit_per_iteration`).
pub fn net_seed(cfg: &RandomNetConfig, base_seed: u64, net_index: usize, index: usize) -> u64 {
    let index = match cfg.reinit {
        ReinitPolicy::Once => 0,
        ReinitPolicy::EachEpoch => index,
    };
    derive_epoch_seed(base_seed ^ cfg.seed, net_index, index)
}

/// Draws every net in `spec` for refresh index `index`. `Once` nets always
/// use index 0, so their weights never change.
pub fn refresh_weights(spec: &LossSpec, base_seed: u64, index: usize, image_channels: usize) -> Result<Vec<Manifold>> {
    spec.nets
        .iter()
        .enumerate()
        .map(|(i, cfg)| Manifold::draw(cfg, image_channels, net_seed(cfg, base_seed, i, index)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::{conv2d, Padding};
    use crate::manifolds::ManifoldKind;
    use crate::rng::SeededRng;
    use crate::tensor::Shape;

    fn img(seed: u64) -> Tensor {
        Tensor::from_vec(Shape::new(2, 1, 6, 6), SeededRng::new(seed).normal_sample(72)).unwrap()
    }

    fn spec_with(kinds: &[ManifoldKind], lambda: f64) -> LossSpec {
        LossSpec {
            lambda,
            nets: kinds
                .iter()
                .map(|&k| RandomNetConfig {
                    kind: k,
                    channels: 4,
                    depth: 2,
                    ..RandomNetConfig::of_kind(k)
                })
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn identical_inputs_give_zero() {
        let spec = spec_with(&ManifoldKind::ALL, 0.5);
        let w = refresh_weights(&spec, 1, 0, 1).unwrap();
        let y = img(1);
        assert_eq!(prior_loss(&spec, &w, &y, &y).unwrap(), 0.0);
        let b = total_loss(&spec, &w, &y, &y).unwrap();
        assert_eq!((b.total, b.base, b.prior), (0.0, 0.0, 0.0));
        for norm in [Norm::L2] {
            let spec = LossSpec { base_norm: norm, ..spec.clone() };
            let g = total_loss_grad(&spec, &w, &y, &y).unwrap();
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn empty_ensemble_has_zero_prior() {
        let spec = LossSpec::default();
        assert_eq!(prior_loss(&spec, &[], &img(1), &img(2)).unwrap(), 0.0);
    }

    #[test]
    fn single_cdc_matches_direct_conv() {
        let mut spec = spec_with(&[ManifoldKind::Cdc], 1.0);
        spec.nets[0].theta = 0.0;
        spec.nets[0].depth = 1;
        let w = refresh_weights(&spec, 4, 0, 1).unwrap();
        let Manifold::Cdc(net) = &w[0] else { panic!() };
        let k = &net.layers()[0];
        let (gt, y) = (img(1), img(2));
        let direct = reduce_norm(
            &conv2d(&gt, k, Padding::Zero).unwrap(),
            &conv2d(&y, k, Padding::Zero).unwrap(),
            Norm::L2,
        )
        .unwrap();
        assert!((prior_loss(&spec, &w, &gt, &y).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn lambda_zero_reduces_to_base() {
        let spec = spec_with(&[ManifoldKind::Inn], 0.0);
        let w = refresh_weights(&spec, 4, 0, 1).unwrap();
        let (gt, y) = (img(3), img(4));
        let b = total_loss(&spec, &w, &gt, &y).unwrap();
        assert_eq!(b.total, b.base);
        let g = total_loss_grad(&spec, &w, &gt, &y).unwrap();
        let n = gt.len() as f64;
        let expect = y.sub(&gt).unwrap().scale(2.0 / n);
        assert!(g.max_abs_diff(&expect).unwrap() < 1e-15);
    }

    #[test]
    fn lambda_is_linear() {
        let s1 = spec_with(&[ManifoldKind::Taylor], 1.0);
        let s2 = LossSpec { lambda: 2.0, ..s1.clone() };
        let w = refresh_weights(&s1, 4, 0, 1).unwrap();
        let (gt, y) = (img(5), img(6));
        let a = total_loss(&s1, &w, &gt, &y).unwrap();
        let b = total_loss(&s2, &w, &gt, &y).unwrap();
        assert!(((b.total - b.base) - 2.0 * (a.total - a.base)).abs() < 1e-12);
    }

    #[test]
    fn repeated_identical_nets_equal_single() {
        let one = spec_with(&[ManifoldKind::Cdc], 1.0);
        let w1 = refresh_weights(&one, 4, 0, 1).unwrap();
        let three = LossSpec { nets: vec![one.nets[0].clone(); 3], ..one.clone() };
        let w3 = vec![w1[0].clone(), w1[0].clone(), w1[0].clone()];
        let (gt, y) = (img(7), img(8));
        assert_eq!(
            prior_loss(&one, &w1, &gt, &y).unwrap(),
            prior_loss(&three, &w3, &gt, &y).unwrap()
        );
    }

    #[test]
    fn refresh_policies() {
        let mut spec = spec_with(&[ManifoldKind::Cdc, ManifoldKind::Cdc], 1.0);
        let a = refresh_weights(&spec, 9, 0, 1).unwrap();
        let b = refresh_weights(&spec, 9, 7, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        for n in &mut spec.nets {
            n.reinit = ReinitPolicy::EachEpoch;
        }
        let c = refresh_weights(&spec, 9, 0, 1).unwrap();
        let d = refresh_weights(&spec, 9, 1, 1).unwrap();
        assert_ne!(c, d);
        assert_eq!(c, refresh_weights(&spec, 9, 0, 1).unwrap());
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let spec = LossSpec::default();
        let a = Tensor::zeros(Shape::new(1, 1, 4, 4));
        let b = Tensor::zeros(Shape::new(1, 1, 4, 5));
        assert!(total_loss(&spec, &[], &a, &b).is_err());
        assert!(total_loss_grad(&spec, &[], &a, &b).is_err());
    }

    #[test]
    fn negative_lambda_rejected() {
        let spec = LossSpec { lambda: -1.0, ..Default::default() };
        assert!(spec.validate("loss").unwrap_err().to_string().contains("loss.lambda"));
    }
}
