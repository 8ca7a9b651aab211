use std::time::Instant;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::harness::data::Dataset;
use crate::harness::metrics::{psnr, ssim, MetricsRecord};
use crate::harness::model::DenoiserModel;
use crate::harness::optim::Adam;
use crate::init::ReinitPolicy;
use crate::loss::{refresh_weights, total_loss_and_grad, LossBreakdown};
use crate::manifolds::Manifold;
use crate::rng::{derive_epoch_seed, splitmix64, SeededRng};
use crate::tensor::{reduce_norm, reduce_norm_grad, Tensor};

const MODEL_STREAM: u64 = 0x6d6f_6465_6c00_0001;
const SHUFFLE_STREAM: u64 = 0x7368_7566_6c00_0002;

/// Outcome of one training run.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub records: Vec<MetricsRecord>,
    /// Epoch at which a non-finite loss stopped the run.
    pub diverged_at: Option<usize>,
    pub model: DenoiserModel,
}

impl TrainReport {
    pub fn completed(&self) -> bool {
        self.diverged_at.is_none()
    }
}

/// Mean per-image PSNR and mean SSIM of `model` on `val`.
pub fn evaluate(model: &DenoiserModel, val: &Dataset) -> Result<(f64, f64)> {
    let (mut p, mut s) = (0.0, 0.0);
    for (clean, noisy) in val.clean.iter().zip(&val.noisy) {
        let out = model.forward(noisy)?;
        p += psnr(&out, clean)?;
        s += ssim(&out, clean)?;
    }
    Ok((p / val.len() as f64, s / val.len() as f64))
}

/// PSNR and SSIM of the noisy inputs themselves.
pub fn evaluate_identity(val: &Dataset) -> Result<(f64, f64)> {
    let (mut p, mut s) = (0.0, 0.0);
    for (clean, noisy) in val.clean.iter().zip(&val.noisy) {
        p += psnr(noisy, clean)?;
        s += ssim(noisy, clean)?;
    }
    Ok((p / val.len() as f64, s / val.len() as f64))
}

/// Initial model for `seed`, as used by [`train`].
pub fn initial_model(cfg: &ExperimentConfig, seed: u64) -> Result<DenoiserModel> {
    let mut rng = SeededRng::new(splitmix64(seed ^ MODEL_STREAM));
    DenoiserModel::random(&mut rng, &cfg.model, 1)
}

fn step_loss(cfg: &ExperimentConfig, nets: &[Manifold], gt: &Tensor, y: &Tensor) -> Result<(LossBreakdown, Tensor)> {
    let spec = &cfg.loss;
    if spec.prior_inactive() {
        let base = reduce_norm(gt, y, spec.base_norm)?;
        let grad = reduce_norm_grad(gt, y, spec.base_norm)?;
        return Ok((
            LossBreakdown {
                total: base,
                base,
                prior: 0.0,
            },
            grad,
        ));
    }
    total_loss_and_grad(spec, nets, gt, y)
}

/// Trains a denoiser for one seed and records validation metrics after every
/// epoch. Training uses dataset indices `[0, count)`, validation the
/// `val_count` indices after them.
pub fn train(cfg: &ExperimentConfig, seed: u64) -> Result<TrainReport> {
    cfg.validate()?;
    let ds = &cfg.dataset;
    let train_set = Dataset::generate(ds, 0..ds.count)?;
    let val_set = Dataset::generate(ds, ds.count..ds.total())?;
    train_on(cfg, seed, &train_set, &val_set)
}

/// [`train`] on pre-generated splits.
pub fn train_on(cfg: &ExperimentConfig, seed: u64, train_set: &Dataset, val_set: &Dataset) -> Result<TrainReport> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("train", "training and validation sets must be non-empty"));
    }
    let opt = &cfg.optimizer;
    let mut model = initial_model(cfg, seed)?;
    let mut adam = Adam::new(opt.lr, model.net().layers());
    let active = !cfg.loss.prior_inactive();
    let redraws = cfg.loss.nets.iter().any(|n| n.reinit == ReinitPolicy::EachEpoch);
    let per_step = active && redraws && cfg.loss.reinit_per_iteration;
    let mut nets = if active {
        refresh_weights(&cfg.loss, seed, 0, 1)?
    } else {
        Vec::new()
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(opt.epochs);
    let mut step = 0usize;
    for epoch in 0..opt.epochs {
        let started = Instant::now();
        if active && redraws && !per_step && epoch > 0 {
            nets = refresh_weights(&cfg.loss, seed, epoch, 1)?;
        }
        SeededRng::new(derive_epoch_seed(seed ^ SHUFFLE_STREAM, 0, epoch)).shuffle(&mut order);
        let (mut base, mut prior, mut total, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(opt.batch) {
            if per_step {
                nets = refresh_weights(&cfg.loss, seed, step, 1)?;
            }
            let (gt, x) = train_set.batch(chunk)?;
            let (y, trace) = model.forward_traced(&x)?;
            let (loss, grad) = step_loss(cfg, &nets, &gt, &y)?;
            if !loss.total.is_finite() || !grad.all_finite() {
                return Ok(TrainReport {
                    records,
                    diverged_at: Some(epoch),
                    model,
                });
            }
            let grads = model.param_grads(&trace, &grad)?;
            adam.step(model.net_mut().layers_mut(), &grads)?;
            base += loss.base;
            prior += loss.prior;
            total += loss.total;
            batches += 1;
            step += 1;
        }
        let (val_psnr, val_ssim) = evaluate(&model, val_set)?;
        if !val_psnr.is_finite() {
            return Ok(TrainReport {
                records,
                diverged_at: Some(epoch),
                model,
            });
        }
        let n = batches as f64;
        records.push(MetricsRecord {
            epoch,
            base_loss: base / n,
            prior_loss: prior / n,
            total_loss: total / n,
            val_psnr,
            val_ssim,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainReport {
        records,
        diverged_at: None,
        model,
    })
}
