//! Desk-scale denoising experiments: synthetic data, a small residual CNN,
//! Adam, and PSNR/SSIM.

pub mod data;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pgm;
pub mod train;

pub use data::{gen_synthetic_pair, Dataset, SyntheticDatasetSpec};
pub use metrics::{psnr, ssim, MetricsRecord};
pub use model::{DenoiserModel, ModelSpec};
pub use optim::Adam;
pub use train::{train, TrainReport};
