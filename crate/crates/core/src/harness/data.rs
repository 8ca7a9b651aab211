//! Procedural grayscale images with additive Gaussian noise.
//!
//! Each clean image is a random linear gradient with rectangles and disks
//! painted over it. Pair `i` is a pure function of `(seed, i)`; training uses
//! indices `[0, count)` and validation `[count, count + val_count)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{splitmix64, SeededRng};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticDatasetSpec {
    /// Training images.
    pub count: usize,
    /// Validation images, indexed after the training ones.
    pub val_count: usize,
    /// Height and width.
    pub size: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        SyntheticDatasetSpec {
            count: 512,
            val_count: 64,
            size: 32,
            noise_sigma: 25.0 / 255.0,
            seed: 2023,
        }
    }
}

impl SyntheticDatasetSpec {
    pub fn validate(&self, path: &str) -> Result<()> {
        if self.count == 0 {
            return Err(Error::config(format!("{path}.count"), "must be at least 1"));
        }
        if self.val_count == 0 {
            return Err(Error::config(format!("{path}.val_count"), "must be at least 1"));
        }
        if self.size < 11 {
            return Err(Error::config(format!("{path}.size"), "must be at least 11 (SSIM window)"));
        }
        if !(0.0..1.0).contains(&self.noise_sigma) {
            return Err(Error::config(format!("{path}.noise_sigma"), "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.count + self.val_count
    }

    pub fn image_shape(&self) -> Shape {
        Shape::new(1, 1, self.size, self.size)
    }
}

fn paint_clean(rng: &mut SeededRng, size: usize) -> Vec<f64> {
    let s = size as f64;
    let base = 0.2 + 0.6 * rng.uniform();
    let gx = (rng.uniform() - 0.5) * 0.4 / s;
    let gy = (rng.uniform() - 0.5) * 0.4 / s;
    let mut img: Vec<f64> = (0..size * size)
        .map(|i| base + gx * (i % size) as f64 + gy * (i / size) as f64)
        .collect();
    let shapes = 2 + rng.below(5);
    for _ in 0..shapes {
        let value = 0.2 + 0.6 * rng.uniform();
        if rng.uniform() < 0.5 {
            let (x0, y0) = (rng.below(size), rng.below(size));
            let (w, h) = (2 + rng.below(size / 2), 2 + rng.below(size / 2));
            for y in y0..(y0 + h).min(size) {
                for x in x0..(x0 + w).min(size) {
                    img[y * size + x] = value;
                }
            }
        } else {
            let (cx, cy) = (rng.uniform() * s, rng.uniform() * s);
            let r = 2.0 + rng.uniform() * s / 4.0;
            for y in 0..size {
                for x in 0..size {
                    let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    if dx * dx + dy * dy <= r * r {
                        img[y * size + x] = value;
                    }
                }
            }
        }
    }
    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    img
}

/// Clean image and unclamped noise for `index`.
pub fn gen_clean_and_noise(spec: &SyntheticDatasetSpec, index: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if index >= spec.total() {
        return Err(Error::invalid(
            "gen_synthetic_pair",
            format!("index {index} out of range for {} images", spec.total()),
        ));
    }
    let mut rng = SeededRng::new(splitmix64(spec.seed) ^ index as u64);
    let clean = paint_clean(&mut rng, spec.size);
    let noise = rng
        .normal_sample(clean.len())
        .into_iter()
        .map(|v| v * spec.noise_sigma)
        .collect();
    Ok((clean, noise))
}

/// `(clean, noisy)`, both `1 x 1 x size x size` in `[0, 1]`.
pub fn gen_synthetic_pair(spec: &SyntheticDatasetSpec, index: usize) -> Result<(Tensor, Tensor)> {
    let (clean, noise) = gen_clean_and_noise(spec, index)?;
    let noisy = clean
        .iter()
        .zip(&noise)
        .map(|(c, n)| (c + n).clamp(0.0, 1.0))
        .collect();
    let shape = spec.image_shape();
    Ok((Tensor::from_vec(shape, clean)?, Tensor::from_vec(shape, noisy)?))
}

/// Materialized split of a dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub clean: Vec<Tensor>,
    pub noisy: Vec<Tensor>,
}

impl Dataset {
    pub fn generate(spec: &SyntheticDatasetSpec, range: std::ops::Range<usize>) -> Result<Self> {
        let (mut clean, mut noisy) = (Vec::new(), Vec::new());
        for i in range {
            let (c, n) = gen_synthetic_pair(spec, i)?;
            clean.push(c);
            noisy.push(n);
        }
        Ok(Dataset { clean, noisy })
    }

    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    /// Stacks the listed items into `(clean, noisy)` batches.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        let clean: Vec<Tensor> = indices.iter().map(|&i| self.clean[i].clone()).collect();
        let noisy: Vec<Tensor> = indices.iter().map(|&i| self.noisy[i].clone()).collect();
        Ok((Tensor::stack(&clean)?, Tensor::stack(&noisy)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_is_clean() {
        let spec = SyntheticDatasetSpec {
            noise_sigma: 0.0,
            ..Default::default()
        };
        let (c, n) = gen_synthetic_pair(&spec, 3).unwrap();
        assert_eq!(c, n);
    }

    #[test]
    fn deterministic_and_in_range() {
        let spec = SyntheticDatasetSpec::default();
        let a = gen_synthetic_pair(&spec, 17).unwrap();
        let b = gen_synthetic_pair(&spec, 17).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, gen_synthetic_pair(&spec, 18).unwrap().0);
        for t in [&a.0, &a.1] {
            assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn out_of_range_index() {
        let spec = SyntheticDatasetSpec {
            count: 4,
            val_count: 2,
            ..Default::default()
        };
        assert!(gen_synthetic_pair(&spec, 5).is_ok());
        assert!(gen_synthetic_pair(&spec, 6).is_err());
    }

    #[test]
    fn images_have_structure() {
        let spec = SyntheticDatasetSpec::default();
        let (c, _) = gen_synthetic_pair(&spec, 0).unwrap();
        let mean = c.sum() / c.len() as f64;
        let var = c.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c.len() as f64;
        assert!(var > 1e-4);
    }

    #[test]
    fn half_normal_noise_magnitude() {
        let spec = SyntheticDatasetSpec {
            count: 1000,
            ..Default::default()
        };
        let (mut sum, mut n) = (0.0, 0usize);
        for i in 0..1000 {
            let (c, noise) = gen_clean_and_noise(&spec, i).unwrap();
            for (cv, nv) in c.iter().zip(&noise) {
                let noisy = cv + nv;
                // Pixels that no plausible draw pushes past the clamp.
                if (0.3..=0.7).contains(cv) && (0.0..=1.0).contains(&noisy) {
                    sum += (noisy.clamp(0.0, 1.0) - cv).abs();
                    n += 1;
                }
            }
        }
        let expect = spec.noise_sigma * (2.0 / std::f64::consts::PI).sqrt();
        let got = sum / n as f64;
        assert!((got / expect - 1.0).abs() < 0.05, "{got} vs {expect}");
    }

    #[test]
    fn noisy_input_psnr_near_analytic() {
        let spec = SyntheticDatasetSpec {
            count: 1000,
            ..Default::default()
        };
        let (mut se, mut n) = (0.0, 0usize);
        for i in 0..1000 {
            let (c, noisy) = gen_synthetic_pair(&spec, i).unwrap();
            se += c.sub(&noisy).unwrap().data().iter().map(|v| v * v).sum::<f64>();
            n += c.len();
        }
        let pooled = -10.0 * (se / n as f64).log10();
        let analytic = -20.0 * spec.noise_sigma.log10();
        assert!((pooled - analytic).abs() < 0.3, "{pooled} vs {analytic}");
    }
}
