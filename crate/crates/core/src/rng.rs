//! Seeded pseudo-random numbers with a fixed, documented algorithm.
//!
//! The generator is xorshift64* (Vigna, 2016):
//!
//! ```text
//! state ^= state >> 12
//! state ^= state << 25
//! state ^= state >> 27
//! output = state * 0x2545F4914F6CDD1D   (wrapping)
//! ```
//!
//! The initial state is `splitmix64(seed)`, forced non-zero. Uniform doubles
//! take the top 53 output bits, giving values in `[0, 1)`. Normal draws use
//! the Box–Muller transform on pairs of uniforms and cache the second value
//! of each pair.

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One step of SplitMix64's output function applied to `x + gamma`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(SPLITMIX_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    state: u64,
    spare: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        let state = match splitmix64(seed) {
            0 => SPLITMIX_GAMMA,
            s => s,
        };
        SeededRng {
            seed,
            state,
            spare: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, bound)`; `bound` must be non-zero.
    pub fn below(&mut self, bound: usize) -> usize {
        // Multiply-shift; bias is below 2^-32 for the bounds used here.
        ((self.next_u64() >> 32) * bound as u64 >> 32) as usize
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        // 1 - u lies in (0, 1], keeping ln finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let t = std::f64::consts::TAU * u2;
        self.spare = Some(r * t.sin());
        r * t.cos()
    }

    pub fn normal_sample(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Seed for loss network `net_index` at `epoch`, absorbed in that order
/// through SplitMix64:
///
/// `splitmix64(splitmix64(splitmix64(base) ^ (net_index + 1)) ^ (epoch + 1))`
///
/// The result depends only on its three arguments.
pub fn derive_epoch_seed(base_seed: u64, net_index: usize, epoch: usize) -> u64 {
    let h = splitmix64(base_seed);
    let h = splitmix64(h ^ (net_index as u64).wrapping_add(1));
    splitmix64(h ^ (epoch as u64).wrapping_add(1))
}
