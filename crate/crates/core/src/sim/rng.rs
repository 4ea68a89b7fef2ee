use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// Deterministic Gaussian noise stream: ChaCha20 keyed by a 64-bit seed.
#[derive(Debug, Clone)]
pub struct NoiseRng {
    inner: ChaCha20Rng,
}

impl NoiseRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    /// Seed of Monte-Carlo instance `index`, independent of scheduling.
    pub fn for_instance(base_seed: u64, index: usize) -> Self {
        Self::new(base_seed.wrapping_add(index as u64))
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal(&mut self, sigma: f64) -> f64 {
        // draw even for sigma = 0 so streams stay aligned across noise levels
        sigma * self.standard_normal()
    }
}
