//! Seeded random streams.
//!
//! Every stream is a ChaCha20 generator keyed by a 64-bit seed. Uniforms use
//! the top 53 bits of one `u64`; Gaussians use Box–Muller on two uniforms, so
//! a given seed yields the same samples on every platform.
//!
//! Child seeds are derived with [`derive_seed`]: starting from the master
//! seed, each label is folded in as `h = splitmix64(h ^ splitmix64(label))`.

use num_complex::Complex64;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// The splitmix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `labels` into `master`, one splitmix64 round per label.
pub fn derive_seed(master: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(splitmix64(master), |h, &l| splitmix64(h ^ splitmix64(l)))
}

/// FNV-1a over the bytes of a label, for string-keyed streams.
pub fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

#[derive(Debug, Clone)]
pub struct StreamRng {
    inner: ChaCha20Rng,
}

impl StreamRng {
    pub fn new(seed: u64) -> Self {
        Self { inner: ChaCha20Rng::seed_from_u64(seed) }
    }

    /// A stream keyed by `derive_seed(master, labels)`.
    pub fn derived(master: u64, labels: &[u64]) -> Self {
        Self::new(derive_seed(master, labels))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on [0, 2π).
    pub fn angle(&mut self) -> f64 {
        std::f64::consts::TAU * self.uniform()
    }

    /// A pair of independent N(0, 1) samples.
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        (r * c, r * s)
    }

    /// Circularly-symmetric CN(0, 1): each component N(0, 1/2).
    pub fn complex_normal(&mut self) -> Complex64 {
        let (a, b) = self.normal_pair();
        Complex64::new(a, b) * std::f64::consts::FRAC_1_SQRT_2
    }

    /// A unit-modulus sample with uniform phase.
    pub fn unit_phasor(&mut self) -> Complex64 {
        Complex64::from_polar(1.0, self.angle())
    }
}
