use nalgebra::{Complex, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{lit, Scalar};

/// Stream identifiers, so that each operation draws from its own
/// reproducible sequence for a given seed.
pub mod streams {
    pub const NORMAL_RANK: u64 = 1;
    pub const ZERO_COMPRESSION: u64 = 2;
    pub const RSTAR_MIXING: u64 = 3;
    pub const VSTARG_MIXING: u64 = 4;
    pub const DIRECTION_REDRAW: u64 = 5;
    pub const LAMBDA_PERTURBATION: u64 = 6;
    pub const GENERATOR: u64 = 7;
    pub const ENSEMBLE: u64 = 8;
}

/// Seeded source of the "generic" coefficients used by the kernel-stacking
/// constructions.
///
/// Coefficients are uniform on `[-1, 1]`. A mixer can be made adversarial:
/// its first `zeroed_attempts` attempts (see [`Mixer::begin_attempt`]) draw
/// all-zero mixing vectors, which lie in the measure-zero bad set and force
/// the retry paths.
#[derive(Clone, Debug)]
pub struct Mixer {
    rng: ChaCha8Rng,
    zeroed_attempts: usize,
    zero_mode: bool,
}

impl Mixer {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), zeroed_attempts: 0, zero_mode: false }
    }

    /// Independent stream `stream` derived from `seed`.
    pub fn derived(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, zeroed_attempts: 0, zero_mode: false }
    }

    pub fn adversarial(seed: u64, stream: u64, zeroed_attempts: usize) -> Self {
        Self { zeroed_attempts, ..Self::derived(seed, stream) }
    }

    /// Marks the start of one construction attempt.
    pub fn begin_attempt(&mut self) {
        self.zero_mode = self.zeroed_attempts > 0;
        self.zeroed_attempts = self.zeroed_attempts.saturating_sub(1);
    }

    /// Mixing coefficient in `[-1, 1]` (zero in an adversarial attempt).
    pub fn coefficient<T: Scalar>(&mut self) -> T {
        let x: f64 = self.rng.random_range(-1.0..=1.0);
        if self.zero_mode {
            T::zero()
        } else {
            lit(x)
        }
    }

    pub fn vector<T: Scalar>(&mut self, len: usize) -> DVector<T> {
        DVector::from_fn(len, |_, _| self.coefficient())
    }

    pub fn complex_vector<T: Scalar>(&mut self, len: usize) -> DVector<Complex<T>> {
        DVector::from_fn(len, |_, _| Complex::new(self.coefficient(), self.coefficient()))
    }

    /// Plain uniform draw, never zeroed.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.random_range(lo..hi)
    }

    pub fn next_seed(&mut self) -> u64 {
        self.rng.random()
    }
}
