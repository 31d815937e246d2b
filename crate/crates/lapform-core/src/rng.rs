//! Counter-based random numbers: every draw is a pure function of
//! `(seed, counter)`, so streams can be split and replayed regardless of
//! worker scheduling.

use crate::matrix::Matrix;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer; bijective with good avalanche behavior.
fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator: draw `n` is `mix64(seed + n * gamma)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    seed: u64,
    counter: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// Resumes a stream at an explicit draw counter.
    pub fn at(seed: u64, counter: u64) -> Self {
        Self { seed, counter }
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Derives an independent stream; child draws never collide with the
    /// parent's because the child seed is re-mixed.
    pub fn derive(&self, stream: u64) -> Self {
        let tweak = mix64(stream.wrapping_mul(GOLDEN_GAMMA) ^ 0x6A09_E667_F3BC_C909);
        Self::new(mix64(self.seed ^ tweak))
    }

    pub fn next_u64(&mut self) -> u64 {
        let z = self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA));
        self.counter += 1;
        mix64(z)
    }

    /// Uniform in `[0, 1)` with 53 random mantissa bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`; safe as a `ln` argument.
    fn next_f64_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller. Uses only the cosine branch so each
    /// draw consumes a fixed number of counter ticks.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.next_f64_open();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Normal(0, std^2) truncated to `[-2 std, 2 std]` by rejection.
    pub fn trunc_normal(&mut self, std: f64) -> f64 {
        assert!(std > 0.0, "trunc_normal requires std > 0");
        loop {
            let z = self.normal();
            if z.abs() <= 2.0 {
                return std * z;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform integer in `[0, n)` without modulo bias.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }

    /// `k` distinct values from `[0, n)`, in draw order.
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        self.shuffle(&mut pool);
        pool.truncate(k);
        pool
    }
}

/// Matrix with entries from Normal(0, std^2) truncated at two standard
/// deviations, drawn row-major.
pub fn trunc_normal_init(rows: usize, cols: usize, std: f64, rng: &mut RngState) -> Matrix {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.trunc_normal(std)).collect();
    Matrix::from_raw(rows, cols, data)
}
