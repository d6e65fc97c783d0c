//! Counter-based deterministic pseudo-random generator.
//!
//! Every random draw in this crate is a pure function of
//! `(seed, stream, counter)` hashed through SplitMix64, so datasets and
//! weight initializations are reproducible bit-for-bit from a single integer
//! seed, and the algorithm is simple enough to reimplement in any language:
//!
//! ```text
//! state = seed ^ (stream * 0x9E3779B97F4A7C15)
//! for i in 0..=counter: x = splitmix64_step(state + i * GOLDEN)
//! ```
//!
//! Concretely, draw `k` is `mix(seed ^ stream_key, k)` where `mix` is the
//! SplitMix64 output function applied to `base + (k+1) * 0x9E3779B97F4A7C15`.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A named random stream: independent draws for independent purposes
/// (templates, noise, per-sequence placement, weight init) never collide.
#[derive(Debug, Clone, Copy)]
pub struct Stream {
    base: u64,
    counter: u64,
}

impl Stream {
    /// Derive a stream from a seed and a stream id.
    pub fn new(seed: u64, stream: u64) -> Self {
        Stream { base: splitmix64(seed.wrapping_add(GOLDEN)) ^ stream.wrapping_mul(GOLDEN), counter: 0 }
    }

    /// Derive a sub-stream, e.g. one per sequence or per tensor.
    pub fn substream(&self, id: u64) -> Stream {
        Stream { base: splitmix64(self.base ^ id.wrapping_mul(GOLDEN).wrapping_add(1)), counter: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        splitmix64(self.base.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform draw in `[0, 1)` using the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Integer draw in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller (two uniforms per draw, no state carry).
    pub fn normal(&mut self) -> f64 {
        let u1 = self.next_f64().max(f64::MIN_POSITIVE);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Log-uniform draw in `[lo, hi)`, both positive.
    pub fn log_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        debug_assert!(lo > 0.0 && hi >= lo);
        (self.uniform(lo.ln(), hi.ln())).exp()
    }

    /// Poisson draw by inversion; fine for the rates used here (<= ~1000).
    pub fn poisson(&mut self, mean: f64) -> usize {
        debug_assert!(mean >= 0.0);
        if mean == 0.0 {
            return 0;
        }
        // Knuth's product method in log space to avoid underflow at large means.
        let limit = -mean;
        let mut acc = 0.0_f64;
        let mut k = 0usize;
        loop {
            acc += self.next_f64().max(f64::MIN_POSITIVE).ln();
            if acc < limit {
                return k;
            }
            k += 1;
            if k > 100_000 {
                return k; // unreachable for sane means
            }
        }
    }
}
