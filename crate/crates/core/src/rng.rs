//! Portable counter-based random numbers for the phantom generator.
//!
//! Every value is a pure function of `(key, counter)`: the counter is
//! spread with the golden-ratio increment and passed through the SplitMix64
//! finalizer. Keys are derived the same way from `(seed, domain, draw)`.
//! Nothing depends on platform state, so any language that implements the
//! same 64-bit integer arithmetic reproduces the frames bit for bit. The
//! full recipe is written out in `docs/rng.md`.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream of values addressed by counter rather than drawn sequentially.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64, domain: u64, draw: u64) -> Self {
        let k = mix64(seed.wrapping_add(GOLDEN));
        let k = mix64(k ^ domain.wrapping_mul(GOLDEN));
        let k = mix64(k ^ draw.wrapping_add(1).wrapping_mul(GOLDEN));
        Self { key: k }
    }

    #[inline]
    pub fn u64_at(&self, counter: u64) -> u64 {
        mix64(self.key.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform_at(&self, counter: u64) -> f64 {
        (self.u64_at(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Exponential with unit mean, by inversion.
    #[inline]
    pub fn exponential_at(&self, counter: u64) -> f64 {
        -(1.0 - self.uniform_at(counter)).ln()
    }

    /// Standard normal pair from counters `2i` and `2i + 1` (Box-Muller).
    #[inline]
    pub fn normal_pair_at(&self, i: u64) -> (f64, f64) {
        let u1 = 1.0 - self.uniform_at(2 * i);
        let u2 = self.uniform_at(2 * i + 1);
        let radius = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        (radius * theta.cos(), radius * theta.sin())
    }

    /// Fills `out` with standard normal deviates; element `j` depends only on `j`.
    pub fn fill_normal(&self, out: &mut [f64]) {
        let pairs = (out.len() / 2) as u64;
        let mut chunks = out.chunks_exact_mut(2);
        for (i, pair) in (&mut chunks).enumerate() {
            let (a, b) = self.normal_pair_at(i as u64);
            pair[0] = a;
            pair[1] = b;
        }
        let rem = chunks.into_remainder();
        if let Some(last) = rem.first_mut() {
            *last = self.normal_pair_at(pairs).0;
        }
    }
}
