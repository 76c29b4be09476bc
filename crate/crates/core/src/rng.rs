//! Counter-based pseudo-random numbers.
//!
//! Every draw is a pure function of `(seed, stream, counter)`, so fixtures can
//! be regenerated frame by frame, in any order, on any platform. The
//! algorithm is SplitMix64 and is fully specified here:
//!
//! ```text
//! mix(z)   = z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!            z ^= z >> 27; z *= 0x94D049BB133111EB;
//!            z ^ (z >> 31)                              (wrapping u64)
//! key      = mix(seed ^ mix(stream))
//! out(i)   = mix(key + (i + 1) * 0x9E3779B97F4A7C15)    (i = 0, 1, 2, ...)
//! uniform  = (out >> 11) * 2^-53                         in [0, 1)
//! normal   = sqrt(-2 ln(1 - u1)) * cos(2π u2)            one normal per two uniforms
//! ```
//!
//! Stream ids made of several parts are folded with [`stream_id`].

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a tuple of integers into one stream id:
/// `h = 0; for p in parts { h = mix(h ^ p) + γ }`.
pub fn stream_id(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0u64, |h, &p| mix64(h ^ p).wrapping_add(GAMMA))
}

#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            key: mix64(seed ^ mix64(stream)),
            counter: 0,
        }
    }

    /// Generator for a multi-part stream, see [`stream_id`].
    pub fn keyed(seed: u64, parts: &[u64]) -> Self {
        Self::new(seed, stream_id(parts))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Integer uniform in `lo..=hi`.
    pub fn int_in(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo <= hi);
        let span = hi - lo + 1;
        lo + ((self.uniform() * span as f64) as u64).min(span - 1)
    }

    /// Standard normal via Box-Muller (cosine branch only).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        // first SplitMix64 outputs for state 0, as published with the algorithm
        assert_eq!(mix64(GAMMA), 0xE220_A839_7B1D_CDAF);
        assert_eq!(mix64(GAMMA.wrapping_mul(2)), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn draws_depend_only_on_key_and_counter() {
        let mut a = CounterRng::keyed(7, &[1, 2, 3]);
        let mut b = CounterRng::keyed(7, &[1, 2, 3]);
        let mut c = CounterRng::keyed(7, &[1, 2, 4]);
        let va: Vec<u64> = (0..5).map(|_| a.next_u64()).collect();
        let vb: Vec<u64> = (0..5).map(|_| b.next_u64()).collect();
        let vc: Vec<u64> = (0..5).map(|_| c.next_u64()).collect();
        assert_eq!(va, vb);
        assert_ne!(va, vc);
    }

    #[test]
    fn moments() {
        let mut r = CounterRng::new(42, 0);
        let n = 200_000;
        let u: Vec<f64> = (0..n).map(|_| r.uniform()).collect();
        assert!(u.iter().all(|v| (0.0..1.0).contains(v)));
        let mu = u.iter().sum::<f64>() / n as f64;
        assert!((mu - 0.5).abs() < 0.005);
        let z: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let m = z.iter().sum::<f64>() / n as f64;
        let v = z.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
        assert!(m.abs() < 0.01 && (v - 1.0).abs() < 0.02);
        for _ in 0..1000 {
            assert!((3..=5).contains(&r.int_in(3, 5)));
        }
    }
}
