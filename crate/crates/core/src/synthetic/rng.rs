//! Counter-based pseudo-random stream.
//!
//! Algorithm (reproducible in any language with 64-bit unsigned arithmetic):
//!
//! * `mix(z)`: the SplitMix64 finalizer
//!   `z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27; z *= 0x94D049BB133111EB; z ^= z >> 31`.
//! * A stream is a pair `(key, counter)` with `key = mix(seed ^ 0x6A09E667F3BCC909)`.
//! * The `n`-th 64-bit output (n = 0, 1, ...) is `mix(key + (n + 1) * 0x9E3779B97F4A7C15)`.
//! * A child stream `i` has key `mix(key ^ mix(i + 0xBB67AE8584CAA73B))` and counter 0.
//! * Uniforms in (0,1): `((x >> 11) + 0.5) * 2^-53`.
//! * Normals: Box–Muller cosine branch, two uniforms per draw.
//! * Cauchy: `tan(pi * (u - 0.5))`.
//! * Poisson: Knuth multiplication for `lambda < 30`, otherwise a rounded
//!   normal approximation clamped at zero.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { key: mix(seed ^ 0x6A09_E667_F3BC_C909), counter: 0 }
    }

    /// Independent child stream.
    pub fn stream(&self, index: u64) -> Self {
        Self { key: mix(self.key ^ mix(index.wrapping_add(0xBB67_AE85_84CA_A73B))), counter: 0 }
    }

    /// Output at an arbitrary counter position, without advancing.
    pub fn at(&self, n: u64) -> u64 {
        mix(self.key.wrapping_add(n.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = self.at(self.counter);
        self.counter = self.counter.wrapping_add(1);
        v
    }

    /// Uniform in the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n` (`n > 0`).
    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn cauchy(&mut self) -> f64 {
        (std::f64::consts::PI * (self.uniform() - 0.5)).tan()
    }

    pub fn poisson(&mut self, lambda: f64) -> usize {
        if lambda <= 0.0 {
            return 0;
        }
        if lambda < 30.0 {
            let limit = (-lambda).exp();
            let mut k = 0;
            let mut p = self.uniform();
            while p > limit {
                k += 1;
                p *= self.uniform();
            }
            k
        } else {
            (lambda + lambda.sqrt() * self.normal()).round().max(0.0) as usize
        }
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, v: &mut [T]) {
        for i in (1..v.len()).rev() {
            let j = self.below(i + 1);
            v.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_outputs() {
        // mix is the SplitMix64 finalizer: the first output of the canonical
        // SplitMix64 generator seeded with 0 is mix(GOLDEN).
        assert_eq!(mix(GOLDEN), 0xE220_A839_7B1D_CDAF);
        let r = CounterRng::new(7);
        let mut s = r.clone();
        assert_eq!(s.next_u64(), r.at(0));
        assert_eq!(s.next_u64(), r.at(1));
    }

    #[test]
    fn deterministic_and_distinct() {
        let a: Vec<u64> = (0..5)
            .map({
                let mut r = CounterRng::new(1);
                move |_| r.next_u64()
            })
            .collect();
        let b: Vec<u64> = (0..5)
            .map({
                let mut r = CounterRng::new(1);
                move |_| r.next_u64()
            })
            .collect();
        assert_eq!(a, b);
        let mut c = CounterRng::new(2);
        assert_ne!(a[0], c.next_u64());
        assert_ne!(CounterRng::new(1).stream(0).at(0), CounterRng::new(1).stream(1).at(0));
    }

    #[test]
    fn moments() {
        let mut r = CounterRng::new(3);
        let n = 200_000;
        let (mut s, mut s2, mut u) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = r.normal();
            s += x;
            s2 += x * x;
            u += r.uniform();
        }
        assert!((s / n as f64).abs() < 0.01);
        assert!((s2 / n as f64 - 1.0).abs() < 0.01);
        assert!((u / n as f64 - 0.5).abs() < 0.005);
        let m: f64 = (0..n).map(|_| r.poisson(3.5) as f64).sum::<f64>() / n as f64;
        assert!((m - 3.5).abs() < 0.02);
    }
}
