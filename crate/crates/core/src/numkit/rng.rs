use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// Seeded, platform-independent random stream.
///
/// A stream is identified by `(seed, stream_id)`; identical pairs yield
/// identical draw sequences. Child streams are derived by mixing a child id
/// into the stream id, so distinct ids give independent ChaCha streams.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Independent stream keyed by `child_id`, unaffected by draws already
    /// taken from `self`.
    pub fn child(&self, child_id: u64) -> Self {
        Self::new(self.seed, splitmix64(self.stream_id ^ splitmix64(child_id)))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `count` distinct indices from `[0, n)`, in draw order.
    pub fn choose_distinct(&mut self, n: usize, count: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, n, count).into_vec()
    }

    pub fn gamma(&mut self, shape: f64) -> f64 {
        Gamma::new(shape, 1.0)
            .expect("gamma shape validated by caller")
            .sample(&mut self.inner)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

/// Draw from the symmetric `Beta(alpha, alpha)` as `X / (X + Y)` with
/// `X, Y ~ Gamma(alpha, 1)`. Draws that round to an endpoint are redrawn.
pub fn sample_beta(alpha: f64, rng: &mut RngStream) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "beta shape must be positive, got {alpha}"
        )));
    }
    loop {
        let x = rng.gamma(alpha);
        let y = rng.gamma(alpha);
        let v = x / (x + y);
        if v > 0.0 && v < 1.0 {
            return Ok(v);
        }
    }
}
