//! Named, counter-based random streams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Independent generator for `(seed, domain, stream)`; identical inputs give identical output.
pub fn stream_rng(seed: u64, domain: &str, stream: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(domain.as_bytes());
    let key: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Draws the gap to the next success of a Bernoulli(p) sequence, `ln_q = ln(1 - p)`.
#[inline]
pub fn geometric_gap<R: rand::Rng + ?Sized>(rng: &mut R, ln_q: f64) -> u64 {
    let u: f64 = 1.0 - rng.gen::<f64>();
    let g = (u.ln() / ln_q).floor();
    if g >= u64::MAX as f64 {
        u64::MAX
    } else {
        g as u64
    }
}
