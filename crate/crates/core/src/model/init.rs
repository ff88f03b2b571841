use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::Tensor;

/// `U(-bound, bound)` entries.
pub(crate) fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}
