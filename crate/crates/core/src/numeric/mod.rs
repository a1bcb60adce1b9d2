//! Dense layers, a GRU cell, categorical helpers, RMSprop and gradient checks.

pub mod checkpoint;
pub mod gradcheck;
pub mod gru;
pub mod layers;
pub mod optim;
pub mod prob;
pub mod tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::Checkpoint;
pub use gradcheck::{check_module, finite_diff_gradcheck, BlockReport, GradReport};
pub use gru::{gru_step, GruCell, GruStepCache};
pub use layers::{dense_forward, Activation, DenseCache, DenseLayer, Module, Param};
pub use optim::{rmsprop_update, OptimizerState, RmsPropConfig};
pub use prob::{argmax, categorical_kl, softmax, Distribution, PROB_FLOOR};
pub use tensor::Tensor;

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream seed from `(seed, stream)` with splitmix64.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
