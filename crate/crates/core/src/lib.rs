//! Parameterized hypercomplex multiplication (PHM) layers.
//!
//! A PHM layer computes `y = Hx + b` where the `k×d` matrix `H` is a sum of
//! `n` Kronecker products `Σᵢ Aᵢ ⊗ Sᵢ`. With `n = 1` it is an ordinary
//! fully-connected layer; with `n = 4` and the quaternion rule matrices it is
//! exactly the Hamilton product. The crate contains:
//!
//! - [`tensor`] and [`graph`]: dense `f64` tensors and a define-by-run
//!   reverse-mode tape covering every operation the models need.
//! - [`hypercomplex`]: quaternion algebra used as a reference oracle.
//! - [`phm`]: the layer, its implicit product and the block-diffusion view.
//! - [`models`]: PHM-LSTM and an encoder-decoder PHM-Transformer.
//! - [`experiments`]: synthetic tasks, training loops and parameter audits.
//! - [`verify`]: the subsumption, equivalence and gradient check suite.
//!
//! Randomness comes from `ChaCha8Rng` seeded with a `u64`, so every run is
//! reproducible bit for bit.
//!
//! The `parallel` feature (on by default) lets the matrix kernels spread
//! output rows over a rayon pool. Reduction order is identical with the
//! feature off.

pub mod alloc_probe;
pub mod container;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod graph;
pub mod hypercomplex;
pub mod kernels;
pub mod models;
pub mod optim;
pub mod phm;
pub mod tensor;
pub mod verify;

pub use error::{PhmError, Result};
pub use graph::{Activation, Graph, Var};
pub use hypercomplex::Quaternion;
pub use optim::{Optimizer, OptimizerSpec};
pub use phm::{phm_init, phm_param_count, ForwardPath, PhmParams};
pub use tensor::{Param, Tensor};

/// The seedable generator used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    <Rng as rand::SeedableRng>::seed_from_u64(seed)
}
