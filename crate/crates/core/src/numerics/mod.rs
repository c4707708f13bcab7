//! Tensor arithmetic and seeded randomness.

mod rng;
mod tensor;

pub use rng::RngStream;
pub use tensor::{add_bias, hadamard, he_normal, matmul, relu, softmax_cross_entropy, Tensor};

pub(crate) use tensor::{cross_entropy_loss, gemm_nn, gemm_nt, gemm_tn};
