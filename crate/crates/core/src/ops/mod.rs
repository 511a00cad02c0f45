//! Layer primitives with explicit forward/backward passes.
//!
//! Every reduction walks its operands in a fixed sequential order, so results
//! are bit-reproducible for a given input.

mod batchnorm;
mod conv;
mod gemm;
mod gradcheck;
mod loss;
mod matmul;
mod optim;
mod pool;

pub use batchnorm::{BatchNorm, Mode};
pub use conv::{conv2d, conv2d_backward, conv_output_dim};
pub use gradcheck::{finite_diff_check, finite_diff_gradient, gradcheck_step};
pub use loss::softmax_cross_entropy;
pub use matmul::{dense, dense_backward, matmul, matmul_backward};
pub use optim::sgd_momentum_step;
pub use pool::{global_avg_pool, global_avg_pool_backward};
