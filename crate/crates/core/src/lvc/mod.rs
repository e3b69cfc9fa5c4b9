//! Location-variable convolutions: per-interval kernels predicted from
//! conditioning frames, the gated residual LVC block and a loop-based
//! reference implementation.

mod apply;
mod kernels;
mod predictor;

pub use apply::{lvc_apply, lvc_apply_oracle, lvc_block, lvc_block_oracle};
pub use kernels::{HostKernels, KernelSet, LayerKernels, LvcStackConfig};
pub use predictor::{KernelPredictor, KernelPredictorConfig};
