//! Small neural-network toolkit over `candle-core`: seeded parameter
//! stores, convolution layers, activations, differentiable spectral
//! front ends and AdamW.

mod conv_ops;
mod fft_ops;
mod layers;
mod ops;
mod optim;
mod params;
mod spectral;

pub use layers::{Conv1d, Conv2d, Linear, TransposedConv1d};
pub use ops::{leaky_relu, log_softmax, reflect_pad_end, sigmoid, softmax, to_scalar, LRELU_SLOPE};
pub use optim::{AdamW, AdamWConfig};
pub use params::ParamStore;
pub use spectral::{MelFrontend, StftMagnitude};

use candle_core::Device;

/// All tensors in the crate live on the CPU.
pub const DEVICE: Device = Device::Cpu;
