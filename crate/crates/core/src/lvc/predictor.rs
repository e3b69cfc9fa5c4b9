use candle_core::{Module, Tensor};
use serde::{Deserialize, Serialize};

use super::{KernelSet, LayerKernels, LvcStackConfig};
use crate::error::{Error, Result};
use crate::nn::{leaky_relu, Conv1d, ParamStore, LRELU_SLOPE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelPredictorConfig {
    pub hidden: usize,
    pub residual_blocks: usize,
    pub input_kernel: usize,
    /// Start the kernel and bias heads at zero.
    pub zero_head: bool,
}

impl Default for KernelPredictorConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            residual_blocks: 3,
            input_kernel: 5,
            zero_head: false,
        }
    }
}

/// Residual 1D convolutional network mapping conditioning frames to the
/// kernels and biases of every LVC layer of one stack in a single pass.
#[derive(Debug, Clone)]
pub struct KernelPredictor {
    stack: LvcStackConfig,
    input: Conv1d,
    residual: Vec<(Conv1d, Conv1d)>,
    kernel_head: Conv1d,
    bias_head: Conv1d,
}

impl KernelPredictor {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        cond_channels: usize,
        stack: &LvcStackConfig,
        config: &KernelPredictorConfig,
    ) -> Result<Self> {
        stack.validate()?;
        if config.input_kernel % 2 == 0 {
            return Err(Error::invalid("kernel predictor input kernel must be odd"));
        }
        let h = config.hidden;
        let input = Conv1d::same(params, &format!("{name}.input"), cond_channels, h, config.input_kernel)?;
        let residual = (0..config.residual_blocks)
            .map(|i| {
                Ok((
                    Conv1d::same(params, &format!("{name}.res{i}.conv0"), h, h, 3)?,
                    Conv1d::same(params, &format!("{name}.res{i}.conv1"), h, h, 3)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let layers = stack.layers();
        let (kernel_head, bias_head) = if config.zero_head {
            let zero = |params: &mut ParamStore, head: &str, out: usize| -> Result<Conv1d> {
                let w = params.constant(format!("{name}.{head}.weight"), &[out, h, 3], 0.0)?;
                let b = params.constant(format!("{name}.{head}.bias"), &[out], 0.0)?;
                Ok(Conv1d::from_tensors(w, Some(b), 1, 1, 1))
            };
            (
                zero(params, "kernel_head", layers * stack.weights_per_layer())?,
                zero(params, "bias_head", layers * stack.biases_per_layer())?,
            )
        } else {
            (
                Conv1d::same(params, &format!("{name}.kernel_head"), h, layers * stack.weights_per_layer(), 3)?,
                Conv1d::same(params, &format!("{name}.bias_head"), h, layers * stack.biases_per_layer(), 3)?,
            )
        };
        Ok(Self {
            stack: stack.clone(),
            input,
            residual,
            kernel_head,
            bias_head,
        })
    }

    pub fn stack(&self) -> &LvcStackConfig {
        &self.stack
    }

    /// `cond: (B, C_cond, T_h)` to one kernel pair per layer and frame.
    pub fn forward(&self, cond: &Tensor) -> Result<KernelSet> {
        let (b, _, frames) = cond.dims3()?;
        if frames == 0 {
            return Err(Error::invalid("empty conditioning"));
        }
        let mut h = leaky_relu(&self.input.forward(cond)?, LRELU_SLOPE)?;
        for (c0, c1) in &self.residual {
            let y = leaky_relu(&c0.forward(&h)?, LRELU_SLOPE)?;
            let y = leaky_relu(&c1.forward(&y)?, LRELU_SLOPE)?;
            h = (h + y)?;
        }
        let c = self.stack.channels;
        let k = self.stack.kernel_size;
        let layers = self.stack.layers();
        let kernels = self
            .kernel_head
            .forward(&h)?
            .reshape((b, layers, 2 * c, c, k, frames))?;
        let biases = self.bias_head.forward(&h)?.reshape((b, layers, 2 * c, frames))?;
        let layers = (0..layers)
            .map(|l| {
                let weight = kernels.narrow(1, l, 1)?.squeeze(1)?.permute((0, 4, 1, 2, 3))?.contiguous()?;
                let bias = biases.narrow(1, l, 1)?.squeeze(1)?.transpose(1, 2)?.contiguous()?;
                LayerKernels::new(weight, bias)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(KernelSet { layers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DEVICE;

    fn cond(frames: usize, channels: usize) -> Tensor {
        let data = (0..channels * frames).map(|i| ((i * 37 % 101) as f32 / 50.0) - 1.0).collect();
        Tensor::from_vec(data, (1, channels, frames), &DEVICE).unwrap()
    }

    #[test]
    fn shapes_and_determinism() {
        let mut params = ParamStore::new(0);
        let stack = LvcStackConfig::default();
        let p = KernelPredictor::new(&mut params, "kp", 20, &stack, &KernelPredictorConfig::default()).unwrap();
        let set = p.forward(&cond(10, 20)).unwrap();
        assert_eq!(set.layers.len(), 4);
        for layer in &set.layers {
            assert_eq!(layer.weight.dims(), &[1, 10, 32, 16, 3]);
            assert_eq!(layer.bias.dims(), &[1, 10, 32]);
            let (wf, bf) = layer.filter().unwrap();
            assert_eq!(wf.dims(), &[1, 10, 16, 16, 3]);
            assert_eq!(bf.dims(), &[1, 10, 16]);
        }
        let again = p.forward(&cond(10, 20)).unwrap();
        for (a, b) in set.layers.iter().zip(&again.layers) {
            let a: Vec<f32> = a.weight.flatten_all().unwrap().to_vec1().unwrap();
            let b: Vec<f32> = b.weight.flatten_all().unwrap().to_vec1().unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn zero_head_gives_zero_kernels() {
        let mut params = ParamStore::new(0);
        let cfg = KernelPredictorConfig {
            zero_head: true,
            ..Default::default()
        };
        let p = KernelPredictor::new(&mut params, "kp", 8, &LvcStackConfig::default(), &cfg).unwrap();
        let set = p.forward(&cond(3, 8)).unwrap();
        for layer in &set.layers {
            for t in [&layer.weight, &layer.bias] {
                assert!(t.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn empty_and_single_frame() {
        let mut params = ParamStore::new(1);
        let p = KernelPredictor::new(&mut params, "kp", 4, &LvcStackConfig::default(), &KernelPredictorConfig::default()).unwrap();
        assert!(p.forward(&cond(0, 4)).is_err());
        assert_eq!(p.forward(&cond(1, 4)).unwrap().frames(), 1);
    }
}
