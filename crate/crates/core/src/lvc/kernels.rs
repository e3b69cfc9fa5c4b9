use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::DEVICE;

/// Shape of one LVC stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LvcStackConfig {
    pub channels: usize,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
}

impl Default for LvcStackConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            kernel_size: 3,
            dilations: vec![1, 3, 9, 27],
        }
    }
}

impl LvcStackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::invalid("LVC channels must be positive"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::invalid("LVC kernel size must be odd"));
        }
        if self.dilations.is_empty()
            || self.dilations[0] == 0
            || self.dilations.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::invalid("LVC dilations must be positive and strictly increasing"));
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.dilations.len()
    }

    /// Kernel weights per layer and frame: filter and gate, `2C × C × k`.
    pub fn weights_per_layer(&self) -> usize {
        2 * self.channels * self.channels * self.kernel_size
    }

    pub fn biases_per_layer(&self) -> usize {
        2 * self.channels
    }
}

/// Kernels of one LVC layer for every frame of a batch.
///
/// `weight` is `(B, T_h, C_out, C_in, k)` and `bias` is `(B, T_h, C_out)`.
/// Inside an LVC block `C_out = 2C`: filter channels first, then gate
/// channels.
#[derive(Debug, Clone)]
pub struct LayerKernels {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LayerKernels {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (b, th, c_out, _, _) = weight.dims5()?;
        if bias.dims() != [b, th, c_out] {
            return Err(Error::shape(format!(
                "bias shape {:?} does not match kernels {:?}",
                bias.dims(),
                weight.dims()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn frames(&self) -> usize {
        self.weight.dims()[1]
    }

    /// Filter half `(W^f, b^f)` of a gated layer.
    pub fn filter(&self) -> Result<(Tensor, Tensor)> {
        let c = self.weight.dims()[2] / 2;
        Ok((self.weight.narrow(2, 0, c)?, self.bias.narrow(2, 0, c)?))
    }

    /// Gate half `(W^g, b^g)` of a gated layer.
    pub fn gate(&self) -> Result<(Tensor, Tensor)> {
        let c = self.weight.dims()[2] / 2;
        Ok((self.weight.narrow(2, c, c)?, self.bias.narrow(2, c, c)?))
    }
}

/// Kernels for every LVC layer of one stack.
#[derive(Debug, Clone)]
pub struct KernelSet {
    pub layers: Vec<LayerKernels>,
}

impl KernelSet {
    pub fn frames(&self) -> usize {
        self.layers.first().map_or(0, LayerKernels::frames)
    }
}

/// Host-side kernels of one sequence, laid out `[frame][out][in][tap]`
/// with biases `[frame][out]`. Input to the loop oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct HostKernels {
    pub frames: usize,
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl HostKernels {
    pub fn zeros(frames: usize, c_out: usize, c_in: usize, k: usize) -> Self {
        Self {
            frames,
            c_out,
            c_in,
            k,
            weight: vec![0.0; frames * c_out * c_in * k],
            bias: vec![0.0; frames * c_out],
        }
    }

    pub fn w(&self, t: usize, o: usize, c: usize, j: usize) -> f32 {
        self.weight[((t * self.c_out + o) * self.c_in + c) * self.k + j]
    }

    pub fn w_mut(&mut self, t: usize, o: usize, c: usize, j: usize) -> &mut f32 {
        &mut self.weight[((t * self.c_out + o) * self.c_in + c) * self.k + j]
    }

    pub fn b(&self, t: usize, o: usize) -> f32 {
        self.bias[t * self.c_out + o]
    }

    pub fn b_mut(&mut self, t: usize, o: usize) -> &mut f32 {
        &mut self.bias[t * self.c_out + o]
    }

    /// Batch-of-one tensors for `lvc_apply`.
    pub fn to_layer(&self) -> Result<LayerKernels> {
        let weight = Tensor::from_vec(
            self.weight.clone(),
            (1, self.frames, self.c_out, self.c_in, self.k),
            &DEVICE,
        )?;
        let bias = Tensor::from_vec(self.bias.clone(), (1, self.frames, self.c_out), &DEVICE)?;
        LayerKernels::new(weight, bias)
    }

    /// Reads batch element `b` of a layer's kernels.
    pub fn from_layer(layer: &LayerKernels, b: usize) -> Result<Self> {
        let (_, frames, c_out, c_in, k) = layer.weight.dims5()?;
        Ok(Self {
            frames,
            c_out,
            c_in,
            k,
            weight: layer.weight.get(b)?.flatten_all()?.to_vec1()?,
            bias: layer.bias.get(b)?.flatten_all()?.to_vec1()?,
        })
    }
}
