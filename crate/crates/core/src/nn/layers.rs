use candle_core::{Module, Result, Tensor};

use super::conv_ops::Im2Col;
use super::ParamStore;

/// 1D convolution with explicit zero padding, computed as im2col + matmul.
#[derive(Debug, Clone)]
pub struct Conv1d {
    weight: Tensor,
    bias: Option<Tensor>,
    padding: usize,
    stride: usize,
    dilation: usize,
}

impl Conv1d {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        padding: usize,
        stride: usize,
        dilation: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((c_in * kernel) as f32).sqrt();
        let weight = params.uniform(format!("{name}.weight"), &[c_out, c_in, kernel], bound)?;
        let bias = Some(params.uniform(format!("{name}.bias"), &[c_out], bound)?);
        Ok(Self {
            weight,
            bias,
            padding,
            stride,
            dilation,
        })
    }

    /// Same-length convolution with odd kernel and stride 1.
    pub fn same(params: &mut ParamStore, name: &str, c_in: usize, c_out: usize, kernel: usize) -> Result<Self> {
        Self::new(params, name, c_in, c_out, kernel, kernel / 2, 1, 1)
    }

    pub fn from_tensors(weight: Tensor, bias: Option<Tensor>, padding: usize, stride: usize, dilation: usize) -> Self {
        Self {
            weight,
            bias,
            padding,
            stride,
            dilation,
        }
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn out_len(&self, len: usize) -> usize {
        let k = self.weight.dims()[2];
        (len + 2 * self.padding - self.dilation * (k - 1) - 1) / self.stride + 1
    }
}

/// Output length of a convolution over an already padded axis.
fn conv_out_len(len: usize, k: usize, stride: usize, dilation: usize) -> Result<usize> {
    let span = dilation * (k - 1) + 1;
    if len < span {
        candle_core::bail!("convolution input of length {len} shorter than kernel span {span}");
    }
    Ok((len - span) / stride + 1)
}

/// Unpadded strided 1D convolution as im2col followed by one 2D matmul.
fn conv1d_exact(x: &Tensor, weight: &Tensor, stride: usize, dilation: usize) -> Result<Tensor> {
    let (c_out, c_in, k) = weight.dims3()?;
    let (b, _, len) = x.dims3()?;
    let out = conv_out_len(len, k, stride, dilation)?;
    let cols = Im2Col { k, stride, dilation }.apply(x)?;
    cols.reshape((b * out, c_in * k))?
        .matmul(&weight.reshape((c_out, c_in * k))?.t()?)?
        .reshape((b, out, c_out))?
        .transpose(1, 2)?
        .contiguous()
}

impl Module for Conv1d {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = if self.padding > 0 {
            x.pad_with_zeros(2, self.padding, self.padding)?
        } else {
            x.clone()
        };
        let y = conv1d_exact(&x, &self.weight, self.stride, self.dilation)?;
        match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, (), 1))?),
            None => Ok(y),
        }
    }
}

/// Transposed convolution with kernel `2 * rate`, stride `rate` and
/// `rate / 2` trimmed from each side, so `T` frames become `rate * T`
/// samples exactly.
///
/// Implemented as zero insertion followed by an ordinary convolution, which
/// is the same linear map with a reparametrized (flipped) kernel.
#[derive(Debug, Clone)]
pub struct TransposedConv1d {
    conv: Conv1d,
    rate: usize,
}

impl TransposedConv1d {
    pub fn new(params: &mut ParamStore, name: &str, c_in: usize, c_out: usize, rate: usize) -> Result<Self> {
        assert!(rate >= 2 && rate % 2 == 0, "upsample rate must be even");
        let kernel = 2 * rate;
        let trim = rate / 2;
        let bound = 1.0 / ((c_in * kernel) as f32).sqrt();
        let weight = params.uniform(format!("{name}.weight"), &[c_out, c_in, kernel], bound)?;
        let bias = params.uniform(format!("{name}.bias"), &[c_out], bound)?;
        Ok(Self {
            conv: Conv1d::from_tensors(weight, Some(bias), kernel - 1 - trim, 1, 1),
            rate,
        })
    }

    pub fn rate(&self) -> usize {
        self.rate
    }

    pub fn weight(&self) -> &Tensor {
        self.conv.weight()
    }
}

impl Module for TransposedConv1d {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, t) = x.dims3()?;
        let r = self.rate;
        let stuffed = x
            .unsqueeze(3)?
            .pad_with_zeros(3, 0, r - 1)?
            .reshape((b, c, t * r))?
            .narrow(2, 0, (t - 1) * r + 1)?;
        self.conv.forward(&stuffed)
    }
}

/// 2D convolution (square kernel, equal stride and padding on both axes).
#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    padding: usize,
    stride: usize,
}

impl Conv2d {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        padding: usize,
        stride: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((c_in * kernel * kernel) as f32).sqrt();
        let weight = params.uniform(format!("{name}.weight"), &[c_out, c_in, kernel, kernel], bound)?;
        let bias = params.uniform(format!("{name}.bias"), &[c_out], bound)?;
        Ok(Self {
            weight,
            bias,
            padding,
            stride,
        })
    }
}

impl Module for Conv2d {
    /// The kernel rows are folded into the channel axis and the output rows
    /// into the batch, turning the 2D convolution into a 1D one along the
    /// last axis.
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let p = self.padding;
        let x = if p > 0 {
            x.pad_with_zeros(2, p, p)?.pad_with_zeros(3, p, p)?
        } else {
            x.clone()
        };
        let (b, c_in, h, w) = x.dims4()?;
        let (c_out, _, k, _) = self.weight.dims4()?;
        let oh = conv_out_len(h, k, self.stride, 1)?;
        let rows = (0..k)
            .map(|i| {
                if self.stride == 1 {
                    x.narrow(2, i, oh)
                } else {
                    let idx: Vec<u32> = (0..oh).map(|r| (i + r * self.stride) as u32).collect();
                    x.index_select(&Tensor::new(idx.as_slice(), x.device())?, 2)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        // (B, C_in, k, H', W) → (B·H', C_in·k, W)
        let folded = Tensor::stack(&rows, 2)?
            .permute((0, 3, 1, 2, 4))?
            .contiguous()?
            .reshape((b * oh, c_in * k, w))?;
        let weight = self.weight.reshape((c_out, c_in * k, k))?;
        let y = conv1d_exact(&folded, &weight, self.stride, 1)?;
        let ow = y.dim(2)?;
        y.reshape((b, oh, c_out, ow))?
            .permute((0, 2, 1, 3))?
            .broadcast_add(&self.bias.reshape((1, (), 1, 1))?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(params: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool) -> Result<Self> {
        let bound = 1.0 / (d_in as f32).sqrt();
        let weight = params.uniform(format!("{name}.weight"), &[d_out, d_in], bound)?;
        let bias = if bias {
            Some(params.uniform(format!("{name}.bias"), &[d_out], bound)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }
}

impl Module for Linear {
    /// `x` is `(..., d_in)`.
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.broadcast_matmul(&self.weight.t()?)?;
        match &self.bias {
            Some(b) => y.broadcast_add(b),
            None => Ok(y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DEVICE;

    /// Direct transposed convolution: `y[j] = sum_i x[i] w[j + trim - i r]`,
    /// with the kernel indexed in the zero-insertion convention.
    fn transposed_oracle(x: &[f32], w: &[f32], bias: f32, r: usize) -> Vec<f32> {
        let k = w.len();
        let trim = r / 2;
        let pad = k - 1 - trim;
        let stuffed_len = (x.len() - 1) * r + 1;
        (0..x.len() * r)
            .map(|j| {
                let mut acc = bias;
                for (tap, wv) in w.iter().enumerate() {
                    let pos = j as isize + tap as isize - pad as isize;
                    if pos >= 0 && (pos as usize) < stuffed_len && pos as usize % r == 0 {
                        acc += wv * x[pos as usize / r];
                    }
                }
                acc
            })
            .collect()
    }

    #[test]
    fn transposed_conv_length_and_values() {
        let mut ps = ParamStore::new(3);
        for r in [2, 4, 8] {
            let layer = TransposedConv1d::new(&mut ps, &format!("up{r}"), 1, 1, r).unwrap();
            let x: Vec<f32> = (0..5).map(|i| (i as f32 * 0.7).sin()).collect();
            let y = layer
                .forward(&Tensor::from_vec(x.clone(), (1, 1, 5), &DEVICE).unwrap())
                .unwrap()
                .flatten_all()
                .unwrap()
                .to_vec1::<f32>()
                .unwrap();
            assert_eq!(y.len(), 5 * r);
            let w = layer.weight().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let b = ps.get(&format!("up{r}.bias")).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap()[0];
            for (a, e) in y.iter().zip(transposed_oracle(&x, &w, b, r)) {
                assert!((a - e).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn strided_conv_output_length() {
        let mut ps = ParamStore::new(0);
        let c = Conv1d::new(&mut ps, "c", 2, 3, 5, 2, 3, 1).unwrap();
        let x = Tensor::zeros((1, 2, 100), candle_core::DType::F32, &DEVICE).unwrap();
        let y = c.forward(&x).unwrap();
        assert_eq!(y.dims(), &[1, 3, c.out_len(100)]);
        assert_eq!(c.out_len(100), 34);
    }

    #[test]
    fn conv2d_matches_native() {
        let mut ps = ParamStore::new(4);
        let x = Tensor::randn(0f32, 1.0, (2, 3, 11, 14), &DEVICE).unwrap();
        for stride in [1, 2] {
            let conv = Conv2d::new(&mut ps, &format!("c{stride}"), 3, 5, 3, 1, stride).unwrap();
            let got = conv.forward(&x).unwrap();
            let want = x
                .conv2d(&conv.weight, 1, stride, 1, 1)
                .unwrap()
                .broadcast_add(&conv.bias.reshape((1, (), 1, 1)).unwrap())
                .unwrap();
            assert_eq!(got.dims(), want.dims());
            let err: f32 = (got - want).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap();
            assert!(err < 1e-5, "stride {stride}: {err}");
        }
    }
}
