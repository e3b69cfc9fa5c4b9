use candle_core::{DType, Result, Tensor, D};

pub const LRELU_SLOPE: f64 = 0.1;

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    x.maximum(&(x * slope)?)
}

/// Logistic function via `tanh`, which stays finite for large |x|.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    ((x * 0.5)?.tanh()? + 1.0)? * 0.5
}

pub fn softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    let max = x.max_keepdim(dim)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    e.broadcast_div(&e.sum_keepdim(dim)?)
}

pub fn log_softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    let max = x.max_keepdim(dim)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(dim)?.log()?;
    shifted.broadcast_sub(&lse)
}

/// Reflect-pads the last dimension by `n` samples at the end
/// (`x[T-2], x[T-3], ...`). Requires `n < T`.
pub fn reflect_pad_end(x: &Tensor, n: usize) -> Result<Tensor> {
    if n == 0 {
        return Ok(x.clone());
    }
    let t = x.dim(D::Minus1)?;
    if n >= t {
        candle_core::bail!("reflect padding of {n} needs more than {t} samples");
    }
    let idx: Vec<u32> = (0..n).map(|i| (t - 2 - i) as u32).collect();
    let idx = Tensor::new(idx.as_slice(), x.device())?;
    let tail = x.index_select(&idx, x.rank() - 1)?;
    Tensor::cat(&[x, &tail], x.rank() - 1)
}

pub fn to_scalar(x: &Tensor) -> Result<f32> {
    x.to_dtype(DType::F32)?.to_scalar::<f32>()
}
