use candle_core::Tensor;

use super::{HostKernels, KernelSet, LayerKernels};
use crate::error::{Error, Result};
use crate::nn::sigmoid;

fn check_shapes(
    c_in: usize,
    t: usize,
    frames: usize,
    kernel_c_in: usize,
    k: usize,
    dilation: usize,
) -> Result<()> {
    if frames == 0 || t % frames != 0 {
        return Err(Error::shape(format!(
            "signal length {t} is not a multiple of {frames} kernel frames"
        )));
    }
    if kernel_c_in != c_in {
        return Err(Error::shape(format!(
            "kernels expect {kernel_c_in} input channels, signal has {c_in}"
        )));
    }
    if k % 2 == 0 {
        return Err(Error::shape(format!("kernel size {k} is not odd")));
    }
    if dilation == 0 {
        return Err(Error::invalid("dilation must be positive"));
    }
    Ok(())
}

/// Location-variable convolution of `x: (B, C_in, T)` with per-interval
/// kernels, returning `(B, C_out, T)`.
///
/// Interval `t` covers samples `[t·ℓ, (t+1)·ℓ)` with `ℓ = T / T_h` and is
/// convolved with kernel `t`. Taps read the true neighbouring samples
/// across interval boundaries; only the sequence edges are zero padded.
pub fn lvc_apply(x: &Tensor, kernels: &LayerKernels, dilation: usize) -> Result<Tensor> {
    let (b, c_in, t) = x.dims3()?;
    let (kb, frames, c_out, kc, k) = kernels.weight.dims5()?;
    if kb != b {
        return Err(Error::shape(format!("kernel batch {kb} differs from signal batch {b}")));
    }
    check_shapes(c_in, t, frames, kc, k, dilation)?;
    let len = t / frames;
    let pad = dilation * (k - 1) / 2;
    let padded = if pad > 0 {
        x.pad_with_zeros(2, pad, pad)?
    } else {
        x.clone()
    };
    let taps = (0..k)
        .map(|j| padded.narrow(2, j * dilation, t))
        .collect::<candle_core::Result<Vec<_>>>()?;
    // (B, C_in, k, T) → (B, T_h, ℓ, C_in·k)
    let patches = Tensor::stack(&taps, 2)?
        .reshape((b, c_in * k, frames, len))?
        .permute((0, 2, 3, 1))?
        .contiguous()?;
    let weight = kernels
        .weight
        .reshape((b, frames, c_out, c_in * k))?
        .transpose(2, 3)?
        .contiguous()?;
    let y = patches
        .matmul(&weight)?
        .broadcast_add(&kernels.bias.unsqueeze(2)?)?;
    Ok(y.permute((0, 3, 1, 2))?.reshape((b, c_out, t))?)
}

/// Reference location-variable convolution on one sequence: `x` is
/// `C_in × T` row-major, the result `C_out × T`.
pub fn lvc_apply_oracle(x: &[f32], t: usize, kernels: &HostKernels, dilation: usize) -> Result<Vec<f32>> {
    let HostKernels {
        frames,
        c_out,
        c_in,
        k,
        ..
    } = *kernels;
    if x.len() != c_in * t {
        return Err(Error::shape(format!("signal has {} values, expected {c_in}×{t}", x.len())));
    }
    check_shapes(c_in, t, frames, c_in, k, dilation)?;
    let len = t / frames;
    let half = (k / 2) as isize;
    let mut y = vec![0.0f32; c_out * t];
    for interval in 0..frames {
        for pos in interval * len..(interval + 1) * len {
            for o in 0..c_out {
                let mut acc = kernels.b(interval, o) as f64;
                for j in 0..k {
                    let src = pos as isize + (j as isize - half) * dilation as isize;
                    if src < 0 || src >= t as isize {
                        continue;
                    }
                    for c in 0..c_in {
                        acc += kernels.w(interval, o, c, j) as f64 * x[c * t + src as usize] as f64;
                    }
                }
                y[o * t + pos] = acc as f32;
            }
        }
    }
    Ok(y)
}

/// Gated residual LVC layers applied in order: for each layer
/// `x ← x + tanh(LVC(x, W^f)) ⊙ σ(LVC(x, W^g))`.
pub fn lvc_block(x: &Tensor, kernels: &KernelSet, dilations: &[usize]) -> Result<Tensor> {
    if kernels.layers.len() != dilations.len() {
        return Err(Error::shape(format!(
            "{} kernel layers for {} dilations",
            kernels.layers.len(),
            dilations.len()
        )));
    }
    let channels = x.dim(1)?;
    let mut x = x.clone();
    for (layer, &d) in kernels.layers.iter().zip(dilations) {
        if layer.weight.dims()[2] != 2 * channels {
            return Err(Error::shape(format!(
                "gated layer needs {} output channels, kernels have {}",
                2 * channels,
                layer.weight.dims()[2]
            )));
        }
        let y = lvc_apply(&x, layer, d)?;
        let f = y.narrow(1, 0, channels)?.tanh()?;
        let g = sigmoid(&y.narrow(1, channels, channels)?)?;
        x = (x + (f * g)?)?;
    }
    Ok(x)
}

/// Loop-based counterpart of `lvc_block` for one sequence.
pub fn lvc_block_oracle(x: &[f32], t: usize, layers: &[HostKernels], dilations: &[usize]) -> Result<Vec<f32>> {
    let mut x = x.to_vec();
    let channels = x.len() / t;
    for (layer, &d) in layers.iter().zip(dilations) {
        let y = lvc_apply_oracle(&x, t, layer, d)?;
        for i in 0..channels * t {
            let f = (y[i] as f64).tanh();
            let g = 1.0 / (1.0 + (-(y[channels * t + i] as f64)).exp());
            x[i] = (x[i] as f64 + f * g) as f32;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DEVICE;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_kernels(rng: &mut impl Rng, frames: usize, c_out: usize, c_in: usize, k: usize) -> HostKernels {
        let mut h = HostKernels::zeros(frames, c_out, c_in, k);
        h.weight.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        h.bias.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
        h
    }

    fn run(x: &[f32], c_in: usize, t: usize, h: &HostKernels, d: usize) -> Vec<f32> {
        let xt = Tensor::from_vec(x.to_vec(), (1, c_in, t), &DEVICE).unwrap();
        lvc_apply(&xt, &h.to_layer().unwrap(), d)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap()
    }

    #[test]
    fn hand_computed_example() {
        // x = [1, 2, 3, 4], two intervals of two samples.
        // Interval 0: taps [1, 2, 3], bias 0.5; interval 1: taps [-1, 0, 1].
        let mut h = HostKernels::zeros(2, 1, 1, 3);
        h.weight = vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0];
        h.bias = vec![0.5, 0.0];
        let x = [1.0, 2.0, 3.0, 4.0];
        let expected = [8.5, 14.5, 2.0, -3.0];
        assert_eq!(lvc_apply_oracle(&x, 4, &h, 1).unwrap(), expected);
        assert_eq!(run(&x, 1, 4, &h, 1), expected);
    }

    #[test]
    fn identity_and_bias_kernels() {
        let x: Vec<f32> = (0..12).map(|i| (i as f32 * 0.7).sin()).collect();
        let mut h = HostKernels::zeros(3, 1, 1, 3);
        for t in 0..3 {
            *h.w_mut(t, 0, 0, 1) = 1.0;
        }
        assert_eq!(run(&x, 1, 12, &h, 3), x);
        assert_eq!(lvc_apply_oracle(&x, 12, &h, 3).unwrap(), x);

        let mut h = HostKernels::zeros(3, 1, 1, 3);
        h.bias = vec![0.25, -1.0, 2.0];
        let y = run(&x, 1, 12, &h, 1);
        for (i, v) in y.iter().enumerate() {
            assert_eq!(*v, h.bias[i / 4]);
        }
        assert_eq!(lvc_apply_oracle(&[0.0; 12], 12, &h, 1).unwrap(), y);
    }

    #[test]
    fn shape_errors() {
        let h = HostKernels::zeros(3, 1, 1, 3);
        assert!(lvc_apply_oracle(&[0.0; 10], 10, &h, 1).is_err());
        let x = Tensor::zeros((1, 1, 10), candle_core::DType::F32, &DEVICE).unwrap();
        assert!(lvc_apply(&x, &h.to_layer().unwrap(), 1).is_err());
        let x = Tensor::zeros((1, 2, 12), candle_core::DType::F32, &DEVICE).unwrap();
        assert!(lvc_apply(&x, &h.to_layer().unwrap(), 1).is_err());
    }

    #[test]
    fn matches_oracle_on_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let frames = [1, 2, 4, 8][rng.random_range(0..4)];
            let len = rng.random_range(1..=16);
            let t = frames * len;
            let k = [1, 3, 5][rng.random_range(0..3)];
            let d = [1, 3, 9, 27][rng.random_range(0..4)];
            let (c_in, c_out) = (rng.random_range(1..4), rng.random_range(1..4));
            let h = random_kernels(&mut rng, frames, c_out, c_in, k);
            let x: Vec<f32> = (0..c_in * t).map(|_| rng.random_range(-1.0..1.0)).collect();
            let want = lvc_apply_oracle(&x, t, &h, d).unwrap();
            let got = run(&x, c_in, t, &h, d);
            let scale = want.iter().fold(0.0f32, |m, v| m.max(v.abs())).max(1e-6);
            let err = want.iter().zip(&got).fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
            assert!(err / scale <= 1e-5, "relative error {}", err / scale);
        }
    }

    #[test]
    fn batch_elements_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (c, t, frames) = (2, 16, 4);
        let hs: Vec<HostKernels> = (0..3).map(|_| random_kernels(&mut rng, frames, 3, c, 3)).collect();
        let xs: Vec<Vec<f32>> = (0..3)
            .map(|_| (0..c * t).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let layers: Vec<LayerKernels> = hs.iter().map(|h| h.to_layer().unwrap()).collect();
        let weight = Tensor::cat(&layers.iter().map(|l| l.weight.clone()).collect::<Vec<_>>(), 0).unwrap();
        let bias = Tensor::cat(&layers.iter().map(|l| l.bias.clone()).collect::<Vec<_>>(), 0).unwrap();
        let x = Tensor::from_vec(xs.concat(), (3, c, t), &DEVICE).unwrap();
        let y = lvc_apply(&x, &LayerKernels::new(weight, bias).unwrap(), 3).unwrap();
        for i in 0..3 {
            let got: Vec<f32> = y.get(i).unwrap().flatten_all().unwrap().to_vec1().unwrap();
            let want = lvc_apply_oracle(&xs[i], t, &hs[i], 3).unwrap();
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn zero_kernels_pass_block_input_through() {
        let (c, t) = (4, 32);
        let x: Vec<f32> = (0..c * t).map(|i| (i as f32 * 0.3).cos()).collect();
        let layers: Vec<HostKernels> = (0..4).map(|_| HostKernels::zeros(4, 2 * c, c, 3)).collect();
        let set = KernelSet {
            layers: layers.iter().map(|h| h.to_layer().unwrap()).collect(),
        };
        let xt = Tensor::from_vec(x.clone(), (1, c, t), &DEVICE).unwrap();
        let y: Vec<f32> = lvc_block(&xt, &set, &[1, 3, 9, 27])
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn single_layer_closed_form() {
        // One channel, 1×1 kernels: y = x + tanh(a x + b) σ(c x + e).
        let mut h = HostKernels::zeros(2, 2, 1, 1);
        h.weight = vec![0.5, -1.5, 2.0, 0.25];
        h.bias = vec![0.1, 0.2, -0.3, 0.4];
        let x = [0.3f32, -0.8, 1.2, 0.05];
        let set = KernelSet {
            layers: vec![h.to_layer().unwrap()],
        };
        let xt = Tensor::from_vec(x.to_vec(), (1, 1, 4), &DEVICE).unwrap();
        let y: Vec<f32> = lvc_block(&xt, &set, &[1]).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        for (i, (&xi, yi)) in x.iter().zip(&y).enumerate() {
            let f = i / 2;
            let (a, c) = (h.w(f, 0, 0, 0) as f64, h.w(f, 1, 0, 0) as f64);
            let (b, e) = (h.b(f, 0) as f64, h.b(f, 1) as f64);
            let xi = xi as f64;
            let want = xi + (a * xi + b).tanh() / (1.0 + (-(c * xi + e)).exp());
            assert!((*yi as f64 - want).abs() <= 1e-6, "{yi} vs {want}");
        }
    }
}
