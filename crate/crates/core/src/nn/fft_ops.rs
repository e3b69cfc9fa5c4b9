use std::sync::Arc;

use candle_core::{CpuStorage, CustomOp1, Layout, Result, Shape, Tensor};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Shared state of the framed-DFT operator and its adjoint.
#[derive(Clone)]
struct Plan {
    n_fft: usize,
    hop: usize,
    window: Arc<Vec<f32>>,
    forward: Arc<dyn Fft<f32>>,
    inverse: Arc<dyn Fft<f32>>,
}

impl Plan {
    fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    fn frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }
}

fn contiguous<'a>(storage: &'a CpuStorage, layout: &Layout) -> Result<&'a [f32]> {
    let (start, end) = layout
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("framed DFT needs contiguous input".into()))?;
    Ok(&storage.as_slice::<f32>()?[start..end])
}

/// Centered windowed DFT of `(B, T)` signals: `(B, frames, 2·bins)` with
/// real parts first and imaginary parts second in every frame. The signal
/// is zero padded by `n_fft / 2` on both sides.
#[derive(Clone)]
pub(crate) struct FramedDft(Plan);

impl FramedDft {
    pub(crate) fn new(n_fft: usize, hop: usize, window: Vec<f32>) -> Self {
        assert_eq!(window.len(), n_fft);
        let mut planner = FftPlanner::new();
        Self(Plan {
            n_fft,
            hop,
            window: Arc::new(window),
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        })
    }

    pub(crate) fn apply(&self, x: &Tensor) -> Result<Tensor> {
        x.contiguous()?.apply_op1(self.clone())
    }
}

impl CustomOp1 for FramedDft {
    fn name(&self) -> &'static str {
        "framed-dft"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let p = &self.0;
        let (b, t) = layout.shape().dims2()?;
        let x = contiguous(storage, layout)?;
        let (n, bins, frames, pad) = (p.n_fft, p.bins(), p.frames(t), p.n_fft / 2);
        let mut out = vec![0.0f32; b * frames * 2 * bins];
        let mut buf = vec![Complex::new(0.0f32, 0.0); n];
        let mut scratch = vec![Complex::new(0.0f32, 0.0); p.forward.get_inplace_scratch_len()];
        for bi in 0..b {
            let sig = &x[bi * t..(bi + 1) * t];
            for f in 0..frames {
                for (j, c) in buf.iter_mut().enumerate() {
                    let idx = (f * p.hop + j) as isize - pad as isize;
                    let v = if idx >= 0 && (idx as usize) < t { sig[idx as usize] } else { 0.0 };
                    *c = Complex::new(v * p.window[j], 0.0);
                }
                p.forward.process_with_scratch(&mut buf, &mut scratch);
                let row = &mut out[(bi * frames + f) * 2 * bins..(bi * frames + f + 1) * 2 * bins];
                for k in 0..bins {
                    row[k] = buf[k].re;
                    row[bins + k] = buf[k].im;
                }
            }
        }
        Ok((CpuStorage::F32(out), Shape::from((b, frames, 2 * bins))))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        let adjoint = FramedDftAdjoint {
            plan: self.0.clone(),
            len: arg.dim(1)?,
        };
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&adjoint)?))
    }
}

/// Adjoint of `FramedDft`: `(B, frames, 2·bins)` back to `(B, T)`.
struct FramedDftAdjoint {
    plan: Plan,
    len: usize,
}

impl CustomOp1 for FramedDftAdjoint {
    fn name(&self) -> &'static str {
        "framed-dft-adjoint"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let p = &self.plan;
        let (b, frames, two_bins) = layout.shape().dims3()?;
        let g = contiguous(storage, layout)?;
        let (n, bins, pad, t) = (p.n_fft, p.bins(), p.n_fft / 2, self.len);
        if two_bins != 2 * bins || frames != p.frames(t) {
            candle_core::bail!("framed DFT adjoint got shape {:?}", layout.shape());
        }
        let mut out = vec![0.0f32; b * t];
        let mut buf = vec![Complex::new(0.0f32, 0.0); n];
        let mut scratch = vec![Complex::new(0.0f32, 0.0); p.inverse.get_inplace_scratch_len()];
        for bi in 0..b {
            let dst = &mut out[bi * t..(bi + 1) * t];
            for f in 0..frames {
                let row = &g[(bi * frames + f) * two_bins..(bi * frames + f + 1) * two_bins];
                buf.fill(Complex::new(0.0, 0.0));
                for k in 0..bins {
                    buf[k] = Complex::new(row[k], row[bins + k]);
                }
                // Unnormalized inverse: Σ_k G[k] e^{+2πikn/N}, whose real
                // part is the transpose of the forward map.
                p.inverse.process_with_scratch(&mut buf, &mut scratch);
                for (j, c) in buf.iter().enumerate() {
                    let idx = (f * p.hop + j) as isize - pad as isize;
                    if idx >= 0 && (idx as usize) < t {
                        dst[idx as usize] += c.re * p.window[j];
                    }
                }
            }
        }
        Ok((CpuStorage::F32(out), Shape::from((b, t))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DEVICE;
    use candle_core::Var;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: (usize, usize), seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..shape.0 * shape.1).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn matches_direct_dft() {
        let (n, hop, t) = (16, 5, 23);
        let window: Vec<f32> = (0..n).map(|i| 0.5 + 0.01 * i as f32).collect();
        let op = FramedDft::new(n, hop, window.clone());
        let x = random((2, t), 0);
        let y = op
            .apply(&Tensor::from_vec(x.clone(), (2, t), &DEVICE).unwrap())
            .unwrap();
        let frames = 1 + t / hop;
        assert_eq!(y.dims(), &[2, frames, 2 * 9]);
        let y: Vec<f32> = y.flatten_all().unwrap().to_vec1().unwrap();
        for b in 0..2 {
            for f in 0..frames {
                for k in 0..9 {
                    let (mut re, mut im) = (0.0f64, 0.0f64);
                    for j in 0..n {
                        let idx = (f * hop + j) as isize - (n / 2) as isize;
                        if idx < 0 || idx >= t as isize {
                            continue;
                        }
                        let v = x[b * t + idx as usize] as f64 * window[j] as f64;
                        let a = 2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
                        re += v * a.cos();
                        im -= v * a.sin();
                    }
                    let base = (b * frames + f) * 18;
                    assert!((y[base + k] as f64 - re).abs() < 1e-5);
                    assert!((y[base + 9 + k] as f64 - im).abs() < 1e-5);
                }
            }
        }
    }

    /// `<A x, g> = <x, Aᵀ g>` for random `x` and `g`.
    #[test]
    fn backward_is_the_adjoint() {
        let (n, hop, t) = (32, 7, 50);
        let window: Vec<f32> = (0..n).map(|i| ((i as f32) * 0.2).sin().abs() + 0.1).collect();
        let op = FramedDft::new(n, hop, window);
        let x = Var::from_tensor(&Tensor::from_vec(random((3, t), 1), (3, t), &DEVICE).unwrap()).unwrap();
        let y = op.apply(x.as_tensor()).unwrap();
        let g = Tensor::from_vec(random((3, y.elem_count() / 3), 2), y.dims(), &DEVICE).unwrap();
        let lhs: f32 = (&y * &g).unwrap().sum_all().unwrap().to_scalar().unwrap();
        let grads = (&y * &g).unwrap().sum_all().unwrap().backward().unwrap();
        let gx = grads.get(x.as_tensor()).unwrap();
        let rhs: f32 = (x.as_tensor() * gx).unwrap().sum_all().unwrap().to_scalar().unwrap();
        assert!((lhs - rhs).abs() <= 1e-3 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}
