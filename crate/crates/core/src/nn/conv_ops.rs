use candle_core::{CpuStorage, CustomOp1, Layout, Result, Shape, Tensor};

fn contiguous<'a>(storage: &'a CpuStorage, layout: &Layout) -> Result<&'a [f32]> {
    let (start, end) = layout
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("im2col needs contiguous input".into()))?;
    Ok(&storage.as_slice::<f32>()?[start..end])
}

/// Window geometry of an unpadded 1D convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Im2Col {
    pub k: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl Im2Col {
    fn out_len(&self, len: usize) -> usize {
        (len - self.dilation * (self.k - 1) - 1) / self.stride + 1
    }

    /// `(B, C, T)` to `(B, T_out, C·k)` with
    /// `out[b, t, c·k + j] = x[b, c, t·stride + j·dilation]`.
    pub(crate) fn apply(&self, x: &Tensor) -> Result<Tensor> {
        x.contiguous()?.apply_op1(*self)
    }
}

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col1d"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let x = contiguous(storage, layout)?;
        let (b, c, t) = layout.shape().dims3()?;
        let out = self.out_len(t);
        let row = c * self.k;
        let mut y = vec![0.0f32; b * out * row];
        for bi in 0..b {
            for ci in 0..c {
                let src = &x[(bi * c + ci) * t..(bi * c + ci + 1) * t];
                for ti in 0..out {
                    let dst = &mut y[(bi * out + ti) * row + ci * self.k..][..self.k];
                    let base = ti * self.stride;
                    for (j, d) in dst.iter_mut().enumerate() {
                        *d = src[base + j * self.dilation];
                    }
                }
            }
        }
        Ok((CpuStorage::F32(y), Shape::from((b, out, row))))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> Result<Option<Tensor>> {
        let col2im = Col2Im {
            geometry: *self,
            len: arg.dim(2)?,
        };
        Ok(Some(grad_res.contiguous()?.apply_op1_no_bwd(&col2im)?))
    }
}

/// Adjoint of `Im2Col`: scatters `(B, T_out, C·k)` back onto `(B, C, T)`.
struct Col2Im {
    geometry: Im2Col,
    len: usize,
}

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im1d"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let g = contiguous(storage, layout)?;
        let Im2Col { k, stride, dilation } = self.geometry;
        let (b, out, row) = layout.shape().dims3()?;
        let c = row / k;
        let t = self.len;
        let mut x = vec![0.0f32; b * c * t];
        for bi in 0..b {
            for ci in 0..c {
                let dst = &mut x[(bi * c + ci) * t..(bi * c + ci + 1) * t];
                for ti in 0..out {
                    let src = &g[(bi * out + ti) * row + ci * k..][..k];
                    let base = ti * stride;
                    for (j, v) in src.iter().enumerate() {
                        dst[base + j * dilation] += v;
                    }
                }
            }
        }
        Ok((CpuStorage::F32(x), Shape::from((b, c, t))))
    }
}
