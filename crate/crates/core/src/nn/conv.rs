//! Convolution as patch extraction (im2col) followed by a matrix product.
//! Gradients flow through the matrix product and through the adjoint
//! scatter (col2im).

use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor, WithDType};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
}

impl Geometry {
    fn out_h(&self) -> usize {
        (self.h + 2 * self.ph - self.kh) / self.sh + 1
    }

    fn out_w(&self) -> usize {
        (self.w + 2 * self.pw - self.kw) / self.sw + 1
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    /// Valid output columns `ox` for kernel column `kx` (input column in bounds).
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        let lo = if self.pw > kx { (self.pw - kx).div_ceil(self.sw) } else { 0 };
        let hi = if self.w + self.pw > kx {
            ((self.w - 1 + self.pw - kx) / self.sw + 1).min(self.out_w())
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    /// Visits every (input row, patch row) pair: `f(src_offset, dst_offset,
    /// ox_lo, ox_hi, kx)` where the patch row holds `out_w` entries.
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        let (oh, ow, k) = (self.out_h(), self.out_w(), self.patch());
        let l = oh * ow;
        for n in 0..self.n {
            for c in 0..self.c {
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let krow = (c * self.kh + ky) * self.kw + kx;
                        let (lo, hi) = self.ox_range(kx);
                        for oy in 0..oh {
                            let iy = (oy * self.sh + ky) as isize - self.ph as isize;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            let src = ((n * self.c + c) * self.h + iy as usize) * self.w;
                            let dst = (n * k + krow) * l + oy * ow;
                            f(src, dst, lo, hi, kx);
                        }
                    }
                }
            }
        }
    }
}

struct Im2Col(Geometry);

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => candle_core::bail!("im2col expects a contiguous input"),
    }
}

/// `(N, C, H, W)` → patches `(N, C·KH·KW, OH·OW)`.
fn unfold<T: WithDType>(src: &[T], g: &Geometry) -> Vec<T> {
    let mut out = vec![T::zero(); g.n * g.patch() * g.out_h() * g.out_w()];
    let (sw, pw) = (g.sw, g.pw);
    g.for_each_row(|s, d, lo, hi, kx| {
        for ox in lo..hi {
            out[d + ox] = src[s + ox * sw + kx - pw];
        }
    });
    out
}

/// Adjoint of [`unfold`]: scatter-adds patches back onto the input grid.
fn fold<T: WithDType>(cols: &[T], g: &Geometry) -> Vec<T> {
    let mut out = vec![T::zero(); g.n * g.c * g.h * g.w];
    let (sw, pw) = (g.sw, g.pw);
    g.for_each_row(|s, d, lo, hi, kx| {
        for ox in lo..hi {
            out[s + ox * sw + kx - pw] += cols[d + ox];
        }
    });
    out
}

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.0;
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(unfold(contiguous(v, layout)?, g)),
            CpuStorage::F64(v) => CpuStorage::F64(unfold(contiguous(v, layout)?, g)),
            _ => candle_core::bail!("im2col supports f32 and f64"),
        };
        Ok((out, Shape::from((g.n, g.patch(), g.out_h() * g.out_w()))))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let g = &self.0;
        let grad = grad_res.contiguous()?;
        let folded = match grad.dtype() {
            candle_core::DType::F32 => {
                Tensor::from_vec(fold(&grad.flatten_all()?.to_vec1::<f32>()?, g), (g.n, g.c, g.h, g.w), arg.device())?
            }
            candle_core::DType::F64 => {
                Tensor::from_vec(fold(&grad.flatten_all()?.to_vec1::<f64>()?, g), (g.n, g.c, g.h, g.w), arg.device())?
            }
            dt => candle_core::bail!("im2col backward does not support {dt:?}"),
        };
        Ok(Some(folded))
    }
}

/// 2D convolution of `x (N, C, H, W)` with `weight (O, C, KH, KW)`.
pub fn conv2d(x: &Tensor, weight: &Tensor, stride: (usize, usize), padding: (usize, usize)) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (o, wc, kh, kw) = weight.dims4()?;
    if wc != c {
        return Err(Error::Shape(format!("conv input has {c} channels, kernel expects {wc}")));
    }
    if h + 2 * padding.0 < kh || w + 2 * padding.1 < kw || stride.0 == 0 || stride.1 == 0 {
        return Err(Error::Shape(format!(
            "conv kernel {kh}x{kw} (stride {stride:?}, padding {padding:?}) does not fit a {h}x{w} input"
        )));
    }
    let g = Geometry {
        n,
        c,
        h,
        w,
        kh,
        kw,
        sh: stride.0,
        sw: stride.1,
        ph: padding.0,
        pw: padding.1,
    };
    let (oh, ow, k) = (g.out_h(), g.out_w(), g.patch());
    let cols = if kh == 1 && kw == 1 && stride == (1, 1) && padding == (0, 0) {
        x.reshape((n, c, h * w))?
    } else {
        x.contiguous()?.apply_op1(Im2Col(g))?
    };
    let y = weight.reshape((o, k))?.broadcast_matmul(&cols)?;
    Ok(y.reshape((n, o, oh, ow))?)
}

/// 1D convolution of `x (N, C, L)` with `weight (O, C, K)`.
pub fn conv1d(x: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (n, c, l) = x.dims3()?;
    let (o, wc, k) = weight.dims3()?;
    let y = conv2d(&x.reshape((n, c, 1, l))?, &weight.reshape((o, wc, 1, k))?, (1, stride), (0, padding))?;
    let (_, _, _, lo) = y.dims4()?;
    Ok(y.reshape((n, o, lo))?)
}
