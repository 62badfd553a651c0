//! im2col based 2-D convolution kernels.
//!
//! All three kernels share one geometry: input `[N, Ci, H, W]`, weight
//! `[Co, Ci, K, K]`, output `[N, Co, Ho, Wo]` with square stride and
//! symmetric zero padding. `input_grad` is the adjoint of `forward` in the
//! input and doubles as transposed convolution; `weight_grad` is the adjoint
//! in the weight.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn for_forward(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x.len() != 4 || w.len() != 4 {
            return Err(Error::Shape(format!("conv2d expects 4-d input and weight, got {x:?} and {w:?}")));
        }
        if w[2] != w[3] {
            return Err(Error::Shape(format!("conv2d expects a square kernel, got {w:?}")));
        }
        if x[1] != w[1] {
            return Err(Error::Shape(format!("conv2d input has {} channels, weight expects {}", x[1], w[1])));
        }
        if stride == 0 {
            return Err(Error::Shape("conv2d stride must be positive".into()));
        }
        let k = w[2];
        if x[2] + 2 * pad < k || x[3] + 2 * pad < k {
            return Err(Error::Shape(format!("conv2d kernel {k} larger than padded input {x:?}")));
        }
        Ok(Self {
            batch: x[0],
            in_ch: x[1],
            out_ch: w[0],
            in_h: x[2],
            in_w: x[3],
            kernel: k,
            stride,
            pad,
            out_h: (x[2] + 2 * pad - k) / stride + 1,
            out_w: (x[3] + 2 * pad - k) / stride + 1,
        })
    }

    /// Geometry of a conv whose *output* is `gy` and whose input is `in_hw`.
    pub fn for_input_grad(gy: &[usize], w: &[usize], stride: usize, pad: usize, in_hw: (usize, usize)) -> Result<Self> {
        if gy.len() != 4 || w.len() != 4 || gy[1] != w[0] {
            return Err(Error::Shape(format!("transposed conv of {gy:?} with weight {w:?}")));
        }
        let geom = Self::for_forward(&[gy[0], w[1], in_hw.0, in_hw.1], w, stride, pad)?;
        if geom.out_h != gy[2] || geom.out_w != gy[3] {
            return Err(Error::Shape(format!("transposed conv target {in_hw:?} does not map back onto {gy:?}")));
        }
        Ok(geom)
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.batch, self.in_ch, self.in_h, self.in_w]
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_ch, self.in_ch, self.kernel, self.kernel]
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_ch, self.out_h, self.out_w]
    }

    fn col_rows(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (k, s, p) = (g.kernel, g.stride, g.pad as isize);
    let hw_out = g.out_h * g.out_w;
    let ncols = g.col_cols();
    let mut cols = vec![0.0; g.col_rows() * ncols];
    for c in 0..g.in_ch {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                for n in 0..g.batch {
                    let src = &x[(n * g.in_ch + c) * g.in_h * g.in_w..][..g.in_h * g.in_w];
                    let dst = &mut dst_row[n * hw_out..(n + 1) * hw_out];
                    for oy in 0..g.out_h {
                        let iy = (oy * s + ki) as isize - p;
                        if iy < 0 || iy >= g.in_h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.in_w..][..g.in_w];
                        let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * s + kj) as isize - p;
                            if ix >= 0 && ix < g.in_w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (k, s, p) = (g.kernel, g.stride, g.pad as isize);
    let hw_out = g.out_h * g.out_w;
    let ncols = g.col_cols();
    let mut x = vec![0.0; g.batch * g.in_ch * g.in_h * g.in_w];
    for c in 0..g.in_ch {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src_row = &cols[row * ncols..(row + 1) * ncols];
                for n in 0..g.batch {
                    let dst = &mut x[(n * g.in_ch + c) * g.in_h * g.in_w..][..g.in_h * g.in_w];
                    let src = &src_row[n * hw_out..(n + 1) * hw_out];
                    for oy in 0..g.out_h {
                        let iy = (oy * s + ki) as isize - p;
                        if iy < 0 || iy >= g.in_h as isize {
                            continue;
                        }
                        for ox in 0..g.out_w {
                            let ix = (ox * s + kj) as isize - p;
                            if ix >= 0 && ix < g.in_w as isize {
                                dst[iy as usize * g.in_w + ix as usize] += src[oy * g.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[N, C, HW]` -> `[C, N * HW]`
fn batch_major_to_channel_major(y: &[f64], n: usize, c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for b in 0..n {
        for ch in 0..c {
            out[ch * n * hw + b * hw..][..hw].copy_from_slice(&y[(b * c + ch) * hw..][..hw]);
        }
    }
    out
}

/// `[C, N * HW]` -> `[N, C, HW]`
fn channel_major_to_batch_major(y: &[f64], n: usize, c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for b in 0..n {
        for ch in 0..c {
            out[(b * c + ch) * hw..][..hw].copy_from_slice(&y[ch * n * hw + b * hw..][..hw]);
        }
    }
    out
}

pub fn forward(x: &Tensor, w: &Tensor, g: &ConvGeom) -> Tensor {
    let cols = im2col(x.data(), g);
    let mut y = vec![0.0; g.out_ch * g.col_cols()];
    gemm(g.out_ch, g.col_rows(), g.col_cols(), w.data(), false, &cols, false, &mut y, false);
    let data = channel_major_to_batch_major(&y, g.batch, g.out_ch, g.out_h * g.out_w);
    Tensor::from_parts(g.output_shape().to_vec(), data)
}

pub fn input_grad(gy: &Tensor, w: &Tensor, g: &ConvGeom) -> Tensor {
    let gy_cm = batch_major_to_channel_major(gy.data(), g.batch, g.out_ch, g.out_h * g.out_w);
    let mut dcols = vec![0.0; g.col_rows() * g.col_cols()];
    gemm(g.col_rows(), g.out_ch, g.col_cols(), w.data(), true, &gy_cm, false, &mut dcols, false);
    Tensor::from_parts(g.input_shape().to_vec(), col2im(&dcols, g))
}

pub fn weight_grad(x: &Tensor, gy: &Tensor, g: &ConvGeom) -> Tensor {
    let cols = im2col(x.data(), g);
    let gy_cm = batch_major_to_channel_major(gy.data(), g.batch, g.out_ch, g.out_h * g.out_w);
    let mut gw = vec![0.0; g.out_ch * g.col_rows()];
    gemm(g.out_ch, g.col_cols(), g.col_rows(), &gy_cm, false, &cols, true, &mut gw, false);
    Tensor::from_parts(g.weight_shape().to_vec(), gw)
}
