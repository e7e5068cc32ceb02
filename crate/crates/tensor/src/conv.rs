//! 2D cross-correlation lowered to a patch matrix and a single matmul.

use crate::error::{shape_err, Result};
use crate::ops::{ConvGeom, Op};
use crate::tensor::Tensor;

impl ConvGeom {
    fn cols(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn rows(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    /// Input offset for patch row/col, or `None` inside the zero padding.
    #[inline]
    fn source(
        &self,
        b: usize,
        oy: usize,
        ox: usize,
        c: usize,
        ky: usize,
        kx: usize,
    ) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
        if iy < 0 || ix < 0 || iy >= self.height as isize || ix >= self.width as isize {
            return None;
        }
        Some(((b * self.channels + c) * self.height + iy as usize) * self.width + ix as usize)
    }
}

fn im2col_raw(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.rows() * g.cols()];
    let mut row = 0;
    for b in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let dst = &mut out[row * g.cols()..(row + 1) * g.cols()];
                let mut col = 0;
                for c in 0..g.channels {
                    for ky in 0..g.kernel {
                        for kx in 0..g.kernel {
                            if let Some(src) = g.source(b, oy, ox, c, ky, kx) {
                                dst[col] = x[src];
                            }
                            col += 1;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    out
}

pub(crate) fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.channels * g.height * g.width];
    let mut row = 0;
    for b in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let src = &cols[row * g.cols()..(row + 1) * g.cols()];
                let mut col = 0;
                for c in 0..g.channels {
                    for ky in 0..g.kernel {
                        for kx in 0..g.kernel {
                            if let Some(dst) = g.source(b, oy, ox, c, ky, kx) {
                                out[dst] += src[col];
                            }
                            col += 1;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    out
}

impl Tensor {
    /// Unrolls `k×k` patches of a `[B×C×H×W]` input into a
    /// `[B·H'·W' × C·k·k]` matrix.
    pub fn im2col(&self, kernel: usize, stride: usize, pad: usize) -> Result<Tensor> {
        if self.rank() != 4 {
            return Err(shape_err(
                "im2col",
                format!("expected B×C×H×W, got {:?}", self.shape()),
            ));
        }
        if stride == 0 || kernel == 0 {
            return Err(shape_err("im2col", "stride and kernel must be positive"));
        }
        let s = self.shape();
        let (ph, pw) = (s[2] + 2 * pad, s[3] + 2 * pad);
        if kernel > ph || kernel > pw {
            return Err(shape_err(
                "im2col",
                format!("kernel {kernel}×{kernel} larger than padded input {ph}×{pw}"),
            ));
        }
        let geom = ConvGeom {
            batch: s[0],
            channels: s[1],
            height: s[2],
            width: s[3],
            kernel,
            stride,
            pad,
            out_h: (ph - kernel) / stride + 1,
            out_w: (pw - kernel) / stride + 1,
        };
        let data = im2col_raw(&self.data(), &geom);
        Ok(Tensor::from_op(
            vec![geom.rows(), geom.cols()],
            data,
            Op::Im2Col(self.clone(), geom),
        ))
    }

    /// Cross-correlation (no kernel flip) of `[B×C×H×W]` with `[F×C×k×k]`,
    /// plus an optional per-filter bias. Returns `[B×F×H'×W']`.
    pub fn conv2d(
        &self,
        kernel: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor> {
        let ks = kernel.shape();
        if kernel.rank() != 4 || self.rank() != 4 || ks[1] != self.shape()[1] || ks[2] != ks[3] {
            return Err(crate::error::mismatch("conv2d", self.shape(), ks));
        }
        let (filters, k) = (ks[0], ks[2]);
        let cols = self.im2col(k, stride, pad)?;
        let batch = self.shape()[0];
        let out_hw = cols.shape()[0] / batch;
        let weight = kernel.reshape(&[filters, ks[1] * k * k])?.transpose()?;
        let mut y = cols.matmul(&weight)?;
        if let Some(b) = bias {
            y = y.add_row(b)?;
        }
        // rows are (b, oy, ox); recover the spatial extent from the geometry
        let s = self.shape();
        let out_h = (s[2] + 2 * pad - k) / stride + 1;
        let out_w = out_hw / out_h;
        y.reshape(&[batch, out_h, out_w, filters])?
            .permute(&[0, 3, 1, 2])
    }
}
