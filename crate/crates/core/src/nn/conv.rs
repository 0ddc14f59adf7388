//! im2col / col2im for square kernels on NCHW batches.

use ndarray::{Array2, Array4, ArrayView4};

/// Geometry of a convolution applied to a `channels × height × width` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Forward convolution geometry. `None` if the kernel does not fit.
    pub fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || kernel == 0 || height + 2 * pad < kernel || width + 2 * pad < kernel {
            return None;
        }
        Some(Self {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_h: (height + 2 * pad - kernel) / stride + 1,
            out_w: (width + 2 * pad - kernel) / stride + 1,
        })
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    #[inline]
    fn source(&self, out: usize, k: usize, limit: usize) -> Option<usize> {
        let pos = (out * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }
}

/// `(C·k·k) × (N·Ho·Wo)` patch matrix; column `n·L + oy·Wo + ox`.
pub fn im2col(x: ArrayView4<f64>, g: &ConvGeom) -> Array2<f64> {
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let n = x.shape()[0];
    let l = g.positions();
    let cols_n = n * l;
    let mut cols = Array2::<f64>::zeros((g.rows(), cols_n));
    let out = cols.as_slice_mut().expect("fresh array");
    let img = g.channels * g.height * g.width;
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let dst = &mut out[row * cols_n..(row + 1) * cols_n];
                for b in 0..n {
                    let base = b * img + c * g.height * g.width;
                    for oy in 0..g.out_h {
                        let Some(iy) = g.source(oy, ki, g.height) else { continue };
                        for ox in 0..g.out_w {
                            if let Some(ix) = g.source(ox, kj, g.width) {
                                dst[b * l + oy * g.out_w + ox] = xs[base + iy * g.width + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch columns back into `n` images.
pub fn col2im(cols: &Array2<f64>, g: &ConvGeom, n: usize) -> Array4<f64> {
    let l = g.positions();
    let cols_n = n * l;
    assert_eq!(cols.dim(), (g.rows(), cols_n));
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().expect("standard layout");
    let mut x = Array4::<f64>::zeros((n, g.channels, g.height, g.width));
    let xs = x.as_slice_mut().expect("fresh array");
    let img = g.channels * g.height * g.width;
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let s = &src[row * cols_n..(row + 1) * cols_n];
                for b in 0..n {
                    let base = b * img + c * g.height * g.width;
                    for oy in 0..g.out_h {
                        let Some(iy) = g.source(oy, ki, g.height) else { continue };
                        for ox in 0..g.out_w {
                            if let Some(ix) = g.source(ox, kj, g.width) {
                                xs[base + iy * g.width + ix] += s[b * l + oy * g.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}
