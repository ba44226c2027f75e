//! Numeric kernels behind the graph operations.

/// `c = alpha * op(a) * op(b) + beta * c` with `op(a)` of shape `m x k`
/// and `op(b)` of shape `k x n`, all row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides describe exactly the checked buffer extents above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Sliding-window geometry shared by convolution and its transpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    /// Geometry of a convolution over a `channels x height x width` image,
    /// or `None` when the kernel does not fit.
    pub fn conv(
        channels: usize,
        height: usize,
        width: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    ) -> Option<Self> {
        if stride == 0 || height + 2 * padding < kh || width + 2 * padding < kw {
            return None;
        }
        Some(Window {
            channels,
            height,
            width,
            kh,
            kw,
            stride,
            padding,
            out_h: (height + 2 * padding - kh) / stride + 1,
            out_w: (width + 2 * padding - kw) / stride + 1,
        })
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Source pixel for output position `(oy, ox)` and kernel tap `(ky, kx)`.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky).checked_sub(self.padding)?;
        let x = (ox * self.stride + kx).checked_sub(self.padding)?;
        (y < self.height && x < self.width).then_some((y, x))
    }
}

/// Unfolds a batch of images `[batch, C, H, W]` into a column matrix of shape
/// `[C*kh*kw, batch*out_h*out_w]`.
pub(crate) fn im2col(images: &[f64], batch: usize, win: &Window) -> Vec<f64> {
    let positions = win.positions();
    let cols_n = batch * positions;
    let mut cols = vec![0.0; win.rows() * cols_n];
    for n in 0..batch {
        let img = &images[n * win.image_len()..(n + 1) * win.image_len()];
        for c in 0..win.channels {
            let plane = &img[c * win.height * win.width..(c + 1) * win.height * win.width];
            for ky in 0..win.kh {
                for kx in 0..win.kw {
                    let row = (c * win.kh + ky) * win.kw + kx;
                    let dst = &mut cols[row * cols_n + n * positions..][..positions];
                    for oy in 0..win.out_h {
                        for ox in 0..win.out_w {
                            if let Some((y, x)) = win.source(oy, ox, ky, kx) {
                                dst[oy * win.out_w + ox] = plane[y * win.width + x];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto `[batch, C, H, W]`.
pub(crate) fn col2im(cols: &[f64], batch: usize, win: &Window) -> Vec<f64> {
    let positions = win.positions();
    let cols_n = batch * positions;
    let mut images = vec![0.0; batch * win.image_len()];
    for n in 0..batch {
        let img = &mut images[n * win.image_len()..(n + 1) * win.image_len()];
        for c in 0..win.channels {
            let plane = &mut img[c * win.height * win.width..(c + 1) * win.height * win.width];
            for ky in 0..win.kh {
                for kx in 0..win.kw {
                    let row = (c * win.kh + ky) * win.kw + kx;
                    let src = &cols[row * cols_n + n * positions..][..positions];
                    for oy in 0..win.out_h {
                        for ox in 0..win.out_w {
                            if let Some((y, x)) = win.source(oy, ox, ky, kx) {
                                plane[y * win.width + x] += src[oy * win.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    images
}

/// `[batch, C, P]` to `[C, batch*P]`.
pub(crate) fn batch_to_channel_major(x: &[f64], batch: usize, channels: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for n in 0..batch {
        for c in 0..channels {
            out[c * batch * p + n * p..][..p].copy_from_slice(&x[(n * channels + c) * p..][..p]);
        }
    }
    out
}

/// `[C, batch*P]` to `[batch, C, P]`.
pub(crate) fn channel_major_to_batch(x: &[f64], batch: usize, channels: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for n in 0..batch {
        for c in 0..channels {
            out[(n * channels + c) * p..][..p].copy_from_slice(&x[c * batch * p + n * p..][..p]);
        }
    }
    out
}
