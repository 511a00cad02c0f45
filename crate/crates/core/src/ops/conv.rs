use super::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::error::{QnnError, Result};
use crate::tensor::Tensor;

/// `(in + 2·pad − kernel) / stride + 1`, or `None` when non-positive.
pub fn conv_output_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    r: usize,
    s: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        let mismatch = || QnnError::Dimension {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        };
        let (&[n, c, h, wd], &[f, c2, r, s]) = (x.shape(), w.shape()) else {
            return Err(mismatch());
        };
        if c != c2 {
            return Err(mismatch());
        }
        let ho = conv_output_dim(h, r, stride, pad).ok_or_else(mismatch)?;
        let wo = conv_output_dim(wd, s, stride, pad).ok_or_else(mismatch)?;
        Ok(Geometry {
            n,
            c,
            h,
            w: wd,
            f,
            r,
            s,
            stride,
            pad,
            ho,
            wo,
        })
    }

    fn patch(&self) -> usize {
        self.c * self.r * self.s
    }

    fn pixels(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfolds one image `[C×H×W]` into `cols[(C·R·S) × (Ho·Wo)]`.
    fn im2col(&self, img: &[f32], cols: &mut [f32]) {
        let p = self.pixels();
        for ci in 0..self.c {
            let plane = &img[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ri in 0..self.r {
                for si in 0..self.s {
                    let row = (ci * self.r + ri) * self.s + si;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ri) as isize - self.pad as isize;
                        let out_row = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            out_row.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + si) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Folds `cols` back, accumulating into one image gradient.
    fn col2im(&self, cols: &[f32], img: &mut [f32]) {
        let p = self.pixels();
        for ci in 0..self.c {
            let plane = &mut img[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ri in 0..self.r {
                for si in 0..self.s {
                    let row = (ci * self.r + ri) * self.s + si;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ri) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + si) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution (cross-correlation) with zero padding.
///
/// `x[N×C×H×W]`, `w[F×C×R×S]` → `[N×F×H'×W']`.
pub fn conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = Geometry::new(x, w, stride, pad)?;
    let (k, p) = (g.patch(), g.pixels());
    let in_img = g.c * g.h * g.w;
    let mut cols = vec![0.0; k * p];
    let mut out = vec![0.0; g.n * g.f * p];
    for ni in 0..g.n {
        g.im2col(&x.data()[ni * in_img..(ni + 1) * in_img], &mut cols);
        gemm_nn(
            g.f,
            k,
            p,
            w.data(),
            &cols,
            &mut out[ni * g.f * p..(ni + 1) * g.f * p],
        );
    }
    Ok(Tensor::from_parts(vec![g.n, g.f, g.ho, g.wo], out))
}

/// Returns `(grad_x, grad_w)` for [`conv2d`].
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor)> {
    let g = Geometry::new(x, w, stride, pad)?;
    if grad_out.shape() != [g.n, g.f, g.ho, g.wo] {
        return Err(QnnError::Dimension {
            op: "conv2d_backward",
            lhs: vec![g.n, g.f, g.ho, g.wo],
            rhs: grad_out.shape().to_vec(),
        });
    }
    let (k, p) = (g.patch(), g.pixels());
    let in_img = g.c * g.h * g.w;
    let mut cols = vec![0.0; k * p];
    let mut gcols = vec![0.0; k * p];
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    for ni in 0..g.n {
        let go = &grad_out.data()[ni * g.f * p..(ni + 1) * g.f * p];
        g.im2col(&x.data()[ni * in_img..(ni + 1) * in_img], &mut cols);
        gemm_nt(g.f, p, k, go, &cols, &mut gw);
        gcols.fill(0.0);
        gemm_tn(k, g.f, p, w.data(), go, &mut gcols);
        g.col2im(&gcols, &mut gx[ni * in_img..(ni + 1) * in_img]);
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), gx),
        Tensor::from_parts(w.shape().to_vec(), gw),
    ))
}
