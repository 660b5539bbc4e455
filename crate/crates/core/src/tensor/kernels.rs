//! Raw convolution and resize kernels shared by the tape ops.
//!
//! Forward and backward passes are written in gather form: every output
//! element is produced by exactly one loop nest with a fixed accumulation
//! order, and parallelism only splits across disjoint output planes. This
//! keeps results bit-identical for any thread count.

use super::TensorError;
use crate::parallel::par_chunks_mut;

/// Validated geometry of one conv2d application.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dDims {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Conv2dDims {
    pub fn resolve(
        x_shape: &[usize],
        k_shape: &[usize],
        bias_len: Option<usize>,
        stride: usize,
        pad: usize,
    ) -> Result<Self, TensorError> {
        if x_shape.len() != 4 {
            return Err(TensorError::Rank {
                ctx: "conv2d input",
                expected: 4,
                shape: x_shape.to_vec(),
            });
        }
        if k_shape.len() != 4 {
            return Err(TensorError::Rank {
                ctx: "conv2d kernel",
                expected: 4,
                shape: k_shape.to_vec(),
            });
        }
        let (n, cin, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
        let (cout, kcin, kh, kw) = (k_shape[0], k_shape[1], k_shape[2], k_shape[3]);
        if kcin != cin {
            return Err(TensorError::Dim {
                ctx: "conv2d",
                dim: "input channels",
                expected: cin,
                got: kcin,
            });
        }
        if kh % 2 == 0 {
            return Err(TensorError::EvenKernel { size: kh });
        }
        if kw % 2 == 0 {
            return Err(TensorError::EvenKernel { size: kw });
        }
        if stride == 0 {
            return Err(TensorError::ZeroStride);
        }
        if let Some(bl) = bias_len {
            if bl != cout {
                return Err(TensorError::Dim {
                    ctx: "conv2d",
                    dim: "bias length",
                    expected: cout,
                    got: bl,
                });
            }
        }
        let oh = out_extent(h, kh, stride, pad).ok_or(TensorError::EmptyOutput {
            input: h,
            kernel: kh,
            stride,
            pad,
        })?;
        let ow = out_extent(w, kw, stride, pad).ok_or(TensorError::EmptyOutput {
            input: w,
            kernel: kw,
            stride,
            pad,
        })?;
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        })
    }
}

fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let span = input as i64 + 2 * pad as i64 - kernel as i64;
    if span < 0 {
        return None;
    }
    Some((span / stride as i64) as usize + 1)
}

/// Output index range `[o0, o1)` such that `o*stride + k - pad` stays in `[0, extent)`.
#[inline]
fn valid_out_range(extent: usize, out: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let s = stride as i64;
    let lo = (pad as i64 - k as i64 + s - 1).div_euclid(s).max(0);
    let hi = ((extent as i64 - 1 - k as i64 + pad as i64).div_euclid(s) + 1).min(out as i64);
    if hi <= lo {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

/// out[n,co,oy,ox] = bias[co] + sum over (ci,ky,kx) of x * kernel.
pub fn conv2d_forward(x: &[f64], kernel: &[f64], bias: Option<&[f64]>, d: &Conv2dDims) -> Vec<f64> {
    let plane = d.oh * d.ow;
    let mut out = vec![0.0; d.n * d.cout * plane];
    par_chunks_mut(&mut out, plane, |pi, o| {
        let n = pi / d.cout;
        let co = pi % d.cout;
        o.fill(bias.map_or(0.0, |b| b[co]));
        for ci in 0..d.cin {
            let xbase = (n * d.cin + ci) * d.h * d.w;
            let kbase = (co * d.cin + ci) * d.kh * d.kw;
            for ky in 0..d.kh {
                let (oy0, oy1) = valid_out_range(d.h, d.oh, ky, d.stride, d.pad);
                for kx in 0..d.kw {
                    let wv = kernel[kbase + ky * d.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox0, ox1) = valid_out_range(d.w, d.ow, kx, d.stride, d.pad);
                    for oy in oy0..oy1 {
                        let iy = oy * d.stride + ky - d.pad;
                        let xrow = xbase + iy * d.w;
                        let orow = oy * d.ow;
                        if d.stride == 1 {
                            let ix0 = ox0 + kx - d.pad;
                            let src = &x[xrow + ix0..xrow + ix0 + (ox1 - ox0)];
                            let dst = &mut o[orow + ox0..orow + ox1];
                            for (ov, xv) in dst.iter_mut().zip(src) {
                                *ov += wv * xv;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                let ix = ox * d.stride + kx - d.pad;
                                o[orow + ox] += wv * x[xrow + ix];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Accumulate dL/dx into `dx` (gather form, parallel over (n, ci) planes).
pub fn conv2d_backward_input(dy: &[f64], kernel: &[f64], d: &Conv2dDims, dx: &mut [f64]) {
    let plane = d.h * d.w;
    par_chunks_mut(dx, plane, |pi, dxp| {
        let n = pi / d.cin;
        let ci = pi % d.cin;
        for co in 0..d.cout {
            let dybase = (n * d.cout + co) * d.oh * d.ow;
            let kbase = (co * d.cin + ci) * d.kh * d.kw;
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let wv = kernel[kbase + ky * d.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    if d.stride == 1 {
                        // iy = oy + ky - pad  =>  oy = iy + pad - ky
                        let (oy0, oy1) = valid_out_range(d.h, d.oh, ky, 1, d.pad);
                        let (ox0, ox1) = valid_out_range(d.w, d.ow, kx, 1, d.pad);
                        for oy in oy0..oy1 {
                            let iy = oy + ky - d.pad;
                            let dyrow = dybase + oy * d.ow;
                            let dx0 = iy * d.w + (ox0 + kx - d.pad);
                            let src = &dy[dyrow + ox0..dyrow + ox1];
                            let dst = &mut dxp[dx0..dx0 + (ox1 - ox0)];
                            for (dv, gv) in dst.iter_mut().zip(src) {
                                *dv += wv * gv;
                            }
                        }
                    } else {
                        for oy in 0..d.oh {
                            let iy = oy * d.stride + ky;
                            if iy < d.pad || iy - d.pad >= d.h {
                                continue;
                            }
                            let iy = iy - d.pad;
                            for ox in 0..d.ow {
                                let ix = ox * d.stride + kx;
                                if ix < d.pad || ix - d.pad >= d.w {
                                    continue;
                                }
                                dxp[iy * d.w + ix - d.pad] += wv * dy[dybase + oy * d.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    });
}

/// Accumulate dL/dkernel into `dk` (parallel over output channels).
pub fn conv2d_backward_kernel(x: &[f64], dy: &[f64], d: &Conv2dDims, dk: &mut [f64]) {
    let kslice = d.cin * d.kh * d.kw;
    par_chunks_mut(dk, kslice, |co, dkc| {
        for ci in 0..d.cin {
            for ky in 0..d.kh {
                let (oy0, oy1) = valid_out_range(d.h, d.oh, ky, d.stride, d.pad);
                for kx in 0..d.kw {
                    let (ox0, ox1) = valid_out_range(d.w, d.ow, kx, d.stride, d.pad);
                    let mut acc = 0.0;
                    for n in 0..d.n {
                        let xbase = (n * d.cin + ci) * d.h * d.w;
                        let dybase = (n * d.cout + co) * d.oh * d.ow;
                        for oy in oy0..oy1 {
                            let iy = oy * d.stride + ky - d.pad;
                            let xrow = xbase + iy * d.w;
                            let dyrow = dybase + oy * d.ow;
                            if d.stride == 1 {
                                let ix0 = ox0 + kx - d.pad;
                                let xs = &x[xrow + ix0..xrow + ix0 + (ox1 - ox0)];
                                let gs = &dy[dyrow + ox0..dyrow + ox1];
                                for (xv, gv) in xs.iter().zip(gs) {
                                    acc += xv * gv;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = ox * d.stride + kx - d.pad;
                                    acc += x[xrow + ix] * dy[dyrow + ox];
                                }
                            }
                        }
                    }
                    dkc[ci * d.kh * d.kw + ky * d.kw + kx] += acc;
                }
            }
        }
    });
}

/// Accumulate dL/dbias into `db` (parallel over output channels).
pub fn conv2d_backward_bias(dy: &[f64], d: &Conv2dDims, db: &mut [f64]) {
    let plane = d.oh * d.ow;
    par_chunks_mut(db, 1, |co, dbc| {
        let mut acc = 0.0;
        for n in 0..d.n {
            let base = (n * d.cout + co) * plane;
            for v in &dy[base..base + plane] {
                acc += v;
            }
        }
        dbc[0] += acc;
    });
}

/// Source coordinate and lerp weight for align-corners-false sampling.
#[inline]
fn resize_coord(o: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    let s = (o as f64 + 0.5) * (src as f64 / dst as f64) - 0.5;
    let floor = s.floor();
    let frac = s - floor;
    let i0 = (floor.max(0.0) as usize).min(src - 1);
    let i1 = (i0 + 1).min(src - 1);
    // Off-grid samples clamp to the edge texel with zero interpolation span.
    if floor < 0.0 {
        (i0, i0, 0.0)
    } else {
        (i0, i1, frac)
    }
}

/// Bilinear resize of a rank-4 tensor to `(oh, ow)`, align-corners-false.
pub fn bilinear_forward(x: &[f64], n: usize, c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let xcoords: Vec<(usize, usize, f64)> = (0..ow).map(|o| resize_coord(o, w, ow)).collect();
    let ycoords: Vec<(usize, usize, f64)> = (0..oh).map(|o| resize_coord(o, h, oh)).collect();
    let mut out = vec![0.0; n * c * oh * ow];
    par_chunks_mut(&mut out, oh * ow, |pi, o| {
        let src = &x[pi * h * w..(pi + 1) * h * w];
        for oy in 0..oh {
            let (y0, y1, fy) = ycoords[oy];
            for ox in 0..ow {
                let (x0, x1, fx) = xcoords[ox];
                let v00 = src[y0 * w + x0];
                let v01 = src[y0 * w + x1];
                let v10 = src[y1 * w + x0];
                let v11 = src[y1 * w + x1];
                // Lerp form keeps constant inputs exactly constant.
                let top = v00 + fx * (v01 - v00);
                let bot = v10 + fx * (v11 - v10);
                o[oy * ow + ox] = top + fy * (bot - top);
            }
        }
    });
    out
}

/// Scatter dL/dout back onto the source grid (parallel over (n, c) planes).
pub fn bilinear_backward(
    dy: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    dx: &mut [f64],
) {
    let xcoords: Vec<(usize, usize, f64)> = (0..ow).map(|o| resize_coord(o, w, ow)).collect();
    let ycoords: Vec<(usize, usize, f64)> = (0..oh).map(|o| resize_coord(o, h, oh)).collect();
    debug_assert_eq!(dx.len(), n * c * h * w);
    par_chunks_mut(dx, h * w, |pi, dxp| {
        let g = &dy[pi * oh * ow..(pi + 1) * oh * ow];
        for oy in 0..oh {
            let (y0, y1, fy) = ycoords[oy];
            for ox in 0..ow {
                let (x0, x1, fx) = xcoords[ox];
                let gv = g[oy * ow + ox];
                dxp[y0 * w + x0] += (1.0 - fy) * (1.0 - fx) * gv;
                dxp[y0 * w + x1] += (1.0 - fy) * fx * gv;
                dxp[y1 * w + x0] += fy * (1.0 - fx) * gv;
                dxp[y1 * w + x1] += fy * fx * gv;
            }
        }
    });
}
