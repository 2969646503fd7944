//! Convolution kernels: im2col + gemm, chunked over output pixels.
//!
//! Chunks are a fixed partition of the pixel grid (see
//! [`crate::par::chunk_ranges`]) and all cross-chunk reductions run in chunk
//! order, so results are bit-identical whether or not the work fans out
//! over rayon. Gradients are exercised against central finite differences
//! in the test suite.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView2};

use crate::nets::scalar::Scalar;
use crate::par;

/// Fixed fan-out used by every chunked kernel.
const CONV_CHUNKS: usize = 8;

pub fn conv_out_side(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

pub fn conv_transpose_out_side(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> usize {
    (input - 1) * stride + kernel + out_pad - 2 * pad
}

/// Gathers im2col rows for the output pixels in `range`.
///
/// Row layout: channel-major `(c, ky, kx)`. Out-of-bounds taps are zero
/// (zero padding).
fn im2col_rows<T: Scalar>(
    x: &Array3<T>,
    range: std::ops::Range<usize>,
    ow: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Array2<T> {
    let (ic, ih, iw) = x.dim();
    let xs = x.as_slice().expect("standard layout");
    let k2 = kernel * kernel;
    let mut col = Array2::zeros((range.len(), ic * k2));
    let cs = col.as_slice_mut().expect("standard layout");
    let row_len = ic * k2;
    for (row, pix) in range.enumerate() {
        let oy = pix / ow;
        let ox = pix % ow;
        let base_y = (oy * stride) as isize - pad as isize;
        let base_x = (ox * stride) as isize - pad as isize;
        let row_off = row * row_len;
        for c in 0..ic {
            let chan_off = c * ih * iw;
            for ky in 0..kernel {
                let sy = base_y + ky as isize;
                if sy < 0 || sy >= ih as isize {
                    continue;
                }
                let src_off = chan_off + sy as usize * iw;
                let dst_off = row_off + (c * kernel + ky) * kernel;
                if base_x >= 0 && base_x + kernel as isize <= iw as isize {
                    let sx0 = base_x as usize;
                    cs[dst_off..dst_off + kernel]
                        .copy_from_slice(&xs[src_off + sx0..src_off + sx0 + kernel]);
                } else {
                    for kx in 0..kernel {
                        let sx = base_x + kx as isize;
                        if sx >= 0 && sx < iw as isize {
                            cs[dst_off + kx] = xs[src_off + sx as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// `y[o, oy, ox] = b[o] + sum_{c,ky,kx} x[c, oy*s-p+ky, ox*s-p+kx] * w[o,c,ky,kx]`
pub fn conv2d_forward<T: Scalar>(
    x: &Array3<T>,
    w: &Array4<T>,
    b: &Array1<T>,
    stride: usize,
    pad: usize,
) -> Array3<T> {
    let (oc, ic, kernel, _) = w.dim();
    let (_, ih, iw) = x.dim();
    let oh = conv_out_side(ih, kernel, stride, pad);
    let ow = conv_out_side(iw, kernel, stride, pad);
    let w_mat = w
        .view()
        .into_shape_with_order((oc, ic * kernel * kernel))
        .expect("standard layout");

    let npix = oh * ow;
    let chunks = par::chunk_ranges(npix, CONV_CHUNKS);
    let partials: Vec<Array2<T>> = par::map(&chunks, |range| {
        let col = im2col_rows(x, range.clone(), ow, kernel, stride, pad);
        col.dot(&w_mat.t())
    });

    let mut out = Array3::zeros((oc, oh, ow));
    {
        let os = out.as_slice_mut().expect("standard layout");
        for (chunk, part) in chunks.iter().zip(&partials) {
            for (row, pix) in chunk.clone().enumerate() {
                for o in 0..oc {
                    os[o * npix + pix] = part[[row, o]] + b[o];
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`] w.r.t. input, weight, and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Array3<T>,
    w: &Array4<T>,
    stride: usize,
    pad: usize,
    gy: &Array3<T>,
) -> (Array3<T>, Array4<T>, Array1<T>) {
    let (oc, ic, kernel, _) = w.dim();
    let (_, ih, iw) = x.dim();
    let (_, oh, ow) = gy.dim();
    let npix = oh * ow;
    let k2 = kernel * kernel;
    let w_mat = w
        .view()
        .into_shape_with_order((oc, ic * k2))
        .expect("standard layout");
    let gys = gy.as_slice().expect("standard layout");

    let chunks = par::chunk_ranges(npix, CONV_CHUNKS);
    struct Partial<T> {
        gw: Array2<T>,
        gb: Array1<T>,
        gx_cols: Array2<T>,
    }
    let partials: Vec<Partial<T>> = par::map(&chunks, |range| {
        let rows = range.len();
        let col = im2col_rows(x, range.clone(), ow, kernel, stride, pad);
        let mut gy_chunk = Array2::zeros((rows, oc));
        for (row, pix) in range.clone().enumerate() {
            for o in 0..oc {
                gy_chunk[[row, o]] = gys[o * npix + pix];
            }
        }
        let gw = gy_chunk.t().dot(&col);
        let gb = gy_chunk.t().sum_axis(ndarray::Axis(1));
        let gx_cols = gy_chunk.dot(&w_mat);
        Partial { gw, gb, gx_cols }
    });

    // gemms ran in parallel; the overlapping scatter-add goes through one
    // buffer sequentially, in fixed chunk order
    let mut gw = Array2::zeros((oc, ic * k2));
    let mut gb = Array1::zeros(oc);
    let mut gx = Array3::zeros((ic, ih, iw));
    for (chunk, p) in chunks.iter().zip(&partials) {
        gw += &p.gw;
        gb += &p.gb;
        scatter_cols(&mut gx, &p.gx_cols.view(), chunk.clone(), ow, kernel, stride, pad);
    }
    let gw = gw
        .into_shape_with_order((oc, ic, kernel, kernel))
        .expect("standard layout");
    (gx, gw, gb)
}

/// Scatter-add of im2col-layout columns back onto the image grid
/// (the adjoint of [`im2col_rows`]).
fn scatter_cols<T: Scalar>(
    gx: &mut Array3<T>,
    cols: &ArrayView2<T>,
    range: std::ops::Range<usize>,
    ow: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) {
    let (ic, ih, iw) = gx.dim();
    let gs = gx.as_slice_mut().expect("standard layout");
    for (row, pix) in range.enumerate() {
        let oy = pix / ow;
        let ox = pix % ow;
        let base_y = (oy * stride) as isize - pad as isize;
        let base_x = (ox * stride) as isize - pad as isize;
        for c in 0..ic {
            let chan_off = c * ih * iw;
            for ky in 0..kernel {
                let sy = base_y + ky as isize;
                if sy < 0 || sy >= ih as isize {
                    continue;
                }
                let dst_off = chan_off + sy as usize * iw;
                for kx in 0..kernel {
                    let sx = base_x + kx as isize;
                    if sx >= 0 && sx < iw as isize {
                        gs[dst_off + sx as usize] =
                            gs[dst_off + sx as usize] + cols[[row, (c * kernel + ky) * kernel + kx]];
                    }
                }
            }
        }
    }
}

/// Fractionally-strided (transposed) convolution. Weight layout is
/// `(in_c, out_c, k, k)`; output side is
/// `(in-1)*stride - 2*pad + k + out_pad`.
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &Array3<T>,
    w: &Array4<T>,
    b: &Array1<T>,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Array3<T> {
    let (ic, oc, kernel, _) = w.dim();
    let (_, ih, iw) = x.dim();
    let oh = conv_transpose_out_side(ih, kernel, stride, pad, out_pad);
    let ow = conv_transpose_out_side(iw, kernel, stride, pad, out_pad);
    let k2 = kernel * kernel;
    let w_mat = w
        .view()
        .into_shape_with_order((ic, oc * k2))
        .expect("standard layout");
    let xs = x.as_slice().expect("standard layout");
    let npix_in = ih * iw;

    let chunks = par::chunk_ranges(npix_in, CONV_CHUNKS);
    let partials: Vec<Array2<T>> = par::map(&chunks, |range| {
        let rows = range.len();
        let mut x_chunk = Array2::zeros((rows, ic));
        for (row, pix) in range.clone().enumerate() {
            for c in 0..ic {
                x_chunk[[row, c]] = xs[c * npix_in + pix];
            }
        }
        x_chunk.dot(&w_mat) // (rows, oc*k2)
    });

    let mut out = Array3::zeros((oc, oh, ow));
    {
        let os = out.as_slice_mut().expect("standard layout");
        for (chunk, prod) in chunks.iter().zip(&partials) {
            for (row, pix) in chunk.clone().enumerate() {
                let iy = pix / iw;
                let ix = pix % iw;
                let base_y = (iy * stride) as isize - pad as isize;
                let base_x = (ix * stride) as isize - pad as isize;
                for o in 0..oc {
                    let chan_off = o * oh * ow;
                    for ky in 0..kernel {
                        let sy = base_y + ky as isize;
                        if sy < 0 || sy >= oh as isize {
                            continue;
                        }
                        let dst_off = chan_off + sy as usize * ow;
                        for kx in 0..kernel {
                            let sx = base_x + kx as isize;
                            if sx >= 0 && sx < ow as isize {
                                os[dst_off + sx as usize] = os[dst_off + sx as usize]
                                    + prod[[row, (o * kernel + ky) * kernel + kx]];
                            }
                        }
                    }
                }
            }
        }
    }
    for o in 0..oc {
        let mut chan = out.index_axis_mut(ndarray::Axis(0), o);
        chan += b[o];
    }
    out
}

/// Gradients of [`conv_transpose2d_forward`].
pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Array3<T>,
    w: &Array4<T>,
    stride: usize,
    pad: usize,
    gy: &Array3<T>,
) -> (Array3<T>, Array4<T>, Array1<T>) {
    let (ic, oc, kernel, _) = w.dim();
    let (_, ih, iw) = x.dim();
    let k2 = kernel * kernel;
    let w_mat = w
        .view()
        .into_shape_with_order((ic, oc * k2))
        .expect("standard layout");
    let xs = x.as_slice().expect("standard layout");
    let npix_in = ih * iw;

    // grad_x[c, iy, ix] and grad_w come from gathering gy windows at the
    // input-pixel grid: the same im2col pattern applied to gy.
    let chunks = par::chunk_ranges(npix_in, CONV_CHUNKS);
    struct Partial<T> {
        gx: Array2<T>,
        gw: Array2<T>,
        rows: std::ops::Range<usize>,
    }
    let partials: Vec<Partial<T>> = par::map(&chunks, |range| {
        let g_cols = im2col_rows(gy, range.clone(), iw, kernel, stride, pad);
        let gx = g_cols.dot(&w_mat.t()); // (rows, ic)
        let rows = range.len();
        let mut x_chunk = Array2::zeros((rows, ic));
        for (row, pix) in range.clone().enumerate() {
            for c in 0..ic {
                x_chunk[[row, c]] = xs[c * npix_in + pix];
            }
        }
        let gw = x_chunk.t().dot(&g_cols); // (ic, oc*k2)
        Partial {
            gx,
            gw,
            rows: range.clone(),
        }
    });

    let mut gx = Array3::zeros((ic, ih, iw));
    let mut gw = Array2::zeros((ic, oc * k2));
    {
        let gxs = gx.as_slice_mut().expect("standard layout");
        for p in &partials {
            for (row, pix) in p.rows.clone().enumerate() {
                for c in 0..ic {
                    gxs[c * npix_in + pix] = gxs[c * npix_in + pix] + p.gx[[row, c]];
                }
            }
        }
    }
    for p in &partials {
        gw += &p.gw;
    }
    let gw = gw
        .into_shape_with_order((ic, oc, kernel, kernel))
        .expect("standard layout");

    let mut gb = Array1::zeros(oc);
    for o in 0..oc {
        gb[o] = gy.index_axis(ndarray::Axis(0), o).sum();
    }
    (gx, gw, gb)
}
