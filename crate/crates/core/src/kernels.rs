//! Raw forward/backward kernels behind the recorded tape operations.
//! Everything here works on plain slices; shape validation happens in the tape.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Element;

/// Axis-aligned pixel rectangle, `row0`/`col0` inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CropBox {
    pub row0: usize,
    pub col0: usize,
    pub height: usize,
    pub width: usize,
}

impl CropBox {
    pub fn full(height: usize, width: usize) -> Self {
        CropBox { row0: 0, col0: 0, height, width }
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.height >= 1 && self.width >= 1 && self.row0 + self.height <= height && self.col0 + self.width <= width
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row0 && row < self.row0 + self.height && col >= self.col0 && col < self.col0 + self.width
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvDims {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn spatial(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `[lo, hi)` whose tap `kx` lands inside the input row.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let (s, p, w) = (self.stride, self.pad, self.w);
        let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
        let hi = if w + p > kx { ((w + p - kx - 1) / s + 1).min(self.wo) } else { 0 };
        (lo.min(hi), hi)
    }
}

fn im2col<E: Element>(d: &ConvDims, img: &[E], cols: &mut [E]) {
    let hw = d.spatial();
    for c in 0..d.c {
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let (lo, hi) = d.valid_cols(kx);
                for oy in 0..d.ho {
                    let seg = &mut dst[oy * d.wo..(oy + 1) * d.wo];
                    let y = (oy * d.stride + ky) as isize - d.pad as isize;
                    if y < 0 || y >= d.h as isize {
                        seg.fill(E::zero());
                        continue;
                    }
                    let src = &img[(c * d.h + y as usize) * d.w..(c * d.h + y as usize + 1) * d.w];
                    seg[..lo].fill(E::zero());
                    seg[hi..].fill(E::zero());
                    if d.stride == 1 {
                        let x0 = lo + kx - d.pad;
                        seg[lo..hi].copy_from_slice(&src[x0..x0 + (hi - lo)]);
                    } else {
                        for (ox, v) in seg.iter_mut().enumerate().take(hi).skip(lo) {
                            *v = src[ox * d.stride + kx - d.pad];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<E: Element>(d: &ConvDims, cols: &[E], img: &mut [E]) {
    let hw = d.spatial();
    for c in 0..d.c {
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let (lo, hi) = d.valid_cols(kx);
                for oy in 0..d.ho {
                    let y = (oy * d.stride + ky) as isize - d.pad as isize;
                    if y < 0 || y >= d.h as isize {
                        continue;
                    }
                    let dst = &mut img[(c * d.h + y as usize) * d.w..(c * d.h + y as usize + 1) * d.w];
                    let seg = &src[oy * d.wo..(oy + 1) * d.wo];
                    for ox in lo..hi {
                        dst[ox * d.stride + kx - d.pad] = dst[ox * d.stride + kx - d.pad] + seg[ox];
                    }
                }
            }
        }
    }
}

/// Cross-correlation of an `n`-image batch. Returns `n x o x ho x wo`.
pub(crate) fn conv2d_forward<E: Element>(d: &ConvDims, n: usize, input: &[E], kernel: &[E], bias: &[E]) -> Vec<E> {
    let (patch, hw) = (d.patch(), d.spatial());
    let in_len = d.c * d.h * d.w;
    let mut out = vec![E::zero(); n * d.o * hw];
    let mut cols = if d.is_pointwise() { Vec::new() } else { vec![E::zero(); patch * hw] };
    for b in 0..n {
        let img = &input[b * in_len..(b + 1) * in_len];
        let src: &[E] = if d.is_pointwise() {
            img
        } else {
            im2col(d, img, &mut cols);
            &cols
        };
        let dst = &mut out[b * d.o * hw..(b + 1) * d.o * hw];
        E::gemm(
            d.o,
            patch,
            hw,
            E::one(),
            (kernel, patch as isize, 1),
            (src, hw as isize, 1),
            E::zero(),
            (dst, hw as isize, 1),
        );
        for (o, row) in dst.chunks_exact_mut(hw).enumerate() {
            let bo = bias[o];
            row.iter_mut().for_each(|v| *v = *v + bo);
        }
    }
    out
}

pub(crate) struct ConvGrads<E> {
    pub input: Option<Vec<E>>,
    pub kernel: Option<Vec<E>>,
    pub bias: Option<Vec<E>>,
}

pub(crate) fn conv2d_backward<E: Element>(
    d: &ConvDims,
    n: usize,
    input: &[E],
    kernel: &[E],
    dout: &[E],
    want: (bool, bool, bool),
) -> ConvGrads<E> {
    let (patch, hw) = (d.patch(), d.spatial());
    let in_len = d.c * d.h * d.w;
    let mut dinput = want.0.then(|| vec![E::zero(); n * in_len]);
    let mut dkernel = want.1.then(|| vec![E::zero(); d.o * patch]);
    let mut dbias = want.2.then(|| vec![E::zero(); d.o]);
    let mut cols = vec![E::zero(); if want.1 && !d.is_pointwise() { patch * hw } else { 0 }];
    let mut dcols = vec![E::zero(); if want.0 { patch * hw } else { 0 }];
    for b in 0..n {
        let g = &dout[b * d.o * hw..(b + 1) * d.o * hw];
        if let Some(db) = dbias.as_mut() {
            for (o, row) in g.chunks_exact(hw).enumerate() {
                db[o] = row.iter().fold(db[o], |acc, &v| acc + v);
            }
        }
        if let Some(dk) = dkernel.as_mut() {
            let img = &input[b * in_len..(b + 1) * in_len];
            let src: &[E] = if d.is_pointwise() {
                img
            } else {
                im2col(d, img, &mut cols);
                &cols
            };
            // dK += dOut . cols^T
            E::gemm(
                d.o,
                hw,
                patch,
                E::one(),
                (g, hw as isize, 1),
                (src, 1, hw as isize),
                E::one(),
                (dk, patch as isize, 1),
            );
        }
        if let Some(di) = dinput.as_mut() {
            // dcols = K^T . dOut
            E::gemm(
                patch,
                d.o,
                hw,
                E::one(),
                (kernel, 1, patch as isize),
                (g, hw as isize, 1),
                E::zero(),
                (&mut dcols, hw as isize, 1),
            );
            let dst = &mut di[b * in_len..(b + 1) * in_len];
            if d.is_pointwise() {
                dst.iter_mut().zip(&dcols).for_each(|(a, &v)| *a = *a + v);
            } else {
                col2im_add(d, &dcols, dst);
            }
        }
    }
    ConvGrads { input: dinput, kernel: dkernel, bias: dbias }
}

pub(crate) fn upsample2x_forward<E: Element>(planes: usize, h: usize, w: usize, x: &[E]) -> Vec<E> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![E::zero(); planes * h2 * w2];
    for p in 0..planes {
        for y in 0..h2 {
            let src = &x[(p * h + y / 2) * w..(p * h + y / 2 + 1) * w];
            let dst = &mut out[(p * h2 + y) * w2..(p * h2 + y + 1) * w2];
            for (xo, v) in dst.iter_mut().enumerate() {
                *v = src[xo / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2x_backward<E: Element>(planes: usize, h: usize, w: usize, g: &[E]) -> Vec<E> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![E::zero(); planes * h * w];
    for p in 0..planes {
        for y in 0..h2 {
            let src = &g[(p * h2 + y) * w2..(p * h2 + y + 1) * w2];
            let dst = &mut out[(p * h + y / 2) * w..(p * h + y / 2 + 1) * w];
            for (xo, &v) in src.iter().enumerate() {
                dst[xo / 2] = dst[xo / 2] + v;
            }
        }
    }
    out
}

/// Two-tap bilinear stencil along one axis.
#[derive(Clone, Copy, Debug)]
struct Tap<E> {
    i0: usize,
    i1: usize,
    w0: E,
    w1: E,
}

fn taps<E: Element>(offset: usize, extent: usize, out: usize) -> Vec<Tap<E>> {
    let scale = extent as f64 / out as f64;
    (0..out)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (extent - 1) as f64);
            let i0 = s as usize;
            let i1 = (i0 + 1).min(extent - 1);
            let f = s - i0 as f64;
            Tap { i0: offset + i0, i1: offset + i1, w0: E::from_f64(1.0 - f), w1: E::from_f64(f) }
        })
        .collect()
}

/// Per-image bilinear crop-and-resize. `x` is `n x c x h x w`; image `b` is
/// cropped to `boxes[b]` and resampled to `out_h x out_w`.
pub(crate) fn crop_resize_forward<E: Element>(
    dims: [usize; 4],
    x: &[E],
    boxes: &[CropBox],
    out_h: usize,
    out_w: usize,
) -> Vec<E> {
    let [n, c, h, w] = dims;
    let mut out = vec![E::zero(); n * c * out_h * out_w];
    for b in 0..n {
        let bx = boxes[b];
        let ty = taps::<E>(bx.row0, bx.height, out_h);
        let tx = taps::<E>(bx.col0, bx.width, out_w);
        for ch in 0..c {
            let plane = &x[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
            let dst = &mut out[(b * c + ch) * out_h * out_w..(b * c + ch + 1) * out_h * out_w];
            for (i, yt) in ty.iter().enumerate() {
                let r0 = &plane[yt.i0 * w..(yt.i0 + 1) * w];
                let r1 = &plane[yt.i1 * w..(yt.i1 + 1) * w];
                for (j, xt) in tx.iter().enumerate() {
                    let top = xt.w0 * r0[xt.i0] + xt.w1 * r0[xt.i1];
                    let bot = xt.w0 * r1[xt.i0] + xt.w1 * r1[xt.i1];
                    dst[i * out_w + j] = yt.w0 * top + yt.w1 * bot;
                }
            }
        }
    }
    out
}

pub(crate) fn crop_resize_backward<E: Element>(
    dims: [usize; 4],
    g: &[E],
    boxes: &[CropBox],
    out_h: usize,
    out_w: usize,
) -> Vec<E> {
    let [n, c, h, w] = dims;
    let mut dx = vec![E::zero(); n * c * h * w];
    for b in 0..n {
        let bx = boxes[b];
        let ty = taps::<E>(bx.row0, bx.height, out_h);
        let tx = taps::<E>(bx.col0, bx.width, out_w);
        for ch in 0..c {
            let plane = &mut dx[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
            let src = &g[(b * c + ch) * out_h * out_w..(b * c + ch + 1) * out_h * out_w];
            for (i, yt) in ty.iter().enumerate() {
                for (j, xt) in tx.iter().enumerate() {
                    let v = src[i * out_w + j];
                    let (top, bot) = (yt.w0 * v, yt.w1 * v);
                    plane[yt.i0 * w + xt.i0] = plane[yt.i0 * w + xt.i0] + xt.w0 * top;
                    plane[yt.i0 * w + xt.i1] = plane[yt.i0 * w + xt.i1] + xt.w1 * top;
                    plane[yt.i1 * w + xt.i0] = plane[yt.i1 * w + xt.i0] + xt.w0 * bot;
                    plane[yt.i1 * w + xt.i1] = plane[yt.i1 * w + xt.i1] + xt.w1 * bot;
                }
            }
        }
    }
    dx
}
