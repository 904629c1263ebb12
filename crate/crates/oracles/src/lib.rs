//! Slow, obviously-correct reference computations used to check the
//! production kernels. Nothing here shares code with `bhgan-core`.

/// Central finite differences of `f` at `x` for the listed coordinates.
pub fn central_diff<F>(mut f: F, x: &[f64], coords: &[usize], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Finite differences over every coordinate.
pub fn central_diff_all<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    central_diff(f, x, &coords, h)
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Shapes for the naive convolution, NCHW input and OIKhKw kernel.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kh) / self.stride + 1
    }
    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kw) / self.stride + 1
    }
    pub fn out_len(&self) -> usize {
        self.n * self.o * self.out_h() * self.out_w()
    }

    fn input_at(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky) as isize - self.pad as isize;
        let x = (ox * self.stride + kx) as isize - self.pad as isize;
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            None
        } else {
            Some((y as usize, x as usize))
        }
    }
}

/// Direct cross-correlation with zero padding, one loop per index.
pub fn conv2d_naive(g: &ConvGeom, input: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let mut out = vec![0.0; g.out_len()];
    for n in 0..g.n {
        for o in 0..g.o {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias[o];
                    for c in 0..g.c {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                if let Some((y, x)) = g.input_at(oy, ox, ky, kx) {
                                    acc += input[((n * g.c + c) * g.h + y) * g.w + x]
                                        * kernel[((o * g.c + c) * g.kh + ky) * g.kw + kx];
                                }
                            }
                        }
                    }
                    out[((n * g.o + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

/// Gradients of `sum(dout * conv(input))` with respect to input, kernel and bias.
pub fn conv2d_naive_grads(g: &ConvGeom, input: &[f64], kernel: &[f64], dout: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let mut dinput = vec![0.0; input.len()];
    let mut dkernel = vec![0.0; kernel.len()];
    let mut dbias = vec![0.0; g.o];
    for n in 0..g.n {
        for o in 0..g.o {
            for oy in 0..ho {
                for ox in 0..wo {
                    let d = dout[((n * g.o + o) * ho + oy) * wo + ox];
                    dbias[o] += d;
                    for c in 0..g.c {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                if let Some((y, x)) = g.input_at(oy, ox, ky, kx) {
                                    let ii = ((n * g.c + c) * g.h + y) * g.w + x;
                                    let ki = ((o * g.c + c) * g.kh + ky) * g.kw + kx;
                                    dinput[ii] += d * kernel[ki];
                                    dkernel[ki] += d * input[ii];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (dinput, dkernel, dbias)
}

/// Row-major `m x k` times `k x n`.
pub fn matmul_naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// One bilinear sample of the `h x w` plane `src` restricted to the box
/// `(row0, col0, bh, bw)`, resized to `out_h x out_w`, at output pixel `(i, j)`.
/// Half-pixel centres, coordinates clamped to the box.
#[allow(clippy::too_many_arguments)]
pub fn bilinear_pixel(
    src: &[f64],
    w: usize,
    (row0, col0, bh, bw): (usize, usize, usize, usize),
    out_h: usize,
    out_w: usize,
    i: usize,
    j: usize,
) -> f64 {
    let sy = ((i as f64 + 0.5) * bh as f64 / out_h as f64 - 0.5).clamp(0.0, (bh - 1) as f64);
    let sx = ((j as f64 + 0.5) * bw as f64 / out_w as f64 - 0.5).clamp(0.0, (bw - 1) as f64);
    let y0 = sy.floor() as usize;
    let x0 = sx.floor() as usize;
    let y1 = (y0 + 1).min(bh - 1);
    let x1 = (x0 + 1).min(bw - 1);
    let fy = sy - y0 as f64;
    let fx = sx - x0 as f64;
    let at = |y: usize, x: usize| src[(row0 + y) * w + col0 + x];
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
}

/// Mean squared difference, accumulated in f64 and divided once at the end.
pub fn mse_two_pass(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut sum = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = *x as f64 - *y as f64;
        sum += d * d;
    }
    sum / a.len() as f64
}

/// Tiny deterministic generator so oracle-driven tests need no extra deps.
#[derive(Clone, Debug)]
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + (hi - lo) * u
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn vec(&mut self, len: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..len).map(|_| self.uniform(lo, hi)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diff_of_square() {
        let g = central_diff_all(|x| x[0] * x[0] + 3.0 * x[1], &[3.0, 1.0], 1e-3);
        assert!((g[0] - 6.0).abs() < 1e-9);
        assert!((g[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn naive_conv_sum_of_ones() {
        let g = ConvGeom { n: 1, c: 1, h: 3, w: 3, o: 1, kh: 3, kw: 3, stride: 1, pad: 0 };
        let out = conv2d_naive(&g, &[1.0; 9], &[1.0; 9], &[0.0]);
        assert_eq!(out, vec![9.0]);
    }

    #[test]
    fn bilinear_center_average() {
        let v = bilinear_pixel(&[0.0, 2.0, 4.0, 6.0], 2, (0, 0, 2, 2), 1, 1, 0, 0);
        assert_eq!(v, 3.0);
    }
}
