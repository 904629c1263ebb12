//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Nodes are
//! appended in execution order, so the tape is topologically sorted by
//! construction and the backward pass is a single reverse sweep.
//! A recording may be differentiated exactly once.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvDims, CropBox};
use crate::tensor::{Element, Tensor};
use num_traits::Float;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op<E> {
    Leaf,
    Binary(BinaryOp, Var, Var),
    Scale(Var, E),
    AddScalar(Var),
    LeakyRelu(Var, E),
    Tanh(Var),
    Conv2d { input: Var, kernel: Var, bias: Var, dims: ConvDims },
    Upsample2x(Var),
    ConcatChannels(Var, Var),
    CropResize { x: Var, boxes: Vec<CropBox> },
    Mean(Var),
    Sum(Var),
    SpatialMean(Var),
    MatMul(Var, Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node<E> {
    value: Tensor<E>,
    op: Op<E>,
    needs_grad: bool,
}

/// Recording of one forward pass.
#[derive(Debug, Default)]
pub struct Tape<E: Element = f32> {
    nodes: Vec<Node<E>>,
    spent: bool,
}

/// Result of [`Tape::backward`]: one gradient slot per recorded node.
#[derive(Debug)]
pub struct Gradients<E: Element = f32> {
    grads: Vec<Option<Vec<E>>>,
    shapes: Vec<Vec<usize>>,
}

impl<E: Element> Gradients<E> {
    /// Gradient of the loss with respect to `v`, or `None` if `v` did not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Option<Tensor<E>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(&self.shapes[v.0], g.clone()).expect("gradient shape"))
    }

    /// Gradient of the loss with respect to `v`; zeros when unreachable.
    pub fn wrt(&self, v: Var) -> Tensor<E> {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

/// Reductions accumulate in f64 so f32 losses over whole batches keep
/// their precision.
fn wide_sum<E: Element>(xs: &[E]) -> f64 {
    xs.iter().map(|&v| Element::to_f64(v)).sum()
}

fn same_shape<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch { left: a.shape().to_vec(), right: b.shape().to_vec() });
    }
    Ok(())
}

fn accumulate<E: Element>(slot: &mut Option<Vec<E>>, g: &[E]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &v)| *a = *a + v),
        None => *slot = Some(g.to_vec()),
    }
}

fn accumulate_owned<E: Element>(slot: &mut Option<Vec<E>>, g: Vec<E>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &v)| *a = *a + v),
        None => *slot = Some(g),
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), spent: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable input (a parameter or anything else we want gradients for).
    pub fn leaf(&mut self, value: Tensor<E>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<E>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn binary(&mut self, kind: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| match kind {
                BinaryOp::Add => x + y,
                BinaryOp::Sub => x - y,
                BinaryOp::Mul => x * y,
            })
            .collect();
        let value = Tensor::new(ta.shape(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Binary(kind, a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, s: E) -> Var {
        let value = self.value(a).map(|x| x * s);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: E) -> Var {
        let value = self.value(a).map(|x| x + s);
        let ng = self.needs(a);
        self.push(value, Op::AddScalar(a), ng)
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: E) -> Result<Var> {
        if !(alpha >= E::zero() && alpha < E::one()) {
            return Err(Error::InvalidArgument(format!("leaky_relu slope {alpha:?} outside [0, 1)")));
        }
        let value = self.value(x).map(|v| if v >= E::zero() { v } else { alpha * v });
        let ng = self.needs(x);
        Ok(self.push(value, Op::LeakyRelu(x, alpha), ng))
    }

    /// Branch taken at every leaky-ReLU element recorded so far (`true` for
    /// the identity side). Two passes with equal patterns evaluate the same
    /// smooth piece of the function, which finite-difference checks need.
    pub fn kink_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::LeakyRelu(x, _) => Some(x),
                _ => None,
            })
            .flat_map(|x| self.nodes[x.0].value.data().iter().map(|&v| v >= E::zero()))
            .collect()
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        let ng = self.needs(x);
        self.push(value, Op::Tanh(x), ng)
    }

    /// 2-D cross-correlation with zero padding. `input` is NCHW, `kernel` is
    /// `O x I x Kh x Kw`, `bias` has `O` elements.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        let [o, ci, kh, kw] = self.value(kernel).dims4()?;
        if ci != c {
            return Err(Error::ShapeMismatch { left: self.shape(input).to_vec(), right: self.shape(kernel).to_vec() });
        }
        if self.value(bias).len() != o {
            return Err(Error::ShapeMismatch { left: self.shape(bias).to_vec(), right: vec![o] });
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be at least 1".into()));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::EmptyConvOutput {
                input: self.shape(input).to_vec(),
                kernel: self.shape(kernel).to_vec(),
                stride,
                pad,
            });
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let dims = ConvDims { c, h, w, o, kh, kw, stride, pad, ho, wo };
        let out = kernels::conv2d_forward(
            &dims,
            n,
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(&[n, o, ho, wo], out)?;
        let ng = self.needs(input) || self.needs(kernel) || self.needs(bias);
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, dims }, ng))
    }

    /// Nearest-neighbour 2x upsampling of an NCHW tensor.
    pub fn upsample_nearest2x(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let out = kernels::upsample2x_forward(n * c, h, w, self.value(x).data());
        let value = Tensor::new(&[n, c, 2 * h, 2 * w], out)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Upsample2x(x), ng))
    }

    /// Concatenate along the channel axis, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, ca, h, w] = self.value(a).dims4()?;
        let [nb, cb, hb, wb] = self.value(b).dims4()?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::ShapeMismatch { left: self.shape(a).to_vec(), right: self.shape(b).to_vec() });
        }
        let (sa, sb) = (ca * h * w, cb * h * w);
        let mut out = Vec::with_capacity(n * (sa + sb));
        for i in 0..n {
            out.extend_from_slice(&self.value(a).data()[i * sa..(i + 1) * sa]);
            out.extend_from_slice(&self.value(b).data()[i * sb..(i + 1) * sb]);
        }
        let value = Tensor::new(&[n, ca + cb, h, w], out)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::ConcatChannels(a, b), ng))
    }

    /// Bilinear resize of every image to `out_h x out_w` (half-pixel centres,
    /// clamped borders).
    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let [n, _, h, w] = self.value(x).dims4()?;
        let boxes = vec![CropBox::full(h, w); n];
        self.crop_resize(x, &boxes, out_h, out_w)
    }

    /// Crop image `i` of the batch to `boxes[i]`, then bilinear-resize.
    pub fn crop_resize(&mut self, x: Var, boxes: &[CropBox], out_h: usize, out_w: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::InvalidArgument(format!("resize target {out_h}x{out_w} is empty")));
        }
        if boxes.len() != n {
            return Err(Error::InvalidArgument(format!("{} crop boxes for a batch of {n}", boxes.len())));
        }
        if let Some(b) = boxes.iter().find(|b| !b.fits(h, w)) {
            return Err(Error::InvalidArgument(format!("crop box {b:?} outside {h}x{w} frame")));
        }
        let out = kernels::crop_resize_forward([n, c, h, w], self.value(x).data(), boxes, out_h, out_w);
        let value = Tensor::new(&[n, c, out_h, out_w], out)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::CropResize { x, boxes: boxes.to_vec() }, ng))
    }

    /// Arithmetic mean of all elements, as a one-element tensor.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::EmptyTensor);
        }
        let value = Tensor::scalar(E::from_f64(wide_sum(t.data()) / t.len() as f64));
        let ng = self.needs(x);
        Ok(self.push(value, Op::Mean(x), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let sum = E::from_f64(wide_sum(self.value(x).data()));
        let ng = self.needs(x);
        self.push(Tensor::scalar(sum), Op::Sum(x), ng)
    }

    /// Per-channel mean over the spatial axes: `N x C x H x W -> N x C`.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        if h * w == 0 {
            return Err(Error::EmptyTensor);
        }
        let out = self.value(x).data().chunks_exact(h * w).map(|p| E::from_f64(wide_sum(p) / (h * w) as f64)).collect();
        let value = Tensor::new(&[n, c], out)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::SpatialMean(x), ng))
    }

    /// `M x K` times `K x N`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (sa, sb) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            _ => return Err(Error::ShapeMismatch { left: sa.to_vec(), right: sb.to_vec() }),
        };
        let mut out = vec![E::zero(); m * n];
        E::gemm(
            m,
            k,
            n,
            E::one(),
            (self.value(a).data(), k as isize, 1),
            (self.value(b).data(), n as isize, 1),
            E::zero(),
            (&mut out, n as isize, 1),
        );
        let value = Tensor::new(&[m, n], out)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Reshape(x), ng))
    }

    /// Reverse sweep from the scalar `loss`. Consumes the recording.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<E>> {
        if self.spent {
            return Err(Error::TapeConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.spent = true;
        let mut grads: Vec<Option<Vec<E>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![E::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.needs_grad {
                *slot = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, i: usize, g: &[E], grads: &mut [Option<Vec<E>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (a, b) = (*a, *b);
                match kind {
                    BinaryOp::Add => {
                        if self.needs(a) {
                            accumulate(&mut grads[a.0], g);
                        }
                        if self.needs(b) {
                            accumulate(&mut grads[b.0], g);
                        }
                    }
                    BinaryOp::Sub => {
                        if self.needs(a) {
                            accumulate(&mut grads[a.0], g);
                        }
                        if self.needs(b) {
                            accumulate_owned(&mut grads[b.0], g.iter().map(|&v| -v).collect());
                        }
                    }
                    BinaryOp::Mul => {
                        if self.needs(a) {
                            let other = self.value(b).data();
                            accumulate_owned(&mut grads[a.0], g.iter().zip(other).map(|(&v, &o)| v * o).collect());
                        }
                        if self.needs(b) {
                            let other = self.value(a).data();
                            accumulate_owned(&mut grads[b.0], g.iter().zip(other).map(|(&v, &o)| v * o).collect());
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                accumulate_owned(&mut grads[a.0], g.iter().map(|&v| v * *s).collect());
            }
            Op::AddScalar(a) | Op::Reshape(a) => accumulate(&mut grads[a.0], g),
            Op::LeakyRelu(x, alpha) => {
                let input = self.value(*x).data();
                let dx = g.iter().zip(input).map(|(&v, &xv)| if xv >= E::zero() { v } else { v * *alpha }).collect();
                accumulate_owned(&mut grads[x.0], dx);
            }
            Op::Tanh(x) => {
                // sech^2 of the input rather than 1 - y^2: in f32, y rounds to
                // exactly +-1 long before the true derivative underflows
                let z = self.value(*x).data();
                let dx = g
                    .iter()
                    .zip(z)
                    .map(|(&v, &zv)| {
                        let c = Float::cosh(Element::to_f64(zv));
                        v * E::from_f64(1.0 / (c * c))
                    })
                    .collect();
                accumulate_owned(&mut grads[x.0], dx);
            }
            Op::Conv2d { input, kernel, bias, dims } => {
                let n = self.shape(*input)[0];
                let want = (self.needs(*input), self.needs(*kernel), self.needs(*bias));
                let cg =
                    kernels::conv2d_backward(dims, n, self.value(*input).data(), self.value(*kernel).data(), g, want);
                if let Some(d) = cg.input {
                    accumulate_owned(&mut grads[input.0], d);
                }
                if let Some(d) = cg.kernel {
                    accumulate_owned(&mut grads[kernel.0], d);
                }
                if let Some(d) = cg.bias {
                    accumulate_owned(&mut grads[bias.0], d);
                }
            }
            Op::Upsample2x(x) => {
                let s = self.shape(*x);
                let d = kernels::upsample2x_backward(s[0] * s[1], s[2], s[3], g);
                accumulate_owned(&mut grads[x.0], d);
            }
            Op::ConcatChannels(a, b) => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let (n, pa, pb) = (sa[0], sa[1] * sa[2] * sa[3], sb[1] * sb[2] * sb[3]);
                if self.needs(*a) {
                    let d = (0..n).flat_map(|k| g[k * (pa + pb)..k * (pa + pb) + pa].iter().copied()).collect();
                    accumulate_owned(&mut grads[a.0], d);
                }
                if self.needs(*b) {
                    let d = (0..n).flat_map(|k| g[k * (pa + pb) + pa..(k + 1) * (pa + pb)].iter().copied()).collect();
                    accumulate_owned(&mut grads[b.0], d);
                }
            }
            Op::CropResize { x, boxes } => {
                let dims = self.value(*x).dims4().expect("rank checked at record time");
                let [_, _, oh, ow] = node.value.dims4().expect("rank checked at record time");
                let d = kernels::crop_resize_backward(dims, g, boxes, oh, ow);
                accumulate_owned(&mut grads[x.0], d);
            }
            Op::Mean(x) => {
                let len = self.value(*x).len();
                let v = g[0] / E::from_f64(len as f64);
                accumulate_owned(&mut grads[x.0], vec![v; len]);
            }
            Op::Sum(x) => {
                let len = self.value(*x).len();
                accumulate_owned(&mut grads[x.0], vec![g[0]; len]);
            }
            Op::SpatialMean(x) => {
                let s = self.shape(*x);
                let hw = s[2] * s[3];
                let inv = E::from_f64(1.0 / hw as f64);
                let d = g.iter().flat_map(|&v| core::iter::repeat(v * inv).take(hw)).collect();
                accumulate_owned(&mut grads[x.0], d);
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.needs(*a) {
                    // dA = G . B^T
                    let mut d = vec![E::zero(); m * k];
                    E::gemm(
                        m,
                        n,
                        k,
                        E::one(),
                        (g, n as isize, 1),
                        (self.value(*b).data(), 1, n as isize),
                        E::zero(),
                        (&mut d, k as isize, 1),
                    );
                    accumulate_owned(&mut grads[a.0], d);
                }
                if self.needs(*b) {
                    // dB = A^T . G
                    let mut d = vec![E::zero(); k * n];
                    E::gemm(
                        k,
                        m,
                        n,
                        E::one(),
                        (self.value(*a).data(), 1, k as isize),
                        (g, n as isize, 1),
                        E::zero(),
                        (&mut d, n as isize, 1),
                    );
                    accumulate_owned(&mut grads[b.0], d);
                }
            }
        }
    }
}
