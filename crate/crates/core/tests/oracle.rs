//! Kernels against slow reference implementations.

use bhgan_core::dataset::{ImageGray, Mask};
use bhgan_core::eval::mse;
use bhgan_core::{net, CropBox, Tape, Tensor};
use bhgan_oracles::{
    bilinear_pixel, conv2d_naive, conv2d_naive_grads, matmul_naive, max_abs_diff, mse_two_pass, ConvGeom, SplitMix,
};

fn to64(t: &Tensor<f32>) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn tensor32(shape: &[usize], v: &[f64]) -> Tensor<f32> {
    Tensor::new(shape, v.iter().map(|&x| x as f32).collect()).unwrap()
}

#[test]
fn conv2d_matches_naive_loops() {
    let mut rng = SplitMix(11);
    for case in 0..40 {
        let k = [1, 3, 5][rng.below(3)];
        let g = ConvGeom {
            n: 1 + rng.below(2),
            c: 1 + rng.below(4),
            h: k + rng.below(9),
            w: k + rng.below(9),
            o: 1 + rng.below(4),
            kh: k,
            kw: k,
            stride: 1 + rng.below(2),
            pad: rng.below(2),
        };
        let x = rng.vec(g.n * g.c * g.h * g.w, -1.0, 1.0);
        let kern = rng.vec(g.o * g.c * k * k, -1.0, 1.0);
        let bias = rng.vec(g.o, -1.0, 1.0);
        let dout = rng.vec(g.out_len(), -1.0, 1.0);

        let mut tape = Tape::<f32>::new();
        let xv = tape.leaf(tensor32(&[g.n, g.c, g.h, g.w], &x));
        let kv = tape.leaf(tensor32(&[g.o, g.c, k, k], &kern));
        let bv = tape.leaf(tensor32(&[g.o], &bias));
        let y = tape.conv2d(xv, kv, bv, g.stride, g.pad).unwrap();
        assert_eq!(tape.shape(y), [g.n, g.o, g.out_h(), g.out_w()]);
        let d = tape.constant(tensor32(&[g.n, g.o, g.out_h(), g.out_w()], &dout));
        let weighted = tape.mul(y, d).unwrap();
        let loss = tape.sum(weighted);
        let y_val = to64(tape.value(y));
        let grads = tape.backward(loss).unwrap();

        let want_y = conv2d_naive(&g, &x, &kern, &bias);
        let (dx, dk, db) = conv2d_naive_grads(&g, &x, &kern, &dout);
        assert!(max_abs_diff(&y_val, &want_y) < 1e-4, "case {case} forward {g:?}");
        assert!(max_abs_diff(&to64(&grads.wrt(xv)), &dx) < 1e-4, "case {case} d_input");
        assert!(max_abs_diff(&to64(&grads.wrt(kv)), &dk) < 1e-4, "case {case} d_kernel");
        assert!(max_abs_diff(&to64(&grads.wrt(bv)), &db) < 1e-4, "case {case} d_bias");
    }
}

#[test]
fn matmul_matches_naive() {
    let mut rng = SplitMix(5);
    for _ in 0..20 {
        let (m, k, n) = (1 + rng.below(7), 1 + rng.below(7), 1 + rng.below(7));
        let a = rng.vec(m * k, -2.0, 2.0);
        let b = rng.vec(k * n, -2.0, 2.0);
        let mut tape = Tape::<f64>::new();
        let av = tape.leaf(Tensor::new(&[m, k], a.clone()).unwrap());
        let bv = tape.leaf(Tensor::new(&[k, n], b.clone()).unwrap());
        let c = tape.matmul(av, bv).unwrap();
        assert!(max_abs_diff(tape.value(c).data(), &matmul_naive(&a, &b, m, k, n)) < 1e-12);
    }
}

#[test]
fn crop_resize_matches_scalar_formula() {
    let mut rng = SplitMix(8);
    for _ in 0..30 {
        let (h, w) = (4 + rng.below(20), 4 + rng.below(20));
        let src = rng.vec(h * w, -1.0, 1.0);
        let bh = 1 + rng.below(h);
        let bw = 1 + rng.below(w);
        let b = CropBox { row0: rng.below(h - bh + 1), col0: rng.below(w - bw + 1), height: bh, width: bw };
        let (oh, ow) = (1 + rng.below(12), 1 + rng.below(12));
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(tensor32(&[1, 1, h, w], &src));
        let y = tape.crop_resize(x, &[b], oh, ow).unwrap();
        let got = to64(tape.value(y));
        let want: Vec<f64> =
            (0..oh * ow).map(|p| bilinear_pixel(&src, w, (b.row0, b.col0, bh, bw), oh, ow, p / ow, p % ow)).collect();
        assert!(max_abs_diff(&got, &want) < 1e-5, "{b:?} -> {oh}x{ow}");
    }
}

#[test]
fn local_patch_matches_crop_then_resize() {
    let mut rng = SplitMix(21);
    let pixels: Vec<f32> = rng.vec(128 * 128, -1.0, 1.0).iter().map(|&v| v as f32).collect();
    let image = ImageGray::new(pixels).unwrap();
    let mask = Mask::from_columns(&[37..49, 90..101]);
    let patch = net::local_patch(&image, &mask, 64).unwrap();
    let src: Vec<f64> = image.pixels().iter().map(|&v| v as f64).collect();
    let msk: Vec<f64> = mask.to_unit().iter().map(|&v| v as f64).collect();
    let bx = (0, 37, 128, 101 - 37);
    for (ch, plane) in [&src, &msk].into_iter().enumerate() {
        let want: Vec<f64> = (0..64 * 64).map(|p| bilinear_pixel(plane, 128, bx, 64, 64, p / 64, p % 64)).collect();
        let got = to64(&patch)[ch * 4096..(ch + 1) * 4096].to_vec();
        assert!(max_abs_diff(&got, &want) < 1e-5);
    }
}

#[test]
fn mse_matches_two_pass_reference() {
    let mut rng = SplitMix(99);
    for _ in 0..10 {
        let a: Vec<f32> = rng.vec(128 * 128, -1.0, 1.0).iter().map(|&v| v as f32).collect();
        let b: Vec<f32> = rng.vec(128 * 128, -1.0, 1.0).iter().map(|&v| v as f32).collect();
        let want = mse_two_pass(&a, &b);
        let got = mse(&ImageGray::new(a).unwrap(), &ImageGray::new(b).unwrap());
        assert!((got - want).abs() < 1e-7);
    }
    let a = ImageGray::from_fn(|r, c| ((r * 7 + c) % 13) as f32 / 20.0 - 0.3).unwrap();
    let b = ImageGray::from_fn(|r, c| a.get(r, c) + 0.1).unwrap();
    assert!((mse(&a, &b) - 0.01).abs() < 1e-7);
}
