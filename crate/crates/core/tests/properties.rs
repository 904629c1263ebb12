//! Property tests over randomized inputs.

use bhgan_core::dataset::{
    make_sample, split_dataset, synthesize_mask, ImageGray, Mask, MaskConfig, SplitSpec, IMAGE_SIZE,
};
use bhgan_core::eval::{linear_interp_fill, mse};
use bhgan_core::net::{self, NetConfig};
use bhgan_core::optim::{clip_weights, rmsprop_step, OptimizerState, ParamTable};
use bhgan_core::train::critic_loss;
use bhgan_core::{Tape, Tensor};
use proptest::prelude::*;

fn image_from(seed: u64) -> ImageGray {
    let mut rng = bhgan_oracles::SplitMix(seed);
    ImageGray::new((0..IMAGE_SIZE * IMAGE_SIZE).map(|_| rng.uniform(-1.0, 1.0) as f32).collect()).unwrap()
}

fn stripes() -> impl Strategy<Value = Mask> {
    prop::collection::vec((0usize..IMAGE_SIZE, 1usize..40), 0..4)
        .prop_map(|v| Mask::from_columns(&v.into_iter().map(|(a, w)| a..(a + w).min(IMAGE_SIZE)).collect::<Vec<_>>()))
}

fn table(values: Vec<f32>) -> ParamTable<f32> {
    let mut t = ParamTable::new();
    let n = values.len();
    t.insert("w", Tensor::new(&[n], values).unwrap());
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clipping_bounds_and_idempotence(values in prop::collection::vec(-1.0f32..1.0, 1..50), c in 0.001f32..0.5) {
        let mut t = table(values);
        clip_weights(&mut t, c).unwrap();
        prop_assert!(t.iter().all(|(_, x)| x.max_abs() <= c));
        let once = t.clone();
        clip_weights(&mut t, c).unwrap();
        prop_assert_eq!(t, once);
    }

    #[test]
    fn rmsprop_state_nonnegative_and_deterministic(
        w in prop::collection::vec(-1.0f32..1.0, 1..20),
        steps in prop::collection::vec(prop::collection::vec(-5.0f32..5.0, 20), 1..5),
    ) {
        let n = w.len();
        let run = || {
            let mut p = table(w.clone());
            let mut s = OptimizerState::for_params(&p, 0.01, 0.9, 1e-8);
            for g in &steps {
                rmsprop_step(&mut p, &table(g[..n].to_vec()), &mut s).unwrap();
                assert!(s.mean_sq.iter().all(|(_, t)| t.data().iter().all(|&v| v >= 0.0)));
            }
            (p, s)
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn split_is_a_permutation(n in 2usize..200, seed in any::<u64>()) {
        let (train, test) = split_dataset(n, &SplitSpec::new(seed)).unwrap();
        prop_assert!(!test.is_empty() && !train.is_empty());
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn synthesized_coverage_in_bounds(seed in any::<u64>()) {
        let m = synthesize_mask(seed, &MaskConfig::default()).unwrap();
        prop_assert!((0.25..=0.40).contains(&m.coverage()));
        prop_assert_eq!(m.coverage(), m.count() as f64 / 16384.0);
    }

    #[test]
    fn sample_and_composite_keep_known_pixels(img_seed in any::<u64>(), raw_seed in any::<u64>(), mask in stripes()) {
        let s = make_sample(image_from(img_seed), mask.clone());
        let raw = image_from(raw_seed);
        let out = net::composite(&raw, &s.gapped, &mask);
        for i in 0..IMAGE_SIZE * IMAGE_SIZE {
            let known = !mask.cells()[i];
            let g = s.gapped.pixels()[i];
            if known {
                prop_assert_eq!(g.to_bits(), s.truth.pixels()[i].to_bits());
                prop_assert_eq!(out.pixels()[i].to_bits(), g.to_bits());
            } else {
                prop_assert_eq!(g, -1.0);
                prop_assert_eq!(out.pixels()[i].to_bits(), raw.pixels()[i].to_bits());
            }
        }
    }

    #[test]
    fn baseline_never_touches_known_pixels(img_seed in any::<u64>(), mask in stripes()) {
        let s = make_sample(image_from(img_seed), mask.clone());
        let filled = linear_interp_fill(&s.gapped, &mask);
        for (i, &m) in mask.cells().iter().enumerate() {
            if !m {
                prop_assert_eq!(filled.pixels()[i].to_bits(), s.gapped.pixels()[i].to_bits());
            }
        }
    }

    #[test]
    fn mse_is_a_symmetric_nonnegative_distance(a in any::<u64>(), b in any::<u64>()) {
        let (x, y) = (image_from(a), image_from(b));
        prop_assert_eq!(mse(&x, &y), mse(&y, &x));
        prop_assert!(mse(&x, &y) >= 0.0);
        prop_assert_eq!(mse(&x, &x), 0.0);
        if x != y {
            prop_assert!(mse(&x, &y) > 0.0);
        }
    }

    #[test]
    fn critic_loss_antisymmetric(
        r in prop::collection::vec(-100.0f64..100.0, 1..30),
        f in prop::collection::vec(-100.0f64..100.0, 1..30),
    ) {
        prop_assert_eq!(critic_loss(&r, &f).unwrap(), -critic_loss(&f, &r).unwrap());
    }
}

fn small_net() -> NetConfig {
    NetConfig { gen_width: 2, critic_width: 2, local_size: 32, ..NetConfig::default() }
}

#[test]
fn local_critic_ignores_pixels_outside_the_box() {
    let cfg = small_net();
    let params = net::init_params::<f32>(3, &cfg).unwrap();
    let mask = Mask::from_columns(&[40..60, 70..75]);
    let base = image_from(1);
    let score = net::local_critic_forward(&params.local_critic, &cfg, &base, &mask).unwrap();
    let noise = image_from(2);
    let bbox = net::mask_bbox(&mask).unwrap();
    let perturbed =
        ImageGray::from_fn(|r, c| if bbox.contains(r, c) { base.get(r, c) } else { noise.get(r, c) }).unwrap();
    assert_ne!(perturbed, base);
    let again = net::local_critic_forward(&params.local_critic, &cfg, &perturbed, &mask).unwrap();
    assert_eq!(score.to_bits(), again.to_bits());
    let inside = ImageGray::from_fn(|r, c| if r == 5 && c == 50 { -base.get(r, c) } else { base.get(r, c) }).unwrap();
    assert_ne!(net::local_critic_forward(&params.local_critic, &cfg, &inside, &mask).unwrap(), score);
}

#[test]
fn zeroed_skip_kernels_equal_the_skipless_network() {
    let cfg = NetConfig { gen_width: 3, ..small_net() };
    let mut params = net::init_params::<f64>(9, &cfg).unwrap().generator;
    for (name, first_skip) in net::skip_kernel_slices(&cfg) {
        let w = params.get_mut(&name).unwrap();
        let [o, i, kh, kw] = w.dims4().unwrap();
        let data = w.data_mut();
        for oi in 0..o {
            for ci in first_skip..i {
                let start = ((oi * i) + ci) * kh * kw;
                data[start..start + kh * kw].iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    let s = make_sample(image_from(4), Mask::from_columns(&[10..30]));
    let input = net::generator_input::<f64>(&[(&s.gapped, &s.mask)]);
    let mut tape = Tape::<f64>::new();
    let p = params.bind(&mut tape, false);
    let x = tape.constant(input.clone());
    let full = net::generator_graph(&mut tape, &p, x, &cfg).unwrap();
    let mut tape2 = Tape::<f64>::new();
    let x2 = tape2.constant(input);
    let plain = net::generator_graph_without_skips(&mut tape2, &params, x2, &cfg).unwrap();
    let diff = bhgan_oracles::max_abs_diff(tape.value(full).data(), tape2.value(plain).data());
    assert!(diff < 1e-12, "{diff}");
}
