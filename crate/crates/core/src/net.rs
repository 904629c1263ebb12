//! Generator (skip-connected encoder-decoder), global critic and local critic.
//!
//! Graph builders are generic over the element type so the same topology can
//! be evaluated in `f64` for gradient checks; the image-level entry points
//! below them work on `f32` [`ImageGray`] values.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::dataset::{ImageGray, Mask, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::optim::{Bound, ParamTable};
use crate::seed;
use crate::tensor::{Element, Tensor};

pub use crate::kernels::CropBox;

/// Number of stride-2 stages in the generator encoder and in each critic.
pub const DEPTH: usize = 4;

/// Layer hyperparameters shared by the three networks.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct NetConfig {
    /// Channels of the first generator encoder stage; doubles per stage.
    pub gen_width: usize,
    /// Channels of the first critic stage; doubles per stage.
    pub critic_width: usize,
    /// Square kernel size of every convolution (odd).
    pub kernel: usize,
    /// Negative slope of every leaky ReLU.
    pub slope: f64,
    /// Side of the resized crop fed to the local critic.
    pub local_size: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { gen_width: 32, critic_width: 32, kernel: 3, slope: 0.2, local_size: 64 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gen_width == 0 || self.critic_width == 0 {
            return Err(Error::Config("network widths must be positive".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel size {} must be odd", self.kernel)));
        }
        if !(0.0..1.0).contains(&self.slope) {
            return Err(Error::Config(format!("leaky slope {} outside [0, 1)", self.slope)));
        }
        if self.local_size < 1 << DEPTH {
            return Err(Error::Config(format!("local crop size {} below {}", self.local_size, 1 << DEPTH)));
        }
        Ok(())
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    fn gen_channels(&self) -> [usize; DEPTH] {
        core::array::from_fn(|i| self.gen_width << i)
    }

    fn critic_channels(&self) -> [usize; DEPTH] {
        core::array::from_fn(|i| self.critic_width << i)
    }

    /// `(name, out, in)` for every generator convolution.
    fn generator_layers(&self) -> Vec<(alloc::string::String, usize, usize)> {
        let ch = self.gen_channels();
        let mut layers = Vec::new();
        let mut prev = GEN_INPUTS;
        for (i, &c) in ch.iter().enumerate() {
            layers.push((format!("enc{}", i + 1), c, prev));
            prev = c;
        }
        layers.push(("bottleneck".into(), prev, prev));
        // decoder stage i mirrors encoder stage DEPTH-1-i; the last one
        // mirrors the raw input
        for i in 0..DEPTH {
            let skip = if i + 1 < DEPTH { ch[DEPTH - 2 - i] } else { GEN_INPUTS };
            let out = if i + 1 < DEPTH { ch[DEPTH - 2 - i] } else { ch[0] };
            layers.push((format!("dec{}", i + 1), out, prev + skip));
            prev = out;
        }
        layers.push(("out".into(), 1, prev));
        layers
    }

    fn critic_layers(&self, inputs: usize) -> Vec<(alloc::string::String, usize, usize)> {
        let mut prev = inputs;
        self.critic_channels()
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let l = (format!("conv{}", i + 1), c, prev);
                prev = c;
                l
            })
            .collect()
    }
}

/// Generator input channels: gapped image and mask.
pub const GEN_INPUTS: usize = 2;
/// Local critic input channels: cropped image and cropped mask.
pub const LOCAL_INPUTS: usize = 2;

/// Parameters of all three networks.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams<E: Element = f32> {
    pub generator: ParamTable<E>,
    pub global_critic: ParamTable<E>,
    pub local_critic: ParamTable<E>,
}

impl<E: Element> NetParams<E> {
    pub fn cast<F: Element>(&self) -> NetParams<F> {
        NetParams {
            generator: self.generator.cast(),
            global_critic: self.global_critic.cast(),
            local_critic: self.local_critic.cast(),
        }
    }
}

fn he_conv<E: Element>(rng: &mut seed::Rng, table: &mut ParamTable<E>, name: &str, out: usize, inp: usize, k: usize) {
    let fan_in = inp * k * k;
    let normal = Normal::new(0.0, Float::sqrt(2.0 / fan_in as f64)).expect("positive std");
    table.insert(format!("{name}.weight"), Tensor::from_fn(&[out, inp, k, k], |_| E::from_f64(normal.sample(rng))));
    table.insert(format!("{name}.bias"), Tensor::zeros(&[out]));
}

fn init_critic<E: Element>(rng: &mut seed::Rng, cfg: &NetConfig, inputs: usize) -> ParamTable<E> {
    let mut t = ParamTable::new();
    for (name, out, inp) in cfg.critic_layers(inputs) {
        he_conv(rng, &mut t, &name, out, inp, cfg.kernel);
    }
    let feat = cfg.critic_channels()[DEPTH - 1];
    let normal = Normal::new(0.0, Float::sqrt(2.0 / feat as f64)).expect("positive std");
    t.insert("proj.weight", Tensor::from_fn(&[feat, 1], |_| E::from_f64(normal.sample(rng))));
    t
}

/// He (fan-in scaled normal) weights, zero biases. Deterministic per seed.
pub fn init_params<E: Element>(seed_value: u64, cfg: &NetConfig) -> Result<NetParams<E>> {
    cfg.validate()?;
    let stream = |tag: u64| seed::rng(seed::derive(seed_value, &[seed::purpose::INIT, tag]));
    let mut rng = stream(0);
    let mut generator = ParamTable::new();
    for (name, out, inp) in cfg.generator_layers() {
        he_conv(&mut rng, &mut generator, &name, out, inp, cfg.kernel);
    }
    Ok(NetParams {
        generator,
        global_critic: init_critic(&mut stream(1), cfg, 1),
        local_critic: init_critic(&mut stream(2), cfg, LOCAL_INPUTS),
    })
}

fn conv_layer<E: Element>(
    tape: &mut Tape<E>,
    p: &Bound,
    name: &str,
    x: Var,
    stride: usize,
    cfg: &NetConfig,
) -> Result<Var> {
    let w = p.var(&format!("{name}.weight"))?;
    let b = p.var(&format!("{name}.bias"))?;
    tape.conv2d(x, w, b, stride, cfg.pad())
}

fn conv_act<E: Element>(
    tape: &mut Tape<E>,
    p: &Bound,
    name: &str,
    x: Var,
    stride: usize,
    cfg: &NetConfig,
) -> Result<Var> {
    let y = conv_layer(tape, p, name, x, stride, cfg)?;
    tape.leaky_relu(y, E::from_f64(cfg.slope))
}

/// Record the generator on `tape`. `input` is `N x 2 x H x W` (gapped image,
/// mask) with `H`, `W` divisible by 16; returns the raw `N x 1 x H x W` output.
pub fn generator_graph<E: Element>(tape: &mut Tape<E>, p: &Bound, input: Var, cfg: &NetConfig) -> Result<Var> {
    let mut skips = Vec::with_capacity(DEPTH);
    let mut x = input;
    skips.push(input);
    for i in 0..DEPTH {
        x = conv_act(tape, p, &format!("enc{}", i + 1), x, 2, cfg)?;
        skips.push(x);
    }
    x = conv_act(tape, p, "bottleneck", x, 1, cfg)?;
    for i in 0..DEPTH {
        let up = tape.upsample_nearest2x(x)?;
        let joined = tape.concat_channels(up, skips[DEPTH - 1 - i])?;
        x = conv_act(tape, p, &format!("dec{}", i + 1), joined, 1, cfg)?;
    }
    let out = conv_layer(tape, p, "out", x, 1, cfg)?;
    Ok(tape.tanh(out))
}

/// The generator with every skip connection removed: each decoder convolution
/// sees only the upsampled path, using the leading input-channel slice of its
/// kernel. Forward-only; used to check that skips add capacity, not shape.
pub fn generator_graph_without_skips<E: Element>(
    tape: &mut Tape<E>,
    params: &ParamTable<E>,
    input: Var,
    cfg: &NetConfig,
) -> Result<Var> {
    let p = params.bind(tape, false);
    let mut x = input;
    for i in 0..DEPTH {
        x = conv_act(tape, &p, &format!("enc{}", i + 1), x, 2, cfg)?;
    }
    x = conv_act(tape, &p, "bottleneck", x, 1, cfg)?;
    for i in 0..DEPTH {
        let up = tape.upsample_nearest2x(x)?;
        let c_up = tape.shape(up)[1];
        let name = format!("dec{}", i + 1);
        let full = params.require(&format!("{name}.weight"))?;
        let [o, _, kh, kw] = full.dims4()?;
        let stride_o = full.len() / o;
        let per = c_up * kh * kw;
        let sliced: Vec<E> =
            (0..o).flat_map(|oi| full.data()[oi * stride_o..oi * stride_o + per].iter().copied()).collect();
        let w = tape.constant(Tensor::new(&[o, c_up, kh, kw], sliced)?);
        let b = p.var(&format!("{name}.bias"))?;
        let y = tape.conv2d(up, w, b, 1, cfg.pad())?;
        x = tape.leaky_relu(y, E::from_f64(cfg.slope))?;
    }
    let out = conv_layer(tape, &p, "out", x, 1, cfg)?;
    Ok(tape.tanh(out))
}

/// Record a critic on `tape`: strided conv stages, per-channel spatial mean,
/// linear projection. Returns unbounded `N x 1` scores.
pub fn critic_graph<E: Element>(tape: &mut Tape<E>, p: &Bound, input: Var, cfg: &NetConfig) -> Result<Var> {
    let mut x = input;
    for i in 0..DEPTH {
        x = conv_act(tape, p, &format!("conv{}", i + 1), x, 2, cfg)?;
    }
    let feat = tape.spatial_mean(x)?;
    tape.matmul(feat, p.var("proj.weight")?)
}

/// `mask * raw + (1 - mask) * gapped` on the tape, with `mask` and
/// `(1 - mask) * gapped` supplied as constants.
pub fn composite_graph<E: Element>(tape: &mut Tape<E>, raw: Var, mask: Var, known: Var) -> Result<Var> {
    let fill = tape.mul(raw, mask)?;
    tape.add(fill, known)
}

/// Tight bounding box of all missing pixels.
pub fn mask_bbox(mask: &Mask) -> Result<CropBox> {
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for r in 0..IMAGE_SIZE {
        for c in 0..IMAGE_SIZE {
            if mask.is_missing(r, c) {
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
    }
    if r0 == usize::MAX {
        return Err(Error::EmptyMask);
    }
    Ok(CropBox { row0: r0, col0: c0, height: r1 - r0 + 1, width: c1 - c0 + 1 })
}

/// Keep known pixels of `gapped`, take `raw` inside the mask.
pub fn composite(raw: &ImageGray, gapped: &ImageGray, mask: &Mask) -> ImageGray {
    let px = raw
        .pixels()
        .iter()
        .zip(gapped.pixels())
        .zip(mask.cells())
        .map(|((&r, &g), &m)| if m { r } else { g })
        .collect();
    ImageGray::new(px).expect("both inputs are in range")
}

fn plane<E: Element>(values: impl Iterator<Item = f32>) -> Vec<E> {
    values.map(|v| E::from_f64(v as f64)).collect()
}

/// `N x 2 x 128 x 128` generator input: gapped image and mask channels.
pub fn generator_input<E: Element>(items: &[(&ImageGray, &Mask)]) -> Tensor<E> {
    let mut data = Vec::with_capacity(items.len() * GEN_INPUTS * IMAGE_SIZE * IMAGE_SIZE);
    for (img, mask) in items {
        data.extend(plane::<E>(img.pixels().iter().copied()));
        data.extend(plane::<E>(mask.to_unit().into_iter()));
    }
    Tensor::new(&[items.len(), GEN_INPUTS, IMAGE_SIZE, IMAGE_SIZE], data).expect("sized above")
}

/// Stack single-channel images into `N x 1 x 128 x 128`.
pub fn image_batch<E: Element>(images: &[&ImageGray]) -> Tensor<E> {
    let data = images.iter().flat_map(|i| plane::<E>(i.pixels().iter().copied())).collect();
    Tensor::new(&[images.len(), 1, IMAGE_SIZE, IMAGE_SIZE], data).expect("sized above")
}

/// Masks as `N x 1 x 128 x 128` floats.
pub fn mask_batch<E: Element>(masks: &[&Mask]) -> Tensor<E> {
    let data = masks.iter().flat_map(|m| plane::<E>(m.to_unit().into_iter())).collect();
    Tensor::new(&[masks.len(), 1, IMAGE_SIZE, IMAGE_SIZE], data).expect("sized above")
}

/// Record the local critic's input: the batch `images` (`N x 1 x H x W`) and
/// masks cropped to each mask's bounding box and resized to `size x size`,
/// stacked as two channels.
pub fn local_patch_graph<E: Element>(
    tape: &mut Tape<E>,
    images: Var,
    masks: Var,
    boxes: &[CropBox],
    size: usize,
) -> Result<Var> {
    let img = tape.crop_resize(images, boxes, size, size)?;
    let msk = tape.crop_resize(masks, boxes, size, size)?;
    tape.concat_channels(img, msk)
}

/// `2 x size x size` local-critic input for one image.
pub fn local_patch(image: &ImageGray, mask: &Mask, size: usize) -> Result<Tensor<f32>> {
    let bbox = mask_bbox(mask)?;
    let mut tape = Tape::<f32>::new();
    let img = tape.constant(image_batch(&[image]));
    let msk = tape.constant(mask_batch(&[mask]));
    let patch = local_patch_graph(&mut tape, img, msk, &[bbox], size)?;
    tape.value(patch).clone().reshape(&[LOCAL_INPUTS, size, size])
}

fn finite_score(score: f32, what: &'static str) -> Result<f32> {
    if score.is_finite() {
        Ok(score)
    } else {
        Err(Error::NonFinite { what })
    }
}

/// Raw generator output for one gapped image. Values lie in `(-1, 1)` up to
/// `f32` rounding of `tanh`.
pub fn generator_forward(
    params: &ParamTable<f32>,
    cfg: &NetConfig,
    gapped: &ImageGray,
    mask: &Mask,
) -> Result<ImageGray> {
    let mut tape = Tape::<f32>::new();
    let p = params.bind(&mut tape, false);
    let input = tape.constant(generator_input(&[(gapped, mask)]));
    let out = generator_graph(&mut tape, &p, input, cfg)?;
    let t = tape.value(out);
    if !t.all_finite() {
        return Err(Error::NonFinite { what: "generator output" });
    }
    ImageGray::new(t.data().to_vec())
}

/// Generator output pasted into the gaps of `gapped`.
pub fn inpaint(params: &ParamTable<f32>, cfg: &NetConfig, gapped: &ImageGray, mask: &Mask) -> Result<ImageGray> {
    let raw = generator_forward(params, cfg, gapped, mask)?;
    Ok(composite(&raw, gapped, mask))
}

/// Global critic score of a whole image.
pub fn global_critic_forward(params: &ParamTable<f32>, cfg: &NetConfig, image: &ImageGray) -> Result<f32> {
    let mut tape = Tape::<f32>::new();
    let p = params.bind(&mut tape, false);
    let x = tape.constant(image_batch(&[image]));
    let s = critic_graph(&mut tape, &p, x, cfg)?;
    finite_score(tape.value(s).data()[0], "global critic score")
}

/// Local critic score of the masked region of `image`.
pub fn local_critic_forward(params: &ParamTable<f32>, cfg: &NetConfig, image: &ImageGray, mask: &Mask) -> Result<f32> {
    let patch = local_patch(image, mask, cfg.local_size)?;
    let mut tape = Tape::<f32>::new();
    let p = params.bind(&mut tape, false);
    let x = tape.constant(patch.reshape(&[1, LOCAL_INPUTS, cfg.local_size, cfg.local_size])?);
    let s = critic_graph(&mut tape, &p, x, cfg)?;
    finite_score(tape.value(s).data()[0], "local critic score")
}

/// Zero every parameter of the output layer (`"out.*"` or `"proj.*"`).
pub fn zero_output_layer<E: Element>(table: &mut ParamTable<E>) {
    for (name, t) in table.iter_mut() {
        if name.starts_with("out.") || name.starts_with("proj.") {
            t.data_mut().iter_mut().for_each(|v| *v = E::zero());
        }
    }
}

/// Decoder kernels and the index of their first skip input channel; input
/// channels before it belong to the upsampled path.
pub fn skip_kernel_slices(cfg: &NetConfig) -> Vec<(alloc::string::String, usize)> {
    cfg.generator_layers()
        .into_iter()
        .filter(|(name, _, _)| name.starts_with("dec"))
        .scan(cfg.gen_channels()[DEPTH - 1], |prev, (name, out, _)| {
            let first_skip = *prev;
            *prev = out;
            Some((format!("{name}.weight"), first_skip))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetConfig {
        NetConfig { gen_width: 4, critic_width: 4, local_size: 32, ..NetConfig::default() }
    }

    #[test]
    fn layer_table_shapes() {
        let p = init_params::<f32>(0, &NetConfig::default()).unwrap();
        assert_eq!(p.generator.get("enc1.weight").unwrap().shape(), &[32, 2, 3, 3]);
        assert_eq!(p.generator.get("enc4.weight").unwrap().shape(), &[256, 128, 3, 3]);
        assert_eq!(p.generator.get("bottleneck.weight").unwrap().shape(), &[256, 256, 3, 3]);
        assert_eq!(p.generator.get("dec1.weight").unwrap().shape(), &[128, 384, 3, 3]);
        assert_eq!(p.generator.get("dec4.weight").unwrap().shape(), &[32, 34, 3, 3]);
        assert_eq!(p.generator.get("out.weight").unwrap().shape(), &[1, 32, 3, 3]);
        assert_eq!(p.global_critic.get("conv1.weight").unwrap().shape(), &[32, 1, 3, 3]);
        assert_eq!(p.local_critic.get("conv1.weight").unwrap().shape(), &[32, 2, 3, 3]);
        assert_eq!(p.local_critic.get("proj.weight").unwrap().shape(), &[256, 1]);
    }

    #[test]
    fn bbox_cases() {
        let b = mask_bbox(&Mask::from_columns(&[40..72])).unwrap();
        assert_eq!(b, CropBox { row0: 0, col0: 40, height: 128, width: 32 });
        let b = mask_bbox(&Mask::from_columns(&[10..20, 100..110])).unwrap();
        assert_eq!(b, CropBox { row0: 0, col0: 10, height: 128, width: 100 });
        assert_eq!(mask_bbox(&Mask::full()).unwrap(), CropBox::full(128, 128));
        assert_eq!(mask_bbox(&Mask::empty()).unwrap_err(), Error::EmptyMask);
    }

    #[test]
    fn missing_params_error() {
        let img = ImageGray::constant(0.0).unwrap();
        let err = generator_forward(&ParamTable::new(), &small(), &img, &Mask::empty()).unwrap_err();
        assert!(matches!(err, Error::MissingParam(_)));
    }

    #[test]
    fn generator_shape_and_range() {
        let cfg = small();
        let p = init_params::<f32>(3, &cfg).unwrap();
        let img = ImageGray::from_fn(|r, c| ((r * 7 + c) % 13) as f32 / 13.0 - 0.5).unwrap();
        let mask = Mask::from_columns(&[30..50]);
        let out = generator_forward(&p.generator, &cfg, &img, &mask).unwrap();
        assert_eq!(out.pixels().len(), IMAGE_SIZE * IMAGE_SIZE);
        assert!(out.pixels().iter().all(|v| v.abs() < 1.0));
        assert_eq!(out, generator_forward(&p.generator, &cfg, &img, &mask).unwrap());
    }

    #[test]
    fn zeroed_output_layers() {
        let cfg = small();
        let mut p = init_params::<f32>(5, &cfg).unwrap();
        zero_output_layer(&mut p.generator);
        zero_output_layer(&mut p.global_critic);
        zero_output_layer(&mut p.local_critic);
        let img = ImageGray::from_fn(|r, _| r as f32 / 128.0).unwrap();
        let mask = Mask::from_columns(&[3..9]);
        let out = generator_forward(&p.generator, &cfg, &img, &mask).unwrap();
        assert!(out.pixels().iter().all(|&v| v == 0.0));
        assert_eq!(global_critic_forward(&p.global_critic, &cfg, &img).unwrap(), 0.0);
        assert_eq!(local_critic_forward(&p.local_critic, &cfg, &img, &mask).unwrap(), 0.0);
    }

    #[test]
    fn composite_cases() {
        let raw = ImageGray::constant(0.5).unwrap();
        let gapped = ImageGray::from_fn(|r, c| if c % 2 == 0 { -1.0 } else { r as f32 / 200.0 }).unwrap();
        assert_eq!(composite(&raw, &gapped, &Mask::empty()), gapped);
        assert_eq!(composite(&raw, &gapped, &Mask::full()), raw);
    }

    #[test]
    fn local_patch_full_frame() {
        let img = ImageGray::from_fn(|r, c| ((r + c) % 9) as f32 / 9.0).unwrap();
        let patch = local_patch(&img, &Mask::full(), 64).unwrap();
        assert_eq!(patch.shape(), &[2, 64, 64]);
        assert!(patch.data()[64 * 64..].iter().all(|&v| v == 1.0));
        assert!(local_patch(&img, &Mask::empty(), 64).is_err());
    }

    #[test]
    fn init_statistics() {
        let cfg = NetConfig::default();
        let a = init_params::<f32>(11, &cfg).unwrap();
        assert_eq!(a, init_params::<f32>(11, &cfg).unwrap());
        assert_ne!(a.generator, init_params::<f32>(12, &cfg).unwrap().generator);
        for (name, t) in a.generator.iter() {
            if name.ends_with(".bias") {
                assert!(t.data().iter().all(|&v| v == 0.0));
            }
        }
        let w = a.generator.get("dec1.weight").unwrap();
        let fan_in = 384.0 * 9.0;
        let var = w.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / w.len() as f64;
        let expect = 2.0 / fan_in;
        assert!((var / expect - 1.0).abs() < 0.2, "var {var} vs {expect}");
    }
}
