//! Grayscale images, pad-gap masks, training samples and the train/test split.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use num_traits::Float;
use rand::seq::{index, SliceRandom};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

/// Images are square with this many rows and columns.
pub const IMAGE_SIZE: usize = 128;
pub const PIXELS: usize = IMAGE_SIZE * IMAGE_SIZE;

/// 8-bit gray level to the normalized range: `v / 127.5 - 1`.
pub fn byte_to_unit(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

/// Normalized value back to 8 bits: `round((v + 1) * 127.5)`, clamped.
pub fn unit_to_byte(v: f32) -> u8 {
    let scaled = (v.clamp(-1.0, 1.0) as f64 + 1.0) * 127.5;
    Float::round(scaled) as u8
}

/// A 128x128 grayscale image with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGray {
    pixels: Vec<f32>,
}

impl ImageGray {
    pub fn new(pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != PIXELS {
            return Err(Error::DataLength { shape: vec![IMAGE_SIZE, IMAGE_SIZE], len: pixels.len() });
        }
        if let Some(&bad) = pixels.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::PixelRange(bad));
        }
        Ok(ImageGray { pixels })
    }

    /// Build from arbitrary values, clamping into `[-1, 1]`. Returns the
    /// image and the number of values that had to be clamped.
    pub fn clamped(pixels: Vec<f32>) -> Result<(Self, usize)> {
        if pixels.len() != PIXELS {
            return Err(Error::DataLength { shape: vec![IMAGE_SIZE, IMAGE_SIZE], len: pixels.len() });
        }
        if pixels.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite { what: "image pixels" });
        }
        let mut clipped = 0;
        let pixels = pixels
            .into_iter()
            .map(|v| {
                if !(-1.0..=1.0).contains(&v) {
                    clipped += 1;
                }
                v.clamp(-1.0, 1.0)
            })
            .collect();
        Ok((ImageGray { pixels }, clipped))
    }

    pub fn constant(value: f32) -> Result<Self> {
        Self::new(vec![value; PIXELS])
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        Self::new((0..PIXELS).map(|i| f(i / IMAGE_SIZE, i % IMAGE_SIZE)).collect())
    }

    /// Decode row-major 8-bit gray levels.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != PIXELS {
            return Err(Error::DataLength { shape: vec![IMAGE_SIZE, IMAGE_SIZE], len: bytes.len() });
        }
        Ok(ImageGray { pixels: bytes.iter().map(|&b| byte_to_unit(b)).collect() })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| unit_to_byte(v)).collect()
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * IMAGE_SIZE + col]
    }

    /// `1 x 1 x 128 x 128` tensor view.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(&[1, 1, IMAGE_SIZE, IMAGE_SIZE], self.pixels.clone()).expect("fixed size")
    }
}

/// Missing-pixel mask; `true` marks a gap.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    cells: Vec<bool>,
}

impl Mask {
    pub fn new(cells: Vec<bool>) -> Result<Self> {
        if cells.len() != PIXELS {
            return Err(Error::DataLength { shape: vec![IMAGE_SIZE, IMAGE_SIZE], len: cells.len() });
        }
        Ok(Mask { cells })
    }

    pub fn empty() -> Self {
        Mask { cells: vec![false; PIXELS] }
    }

    pub fn full() -> Self {
        Mask { cells: vec![true; PIXELS] }
    }

    /// Full-height stripes over the given column ranges.
    pub fn from_columns(ranges: &[Range<usize>]) -> Self {
        let mut cols = [false; IMAGE_SIZE];
        for r in ranges {
            for c in r.clone().filter(|&c| c < IMAGE_SIZE) {
                cols[c] = true;
            }
        }
        Mask { cells: (0..PIXELS).map(|i| cols[i % IMAGE_SIZE]).collect() }
    }

    /// Decode mask bytes: values of 128 and above mark missing pixels
    /// (files written here use exactly 255 and 0).
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != PIXELS {
            return Err(Error::DataLength { shape: vec![IMAGE_SIZE, IMAGE_SIZE], len: bytes.len() });
        }
        Ok(Mask { cells: bytes.iter().map(|&b| b >= 128).collect() })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.cells.iter().map(|&m| if m { 255 } else { 0 }).collect()
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.cells[row * IMAGE_SIZE + col]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&m| m).count()
    }

    /// Fraction of missing pixels.
    pub fn coverage(&self) -> f64 {
        self.count() as f64 / PIXELS as f64
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|&m| m)
    }

    /// 1.0 where missing, 0.0 where known.
    pub fn to_unit(&self) -> Vec<f32> {
        self.cells.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()
    }
}

/// Parameters of the synthetic pad-gap generator.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct MaskConfig {
    pub min_cover: f64,
    pub max_cover: f64,
    pub min_stripes: usize,
    pub max_stripes: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig { min_cover: 0.25, max_cover: 0.40, min_stripes: 2, max_stripes: 4 }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_cover > 0.0 && self.min_cover <= self.max_cover && self.max_cover < 1.0) {
            return Err(Error::Config(format!(
                "mask coverage bounds must satisfy 0 < min <= max < 1 (got {} and {})",
                self.min_cover, self.max_cover
            )));
        }
        if self.min_stripes == 0 || self.min_stripes > self.max_stripes {
            return Err(Error::Config(format!(
                "stripe count range {}..={} is empty",
                self.min_stripes, self.max_stripes
            )));
        }
        Ok(())
    }

    /// Achievable whole-column counts.
    fn column_bounds(&self) -> (usize, usize) {
        let w = IMAGE_SIZE as f64;
        let lo = Float::ceil(self.min_cover * w - 1e-9) as usize;
        let hi = Float::floor(self.max_cover * w + 1e-9) as usize;
        (lo, hi)
    }
}

/// Full-height vertical stripes covering a uniformly drawn fraction of the
/// frame. Stripes never touch, so each is a separate pad gap.
pub fn synthesize_mask(rng_seed: u64, cfg: &MaskConfig) -> Result<Mask> {
    cfg.validate()?;
    let (lo, hi) = cfg.column_bounds();
    if lo > hi || lo == 0 {
        return Err(Error::Coverage(format!(
            "no whole number of columns covers between {} and {} of a {IMAGE_SIZE}-wide frame",
            cfg.min_cover, cfg.max_cover
        )));
    }
    let mut rng = seed::rng(rng_seed);
    let target = cfg.min_cover + (cfg.max_cover - cfg.min_cover) * rng.gen::<f64>();
    let cols = (Float::round(target * IMAGE_SIZE as f64) as usize).clamp(lo, hi);

    // k stripes need k columns of width and k-1 separating columns.
    let k_max = cfg.max_stripes.min(cols).min(IMAGE_SIZE + 1 - cols);
    if k_max < cfg.min_stripes {
        return Err(Error::Coverage(format!(
            "{cols} columns cannot be split into {} separated stripes",
            cfg.min_stripes
        )));
    }
    let k = rng.gen_range(cfg.min_stripes..=k_max);

    // positive composition of `cols` into k widths
    let mut cuts: Vec<usize> = index::sample(&mut rng, cols - 1, k - 1).into_iter().map(|c| c + 1).collect();
    cuts.sort_unstable();
    let mut widths = Vec::with_capacity(k);
    let mut prev = 0;
    for c in cuts.iter().copied().chain(core::iter::once(cols)) {
        widths.push(c - prev);
        prev = c;
    }

    // spread the spare columns over the k+1 gaps, interior gaps at least 1
    let spare = IMAGE_SIZE - cols - (k - 1);
    let mut bars: Vec<usize> = index::sample(&mut rng, spare + k, k).into_vec();
    bars.sort_unstable();
    let mut gaps = Vec::with_capacity(k + 1);
    let mut prev = 0usize;
    for (i, b) in bars.iter().enumerate() {
        gaps.push(if i == 0 { *b } else { b - prev - 1 });
        prev = *b;
    }
    gaps.push(spare + k - 1 - prev);

    let mut ranges = Vec::with_capacity(k);
    let mut col = gaps[0];
    for (i, w) in widths.iter().enumerate() {
        ranges.push(col..col + w);
        col += w + gaps[i + 1] + 1;
    }
    Ok(Mask::from_columns(&ranges))
}

/// Ground truth, its mask, and the gapped image the generator sees.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub truth: ImageGray,
    pub mask: Mask,
    pub gapped: ImageGray,
}

/// Black out (set to -1) every masked pixel of `truth`.
pub fn make_sample(truth: ImageGray, mask: Mask) -> Sample {
    let gapped =
        ImageGray { pixels: truth.pixels.iter().zip(&mask.cells).map(|(&v, &m)| if m { -1.0 } else { v }).collect() };
    Sample { truth, mask, gapped }
}

/// Train/test partition parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        SplitSpec { train_fraction: 0.8, seed }
    }
}

/// Shuffle `0..n` and hold out `max(1, round((1 - train_fraction) * n))` indices.
pub fn split_dataset(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 images to hold out a test set, got {n}")));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {} outside (0, 1)", spec.train_fraction)));
    }
    let n_test = (Float::round((1.0 - spec.train_fraction) * n as f64) as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed::derive(spec.seed, &[seed::purpose::SPLIT])));
    let test = order.split_off(n - n_test);
    Ok((order, test))
}

/// One corpus image with an optional fixed mask.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusItem {
    pub name: String,
    pub image: ImageGray,
    pub mask: Option<Mask>,
}

/// Images plus the policy for masks that were not supplied on disk.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub items: Vec<CorpusItem>,
    pub mask_cfg: MaskConfig,
}

impl Corpus {
    pub fn new(items: Vec<CorpusItem>, mask_cfg: MaskConfig) -> Self {
        Corpus { items, mask_cfg }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Subset in the given index order.
    pub fn select(&self, indices: &[usize]) -> Corpus {
        Corpus { items: indices.iter().map(|&i| self.items[i].clone()).collect(), mask_cfg: self.mask_cfg }
    }

    /// Sample for item `index` in `epoch`: the stored mask if present,
    /// otherwise one synthesized from `(run_seed, index, epoch)`.
    pub fn sample(&self, index: usize, epoch: u64, run_seed: u64) -> Result<Sample> {
        let item = &self.items[index];
        let mask = match &item.mask {
            Some(m) => m.clone(),
            None => synthesize_mask(seed::mask_seed(run_seed, index, epoch), &self.mask_cfg)?,
        };
        Ok(make_sample(item.image.clone(), mask))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_endpoints() {
        assert_eq!(byte_to_unit(0), -1.0);
        assert_eq!(byte_to_unit(255), 1.0);
        assert!((byte_to_unit(128) - 0.003_921_6).abs() < 1e-6);
        assert_eq!(unit_to_byte(-1.0), 0);
        assert_eq!(unit_to_byte(1.0), 255);
        assert_eq!(unit_to_byte(7.0), 255);
        for b in 0..=255u8 {
            assert_eq!(unit_to_byte(byte_to_unit(b)), b);
        }
    }

    #[test]
    fn image_rejects_bad_input() {
        assert!(matches!(ImageGray::new(vec![0.0; 10]), Err(Error::DataLength { .. })));
        let mut px = vec![0.0; PIXELS];
        px[3] = 1.5;
        assert_eq!(ImageGray::new(px.clone()).unwrap_err(), Error::PixelRange(1.5));
        let (img, n) = ImageGray::clamped(px).unwrap();
        assert_eq!(n, 1);
        assert_eq!(img.get(0, 3), 1.0);
    }

    #[test]
    fn single_forced_stripe() {
        let cfg = MaskConfig { min_cover: 0.25, max_cover: 0.25, min_stripes: 1, max_stripes: 1 };
        let m = synthesize_mask(9, &cfg).unwrap();
        assert_eq!(m.coverage(), 0.25);
        assert_eq!(m.count(), 32 * IMAGE_SIZE);
    }

    #[test]
    fn mask_deterministic_and_in_bounds() {
        let cfg = MaskConfig::default();
        assert_eq!(synthesize_mask(42, &cfg).unwrap(), synthesize_mask(42, &cfg).unwrap());
        for s in 0..200 {
            let m = synthesize_mask(s, &cfg).unwrap();
            let c = m.coverage();
            assert!((0.25..=0.40).contains(&c), "seed {s}: {c}");
        }
    }

    #[test]
    fn stripes_are_full_height_and_separated() {
        let cfg = MaskConfig::default();
        for s in 0..50 {
            let m = synthesize_mask(s, &cfg).unwrap();
            let cols: Vec<bool> = (0..IMAGE_SIZE).map(|c| m.is_missing(0, c)).collect();
            for r in 0..IMAGE_SIZE {
                for (c, &v) in cols.iter().enumerate() {
                    assert_eq!(m.is_missing(r, c), v);
                }
            }
            let runs = cols.windows(2).filter(|w| !w[0] && w[1]).count() + usize::from(cols[0]);
            assert!((2..=4).contains(&runs), "seed {s}: {runs} stripes");
        }
    }

    #[test]
    fn unachievable_coverage() {
        let cfg = MaskConfig { min_cover: 0.301, max_cover: 0.303, min_stripes: 1, max_stripes: 1 };
        assert!(matches!(synthesize_mask(0, &cfg), Err(Error::Coverage(_))));
        let cfg = MaskConfig { min_cover: 0.01, max_cover: 0.01, min_stripes: 3, max_stripes: 4 };
        assert!(matches!(synthesize_mask(0, &cfg), Err(Error::Coverage(_))));
        let cfg = MaskConfig { min_cover: 0.5, max_cover: 0.4, ..MaskConfig::default() };
        assert!(matches!(synthesize_mask(0, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn sample_blacks_out_mask() {
        let ramp = ImageGray::from_fn(|_, c| c as f32 / 127.0 * 2.0 - 1.0).unwrap();
        let s = make_sample(ramp.clone(), Mask::empty());
        assert_eq!(s.gapped, ramp);
        let s = make_sample(ramp.clone(), Mask::full());
        assert!(s.gapped.pixels().iter().all(|&v| v == -1.0));
        let s = make_sample(ramp.clone(), Mask::from_columns(&[10..20, 60..75]));
        for r in 0..IMAGE_SIZE {
            for c in 0..IMAGE_SIZE {
                let masked = (10..20).contains(&c) || (60..75).contains(&c);
                let want = if masked { -1.0 } else { ramp.get(r, c) };
                assert_eq!(s.gapped.get(r, c).to_bits(), want.to_bits());
            }
        }
    }

    #[test]
    fn split_sizes() {
        let (tr, te) = split_dataset(10, &SplitSpec::new(1)).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let (tr, te) = split_dataset(5, &SplitSpec::new(1)).unwrap();
        assert_eq!((tr.len(), te.len()), (4, 1));
        let (tr, te) = split_dataset(20, &SplitSpec::new(1)).unwrap();
        assert_eq!((tr.len(), te.len()), (16, 4));
        assert!(split_dataset(1, &SplitSpec::new(1)).is_err());
        assert_eq!(split_dataset(10, &SplitSpec::new(3)).unwrap(), split_dataset(10, &SplitSpec::new(3)).unwrap());
        assert_ne!(split_dataset(50, &SplitSpec::new(3)).unwrap(), split_dataset(50, &SplitSpec::new(4)).unwrap());
    }
}
