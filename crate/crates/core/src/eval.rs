//! Reconstruction error, the row-wise linear interpolation baseline, and
//! the model-vs-baseline comparison.

use alloc::string::String;
use alloc::vec::Vec;

use crate::dataset::{ImageGray, Mask, Sample, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::net;
use crate::train::ModelParams;

/// Mean squared error over all pixels, accumulated in f64.
pub fn mse(a: &ImageGray, b: &ImageGray) -> f64 {
    let s: f64 = a.pixels().iter().zip(b.pixels()).map(|(&x, &y)| sq(x, y)).sum();
    s / a.pixels().len() as f64
}

/// Mean squared error over the missing pixels; `None` for an empty mask.
pub fn masked_mse(a: &ImageGray, b: &ImageGray, mask: &Mask) -> Option<f64> {
    let n = mask.count();
    if n == 0 {
        return None;
    }
    let s: f64 =
        a.pixels().iter().zip(b.pixels()).zip(mask.cells()).filter(|(_, &m)| m).map(|((&x, &y), _)| sq(x, y)).sum();
    Some(s / n as f64)
}

fn sq(x: f32, y: f32) -> f64 {
    let d = x as f64 - y as f64;
    d * d
}

/// Fill each maximal run of missing pixels in a row by linear interpolation
/// between its nearest known neighbours. A run touching the left or right
/// edge takes the value of its single neighbour; a fully missing row is 0.
pub fn linear_interp_fill(gapped: &ImageGray, mask: &Mask) -> ImageGray {
    let mut out = gapped.pixels().to_vec();
    for (row, cells) in mask.cells().chunks_exact(IMAGE_SIZE).enumerate() {
        let px = &mut out[row * IMAGE_SIZE..(row + 1) * IMAGE_SIZE];
        let mut c = 0;
        while c < IMAGE_SIZE {
            if !cells[c] {
                c += 1;
                continue;
            }
            let start = c;
            while c < IMAGE_SIZE && cells[c] {
                c += 1;
            }
            let left = start.checked_sub(1).map(|i| (i, px[i] as f64));
            let right = (c < IMAGE_SIZE).then(|| (c, px[c] as f64));
            for (j, p) in px.iter_mut().enumerate().take(c).skip(start) {
                *p = match (left, right) {
                    (Some((i0, v0)), Some((i1, v1))) => {
                        let t = (j - i0) as f64 / (i1 - i0) as f64;
                        (v0 + (v1 - v0) * t) as f32
                    }
                    (Some((_, v)), None) | (None, Some((_, v))) => v as f32,
                    (None, None) => 0.0,
                };
            }
        }
    }
    ImageGray::new(out).expect("interpolation stays within the known range")
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImageEval {
    pub name: String,
    pub mse_model: f64,
    pub mse_baseline: f64,
    pub mse_model_masked: f64,
    pub mse_baseline_masked: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub images: Vec<ImageEval>,
    pub mean_mse_model: f64,
    pub mean_mse_baseline: f64,
    /// Wall time of the model over the whole set, warm-up excluded.
    pub t_model_s: f64,
    pub t_baseline_s: f64,
    /// `t_baseline_s / t_model_s`.
    pub speedup: f64,
    pub model_beats_baseline: bool,
}

/// Shortest duration reported, so timings stay positive on coarse clocks.
const MIN_DURATION: f64 = 1e-9;

/// Compare `model` against the linear baseline on named samples.
///
/// Both methods are run once on the first sample before timing starts.
/// `clock` returns seconds on a monotonic clock.
pub fn evaluate_with<F>(
    samples: &[(String, Sample)],
    mut model: F,
    clock: &mut dyn FnMut() -> f64,
) -> Result<EvalReport>
where
    F: FnMut(&Sample) -> Result<ImageGray>,
{
    let first = &samples.first().ok_or(Error::InvalidArgument("evaluation set is empty".into()))?.1;
    model(first)?;
    core::hint::black_box(linear_interp_fill(&first.gapped, &first.mask));

    let t0 = clock();
    let model_out = samples.iter().map(|(_, s)| model(s)).collect::<Result<Vec<_>>>()?;
    let t_model = (clock() - t0).max(MIN_DURATION);

    let t0 = clock();
    let base_out: Vec<_> = samples.iter().map(|(_, s)| linear_interp_fill(&s.gapped, &s.mask)).collect();
    let t_baseline = (clock() - t0).max(MIN_DURATION);

    let mut images = Vec::with_capacity(samples.len());
    for (((name, s), m), b) in samples.iter().zip(&model_out).zip(&base_out) {
        if s.mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        images.push(ImageEval {
            name: name.clone(),
            mse_model: mse(m, &s.truth),
            mse_baseline: mse(b, &s.truth),
            mse_model_masked: masked_mse(m, &s.truth, &s.mask).unwrap_or(0.0),
            mse_baseline_masked: masked_mse(b, &s.truth, &s.mask).unwrap_or(0.0),
        });
    }
    let n = images.len() as f64;
    let mean_mse_model = images.iter().map(|e| e.mse_model).sum::<f64>() / n;
    let mean_mse_baseline = images.iter().map(|e| e.mse_baseline).sum::<f64>() / n;
    if !(mean_mse_model.is_finite()) {
        return Err(Error::NonFinite { what: "model reconstruction" });
    }
    Ok(EvalReport {
        images,
        mean_mse_model,
        mean_mse_baseline,
        t_model_s: t_model,
        t_baseline_s: t_baseline,
        speedup: t_baseline / t_model,
        model_beats_baseline: mean_mse_model < mean_mse_baseline,
    })
}

/// [`evaluate_with`] using the trained generator followed by compositing.
pub fn evaluate(
    params: &ModelParams,
    samples: &[(String, Sample)],
    clock: &mut dyn FnMut() -> f64,
) -> Result<EvalReport> {
    evaluate_with(samples, |s| net::inpaint(&params.nets.generator, &params.net, &s.gapped, &s.mask), clock)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{byte_to_unit, make_sample, unit_to_byte};

    fn no_clock() -> impl FnMut() -> f64 {
        let mut t = 0.0;
        move || {
            t += 1.0;
            t
        }
    }

    #[test]
    fn mse_cases() {
        let a = ImageGray::constant(0.5).unwrap();
        assert_eq!(mse(&a, &a), 0.0);
        let b = ImageGray::constant(0.0).unwrap();
        assert!((mse(&a, &b) - 0.25).abs() < 1e-12);
        assert_eq!(masked_mse(&a, &b, &Mask::empty()), None);
        assert!((masked_mse(&a, &b, &Mask::from_columns(&[3..4])).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn interpolates_between_neighbours() {
        let truth = ImageGray::from_fn(|_, c| match c {
            0 => byte_to_unit(10),
            3 => byte_to_unit(40),
            _ => 0.0,
        })
        .unwrap();
        let mask = Mask::from_columns(&[1..3]);
        let out = linear_interp_fill(&make_sample(truth, mask.clone()).gapped, &mask);
        assert_eq!(unit_to_byte(out.get(5, 1)), 20);
        assert_eq!(unit_to_byte(out.get(5, 2)), 30);
    }

    #[test]
    fn edges_and_empty_rows() {
        let v = 0.3;
        let truth = ImageGray::constant(v).unwrap();
        let mask = Mask::from_columns(&[0..5, 120..128]);
        let out = linear_interp_fill(&make_sample(truth.clone(), mask.clone()).gapped, &mask);
        assert_eq!(out, truth);
        let full = linear_interp_fill(&ImageGray::constant(-1.0).unwrap(), &Mask::full());
        assert!(full.pixels().iter().all(|&p| p == 0.0));
        let none = linear_interp_fill(&truth, &Mask::empty());
        assert_eq!(none, truth);
    }

    #[test]
    fn identity_model_error() {
        let truth = ImageGray::from_fn(|r, c| ((r * 3 + c) % 11) as f32 / 11.0 - 0.5).unwrap();
        let mask = Mask::from_columns(&[20..50]);
        let s = make_sample(truth.clone(), mask.clone());
        let energy: f64 = (0..IMAGE_SIZE)
            .flat_map(|r| (20..50).map(move |c| (r, c)))
            .map(|(r, c)| (truth.get(r, c) as f64 + 1.0).powi(2))
            .sum::<f64>()
            / (IMAGE_SIZE * IMAGE_SIZE) as f64;
        let report = evaluate_with(&[("x".into(), s)], |s| Ok(s.gapped.clone()), &mut no_clock()).unwrap();
        assert!((report.images[0].mse_model - energy).abs() < 1e-9);
        assert!(report.t_model_s > 0.0 && report.t_baseline_s > 0.0);
    }

    #[test]
    fn perfect_model_wins() {
        let truth = ImageGray::from_fn(|r, c| ((r * c) % 7) as f32 / 7.0).unwrap();
        let s = make_sample(truth, Mask::from_columns(&[30..60]));
        let report = evaluate_with(&[("p".into(), s)], |s| Ok(s.truth.clone()), &mut no_clock()).unwrap();
        assert_eq!(report.mean_mse_model, 0.0);
        assert!(report.model_beats_baseline);
        assert!(evaluate_with(&[], |s| Ok(s.truth.clone()), &mut no_clock()).is_err());
    }
}
