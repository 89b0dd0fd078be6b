//! Classical pan-sharpening baselines: Brovey, generalized IHS, SFIM, and a
//! Gram-Schmidt (GS) variant.
//!
//! Each method upsamples the low-resolution multispectral image with the same
//! bicubic kernel as the learned pipeline (for comparability), injects PAN
//! detail per its textbook formula, and clips the result to `[0, 1]`. All
//! interior arithmetic is f64; statistics are population statistics.

use crate::raster::RasterImage;
use crate::resample::{box_filter, upsample_raster, ResampleError};
use crate::tensor::UpsampleMode;
use thiserror::Error;

/// Division guard for intensity/smoothed-PAN denominators.
const DIV_EPS: f64 = 1e-6;
/// Variance floor below which GS inputs are considered degenerate.
const VAR_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ClassicalError {
    #[error("fusion input: pan must be single-band, got {0} bands")]
    PanNotSingleBand(usize),
    #[error("fusion input: pan {ph}x{pw} is not an integer multiple of ms {mh}x{mw}")]
    NotAnIntegerRatio { ph: usize, pw: usize, mh: usize, mw: usize },
    #[error("gs: {0} is (near-)constant; variance below 1e-12")]
    DegenerateInput(&'static str),
    #[error(transparent)]
    Resample(#[from] ResampleError),
}

/// Validate a `(lrms, pan)` fusion input pair and return the resolution ratio.
/// Requires a single-band PAN whose dimensions are the same integer multiple
/// of the MS dimensions on both axes.
pub fn validate_fusion_input(
    lrms: &RasterImage,
    pan: &RasterImage,
) -> Result<usize, ClassicalError> {
    if pan.bands != 1 {
        return Err(ClassicalError::PanNotSingleBand(pan.bands));
    }
    let mismatch = ClassicalError::NotAnIntegerRatio {
        ph: pan.h,
        pw: pan.w,
        mh: lrms.h,
        mw: lrms.w,
    };
    if lrms.h == 0 || lrms.w == 0 || pan.h % lrms.h != 0 || pan.w % lrms.w != 0 {
        return Err(mismatch);
    }
    let ratio = pan.h / lrms.h;
    if ratio == 0 || pan.w / lrms.w != ratio {
        return Err(mismatch);
    }
    Ok(ratio)
}

fn upsampled(lrms: &RasterImage, ratio: usize) -> Result<RasterImage, ClassicalError> {
    Ok(upsample_raster(lrms, ratio, UpsampleMode::Bicubic)?)
}

/// Per-pixel band mean of a multispectral image, in f64.
fn intensity(ms: &RasterImage) -> Vec<f64> {
    let plane = ms.plane();
    let mut i = vec![0.0f64; plane];
    for b in 0..ms.bands {
        for (acc, &v) in i.iter_mut().zip(ms.band(b).iter()) {
            *acc += f64::from(v);
        }
    }
    let inv = 1.0 / ms.bands as f64;
    for v in &mut i {
        *v *= inv;
    }
    i
}

fn finish(bands: usize, h: usize, w: usize, data: Vec<f32>) -> RasterImage {
    let mut out = RasterImage::new(bands, h, w, data).expect("constructed with matching length");
    out.clamp(0.0, 1.0);
    out
}

/// Brovey transform: `out_b = MS_b * PAN / max(I, 1e-6)` with `I` the band
/// mean of the upsampled MS image.
pub fn brovey(lrms: &RasterImage, pan: &RasterImage) -> Result<RasterImage, ClassicalError> {
    let ratio = validate_fusion_input(lrms, pan)?;
    let ms = upsampled(lrms, ratio)?;
    let i = intensity(&ms);
    let plane = ms.plane();
    let mut data = vec![0.0f32; ms.bands * plane];
    for b in 0..ms.bands {
        let src = ms.band(b);
        let dst = &mut data[b * plane..(b + 1) * plane];
        for p in 0..plane {
            let gain = f64::from(pan.data[p]) / i[p].max(DIV_EPS);
            dst[p] = (f64::from(src[p]) * gain) as f32;
        }
    }
    Ok(finish(ms.bands, ms.h, ms.w, data))
}

/// Generalized IHS: `out_b = MS_b + (PAN - I)`. The band mean of the
/// (unclipped) output equals PAN at every pixel.
pub fn ihs(lrms: &RasterImage, pan: &RasterImage) -> Result<RasterImage, ClassicalError> {
    let ratio = validate_fusion_input(lrms, pan)?;
    let ms = upsampled(lrms, ratio)?;
    let i = intensity(&ms);
    let plane = ms.plane();
    let mut data = vec![0.0f32; ms.bands * plane];
    for b in 0..ms.bands {
        let src = ms.band(b);
        let dst = &mut data[b * plane..(b + 1) * plane];
        for p in 0..plane {
            dst[p] = (f64::from(src[p]) + (f64::from(pan.data[p]) - i[p])) as f32;
        }
    }
    Ok(finish(ms.bands, ms.h, ms.w, data))
}

/// SFIM (smoothing-filter-based intensity modulation):
/// `out_b = MS_b * PAN / max(PAN_smooth, 1e-6)` where `PAN_smooth` is a box
/// filter of size `2*ratio - 1`.
pub fn sfim(lrms: &RasterImage, pan: &RasterImage) -> Result<RasterImage, ClassicalError> {
    let ratio = validate_fusion_input(lrms, pan)?;
    let ms = upsampled(lrms, ratio)?;
    let smooth = box_filter(pan, ratio - 1);
    let plane = ms.plane();
    let mut data = vec![0.0f32; ms.bands * plane];
    for b in 0..ms.bands {
        let src = ms.band(b);
        let dst = &mut data[b * plane..(b + 1) * plane];
        for p in 0..plane {
            let gain = f64::from(pan.data[p]) / f64::from(smooth.data[p]).max(DIV_EPS);
            dst[p] = (f64::from(src[p]) * gain) as f32;
        }
    }
    Ok(finish(ms.bands, ms.h, ms.w, data))
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Gram-Schmidt variant: per-band injection gains
/// `g_b = cov(MS_b, I) / var(I)` applied to a PAN image mean/std-matched to
/// the intensity `I`. Errors when the intensity or the PAN image is
/// (near-)constant, since the gains/matching are then undefined.
pub fn gs(lrms: &RasterImage, pan: &RasterImage) -> Result<RasterImage, ClassicalError> {
    let ratio = validate_fusion_input(lrms, pan)?;
    let ms = upsampled(lrms, ratio)?;
    let i = intensity(&ms);
    let plane = ms.plane();

    let (mu_i, var_i) = mean_var(&i);
    if var_i < VAR_EPS {
        return Err(ClassicalError::DegenerateInput("ms intensity"));
    }
    let pan64: Vec<f64> = pan.data.iter().map(|&v| f64::from(v)).collect();
    let (mu_p, var_p) = mean_var(&pan64);
    if var_p < VAR_EPS {
        return Err(ClassicalError::DegenerateInput("pan"));
    }
    let scale = (var_i / var_p).sqrt();

    let mut data = vec![0.0f32; ms.bands * plane];
    for b in 0..ms.bands {
        let src = ms.band(b);
        let mu_b = src.iter().map(|&v| f64::from(v)).sum::<f64>() / plane as f64;
        let cov: f64 = src
            .iter()
            .zip(i.iter())
            .map(|(&v, &iv)| (f64::from(v) - mu_b) * (iv - mu_i))
            .sum::<f64>()
            / plane as f64;
        let gain = cov / var_i;
        let dst = &mut data[b * plane..(b + 1) * plane];
        for p in 0..plane {
            let matched = (pan64[p] - mu_p) * scale + mu_i;
            dst[p] = (f64::from(src[p]) + gain * (matched - i[p])) as f32;
        }
    }
    Ok(finish(ms.bands, ms.h, ms.w, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{random_tensor, Shape};

    fn random_image(bands: usize, h: usize, w: usize, seed: u64) -> RasterImage {
        let t = random_tensor(Shape::new(1, bands, h, w), seed);
        let data = t.data().iter().map(|v| 0.5 + 0.45 * v).collect();
        RasterImage::new(bands, h, w, data).unwrap()
    }

    /// The upsampled MS image exactly as the classical methods see it,
    /// clipped the way their outputs are.
    fn clipped_ms_up(lrms: &RasterImage, ratio: usize) -> RasterImage {
        let mut ms = upsample_raster(lrms, ratio, UpsampleMode::Bicubic).unwrap();
        ms.clamp(0.0, 1.0);
        ms
    }

    fn intensity_image(ms: &RasterImage) -> RasterImage {
        let i = intensity(ms);
        RasterImage::new(1, ms.h, ms.w, i.iter().map(|&v| v as f32).collect()).unwrap()
    }

    fn max_abs_diff(a: &RasterImage, b: &RasterImage) -> f32 {
        a.data
            .iter()
            .zip(b.data.iter())
            .map(|(&x, &y)| (x - y).abs())
            .fold(0.0, f32::max)
    }

    #[test]
    fn brovey_is_identity_when_pan_equals_intensity() {
        let lrms = random_image(4, 8, 8, 1);
        let ms = upsample_raster(&lrms, 4, UpsampleMode::Bicubic).unwrap();
        let pan = intensity_image(&ms);
        let out = brovey(&lrms, &pan).unwrap();
        assert!(max_abs_diff(&out, &clipped_ms_up(&lrms, 4)) < 1e-6);
    }

    #[test]
    fn brovey_of_zero_ms_is_zero() {
        let lrms = RasterImage::zeros(4, 8, 8);
        let pan = random_image(1, 32, 32, 2);
        let out = brovey(&lrms, &pan).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn brovey_matches_f64_reference() {
        let lrms = random_image(4, 8, 8, 3);
        let pan = random_image(1, 32, 32, 4);
        let out = brovey(&lrms, &pan).unwrap();
        let ms = upsample_raster(&lrms, 4, UpsampleMode::Bicubic).unwrap();
        let i = intensity(&ms);
        let plane = ms.plane();
        for b in 0..4 {
            for p in 0..plane {
                let want = (f64::from(ms.band(b)[p]) * f64::from(pan.data[p]) / i[p].max(1e-6))
                    .clamp(0.0, 1.0);
                let got = f64::from(out.band(b)[p]);
                assert!((got - want).abs() < 1e-6, "band {b} pixel {p}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn ihs_is_identity_when_pan_equals_intensity() {
        let lrms = random_image(4, 8, 8, 5);
        let ms = upsample_raster(&lrms, 4, UpsampleMode::Bicubic).unwrap();
        let pan = intensity_image(&ms);
        let out = ihs(&lrms, &pan).unwrap();
        assert!(max_abs_diff(&out, &clipped_ms_up(&lrms, 4)) < 1e-6);
    }

    #[test]
    fn ihs_band_mean_reproduces_pan() {
        // Inputs engineered so the unclipped output already lies in [0, 1];
        // the per-pixel band mean of the output then equals PAN exactly.
        let lrms = {
            let t = random_tensor(Shape::new(1, 4, 8, 8), 6);
            let data = t.data().iter().map(|v| 0.4 + 0.1 * v).collect();
            RasterImage::new(4, 8, 8, data).unwrap()
        };
        let pan = {
            let t = random_tensor(Shape::new(1, 1, 32, 32), 7);
            let data = t.data().iter().map(|v| 0.4 + 0.05 * v).collect();
            RasterImage::new(1, 32, 32, data).unwrap()
        };
        let out = ihs(&lrms, &pan).unwrap();
        let mean = intensity(&out);
        for (p, (&m, &pv)) in mean.iter().zip(pan.data.iter()).enumerate() {
            assert!((m - f64::from(pv)).abs() < 1e-6, "pixel {p}: {m} vs {pv}");
        }
    }

    #[test]
    fn ihs_matches_f64_reference() {
        let lrms = random_image(4, 8, 8, 8);
        let pan = random_image(1, 32, 32, 9);
        let out = ihs(&lrms, &pan).unwrap();
        let ms = upsample_raster(&lrms, 4, UpsampleMode::Bicubic).unwrap();
        let i = intensity(&ms);
        let plane = ms.plane();
        for b in 0..4 {
            for p in 0..plane {
                let want = (f64::from(ms.band(b)[p]) + f64::from(pan.data[p]) - i[p])
                    .clamp(0.0, 1.0);
                let got = f64::from(out.band(b)[p]);
                assert!((got - want).abs() < 1e-6, "band {b} pixel {p}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn sfim_with_constant_pan_is_identity() {
        let lrms = random_image(4, 8, 8, 10);
        let pan = RasterImage::new(1, 32, 32, vec![0.6; 1024]).unwrap();
        let out = sfim(&lrms, &pan).unwrap();
        assert_eq!(out.data, clipped_ms_up(&lrms, 4).data);
    }

    #[test]
    fn sfim_step_pattern_matches_f64_reference_and_carries_detail() {
        // Constant MS, PAN with a vertical step: the output modulates the MS
        // by the PAN-to-smoothed-PAN ratio around the edge.
        let lrms = RasterImage::new(4, 8, 8, vec![0.5; 256]).unwrap();
        let mut pan = RasterImage::zeros(1, 32, 32);
        for y in 0..32 {
            for x in 0..32 {
                pan.data[y * 32 + x] = if x < 16 { 0.2 } else { 0.8 };
            }
        }
        let out = sfim(&lrms, &pan).unwrap();

        // Independent box filter: naive O(k^2) mean with clamped indices.
        let radius = 3usize;
        let mut reference = vec![0.0f64; 1024];
        for y in 0..32i64 {
            for x in 0..32i64 {
                let mut acc = 0.0f64;
                let mut n = 0.0f64;
                for dy in -(radius as i64)..=radius as i64 {
                    for dx in -(radius as i64)..=radius as i64 {
                        let sy = (y + dy).clamp(0, 31) as usize;
                        let sx = (x + dx).clamp(0, 31) as usize;
                        acc += f64::from(pan.data[sy * 32 + sx]);
                        n += 1.0;
                    }
                }
                reference[(y * 32 + x) as usize] = acc / n;
            }
        }
        for p in 0..1024 {
            let want = (0.5 * f64::from(pan.data[p]) / reference[p].max(1e-6)).clamp(0.0, 1.0);
            let got = f64::from(out.band(0)[p]);
            assert!((got - want).abs() < 1e-6, "pixel {p}: {got} vs {want}");
        }
        let band = out.band(0);
        let spread = band.iter().fold(f32::MIN, |m, &v| m.max(v))
            - band.iter().fold(f32::MAX, |m, &v| m.min(v));
        assert!(spread > 0.1, "edge detail lost: spread {spread}");
    }

    #[test]
    fn gs_is_near_identity_when_pan_equals_intensity() {
        let lrms = random_image(4, 8, 8, 11);
        let ms = upsample_raster(&lrms, 4, UpsampleMode::Bicubic).unwrap();
        let pan = intensity_image(&ms);
        let out = gs(&lrms, &pan).unwrap();
        assert!(max_abs_diff(&out, &clipped_ms_up(&lrms, 4)) < 1e-5);
    }

    #[test]
    fn gs_with_identical_bands_uses_unit_gains() {
        let single = random_image(1, 8, 8, 12);
        let mut data = Vec::new();
        for _ in 0..4 {
            data.extend_from_slice(&single.data);
        }
        let lrms = RasterImage::new(4, 8, 8, data).unwrap();
        let pan = random_image(1, 32, 32, 13);
        let out = gs(&lrms, &pan).unwrap();

        // With identical bands, I = MS_b and every gain is 1:
        // out_b = MS_b + (pan_matched - I).
        let ms = upsample_raster(&lrms, 4, UpsampleMode::Bicubic).unwrap();
        let i = intensity(&ms);
        let (mu_i, var_i) = mean_var(&i);
        let pan64: Vec<f64> = pan.data.iter().map(|&v| f64::from(v)).collect();
        let (mu_p, var_p) = mean_var(&pan64);
        let scale = (var_i / var_p).sqrt();
        for b in 0..4 {
            for p in 0..ms.plane() {
                let matched = (pan64[p] - mu_p) * scale + mu_i;
                let want = (f64::from(ms.band(b)[p]) + (matched - i[p])).clamp(0.0, 1.0);
                let got = f64::from(out.band(b)[p]);
                assert!((got - want).abs() < 1e-6, "band {b} pixel {p}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn gs_matches_f64_reference() {
        let lrms = random_image(4, 8, 8, 14);
        let pan = random_image(1, 32, 32, 15);
        let out = gs(&lrms, &pan).unwrap();
        let ms = upsample_raster(&lrms, 4, UpsampleMode::Bicubic).unwrap();
        let i = intensity(&ms);
        let plane = ms.plane();
        let (mu_i, var_i) = mean_var(&i);
        let pan64: Vec<f64> = pan.data.iter().map(|&v| f64::from(v)).collect();
        let (mu_p, var_p) = mean_var(&pan64);
        let scale = (var_i / var_p).sqrt();
        for b in 0..4 {
            let src = ms.band(b);
            let mu_b = src.iter().map(|&v| f64::from(v)).sum::<f64>() / plane as f64;
            let cov = src
                .iter()
                .zip(i.iter())
                .map(|(&v, &iv)| (f64::from(v) - mu_b) * (iv - mu_i))
                .sum::<f64>()
                / plane as f64;
            let gain = cov / var_i;
            for p in 0..plane {
                let matched = (pan64[p] - mu_p) * scale + mu_i;
                let want =
                    (f64::from(src[p]) + gain * (matched - i[p])).clamp(0.0, 1.0);
                let got = f64::from(out.band(b)[p]);
                assert!((got - want).abs() < 1e-6, "band {b} pixel {p}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn gs_rejects_degenerate_inputs() {
        let constant_ms = RasterImage::new(4, 8, 8, vec![0.5; 256]).unwrap();
        let pan = random_image(1, 32, 32, 16);
        assert!(matches!(
            gs(&constant_ms, &pan),
            Err(ClassicalError::DegenerateInput("ms intensity"))
        ));
        let lrms = random_image(4, 8, 8, 17);
        let constant_pan = RasterImage::new(1, 32, 32, vec![0.5; 1024]).unwrap();
        assert!(matches!(
            gs(&lrms, &constant_pan),
            Err(ClassicalError::DegenerateInput("pan"))
        ));
    }

    #[test]
    fn fusion_input_validation_rejects_bad_shapes() {
        let lrms = random_image(4, 8, 8, 18);
        let two_band_pan = random_image(2, 32, 32, 19);
        assert!(matches!(
            validate_fusion_input(&lrms, &two_band_pan),
            Err(ClassicalError::PanNotSingleBand(2))
        ));
        let ragged = random_image(1, 33, 32, 20);
        assert!(matches!(
            validate_fusion_input(&lrms, &ragged),
            Err(ClassicalError::NotAnIntegerRatio { .. })
        ));
        let anisotropic = random_image(1, 32, 16, 21);
        assert!(matches!(
            validate_fusion_input(&lrms, &anisotropic),
            Err(ClassicalError::NotAnIntegerRatio { .. })
        ));
        let pan = random_image(1, 32, 32, 22);
        assert_eq!(validate_fusion_input(&lrms, &pan).unwrap(), 4);
    }

    #[test]
    fn all_methods_preserve_dims_and_bounds() {
        let lrms = random_image(4, 8, 8, 23);
        let pan = random_image(1, 32, 32, 24);
        for (name, out) in [
            ("brovey", brovey(&lrms, &pan).unwrap()),
            ("ihs", ihs(&lrms, &pan).unwrap()),
            ("sfim", sfim(&lrms, &pan).unwrap()),
            ("gs", gs(&lrms, &pan).unwrap()),
        ] {
            assert_eq!((out.bands, out.h, out.w), (4, 32, 32), "{name}");
            assert!(
                out.data.iter().all(|&v| (0.0..=1.0).contains(&v)),
                "{name} out of bounds"
            );
        }
    }
}
