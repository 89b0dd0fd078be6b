//! Resampling primitives shared by the tensor upsample op, the classical
//! fusion baselines and the Wald-protocol degradation pipeline.
//!
//! All interpolation weights are computed in f64 and normalized per output
//! sample so that a constant input maps to the same constant bit-exactly
//! after the final rounding to f32.

use crate::raster::RasterImage;
use crate::tensor::UpsampleMode;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ResampleError {
    #[error("dimensions {h}x{w} are not divisible by ratio {ratio}")]
    NotDivisible { h: usize, w: usize, ratio: usize },
    #[error("ratio must be >= 1, got {0}")]
    BadRatio(usize),
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
}

/// Source indices and normalized f64 weights contributing to one output
/// sample along one axis.
#[derive(Clone, Debug)]
pub struct AxisTap {
    pub idx: Vec<usize>,
    pub w: Vec<f64>,
}

/// Catmull-Rom cubic kernel (a = -0.5).
fn cubic_kernel(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Per-output-sample taps for integer-factor upsampling with half-pixel
/// centres: source coordinate of output `o` is `(o + 0.5)/scale - 0.5`.
/// Border indices are clamped (edge replication); weights are renormalized to
/// sum to 1 in f64.
pub fn axis_taps(in_size: usize, scale: usize, mode: UpsampleMode) -> Vec<AxisTap> {
    let out_size = in_size * scale;
    let mut taps = Vec::with_capacity(out_size);
    for o in 0..out_size {
        let src = (o as f64 + 0.5) / scale as f64 - 0.5;
        let base = src.floor();
        let f = src - base;
        let b = base as isize;
        let (mut idx, mut w): (Vec<usize>, Vec<f64>) = match mode {
            UpsampleMode::Bilinear => {
                let i0 = b.clamp(0, in_size as isize - 1) as usize;
                let i1 = (b + 1).clamp(0, in_size as isize - 1) as usize;
                (vec![i0, i1], vec![1.0 - f, f])
            }
            UpsampleMode::Bicubic => {
                let mut idx = Vec::with_capacity(4);
                let mut w = Vec::with_capacity(4);
                for k in -1..=2isize {
                    idx.push((b + k).clamp(0, in_size as isize - 1) as usize);
                    w.push(cubic_kernel(f - k as f64));
                }
                (idx, w)
            }
        };
        let sum: f64 = w.iter().sum();
        for v in w.iter_mut() {
            *v /= sum;
        }
        // Merge duplicate clamped indices so backward scatter stays simple.
        let mut m_idx: Vec<usize> = Vec::with_capacity(idx.len());
        let mut m_w: Vec<f64> = Vec::with_capacity(w.len());
        for (i, wv) in idx.drain(..).zip(w.drain(..)) {
            if let Some(pos) = m_idx.iter().position(|&x| x == i) {
                m_w[pos] += wv;
            } else {
                m_idx.push(i);
                m_w.push(wv);
            }
        }
        taps.push(AxisTap { idx: m_idx, w: m_w });
    }
    taps
}

/// Integer-factor upsampling of a raster, all bands.
pub fn upsample_raster(img: &RasterImage, scale: usize, mode: UpsampleMode) -> Result<RasterImage, ResampleError> {
    if scale == 0 {
        return Err(ResampleError::BadRatio(scale));
    }
    let taps_y = axis_taps(img.h, scale, mode);
    let taps_x = axis_taps(img.w, scale, mode);
    let (oh, ow) = (img.h * scale, img.w * scale);
    let mut out = RasterImage::zeros(img.bands, oh, ow);
    for b in 0..img.bands {
        let src = img.band(b);
        let dst = out.band_mut(b);
        for (oy, ty) in taps_y.iter().enumerate() {
            for (ox, tx) in taps_x.iter().enumerate() {
                let mut acc = 0.0f64;
                for (iy, wy) in ty.idx.iter().zip(ty.w.iter()) {
                    for (ix, wx) in tx.idx.iter().zip(tx.w.iter()) {
                        acc += src[iy * img.w + ix] as f64 * wy * wx;
                    }
                }
                dst[oy * ow + ox] = acc as f32;
            }
        }
    }
    Ok(out)
}

/// Normalized 1-D Gaussian taps with radius `ceil(3*sigma)`.
fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps = Vec::with_capacity((2 * radius + 1) as usize);
    let inv = 1.0 / (2.0 * sigma * sigma);
    for k in -radius..=radius {
        taps.push((-(k * k) as f64 * inv).exp());
    }
    let sum: f64 = taps.iter().sum();
    for t in taps.iter_mut() {
        *t /= sum;
    }
    taps
}

/// Separable Gaussian blur with edge replication, f64 accumulation.
pub fn gaussian_blur(img: &RasterImage, sigma: f64) -> Result<RasterImage, ResampleError> {
    if !(sigma > 0.0) {
        return Err(ResampleError::BadSigma(sigma));
    }
    let taps = gaussian_taps(sigma);
    let radius = (taps.len() / 2) as isize;
    let (h, w) = (img.h, img.w);
    let mut out = RasterImage::zeros(img.bands, h, w);
    let mut tmp = vec![0.0f64; h * w];
    for b in 0..img.bands {
        let src = img.band(b);
        // Horizontal pass into f64 scratch.
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for (j, t) in taps.iter().enumerate() {
                    let xx = (x as isize + j as isize - radius).clamp(0, w as isize - 1) as usize;
                    acc += src[y * w + xx] as f64 * t;
                }
                tmp[y * w + x] = acc;
            }
        }
        // Vertical pass.
        let dst = out.band_mut(b);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for (j, t) in taps.iter().enumerate() {
                    let yy = (y as isize + j as isize - radius).clamp(0, h as isize - 1) as usize;
                    acc += tmp[yy * w + x] * t;
                }
                dst[y * w + x] = acc as f32;
            }
        }
    }
    Ok(out)
}

/// Wald-protocol degradation: Gaussian blur with the given sigma followed by
/// top-left-aligned decimation by `ratio`. Dimensions must divide evenly.
/// `sigma == 0` degenerates to the identity kernel (decimation only), the
/// limit of the Gaussian as its width shrinks below one sample.
pub fn wald_degrade(img: &RasterImage, ratio: usize, sigma: f64) -> Result<RasterImage, ResampleError> {
    if ratio == 0 {
        return Err(ResampleError::BadRatio(ratio));
    }
    if sigma < 0.0 {
        return Err(ResampleError::BadSigma(sigma));
    }
    if img.h % ratio != 0 || img.w % ratio != 0 {
        return Err(ResampleError::NotDivisible { h: img.h, w: img.w, ratio });
    }
    let blurred = if sigma > 0.0 { gaussian_blur(img, sigma)? } else { img.clone() };
    let (oh, ow) = (img.h / ratio, img.w / ratio);
    let mut out = RasterImage::zeros(img.bands, oh, ow);
    for b in 0..img.bands {
        let src = blurred.band(b);
        let dst = out.band_mut(b);
        for y in 0..oh {
            for x in 0..ow {
                dst[y * ow + x] = src[(y * ratio) * img.w + x * ratio];
            }
        }
    }
    Ok(out)
}

/// Box filter (uniform mean over a `(2r+1)^2` window) with edge replication,
/// separable, f64 accumulation.
pub fn box_filter(img: &RasterImage, radius: usize) -> RasterImage {
    let (h, w) = (img.h, img.w);
    let r = radius as isize;
    let k = (2 * radius + 1) as f64;
    let mut out = RasterImage::zeros(img.bands, h, w);
    let mut tmp = vec![0.0f64; h * w];
    for b in 0..img.bands {
        let src = img.band(b);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for j in -r..=r {
                    let xx = (x as isize + j).clamp(0, w as isize - 1) as usize;
                    acc += src[y * w + xx] as f64;
                }
                tmp[y * w + x] = acc / k;
            }
        }
        let dst = out.band_mut(b);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for j in -r..=r {
                    let yy = (y as isize + j).clamp(0, h as isize - 1) as usize;
                    acc += tmp[yy * w + x];
                }
                dst[y * w + x] = (acc / k) as f32;
            }
        }
    }
    out
}
