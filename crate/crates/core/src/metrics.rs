//! Image quality metrics: reference metrics for reduced-resolution evaluation
//! (PSNR, SSIM, SAM, ERGAS) and the no-reference full-resolution protocol
//! (D_lambda, D_s, QNR) built on the universal image quality index Q.
//!
//! All metrics accumulate in f64 and return f32. They are pure functions of
//! [`RasterImage`] values and never touch the autodiff graph.

use crate::loss::{self, LossError, LossWeights};
use crate::raster::RasterImage;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{op}: image dimensions {a:?} vs {b:?} do not match")]
    DimensionMismatch { op: &'static str, a: (usize, usize, usize), b: (usize, usize, usize) },
    #[error("{op}: needs at least {need} bands, got {got}")]
    NotEnoughBands { op: &'static str, need: usize, got: usize },
    #[error("ergas: target band {band} has zero mean")]
    DegenerateBand { band: usize },
    #[error("q_index: image {h}x{w} is smaller than one {block}x{block} block")]
    ImageSmallerThanBlock { h: usize, w: usize, block: usize },
    #[error("{op}: high-res {hi}x{hi_w} is not an integer multiple of low-res {lo}x{lo_w}")]
    NotAnIntegerRatio { op: &'static str, hi: usize, hi_w: usize, lo: usize, lo_w: usize },
    #[error("{op}: block size {block} is not divisible by the resolution ratio {ratio}")]
    BlockRatioMismatch { op: &'static str, block: usize, ratio: usize },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error(transparent)]
    Loss(#[from] LossError),
}

fn dims(img: &RasterImage) -> (usize, usize, usize) {
    (img.bands, img.h, img.w)
}

fn check_same_dims(op: &'static str, a: &RasterImage, b: &RasterImage) -> Result<(), MetricsError> {
    if dims(a) != dims(b) {
        return Err(MetricsError::DimensionMismatch { op, a: dims(a), b: dims(b) });
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB: `10*log10(max_val^2 / MSE)` with the MSE
/// taken over every band and pixel. Identical images return `+inf`.
pub fn psnr(output: &RasterImage, target: &RasterImage, max_val: f32) -> Result<f32, MetricsError> {
    check_same_dims("psnr", output, target)?;
    if !(max_val > 0.0) {
        return Err(MetricsError::Invalid {
            op: "psnr",
            msg: format!("max_val must be > 0, got {max_val}"),
        });
    }
    let mut sum = 0.0f64;
    for (&o, &g) in output.data.iter().zip(target.data.iter()) {
        let d = f64::from(o) - f64::from(g);
        sum += d * d;
    }
    let mse = sum / output.data.len() as f64;
    if mse == 0.0 {
        return Ok(f32::INFINITY);
    }
    let m = f64::from(max_val);
    Ok((10.0 * ((m * m) / mse).log10()) as f32)
}

/// Mean SSIM over all channels and valid 11x11 window positions (the standard
/// reference configuration, shared with the SSIM loss term).
pub fn ssim(output: &RasterImage, target: &RasterImage) -> Result<f32, MetricsError> {
    check_same_dims("ssim", output, target)?;
    let w = LossWeights::default();
    let map = loss::ssim_map(&output.to_tensor(), &target.to_tensor(), &w)?;
    Ok(map.mean_all().item().expect("mean is scalar"))
}

/// Mean spectral angle in radians: per pixel, the angle between the C-band
/// spectral vectors of `output` and `target`. The cosine is clamped to
/// `[-1, 1]`; pixels where either spectrum has norm below 1e-12 contribute 0.
pub fn sam(output: &RasterImage, target: &RasterImage) -> Result<f32, MetricsError> {
    check_same_dims("sam", output, target)?;
    if output.bands < 2 {
        return Err(MetricsError::NotEnoughBands { op: "sam", need: 2, got: output.bands });
    }
    let plane = output.plane();
    let mut sum = 0.0f64;
    for p in 0..plane {
        let (mut dot, mut na2, mut nb2) = (0.0f64, 0.0f64, 0.0f64);
        for b in 0..output.bands {
            let o = f64::from(output.data[b * plane + p]);
            let g = f64::from(target.data[b * plane + p]);
            dot += o * g;
            na2 += o * o;
            nb2 += g * g;
        }
        // norm < 1e-12  <=>  squared norm < 1e-24
        if na2 < 1e-24 || nb2 < 1e-24 {
            continue;
        }
        // cos^2 = dot^2/(na2*nb2) avoids the sqrt-product roundoff that would
        // keep identical or scaled spectra from hitting cos = 1 exactly.
        let cos = dot.signum() * ((dot * dot) / (na2 * nb2)).min(1.0).sqrt();
        sum += cos.acos();
    }
    Ok((sum / plane as f64) as f32)
}

/// ERGAS: `100 * ratio * sqrt(mean_b((RMSE_b / mu_b)^2))` where `mu_b` is the
/// mean of target band `b` and `ratio` is the resolution ratio (default 1/4).
pub fn ergas(output: &RasterImage, target: &RasterImage, ratio: f32) -> Result<f32, MetricsError> {
    check_same_dims("ergas", output, target)?;
    if !(ratio > 0.0) {
        return Err(MetricsError::Invalid {
            op: "ergas",
            msg: format!("ratio must be > 0, got {ratio}"),
        });
    }
    let plane = output.plane();
    let mut acc = 0.0f64;
    for b in 0..output.bands {
        let ob = output.band(b);
        let gb = target.band(b);
        let mu: f64 = gb.iter().map(|&v| f64::from(v)).sum::<f64>() / plane as f64;
        if mu == 0.0 {
            return Err(MetricsError::DegenerateBand { band: b });
        }
        let mse: f64 = ob
            .iter()
            .zip(gb.iter())
            .map(|(&o, &g)| {
                let d = f64::from(o) - f64::from(g);
                d * d
            })
            .sum::<f64>()
            / plane as f64;
        let rel = mse.sqrt() / mu;
        acc += rel * rel;
    }
    Ok((100.0 * f64::from(ratio) * (acc / output.bands as f64).sqrt()) as f32)
}

/// Universal image quality index between two single-band planes, computed over
/// non-overlapping `block`-sized blocks and averaged. Per block,
/// `Q = 4*cov*mu_a*mu_b / ((var_a+var_b)(mu_a^2+mu_b^2))`; blocks with a zero
/// denominator are skipped. If every block is degenerate (e.g. both images
/// constant), returns 1 when the planes are equal and 0 otherwise. Edge
/// remainders when the dimensions are not block multiples are ignored.
pub fn q_index(a: &[f32], b: &[f32], h: usize, w: usize, block: usize) -> Result<f32, MetricsError> {
    if a.len() != h * w || b.len() != h * w {
        return Err(MetricsError::Invalid {
            op: "q_index",
            msg: format!("plane length {} / {} does not match {h}x{w}", a.len(), b.len()),
        });
    }
    if block == 0 || h < block || w < block {
        return Err(MetricsError::ImageSmallerThanBlock { h, w, block });
    }
    let mut acc = 0.0f64;
    let mut counted = 0usize;
    for by in 0..h / block {
        for bx in 0..w / block {
            let n = (block * block) as f64;
            let (mut sa, mut sb) = (0.0f64, 0.0f64);
            for y in 0..block {
                let row = (by * block + y) * w + bx * block;
                for x in 0..block {
                    sa += f64::from(a[row + x]);
                    sb += f64::from(b[row + x]);
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            // Second, centered pass for the (co)variances.
            let (mut vaa, mut vbb, mut vab) = (0.0f64, 0.0f64, 0.0f64);
            for y in 0..block {
                let row = (by * block + y) * w + bx * block;
                for x in 0..block {
                    let da = f64::from(a[row + x]) - ma;
                    let db = f64::from(b[row + x]) - mb;
                    vaa += da * da;
                    vbb += db * db;
                    vab += da * db;
                }
            }
            let (vaa, vbb, vab) = (vaa / n, vbb / n, vab / n);
            let den = (vaa + vbb) * (ma * ma + mb * mb);
            if den == 0.0 {
                continue;
            }
            acc += (4.0 * vab * ma * mb) / den;
            counted += 1;
        }
    }
    if counted == 0 {
        return Ok(if a == b { 1.0 } else { 0.0 });
    }
    Ok((acc / counted as f64) as f32)
}

/// Block size of the Q-index at full (PAN) resolution in the QNR protocol.
pub const QNR_BLOCK: usize = 32;

fn infer_ratio(
    op: &'static str,
    hi: &RasterImage,
    lo: &RasterImage,
    block: usize,
) -> Result<(usize, usize), MetricsError> {
    if lo.h == 0 || lo.w == 0 || hi.h % lo.h != 0 || hi.w % lo.w != 0 || hi.h / lo.h != hi.w / lo.w {
        return Err(MetricsError::NotAnIntegerRatio {
            op,
            hi: hi.h,
            hi_w: hi.w,
            lo: lo.h,
            lo_w: lo.w,
        });
    }
    let ratio = hi.h / lo.h;
    if block % ratio != 0 {
        return Err(MetricsError::BlockRatioMismatch { op, block, ratio });
    }
    Ok((ratio, block / ratio))
}

/// Spectral distortion index: mean absolute change, from the low-resolution MS
/// image to the fused image, of the pairwise inter-band Q-index. The Q-index
/// block scales with resolution (`block` at fused scale, `block/ratio` at MS
/// scale). Clamped to `[0, 1]`.
pub fn d_lambda(fused: &RasterImage, lrms: &RasterImage, block: usize) -> Result<f32, MetricsError> {
    if fused.bands != lrms.bands {
        return Err(MetricsError::DimensionMismatch {
            op: "d_lambda",
            a: dims(fused),
            b: dims(lrms),
        });
    }
    let c = fused.bands;
    if c < 2 {
        return Err(MetricsError::NotEnoughBands { op: "d_lambda", need: 2, got: c });
    }
    let (_, lo_block) = infer_ratio("d_lambda", fused, lrms, block)?;
    let mut acc = 0.0f64;
    for i in 0..c {
        for j in 0..c {
            if i == j {
                continue;
            }
            let qf = q_index(fused.band(i), fused.band(j), fused.h, fused.w, block)?;
            let qm = q_index(lrms.band(i), lrms.band(j), lrms.h, lrms.w, lo_block)?;
            acc += (f64::from(qf) - f64::from(qm)).abs();
        }
    }
    Ok(((acc / (c * (c - 1)) as f64) as f32).clamp(0.0, 1.0))
}

/// Spatial distortion index: mean absolute difference between each fused
/// band's Q-index against the PAN image and the corresponding low-resolution
/// band's Q-index against the degraded PAN. Clamped to `[0, 1]`.
pub fn d_s(
    fused: &RasterImage,
    pan: &RasterImage,
    lrms: &RasterImage,
    pan_degraded: &RasterImage,
    block: usize,
) -> Result<f32, MetricsError> {
    if pan.bands != 1 || pan_degraded.bands != 1 {
        return Err(MetricsError::Invalid {
            op: "d_s",
            msg: format!(
                "pan images must be single-band, got {} and {}",
                pan.bands, pan_degraded.bands
            ),
        });
    }
    if (pan.h, pan.w) != (fused.h, fused.w) {
        return Err(MetricsError::DimensionMismatch { op: "d_s", a: dims(fused), b: dims(pan) });
    }
    if (pan_degraded.h, pan_degraded.w) != (lrms.h, lrms.w) {
        return Err(MetricsError::DimensionMismatch {
            op: "d_s",
            a: dims(lrms),
            b: dims(pan_degraded),
        });
    }
    if fused.bands != lrms.bands {
        return Err(MetricsError::DimensionMismatch { op: "d_s", a: dims(fused), b: dims(lrms) });
    }
    let (_, lo_block) = infer_ratio("d_s", fused, lrms, block)?;
    let c = fused.bands;
    let mut acc = 0.0f64;
    for b in 0..c {
        let qf = q_index(fused.band(b), pan.band(0), fused.h, fused.w, block)?;
        let qm = q_index(lrms.band(b), pan_degraded.band(0), lrms.h, lrms.w, lo_block)?;
        acc += (f64::from(qf) - f64::from(qm)).abs();
    }
    Ok(((acc / c as f64) as f32).clamp(0.0, 1.0))
}

/// Quality with no reference: `(1 - d_lambda)^alpha * (1 - d_s)^beta`.
pub fn qnr(d_lambda: f32, d_s: f32, alpha: f32, beta: f32) -> f32 {
    let a = (1.0 - f64::from(d_lambda)).max(0.0);
    let b = (1.0 - f64::from(d_s)).max(0.0);
    (a.powf(f64::from(alpha)) * b.powf(f64::from(beta))) as f32
}

/// Reference metrics for reduced-resolution evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedResReport {
    pub psnr: f32,
    pub ssim: f32,
    pub sam: f32,
    pub ergas: f32,
}

impl ReducedResReport {
    pub const CSV_HEADER: &'static str = "dataset,model,psnr,ssim,sam,ergas";

    /// Compute all four reference metrics of `output` against `target`.
    pub fn compute(
        output: &RasterImage,
        target: &RasterImage,
        ratio: f32,
    ) -> Result<Self, MetricsError> {
        Ok(ReducedResReport {
            psnr: psnr(output, target, 1.0)?,
            ssim: ssim(output, target)?,
            sam: sam(output, target)?,
            ergas: ergas(output, target, ratio)?,
        })
    }

    /// The metric fields as a CSV fragment with 4 decimal places.
    pub fn csv_fields(&self) -> String {
        format!("{:.4},{:.4},{:.4},{:.4}", self.psnr, self.ssim, self.sam, self.ergas)
    }
}

/// No-reference metrics for full-resolution evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullResReport {
    pub d_lambda: f32,
    pub d_s: f32,
    pub qnr: f32,
}

impl FullResReport {
    pub const CSV_HEADER: &'static str = "dataset,model,d_lambda,d_s,qnr";

    /// Compute the QNR protocol with default exponents alpha = beta = 1 and
    /// Q-index block 32 at PAN resolution.
    pub fn compute(
        fused: &RasterImage,
        pan: &RasterImage,
        lrms: &RasterImage,
        pan_degraded: &RasterImage,
    ) -> Result<Self, MetricsError> {
        let dl = d_lambda(fused, lrms, QNR_BLOCK)?;
        let ds = d_s(fused, pan, lrms, pan_degraded, QNR_BLOCK)?;
        Ok(FullResReport { d_lambda: dl, d_s: ds, qnr: qnr(dl, ds, 1.0, 1.0) })
    }

    pub fn csv_fields(&self) -> String {
        format!("{:.4},{:.4},{:.4}", self.d_lambda, self.d_s, self.qnr)
    }
}
