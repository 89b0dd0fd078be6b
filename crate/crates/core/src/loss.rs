//! Composite training loss: Charbonnier L1, structural-similarity (SSIM) loss,
//! and a focal regression term, combined as a weighted sum.
//!
//! Each term is a pure function from `(output, target)` to a scalar [`Tensor`]
//! on the autodiff graph, so the composite is differentiable end to end.
//! Terms with a zero weight are skipped entirely — an L1-only configuration
//! never builds the SSIM window convolutions.

use crate::tensor::{Shape, Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("loss weights are all zero; at least one of l1/ssim/focal must be positive")]
    AllZeroWeights,
    #[error("invalid loss configuration: {0}")]
    InvalidConfig(String),
    #[error("image {h}x{w} is smaller than the {window}x{window} SSIM window")]
    ImageSmallerThanWindow { h: usize, w: usize, window: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Weights and term hyper-parameters of the composite loss.
///
/// `l1`, `ssim`, and `focal` scale the three terms; the remaining fields
/// configure the terms themselves. Defaults follow the reference training
/// recipe: weights `(1.5, 4.0, 1.5)`, Charbonnier `eps = 1e-6`, focal exponent
/// `r1 = 1.0` (at which the focal term reduces to mean squared error), and the
/// standard SSIM configuration for data range 1.0 — `C1 = 0.01^2`,
/// `C2 = 0.03^2`, 11x11 Gaussian window with sigma 1.5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub l1: f32,
    pub ssim: f32,
    pub focal: f32,
    /// Focal regression exponent; the term is `255^(r1-1) * mean(|d|^(r1+1))`.
    pub r1: f32,
    /// Charbonnier smoothing constant.
    pub eps: f32,
    /// SSIM luminance stabilizer.
    pub c1: f32,
    /// SSIM contrast stabilizer.
    pub c2: f32,
    /// Side length of the (odd) square SSIM window.
    pub window_size: usize,
    /// Standard deviation of the Gaussian SSIM window.
    pub window_sigma: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            l1: 1.5,
            ssim: 4.0,
            focal: 1.5,
            r1: 1.0,
            eps: 1e-6,
            c1: 1e-4,
            c2: 9e-4,
            window_size: 11,
            window_sigma: 1.5,
        }
    }
}

impl LossWeights {
    /// The L1-only ablation configuration `(1.0, 0, 0)`.
    pub fn l1_only() -> Self {
        LossWeights { l1: 1.0, ssim: 0.0, focal: 0.0, ..LossWeights::default() }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        for (name, v) in [("l1", self.l1), ("ssim", self.ssim), ("focal", self.focal)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(LossError::InvalidConfig(format!(
                    "weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.l1 == 0.0 && self.ssim == 0.0 && self.focal == 0.0 {
            return Err(LossError::AllZeroWeights);
        }
        if !(self.r1 > 0.0) {
            return Err(LossError::InvalidConfig(format!("r1 must be > 0, got {}", self.r1)));
        }
        if !(self.eps > 0.0) {
            return Err(LossError::InvalidConfig(format!("eps must be > 0, got {}", self.eps)));
        }
        if !(self.c1 > 0.0) || !(self.c2 > 0.0) {
            return Err(LossError::InvalidConfig(format!(
                "SSIM stabilizers must be > 0, got c1={} c2={}",
                self.c1, self.c2
            )));
        }
        if self.window_size < 3 || self.window_size % 2 == 0 {
            return Err(LossError::InvalidConfig(format!(
                "window_size must be odd and >= 3, got {}",
                self.window_size
            )));
        }
        if !(self.window_sigma > 0.0) {
            return Err(LossError::InvalidConfig(format!(
                "window_sigma must be > 0, got {}",
                self.window_sigma
            )));
        }
        Ok(())
    }
}

/// Charbonnier loss `mean(sqrt((O-G)^2 + eps^2))` — a smooth L1 variant.
///
/// With identical inputs it returns exactly `eps` (the square/sqrt pair
/// round-trips in f32).
pub fn charbonnier(output: &Tensor, target: &Tensor, eps: f32) -> Result<Tensor, LossError> {
    if !(eps > 0.0) {
        return Err(LossError::InvalidConfig(format!("charbonnier eps must be > 0, got {eps}")));
    }
    let d = output.sub(target)?;
    Ok(d.mul(&d)?.add_scalar(eps * eps).sqrt().mean_all())
}

/// Focal regression loss `mean(((255*d)^r1 / 255) * d)` with `d = |O - G|`,
/// computed in the algebraically identical form `255^(r1-1) * mean(d^(r1+1))`.
/// At `r1 = 1` this is exactly the mean squared error. The absolute value uses
/// subgradient 0 at `d = 0`.
pub fn focal_regression(output: &Tensor, target: &Tensor, r1: f32) -> Result<Tensor, LossError> {
    if !(r1 > 0.0) {
        return Err(LossError::InvalidConfig(format!("r1 must be > 0, got {r1}")));
    }
    let scale = 255f64.powf(r1 as f64 - 1.0) as f32;
    let d = output.sub(target)?.abs();
    Ok(d.powf(r1 + 1.0).mean_all().mul_scalar(scale))
}

/// Normalized 1-D Gaussian window of `size` taps (computed in f64, cast to f32).
fn gaussian_window(size: usize, sigma: f32) -> Vec<f32> {
    let half = (size / 2) as isize;
    let s2 = 2.0 * f64::from(sigma) * f64::from(sigma);
    let raw: Vec<f64> = (-half..=half).map(|i| (-((i * i) as f64) / s2).exp()).collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|v| (v / sum) as f32).collect()
}

/// Depthwise separable blur with the given 1-D taps, valid padding: output
/// spatial dims shrink by `taps.len() - 1` on each axis.
fn window_blur(x: &Tensor, taps: &[f32]) -> Result<Tensor, TensorError> {
    let c = x.shape().c;
    let k = taps.len();
    let horiz = Tensor::from_vec(Shape::new(c, 1, 1, k), taps.repeat(c), false)?;
    let vert = Tensor::from_vec(Shape::new(c, 1, k, 1), taps.repeat(c), false)?;
    x.conv2d(&horiz, None, 1, 0, c)?.conv2d(&vert, None, 1, 0, c)
}

/// Per-pixel SSIM map over all valid window positions, shape
/// `(B, C, H-window+1, W-window+1)`. SSIM is computed per channel; callers
/// average the map for the scalar index. Values lie in `[-1, 1]`.
pub fn ssim_map(output: &Tensor, target: &Tensor, weights: &LossWeights) -> Result<Tensor, LossError> {
    let (so, sg) = (output.shape(), target.shape());
    if so != sg {
        return Err(LossError::Tensor(TensorError::ShapeMismatch { op: "ssim_map", a: so, b: sg }));
    }
    let win = weights.window_size;
    if so.h < win || so.w < win {
        return Err(LossError::ImageSmallerThanWindow { h: so.h, w: so.w, window: win });
    }
    if win < 3 || win % 2 == 0 || !(weights.window_sigma > 0.0) {
        return Err(LossError::InvalidConfig(format!(
            "SSIM window must be odd, >= 3, with sigma > 0; got size {win} sigma {}",
            weights.window_sigma
        )));
    }
    if !(weights.c1 > 0.0) || !(weights.c2 > 0.0) {
        return Err(LossError::InvalidConfig(format!(
            "SSIM stabilizers must be > 0, got c1={} c2={}",
            weights.c1, weights.c2
        )));
    }
    let taps = gaussian_window(win, weights.window_sigma);
    let (c1, c2) = (weights.c1, weights.c2);

    let mu_x = window_blur(output, &taps)?;
    let mu_y = window_blur(target, &taps)?;
    let mu_xx = window_blur(&output.mul(output)?, &taps)?;
    let mu_yy = window_blur(&target.mul(target)?, &taps)?;
    let mu_xy = window_blur(&output.mul(target)?, &taps)?;

    let mu_x2 = mu_x.mul(&mu_x)?;
    let mu_y2 = mu_y.mul(&mu_y)?;
    let mu_x_mu_y = mu_x.mul(&mu_y)?;
    let sigma_x2 = mu_xx.sub(&mu_x2)?;
    let sigma_y2 = mu_yy.sub(&mu_y2)?;
    let sigma_xy = mu_xy.sub(&mu_x_mu_y)?;

    let num = mu_x_mu_y
        .mul_scalar(2.0)
        .add_scalar(c1)
        .mul(&sigma_xy.mul_scalar(2.0).add_scalar(c2))?;
    let den = mu_x2
        .add(&mu_y2)?
        .add_scalar(c1)
        .mul(&sigma_x2.add(&sigma_y2)?.add_scalar(c2))?;
    Ok(num.div(&den)?)
}

/// SSIM loss `1 - mean(ssim_map)`, in `[0, 2]`; exactly 0 for identical inputs.
pub fn ssim_loss(output: &Tensor, target: &Tensor, weights: &LossWeights) -> Result<Tensor, LossError> {
    let mean = ssim_map(output, target, weights)?.mean_all();
    Ok(Tensor::scalar(1.0).sub(&mean)?)
}

/// The composite loss and the (unweighted) values of its terms.
///
/// Terms whose weight is zero are never evaluated and report 0.
pub struct CompositeLoss {
    /// `l1_w * charbonnier + ssim_w * ssim_loss + focal_w * focal`, on the graph.
    pub total: Tensor,
    pub l1: f64,
    pub ssim: f64,
    pub focal: f64,
}

/// Weighted sum of the three loss terms per `weights`.
pub fn composite(output: &Tensor, target: &Tensor, weights: &LossWeights) -> Result<CompositeLoss, LossError> {
    weights.validate()?;
    let mut total: Option<Tensor> = None;
    let add_term = |term: Tensor, w: f32, total: &mut Option<Tensor>| -> Result<f64, LossError> {
        let value = term.item_f64()?;
        let weighted = term.mul_scalar(w);
        *total = Some(match total.take() {
            None => weighted,
            Some(acc) => acc.add(&weighted)?,
        });
        Ok(value)
    };

    let mut l1 = 0.0;
    let mut ssim = 0.0;
    let mut focal = 0.0;
    if weights.l1 > 0.0 {
        l1 = add_term(charbonnier(output, target, weights.eps)?, weights.l1, &mut total)?;
    }
    if weights.ssim > 0.0 {
        ssim = add_term(ssim_loss(output, target, weights)?, weights.ssim, &mut total)?;
    }
    if weights.focal > 0.0 {
        focal = add_term(focal_regression(output, target, weights.r1)?, weights.focal, &mut total)?;
    }
    let total = total.expect("validate() rejects all-zero weights");
    Ok(CompositeLoss { total, l1, ssim, focal })
}
