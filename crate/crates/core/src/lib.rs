//! Pan-sharpening engine with a self-contained rank-4 tensor autodiff core.
//!
//! The crate provides:
//! - [`tensor`]: a small f32 tensor engine with reverse-mode autodiff,
//!   sized for image-restoration models (rank-4 `(B, C, H, W)` layouts).
//! - [`model`]: the PanTiny channel-attention transformer for fusing a
//!   low-resolution multispectral image with a high-resolution panchromatic
//!   image.
//! - [`loss`]: Charbonnier + SSIM + focal composite training loss.
//! - [`metrics`]: reduced- and full-resolution quality metrics
//!   (PSNR/SSIM/SAM/ERGAS and D_lambda/D_s/QNR).
//! - [`classical`]: Brovey / IHS / SFIM / Gram-Schmidt baselines.
//! - [`synth`]: deterministic synthetic multi-domain dataset generation with
//!   Wald-protocol degradation.
//! - [`train`]: Adam + cosine schedule training, evaluation harness, loss
//!   sweeps and cross-domain studies.
//! - [`raster`]: flat raster container with binary (`PTRS`) and PGM I/O.

pub mod classical;
pub mod fastmath;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod resample;
pub mod synth;
pub mod tensor;
pub mod train;

pub use raster::RasterImage;
pub use tensor::{Shape, Tensor};
