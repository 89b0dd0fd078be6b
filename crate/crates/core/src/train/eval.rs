//! Evaluation of fusion methods on dataset test splits.
//!
//! Everything that turns `(lrms, pan)` into a sharpened image — the learned
//! model, the classical baselines, plain bicubic upsampling — implements
//! [`Fuser`], so reduced- and full-resolution protocols treat them uniformly.

use super::TrainError;
use crate::classical;
use crate::metrics::{FullResReport, ReducedResReport};
use crate::model::PanTinyModel;
use crate::raster::RasterImage;
use crate::resample::{upsample_raster, wald_degrade};
use crate::synth::Dataset;
use crate::tensor::UpsampleMode;

/// A pan-sharpening method under evaluation.
pub trait Fuser {
    /// Short identifier used in report rows.
    fn name(&self) -> &str;
    /// Fuse one `(lrms, pan)` pair into a sharpened multispectral image at
    /// PAN resolution. Implementations must not assume a fixed input size.
    fn fuse(&self, lrms: &RasterImage, pan: &RasterImage) -> Result<RasterImage, TrainError>;
}

/// The learned model as a fuser. Holds a frozen copy so evaluation never
/// builds autodiff graphs.
pub struct ModelFuser {
    model: PanTinyModel,
    name: String,
}

impl ModelFuser {
    pub fn new(model: &PanTinyModel, name: impl Into<String>) -> Self {
        ModelFuser { model: model.frozen(), name: name.into() }
    }
}

impl Fuser for ModelFuser {
    fn name(&self) -> &str {
        &self.name
    }

    fn fuse(&self, lrms: &RasterImage, pan: &RasterImage) -> Result<RasterImage, TrainError> {
        let out = self.model.forward(&lrms.to_tensor(), &pan.to_tensor())?;
        Ok(RasterImage::from_tensor(&out).remove(0))
    }
}

/// Bicubic upsampling of the LRMS with the PAN ignored: the comparison floor
/// every fusion method must beat.
pub struct BicubicFuser;

impl Fuser for BicubicFuser {
    fn name(&self) -> &str {
        "bicubic"
    }

    fn fuse(&self, lrms: &RasterImage, pan: &RasterImage) -> Result<RasterImage, TrainError> {
        let ratio = classical::validate_fusion_input(lrms, pan)?;
        Ok(upsample_raster(lrms, ratio, UpsampleMode::Bicubic)?)
    }
}

/// The classical fusion baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassicalKind {
    Brovey,
    Ihs,
    Sfim,
    Gs,
}

impl ClassicalKind {
    pub const ALL: [ClassicalKind; 4] =
        [ClassicalKind::Brovey, ClassicalKind::Ihs, ClassicalKind::Sfim, ClassicalKind::Gs];

    pub fn as_str(&self) -> &'static str {
        match self {
            ClassicalKind::Brovey => "brovey",
            ClassicalKind::Ihs => "ihs",
            ClassicalKind::Sfim => "sfim",
            ClassicalKind::Gs => "gs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

pub struct ClassicalFuser(pub ClassicalKind);

impl Fuser for ClassicalFuser {
    fn name(&self) -> &str {
        self.0.as_str()
    }

    fn fuse(&self, lrms: &RasterImage, pan: &RasterImage) -> Result<RasterImage, TrainError> {
        let out = match self.0 {
            ClassicalKind::Brovey => classical::brovey(lrms, pan)?,
            ClassicalKind::Ihs => classical::ihs(lrms, pan)?,
            ClassicalKind::Sfim => classical::sfim(lrms, pan)?,
            ClassicalKind::Gs => classical::gs(lrms, pan)?,
        };
        Ok(out)
    }
}

/// Reduced-resolution evaluation: fuse every test sample, clamp to `[0,1]`,
/// score against the stored HRMS reference, and average each metric over the
/// split (in f64). An infinite PSNR (perfect reconstruction) propagates to an
/// infinite mean, by design.
pub fn evaluate(fuser: &dyn Fuser, dataset: &Dataset) -> Result<ReducedResReport, TrainError> {
    let test = &dataset.test;
    if test.is_empty() {
        return Err(TrainError::Config(format!(
            "dataset `{}` has no test samples to evaluate",
            dataset.manifest.spec.name
        )));
    }
    let ratio = dataset.manifest.spec.ratio as f32;
    let (mut psnr, mut ssim, mut sam, mut ergas) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for pair in test {
        let mut fused = fuser.fuse(&pair.lrms, &pair.pan)?;
        fused.clamp(0.0, 1.0);
        let rep = ReducedResReport::compute(&fused, &pair.hrms, ratio)?;
        psnr += rep.psnr as f64;
        ssim += rep.ssim as f64;
        sam += rep.sam as f64;
        ergas += rep.ergas as f64;
    }
    let n = test.len() as f64;
    Ok(ReducedResReport {
        psnr: (psnr / n) as f32,
        ssim: (ssim / n) as f32,
        sam: (sam / n) as f32,
        ergas: (ergas / n) as f32,
    })
}

/// Full-resolution evaluation: fuse the native `(lrms, pan)` pairs with no
/// reference and average the no-reference protocol (D_lambda, D_s, QNR) over
/// the split. The spatial term compares against the PAN degraded by the
/// domain's own Wald filter.
pub fn evaluate_full_res(fuser: &dyn Fuser, dataset: &Dataset) -> Result<FullResReport, TrainError> {
    let test = &dataset.test;
    if test.is_empty() {
        return Err(TrainError::Config(format!(
            "dataset `{}` has no test samples to evaluate",
            dataset.manifest.spec.name
        )));
    }
    let spec = &dataset.manifest.spec;
    let (mut dl, mut ds, mut qnr) = (0.0f64, 0.0f64, 0.0f64);
    for pair in test {
        let mut fused = fuser.fuse(&pair.lrms, &pair.pan)?;
        fused.clamp(0.0, 1.0);
        let pan_degraded = wald_degrade(&pair.pan, spec.ratio, spec.blur_sigma as f64)?;
        let rep = FullResReport::compute(&fused, &pair.pan, &pair.lrms, &pan_degraded)?;
        dl += rep.d_lambda as f64;
        ds += rep.d_s as f64;
        qnr += rep.qnr as f64;
    }
    let n = test.len() as f64;
    Ok(FullResReport {
        d_lambda: (dl / n) as f32,
        d_s: (ds / n) as f32,
        qnr: (qnr / n) as f32,
    })
}
