//! The pan-sharpening network: a lightweight channel-attention transformer
//! operating at PAN resolution.
//!
//! Pipeline: bicubic-upsample the low-res multispectral input, lift it into
//! feature space with a 3x3 conv, run `num_blocks` pre-norm transformer
//! blocks (channel attention + gated feed-forward), inject PAN detail with a
//! fusion head, map back to the output bands with a refinement head, and —
//! with the global residual enabled — add the upsampled input so the network
//! only has to predict the missing high-frequency detail.
//!
//! The refinement head's final conv is zero-initialized, so a freshly built
//! model with the global residual computes exactly the bicubic upsample and
//! optimization starts from that baseline instead of having to first unlearn
//! a random perturbation of it.

mod checkpoint;
mod config;
mod layers;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, load_checkpoint_bytes, save_checkpoint, CheckpointError,
};
pub use config::{FusionKind, ModelConfig, ModelError, RefineKind};
pub use layers::{
    ChannelAttention, Conv, Fusion, Gdfn, LayerNorm, Refine, TransformerBlock, VisitParams,
    LN_EPS,
};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Tensor, TensorError, UpsampleMode};

/// The assembled network. Parameters are enumerated in construction order
/// under stable dotted names; `build` with the same `(config, seed)` always
/// produces bit-identical initial weights.
#[derive(Debug, Clone)]
pub struct PanTinyModel {
    config: ModelConfig,
    encoder: Conv,
    body: Vec<TransformerBlock>,
    fusion: Fusion,
    refine: Refine,
}

impl PanTinyModel {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.channels;
        let hidden = config.expansion_channels();
        let encoder = Conv::new(&mut rng, config.ms_bands, c, 3, 1, 1);
        let body = (0..config.num_blocks)
            .map(|_| TransformerBlock::new(&mut rng, c, config.attn_heads, hidden))
            .collect();
        let fusion = Fusion::new(&mut rng, config.fusion_kind, c, config.attn_heads);
        let refine = Refine::new(&mut rng, config.refine_kind, c, config.attn_heads, config.ms_bands);
        Ok(PanTinyModel { config, encoder, body, fusion, refine })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Sharpen a batch: `lrms` is `(B, bands, h, w)`, `pan` is
    /// `(B, 1, h*r, w*r)`; the output is `(B, bands, h*r, w*r)`. The output
    /// is not clamped; clamp to `[0, 1]` before computing image metrics.
    pub fn forward(&self, lrms: &Tensor, pan: &Tensor) -> Result<Tensor, ModelError> {
        let ls = lrms.shape();
        let ps = pan.shape();
        let r = self.config.upsample_scale;
        if ls.c != self.config.ms_bands {
            return Err(ModelError::BadInput {
                op: "forward",
                want: format!("{} multispectral bands", self.config.ms_bands),
                got: format!("lrms shape {ls}"),
            });
        }
        if ps.b != ls.b || ps.c != 1 || ps.h != ls.h * r || ps.w != ls.w * r {
            return Err(ModelError::BadInput {
                op: "forward",
                want: format!(
                    "pan ({},1,{},{}) for lrms {} at scale {}",
                    ls.b,
                    ls.h * r,
                    ls.w * r,
                    ls,
                    r
                ),
                got: format!("pan shape {ps}"),
            });
        }

        let up = lrms.upsample(r, UpsampleMode::Bicubic)?;
        let mut x = self.encoder.forward(&up)?;
        if self.config.fuse_before_body {
            x = self.fusion.forward(&x, pan)?;
        }
        for block in &self.body {
            x = block.forward(&x)?;
        }
        if !self.config.fuse_before_body {
            x = self.fusion.forward(&x, pan)?;
        }
        let out = self.refine.forward(&x)?;
        if self.config.global_residual {
            Ok(out.add(&up)?)
        } else {
            Ok(out)
        }
    }

    /// Walk all parameters mutably in construction order.
    pub fn visit_params(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.encoder.visit("encoder", f);
        for (i, block) in self.body.iter_mut().enumerate() {
            block.visit(&format!("body.{i}"), f);
        }
        self.fusion.visit("fusion", f);
        self.refine.visit("refine", f);
    }

    /// Snapshot of `(name, tensor)` pairs in construction order. Tensors are
    /// cheap handles sharing storage with the model's own parameters.
    pub fn parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        let mut m = self.clone();
        m.visit_params(&mut |name, t| out.push((name, t.clone())));
        out
    }

    /// Total number of scalar parameters; always equals
    /// `self.config().param_count()`.
    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.shape().numel()).sum()
    }

    /// Replace every parameter with `f(name, current)`. The replacement must
    /// keep the parameter's shape. Used by the optimizer step.
    pub fn update_params(
        &mut self,
        f: &mut dyn FnMut(&str, &Tensor) -> Result<Tensor, TensorError>,
    ) -> Result<(), ModelError> {
        let mut failure: Option<ModelError> = None;
        self.visit_params(&mut |name, t| {
            if failure.is_some() {
                return;
            }
            match f(&name, t) {
                Ok(next) => {
                    if next.shape() != t.shape() {
                        failure = Some(ModelError::BadInput {
                            op: "update_params",
                            want: format!("{} shaped {}", name, t.shape()),
                            got: format!("{}", next.shape()),
                        });
                    } else {
                        *t = next;
                    }
                }
                Err(e) => failure = Some(e.into()),
            }
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Overwrite one parameter's values (shape is kept; `data` must match its
    /// element count). Used by checkpoint loading.
    pub fn set_param(&mut self, name: &str, data: &[f32]) -> Result<(), ModelError> {
        let mut found = false;
        let mut failure: Option<ModelError> = None;
        self.visit_params(&mut |pname, t| {
            if pname == name {
                found = true;
                match Tensor::from_vec(t.shape(), data.to_vec(), true) {
                    Ok(next) => *t = next,
                    Err(e) => failure = Some(e.into()),
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if !found {
            return Err(ModelError::UnknownParameter(name.to_string()));
        }
        Ok(())
    }

    /// A copy whose parameters do not require gradients, so forward passes
    /// build no autodiff graph. Use for evaluation.
    pub fn frozen(&self) -> PanTinyModel {
        let mut m = self.clone();
        m.visit_params(&mut |_, t| *t = t.detach(false));
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{composite, LossWeights};
    use crate::tensor::{grad_check_floored, random_tensor, Shape};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            channels: 8,
            num_blocks: 1,
            attn_heads: 2,
            upsample_scale: 2,
            ..ModelConfig::small()
        }
    }

    /// Random values in [0.25, 0.75]: strictly positive so the bicubic
    /// upsample (whose kernel has negative lobes) stays strictly positive,
    /// keeping bit-exact comparisons free of -0.0 vs +0.0 effects.
    fn image_like(shape: Shape, seed: u64) -> Tensor {
        let raw = random_tensor(shape, seed);
        let data: Vec<f32> = raw.data().iter().map(|v| 0.5 + 0.25 * v).collect();
        Tensor::from_vec(shape, data, false).unwrap()
    }

    #[test]
    fn built_param_count_matches_closed_form() {
        for config in [ModelConfig::small(), ModelConfig::big()] {
            let model = PanTinyModel::build(config, 7).unwrap();
            assert_eq!(model.param_count(), config.param_count());
        }
    }

    #[test]
    fn every_fusion_and_refine_variant_matches_closed_form_and_runs() {
        let lrms = image_like(Shape::new(1, 4, 4, 4), 11);
        let pan = image_like(Shape::new(1, 1, 8, 8), 12);
        for fusion_kind in [
            FusionKind::EnhancedConv,
            FusionKind::Conv1x1,
            FusionKind::ChannelAttn,
            FusionKind::GatedConv,
        ] {
            for refine_kind in [RefineKind::Conv, RefineKind::ChannelAttn, RefineKind::LargeConv] {
                let config = ModelConfig { fusion_kind, refine_kind, ..tiny_config() };
                let model = PanTinyModel::build(config, 3).unwrap();
                assert_eq!(
                    model.param_count(),
                    config.param_count(),
                    "{}/{}",
                    fusion_kind.as_str(),
                    refine_kind.as_str()
                );
                let out = model.forward(&lrms, &pan).unwrap();
                assert_eq!(out.shape(), Shape::new(1, 4, 8, 8));
            }
        }
    }

    #[test]
    fn same_seed_builds_identical_weights_different_seed_does_not() {
        let a = PanTinyModel::build(tiny_config(), 42).unwrap();
        let b = PanTinyModel::build(tiny_config(), 42).unwrap();
        let c = PanTinyModel::build(tiny_config(), 43).unwrap();
        let pa = a.parameters();
        let pb = b.parameters();
        let pc = c.parameters();
        assert_eq!(pa.len(), pb.len());
        let mut some_weight_differs = false;
        for (((na, ta), (nb, tb)), (_, tc)) in pa.iter().zip(&pb).zip(&pc) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data(), "{na}");
            if ta.data() != tc.data() {
                some_weight_differs = true;
            }
        }
        assert!(some_weight_differs);
    }

    #[test]
    fn parameter_names_are_unique_and_stably_ordered() {
        let model = PanTinyModel::build(tiny_config(), 1).unwrap();
        let names: Vec<String> = model.parameters().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        assert_eq!(names[0], "encoder.weight");
        assert!(names.contains(&"body.0.attn.q_dw.weight".to_string()));
        assert!(names.contains(&"body.0.attn.tau".to_string()));
        assert!(names.contains(&"fusion.conv2.bias".to_string()));
        assert_eq!(names.last().unwrap(), "refine.conv.bias");
    }

    #[test]
    fn forward_output_shape_and_batch_follow_inputs() {
        let model = PanTinyModel::build(tiny_config(), 5).unwrap();
        let lrms = image_like(Shape::new(3, 4, 5, 6), 21);
        let pan = image_like(Shape::new(3, 1, 10, 12), 22);
        let out = model.forward(&lrms, &pan).unwrap();
        assert_eq!(out.shape(), Shape::new(3, 4, 10, 12));
    }

    #[test]
    fn mismatched_pan_resolution_reports_both_shapes() {
        let model = PanTinyModel::build(tiny_config(), 5).unwrap();
        let lrms = image_like(Shape::new(1, 4, 4, 4), 31);
        let pan = image_like(Shape::new(1, 1, 12, 12), 32); // 3x, model wants 2x
        let err = model.forward(&lrms, &pan).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(1,1,8,8)"), "{msg}");
        assert!(msg.contains("(1,1,12,12)"), "{msg}");
        let bad_bands = image_like(Shape::new(1, 3, 4, 4), 33);
        let pan2 = image_like(Shape::new(1, 1, 8, 8), 34);
        assert!(model.forward(&bad_bands, &pan2).is_err());
    }

    #[test]
    fn zeroed_output_projections_reduce_to_bicubic_upsample() {
        let mut model = PanTinyModel::build(tiny_config(), 9).unwrap();
        // Zero the second residual operand everywhere: attention and GDFN
        // output projections, the last fusion conv, and the refinement conv.
        model
            .update_params(&mut |name, t| {
                let zero_it = name.contains(".attn.out.")
                    || name.contains(".gdfn.out.")
                    || name.starts_with("fusion.conv2.")
                    || name.starts_with("refine.conv.");
                if zero_it {
                    Ok(Tensor::from_vec(t.shape(), vec![0.0; t.shape().numel()], true)?)
                } else {
                    Ok(t.clone())
                }
            })
            .unwrap();
        let lrms = image_like(Shape::new(2, 4, 6, 6), 41);
        let pan = image_like(Shape::new(2, 1, 12, 12), 42);
        let out = model.forward(&lrms, &pan).unwrap();
        let reference = lrms.upsample(2, UpsampleMode::Bicubic).unwrap();
        let out_bits: Vec<u32> = out.data().iter().map(|v| v.to_bits()).collect();
        let ref_bits: Vec<u32> = reference.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(out_bits, ref_bits);
    }

    /// A freshly built model is the bicubic upsample: the refinement head's
    /// final conv starts at zero, and the global residual passes the
    /// upsampled input straight through.
    #[test]
    fn fresh_model_starts_at_the_bicubic_upsample() {
        for refine_kind in [RefineKind::Conv, RefineKind::ChannelAttn, RefineKind::LargeConv] {
            let config = ModelConfig { refine_kind, ..tiny_config() };
            let model = PanTinyModel::build(config, 77).unwrap();
            let lrms = image_like(Shape::new(1, 4, 6, 6), 61);
            let pan = image_like(Shape::new(1, 1, 12, 12), 62);
            let out = model.forward(&lrms, &pan).unwrap();
            let reference = lrms.upsample(2, UpsampleMode::Bicubic).unwrap();
            let out_bits: Vec<u32> = out.data().iter().map(|v| v.to_bits()).collect();
            let ref_bits: Vec<u32> = reference.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(out_bits, ref_bits, "{}", refine_kind.as_str());
        }
    }

    #[test]
    fn batches_are_processed_independently() {
        let model = PanTinyModel::build(tiny_config(), 13).unwrap();
        let l0 = image_like(Shape::new(1, 4, 4, 4), 51);
        let l1 = image_like(Shape::new(1, 4, 4, 4), 52);
        let p0 = image_like(Shape::new(1, 1, 8, 8), 53);
        let p1 = image_like(Shape::new(1, 1, 8, 8), 54);
        let stack = |a: &Tensor, b: &Tensor, c: usize, h: usize| {
            let mut data = a.data().to_vec();
            data.extend_from_slice(b.data());
            Tensor::from_vec(Shape::new(2, c, h, h), data, false).unwrap()
        };
        let fwd = model.forward(&stack(&l0, &l1, 4, 4), &stack(&p0, &p1, 1, 8)).unwrap();
        let rev = model.forward(&stack(&l1, &l0, 4, 4), &stack(&p1, &p0, 1, 8)).unwrap();
        let n = fwd.shape().numel() / 2;
        assert_eq!(fwd.data()[..n], rev.data()[n..], "first item moved to second slot");
        assert_eq!(fwd.data()[n..], rev.data()[..n], "second item moved to first slot");
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let model = PanTinyModel::build(tiny_config(), 17).unwrap();
        let lrms = image_like(Shape::new(1, 4, 4, 4), 61);
        let pan = image_like(Shape::new(1, 1, 8, 8), 62);
        let target = image_like(Shape::new(1, 4, 8, 8), 63);
        let out = model.forward(&lrms, &pan).unwrap();
        // 5-tap SSIM window: the 8x8 output is smaller than the default 11.
        let weights = LossWeights { window_size: 5, ..LossWeights::default() };
        let loss = composite(&out, &target, &weights).unwrap();
        let grads = loss.total.backward().unwrap();
        for (name, t) in model.parameters() {
            let g = grads.get(&t).unwrap_or_else(|| panic!("no gradient for {name}"));
            assert!(g.iter().all(|v| v.is_finite()), "non-finite gradient in {name}");
        }
    }

    #[test]
    fn frozen_model_matches_but_tracks_no_gradients() {
        let model = PanTinyModel::build(tiny_config(), 19).unwrap();
        let frozen = model.frozen();
        let lrms = image_like(Shape::new(1, 4, 4, 4), 71);
        let pan = image_like(Shape::new(1, 1, 8, 8), 72);
        let a = model.forward(&lrms, &pan).unwrap();
        let b = frozen.forward(&lrms, &pan).unwrap();
        assert_eq!(a.data(), b.data());
        let grads = b.mean_all().backward().unwrap();
        assert!(grads.is_empty(), "frozen graph must have no gradient leaves");
    }

    #[test]
    fn set_param_replaces_values_and_rejects_unknown_names() {
        let mut model = PanTinyModel::build(tiny_config(), 23).unwrap();
        let count = model
            .parameters()
            .iter()
            .find(|(n, _)| n == "encoder.bias")
            .map(|(_, t)| t.shape().numel())
            .unwrap();
        model.set_param("encoder.bias", &vec![0.25; count]).unwrap();
        let (_, t) = model
            .parameters()
            .into_iter()
            .find(|(n, _)| n == "encoder.bias")
            .unwrap();
        assert!(t.data().iter().all(|&v| v == 0.25));
        assert!(matches!(
            model.set_param("encoder.nope", &[0.0]),
            Err(ModelError::UnknownParameter(_))
        ));
        assert!(model.set_param("encoder.bias", &[0.0]).is_err(), "wrong length");
    }

    /// Finite-difference check of every model parameter's gradient through
    /// the full forward + composite-loss pipeline on a 1x4x8x8 sample,
    /// 20 coordinates per parameter, eps 1e-3, relative error < 2e-3.
    ///
    /// Central differences through a deep f32 pipeline resolve the gradient
    /// only where the objective is locally smooth, gently curved, and above
    /// the rounding noise, so the probe is constructed to stay inside that
    /// regime while exercising the exact gradient code used in training:
    ///
    /// - **Kinks.** With charbonnier eps at 1e-6 the loss is kinked where
    ///   output equals target, and a pixel whose difference sits inside the
    ///   probe's induced move (eps times the pixel's sensitivity to the
    ///   weight, observed up to ~60) smears the kink into the numeric slope
    ///   while the analytic side correctly takes one subgradient. The target
    ///   is therefore the initial output shifted by a constant 0.25, keeping
    ///   every difference away from zero across the probe interval.
    /// - **Curvature.** The numeric slope deviates by `(eps^2/6) * f'''`.
    ///   Third derivatives along weight coordinates were measured up to
    ///   O(1e6) when the target's per-pixel displacement varies (window
    ///   variance then parks the SSIM structure term in the steep region of
    ///   its rational form; the numeric slope provably converges to the
    ///   analytic value as eps shrinks, confirming correctness but failing
    ///   at the pinned eps). The constant shift keeps window covariance
    ///   equal to window variance, pinning the structure term at its smooth
    ///   maximum; the luminance term carries the signal.
    /// - **Noise.** Intermediate f32 roundings differ between the two
    ///   perturbed evaluations and do not cancel; measured deviations on
    ///   this construction reach ~6e-4 regardless of stencil order (a
    ///   4th-order stencil made them worse, confirming noise rather than
    ///   truncation). The 0.5 scale floor therefore bounds small-gradient
    ///   coordinates absolutely at 2e-3 * 0.5 = 1e-3 (see
    ///   `grad_check_floored`), while large-gradient coordinates — biases
    ///   and norm gains reach |g| of 0.1 to 3 here, where a systematic
    ///   backward error of 1% would exceed the bound 30-fold — are held to
    ///   the full relative tolerance.
    ///
    /// Per-operation suites (`tests/op_gradients.rs`) hold each op to an
    /// absolute floor of 4e-6 on shallow graphs, so term-level subtleties
    /// are covered there; this test certifies their composition.
    #[test]
    fn model_and_composite_pipeline_pass_gradient_check() {
        let config = ModelConfig {
            channels: 8,
            num_blocks: 1,
            attn_heads: 2,
            upsample_scale: 4,
            ..ModelConfig::small()
        };
        let model = PanTinyModel::build(config, 101).unwrap();
        let lrms = image_like(Shape::new(1, 4, 8, 8), 81);
        let pan = image_like(Shape::new(1, 1, 32, 32), 82);
        let out0 = model.forward(&lrms, &pan).unwrap();
        let target_data: Vec<f32> = out0.data().iter().map(|o| o + 0.25).collect();
        let target = Tensor::from_vec(out0.shape(), target_data, false).unwrap();
        let weights = LossWeights::default();

        for (idx, (name, point)) in model.parameters().into_iter().enumerate() {
            let model = model.clone();
            let lrms = lrms.clone();
            let pan = pan.clone();
            let target = target.clone();
            let name_ref = name.as_str();
            let report = grad_check_floored(
                |p| {
                    // Substitute the probe tensor itself so the analytic
                    // gradient lands on its id.
                    let mut m = model.clone();
                    m.visit_params(&mut |pname, t| {
                        if pname == name_ref {
                            *t = p.clone();
                        }
                    });
                    let out = m.forward(&lrms, &pan).map_err(tensor_err)?;
                    Ok(composite(&out, &target, &weights).map_err(tensor_err)?.total)
                },
                &point,
                1e-3,
                20,
                900 + idx as u64,
                0.5,
            )
            .unwrap();
            assert!(
                report.max_rel_err < 2e-3,
                "{name}: rel err {} at coord {} (analytic {}, numeric {})",
                report.max_rel_err,
                report.worst_coord,
                report.analytic_at_worst,
                report.numeric_at_worst
            );
        }
    }

    fn tensor_err<E: std::fmt::Display>(e: E) -> crate::tensor::TensorError {
        crate::tensor::TensorError::Invalid { op: "pipeline", msg: e.to_string() }
    }
}
