//! Training and evaluation: Adam + cosine annealing over synthetic domains,
//! in two paradigms — `all_in_one` (one model over the union of several
//! domains' train splits) and `separate` (one model per domain) — plus the
//! evaluation protocols, loss-weight sweeps and the cross-domain matrix.

mod adam;
mod eval;
mod harness;
mod schedule;

pub use adam::{adam_update, Adam, ADAM_BETAS, ADAM_EPS};
pub use eval::{
    evaluate, evaluate_full_res, BicubicFuser, ClassicalFuser, ClassicalKind, Fuser, ModelFuser,
};
pub use harness::{cross_domain_matrix, evaluate_across, loss_sweep, CrossDomainMatrix};
pub use schedule::cosine_lr;

use crate::loss::{composite, LossError, LossWeights};
use crate::metrics::{MetricsError, ReducedResReport};
use crate::model::{ModelError, PanTinyModel};
use crate::raster::{RasterError, RasterImage};
use crate::resample::ResampleError;
use crate::synth::{AllInOneSampler, Dataset, SampleRef, SynthError};
use crate::tensor::TensorError;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("loss is not finite at step {step} (lr {lr}): aborting")]
    NanLoss { step: usize, lr: f32 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Resample(#[from] ResampleError),
    #[error(transparent)]
    Classical(#[from] crate::classical::ClassicalError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Training paradigm: one model over all domains, or one per domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Paradigm {
    AllInOne,
    Separate,
}

impl Paradigm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Paradigm::AllInOne => "all_in_one",
            Paradigm::Separate => "separate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "all_in_one" => Some(Paradigm::AllInOne),
            "separate" => Some(Paradigm::Separate),
            _ => None,
        }
    }
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Peak learning rate at step 0.
    pub lr0: f32,
    pub betas: (f32, f32),
    pub epochs: usize,
    pub batch: usize,
    /// Cosine floor.
    pub lr_min: f32,
    /// Seeds the epoch shuffles (and nothing else inside `train`).
    pub seed: u64,
    pub paradigm: Paradigm,
    pub loss: LossWeights,
    /// Evaluate on every domain's test split each `eval_every` steps
    /// (0 = never). A final evaluation is always appended when enabled.
    pub eval_every: usize,
    /// Optional hard budget in optimizer steps. When non-zero it overrides
    /// `epochs`: training (and the cosine horizon) runs exactly this many
    /// steps, drawing as many epochs as needed.
    pub max_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 5e-4,
            betas: ADAM_BETAS,
            epochs: 1,
            batch: 16,
            lr_min: 0.0,
            seed: 0,
            paradigm: Paradigm::AllInOne,
            loss: LossWeights::default(),
            eval_every: 0,
            max_steps: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr_min >= 0.0) || !(self.lr0 > self.lr_min) {
            return Err(TrainError::Config(format!(
                "need lr0 > lr_min >= 0, got lr0 {} lr_min {}",
                self.lr0, self.lr_min
            )));
        }
        if self.batch == 0 {
            return Err(TrainError::Config("batch must be >= 1".into()));
        }
        for (name, b) in [("beta1", self.betas.0), ("beta2", self.betas.1)] {
            if !(0.0..1.0).contains(&b) {
                return Err(TrainError::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        self.loss.validate()?;
        Ok(())
    }
}

/// One optimizer step of the log. Loss terms are the *unweighted* values of
/// each component; `loss_total` is the weighted training objective.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f32,
    pub loss_total: f64,
    pub loss_l1: f64,
    pub loss_ssim: f64,
    pub loss_focal: f64,
}

/// One periodic evaluation: metrics of the current model on one domain's
/// test split.
#[derive(Clone, Debug)]
pub struct EvalRecord {
    pub step: usize,
    pub domain: String,
    pub report: ReducedResReport,
}

/// Full record of a training run.
#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "step,lr,loss_total,loss_l1,loss_ssim,loss_focal";

    /// Per-step records as CSV. Values use the shortest round-trip
    /// representation, so identical runs serialize byte-identically.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.steps {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.step, r.lr, r.loss_total, r.loss_l1, r.loss_ssim, r.loss_focal
            );
        }
        out
    }
}

/// A finished training run: the trained model and its log.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: PanTinyModel,
    pub log: TrainLog,
}

/// Train `model` on the given datasets.
///
/// Each step draws the next shuffled batch, runs forward + composite loss +
/// backward, and applies one Adam update at the cosine-annealed learning
/// rate. Fully deterministic for a given `(config, seed)` and initial model.
/// A non-finite loss aborts with the step index and learning rate.
///
/// The `all_in_one` paradigm requires at least two datasets (their train
/// splits are concatenated and shuffled together); `separate` requires
/// exactly one.
pub fn train(
    model: PanTinyModel,
    datasets: &[Dataset],
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    crate::tensor::flush_denormals();
    config.validate()?;
    match config.paradigm {
        Paradigm::AllInOne if datasets.len() < 2 => {
            return Err(TrainError::Config(format!(
                "all_in_one training needs >= 2 datasets, got {}",
                datasets.len()
            )));
        }
        Paradigm::Separate if datasets.len() != 1 => {
            return Err(TrainError::Config(format!(
                "separate training needs exactly 1 dataset, got {}",
                datasets.len()
            )));
        }
        _ => {}
    }
    for d in datasets {
        if d.train.is_empty() {
            return Err(TrainError::Config(format!(
                "dataset `{}` has no train samples",
                d.manifest.spec.name
            )));
        }
    }

    let sampler = AllInOneSampler::from_datasets(datasets, config.batch, config.seed)?;
    let (total_steps, max_epochs) = if config.max_steps > 0 {
        (config.max_steps, usize::MAX)
    } else {
        (config.epochs * sampler.batches_per_epoch(), config.epochs)
    };

    let mut model = model;
    // Re-arm gradients in case the model came from a checkpoint or a frozen
    // evaluation copy.
    model.update_params(&mut |_, t| Ok(t.detach(true)))?;

    let mut adam = Adam::new(config.betas, ADAM_EPS);
    let mut log = TrainLog::default();
    let mut step = 0usize;

    'epochs: for epoch in 0..max_epochs {
        if step >= total_steps {
            break;
        }
        for batch in sampler.epoch(epoch as u64) {
            if step >= total_steps {
                break 'epochs;
            }
            let lr = cosine_lr(step, total_steps, config.lr0, config.lr_min);
            let (lrms, pan, hrms) = assemble_batch(datasets, &batch)?;
            let out = model.forward(&lrms, &pan)?;
            let loss = composite(&out, &hrms, &config.loss)?;
            let total = loss.total.item_f64()?;
            if !total.is_finite() {
                return Err(TrainError::NanLoss { step, lr });
            }
            let grads = loss.total.backward()?;
            adam.step(&mut model, &grads, lr)?;
            log.steps.push(StepRecord {
                step,
                lr,
                loss_total: total,
                loss_l1: loss.l1,
                loss_ssim: loss.ssim,
                loss_focal: loss.focal,
            });
            step += 1;
            if config.eval_every > 0 && step % config.eval_every == 0 {
                append_eval(&mut log, step, &model, datasets)?;
            }
        }
    }

    // Final evaluation (unless the last step already produced one).
    if config.eval_every > 0 && step > 0 && step % config.eval_every != 0 {
        append_eval(&mut log, step, &model, datasets)?;
    }

    Ok(TrainOutcome { model, log })
}

/// Gather one batch of sample refs into `(lrms, pan, hrms)` input tensors.
fn assemble_batch(
    datasets: &[Dataset],
    refs: &[SampleRef],
) -> Result<(crate::tensor::Tensor, crate::tensor::Tensor, crate::tensor::Tensor), TrainError> {
    let mut lrms = Vec::with_capacity(refs.len());
    let mut pan = Vec::with_capacity(refs.len());
    let mut hrms = Vec::with_capacity(refs.len());
    for r in refs {
        let pair = &datasets[r.domain].train[r.index];
        lrms.push(&pair.lrms);
        pan.push(&pair.pan);
        hrms.push(&pair.hrms);
    }
    Ok((
        RasterImage::stack_to_tensor(&lrms)?,
        RasterImage::stack_to_tensor(&pan)?,
        RasterImage::stack_to_tensor(&hrms)?,
    ))
}

fn append_eval(
    log: &mut TrainLog,
    step: usize,
    model: &PanTinyModel,
    datasets: &[Dataset],
) -> Result<(), TrainError> {
    let fuser = ModelFuser::new(model, "pantiny");
    for d in datasets {
        if d.test.is_empty() {
            continue;
        }
        let report = evaluate(&fuser, d)?;
        log.evals.push(EvalRecord { step, domain: d.manifest.spec.name.clone(), report });
    }
    Ok(())
}
