//! Scratch calibration binary: trains at a configurable scale and prints
//! loss milestones plus a PSNR/SSIM table against bicubic and the classical
//! baselines. Not part of the public surface.

use std::time::Instant;

use pantiny_core::model::{ModelConfig, PanTinyModel};
use pantiny_core::loss::LossWeights;
use pantiny_core::synth::{generate_domain, Dataset, DomainSpec};
use pantiny_core::train::{
    evaluate, train, BicubicFuser, ClassicalFuser, ClassicalKind, Fuser, ModelFuser, TrainConfig,
};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() {
    let patch: usize = arg(1, 64);
    let num_train: usize = arg(2, 200);
    let num_test: usize = arg(3, 32);
    let steps: usize = arg(4, 2000);
    let batch: usize = arg(5, 1);
    let seed: u64 = arg(6, 1);
    let l1_only: usize = arg(7, 0);

    let t0 = Instant::now();
    let mut dirs = Vec::new();
    let mut datasets = Vec::new();
    for (i, preset) in DomainSpec::presets().into_iter().enumerate() {
        let spec = DomainSpec { patch, num_train, num_test, ..preset };
        let dir = tempfile::tempdir().unwrap();
        generate_domain(&spec, 7000 + i as u64, dir.path()).unwrap();
        datasets.push(Dataset::load(&dir.path().join("manifest.txt")).unwrap());
        dirs.push(dir);
    }
    println!("generation: {:.2}s", t0.elapsed().as_secs_f64());

    let model = PanTinyModel::build(ModelConfig::small(), seed).unwrap();
    let loss = if l1_only == 1 { LossWeights::l1_only() } else { LossWeights::default() };
    let cfg = TrainConfig { batch, max_steps: steps, seed, loss, ..TrainConfig::default() };
    let t1 = Instant::now();
    let out = train(model, &datasets, &cfg).unwrap();
    let dt = t1.elapsed().as_secs_f64();
    println!(
        "train: {:.1}s total, {:.1} ms/step ({} steps, batch {batch}, patch {patch})",
        dt,
        1e3 * dt / steps as f64,
        steps
    );
    let s = &out.log.steps;
    println!(
        "loss: step0 {:.4}  step10 {:.4}  final {:.4}  final/step10 {:.3}",
        s[0].loss_total,
        s[10].loss_total,
        s[steps - 1].loss_total,
        s[steps - 1].loss_total / s[10].loss_total
    );

    let t2 = Instant::now();
    let model_fuser = ModelFuser::new(&out.model, "pantiny");
    let mut fusers: Vec<Box<dyn Fuser>> = vec![Box::new(model_fuser), Box::new(BicubicFuser)];
    for kind in ClassicalKind::ALL {
        fusers.push(Box::new(ClassicalFuser(kind)));
    }
    println!("{:<10} {:>9} {:>8} {:>8} {:>8}", "domain", "fuser", "psnr", "ssim", "sam");
    for d in &datasets {
        for f in &fusers {
            let r = evaluate(f.as_ref(), d).unwrap();
            println!(
                "{:<10} {:>9} {:>8.3} {:>8.4} {:>8.4}",
                d.manifest.spec.name,
                f.name(),
                r.psnr,
                r.ssim,
                r.sam
            );
        }
    }
    println!("eval: {:.2}s", t2.elapsed().as_secs_f64());
}
