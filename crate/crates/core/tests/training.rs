//! Training-loop integration checks on generated domains: the smoke oracle
//! (loss must halve in 300 steps on all three domains, three seeds) and
//! checkpoint round-trip fidelity through a real training run.

use pantiny_core::model::{checkpoint_bytes, load_checkpoint_bytes, ModelConfig, PanTinyModel};
use pantiny_core::synth::{generate_domain, Dataset, DomainSpec};
use pantiny_core::train::{evaluate, train, ModelFuser, TrainConfig};
use tempfile::TempDir;

/// The three preset domains at reduced size: full texture/noise/spectral
/// character, smaller patches and counts so the suite stays fast.
fn smoke_domains(patch: usize, num_train: usize, num_test: usize) -> (Vec<TempDir>, Vec<Dataset>) {
    let mut dirs = Vec::new();
    let mut datasets = Vec::new();
    for (i, preset) in DomainSpec::presets().into_iter().enumerate() {
        let spec = DomainSpec { patch, num_train, num_test, ..preset };
        let dir = tempfile::tempdir().unwrap();
        generate_domain(&spec, 7000 + i as u64, dir.path()).unwrap();
        datasets.push(Dataset::load(&dir.path().join("manifest.txt")).unwrap());
        dirs.push(dir);
    }
    (dirs, datasets)
}

#[test]
fn three_hundred_steps_halve_the_loss_on_all_seeds() {
    let (_dirs, datasets) = smoke_domains(32, 8, 2);
    for seed in [1u64, 2, 3] {
        let model = PanTinyModel::build(ModelConfig::small(), seed).unwrap();
        let cfg = TrainConfig {
            batch: 1,
            max_steps: 300,
            seed,
            ..TrainConfig::default()
        };
        let out = train(model, &datasets, &cfg).unwrap();
        let first = out.log.steps.first().unwrap().loss_total;
        let last = out.log.steps.last().unwrap().loss_total;
        println!(
            "seed {seed}: initial {first:.4} final {last:.4} ratio {:.3}",
            last / first
        );
        for probe in [0, 30, 60, 120, 180, 240, 299] {
            let r = &out.log.steps[probe];
            println!("  step {:3}: total {:.4} l1 {:.4} ssim {:.4} focal {:.4}", r.step, r.loss_total, r.loss_l1, r.loss_ssim, r.loss_focal);
        }
        assert!(
            last <= 0.5 * first,
            "seed {seed}: final loss {last} did not halve the initial {first}"
        );
    }
}

#[test]
fn checkpoint_round_trip_preserves_evaluation() {
    let (_dirs, datasets) = smoke_domains(32, 4, 2);
    let model = PanTinyModel::build(ModelConfig::small(), 9).unwrap();
    let cfg = TrainConfig { batch: 2, max_steps: 20, seed: 9, ..TrainConfig::default() };
    let out = train(model, &datasets, &cfg).unwrap();
    let bytes = checkpoint_bytes(&out.model);
    let restored = load_checkpoint_bytes(&bytes).unwrap();
    for d in &datasets {
        let live = evaluate(&ModelFuser::new(&out.model, "live"), d).unwrap();
        let back = evaluate(&ModelFuser::new(&restored, "restored"), d).unwrap();
        assert_eq!(live, back, "metrics diverge after checkpoint round-trip");
    }
}
