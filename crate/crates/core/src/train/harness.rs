//! Study harnesses: loss-weight sweeps and the cross-domain matrix.

use super::eval::{evaluate, Fuser, ModelFuser};
use super::{train, Paradigm, TrainConfig, TrainError};
use crate::loss::LossWeights;
use crate::metrics::ReducedResReport;
use crate::model::{ModelConfig, PanTinyModel};
use crate::synth::Dataset;
use std::fmt::Write as _;

/// Derive a deterministic sub-seed for row `index` of a study.
fn row_seed(seed: u64, index: u64) -> u64 {
    // splitmix64-style avalanche; distinct rows get unrelated streams.
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Evaluate one fuser on every dataset: `(domain name, report)` rows.
pub fn evaluate_across(
    fuser: &dyn Fuser,
    datasets: &[Dataset],
) -> Result<Vec<(String, ReducedResReport)>, TrainError> {
    datasets
        .iter()
        .map(|d| Ok((d.manifest.spec.name.clone(), evaluate(fuser, d)?)))
        .collect()
}

pub const SWEEP_CSV_HEADER: &str = "w_l1,w_ssim,w_focal,dataset,psnr,ssim,sam,ergas";

/// Train one model per loss-weight combination and tabulate its test metrics
/// on every domain: one CSV row per `(combination, domain)`.
///
/// Row `i` trains with seeds derived from `(base.seed, i)`, so reruns of the
/// same grid and config reproduce the CSV byte-exactly, and inserting or
/// reordering rows does not perturb the others' results.
pub fn loss_sweep(
    grid: &[LossWeights],
    model_config: &ModelConfig,
    base: &TrainConfig,
    datasets: &[Dataset],
) -> Result<String, TrainError> {
    let mut csv = String::from(SWEEP_CSV_HEADER);
    csv.push('\n');
    for (i, weights) in grid.iter().enumerate() {
        let seed = row_seed(base.seed, i as u64);
        let model = PanTinyModel::build(model_config.clone(), seed)?;
        let cfg = TrainConfig {
            loss: weights.clone(),
            seed: seed ^ 1,
            ..base.clone()
        };
        let outcome = train(model, datasets, &cfg)?;
        let fuser = ModelFuser::new(&outcome.model, "pantiny");
        for (domain, report) in evaluate_across(&fuser, datasets)? {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                weights.l1,
                weights.ssim,
                weights.focal,
                domain,
                report.csv_fields()
            );
        }
    }
    Ok(csv)
}

/// PSNR matrix of separately trained models: `psnr[i][j]` is the test PSNR
/// on domain `j` of the model trained on domain `i` alone.
#[derive(Clone, Debug)]
pub struct CrossDomainMatrix {
    pub domains: Vec<String>,
    pub psnr: Vec<Vec<f32>>,
    /// Full metric reports in the same `[train][test]` layout.
    pub reports: Vec<Vec<ReducedResReport>>,
}

impl CrossDomainMatrix {
    /// Labeled CSV: header row of test domains, one row per train domain.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("train\\test");
        for d in &self.domains {
            let _ = write!(out, ",{d}");
        }
        out.push('\n');
        for (i, d) in self.domains.iter().enumerate() {
            let _ = write!(out, "{d}");
            for j in 0..self.domains.len() {
                let _ = write!(out, ",{:.4}", self.psnr[i][j]);
            }
            out.push('\n');
        }
        out
    }

    /// The row's diagonal entry minus its worst off-diagonal entry, per row;
    /// negative means some transfer target beat the source domain itself.
    pub fn worst_offdiag_deficit(&self) -> f32 {
        let n = self.domains.len();
        let mut worst = f32::NEG_INFINITY;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    worst = worst.max(self.psnr[i][i] - self.psnr[i][j]);
                }
            }
        }
        worst
    }
}

/// Train one model per source domain (separate paradigm, same step budget)
/// and evaluate each on every domain's test split. Source `i` uses seeds
/// derived from `(base.seed, i)`; the paradigm in `base` is ignored.
pub fn cross_domain_matrix(
    model_config: &ModelConfig,
    base: &TrainConfig,
    datasets: &[Dataset],
) -> Result<CrossDomainMatrix, TrainError> {
    if datasets.is_empty() {
        return Err(TrainError::Config("cross-domain matrix needs >= 1 dataset".into()));
    }
    let domains: Vec<String> = datasets.iter().map(|d| d.manifest.spec.name.clone()).collect();
    let mut psnr = Vec::with_capacity(datasets.len());
    let mut reports = Vec::with_capacity(datasets.len());
    for (i, source) in datasets.iter().enumerate() {
        let seed = row_seed(base.seed, i as u64);
        let model = PanTinyModel::build(model_config.clone(), seed)?;
        let cfg = TrainConfig {
            paradigm: Paradigm::Separate,
            seed: seed ^ 1,
            ..base.clone()
        };
        let outcome = train(model, std::slice::from_ref(source), &cfg)?;
        let fuser = ModelFuser::new(&outcome.model, "pantiny");
        let row = evaluate_across(&fuser, datasets)?;
        psnr.push(row.iter().map(|(_, r)| r.psnr).collect());
        reports.push(row.into_iter().map(|(_, r)| r).collect());
    }
    Ok(CrossDomainMatrix { domains, psnr, reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_domain, DomainSpec};
    use tempfile::tempdir;

    fn micro_domains(n: usize) -> (Vec<tempfile::TempDir>, Vec<Dataset>) {
        let mut dirs = Vec::new();
        let mut datasets = Vec::new();
        for (i, preset) in DomainSpec::presets().into_iter().take(n).enumerate() {
            let spec = DomainSpec { num_train: 2, num_test: 1, patch: 16, ..preset };
            let dir = tempdir().unwrap();
            generate_domain(&spec, 40 + i as u64, dir.path()).unwrap();
            datasets.push(Dataset::load(&dir.path().join("manifest.txt")).unwrap());
            dirs.push(dir);
        }
        (dirs, datasets)
    }

    fn micro_model_config() -> ModelConfig {
        ModelConfig { channels: 8, num_blocks: 1, attn_heads: 2, ..ModelConfig::small() }
    }

    fn micro_train_config() -> TrainConfig {
        TrainConfig { batch: 2, max_steps: 2, seed: 9, ..TrainConfig::default() }
    }

    #[test]
    fn empty_grid_yields_header_only() {
        let (_dirs, datasets) = micro_domains(2);
        let csv = loss_sweep(&[], &micro_model_config(), &micro_train_config(), &datasets).unwrap();
        assert_eq!(csv, format!("{SWEEP_CSV_HEADER}\n"));
    }

    #[test]
    fn sweep_rows_cover_grid_times_domains_and_rerun_identically() {
        let (_dirs, datasets) = micro_domains(2);
        let grid = vec![LossWeights::l1_only(), LossWeights::default()];
        let csv = loss_sweep(&grid, &micro_model_config(), &micro_train_config(), &datasets).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + grid.len() * datasets.len());
        assert!(lines[1].starts_with("1,0,0,synthA,"));
        assert!(lines[3].starts_with("1.5,4,1.5,synthA,"));
        let again = loss_sweep(&grid, &micro_model_config(), &micro_train_config(), &datasets).unwrap();
        assert_eq!(csv, again);
    }

    #[test]
    fn matrix_is_labeled_square_and_deterministic() {
        let (_dirs, datasets) = micro_domains(3);
        let m = cross_domain_matrix(&micro_model_config(), &micro_train_config(), &datasets).unwrap();
        assert_eq!(m.domains, vec!["synthA", "synthB", "synthC"]);
        assert_eq!(m.psnr.len(), 3);
        assert!(m.psnr.iter().all(|row| row.len() == 3));
        let csv = m.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "train\\test,synthA,synthB,synthC");
        assert!(lines[1].starts_with("synthA,"));
        let again = cross_domain_matrix(&micro_model_config(), &micro_train_config(), &datasets).unwrap();
        assert_eq!(csv, again.to_csv());
    }

    #[test]
    fn worst_offdiag_deficit_reads_the_matrix() {
        let m = CrossDomainMatrix {
            domains: vec!["a".into(), "b".into()],
            psnr: vec![vec![30.0, 24.0], vec![29.0, 31.0]],
            reports: vec![],
        };
        // Row a: 30 - 24 = 6; row b: 31 - 29 = 2.
        assert_eq!(m.worst_offdiag_deficit(), 6.0);
    }
}
