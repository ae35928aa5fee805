use std::fmt::Write as _;

use super::metrics::{ReportRow, RunReport};
use super::{ExperimentConfig, dataset_fingerprint, run_experiment};
use crate::data::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Variant {
    pub name: String,
    pub enable_targetdrop: bool,
    pub dense_block_count: usize,
}

impl Variant {
    pub fn new(name: &str, enable_targetdrop: bool, dense_block_count: usize) -> Self {
        Self {
            name: name.to_string(),
            enable_targetdrop,
            dense_block_count,
        }
    }

    fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        cfg.model.enable_targetdrop = self.enable_targetdrop;
        cfg.model.dense_block_count = self.dense_block_count;
        cfg
    }
}

/// The full model, the model without TargetDrop, and the full model with
/// one or zero dense blocks (two dense blocks is the full model).
pub fn default_variants() -> Vec<Variant> {
    vec![
        Variant::new("full", true, 2),
        Variant::new("no-targetdrop", false, 2),
        Variant::new("dense-1", true, 1),
        Variant::new("dense-0", true, 0),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub datasets: Vec<String>,
    pub variants: Vec<Variant>,
    /// `accuracies[v][d][s]`: variant, dataset, seed.
    pub accuracies: Vec<Vec<Vec<f64>>>,
    pub seeds: Vec<u64>,
    /// One report per variant; accuracy is the mean over seeds.
    pub reports: Vec<RunReport>,
    /// Datasets on which each variant has the best mean accuracy. Ties go to
    /// the variant listed first.
    pub wins: Vec<usize>,
    pub data_fingerprints: Vec<String>,
}

impl AblationReport {
    pub fn mean_accuracy(&self, variant: usize, dataset: usize) -> f64 {
        let a = &self.accuracies[variant][dataset];
        a.iter().sum::<f64>() / a.len() as f64
    }

    /// Dataset × variant table of mean accuracies with a trailing win-count row.
    pub fn win_table(&self) -> String {
        let mut out = String::from("| dataset |");
        for v in &self.variants {
            write!(out, " {} |", v.name).expect("write");
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(self.variants.len()));
        out.push('\n');
        for (d, name) in self.datasets.iter().enumerate() {
            write!(out, "| {name} |").expect("write");
            for v in 0..self.variants.len() {
                write!(out, " {:.4} |", self.mean_accuracy(v, d)).expect("write");
            }
            out.push('\n');
        }
        out.push_str("| wins |");
        for w in &self.wins {
            write!(out, " {w} |").expect("write");
        }
        out.push('\n');
        out
    }
}

/// Winner index per dataset; earlier variants win ties.
pub fn count_wins(mean_acc: &[Vec<f64>]) -> Vec<usize> {
    let variants = mean_acc.len();
    let datasets = mean_acc.first().map_or(0, Vec::len);
    let mut wins = vec![0; variants];
    for d in 0..datasets {
        let mut best = 0;
        for v in 1..variants {
            if mean_acc[v][d] > mean_acc[best][d] {
                best = v;
            }
        }
        wins[best] += 1;
    }
    wins
}

/// Trains every (variant, dataset, seed) combination with the same data and
/// seeds, one after another.
pub fn run_ablation<T: Real>(
    datasets: &[(TimeSeriesDataset, TimeSeriesDataset)],
    base: &ExperimentConfig,
    variants: &[Variant],
    seeds: &[u64],
    mut on_run: impl FnMut(&str, &str, u64, f64),
) -> Result<AblationReport> {
    if datasets.is_empty() || variants.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one dataset, variant and seed".into()));
    }
    let mut accuracies = vec![vec![Vec::with_capacity(seeds.len()); datasets.len()]; variants.len()];
    let mut reports = Vec::with_capacity(variants.len());
    for (v, variant) in variants.iter().enumerate() {
        let mut cfg = variant.apply(base);
        let mut report = RunReport {
            fingerprint: cfg.fingerprint(),
            ..Default::default()
        };
        for (d, (train, test)) in datasets.iter().enumerate() {
            for &seed in seeds {
                cfg.train.seed = seed;
                let r = run_experiment::<T>(train, test, &cfg, |_| {})?;
                let acc = r.evaluation.accuracy();
                on_run(&train.name, &variant.name, seed, acc);
                accuracies[v][d].push(acc);
                report.seconds += r.seconds;
            }
            let mean = accuracies[v][d].iter().sum::<f64>() / seeds.len() as f64;
            report.rows.push(ReportRow::from_accuracy(train.name.clone(), mean, train.num_classes()));
        }
        reports.push(report);
    }
    let means: Vec<Vec<f64>> = accuracies
        .iter()
        .map(|per_d| per_d.iter().map(|a| a.iter().sum::<f64>() / a.len() as f64).collect())
        .collect();
    Ok(AblationReport {
        datasets: datasets.iter().map(|(t, _)| t.name.clone()).collect(),
        variants: variants.to_vec(),
        wins: count_wins(&means),
        accuracies,
        seeds: seeds.to_vec(),
        reports,
        data_fingerprints: datasets.iter().map(|(t, _)| dataset_fingerprint(t)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wins_sum_to_datasets() {
        let wins = count_wins(&[vec![0.9, 0.5, 0.7], vec![0.8, 0.6, 0.7]]);
        assert_eq!(wins, vec![2, 1]);
        assert_eq!(wins.iter().sum::<usize>(), 3);
    }

    #[test]
    fn identical_variants_tie_to_first() {
        assert_eq!(count_wins(&[vec![0.5], vec![0.5], vec![0.5]]), vec![1, 0, 0]);
    }

    #[test]
    fn variants_differ_in_flags_only() {
        let base = ExperimentConfig::default();
        let v = default_variants();
        let a = v[0].apply(&base);
        let b = v[1].apply(&base);
        assert_eq!(a.train, b.train);
        assert_eq!(a.planner, b.planner);
        assert_ne!(a.model, b.model);
    }
}
