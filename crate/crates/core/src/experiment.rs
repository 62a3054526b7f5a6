//! Controlled ablation over the cross-domain ranking and alignment terms.
//!
//! For each seed one pretrained checkpoint is shared by four adaptation arms:
//! neither term, ranking only, alignment only, both.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{DatasetBundle, Domain, Sample, Split};
use crate::error::Result;
use crate::metrics::{evaluate, mean_alignment_gap, rank_distribution, MacroMetrics, DEFAULT_BINS};
use crate::model::{init_model, ModelParams};
use crate::trainer::{adapt, compute_prototypes, pretrain, TrainConfig, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arm {
    pub cdr: bool,
    pub cda: bool,
}

impl Arm {
    pub const ALL: [Arm; 4] = [
        Arm { cdr: false, cda: false },
        Arm { cdr: true, cda: false },
        Arm { cdr: false, cda: true },
        Arm { cdr: true, cda: true },
    ];

    pub fn name(self) -> &'static str {
        match (self.cdr, self.cda) {
            (false, false) => "s+t",
            (true, false) => "cdr",
            (false, true) => "cda",
            (true, true) => "cdr+cda",
        }
    }

    /// Adaptation config for this arm; the baseline arm also zeroes λ.
    pub fn configure(self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            use_cdr: self.cdr,
            use_cda: self.cda,
            lambda: if self.cda { base.lambda } else { 0.0 },
            ..base.clone()
        }
    }
}

pub fn labeled_split(bundle: &DatasetBundle, domain: Domain, split: Split) -> Vec<&Sample> {
    bundle
        .samples
        .iter()
        .filter(|s| s.domain == domain && s.split == split && s.is_labeled())
        .collect()
}

pub fn target_test_metrics(params: &ModelParams, bundle: &DatasetBundle) -> Result<MacroMetrics> {
    Ok(evaluate(params, &labeled_split(bundle, Domain::Target, Split::Test))?.1)
}

/// Mean over classes of `|target-test class-mean rank - source prototype|`,
/// prototypes taken from labeled source training samples under the same
/// parameters.
pub fn alignment_gap(params: &ModelParams, bundle: &DatasetBundle) -> Result<f64> {
    let source = labeled_split(bundle, Domain::Source, Split::Train);
    let prototypes = compute_prototypes(params, &source)?;
    let target = labeled_split(bundle, Domain::Target, Split::Test);
    let dist = rank_distribution(params, &target, DEFAULT_BINS)?;
    Ok(mean_alignment_gap(&dist, &prototypes.mu))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub cdr: bool,
    pub cda: bool,
    pub failed: Option<String>,
    pub metrics: Option<MacroMetrics>,
    pub alignment_gap: Option<f64>,
    pub stopping_epoch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, sd: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

/// One row of the ablation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    #[serde(rename = "CDR")]
    pub cdr: bool,
    #[serde(rename = "CDA")]
    pub cda: bool,
    #[serde(rename = "Accuracy")]
    pub accuracy: MeanSd,
    #[serde(rename = "mP")]
    pub macro_precision: MeanSd,
    #[serde(rename = "mR")]
    pub macro_recall: MeanSd,
    #[serde(rename = "mF1")]
    pub macro_f1: MeanSd,
    pub alignment_gap: MeanSd,
    pub completed: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub pretrain_best_val_macro_f1: f64,
    pub pretrained_alignment_gap: f64,
    pub pretrained_target_metrics: MacroMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub lambda: f64,
    pub rows: Vec<ArmSummary>,
    pub pretrained: Vec<SeedRecord>,
    pub runs: Vec<RunRecord>,
}

impl AblationTable {
    pub fn row(&self, arm: Arm) -> Option<&ArmSummary> {
        self.rows.iter().find(|r| r.cdr == arm.cdr && r.cda == arm.cda)
    }
}

/// Output of a single seed's pretraining, shared by every arm.
pub struct Pretrained {
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
}

pub fn pretrain_seed(bundle: &DatasetBundle, config: &TrainConfig, seed: u64) -> Result<Pretrained> {
    let config = TrainConfig { seed, ..config.clone() };
    let init = init_model(&config.model_config(bundle))?;
    let (checkpoint, report) = pretrain(&init, bundle, &config)?;
    Ok(Pretrained { checkpoint, report })
}

pub fn run_arm(pretrained: &Checkpoint, bundle: &DatasetBundle, config: &TrainConfig, seed: u64, arm: Arm) -> RunRecord {
    let config = TrainConfig { seed, ..arm.configure(config) };
    let outcome = adapt(pretrained, bundle, &config).and_then(|(ck, report)| {
        let params = ck.params()?;
        Ok((target_test_metrics(&params, bundle)?, alignment_gap(&params, bundle)?, report.stopping_epoch))
    });
    match outcome {
        Ok((metrics, gap, stop)) => RunRecord {
            seed,
            cdr: arm.cdr,
            cda: arm.cda,
            failed: None,
            metrics: Some(metrics),
            alignment_gap: Some(gap),
            stopping_epoch: Some(stop),
        },
        Err(e) => RunRecord {
            seed,
            cdr: arm.cdr,
            cda: arm.cda,
            failed: Some(e.to_string()),
            metrics: None,
            alignment_gap: None,
            stopping_epoch: None,
        },
    }
}

/// Runs every arm for every seed. A failing arm is recorded and the rest
/// continue; pretraining failures propagate.
pub fn run_ablation(bundle: &DatasetBundle, config: &TrainConfig, seeds: &[u64]) -> Result<AblationTable> {
    let mut runs = Vec::with_capacity(seeds.len() * Arm::ALL.len());
    let mut pretrained = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let pre = pretrain_seed(bundle, config, seed)?;
        let params = pre.checkpoint.params()?;
        pretrained.push(SeedRecord {
            seed,
            pretrain_best_val_macro_f1: pre.report.best_val_macro_f1,
            pretrained_alignment_gap: alignment_gap(&params, bundle)?,
            pretrained_target_metrics: target_test_metrics(&params, bundle)?,
        });
        for arm in Arm::ALL {
            runs.push(run_arm(&pre.checkpoint, bundle, config, seed, arm));
        }
    }
    Ok(summarize(seeds, config.lambda, pretrained, runs))
}

pub fn summarize(seeds: &[u64], lambda: f64, pretrained: Vec<SeedRecord>, runs: Vec<RunRecord>) -> AblationTable {
    let rows = Arm::ALL
        .iter()
        .map(|&arm| {
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.cdr == arm.cdr && r.cda == arm.cda).collect();
            let ok: Vec<&MacroMetrics> = mine.iter().filter_map(|r| r.metrics.as_ref()).collect();
            let pick = |f: fn(&MacroMetrics) -> f64| MeanSd::of(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
            let gaps: Vec<f64> = mine.iter().filter_map(|r| r.alignment_gap).collect();
            ArmSummary {
                cdr: arm.cdr,
                cda: arm.cda,
                accuracy: pick(|m| m.accuracy),
                macro_precision: pick(|m| m.macro_precision),
                macro_recall: pick(|m| m.macro_recall),
                macro_f1: pick(|m| m.macro_f1),
                alignment_gap: MeanSd::of(&gaps),
                completed: ok.len(),
                failed: mine.len() - ok.len(),
            }
        })
        .collect();
    AblationTable {
        seeds: seeds.to_vec(),
        lambda,
        rows,
        pretrained,
        runs,
    }
}
