//! Classification metrics and rank-score distribution statistics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{Domain, Sample};
use crate::error::{Error, Result};
use crate::model::{forward, ModelParams};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Predictions and labels are 1-based classes.
pub fn confusion(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(num_classes);
    for (&p, &y) in preds.iter().zip(labels) {
        for c in [p, y] {
            if c < 1 || c > num_classes {
                return Err(Error::Input(format!("class {c} outside 1..={num_classes}")));
            }
        }
        cm.counts[y - 1][p - 1] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub per_class_f1: Vec<f64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Unweighted class means of precision, recall and F1; 0/0 counts as 0.
pub fn macro_metrics(cm: &ConfusionMatrix) -> Result<MacroMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Input("confusion matrix is empty".into()));
    }
    let c = cm.num_classes();
    let mut precision = Vec::with_capacity(c);
    let mut recall = Vec::with_capacity(c);
    let mut f1 = Vec::with_capacity(c);
    let mut trace = 0;
    for k in 0..c {
        let tp = cm.counts[k][k];
        trace += tp;
        let predicted: u64 = cm.counts.iter().map(|row| row[k]).sum();
        let actual: u64 = cm.counts[k].iter().sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        precision.push(p);
        recall.push(r);
        f1.push(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / c as f64;
    Ok(MacroMetrics {
        accuracy: ratio(trace, total),
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        per_class_precision: precision,
        per_class_recall: recall,
        per_class_f1: f1,
    })
}

/// Predicts every labeled sample with argmax of the class probabilities.
pub fn evaluate(params: &ModelParams, samples: &[&Sample]) -> Result<(ConfusionMatrix, MacroMetrics)> {
    let mut preds = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        if let Some(y) = s.label {
            preds.push(forward(params, &s.features)?.predicted_class());
            labels.push(y);
        }
    }
    let cm = confusion(&preds, &labels, params.num_classes())?;
    let m = macro_metrics(&cm)?;
    Ok((cm, m))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub domain: Domain,
    pub class: usize,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub histogram: Vec<u64>,
}

/// Per (domain, class) rank-score statistics with histograms over shared bin
/// edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankDistribution {
    pub bin_edges: Vec<f64>,
    pub groups: Vec<GroupStats>,
}

impl RankDistribution {
    pub fn group(&self, domain: Domain, class: usize) -> Option<&GroupStats> {
        self.groups.iter().find(|g| g.domain == domain && g.class == class)
    }
}

pub const DEFAULT_BINS: usize = 40;

/// A scored sample: (domain, class, rank score). Class is 1-based; `None`
/// entries are skipped.
pub type ScoredEntry = (Domain, Option<usize>, f64);

pub fn rank_distribution_from_scores(entries: &[ScoredEntry], bins: usize) -> Result<RankDistribution> {
    if bins == 0 {
        return Err(Error::Input("histogram needs at least one bin".into()));
    }
    let labeled: Vec<(Domain, usize, f64)> = entries
        .iter()
        .filter_map(|&(d, c, r)| c.map(|c| (d, c, r)))
        .collect();
    if labeled.is_empty() {
        return Ok(RankDistribution { bin_edges: vec![], groups: vec![] });
    }
    let lo = labeled.iter().map(|e| e.2).fold(f64::INFINITY, f64::min);
    let hi = labeled.iter().map(|e| e.2).fold(f64::NEG_INFINITY, f64::max);
    let pad = if hi > lo { 0.01 * (hi - lo) } else { 0.01 * lo.abs().max(1.0) };
    let (lo, hi) = (lo - pad, hi + pad);
    let width = (hi - lo) / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins).map(|b| lo + b as f64 * width).collect();

    let mut keys: Vec<(Domain, usize)> = labeled.iter().map(|e| (e.0, e.1)).collect();
    keys.sort();
    keys.dedup();
    let groups = keys
        .into_iter()
        .map(|(domain, class)| {
            let scores: Vec<f64> = labeled
                .iter()
                .filter(|e| e.0 == domain && e.1 == class)
                .map(|e| e.2)
                .collect();
            let n = scores.len() as f64;
            let mean = scores.iter().sum::<f64>() / n;
            let std = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
            let mut histogram = vec![0u64; bins];
            for s in &scores {
                let b = (((s - lo) / width).floor() as usize).min(bins - 1);
                histogram[b] += 1;
            }
            GroupStats { domain, class, count: scores.len(), mean, std, histogram }
        })
        .collect();
    Ok(RankDistribution { bin_edges, groups })
}

pub fn score_samples(params: &ModelParams, samples: &[&Sample]) -> Result<Vec<ScoredEntry>> {
    samples
        .iter()
        .map(|s| Ok((s.domain, s.label, forward(params, &s.features)?.rank_score)))
        .collect()
}

pub fn rank_distribution(params: &ModelParams, samples: &[&Sample], bins: usize) -> Result<RankDistribution> {
    rank_distribution_from_scores(&score_samples(params, samples)?, bins)
}

/// Mean over classes of `|target class mean - prototype|`, skipping classes
/// without target samples.
pub fn mean_alignment_gap(dist: &RankDistribution, prototypes: &[f64]) -> f64 {
    let gaps: Vec<f64> = prototypes
        .iter()
        .enumerate()
        .filter_map(|(k, mu)| dist.group(Domain::Target, k + 1).map(|g| (g.mean - mu).abs()))
        .collect();
    if gaps.is_empty() {
        0.0
    } else {
        gaps.iter().sum::<f64>() / gaps.len() as f64
    }
}

/// Raw scores as `domain,class,rank_score`; unlabeled rows carry class -1.
pub fn write_rank_scores<W: Write>(entries: &[ScoredEntry], mut out: W) -> Result<()> {
    writeln!(out, "domain,class,rank_score")?;
    for (d, c, r) in entries {
        writeln!(out, "{},{},{}", d, c.map_or(-1, |c| c as i64), r)?;
    }
    Ok(())
}

/// Histogram rows as `domain,class,bin_lo,bin_hi,count`.
pub fn write_histogram<W: Write>(dist: &RankDistribution, mut out: W) -> Result<()> {
    writeln!(out, "domain,class,bin_lo,bin_hi,count")?;
    for g in &dist.groups {
        for (b, count) in g.histogram.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{}",
                g.domain,
                g.class,
                dist.bin_edges[b],
                dist.bin_edges[b + 1],
                count
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_and_constant_predictors() {
        let labels = [1, 2, 3, 3, 2];
        let cm = confusion(&labels, &labels, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(cm.counts[i][j] > 0, i == j);
            }
        }
        let m = macro_metrics(&cm).unwrap();
        assert_eq!((m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1), (1.0, 1.0, 1.0, 1.0));

        let cm = confusion(&[1; 5], &labels, 3).unwrap();
        assert!(cm.counts.iter().all(|r| r[1] == 0 && r[2] == 0));
        assert_eq!(cm.total(), 5);
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        let cm = confusion(&[], &[], 4).unwrap();
        assert_eq!(cm, ConfusionMatrix::zeros(4));
        assert!(macro_metrics(&cm).is_err());
        assert!(confusion(&[1], &[], 4).is_err());
        assert!(confusion(&[5], &[1], 4).is_err());
    }

    #[test]
    fn balanced_two_by_two() {
        let cm = ConfusionMatrix { counts: vec![vec![1, 1], vec![1, 1]] };
        let m = macro_metrics(&cm).unwrap();
        for v in [m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1] {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn never_predicted_class_has_zero_precision() {
        // Class 3 is never predicted.
        let cm = ConfusionMatrix {
            counts: vec![vec![2, 0, 0], vec![0, 2, 0], vec![1, 1, 0]],
        };
        let m = macro_metrics(&cm).unwrap();
        assert_eq!(m.per_class_precision[2], 0.0);
        assert_eq!(m.per_class_f1[2], 0.0);
        assert!((m.macro_precision - (2.0 / 3.0 + 2.0 / 3.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rank_distribution_shift_and_identity() {
        let base = [0.1, 0.4, 1.3, 2.2, 2.0, -0.3];
        let classes = [1, 1, 2, 3, 3, 1];
        let mut entries: Vec<ScoredEntry> = Vec::new();
        for (&r, &c) in base.iter().zip(&classes) {
            entries.push((Domain::Source, Some(c), r));
            entries.push((Domain::Target, Some(c), r + 0.75));
        }
        entries.push((Domain::Target, None, 9.0));
        let d = rank_distribution_from_scores(&entries, 7).unwrap();
        for c in 1..=3 {
            let gap = d.group(Domain::Target, c).unwrap().mean - d.group(Domain::Source, c).unwrap().mean;
            assert!((gap - 0.75).abs() < 1e-12);
        }
        for g in &d.groups {
            assert_eq!(g.histogram.iter().sum::<u64>() as usize, g.count);
        }
        assert_eq!(d.bin_edges.len(), 8);

        let same: Vec<ScoredEntry> = entries
            .iter()
            .filter(|e| e.0 == Domain::Source)
            .flat_map(|&(_, c, r)| [(Domain::Source, c, r), (Domain::Target, c, r)])
            .collect();
        let d = rank_distribution_from_scores(&same, 5).unwrap();
        let mu: Vec<f64> = (1..=3).map(|c| d.group(Domain::Source, c).unwrap().mean).collect();
        assert_eq!(mean_alignment_gap(&d, &mu), 0.0);
        assert!(d.group(Domain::Source, 4).is_none());
    }

    #[test]
    fn exports_have_headers() {
        let entries = vec![(Domain::Source, Some(2), 0.5), (Domain::Target, None, 1.0)];
        let mut buf = Vec::new();
        write_rank_scores(&entries, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "domain,class,rank_score\nsource,2,0.5\ntarget,-1,1\n");
        let d = rank_distribution_from_scores(&entries, 3).unwrap();
        let mut buf = Vec::new();
        write_histogram(&d, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }

    fn matrix_strategy() -> impl Strategy<Value = ConfusionMatrix> {
        proptest::collection::vec(0u64..20, 16).prop_map(|v| ConfusionMatrix {
            counts: v.chunks(4).map(|c| c.to_vec()).collect(),
        })
    }

    proptest! {
        #[test]
        fn metrics_in_unit_interval(cm in matrix_strategy()) {
            prop_assume!(cm.total() > 0);
            let m = macro_metrics(&cm).unwrap();
            for v in [m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn accuracy_is_support_weighted_recall(cm in matrix_strategy()) {
            prop_assume!(cm.total() > 0);
            let m = macro_metrics(&cm).unwrap();
            let weighted: f64 = (0..4)
                .map(|k| m.per_class_recall[k] * cm.counts[k].iter().sum::<u64>() as f64)
                .sum::<f64>() / cm.total() as f64;
            prop_assert!((weighted - m.accuracy).abs() < 1e-12);
        }

        #[test]
        fn invariant_under_class_relabeling(cm in matrix_strategy(), perm in Just(vec![2usize, 0, 3, 1]).prop_shuffle()) {
            prop_assume!(cm.total() > 0);
            let mut permuted = ConfusionMatrix::zeros(4);
            for i in 0..4 {
                for j in 0..4 {
                    permuted.counts[perm[i]][perm[j]] = cm.counts[i][j];
                }
            }
            let a = macro_metrics(&cm).unwrap();
            let b = macro_metrics(&permuted).unwrap();
            prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
            prop_assert!((a.macro_precision - b.macro_precision).abs() < 1e-12);
            prop_assert!((a.macro_recall - b.macro_recall).abs() < 1e-12);
            prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
        }
    }
}
