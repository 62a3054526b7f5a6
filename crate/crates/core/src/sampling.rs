//! Class-balanced mini-batch draws and ranking-pair formation.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    WithinSource,
    WithinTarget,
    CrossDomain,
}

/// Two labeled samples, referenced by index into the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplePair {
    pub first: usize,
    pub second: usize,
    pub kind: PairKind,
}

/// How labeled source and target batches are combined into cross-domain pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossPairing {
    /// Shuffle both batches and zip them.
    #[default]
    OneToOne,
    /// Every source member with every target member.
    AllPairs,
}

/// Draws batches with replacement, each sample weighted by the inverse
/// frequency of its class so every class is expected equally often.
#[derive(Clone, Debug)]
pub struct ClassWeightedSampler {
    indices: Vec<usize>,
    dist: WeightedIndex<f64>,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl ClassWeightedSampler {
    /// `pool` holds dataset indices of labeled samples.
    pub fn new(
        samples: &[Sample],
        pool: &[usize],
        num_classes: usize,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Input("class-weighted sampling needs at least two classes".into()));
        }
        if batch_size < 2 {
            return Err(Error::Input("batch size must be at least 2".into()));
        }
        let mut counts = vec![0usize; num_classes];
        for &i in pool {
            match samples[i].label {
                Some(y) if (1..=num_classes).contains(&y) => counts[y - 1] += 1,
                Some(y) => return Err(Error::Input(format!("label {y} outside 1..={num_classes}"))),
                None => return Err(Error::Input(format!("sample {i} in a labeled pool is unlabeled"))),
            }
        }
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Input(format!("class {} has no labeled samples", missing + 1)));
        }
        let weights: Vec<f64> = pool
            .iter()
            .map(|&i| 1.0 / counts[samples[i].label.expect("checked") - 1] as f64)
            .collect();
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::Input(e.to_string()))?;
        Ok(Self {
            indices: pool.to_vec(),
            dist,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        (0..self.batch_size)
            .map(|_| self.indices[self.dist.sample(&mut self.rng)])
            .collect()
    }
}

impl Iterator for ClassWeightedSampler {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_batch())
    }
}

pub fn class_weighted_batches(
    samples: &[Sample],
    pool: &[usize],
    num_classes: usize,
    batch_size: usize,
    seed: u64,
) -> Result<ClassWeightedSampler> {
    ClassWeightedSampler::new(samples, pool, num_classes, batch_size, seed)
}

fn check_labeled(samples: &[Sample], batch: &[usize]) -> Result<()> {
    for &i in batch {
        let s = samples
            .get(i)
            .ok_or_else(|| Error::Input(format!("batch index {i} out of range")))?;
        if s.label.is_none() {
            return Err(Error::Protocol(format!("sample {} is unlabeled and cannot be paired", s.id)));
        }
    }
    Ok(())
}

/// Shuffles a single-domain batch and pairs consecutive elements; an odd
/// element left over is dropped.
pub fn make_pairs_within(samples: &[Sample], batch: &[usize], seed: u64) -> Result<Vec<SamplePair>> {
    if batch.len() < 2 {
        return Err(Error::Input("need at least two samples to form a pair".into()));
    }
    check_labeled(samples, batch)?;
    let domain = samples[batch[0]].domain;
    if batch.iter().any(|&i| samples[i].domain != domain) {
        return Err(Error::Input("within-domain batch mixes domains".into()));
    }
    let kind = match domain {
        crate::data::Domain::Source => PairKind::WithinSource,
        crate::data::Domain::Target => PairKind::WithinTarget,
    };
    let mut order = batch.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order
        .chunks_exact(2)
        .map(|c| SamplePair { first: c[0], second: c[1], kind })
        .collect())
}

/// Shuffles both batches and zips them into `min(|S|, |T|)` cross-domain
/// pairs, or forms every source-target combination under
/// [`CrossPairing::AllPairs`].
pub fn make_pairs_cross(
    samples: &[Sample],
    source_batch: &[usize],
    target_batch: &[usize],
    seed: u64,
    pairing: CrossPairing,
) -> Result<Vec<SamplePair>> {
    if source_batch.is_empty() || target_batch.is_empty() {
        return Err(Error::Input("cross-domain pairing needs two non-empty batches".into()));
    }
    check_labeled(samples, source_batch)?;
    check_labeled(samples, target_batch)?;
    use crate::data::Domain;
    if source_batch.iter().any(|&i| samples[i].domain != Domain::Source)
        || target_batch.iter().any(|&i| samples[i].domain != Domain::Target)
    {
        return Err(Error::Input("cross-domain batches must be source and target respectively".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = source_batch.to_vec();
    let mut t = target_batch.to_vec();
    s.shuffle(&mut rng);
    t.shuffle(&mut rng);
    let pairs = match pairing {
        CrossPairing::OneToOne => s
            .iter()
            .zip(&t)
            .map(|(&a, &b)| SamplePair { first: a, second: b, kind: PairKind::CrossDomain })
            .collect(),
        CrossPairing::AllPairs => s
            .iter()
            .flat_map(|&a| {
                t.iter()
                    .map(move |&b| SamplePair { first: a, second: b, kind: PairKind::CrossDomain })
            })
            .collect(),
    };
    Ok(pairs)
}
