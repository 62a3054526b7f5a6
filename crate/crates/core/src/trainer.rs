//! Two-stage optimisation: source pretraining with classification and
//! within-source ranking, then adaptation with cross-domain ranking and
//! rank-distribution alignment.
//!
//! Adaptation refreshes, once per refit period and with the current model,
//! the class prototypes (mean source rank score per class) and the ordered
//! mixture over unlabeled-target rank scores. Within an epoch the mixture is
//! fixed but soft labels of unlabeled samples are recomputed every step from
//! their current scores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, TrainingStage};
use crate::data::{DatasetBundle, Domain, Sample, Split};
use crate::error::{Error, Result};
use crate::gmm::{fit_gmm, order_components, responsibilities, Gmm1d};
use crate::losses::{total_loss_grad, LossTerms, ScoredSample, SoftLabelVector};
use crate::metrics::evaluate;
use crate::model::{forward, ModelParams};
use crate::optim::Adam;
use crate::sampling::{class_weighted_batches, make_pairs_cross, make_pairs_within, CrossPairing};

const PRETRAIN_STREAM: u64 = 0x5052_4554;
const ADAPT_STREAM: u64 = 0x4144_4150;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden_dims: Vec<usize>,
    pub learning_rate: f64,
    /// Labeled batch size during source pretraining.
    pub pretrain_batch: usize,
    pub source_batch: usize,
    pub target_batch: usize,
    pub unlabeled_batch: usize,
    /// Optimiser steps per epoch; derived from the data size when absent.
    pub steps_per_epoch: Option<usize>,
    pub max_epochs: usize,
    pub patience: usize,
    pub lambda: f64,
    pub gmm_refit_period: usize,
    pub gmm_max_iters: usize,
    pub gmm_tol: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub use_cdr: bool,
    pub use_cda: bool,
    pub within_source: bool,
    pub within_target: bool,
    pub cross_pairing: CrossPairing,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![32, 32],
            learning_rate: 1e-3,
            pretrain_batch: 32,
            source_batch: 16,
            target_batch: 16,
            unlabeled_batch: 64,
            steps_per_epoch: None,
            max_epochs: 200,
            patience: 10,
            lambda: 1e-5,
            gmm_refit_period: 1,
            gmm_max_iters: crate::gmm::DEFAULT_MAX_ITERS,
            gmm_tol: crate::gmm::DEFAULT_TOL,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            use_cdr: true,
            use_cda: true,
            within_source: true,
            within_target: true,
            cross_pairing: CrossPairing::OneToOne,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.max_epochs < 1 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be nonnegative".into()));
        }
        if self.gmm_refit_period < 1 {
            return Err(Error::Config("gmm_refit_period must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("moment coefficients must lie in [0, 1)".into()));
        }
        for (name, b) in [
            ("pretrain_batch", self.pretrain_batch),
            ("source_batch", self.source_batch),
            ("target_batch", self.target_batch),
        ] {
            if b < 2 {
                return Err(Error::Config(format!("{name} must be at least 2")));
            }
        }
        if self.unlabeled_batch < 1 {
            return Err(Error::Config("unlabeled_batch must be at least 1".into()));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::Config("steps_per_epoch must be positive".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, bundle: &DatasetBundle) -> crate::model::ModelConfig {
        crate::model::ModelConfig {
            input_dim: bundle.input_dim,
            hidden_dims: self.hidden_dims.clone(),
            num_classes: bundle.num_classes,
            seed: self.seed,
        }
    }
}

/// Mean source rank score per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prototypes {
    pub mu: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn compute_prototypes(params: &ModelParams, source: &[&Sample]) -> Result<Prototypes> {
    let scores = source
        .iter()
        .map(|s| forward(params, &s.features).map(|o| o.rank_score))
        .collect::<Result<Vec<f64>>>()?;
    let labels: Vec<usize> = source
        .iter()
        .map(|s| {
            s.label
                .ok_or_else(|| Error::Protocol(format!("prototype sample {} is unlabeled", s.id)))
        })
        .collect::<Result<_>>()?;
    prototypes_from_scores(&scores, &labels, params.num_classes())
}

pub fn prototypes_from_scores(scores: &[f64], labels: &[usize], num_classes: usize) -> Result<Prototypes> {
    let mut sums = vec![0.0; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (&r, &y) in scores.iter().zip(labels) {
        if y < 1 || y > num_classes {
            return Err(Error::Input(format!("class {y} outside 1..={num_classes}")));
        }
        sums[y - 1] += r;
        counts[y - 1] += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Protocol(format!("class {} has no source samples", k + 1)));
    }
    let mu = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    Ok(Prototypes { mu, counts })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub classification: f64,
    pub ranking: f64,
    pub alignment: f64,
    pub total: f64,
    pub val_macro_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gmm_log_likelihood: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prototypes: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: TrainingStage,
    pub epochs: Vec<EpochRecord>,
    pub best_val_macro_f1: f64,
    pub best_epoch: usize,
    pub stopping_epoch: usize,
    /// Where the selected checkpoint was written, when it was.
    #[serde(default)]
    pub checkpoint: Option<String>,
}

/// One optimisation step's worth of data. `pairs` index into `members`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch {
    pub members: Vec<usize>,
    pub pairs: Vec<(usize, usize)>,
}

/// Loss terms and parameter gradient of one batch. With `soft_labels`, every
/// member takes part in the alignment term with the given weights; without,
/// unlabeled members contribute nothing.
pub fn batch_objective(
    params: &ModelParams,
    samples: &[Sample],
    batch: &TrainBatch,
    soft_labels: Option<&[SoftLabelVector]>,
    mu: &[f64],
    lambda: f64,
) -> Result<(LossTerms, ModelParams)> {
    if let Some(w) = soft_labels {
        if w.len() != batch.members.len() {
            return Err(Error::Shape("one soft label per batch member required".into()));
        }
    }
    let mut traces = Vec::with_capacity(batch.members.len());
    let mut scored = Vec::with_capacity(batch.members.len());
    for (pos, &i) in batch.members.iter().enumerate() {
        let t = params.trace(&samples[i].features)?;
        scored.push(ScoredSample {
            class_probs: t.output.class_probs.clone(),
            rank_score: t.output.rank_score,
            label: samples[i].label,
            soft_label: soft_labels.map(|w| w[pos].clone()),
        });
        traces.push(t);
    }
    let (terms, out_grads) = total_loss_grad(&scored, &batch.pairs, mu, lambda)?;
    let mut grad = params.zeros_like();
    for (t, g) in traces.iter().zip(&out_grads) {
        if g.drank != 0.0 || g.dlogits.iter().any(|&d| d != 0.0) {
            params.backward(t, &g.dlogits, g.drank, &mut grad);
        }
    }
    Ok((terms, grad))
}

/// Soft labels for batch members: one-hot for labeled samples, mixture
/// responsibilities at the current rank score for unlabeled ones.
pub fn soft_labels_for(
    params: &ModelParams,
    samples: &[Sample],
    members: &[usize],
    gmm: &Gmm1d,
) -> Result<Vec<SoftLabelVector>> {
    members
        .iter()
        .map(|&i| match samples[i].label {
            Some(y) => SoftLabelVector::one_hot(y, params.num_classes()),
            None => responsibilities(gmm, forward(params, &samples[i].features)?.rank_score),
        })
        .collect()
}

fn validation_f1(params: &ModelParams, bundle: &DatasetBundle, domain: Domain) -> Result<f64> {
    let val: Vec<&Sample> = bundle
        .samples
        .iter()
        .filter(|s| s.domain == domain && s.split == Split::Val && s.is_labeled())
        .collect();
    if val.is_empty() {
        return Err(Error::Protocol(format!("no labeled {domain} validation samples")));
    }
    Ok(evaluate(params, &val)?.1.macro_f1)
}

fn params_finite(params: &ModelParams, epoch: usize) -> Result<()> {
    if params.is_finite() {
        Ok(())
    } else {
        Err(Error::Training { epoch, message: "parameters became non-finite".into() })
    }
}

fn check_terms(terms: &LossTerms, epoch: usize) -> Result<()> {
    if terms.total.is_finite() {
        Ok(())
    } else {
        Err(Error::Training { epoch, message: format!("loss is {}", terms.total) })
    }
}

#[derive(Default)]
struct Running {
    terms: LossTerms,
    steps: usize,
}

impl Running {
    fn add(&mut self, t: &LossTerms) {
        self.terms.classification += t.classification;
        self.terms.ranking += t.ranking;
        self.terms.alignment += t.alignment;
        self.terms.total += t.total;
        self.steps += 1;
    }

    fn mean(&self) -> LossTerms {
        let n = self.steps.max(1) as f64;
        LossTerms {
            classification: self.terms.classification / n,
            ranking: self.terms.ranking / n,
            alignment: self.terms.alignment / n,
            total: self.terms.total / n,
        }
    }
}

/// Tracks the best validation score and the patience counter.
struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    best_params: Option<ModelParams>,
    stale: usize,
}

impl EarlyStopping {
    fn new(patience: usize) -> Self {
        Self { patience, best: f64::NEG_INFINITY, best_epoch: 0, best_params: None, stale: 0 }
    }

    /// Returns true when training should stop.
    fn observe(&mut self, epoch: usize, score: f64, params: &ModelParams) -> bool {
        if score > self.best {
            self.best = score;
            self.best_epoch = epoch;
            self.best_params = Some(params.clone());
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }
}

fn labeled_pool(bundle: &DatasetBundle, domain: Domain) -> Vec<usize> {
    bundle.indices(domain, Split::Train, Some(true))
}

/// Source pretraining: batch-mean cross-entropy plus within-source ranking,
/// early-stopped on source validation macro F1.
pub fn pretrain(
    initial: &ModelParams,
    bundle: &DatasetBundle,
    config: &TrainConfig,
) -> Result<(Checkpoint, TrainReport)> {
    config.validate()?;
    let samples = &bundle.samples;
    let pool = labeled_pool(bundle, Domain::Source);
    if pool.is_empty() {
        return Err(Error::Protocol("no labeled source training samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ PRETRAIN_STREAM);
    let mut sampler = class_weighted_batches(
        samples,
        &pool,
        bundle.num_classes,
        config.pretrain_batch,
        rng.random(),
    )?;
    let steps = config
        .steps_per_epoch
        .unwrap_or_else(|| pool.len().div_ceil(config.pretrain_batch));

    let mut params = initial.clone();
    let mut opt = Adam::new(
        params.num_parameters(),
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.adam_eps,
    );
    let mut stopper = EarlyStopping::new(config.patience);
    let mut epochs = Vec::new();

    for epoch in 1..=config.max_epochs {
        let mut running = Running::default();
        for _ in 0..steps {
            let members = sampler.next_batch();
            let local: Vec<usize> = (0..members.len()).collect();
            let pair_seed: u64 = rng.random();
            let pairs = within_pairs(samples, &members, &local, pair_seed)?;
            let batch = TrainBatch { members, pairs };
            let (terms, grad) = batch_objective(&params, samples, &batch, None, &[], 0.0)?;
            check_terms(&terms, epoch)?;
            opt.step(&mut params, &grad);
            params_finite(&params, epoch)?;
            running.add(&terms);
        }
        let val = validation_f1(&params, bundle, Domain::Source)?;
        let mean = running.mean();
        epochs.push(EpochRecord {
            epoch,
            steps: running.steps,
            classification: mean.classification,
            ranking: mean.ranking,
            alignment: mean.alignment,
            total: mean.total,
            val_macro_f1: val,
            gmm_log_likelihood: None,
            prototypes: None,
        });
        if stopper.observe(epoch, val, &params) {
            break;
        }
    }

    let best = stopper.best_params.expect("at least one epoch ran");
    let ck = Checkpoint::new(&best, TrainingStage::Pretrained, config.seed, stopper.best, stopper.best_epoch);
    let report = TrainReport {
        stage: TrainingStage::Pretrained,
        stopping_epoch: epochs.len(),
        epochs,
        best_val_macro_f1: stopper.best,
        best_epoch: stopper.best_epoch,
        checkpoint: None,
    };
    Ok((ck, report))
}

/// Pairs positions `local` of `members` (all in one domain) with the
/// within-domain rule, translating dataset indices back to batch positions.
fn within_pairs(samples: &[Sample], members: &[usize], local: &[usize], seed: u64) -> Result<Vec<(usize, usize)>> {
    let ids: Vec<usize> = local.to_vec();
    // Pair over positions so repeated draws of one sample stay distinct.
    let proxy: Vec<Sample> = ids
        .iter()
        .map(|&p| samples[members[p]].clone())
        .collect();
    let positions: Vec<usize> = (0..ids.len()).collect();
    Ok(make_pairs_within(&proxy, &positions, seed)?
        .into_iter()
        .map(|p| (ids[p.first], ids[p.second]))
        .collect())
}

fn cross_pairs(
    samples: &[Sample],
    members: &[usize],
    source_local: &[usize],
    target_local: &[usize],
    seed: u64,
    pairing: CrossPairing,
) -> Result<Vec<(usize, usize)>> {
    let proxy: Vec<Sample> = source_local
        .iter()
        .chain(target_local)
        .map(|&p| samples[members[p]].clone())
        .collect();
    let ns = source_local.len();
    let s_pos: Vec<usize> = (0..ns).collect();
    let t_pos: Vec<usize> = (ns..proxy.len()).collect();
    let to_local = |p: usize| if p < ns { source_local[p] } else { target_local[p - ns] };
    Ok(make_pairs_cross(&proxy, &s_pos, &t_pos, seed, pairing)?
        .into_iter()
        .map(|p| (to_local(p.first), to_local(p.second)))
        .collect())
}

/// Everything drawn for one adaptation step. Draws happen regardless of the
/// ablation flags so every arm consumes the same random stream.
#[derive(Clone, Debug)]
pub struct AdaptDraw {
    pub batch: TrainBatch,
    /// Batch positions of the within-source, within-target and cross pairs.
    pub source_positions: Vec<usize>,
    pub target_positions: Vec<usize>,
    pub unlabeled_positions: Vec<usize>,
}

pub struct AdaptBatcher<'a> {
    samples: &'a [Sample],
    config: &'a TrainConfig,
    source: crate::sampling::ClassWeightedSampler,
    target: crate::sampling::ClassWeightedSampler,
    unlabeled: Vec<usize>,
    rng: ChaCha8Rng,
}

impl<'a> AdaptBatcher<'a> {
    pub fn new(bundle: &'a DatasetBundle, config: &'a TrainConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let samples = &bundle.samples;
        let source_pool = labeled_pool(bundle, Domain::Source);
        let target_pool = labeled_pool(bundle, Domain::Target);
        if source_pool.is_empty() || target_pool.is_empty() {
            return Err(Error::Protocol("adaptation needs labeled source and target training samples".into()));
        }
        let unlabeled = bundle.indices(Domain::Target, Split::Train, Some(false));
        let source = class_weighted_batches(samples, &source_pool, bundle.num_classes, config.source_batch, rng.random())?;
        let target = class_weighted_batches(samples, &target_pool, bundle.num_classes, config.target_batch, rng.random())?;
        Ok(Self {
            samples,
            config,
            source,
            target,
            unlabeled,
            rng: ChaCha8Rng::seed_from_u64(rng.random()),
        })
    }

    pub fn next_draw(&mut self) -> Result<AdaptDraw> {
        let s = self.source.next_batch();
        let t = self.target.next_batch();
        let u: Vec<usize> = if self.unlabeled.is_empty() {
            Vec::new()
        } else {
            (0..self.config.unlabeled_batch)
                .map(|_| self.unlabeled[self.rng.random_range(0..self.unlabeled.len())])
                .collect()
        };
        let seeds: [u64; 3] = [self.rng.random(), self.rng.random(), self.rng.random()];

        let mut members = s.clone();
        members.extend(&t);
        members.extend(&u);
        let source_positions: Vec<usize> = (0..s.len()).collect();
        let target_positions: Vec<usize> = (s.len()..s.len() + t.len()).collect();
        let unlabeled_positions: Vec<usize> = (s.len() + t.len()..members.len()).collect();

        let mut pairs = Vec::new();
        if self.config.within_source {
            pairs.extend(within_pairs(self.samples, &members, &source_positions, seeds[0])?);
        }
        if self.config.within_target {
            pairs.extend(within_pairs(self.samples, &members, &target_positions, seeds[1])?);
        }
        if self.config.use_cdr {
            pairs.extend(cross_pairs(
                self.samples,
                &members,
                &source_positions,
                &target_positions,
                seeds[2],
                self.config.cross_pairing,
            )?);
        }
        Ok(AdaptDraw {
            batch: TrainBatch { members, pairs },
            source_positions,
            target_positions,
            unlabeled_positions,
        })
    }
}

/// Per-epoch alignment targets.
#[derive(Clone, Debug)]
pub struct AlignmentTargets {
    pub prototypes: Prototypes,
    pub gmm: Gmm1d,
}

pub fn alignment_targets(params: &ModelParams, bundle: &DatasetBundle, config: &TrainConfig) -> Result<AlignmentTargets> {
    let source: Vec<&Sample> = labeled_pool(bundle, Domain::Source)
        .into_iter()
        .map(|i| &bundle.samples[i])
        .collect();
    let prototypes = compute_prototypes(params, &source)?;
    let scores = bundle
        .indices(Domain::Target, Split::Train, Some(false))
        .into_iter()
        .map(|i| forward(params, &bundle.samples[i].features).map(|o| o.rank_score))
        .collect::<Result<Vec<f64>>>()?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerical("non-finite rank score on unlabeled target data".into()));
    }
    let gmm = order_components(&fit_gmm(
        &scores,
        bundle.num_classes,
        config.gmm_max_iters,
        config.gmm_tol,
        config.seed,
    )?);
    Ok(AlignmentTargets { prototypes, gmm })
}

/// Adaptation with cross-domain ranking and distribution alignment,
/// early-stopped on target validation macro F1.
pub fn adapt(
    pretrained: &Checkpoint,
    bundle: &DatasetBundle,
    config: &TrainConfig,
) -> Result<(Checkpoint, TrainReport)> {
    config.validate()?;
    let samples = &bundle.samples;
    let mut params = pretrained.params()?;
    if params.num_classes() != bundle.num_classes || params.input_dim() != bundle.input_dim {
        return Err(Error::Shape("checkpoint does not match the dataset dimensions".into()));
    }
    let n_unlabeled = bundle.indices(Domain::Target, Split::Train, Some(false)).len();
    if config.use_cda && n_unlabeled < bundle.num_classes {
        return Err(Error::Protocol(format!(
            "distribution alignment needs unlabeled target samples, found {n_unlabeled}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ ADAPT_STREAM);
    let mut batcher = AdaptBatcher::new(bundle, config, &mut rng)?;
    let steps = config.steps_per_epoch.unwrap_or_else(|| {
        if n_unlabeled > 0 {
            n_unlabeled.div_ceil(config.unlabeled_batch)
        } else {
            let labeled = labeled_pool(bundle, Domain::Source).len() + labeled_pool(bundle, Domain::Target).len();
            labeled.div_ceil(config.source_batch + config.target_batch)
        }
    });
    let lambda = if config.use_cda { config.lambda } else { 0.0 };

    let mut opt = Adam::new(
        params.num_parameters(),
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.adam_eps,
    );
    let mut stopper = EarlyStopping::new(config.patience);
    let mut epochs = Vec::new();
    let mut targets: Option<AlignmentTargets> = None;
    let mut best_targets: Option<AlignmentTargets> = None;

    for epoch in 1..=config.max_epochs {
        let refreshed = config.use_cda && (epoch - 1) % config.gmm_refit_period == 0;
        if refreshed {
            targets = Some(alignment_targets(&params, bundle, config).map_err(|e| match e {
                Error::Numerical(message) => Error::Training { epoch, message },
                other => other,
            })?);
        }
        let mut running = Running::default();
        for _ in 0..steps {
            let draw = batcher.next_draw()?;
            let (terms, grad) = match &targets {
                Some(t) => {
                    let w = soft_labels_for(&params, samples, &draw.batch.members, &t.gmm).map_err(|e| match e {
                        Error::Numerical(message) => Error::Training { epoch, message },
                        other => other,
                    })?;
                    batch_objective(&params, samples, &draw.batch, Some(&w), &t.prototypes.mu, lambda)?
                }
                None => {
                    // Unlabeled members carry no loss without alignment.
                    let mut batch = draw.batch.clone();
                    batch.members.truncate(draw.target_positions.last().map_or(0, |p| p + 1));
                    batch_objective(&params, samples, &batch, None, &[], 0.0)?
                }
            };
            check_terms(&terms, epoch)?;
            opt.step(&mut params, &grad);
            params_finite(&params, epoch)?;
            running.add(&terms);
        }
        let val = validation_f1(&params, bundle, Domain::Target)?;
        let mean = running.mean();
        epochs.push(EpochRecord {
            epoch,
            steps: running.steps,
            classification: mean.classification,
            ranking: mean.ranking,
            alignment: mean.alignment,
            total: mean.total,
            val_macro_f1: val,
            gmm_log_likelihood: targets.as_ref().filter(|_| refreshed).map(|t| t.gmm.log_likelihood),
            prototypes: targets.as_ref().filter(|_| refreshed).map(|t| t.prototypes.mu.clone()),
        });
        let improved = val > stopper.best;
        let stop = stopper.observe(epoch, val, &params);
        if improved {
            best_targets = targets.clone();
        }
        if stop {
            break;
        }
    }

    let best = stopper.best_params.expect("at least one epoch ran");
    let mut ck = Checkpoint::new(&best, TrainingStage::Adapted, config.seed, stopper.best, stopper.best_epoch);
    if let Some(t) = best_targets {
        ck.prototypes = Some(t.prototypes.mu);
        ck.gmm = Some(t.gmm);
    }
    let report = TrainReport {
        stage: TrainingStage::Adapted,
        stopping_epoch: epochs.len(),
        epochs,
        best_val_macro_f1: stopper.best,
        best_epoch: stopper.best_epoch,
        checkpoint: None,
    };
    Ok((ck, report))
}

/// Validation macro F1 of a checkpoint on the split used to select it.
pub fn checkpoint_validation_f1(ck: &Checkpoint, bundle: &DatasetBundle) -> Result<f64> {
    let domain = match ck.training_stage {
        TrainingStage::Pretrained => Domain::Source,
        TrainingStage::Adapted => Domain::Target,
    };
    validation_f1(&ck.params()?, bundle, domain)
}
