use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rankalign_core::data::generate_synthetic;
use rankalign_core::experiment::{run_ablation, Arm};
use rankalign_core::losses::SoftLabelVector;
use rankalign_core::trainer::{
    alignment_targets, batch_objective, checkpoint_validation_f1, soft_labels_for, AdaptBatcher, TrainBatch,
};
use rankalign_core::{
    adapt, init_model, pretrain, Checkpoint, DatasetBundle, Domain, Error, Split, SynthConfig, TrainConfig,
    TrainingStage,
};

fn small_bundle() -> DatasetBundle {
    generate_synthetic(&SynthConfig {
        source_per_class: 60,
        target_unlabeled: 200,
        target_test_per_class: 20,
        input_dim: 8,
        seed: 5,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        hidden_dims: vec![12, 8],
        max_epochs: 6,
        patience: 3,
        lambda: 0.1,
        seed: 2,
        ..TrainConfig::default()
    }
}

fn pretrained(bundle: &DatasetBundle, config: &TrainConfig) -> Checkpoint {
    let init = init_model(&config.model_config(bundle)).unwrap();
    pretrain(&init, bundle, config).unwrap().0
}

#[test]
fn zero_lambda_without_cross_ranking_matches_pretraining_objective() {
    let bundle = small_bundle();
    let config = TrainConfig { use_cdr: false, use_cda: true, lambda: 0.0, ..small_config() };
    let ck = pretrained(&bundle, &config);
    let params = ck.params().unwrap();
    let targets = alignment_targets(&params, &bundle, &config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut batcher = AdaptBatcher::new(&bundle, &config, &mut rng).unwrap();
    for _ in 0..10 {
        let draw = batcher.next_draw().unwrap();
        let w = soft_labels_for(&params, &bundle.samples, &draw.batch.members, &targets.gmm).unwrap();
        let (adapt_terms, adapt_grad) =
            batch_objective(&params, &bundle.samples, &draw.batch, Some(&w), &targets.prototypes.mu, 0.0).unwrap();

        // Same labeled members and pairs, scored as in source pretraining.
        let labeled = draw.target_positions.last().unwrap() + 1;
        let plain = TrainBatch { members: draw.batch.members[..labeled].to_vec(), pairs: draw.batch.pairs.clone() };
        let (pre_terms, pre_grad) = batch_objective(&params, &bundle.samples, &plain, None, &[], 0.0).unwrap();

        assert!((adapt_terms.total - pre_terms.total).abs() <= 1e-12);
        for (a, b) in adapt_grad.to_flat().iter().zip(pre_grad.to_flat()) {
            assert!((a - b).abs() <= 1e-12);
        }
        let sources = draw.source_positions.len();
        assert!(draw.batch.pairs.iter().all(|&(i, j)| (i < sources) == (j < sources)));
    }
}

#[test]
fn labeled_members_get_one_hot_soft_labels() {
    let bundle = small_bundle();
    let config = small_config();
    let params = pretrained(&bundle, &config).params().unwrap();
    let targets = alignment_targets(&params, &bundle, &config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draw = AdaptBatcher::new(&bundle, &config, &mut rng).unwrap().next_draw().unwrap();
    let w = soft_labels_for(&params, &bundle.samples, &draw.batch.members, &targets.gmm).unwrap();
    for (pos, &i) in draw.batch.members.iter().enumerate() {
        match bundle.samples[i].label {
            Some(y) => assert_eq!(w[pos], SoftLabelVector::one_hot(y, 4).unwrap()),
            None => assert!(draw.unlabeled_positions.contains(&pos)),
        }
    }
}

#[test]
fn reloaded_checkpoints_reproduce_validation_scores() {
    let bundle = small_bundle();
    let config = small_config();
    let dir = tempfile::tempdir().unwrap();

    let pre = pretrained(&bundle, &config);
    let path = dir.path().join("pretrained.json");
    pre.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, pre);
    assert_eq!(checkpoint_validation_f1(&back, &bundle).unwrap(), pre.validation_macro_f1);

    let (adapted, report) = adapt(&pre, &bundle, &config).unwrap();
    let path = dir.path().join("adapted.json");
    adapted.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.training_stage, TrainingStage::Adapted);
    assert_eq!(checkpoint_validation_f1(&back, &bundle).unwrap(), report.best_val_macro_f1);
    assert_eq!(back.epoch, report.best_epoch);
    assert!(back.gmm.is_some() && back.prototypes.is_some());
}

#[test]
fn training_is_deterministic() {
    let bundle = small_bundle();
    let config = small_config();
    let init = init_model(&config.model_config(&bundle)).unwrap();
    let (ck_a, rep_a) = pretrain(&init, &bundle, &config).unwrap();
    let (ck_b, rep_b) = pretrain(&init, &bundle, &config).unwrap();
    assert_eq!(ck_a.to_json().unwrap(), ck_b.to_json().unwrap());
    assert_eq!(serde_json::to_string(&rep_a).unwrap(), serde_json::to_string(&rep_b).unwrap());

    let (ad_a, ar_a) = adapt(&ck_a, &bundle, &config).unwrap();
    let (ad_b, ar_b) = adapt(&ck_a, &bundle, &config).unwrap();
    assert_eq!(ad_a.to_json().unwrap(), ad_b.to_json().unwrap());
    assert_eq!(serde_json::to_string(&ar_a).unwrap(), serde_json::to_string(&ar_b).unwrap());

    let other = TrainConfig { seed: 3, ..config.clone() };
    let (ad_c, _) = adapt(&ck_a, &bundle, &other).unwrap();
    assert_ne!(ad_a.layers, ad_c.layers);
}

#[test]
fn reports_respect_epoch_budget_and_record_refits() {
    let bundle = small_bundle();
    let config = TrainConfig { gmm_refit_period: 2, ..small_config() };
    let pre = pretrained(&bundle, &config);
    let (_, report) = adapt(&pre, &bundle, &config).unwrap();
    assert!(report.stopping_epoch <= config.max_epochs);
    assert!(report.best_epoch >= 1 && report.best_epoch <= report.stopping_epoch);
    assert_eq!(report.epochs.len(), report.stopping_epoch);
    for e in &report.epochs {
        let refit = (e.epoch - 1) % 2 == 0;
        assert_eq!(e.gmm_log_likelihood.is_some(), refit, "epoch {}", e.epoch);
        assert!(e.total.is_finite() && e.alignment >= 0.0);
    }
    let best = report.epochs.iter().map(|e| e.val_macro_f1).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best, report.best_val_macro_f1);
}

#[test]
fn alignment_without_unlabeled_samples_is_a_protocol_error() {
    let mut bundle = small_bundle();
    bundle.samples.retain(|s| s.is_labeled());
    let config = small_config();
    let pre = pretrained(&bundle, &config);
    assert!(matches!(adapt(&pre, &bundle, &config), Err(Error::Protocol(_))));
    let no_cda = TrainConfig { use_cda: false, ..config };
    assert!(adapt(&pre, &bundle, &no_cda).is_ok());
}

#[test]
fn ablation_shares_pretraining_and_records_every_run() {
    let bundle = small_bundle();
    let config = TrainConfig { max_epochs: 3, ..small_config() };
    let table = run_ablation(&bundle, &config, &[0, 1]).unwrap();
    assert_eq!(table.runs.len(), 8);
    assert_eq!(table.pretrained.len(), 2);
    for arm in Arm::ALL {
        let row = table.row(arm).unwrap();
        assert_eq!(row.completed + row.failed, 2);
    }
    let json = serde_json::to_value(&table.rows[0]).unwrap();
    for key in ["CDR", "CDA", "Accuracy", "mP", "mR", "mF1"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    let target_val = bundle.indices(Domain::Target, Split::Val, Some(true)).len();
    assert_eq!(target_val, 40);
}
