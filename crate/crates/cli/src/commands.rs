use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use rankalign_core::checkpoint::TrainingStage;
use rankalign_core::data::{generate_synthetic, load_dataset, split_summary, write_dataset};
use rankalign_core::experiment::{labeled_split, run_ablation, Arm};
use rankalign_core::metrics::{
    evaluate, rank_distribution_from_scores, score_samples, write_histogram, write_rank_scores, MacroMetrics,
};
use rankalign_core::trainer::EpochRecord;
use rankalign_core::{init_model, Checkpoint, DatasetBundle, Domain, Split, SynthConfig, TrainConfig, TrainReport};

use crate::manifest::{write_atomic, RunManifest};
use crate::{CliError, DataArgs, TrainFlags};

fn read_config_value(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(v).expect("serializable");
    text.push('\n');
    text.into_bytes()
}

fn create_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::usage(format!("cannot create {}: {e}", dir.display())))
}

/// Effective training config plus the raw file and the flags that changed it.
struct ResolvedTrain {
    config: TrainConfig,
    file: Option<Value>,
    overrides: BTreeMap<String, Value>,
}

fn resolve_train(flags: &TrainFlags, seed: Option<u64>) -> Result<ResolvedTrain, CliError> {
    let file = flags.config.as_deref().map(read_config_value).transpose()?;
    let mut config: TrainConfig = match &file {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError::usage(format!("training config: {e}")))?,
        None => TrainConfig::default(),
    };
    let mut overrides = BTreeMap::new();
    if let Some(s) = seed {
        config.seed = s;
        overrides.insert("seed".into(), to_value(&s));
    }
    if let Some(l) = flags.lambda {
        config.lambda = l;
        overrides.insert("lambda".into(), to_value(&l));
    }
    if flags.no_cdr {
        config.use_cdr = false;
        overrides.insert("use_cdr".into(), Value::Bool(false));
    }
    if flags.no_cda {
        config.use_cda = false;
        overrides.insert("use_cda".into(), Value::Bool(false));
    }
    if let Some(e) = flags.epochs {
        config.max_epochs = e;
        overrides.insert("max_epochs".into(), to_value(&e));
    }
    if let Some(p) = flags.patience {
        config.patience = p;
        overrides.insert("patience".into(), to_value(&p));
    }
    config.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(ResolvedTrain { config, file, overrides })
}

fn load_data(args: &DataArgs, classes: Option<usize>) -> Result<DatasetBundle, CliError> {
    load_dataset(&args.data, args.classes.or(classes)).map_err(|e| CliError::data(format!("{}: {e}", args.data.display())))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let ck = Checkpoint::load(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    ck.params().map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(ck)
}

/// Runs `work` under a manifest: the manifest is on disk before work starts,
/// outputs are checksummed on success and removed on failure.
fn with_manifest(manifest: &mut RunManifest, work: impl FnOnce() -> Result<(), CliError>) -> Result<(), CliError> {
    manifest.save()?;
    match work().and_then(|_| manifest.complete()) {
        Ok(()) => Ok(()),
        Err(e) => {
            manifest.fail(&e);
            Err(e)
        }
    }
}

pub fn gen_data(config_path: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let file = config_path.map(read_config_value).transpose()?;
    let mut config: SynthConfig = match &file {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError::usage(format!("generator config: {e}")))?,
        None => SynthConfig::default(),
    };
    let mut manifest = RunManifest::new("gen-data", out);
    if let Some(s) = seed {
        config.seed = s;
        manifest.overrides.insert("seed".into(), to_value(&s));
    }
    config.validate().map_err(|e| CliError::usage(e.to_string()))?;

    create_out_dir(out)?;
    manifest.config_file = file;
    manifest.config = to_value(&config);
    manifest.seeds = vec![config.seed];
    if let Some(p) = config_path {
        manifest.input(p)?;
    }
    let data_path = out.join("dataset.csv");
    let summary_path = out.join("split_summary.json");
    manifest.planned_output(&data_path);
    manifest.planned_output(&summary_path);

    with_manifest(&mut manifest, || {
        let bundle = generate_synthetic(&config).map_err(CliError::from_run)?;
        let mut buf = Vec::new();
        write_dataset(&bundle, &mut buf).map_err(CliError::from_run)?;
        write_atomic(&data_path, &buf)?;
        write_atomic(&summary_path, &json_bytes(&split_summary(&bundle)))?;
        eprintln!("wrote {} samples to {}", bundle.samples.len(), data_path.display());
        Ok(())
    })
}

fn write_training_outputs(
    out: &Path,
    ck: &Checkpoint,
    mut report: TrainReport,
    paths: &TrainPaths,
) -> Result<(), CliError> {
    report.checkpoint = Some("checkpoint.json".into());
    write_atomic(&paths.checkpoint, &json_bytes(ck))?;
    write_atomic(&paths.report, &json_bytes(&report))?;
    write_atomic(&paths.log, epoch_log(&report.epochs).as_bytes())?;
    eprintln!(
        "{:?}: best validation macro F1 {:.4} at epoch {} (stopped at {}), outputs in {}",
        report.stage,
        report.best_val_macro_f1,
        report.best_epoch,
        report.stopping_epoch,
        out.display()
    );
    Ok(())
}

fn epoch_log(epochs: &[EpochRecord]) -> String {
    let mut log = String::new();
    for e in epochs {
        log.push_str(&serde_json::to_string(e).expect("serializable"));
        log.push('\n');
    }
    log
}

struct TrainPaths {
    checkpoint: std::path::PathBuf,
    report: std::path::PathBuf,
    log: std::path::PathBuf,
}

fn training_manifest(
    command: &str,
    out: &Path,
    resolved: &ResolvedTrain,
    flags: &TrainFlags,
    inputs: &[&Path],
) -> Result<(RunManifest, TrainPaths), CliError> {
    create_out_dir(out)?;
    let mut m = RunManifest::new(command, out);
    m.config_file = resolved.file.clone();
    m.overrides = resolved.overrides.clone();
    m.config = to_value(&resolved.config);
    m.seeds = vec![resolved.config.seed];
    for p in inputs {
        m.input(p)?;
    }
    if let Some(p) = &flags.config {
        m.input(p)?;
    }
    let paths = TrainPaths {
        checkpoint: out.join("checkpoint.json"),
        report: out.join("report.json"),
        log: out.join("epochs.jsonl"),
    };
    for p in [&paths.checkpoint, &paths.report, &paths.log] {
        m.planned_output(p);
    }
    Ok((m, paths))
}

pub fn pretrain(data: &DataArgs, flags: &TrainFlags, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let resolved = resolve_train(flags, seed)?;
    let bundle = load_data(data, None)?;
    let (mut manifest, paths) = training_manifest("pretrain", out, &resolved, flags, &[&data.data])?;
    with_manifest(&mut manifest, || {
        let config = &resolved.config;
        let init = init_model(&config.model_config(&bundle)).map_err(CliError::from_run)?;
        let (ck, report) = rankalign_core::pretrain(&init, &bundle, config).map_err(CliError::from_run)?;
        write_training_outputs(out, &ck, report, &paths)
    })
}

pub fn adapt(
    data: &DataArgs,
    checkpoint: &Path,
    flags: &TrainFlags,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let resolved = resolve_train(flags, seed)?;
    let pretrained = load_checkpoint(checkpoint)?;
    let bundle = load_data(data, Some(pretrained.model_config.num_classes))?;
    let (mut manifest, paths) = training_manifest("adapt", out, &resolved, flags, &[&data.data, checkpoint])?;
    with_manifest(&mut manifest, || {
        let (ck, report) = rankalign_core::adapt(&pretrained, &bundle, &resolved.config).map_err(CliError::from_run)?;
        write_training_outputs(out, &ck, report, &paths)
    })
}

#[derive(Serialize)]
struct EvalReport {
    checkpoint: String,
    training_stage: TrainingStage,
    domain: Domain,
    split: Split,
    num_samples: usize,
    metrics: MacroMetrics,
    confusion: Vec<Vec<u64>>,
}

pub fn eval(data: &DataArgs, checkpoint: &Path, domain: Domain, split: Split, out: Option<&Path>) -> Result<(), CliError> {
    let ck = load_checkpoint(checkpoint)?;
    let bundle = load_data(data, Some(ck.model_config.num_classes))?;
    let params = ck.params().map_err(CliError::from_run)?;
    let samples = labeled_split(&bundle, domain, split);
    if samples.is_empty() {
        return Err(CliError::data(format!("no labeled {domain} {split} samples in {}", data.data.display())));
    }
    let (cm, metrics) = evaluate(&params, &samples).map_err(CliError::from_run)?;
    let report = EvalReport {
        checkpoint: checkpoint.display().to_string(),
        training_stage: ck.training_stage,
        domain,
        split,
        num_samples: samples.len(),
        metrics,
        confusion: cm.counts,
    };
    let bytes = json_bytes(&report);
    print!("{}", String::from_utf8_lossy(&bytes));

    if let Some(dir) = out {
        create_out_dir(dir)?;
        let mut manifest = RunManifest::new("eval", dir);
        manifest.config = serde_json::json!({ "domain": domain, "split": split });
        manifest.input(&data.data)?;
        manifest.input(checkpoint)?;
        let path = dir.join("metrics.json");
        manifest.planned_output(&path);
        with_manifest(&mut manifest, || write_atomic(&path, &bytes))?;
    }
    Ok(())
}

pub fn export_ranks(data: &DataArgs, checkpoint: &Path, bins: usize, out: &Path) -> Result<(), CliError> {
    if bins == 0 {
        return Err(CliError::usage("--bins must be at least 1"));
    }
    let ck = load_checkpoint(checkpoint)?;
    let bundle = load_data(data, Some(ck.model_config.num_classes))?;
    let params = ck.params().map_err(CliError::from_run)?;

    create_out_dir(out)?;
    let mut manifest = RunManifest::new("export-ranks", out);
    manifest.config = serde_json::json!({ "bins": bins });
    manifest.input(&data.data)?;
    manifest.input(checkpoint)?;
    let ranks_path = out.join("rank_scores.csv");
    let hist_path = out.join("rank_histogram.csv");
    manifest.planned_output(&ranks_path);
    manifest.planned_output(&hist_path);

    with_manifest(&mut manifest, || {
        let all: Vec<_> = bundle.samples.iter().collect();
        let entries = score_samples(&params, &all).map_err(CliError::from_run)?;
        let dist = rank_distribution_from_scores(&entries, bins).map_err(CliError::from_run)?;
        let mut ranks = Vec::new();
        write_rank_scores(&entries, &mut ranks).map_err(CliError::from_run)?;
        let mut hist = Vec::new();
        write_histogram(&dist, &mut hist).map_err(CliError::from_run)?;
        write_atomic(&ranks_path, &ranks)?;
        write_atomic(&hist_path, &hist)?;
        eprintln!("exported {} rank scores to {}", entries.len(), ranks_path.display());
        Ok(())
    })
}

pub fn ablation(data: &DataArgs, flags: &TrainFlags, seeds: &[u64], out: &Path) -> Result<(), CliError> {
    if seeds.is_empty() {
        return Err(CliError::usage("at least one seed is required"));
    }
    if seeds.len() < 2 {
        eprintln!("warning: a single seed gives no spread estimate");
    }
    let resolved = resolve_train(flags, None)?;
    let bundle = load_data(data, None)?;
    create_out_dir(out)?;
    let mut manifest = RunManifest::new("ablation", out);
    manifest.config_file = resolved.file.clone();
    manifest.overrides = resolved.overrides.clone();
    manifest.config = to_value(&resolved.config);
    manifest.seeds = seeds.to_vec();
    manifest.input(&data.data)?;
    if let Some(p) = &flags.config {
        manifest.input(p)?;
    }
    let table_path = out.join("ablation.json");
    manifest.planned_output(&table_path);

    with_manifest(&mut manifest, || {
        let table = run_ablation(&bundle, &resolved.config, seeds).map_err(CliError::from_run)?;
        write_atomic(&table_path, &json_bytes(&table))?;
        println!("{:<8} {:>5} {:>5} {:>17} {:>17} {:>17} {:>17}", "arm", "CDR", "CDA", "Accuracy", "mP", "mR", "mF1");
        for arm in Arm::ALL {
            let r = table.row(arm).expect("every arm summarized");
            let cell = |m: &rankalign_core::experiment::MeanSd| format!("{:.4} ± {:.4}", m.mean, m.sd);
            println!(
                "{:<8} {:>5} {:>5} {:>17} {:>17} {:>17} {:>17}",
                arm.name(),
                r.cdr,
                r.cda,
                cell(&r.accuracy),
                cell(&r.macro_precision),
                cell(&r.macro_recall),
                cell(&r.macro_f1)
            );
            if r.failed > 0 {
                println!("         {} of {} runs failed", r.failed, r.failed + r.completed);
            }
        }
        Ok(())
    })
}
