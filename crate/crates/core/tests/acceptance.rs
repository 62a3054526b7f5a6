//! Acceptance checks, one line per criterion. Exits non-zero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use rankalign_core::data::generate_synthetic;
use rankalign_core::experiment::{run_ablation, AblationTable, Arm};
use rankalign_core::gmm::{fit_gmm, order_components, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use rankalign_core::losses::{
    cda_loss, cda_loss_grad, cross_entropy, cross_entropy_logit_grad, ranking_loss, ranking_loss_grad,
    RelativeLabel, SoftLabelVector,
};
use rankalign_core::model::grad_check;
use rankalign_core::trainer::{batch_objective, TrainBatch};
use rankalign_core::{init_model, Domain, ModelConfig, ModelParams, Sample, Split, SynthConfig, TrainConfig};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const FD_STEP: f64 = 1e-5;
const GRAD_TRIALS: usize = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let start = Instant::now();
    let mut out = f();
    let elapsed = start.elapsed();
    if let Some(limit) = limit {
        if elapsed > limit {
            out.pass = false;
            out.detail = format!("{}; exceeded {:?}", out.detail, limit);
        }
    }
    (out, elapsed)
}

// ---- 1. gradients ---------------------------------------------------------

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn random_soft_label(rng: &mut ChaCha8Rng, c: usize) -> SoftLabelVector {
    let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|v| v / total).collect();
    // Absorb rounding so the weights sum to one.
    let rest: f64 = w[1..].iter().sum();
    w[0] = 1.0 - rest;
    SoftLabelVector::new(w).expect("valid soft label")
}

fn random_model(rng: &mut ChaCha8Rng) -> ModelParams {
    let config = ModelConfig {
        input_dim: 5,
        hidden_dims: vec![7, 6],
        num_classes: 4,
        seed: rng.random(),
    };
    let mut params = init_model(&config).unwrap();
    // Move biases off zero so the trial is not a special point.
    let mut flat = params.to_flat();
    for v in flat.iter_mut() {
        *v += rng.random_range(-0.2..0.2);
    }
    params.set_flat(&flat).unwrap();
    params
}

fn ranking_trial(rng: &mut ChaCha8Rng) -> f64 {
    let params = random_model(rng);
    let xi = random_vec(rng, 5, 2.0);
    let xj = random_vec(rng, 5, 2.0);
    let o = [RelativeLabel::LOWER, RelativeLabel::TIE, RelativeLabel::HIGHER][rng.random_range(0..3)];
    grad_check(&params, FD_STEP, |p: &ModelParams| {
        let (ti, tj) = (p.trace(&xi)?, p.trace(&xj)?);
        let loss = ranking_loss(ti.output.rank_score, tj.output.rank_score, o);
        let (_, d) = ranking_loss_grad(ti.output.rank_score, tj.output.rank_score, o);
        let mut g = p.zeros_like();
        p.backward(&ti, &[0.0; 4], d, &mut g);
        p.backward(&tj, &[0.0; 4], -d, &mut g);
        Ok((loss, g))
    })
    .unwrap()
}

fn cross_entropy_trial(rng: &mut ChaCha8Rng) -> f64 {
    let params = random_model(rng);
    let x = random_vec(rng, 5, 2.0);
    let y = rng.random_range(1..=4);
    grad_check(&params, FD_STEP, |p: &ModelParams| {
        let t = p.trace(&x)?;
        let loss = cross_entropy(&t.output.class_probs, y)?;
        let dl = cross_entropy_logit_grad(&t.output.class_probs, y);
        let mut g = p.zeros_like();
        p.backward(&t, &dl, 0.0, &mut g);
        Ok((loss, g))
    })
    .unwrap()
}

fn cda_trial(rng: &mut ChaCha8Rng) -> f64 {
    let params = random_model(rng);
    let x = random_vec(rng, 5, 2.0);
    let w = random_soft_label(rng, 4);
    let mut mu = random_vec(rng, 4, 3.0);
    mu.sort_by(f64::total_cmp);
    grad_check(&params, FD_STEP, |p: &ModelParams| {
        let t = p.trace(&x)?;
        let loss = cda_loss(t.output.rank_score, &w, &mu)?;
        let (_, d) = cda_loss_grad(t.output.rank_score, &w, &mu)?;
        let mut g = p.zeros_like();
        p.backward(&t, &[0.0; 4], d, &mut g);
        Ok((loss, g))
    })
    .unwrap()
}

fn total_trial(rng: &mut ChaCha8Rng) -> f64 {
    let params = random_model(rng);
    let n = 10;
    let samples: Vec<Sample> = (0..n)
        .map(|i| Sample {
            id: i as u64,
            features: random_vec(rng, 5, 2.0),
            label: if i < 7 { Some(rng.random_range(1..=4)) } else { None },
            domain: if i < 4 { Domain::Source } else { Domain::Target },
            split: Split::Train,
        })
        .collect();
    let members: Vec<usize> = (0..n).collect();
    let pairs = vec![(0, 1), (2, 3), (0, 4), (5, 6), (1, 5), (3, 3)];
    let soft: Vec<SoftLabelVector> = samples
        .iter()
        .map(|s| match s.label {
            Some(y) => SoftLabelVector::one_hot(y, 4).unwrap(),
            None => random_soft_label(rng, 4),
        })
        .collect();
    let mut mu = random_vec(rng, 4, 3.0);
    mu.sort_by(f64::total_cmp);
    let lambda = rng.random_range(0.0..2.0);
    let batch = TrainBatch { members, pairs };
    grad_check(&params, FD_STEP, |p: &ModelParams| {
        let (terms, g) = batch_objective(p, &samples, &batch, Some(&soft), &mu, lambda)?;
        Ok((terms.total, g))
    })
    .unwrap()
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0001);
    type Trial = fn(&mut ChaCha8Rng) -> f64;
    let checks: [(&str, Trial); 4] = [
        ("ranking", ranking_trial),
        ("cross-entropy", cross_entropy_trial),
        ("alignment", cda_trial),
        ("total", total_trial),
    ];
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, trial) in checks {
        let worst = (0..GRAD_TRIALS).map(|_| trial(&mut rng)).fold(0.0, f64::max);
        pass &= worst < 1e-4;
        parts.push(format!("{name} {worst:.1e}"));
    }
    outcome(pass, format!("max relative error over {GRAD_TRIALS} trials each: {}", parts.join(", ")))
}

// ---- 2. closed forms ------------------------------------------------------

fn closed_forms() -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0002);
    let mut tie_err: f64 = 0.0;
    for _ in 0..100 {
        let r: f64 = rng.random_range(-20.0..20.0);
        tie_err = tie_err.max((ranking_loss(r, r, RelativeLabel::TIE) - ln2).abs());
    }

    let labels = [RelativeLabel::LOWER, RelativeLabel::TIE, RelativeLabel::HIGHER];
    let mut swap_err: f64 = 0.0;
    for _ in 0..10_000 {
        let ri: f64 = rng.random_range(-15.0..15.0);
        let rj: f64 = rng.random_range(-15.0..15.0);
        let o = labels[rng.random_range(0..3)];
        let a = ranking_loss(ri, rj, o);
        let b = ranking_loss(rj, ri, RelativeLabel::new(1.0 - o.value()).unwrap());
        swap_err = swap_err.max((a - b).abs());
    }

    let mu = [-1.5, 0.25, 0.9, 3.0];
    let mut cda_exact = true;
    for (k, &m) in mu.iter().enumerate() {
        let w = SoftLabelVector::one_hot(k + 1, mu.len()).unwrap();
        cda_exact &= cda_loss(m, &w, &mu).unwrap() == 0.0;
    }

    outcome(
        tie_err < 1e-9 && swap_err < 1e-12 && cda_exact,
        format!("tie - ln 2 = {tie_err:.1e}; swap error {swap_err:.1e} over 10^4 triples; one-hot alignment zero: {cda_exact}"),
    )
}

// ---- 3. mixture oracle ----------------------------------------------------

fn mixture_oracle() -> Outcome {
    let truth = [-2.0, 0.0, 2.0];
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0003);
    let scores: Vec<f64> = (0..3000)
        .map(|_| {
            let k = rng.random_range(0..3);
            Normal::new(truth[k], 0.3).unwrap().sample(&mut rng)
        })
        .collect();
    let gmm = match fit_gmm(&scores, 3, DEFAULT_MAX_ITERS, DEFAULT_TOL, 0) {
        Ok(g) => order_components(&g),
        Err(e) => return outcome(false, format!("fit failed: {e}")),
    };
    let worst = gmm.means.iter().zip(truth).map(|(m, t)| (m - t).abs()).fold(0.0, f64::max);
    let monotone = gmm.history.windows(2).all(|w| w[1] >= w[0]);
    outcome(
        worst <= 0.1 && monotone,
        format!(
            "means {:?}, max error {worst:.4}; {} iterations, log-likelihood non-decreasing: {monotone}",
            gmm.means.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>(),
            gmm.history.len()
        ),
    )
}

// ---- 4. ordinal pretraining -----------------------------------------------

fn ordinal_pretraining() -> Outcome {
    let bundle = generate_synthetic(&SynthConfig::default()).unwrap();
    let config = TrainConfig::default();
    let init = init_model(&config.model_config(&bundle)).unwrap();
    let (ck, report) = rankalign_core::pretrain(&init, &bundle, &config).unwrap();
    let params = ck.params().unwrap();
    let c = bundle.num_classes;
    let mut sums = vec![0.0; c];
    let mut counts = vec![0usize; c];
    for s in bundle.samples.iter().filter(|s| s.domain == Domain::Source && s.split == Split::Val) {
        let y = s.label.unwrap();
        sums[y - 1] += rankalign_core::forward(&params, &s.features).unwrap().rank_score;
        counts[y - 1] += 1;
    }
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect();
    let increasing = means.windows(2).all(|w| w[1] > w[0]);
    outcome(
        increasing,
        format!(
            "source-val class means {:?} (best epoch {}, val mF1 {:.3})",
            means.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>(),
            report.best_epoch,
            report.best_val_macro_f1
        ),
    )
}

// ---- 5-7. benchmark ablation ---------------------------------------------

fn benchmark() -> AblationTable {
    let bundle = generate_synthetic(&SynthConfig::default()).unwrap();
    run_ablation(&bundle, &TrainConfig::default(), &SEEDS).unwrap()
}

fn adaptation_gain(table: &AblationTable) -> Outcome {
    let f1 = |arm: Arm| table.row(arm).unwrap().macro_f1.mean;
    let failed: usize = table.rows.iter().map(|r| r.failed).sum();
    let [st, cdr, cda, both] = Arm::ALL.map(f1);
    let gain = both - st;
    outcome(
        failed == 0 && gain >= 0.03 && cdr >= st && cda >= st,
        format!(
            "mean target-test mF1 s+t {st:.4}, cdr {cdr:.4}, cda {cda:.4}, cdr+cda {both:.4}; gain {gain:+.4} (need >= 0.03), failed runs {failed}"
        ),
    )
}

fn alignment(table: &AblationTable) -> Outcome {
    let before = table.pretrained.iter().map(|p| p.pretrained_alignment_gap).sum::<f64>() / table.pretrained.len() as f64;
    let after = table.row(Arm { cdr: true, cda: true }).unwrap().alignment_gap.mean;
    let reduction = 1.0 - after / before;
    outcome(
        reduction >= 0.2,
        format!("mean gap {before:.4} -> {after:.4}, reduction {:.1}%", 100.0 * reduction),
    )
}

fn determinism(first: &AblationTable) -> Outcome {
    let a = serde_json::to_string(first).unwrap();
    let b = serde_json::to_string(&benchmark()).unwrap();
    outcome(a == b, format!("repeat run report {} ({} bytes)", if a == b { "identical" } else { "differs" }, a.len()))
}

fn main() -> ExitCode {
    let mut all_pass = true;
    let mut report = |id: usize, name: &str, (out, elapsed): (Outcome, Duration)| {
        all_pass &= out.pass;
        println!(
            "{} [{id}] {name}: {} ({:.1} s)",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64()
        );
    };

    report(1, "gradient correctness", timed(Some(Duration::from_secs(30)), gradients));
    report(2, "loss closed forms", timed(None, closed_forms));
    report(3, "mixture oracle", timed(Some(Duration::from_secs(5)), mixture_oracle));
    report(4, "ordinal pretraining", timed(Some(Duration::from_secs(120)), ordinal_pretraining));

    let start = Instant::now();
    let table = benchmark();
    let bench_time = start.elapsed();
    let limit = Duration::from_secs(25 * 60);
    let (mut gain, _) = timed(None, || adaptation_gain(&table));
    if bench_time > limit {
        gain.pass = false;
        gain.detail = format!("{}; exceeded {:?}", gain.detail, limit);
    }
    report(5, "adaptation gain", (gain, bench_time));
    report(6, "rank alignment", timed(None, || alignment(&table)));
    report(7, "determinism", timed(None, || determinism(&table)));

    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
