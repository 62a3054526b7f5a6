//! One-dimensional Gaussian mixture fitted by expectation-maximisation.
//!
//! Used to turn unlabeled rank scores into per-class soft labels: components
//! are ordered by mean, and component `k` stands for class `k + 1`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::losses::SoftLabelVector;

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 200;
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gmm1d {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub weights: Vec<f64>,
    /// Total log-likelihood of the fitted data.
    pub log_likelihood: f64,
    /// Mean log-likelihood after each EM iteration.
    #[serde(default)]
    pub history: Vec<f64>,
}

impl Gmm1d {
    pub fn num_components(&self) -> usize {
        self.means.len()
    }
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * PI * var).ln() + d * d / var)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Empirical quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Fits a `num_components` mixture by EM. Means start at the `(k - 0.5) / C`
/// quantiles with equal weights and the global variance, so the fit is a
/// deterministic function of the scores; `_seed` is accepted for interface
/// stability.
///
/// Iterates until the mean log-likelihood improves by less than `tol` or
/// `max_iters` is reached. Every iteration is checked to not decrease the
/// log-likelihood.
pub fn fit_gmm(
    scores: &[f64],
    num_components: usize,
    max_iters: usize,
    tol: f64,
    _seed: u64,
) -> Result<Gmm1d> {
    if num_components == 0 {
        return Err(Error::Input("mixture needs at least one component".into()));
    }
    if scores.len() < num_components {
        return Err(Error::Input(format!(
            "{} scores cannot support {} components",
            scores.len(),
            num_components
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Input("scores must be finite".into()));
    }

    let n = scores.len();
    let c = num_components;
    let nf = n as f64;
    let mean = scores.iter().sum::<f64>() / nf;
    let global_var = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / nf).max(VARIANCE_FLOOR);

    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut means: Vec<f64> = (1..=c)
        .map(|k| quantile(&sorted, (k as f64 - 0.5) / c as f64))
        .collect();
    let mut variances = vec![global_var; c];
    let mut weights = vec![1.0 / c as f64; c];

    let mut resp = vec![0.0; n * c];
    let mut log_terms = vec![0.0; c];
    let mut history = Vec::new();
    let mut prev: Option<f64> = None;

    for _ in 0..max_iters.max(1) {
        // E-step; the log-likelihood computed here belongs to the current
        // parameters.
        let mut ll = 0.0;
        for (i, &x) in scores.iter().enumerate() {
            for k in 0..c {
                log_terms[k] = weights[k].ln() + log_normal(x, means[k], variances[k]);
            }
            let norm = log_sum_exp(&log_terms);
            ll += norm;
            for k in 0..c {
                resp[i * c + k] = (log_terms[k] - norm).exp();
            }
        }
        let mean_ll = ll / nf;
        if let Some(p) = prev {
            let slack = 1e-10 * (1.0 + p.abs());
            if mean_ll < p - slack {
                return Err(Error::Numerical(format!(
                    "EM log-likelihood decreased from {p} to {mean_ll}"
                )));
            }
            history.push(mean_ll);
            if mean_ll - p < tol {
                break;
            }
        } else {
            history.push(mean_ll);
        }
        prev = Some(mean_ll);

        // M-step.
        for k in 0..c {
            let nk: f64 = (0..n).map(|i| resp[i * c + k]).sum();
            if nk <= 0.0 {
                // Empty component keeps its parameters with zero weight.
                weights[k] = 0.0;
                continue;
            }
            let mk = (0..n).map(|i| resp[i * c + k] * scores[i]).sum::<f64>() / nk;
            let vk = (0..n)
                .map(|i| resp[i * c + k] * (scores[i] - mk).powi(2))
                .sum::<f64>()
                / nk;
            means[k] = mk;
            variances[k] = vk.max(VARIANCE_FLOOR);
            weights[k] = nk / nf;
        }
        let total: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
    }

    // Log-likelihood of the final parameters.
    let ll: f64 = scores
        .iter()
        .map(|&x| {
            for k in 0..c {
                log_terms[k] = weights[k].ln() + log_normal(x, means[k], variances[k]);
            }
            log_sum_exp(&log_terms)
        })
        .sum();
    if let Some(p) = prev {
        let mean_ll = ll / nf;
        if mean_ll < p - 1e-10 * (1.0 + p.abs()) {
            return Err(Error::Numerical(format!(
                "EM log-likelihood decreased from {p} to {mean_ll}"
            )));
        }
        if history.last() != Some(&mean_ll) {
            history.push(mean_ll);
        }
    }

    Ok(Gmm1d {
        means,
        variances,
        weights,
        log_likelihood: ll,
        history,
    })
}

/// Permutes components so means ascend; ties keep their original order.
pub fn order_components(gmm: &Gmm1d) -> Gmm1d {
    let mut order: Vec<usize> = (0..gmm.means.len()).collect();
    order.sort_by(|&a, &b| gmm.means[a].total_cmp(&gmm.means[b]));
    Gmm1d {
        means: order.iter().map(|&k| gmm.means[k]).collect(),
        variances: order.iter().map(|&k| gmm.variances[k]).collect(),
        weights: order.iter().map(|&k| gmm.weights[k]).collect(),
        log_likelihood: gmm.log_likelihood,
        history: gmm.history.clone(),
    }
}

/// Posterior component probabilities for one score, computed in log space.
pub fn responsibilities(gmm: &Gmm1d, score: f64) -> Result<SoftLabelVector> {
    if !score.is_finite() {
        return Err(Error::Numerical(format!("rank score {score} has no posterior")));
    }
    let log_terms: Vec<f64> = (0..gmm.num_components())
        .map(|k| gmm.weights[k].ln() + log_normal(score, gmm.means[k], gmm.variances[k]))
        .collect();
    let norm = log_sum_exp(&log_terms);
    let mut q: Vec<f64> = log_terms.iter().map(|t| (t - norm).exp()).collect();
    // Absorb rounding so the vector sums to one.
    let total: f64 = q.iter().sum();
    for v in q.iter_mut() {
        *v /= total;
    }
    SoftLabelVector::new(q)
}
