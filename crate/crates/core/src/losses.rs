//! Scalar losses on model outputs and the per-batch training objective.
//!
//! | Loss | Input | Gradient wrt |
//! |------|-------|--------------|
//! | [`ranking_loss`] | two rank scores, relative label | score difference |
//! | [`cross_entropy`] | class probabilities, class | logits |
//! | [`cda_loss`] | rank score, soft label, prototypes | rank score |
//! | [`total_loss`] | scored batch, pairs, prototypes, λ | logits and rank scores |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to the argument of every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Relative target for a ranked pair: 1 when the first member has the larger
/// class, 0 when the smaller, 1/2 when equal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeLabel(f64);

impl RelativeLabel {
    pub const LOWER: RelativeLabel = RelativeLabel(0.0);
    pub const TIE: RelativeLabel = RelativeLabel(0.5);
    pub const HIGHER: RelativeLabel = RelativeLabel(1.0);

    pub fn new(o: f64) -> Result<Self> {
        if o == 0.0 || o == 0.5 || o == 1.0 {
            Ok(Self(o))
        } else {
            Err(Error::Input(format!("relative label must be 0, 0.5 or 1, got {o}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn flipped(self) -> Self {
        Self(1.0 - self.0)
    }
}

pub fn relative_label(y_i: usize, y_j: usize, num_classes: usize) -> Result<RelativeLabel> {
    for y in [y_i, y_j] {
        if y < 1 || y > num_classes {
            return Err(Error::Input(format!("class {y} outside 1..={num_classes}")));
        }
    }
    Ok(match y_i.cmp(&y_j) {
        std::cmp::Ordering::Greater => RelativeLabel::HIGHER,
        std::cmp::Ordering::Less => RelativeLabel::LOWER,
        std::cmp::Ordering::Equal => RelativeLabel::TIE,
    })
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln sigmoid(x)` without cancellation for large `|x|`.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Pairwise logistic ranking loss on the score difference `r_i - r_j`.
pub fn ranking_loss(r_i: f64, r_j: f64, o: RelativeLabel) -> f64 {
    ranking_loss_grad(r_i, r_j, o).0
}

/// Returns the ranking loss and its derivative with respect to `r_i`; the
/// derivative with respect to `r_j` is the negation.
pub fn ranking_loss_grad(r_i: f64, r_j: f64, o: RelativeLabel) -> (f64, f64) {
    let o = o.value();
    let d = r_i - r_j;
    let h = sigmoid(d);
    let h_neg = sigmoid(-d);
    let (log_h, dlog_h) = if h > LOG_FLOOR {
        (log_sigmoid(d), h_neg)
    } else {
        (LOG_FLOOR.ln(), 0.0)
    };
    let (log_neg, dlog_neg) = if h_neg > LOG_FLOOR {
        (log_sigmoid(-d), -h)
    } else {
        (LOG_FLOOR.ln(), 0.0)
    };
    let a = o * log_h;
    let b = (1.0 - o) * log_neg;
    let loss = -(a + b);
    let grad = -(o * dlog_h + (1.0 - o) * dlog_neg);
    (loss, grad)
}

pub fn cross_entropy(class_probs: &[f64], y: usize) -> Result<f64> {
    if y < 1 || y > class_probs.len() {
        return Err(Error::Input(format!(
            "class {y} outside 1..={}",
            class_probs.len()
        )));
    }
    Ok(-class_probs[y - 1].max(LOG_FLOOR).ln())
}

/// Gradient of [`cross_entropy`] with respect to the logits that produced
/// `class_probs` through softmax. Zero where the clamp is active.
pub fn cross_entropy_logit_grad(class_probs: &[f64], y: usize) -> Vec<f64> {
    if class_probs[y - 1] <= LOG_FLOOR {
        return vec![0.0; class_probs.len()];
    }
    let mut g = class_probs.to_vec();
    g[y - 1] -= 1.0;
    g
}

/// Per-class assignment weights of one sample; one-hot for labeled samples,
/// mixture responsibilities for unlabeled ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftLabelVector(Vec<f64>);

impl SoftLabelVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Shape("soft label must have at least one entry".into()));
        }
        if w.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input("soft label entries must lie in [0, 1]".into()));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!("soft label sums to {total}, not 1")));
        }
        Ok(Self(w))
    }

    pub fn one_hot(class: usize, num_classes: usize) -> Result<Self> {
        if class < 1 || class > num_classes {
            return Err(Error::Input(format!("class {class} outside 1..={num_classes}")));
        }
        let mut w = vec![0.0; num_classes];
        w[class - 1] = 1.0;
        Ok(Self(w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Weighted squared distance of a rank score to the class prototypes.
pub fn cda_loss(r: f64, w: &SoftLabelVector, mu: &[f64]) -> Result<f64> {
    cda_loss_grad(r, w, mu).map(|(l, _)| l)
}

pub fn cda_loss_grad(r: f64, w: &SoftLabelVector, mu: &[f64]) -> Result<(f64, f64)> {
    if w.len() != mu.len() {
        return Err(Error::Shape(format!(
            "soft label has {} entries but there are {} prototypes",
            w.len(),
            mu.len()
        )));
    }
    let mut loss = 0.0;
    let mut grad = 0.0;
    for (&wk, &mk) in w.as_slice().iter().zip(mu) {
        let diff = r - mk;
        loss += wk * diff * diff;
        grad += 2.0 * wk * diff;
    }
    Ok((loss, grad))
}

/// One scored sample of a training batch.
#[derive(Clone, Debug)]
pub struct ScoredSample {
    pub class_probs: Vec<f64>,
    pub rank_score: f64,
    pub label: Option<usize>,
    /// Present when the sample takes part in the alignment term.
    pub soft_label: Option<SoftLabelVector>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    /// Pair mean of `L_c(x_i) + L_c(x_j)`.
    pub classification: f64,
    /// Pair mean of the ranking loss.
    pub ranking: f64,
    /// Sample mean of the alignment loss, before weighting by λ.
    pub alignment: f64,
    pub total: f64,
}

/// Gradient of the objective with respect to one sample's outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputGrad {
    pub dlogits: Vec<f64>,
    pub drank: f64,
}

/// Batch objective: the pair mean of `L_c(x_i) + L_c(x_j) + L_r(x_i, x_j)`
/// plus `lambda` times the mean alignment loss over samples carrying a soft
/// label. Pairs index into `samples`.
pub fn total_loss(
    samples: &[ScoredSample],
    pairs: &[(usize, usize)],
    mu: &[f64],
    lambda: f64,
) -> Result<LossTerms> {
    total_loss_grad(samples, pairs, mu, lambda).map(|(t, _)| t)
}

pub fn total_loss_grad(
    samples: &[ScoredSample],
    pairs: &[(usize, usize)],
    mu: &[f64],
    lambda: f64,
) -> Result<(LossTerms, Vec<OutputGrad>)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Input(format!("lambda must be a nonnegative finite number, got {lambda}")));
    }
    let mut grads: Vec<OutputGrad> = samples
        .iter()
        .map(|s| OutputGrad {
            dlogits: vec![0.0; s.class_probs.len()],
            drank: 0.0,
        })
        .collect();
    let mut terms = LossTerms::default();

    if !pairs.is_empty() {
        let scale = 1.0 / pairs.len() as f64;
        for &(i, j) in pairs {
            let (a, b) = match (samples.get(i), samples.get(j)) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::Shape(format!(
                        "pair ({i}, {j}) indexes past {} samples",
                        samples.len()
                    )))
                }
            };
            let (ya, yb) = match (a.label, b.label) {
                (Some(ya), Some(yb)) => (ya, yb),
                _ => {
                    return Err(Error::Protocol(format!(
                        "ranking pair ({i}, {j}) contains an unlabeled sample"
                    )))
                }
            };
            let num_classes = a.class_probs.len();
            let o = relative_label(ya, yb, num_classes)?;
            terms.classification +=
                scale * (cross_entropy(&a.class_probs, ya)? + cross_entropy(&b.class_probs, yb)?);
            let (lr, dr) = ranking_loss_grad(a.rank_score, b.rank_score, o);
            terms.ranking += scale * lr;

            for (g, d) in grads[i]
                .dlogits
                .iter_mut()
                .zip(cross_entropy_logit_grad(&a.class_probs, ya))
            {
                *g += scale * d;
            }
            for (g, d) in grads[j]
                .dlogits
                .iter_mut()
                .zip(cross_entropy_logit_grad(&b.class_probs, yb))
            {
                *g += scale * d;
            }
            grads[i].drank += scale * dr;
            grads[j].drank -= scale * dr;
        }
    }

    let aligned = samples.iter().filter(|s| s.soft_label.is_some()).count();
    if aligned > 0 {
        let scale = 1.0 / aligned as f64;
        for (s, g) in samples.iter().zip(grads.iter_mut()) {
            if let Some(w) = &s.soft_label {
                let (la, da) = cda_loss_grad(s.rank_score, w, mu)?;
                terms.alignment += scale * la;
                g.drank += lambda * scale * da;
            }
        }
    }

    terms.total = terms.classification + terms.ranking + lambda * terms.alignment;
    Ok((terms, grads))
}
