//! Shared feature extractor with two heads: a softmax classifier and a scalar
//! ranking function.
//!
//! ```text
//!            ┌── classifier ── softmax ──> class probabilities (C)
//! x ── MLP ──┤
//!            └── ranker ─────────────────> rank score (scalar)
//! ```
//!
//! Gradients are computed by hand. [`ModelParams::backward`] takes the loss
//! gradient with respect to the classifier logits and the rank score of one
//! sample and accumulates parameter gradients, so any loss defined on those
//! two outputs can be trained and checked with [`grad_check`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be at least 1".into()));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::Config("hidden_dims must not be empty".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    fn feature_dim(&self) -> usize {
        *self.hidden_dims.last().expect("validated non-empty")
    }
}

/// Fully connected layer. `weights` is row-major `inputs × outputs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn glorot<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.inputs, self.outputs)
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.bias);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.weights[i * self.outputs..(i + 1) * self.outputs];
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
    }

    /// Accumulates `dW += x ⊗ dy`, `db += dy` into `grad` and writes `dx = W dy`.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense, dx: Option<&mut Vec<f64>>) {
        for (b, d) in grad.bias.iter_mut().zip(dy) {
            *b += d;
        }
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &mut grad.weights[i * self.outputs..(i + 1) * self.outputs];
            for (g, d) in row.iter_mut().zip(dy) {
                *g += xi * d;
            }
        }
        if let Some(dx) = dx {
            dx.clear();
            dx.extend((0..self.inputs).map(|i| {
                let row = &self.weights[i * self.outputs..(i + 1) * self.outputs];
                row.iter().zip(dy).map(|(w, d)| w * d).sum::<f64>()
            }));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub extractor: Vec<Dense>,
    pub classifier: Dense,
    pub ranker: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub class_probs: Vec<f64>,
    pub rank_score: f64,
}

impl ForwardOutput {
    /// Argmax of the class probabilities as a 1-based class; ties go to the
    /// lower class.
    pub fn predicted_class(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.class_probs.iter().enumerate() {
            if p > self.class_probs[best] {
                best = k;
            }
        }
        best + 1
    }
}

/// Intermediate activations of one forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct Trace {
    input: Vec<f64>,
    /// Post-ReLU activations of each extractor layer.
    hidden: Vec<Vec<f64>>,
    pub output: ForwardOutput,
}

pub fn init_model(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut extractor = Vec::with_capacity(config.hidden_dims.len());
    let mut fan_in = config.input_dim;
    for &width in &config.hidden_dims {
        extractor.push(Dense::glorot(fan_in, width, &mut rng));
        fan_in = width;
    }
    let classifier = Dense::glorot(fan_in, config.num_classes, &mut rng);
    let ranker = Dense::glorot(fan_in, 1, &mut rng);
    Ok(ModelParams {
        config: config.clone(),
        extractor,
        classifier,
        ranker,
    })
}

pub fn forward(params: &ModelParams, x: &[f64]) -> Result<ForwardOutput> {
    params.trace(x).map(|t| t.output)
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut fan_in = config.input_dim;
        let mut extractor = Vec::new();
        for &width in &config.hidden_dims {
            extractor.push(Dense::zeros(fan_in, width));
            fan_in = width;
        }
        Ok(Self {
            config: config.clone(),
            extractor,
            classifier: Dense::zeros(fan_in, config.num_classes),
            ranker: Dense::zeros(fan_in, 1),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config).expect("config already validated")
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn num_parameters(&self) -> usize {
        self.layers().map(|d| d.weights.len() + d.bias.len()).sum()
    }

    /// Layers in a fixed order: extractor layers, classifier, ranker.
    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.extractor
            .iter()
            .chain(std::iter::once(&self.classifier))
            .chain(std::iter::once(&self.ranker))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.extractor
            .iter_mut()
            .chain(std::iter::once(&mut self.classifier))
            .chain(std::iter::once(&mut self.ranker))
    }

    /// Every parameter as one flat vector, in [`layers`](Self::layers) order,
    /// weights before bias within a layer.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_parameters());
        for layer in self.layers() {
            flat.extend_from_slice(&layer.weights);
            flat.extend_from_slice(&layer.bias);
        }
        flat
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for layer in self.layers_mut() {
            let n = layer.weights.len();
            layer.weights.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
            let n = layer.bias.len();
            layer.bias.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Adds `scale * other` to every parameter.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (a, b) in self.layers_mut().zip(other.layers()) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
    }

    pub fn trace(&self, x: &[f64]) -> Result<Trace> {
        if x.len() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "expected {} input features, got {}",
                self.config.input_dim,
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite input feature".into()));
        }
        let mut hidden = Vec::with_capacity(self.extractor.len());
        let mut current = x;
        for layer in &self.extractor {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(current, &mut out);
            for v in out.iter_mut() {
                *v = v.max(0.0);
            }
            hidden.push(out);
            current = hidden.last().expect("just pushed");
        }
        let mut logits = Vec::with_capacity(self.config.num_classes);
        self.classifier.apply(current, &mut logits);
        let mut rank = Vec::with_capacity(1);
        self.ranker.apply(current, &mut rank);
        Ok(Trace {
            input: x.to_vec(),
            hidden,
            output: ForwardOutput {
                class_probs: softmax(&logits),
                rank_score: rank[0],
            },
        })
    }

    /// Backpropagates the gradient of a loss with respect to the classifier
    /// logits and the rank score of a single traced sample, accumulating into
    /// `grad`.
    pub fn backward(&self, trace: &Trace, dlogits: &[f64], drank: f64, grad: &mut ModelParams) {
        debug_assert_eq!(dlogits.len(), self.config.num_classes);
        let features = trace.hidden.last().expect("at least one hidden layer");
        let mut dfeat = vec![0.0; self.config.feature_dim()];
        let mut tmp = Vec::new();

        self.classifier
            .backward(features, dlogits, &mut grad.classifier, Some(&mut tmp));
        for (d, t) in dfeat.iter_mut().zip(&tmp) {
            *d += t;
        }
        self.ranker
            .backward(features, &[drank], &mut grad.ranker, Some(&mut tmp));
        for (d, t) in dfeat.iter_mut().zip(&tmp) {
            *d += t;
        }

        let mut delta = dfeat;
        for l in (0..self.extractor.len()).rev() {
            // ReLU mask; derivative at exactly zero is taken as zero.
            for (d, &a) in delta.iter_mut().zip(&trace.hidden[l]) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            let input = if l == 0 {
                &trace.input
            } else {
                &trace.hidden[l - 1]
            };
            let dx = if l > 0 { Some(&mut tmp) } else { None };
            self.extractor[l].backward(input, &delta, &mut grad.extractor[l], dx);
            if l > 0 {
                std::mem::swap(&mut delta, &mut tmp);
            }
        }
    }
}

/// Compares the analytic gradient returned by `evaluate` with central finite
/// differences over every parameter and returns the maximum relative error,
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(params: &ModelParams, step: f64, evaluate: F) -> Result<f64>
where
    F: Fn(&ModelParams) -> Result<(f64, ModelParams)>,
{
    if !(step > 1e-7 && step < 1e-3) {
        return Err(Error::Input(format!("finite-difference step {step} outside (1e-7, 1e-3)")));
    }
    let (loss, analytic) = evaluate(params)?;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("loss is not finite: {loss}")));
    }
    let analytic = analytic.to_flat();
    let base = params.to_flat();
    let mut probe = params.clone();
    let mut flat = base.clone();
    let mut worst = 0.0_f64;
    for i in 0..base.len() {
        flat[i] = base[i] + step;
        probe.set_flat(&flat)?;
        let (plus, _) = evaluate(&probe)?;
        flat[i] = base[i] - step;
        probe.set_flat(&flat)?;
        let (minus, _) = evaluate(&probe)?;
        flat[i] = base[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss while perturbing parameter {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(seed: u64) -> ModelConfig {
        ModelConfig {
            input_dim: 4,
            hidden_dims: vec![8],
            num_classes: 3,
            seed,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_model(&config(7)).unwrap();
        let b = init_model(&config(7)).unwrap();
        let bits = |p: &ModelParams| p.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn head_shapes() {
        let p = init_model(&config(1)).unwrap();
        assert_eq!(p.classifier.shape(), (8, 3));
        assert_eq!(p.ranker.shape(), (8, 1));
        assert_eq!(p.extractor[0].shape(), (4, 8));
        assert!(p.layers().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn different_seeds_differ() {
        let base = init_model(&config(0)).unwrap().to_flat();
        for seed in 1..20 {
            let other = init_model(&config(seed)).unwrap().to_flat();
            assert!(base.iter().zip(&other).any(|(a, b)| a != b), "seed {seed}");
        }
    }

    #[test]
    fn init_respects_glorot_bound() {
        let p = init_model(&config(3)).unwrap();
        let bound = (6.0_f64 / 12.0).sqrt();
        assert!(p.extractor[0].weights.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = config(0);
        c.num_classes = 1;
        assert!(matches!(init_model(&c), Err(Error::Config(_))));
        let mut c = config(0);
        c.hidden_dims.clear();
        assert!(matches!(init_model(&c), Err(Error::Config(_))));
        let mut c = config(0);
        c.input_dim = 0;
        assert!(matches!(init_model(&c), Err(Error::Config(_))));
    }

    #[test]
    fn zero_weights_give_uniform_probs() {
        let p = ModelParams::zeros(&config(0)).unwrap();
        let out = forward(&p, &[0.3, -1.0, 2.0, 5.0]).unwrap();
        for &q in &out.class_probs {
            assert!((q - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(out.rank_score, 0.0);
    }

    #[test]
    fn probs_sum_to_one_and_forward_is_pure() {
        let p = init_model(&config(11)).unwrap();
        let x = [10.0, -3.0, 0.5, 100.0];
        let a = forward(&p, &x).unwrap();
        let b = forward(&p, &x).unwrap();
        assert_eq!(a, b);
        assert!((a.class_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn forward_errors() {
        let p = init_model(&config(0)).unwrap();
        assert!(matches!(forward(&p, &[1.0, 2.0]), Err(Error::Shape(_))));
        assert!(matches!(
            forward(&p, &[1.0, f64::NAN, 0.0, 0.0]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn flat_round_trip() {
        let p = init_model(&config(5)).unwrap();
        let mut q = p.zeros_like();
        q.set_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
        assert!(q.set_flat(&[1.0]).is_err());
    }

    #[test]
    fn grad_check_rejects_bad_step() {
        let p = init_model(&config(0)).unwrap();
        let eval = |q: &ModelParams| Ok((0.0, q.zeros_like()));
        assert!(grad_check(&p, 1e-2, eval).is_err());
        assert!(grad_check(&p, 1e-8, eval).is_err());
    }

    #[test]
    fn grad_check_flags_non_finite_loss() {
        let p = init_model(&config(0)).unwrap();
        let eval = |q: &ModelParams| Ok((f64::NAN, q.zeros_like()));
        assert!(matches!(grad_check(&p, 1e-5, eval), Err(Error::Numerical(_))));
    }

    #[test]
    fn grad_check_of_rank_score_itself() {
        let p = init_model(&config(2)).unwrap();
        let x = [0.4, -0.2, 1.3, 0.8];
        let eval = |q: &ModelParams| {
            let t = q.trace(&x)?;
            let mut g = q.zeros_like();
            q.backward(&t, &[0.0; 3], 1.0, &mut g);
            Ok((t.output.rank_score, g))
        };
        assert!(grad_check(&p, 1e-5, eval).unwrap() < 1e-6);
    }
}
