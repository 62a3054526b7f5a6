use crate::model::ModelParams;

/// Adaptive moment estimation over the flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            eps,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grad: &ModelParams) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut idx = 0;
        for (layer, g) in params.layers_mut().zip(grad.layers()) {
            for (p, &gi) in layer
                .weights
                .iter_mut()
                .chain(layer.bias.iter_mut())
                .zip(g.weights.iter().chain(&g.bias))
            {
                let m = &mut self.m[idx];
                let v = &mut self.v[idx];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                *p -= self.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                idx += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};

    #[test]
    fn first_step_moves_by_learning_rate() {
        let config = ModelConfig { input_dim: 2, hidden_dims: vec![3], num_classes: 2, seed: 0 };
        let mut p = init_model(&config).unwrap();
        let before = p.to_flat();
        let mut g = p.zeros_like();
        g.ranker.bias[0] = 0.25;
        g.classifier.bias[1] = -4.0;
        let mut opt = Adam::new(p.num_parameters(), 0.01, 0.9, 0.999, 1e-8);
        opt.step(&mut p, &g);
        assert!((p.ranker.bias[0] + 0.01).abs() < 1e-9);
        assert!((p.classifier.bias[1] - 0.01).abs() < 1e-9);
        let moved = p.to_flat().iter().zip(&before).filter(|(a, b)| a != b).count();
        assert_eq!(moved, 2);
    }
}
