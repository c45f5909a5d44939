//! Adaptive-moment gradient descent.

use super::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// Apply one update to the parameter list. The list must have the same
    /// order and shapes on every call. Updated values are rounded through
    /// f32 to preserve the checkpoint representability invariant.
    pub fn step(&mut self, params: &mut [(String, &mut Tensor)]) {
        if self.first_moment.is_empty() {
            for (_, p) in params.iter() {
                self.first_moment.push(vec![0.0; p.len()]);
                self.second_moment.push(vec![0.0; p.len()]);
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powf(t);
        let bias2 = 1.0 - c.beta2.powf(t);
        for (i, (_, p)) in params.iter_mut().enumerate() {
            let grad = match &p.grad {
                Some(g) => g.clone(),
                None => continue,
            };
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for (j, &g) in grad.iter().enumerate() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                p.values[j] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
            p.quantize_f32();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_learning_rate_leaves_weights_unchanged() {
        let mut tensor = Tensor::zeros(&[4]);
        tensor.values = vec![0.5, -0.25, 1.0, 2.0];
        let before = tensor.values.clone();
        tensor.grad_mut().copy_from_slice(&[1.0, -2.0, 3.0, 4.0]);
        let mut adam = Adam::new(AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        });
        let mut params = vec![("t".to_string(), &mut tensor)];
        adam.step(&mut params);
        assert_eq!(tensor.values, before);
    }

    #[test]
    fn descends_a_quadratic() {
        // Minimize (w - 3)^2 by following its gradient.
        let mut tensor = Tensor::zeros(&[1]);
        let mut adam = Adam::new(AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        });
        for _ in 0..500 {
            let w = tensor.values[0];
            tensor.zero_grad();
            tensor.grad_mut()[0] = 2.0 * (w - 3.0);
            let mut params = vec![("w".to_string(), &mut tensor)];
            adam.step(&mut params);
        }
        assert!((tensor.values[0] - 3.0).abs() < 1e-2);
    }

    #[test]
    fn updates_stay_f32_representable() {
        let mut tensor = Tensor::zeros(&[2]);
        tensor.values = vec![0.1f32 as f64, 0.7f32 as f64];
        tensor.grad_mut().copy_from_slice(&[0.013, -0.042]);
        let mut adam = Adam::new(AdamConfig::default());
        let mut params = vec![("t".to_string(), &mut tensor)];
        adam.step(&mut params);
        for &v in &tensor.values {
            assert_eq!(v, (v as f32) as f64);
        }
    }
}
