//! Adam optimizer over flat parameter arrays.

use crate::error::{Result, TensorError};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam. Moment slots are index-aligned with the parameter
/// list the optimizer was created for; callers must pass parameters in the
/// same order on every step.
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, param_sizes: &[usize]) -> Self {
        Self {
            cfg,
            step: 0,
            first: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every parameter. `grads[i]` must hold the gradient of
    /// `params[i]`; a missing gradient is an error rather than a silent no-op.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Option<Vec<f64>>]) -> Result<()> {
        assert_eq!(params.len(), self.first.len(), "parameter count changed");
        assert_eq!(params.len(), grads.len(), "gradient count mismatch");
        for (index, (param, grad)) in params.iter().zip(grads).enumerate() {
            let grad = grad
                .as_ref()
                .ok_or(TensorError::UninitializedGrad { index })?;
            if grad.len() != param.len() {
                return Err(TensorError::GradSizeMismatch {
                    index,
                    values: param.len(),
                    grads: grad.len(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.cfg.beta1.powi(t);
        let bias2 = 1.0 - self.cfg.beta2.powi(t);
        for (index, param) in params.iter_mut().enumerate() {
            let grad = grads[index].as_ref().expect("validated above");
            let m = &mut self.first[index];
            let v = &mut self.second[index];
            for k in 0..param.len() {
                let g = grad[k];
                m[k] = self.cfg.beta1 * m[k] + (1.0 - self.cfg.beta1) * g;
                v[k] = self.cfg.beta2 * v[k] + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                param[k] -= self.cfg.learning_rate * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
            }
        }
        Ok(())
    }
}
