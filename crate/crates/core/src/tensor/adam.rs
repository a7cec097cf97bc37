use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        let ok = self.lr > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(TensorError::contract("adam", format!("invalid hyperparameters {self:?}")))
        }
    }
}

/// Adam moment estimates for one parameter list.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Result<Self, TensorError> {
        config.validate()?;
        Ok(AdamState {
            config,
            step_count: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update using each parameter's `grad`.
    pub fn step(&mut self, params: &mut [Tensor]) -> Result<(), TensorError> {
        if params.len() != self.m.len() {
            return Err(TensorError::contract(
                "adam",
                format!("state tracks {} parameters, got {}", self.m.len(), params.len()),
            ));
        }
        for (i, p) in params.iter().enumerate() {
            match &p.grad {
                None => return Err(TensorError::contract("adam", format!("parameter {i} has no gradient"))),
                Some(g) if g.len() != self.m[i].len() => {
                    return Err(TensorError::shape("adam", &[self.m[i].len()], &[g.len()]))
                }
                Some(_) => {}
            }
        }
        self.step_count += 1;
        let AdamConfig { lr, beta1, beta2, epsilon } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.take().expect("checked above");
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
            p.grad = Some(g);
        }
        Ok(())
    }
}

pub fn adam_step(params: &mut [Tensor], state: &mut AdamState) -> Result<(), TensorError> {
    state.step(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![Tensor::from_vec(vec![1.5, -2.0]).with_grad()];
        let mut st = AdamState::new(AdamConfig::default(), &p).unwrap();
        p[0].grad = Some(vec![0.0, 0.0]);
        st.step(&mut p).unwrap();
        assert_eq!(p[0].data(), &[1.5, -2.0]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // At t=1 the bias-corrected ratio is g/(|g|+eps/...), i.e. about sign(g).
        let mut p = vec![Tensor::scalar(0.5).with_grad()];
        let mut st = AdamState::new(AdamConfig::default(), &p).unwrap();
        p[0].grad = Some(vec![1.0]);
        st.step(&mut p).unwrap();
        let moved = 0.5 - p[0].item();
        assert!((moved - 1e-3).abs() < 1e-10, "moved {moved}");
    }

    #[test]
    fn missing_gradient_is_rejected() {
        let mut p = vec![Tensor::scalar(0.0)];
        let mut st = AdamState::new(AdamConfig::default(), &p).unwrap();
        assert!(matches!(st.step(&mut p), Err(TensorError::Contract { .. })));
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn invalid_betas_rejected() {
        let cfg = AdamConfig { beta1: 1.0, ..AdamConfig::default() };
        assert!(AdamState::new(cfg, &[]).is_err());
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = vec![Tensor::from_vec(vec![0.3, -0.7, 1.1]).with_grad()];
            let mut st = AdamState::new(AdamConfig::default(), &p).unwrap();
            for k in 0..50 {
                let g: Vec<f64> = p[0].data().iter().map(|w| 2.0 * w + k as f64 * 0.01).collect();
                p[0].grad = Some(g);
                st.step(&mut p).unwrap();
            }
            p[0].data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
