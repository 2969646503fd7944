//! Adaptive moment estimation.

use std::collections::HashMap;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::nets::layer::{GradStore, Net};
use crate::nets::scalar::Scalar;

/// Optimizer hyperparameters. The defaults follow the reference GAN setups
/// (learning rate 2e-4, beta1 0.5); they are config values, not paper
/// claims.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug)]
pub struct Adam<T: Scalar> {
    pub config: AdamConfig,
    t: i32,
    m: HashMap<String, ArrayD<T>>,
    v: HashMap<String, ArrayD<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// Applies one update step. Parameters without a gradient entry are
    /// left untouched; zero gradients produce exactly zero updates.
    pub fn step(&mut self, net: &mut dyn Net<T>, grads: &GradStore<T>) {
        self.t += 1;
        let lr = T::from_real(self.config.learning_rate);
        let b1 = T::from_real(self.config.beta1);
        let b2 = T::from_real(self.config.beta2);
        let eps = T::from_real(self.config.epsilon);
        let bc1 = T::one() - T::from_real(self.config.beta1.powi(self.t));
        let bc2 = T::one() - T::from_real(self.config.beta2.powi(self.t));
        let one = T::one();

        let m_map = &mut self.m;
        let v_map = &mut self.v;
        net.visit_params_mut(&mut |name, mut param| {
            let Some(grad) = grads.get(name) else {
                return;
            };
            let m = m_map
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(param.shape()));
            let v = v_map
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(param.shape()));
            ndarray::Zip::from(&mut param)
                .and(m)
                .and(v)
                .and(grad)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
                });
        });
    }
}
