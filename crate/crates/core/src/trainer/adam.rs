//! Adaptive-moment optimiser with bias correction.

use crate::autodiff::{Gradients, Matrix, ParameterSet};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    steps: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: &ParameterSet, lr: f64) -> Self {
        let zeros = || params.ids().map(|id| {
            let (r, c) = params.value(id).shape();
            Matrix::zeros(r, c)
        });
        Self {
            lr,
            steps: 0,
            first: zeros().collect(),
            second: zeros().collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut ParameterSet, grads: &Gradients) {
        self.steps += 1;
        let t = self.steps as i32;
        let correction1 = 1.0 - BETA1.powi(t);
        let correction2 = 1.0 - BETA2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let g = grads.get(id).data();
            let m = self.first[id.index()].data_mut();
            let v = self.second[id.index()].data_mut();
            let w = params.value_mut(id).data_mut();
            for i in 0..w.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                w[i] -= self.lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
    }
}
