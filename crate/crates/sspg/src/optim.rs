//! Adam with global gradient-norm clipping.

use crate::graph::{Gradients, ParamStore};
use crate::tensor::Tensor;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let m = (0..params.len()).map(|i| Tensor::zeros(params.value(i).shape())).collect();
        let v = (0..params.len()).map(|i| Tensor::zeros(params.value(i).shape())).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(1.0), step: 0, m, v }
    }

    pub fn apply(&mut self, params: &mut ParamStore, grads: &Gradients) {
        let scale = match self.clip_norm {
            Some(c) => {
                let norm = grads.global_norm();
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for pid in 0..params.len() {
            let g = match grads.get(pid) {
                Some(g) => g,
                None => continue,
            };
            let p = params.value_mut(pid);
            let (m, v) = (self.m[pid].data_mut(), self.v[pid].data_mut());
            for (i, pv) in p.data_mut().iter_mut().enumerate() {
                let gi = g.data()[i] * scale;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::vector(vec![1.0, -2.0, 3.0]));
        let before = params.get("w").unwrap().clone();
        let mut opt = Adam::new(&params, 0.0);
        let mut grads = Gradients::zeros(1);
        grads.add_into(0, &Tensor::vector(vec![0.5, 0.5, 0.5]));
        opt.apply(&mut params, &grads);
        assert_eq!(params.get("w").unwrap(), &before);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // f(w) = w², gradient 2w
        let mut params = ParamStore::new();
        params.insert("w", Tensor::scalar(3.0));
        let mut opt = Adam::new(&params, 0.1);
        for _ in 0..200 {
            let w = params.get("w").unwrap().item();
            let mut g = Gradients::zeros(1);
            g.add_into(0, &Tensor::scalar(2.0 * w));
            opt.apply(&mut params, &g);
        }
        assert!(params.get("w").unwrap().item().abs() < 0.1);
    }
}
