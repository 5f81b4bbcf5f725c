//! Adam and the reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 5e-5, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step: u64,
    pub config: AdamConfig,
}

impl AdamState {
    /// Zero moments shaped like `params`.
    pub fn new(params: &[&Tensor], config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self { first_moment: zeros.clone(), second_moment: zeros, step: 0, config }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(shape_err!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.first_moment.len()
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first_moment) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(shape_err!("parameter {:?} with gradient {:?}", p.shape(), g.shape()));
        }
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, epsilon } = state.config;
    let t = state.step as i32;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);
    for (i, param) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.first_moment[i].data_mut();
        for (mv, gv) in m.iter_mut().zip(g) {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
        }
        let v = state.second_moment[i].data_mut();
        for (vv, gv) in v.iter_mut().zip(g) {
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
        }
        let m = state.first_moment[i].data();
        let v = state.second_moment[i].data();
        for ((w, mv), vv) in param.data_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mv / bias1;
            let v_hat = vv / bias2;
            *w -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self { factor: 0.5, patience: 25, min_lr: 1e-6 }
    }
}

/// Halves (by `factor`) the learning rate once validation accuracy has failed to improve for
/// more than `patience` consecutive epochs; training stops when the rate drops below `min_lr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub best_val_acc: f64,
    pub epochs_since_improvement: usize,
    pub current_lr: f64,
    pub config: PlateauConfig,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64, config: PlateauConfig) -> Self {
        Self { best_val_acc: f64::NEG_INFINITY, epochs_since_improvement: 0, current_lr: initial_lr, config }
    }

    /// Records one epoch's validation accuracy; returns `true` when training should stop.
    pub fn update(&mut self, val_acc: f64) -> bool {
        if val_acc > self.best_val_acc {
            self.best_val_acc = val_acc;
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
            if self.epochs_since_improvement > self.config.patience {
                self.current_lr *= self.config.factor;
                self.epochs_since_improvement = 0;
            }
        }
        self.current_lr < self.config.min_lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut w = Tensor::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let before = w.clone();
        let mut state = AdamState::new(&[&w], AdamConfig::default());
        for _ in 0..5 {
            adam_step(&mut [&mut w], &[Tensor::zeros(1, 3)], &mut state).unwrap();
        }
        assert_eq!(w, before);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let config = AdamConfig { lr: 1e-3, ..AdamConfig::default() };
        let mut w = Tensor::from_vec(1, 3, vec![0.0, 1.0, -1.0]).unwrap();
        let g = Tensor::from_vec(1, 3, vec![0.3, -2.0, 1e-3]).unwrap();
        let mut state = AdamState::new(&[&w], config);
        adam_step(&mut [&mut w], std::slice::from_ref(&g), &mut state).unwrap();
        // m_hat = g, v_hat = g^2 => delta = -lr * g / (|g| + eps)
        for (i, start) in [0.0, 1.0, -1.0].iter().enumerate() {
            let gi = g.data()[i];
            let expected = start - 1e-3 * gi / (gi.abs() + 1e-8);
            assert!((w.data()[i] - expected).abs() < 1e-9);
            assert!(((w.data()[i] - start).abs() - 1e-3).abs() < 1e-7);
        }
    }

    #[test]
    fn constant_gradient_descends() {
        let mut w = Tensor::filled(1, 1, 0.0);
        let mut state = AdamState::new(&[&w], AdamConfig::default());
        for _ in 0..100 {
            adam_step(&mut [&mut w], &[Tensor::filled(1, 1, 2.5)], &mut state).unwrap();
        }
        assert!(w.get(0, 0) < 0.0);
    }

    #[test]
    fn mismatched_shapes_error() {
        let mut w = Tensor::zeros(2, 2);
        let mut state = AdamState::new(&[&w], AdamConfig::default());
        assert!(adam_step(&mut [&mut w], &[Tensor::zeros(1, 2)], &mut state).is_err());
    }

    #[test]
    fn patience_26_bad_epochs_halve_once() {
        let mut s = PlateauScheduler::new(5e-5, PlateauConfig::default());
        assert!(!s.update(0.5));
        let mut halvings = 0;
        let mut last = s.current_lr;
        for _ in 0..26 {
            assert!(!s.update(0.4));
            if s.current_lr < last {
                halvings += 1;
                last = s.current_lr;
            }
        }
        assert_eq!(halvings, 1);
        assert_eq!(s.current_lr, 2.5e-5);
    }

    #[test]
    fn improving_never_reduces() {
        let mut s = PlateauScheduler::new(5e-5, PlateauConfig::default());
        for i in 0..200 {
            assert!(!s.update(i as f64 / 200.0));
        }
        assert_eq!(s.current_lr, 5e-5);
    }

    #[test]
    fn stops_below_min_lr() {
        let mut s = PlateauScheduler::new(1.5e-6, PlateauConfig::default());
        s.update(0.9);
        let stops: Vec<bool> = (0..26).map(|_| s.update(0.1)).collect();
        assert!(stops[..25].iter().all(|s| !s));
        assert!(stops[25]);
        assert!((s.current_lr - 7.5e-7).abs() < 1e-20);
    }
}
