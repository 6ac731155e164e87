//! SGD with momentum, decoupled weight decay, and a step learning-rate schedule.

use crate::error::{Result, RsanError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `v ← μ·v + g;  θ ← (1 − η·λ)·θ − η·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }

    /// Restores momentum buffers, e.g. from a checkpoint. An empty list means
    /// no step has been taken yet.
    pub fn set_velocity(&mut self, velocity: Vec<Tensor<T>>) {
        self.velocity = velocity;
    }

    pub fn step(&mut self, lr: f64, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(RsanError::Usage(format!(
                "{} parameter groups but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        let decay = 1.0 - lr * self.weight_decay;
        for ((p, g), buf) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            if p.shape() != g.shape() || p.shape() != buf.shape() {
                return Err(RsanError::dim(
                    "sgd",
                    format!("parameter {:?} vs gradient {:?}", p.shape(), g.shape()),
                ));
            }
            for ((x, &gi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(buf.data_mut().iter_mut())
            {
                let v = self.momentum * vi.to_acc() + gi.to_acc();
                *vi = T::from_acc(v);
                *x = T::from_acc(x.to_acc() * decay - lr * v);
            }
        }
        Ok(())
    }
}

/// `lr(e) = base · factor^⌊e / every⌋` for zero-based epoch `e`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub base: f64,
    pub factor: f64,
    pub every: usize,
}

impl StepSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mut lr = self.base;
        for _ in 0..epoch / self.every.max(1) {
            lr *= self.factor;
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sgd_step_on_quadratic() {
        // loss = (θ − 3)², grad = 2(θ − 3)
        let mut theta = Tensor::<f64>::from_vec(&[1], vec![1.25]).unwrap();
        let grad = Tensor::from_vec(&[1], vec![2.0 * (1.25 - 3.0)]).unwrap();
        let mut opt = Sgd::new(0.0, 0.0);
        opt.step(0.1, &mut [&mut theta], &[&grad]).unwrap();
        assert_eq!(theta.data()[0], 1.25 - 0.1 * (2.0 * (1.25 - 3.0)));
    }

    #[test]
    fn momentum_accumulates() {
        let mut theta = Tensor::<f64>::zeros(&[1]);
        let g = Tensor::ones(&[1]);
        let mut opt = Sgd::new(0.5, 0.0);
        opt.step(1.0, &mut [&mut theta], &[&g]).unwrap();
        opt.step(1.0, &mut [&mut theta], &[&g]).unwrap();
        assert_eq!(theta.data()[0], -1.0 - 1.5);
    }

    #[test]
    fn weight_decay_contracts_exactly() {
        let mut theta = Tensor::<f64>::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let zero = Tensor::zeros(&[3]);
        let mut opt = Sgd::new(0.9, 1e-2);
        let (lr, factor) = (0.1, 1.0 - 0.1 * 1e-2);
        for _ in 0..5 {
            let before = theta.clone();
            opt.step(lr, &mut [&mut theta], &[&zero]).unwrap();
            for (a, b) in theta.data().iter().zip(before.data()) {
                assert_eq!(*a, b * factor);
            }
        }
    }

    #[test]
    fn schedule_halves_on_boundaries() {
        let s = StepSchedule {
            base: 1e-3,
            factor: 0.5,
            every: 10,
        };
        assert_eq!(s.lr_at(0), 1e-3);
        assert_eq!(s.lr_at(9), 1e-3);
        assert_eq!(s.lr_at(10), 5e-4);
        assert_eq!(s.lr_at(19), 5e-4);
        assert_eq!(s.lr_at(20), 2.5e-4);
    }
}
