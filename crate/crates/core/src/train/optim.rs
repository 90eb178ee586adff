use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::Param;

/// Step decay: `initial_lr * gamma^floor(epoch / step_epochs)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub gamma: f64,
    pub step_epochs: usize,
}

impl LrSchedule {
    pub fn new(initial_lr: f64, gamma: f64, step_epochs: usize) -> Result<Self> {
        let s = LrSchedule {
            initial_lr,
            gamma,
            step_epochs,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.initial_lr)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("lr gamma {} must lie in (0, 1]", self.gamma)));
        }
        if self.step_epochs == 0 {
            return Err(Error::Config("lr step_epochs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.initial_lr * self.gamma.powi((epoch / self.step_epochs) as i32)
    }
}

/// Stochastic gradient descent with heavy-ball momentum:
/// `v = momentum * v + g; w -= lr * v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: HashMap<String, Vec<f32>>,
}

impl SgdMomentum {
    /// One zeroed velocity buffer per trainable, unfrozen parameter.
    pub fn new<'a>(lr: f64, momentum: f64, params: impl IntoIterator<Item = &'a Param>) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {lr} must be positive")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum {momentum} must lie in [0, 1)")));
        }
        let velocity = params
            .into_iter()
            .filter(|p| p.trainable && !p.is_frozen())
            .map(|p| (p.name.clone(), vec![0.0; p.value.numel()]))
            .collect();
        Ok(SgdMomentum { lr, momentum, velocity })
    }

    pub fn velocity(&self, name: &str) -> Option<&[f32]> {
        self.velocity.get(name).map(Vec::as_slice)
    }

    /// Updates every parameter that owns a velocity buffer. Frozen
    /// parameters and buffers are left alone; gradients are not cleared.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Param>) -> Result<()> {
        let (lr, m) = (self.lr as f32, self.momentum as f32);
        for p in params {
            let Some(v) = self.velocity.get_mut(&p.name) else {
                continue;
            };
            if p.is_frozen() {
                continue;
            }
            let Some(g) = p.value.grad() else {
                return Err(Error::contract("sgd_step", format!("no gradient for `{}`", p.name)));
            };
            for (vi, &gi) in v.iter_mut().zip(g) {
                *vi = m * *vi + gi;
            }
            for (w, &vi) in p.value.data_mut().iter_mut().zip(v.iter()) {
                *w -= lr * vi;
            }
        }
        Ok(())
    }
}

/// One optimizer step at an explicit learning rate.
pub fn sgd_step<'a>(opt: &mut SgdMomentum, params: impl IntoIterator<Item = &'a mut Param>, lr: f64) -> Result<()> {
    opt.lr = lr;
    opt.step(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tensor;

    fn param(w: f32, g: Option<f32>) -> Param {
        let mut p = Param::trainable("w".into(), Tensor::new(vec![1], vec![w]).unwrap());
        if let Some(g) = g {
            p.value.accumulate_grad(&[g]).unwrap();
        }
        p
    }

    #[test]
    fn hand_computed_step() {
        let mut p = param(1.0, Some(0.5));
        let mut opt = SgdMomentum::new(0.1, 0.9, [&p]).unwrap();
        sgd_step(&mut opt, [&mut p], 0.1).unwrap();
        assert_eq!(opt.velocity("w").unwrap(), &[0.5]);
        assert!((p.value.data()[0] - 0.95).abs() < 1e-7);
    }

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let mut p = param(2.0, Some(-1.0));
        let mut opt = SgdMomentum::new(0.25, 0.0, [&p]).unwrap();
        opt.step([&mut p]).unwrap();
        opt.step([&mut p]).unwrap();
        assert_eq!(p.value.data()[0], 2.5);
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        let mut p = param(3.0, Some(0.0));
        let mut opt = SgdMomentum::new(0.1, 0.9, [&p]).unwrap();
        opt.step([&mut p]).unwrap();
        assert_eq!(p.value.data()[0], 3.0);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = param(1.0, None);
        let mut opt = SgdMomentum::new(0.1, 0.9, [&p]).unwrap();
        assert!(matches!(opt.step([&mut p]), Err(Error::Contract { .. })));
    }

    #[test]
    fn frozen_parameters_have_no_buffer() {
        let mut p = param(1.0, None);
        p.value.set_requires_grad(false);
        let mut opt = SgdMomentum::new(0.1, 0.9, [&p]).unwrap();
        assert!(opt.velocity("w").is_none());
        opt.step([&mut p]).unwrap();
        assert_eq!(p.value.data()[0], 1.0);
    }

    #[test]
    fn schedule_values() {
        let s = LrSchedule::new(0.001, 0.5, 10).unwrap();
        assert_eq!(s.lr_at_epoch(0), 0.001);
        assert_eq!(s.lr_at_epoch(9), 0.001);
        assert_eq!(s.lr_at_epoch(10), 0.0005);
        let flat = LrSchedule::new(0.05, 1.0, 3).unwrap();
        assert!((0..50).all(|e| flat.lr_at_epoch(e) == 0.05));
        assert!(LrSchedule::new(0.1, 0.0, 1).is_err());
        assert!(LrSchedule::new(0.1, 0.5, 0).is_err());
    }
}
