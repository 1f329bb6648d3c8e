use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Per-parameter state for SGD with momentum and decoupled-from-nothing
/// (L2-style) weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub velocity: Vec<f64>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptimState {
    pub fn new(param: &Tensor, learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::config(format!("learning rate {learning_rate} must be positive")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum {momentum} outside [0, 1)")));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::config(format!("weight decay {weight_decay} is negative")));
        }
        Ok(Self {
            velocity: vec![0.0; param.len()],
            learning_rate,
            momentum,
            weight_decay,
        })
    }
}

/// `v <- momentum * v + (grad + weight_decay * param)`, `param <- param - lr * v`.
/// The gradient is cleared afterwards.
pub fn sgd_momentum_step(param: &mut Tensor, state: &mut OptimState) -> Result<()> {
    let grad = param
        .grad()
        .ok_or_else(|| Error::State("sgd step on a parameter without gradient".into()))?
        .to_vec();
    if state.velocity.len() != param.len() {
        return Err(Error::shape(format!(
            "velocity of length {} for parameter of length {}",
            state.velocity.len(),
            param.len()
        )));
    }
    let (lr, mom, wd) = (state.learning_rate, state.momentum, state.weight_decay);
    for ((p, v), g) in param.values_mut().iter_mut().zip(&mut state.velocity).zip(&grad) {
        *v = mom * *v + (g + wd * *p);
        *p -= lr * *v;
    }
    param.clear_grad();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_with(param: f64, grad: f64, state: &mut OptimState) -> f64 {
        let mut t = Tensor::scalar(param);
        t.accumulate_grad(&[grad]).unwrap();
        sgd_momentum_step(&mut t, state).unwrap();
        assert!(t.grad().is_none());
        t.values()[0]
    }

    #[test]
    fn single_plain_step() {
        let mut st = OptimState::new(&Tensor::scalar(1.0), 0.1, 0.0, 0.0).unwrap();
        assert!((step_with(1.0, 1.0, &mut st) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_is_fixed_point() {
        let mut st = OptimState::new(&Tensor::scalar(0.0), 0.3, 0.9, 0.0).unwrap();
        assert_eq!(step_with(0.123, 0.0, &mut st).to_bits(), 0.123f64.to_bits());
    }

    #[test]
    fn momentum_recurrence() {
        let mut st = OptimState::new(&Tensor::scalar(0.0), 1.0, 0.5, 0.0).unwrap();
        let p1 = step_with(0.0, 1.0, &mut st);
        assert_eq!(p1, -1.0);
        let p2 = step_with(p1, 1.0, &mut st);
        assert_eq!(p2, -2.5);
    }

    #[test]
    fn missing_grad_is_state_error() {
        let mut t = Tensor::scalar(1.0);
        let mut st = OptimState::new(&t, 0.1, 0.0, 0.0).unwrap();
        assert!(matches!(sgd_momentum_step(&mut t, &mut st), Err(Error::State(_))));
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let t = Tensor::scalar(1.0);
        assert!(OptimState::new(&t, 0.0, 0.1, 0.0).is_err());
        assert!(OptimState::new(&t, 0.1, 1.0, 0.0).is_err());
        assert!(OptimState::new(&t, 0.1, 0.1, -1.0).is_err());
    }
}
