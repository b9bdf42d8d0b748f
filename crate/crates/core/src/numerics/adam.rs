use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::numerics::params::ParamStore;
use crate::numerics::tensor::Tensor;
use crate::numerics::NumericsError;
use crate::scalar::Scalar;

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: BTreeMap<String, Tensor<S>>,
    pub second_moment: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }
}

/// One bias-corrected Adam update over every parameter, then zeroes the
/// gradient slots.
pub fn adam_step<S: Scalar>(
    params: &mut ParamStore<S>,
    state: &mut AdamState<S>,
) -> Result<(), NumericsError> {
    if let Some(name) = params.names().find(|n| params.grad(n).is_none()) {
        return Err(NumericsError::MissingGrad(name.to_string()));
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = S::of(state.config.beta1);
    let b2 = S::of(state.config.beta2);
    let lr = S::of(state.config.lr);
    let eps = S::of(state.config.eps);
    let c1 = S::one() - b1.powi(t);
    let c2 = S::one() - b2.powi(t);

    for (name, value, grad) in params.slots_mut() {
        let g = grad.as_mut().expect("checked above");
        let m = state
            .first_moment
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(value.shape()));
        let v = state
            .second_moment
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(value.shape()));
        for (((p, &gi), mi), vi) in value
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mi = b1 * *mi + (S::one() - b1) * gi;
            *vi = b2 * *vi + (S::one() - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        for x in g.data_mut() {
            *x = S::zero();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::scalar(v)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = ParamStore::new();
        p.insert("a", Tensor::from_vec(vec![1.5, -2.0])).unwrap();
        p.insert("b", Tensor::scalar(0.25)).unwrap();
        let before = p.clone();
        let mut s = AdamState::new(AdamConfig::default());
        p.zero_grads();
        adam_step(&mut p, &mut s).unwrap();
        assert!(p.values_bit_equal(&before));
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_store(1.0);
        let mut s = AdamState::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        p.set_grad("w", Tensor::scalar(1.0)).unwrap();
        adam_step(&mut p, &mut s).unwrap();
        // m̂ = v̂ = 1, so the update is lr / (1 + eps)
        assert!((p.get("w").unwrap().item() - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(p.grad("w").unwrap().item(), 0.0);
    }

    #[test]
    fn two_steps_match_scalar_reference() {
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        let grads = [0.7, -1.3];
        let (mut theta, mut m, mut v) = (0.4f64, 0.0f64, 0.0f64);
        for (i, g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t));
            let vh = v / (1.0 - cfg.beta2.powi(t));
            theta -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
        let mut p = scalar_store(0.4);
        let mut s = AdamState::new(cfg);
        for g in grads {
            p.set_grad("w", Tensor::scalar(g)).unwrap();
            adam_step(&mut p, &mut s).unwrap();
        }
        assert!((p.get("w").unwrap().item() - theta).abs() <= 1e-12);
        assert_eq!(s.step, 2);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut p = scalar_store(1.0);
        let mut s = AdamState::new(AdamConfig::default());
        let err = adam_step(&mut p, &mut s).unwrap_err();
        assert!(err.to_string().contains("`w`"), "{err}");
        assert_eq!(s.step, 0);
    }
}
