use std::collections::BTreeMap;

use super::params::ParamSet;

use super::tensor::Tensor;
use crate::{Error, Result};

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: per-tensor first/second moment accumulators and a step
/// counter that strictly increases.
#[derive(Debug, Clone, Default)]
pub struct OptState {
    moments: BTreeMap<String, (Tensor<f32>, Tensor<f32>)>,
    step: u64,
}

impl OptState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Named gradient tensors accumulated over a batch.
#[derive(Debug, Clone, Default)]
pub struct GradSet {
    grads: BTreeMap<String, Tensor<f32>>,
}

impl GradSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, name: &str, grad: &Tensor<f32>) {
        match self.grads.get_mut(name) {
            Some(g) => {
                assert_eq!(g.shape(), grad.shape(), "gradient shape changed for `{name}`");
                for (a, &b) in g.data_mut().iter_mut().zip(grad.data()) {
                    *a += b;
                }
            }
            None => {
                self.grads.insert(name.to_string(), grad.clone());
            }
        }
    }

    pub fn scale(&mut self, c: f32) {
        for g in self.grads.values_mut() {
            for v in g.data_mut() {
                *v *= c;
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<f32>)> {
        self.grads.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.values().all(|g| g.all_finite())
    }

    /// Global L2 clip; returns the pre-clip norm.
    pub fn clip_l2(&mut self, max_norm: f32) -> f32 {
        let mut sq = 0.0f64;
        for g in self.grads.values() {
            for &v in g.data() {
                sq += (v as f64) * (v as f64);
            }
        }
        let norm = sq.sqrt() as f32;
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }
}

/// One Adam update with bias correction. Frozen tensors are untouched and
/// their accumulators are never created; the step counter always increments.
pub fn adam_step(
    params: &mut ParamSet<f32>,
    grads: &GradSet,
    state: &mut OptState,
    hyper: &AdamHyper,
) -> Result<()> {
    for (name, grad) in grads.iter() {
        if !params.contains(name) {
            return Err(Error::Invalid(format!("gradient for unknown tensor `{name}`")));
        }
        let p = params.get(name);
        if p.shape() != grad.shape() {
            return Err(Error::shape(
                format!("adam_step tensor `{name}`"),
                format!("{:?}", p.shape()),
                format!("{:?}", grad.shape()),
            ));
        }
        if !grad.all_finite() {
            return Err(Error::NonFinite(format!("gradient of `{name}`")));
        }
    }

    state.step += 1;
    let t = state.step;
    let b1 = hyper.beta1 as f32;
    let b2 = hyper.beta2 as f32;
    let bc1 = 1.0 - (hyper.beta1).powi(t as i32) as f32;
    let bc2 = 1.0 - (hyper.beta2).powi(t as i32) as f32;
    let lr = hyper.lr as f32;
    let eps = hyper.eps as f32;

    let frozen: Vec<String> = params
        .iter()
        .filter(|(_, e)| e.frozen)
        .map(|(n, _)| n.clone())
        .collect();

    for (name, entry) in params.iter_mut() {
        if entry.frozen {
            continue;
        }
        let Some(grad) = grads.get(name) else { continue };
        let (m, v) = state
            .moments
            .entry(name.clone())
            .or_insert_with(|| (Tensor::zeros(grad.shape()), Tensor::zeros(grad.shape())));
        let pd = entry.tensor.data_mut();
        for i in 0..pd.len() {
            let g = grad.data()[i];
            let mi = b1 * m.data()[i] + (1.0 - b1) * g;
            let vi = b2 * v.data()[i] + (1.0 - b2) * g * g;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            pd[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }

    debug_assert!(frozen.iter().all(|n| !state.moments.contains_key(n)));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(v: f32) -> ParamSet<f32> {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::scalar(v));
        p
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = scalar_params(1.5);
        let mut g = GradSet::new();
        g.accumulate("x", &Tensor::scalar(0.0));
        let mut st = OptState::new();
        adam_step(&mut p, &g, &mut st, &AdamHyper::default()).unwrap();
        assert_eq!(p.get("x").item(), 1.5);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        // g=1 at step 1: m_hat = 1, v_hat = 1, update = lr / (1 + eps).
        let mut p = scalar_params(0.0);
        let mut g = GradSet::new();
        g.accumulate("x", &Tensor::scalar(1.0));
        let mut st = OptState::new();
        adam_step(&mut p, &g, &mut st, &AdamHyper::default()).unwrap();
        let update = p.get("x").item().abs();
        assert!((update - 0.001).abs() < 1e-6, "update {update}");
    }

    #[test]
    fn deterministic_given_same_inputs() {
        let run = || {
            let mut p = scalar_params(0.3);
            p.insert("w", Tensor::from_vec(&[2], vec![0.1, -0.2]));
            let mut g = GradSet::new();
            g.accumulate("x", &Tensor::scalar(0.7));
            g.accumulate("w", &Tensor::from_vec(&[2], vec![-0.5, 0.25]));
            let mut st = OptState::new();
            for _ in 0..5 {
                adam_step(&mut p, &g, &mut st, &AdamHyper::default()).unwrap();
            }
            (p.get("x").item(), p.get("w").data().to_vec())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn frozen_tensor_bit_identical() {
        let mut p = scalar_params(0.25);
        p.set_frozen("x", true);
        let before = p.get("x").item().to_bits();
        let mut g = GradSet::new();
        g.accumulate("x", &Tensor::scalar(3.0));
        let mut st = OptState::new();
        for _ in 0..10 {
            adam_step(&mut p, &g, &mut st, &AdamHyper::default()).unwrap();
        }
        assert_eq!(p.get("x").item().to_bits(), before);
    }

    #[test]
    fn shape_mismatch_names_tensor() {
        let mut p = scalar_params(0.0);
        let mut g = GradSet::new();
        g.accumulate("x", &Tensor::from_vec(&[2], vec![1.0, 1.0]));
        let mut st = OptState::new();
        let err = adam_step(&mut p, &g, &mut st, &AdamHyper::default()).unwrap_err();
        assert!(err.to_string().contains("`x`"), "{err}");
    }
}
