use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Named parameters with their gradients and Adam state.
///
/// Iteration order is the lexicographic order of names, so everything
/// derived from a store (updates, checksums, checkpoints) is deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Arc<Tensor>>,
    grads: BTreeMap<String, Tensor>,
    moments: BTreeMap<String, Moments>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        self.grads.remove(&name);
        self.moments.remove(&name);
        self.params.insert(name, Arc::new(value));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|t| t.as_ref())
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub(crate) fn shared(&self, name: &str) -> Result<Arc<Tensor>> {
        self.params
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(Arc::make_mut)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v.as_ref()))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn set_grad(&mut self, name: &str, grad: Tensor) -> Result<()> {
        let param = self.get(name)?;
        if param.shape() != grad.shape() {
            return Err(Error::Shape {
                op: "set_grad",
                left: param.shape().to_vec(),
                right: grad.shape().to_vec(),
            });
        }
        self.grads.insert(name.to_string(), grad);
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.values_mut() {
            g.data_mut().fill(0.0);
        }
    }

    /// One bias-corrected Adam update of every parameter, then zeroes the
    /// gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some(name) = self.params.keys().find(|n| !self.grads.contains_key(*n)) {
            return Err(Error::MissingGradient(name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, param) in self.params.iter_mut() {
            let grad = &self.grads[name];
            let n = grad.numel();
            let mom = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            let p = Arc::make_mut(param).data_mut();
            for i in 0..n {
                let g = grad.data()[i];
                mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g;
                mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = mom.m[i] / bc1;
                let v_hat = mom.v[i] / bc2;
                p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    op: format!("adam update of `{name}`"),
                });
            }
        }
        self.zero_grads();
        Ok(())
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, t) in &self.params {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64, g: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new(vec![1], vec![w]).unwrap());
        s.set_grad("w", Tensor::new(vec![1], vec![g]).unwrap()).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2 at step 1, so the step is lr * g/(|g| + eps).
        let mut s = scalar_store(1.0, 1.0);
        s.adam_step(&AdamConfig::with_lr(0.001)).unwrap();
        let w = s.get("w").unwrap().data()[0];
        let expected = 1.0 - 0.001 * 1.0 / (1.0 + 1e-8);
        assert!((w - expected).abs() < 1e-15, "{w}");
        assert!((w - 0.999).abs() < 1e-9);
        assert_eq!(s.grad("w").unwrap().data(), &[0.0]);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = scalar_store(0.37, 0.0);
        s.adam_step(&AdamConfig::default()).unwrap();
        assert_eq!(s.get("w").unwrap().data(), &[0.37]);
    }

    #[test]
    fn repeated_gradient_does_not_grow_step() {
        let mut s = scalar_store(1.0, 0.5);
        let cfg = AdamConfig::with_lr(0.01);
        s.adam_step(&cfg).unwrap();
        let w1 = s.get("w").unwrap().data()[0];
        s.set_grad("w", Tensor::new(vec![1], vec![0.5]).unwrap()).unwrap();
        s.adam_step(&cfg).unwrap();
        let w2 = s.get("w").unwrap().data()[0];
        let first = (1.0 - w1).abs();
        let second = (w1 - w2).abs();
        assert!(second <= first * (1.0 + 1e-6), "{first} {second}");
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(&[2]));
        assert!(matches!(
            s.adam_step(&AdamConfig::default()),
            Err(Error::MissingGradient(_))
        ));
    }

    #[test]
    fn gradient_shape_must_match() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(&[2]));
        assert!(s.set_grad("w", Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn step_counter_increases() {
        let mut s = scalar_store(1.0, 1.0);
        for i in 1..=3 {
            s.set_grad("w", Tensor::new(vec![1], vec![1.0]).unwrap()).unwrap();
            s.adam_step(&AdamConfig::default()).unwrap();
            assert_eq!(s.step_count(), i);
        }
    }
}
