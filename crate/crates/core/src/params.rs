//! Named parameter tensors with gradient buffers and Adam state.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One parameter tensor, stored row-major as `rows × cols`.
#[derive(Clone, Debug)]
pub struct Param {
    name: String,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    grad: Vec<f64>,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    has_grad: bool,
}

impl Param {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn value(&self) -> &[f64] {
        &self.value
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn has_grad(&self) -> bool {
        self.has_grad
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        value: Vec<f64>,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Usage(format!("duplicate parameter name `{name}`")));
        }
        if value.len() != rows * cols {
            return Err(Error::shape("ParamStore::add", rows * cols, value.len()));
        }
        let n = value.len();
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.clone(),
            rows,
            cols,
            value,
            grad: vec![0.0; n],
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            has_grad: false,
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    /// Mutable gradient buffer; marks the parameter as having a populated gradient.
    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        let p = &mut self.params[id.0];
        p.has_grad = true;
        &mut p.grad
    }

    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&[f64], &mut [f64]) {
        let p = &mut self.params[id.0];
        p.has_grad = true;
        (&p.value, &mut p.grad)
    }

    /// Overwrite a parameter's values by name.
    pub fn set(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Usage(format!("unknown parameter `{name}`")))?;
        let p = &mut self.params[id.0];
        if p.value.len() != values.len() {
            return Err(Error::shape("ParamStore::set", p.value.len(), values.len()));
        }
        p.value.copy_from_slice(values);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
            p.has_grad = false;
        }
    }

    /// Copies of every parameter's values, in store order.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) -> Result<()> {
        if snapshot.len() != self.params.len() {
            return Err(Error::shape(
                "ParamStore::restore",
                self.params.len(),
                snapshot.len(),
            ));
        }
        for (p, s) in self.params.iter_mut().zip(snapshot) {
            if p.value.len() != s.len() {
                return Err(Error::shape("ParamStore::restore", p.value.len(), s.len()));
            }
            p.value.copy_from_slice(s);
        }
        Ok(())
    }

    /// Bias-corrected Adam update over every parameter, then zero the gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| !p.has_grad) {
            return Err(Error::Usage(format!(
                "gradient for parameter `{}` was not populated before the optimizer step",
                p.name
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - cfg.beta1.powi(t);
        let bias2 = 1.0 - cfg.beta2.powi(t);
        for p in &mut self.params {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                p.first_moment[i] = cfg.beta1 * p.first_moment[i] + (1.0 - cfg.beta1) * g;
                p.second_moment[i] = cfg.beta2 * p.second_moment[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = p.first_moment[i] / bias1;
                let v_hat = p.second_moment[i] / bias2;
                if v_hat > 0.0 {
                    p.value[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
                }
                p.grad[i] = 0.0;
            }
            p.has_grad = false;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("x", 1, 1, vec![value]).unwrap();
        (store, id)
    }

    #[test]
    fn duplicate_names_rejected() {
        let (mut store, _) = single(0.0);
        assert!(matches!(
            store.add("x", 1, 1, vec![1.0]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let (mut store, id) = single(0.7);
        store.grad_mut(id)[0] = 0.0;
        store.adam_step(&AdamConfig::default()).unwrap();
        assert_eq!(store.value(id)[0], 0.7);
        assert_eq!(store.step(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig {
            epsilon: 0.0,
            ..AdamConfig::default()
        };
        for g in [3.5, -0.02] {
            let (mut store, id) = single(1.0);
            store.grad_mut(id)[0] = g;
            store.adam_step(&cfg).unwrap();
            let delta = store.value(id)[0] - 1.0;
            assert!((delta.abs() - cfg.learning_rate).abs() < 1e-12);
            assert_eq!(delta.signum(), -g.signum());
        }
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let (mut store, id) = single(0.0);
        let mut prev = 0.0;
        for _ in 0..2 {
            store.grad_mut(id)[0] = 0.4;
            store.adam_step(&AdamConfig::default()).unwrap();
            let now = store.value(id)[0];
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn unpopulated_gradient_is_usage_error() {
        let (mut store, _) = single(0.0);
        assert!(matches!(
            store.adam_step(&AdamConfig::default()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn step_zeroes_gradients() {
        let (mut store, id) = single(0.0);
        store.grad_mut(id)[0] = 2.0;
        store.adam_step(&AdamConfig::default()).unwrap();
        assert_eq!(store.grad(id)[0], 0.0);
        assert!(!store.get(id).has_grad());
    }
}
