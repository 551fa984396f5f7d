use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Index of an entry inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    m: Tensor<T>,
    v: Tensor<T>,
    steps: u64,
}

impl<T: Real> ParamEntry<T> {
    fn new(name: String, value: Tensor<T>) -> Self {
        let shape = value.shape().to_vec();
        ParamEntry {
            name,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            value,
            steps: 0,
        }
    }

    pub fn first_moment(&self) -> &Tensor<T> {
        &self.m
    }

    pub fn second_moment(&self) -> &Tensor<T> {
        &self.v
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

/// Named parameter tensors with gradient buffers and Adam state.
///
/// Entries keep insertion order, which is also the checkpoint order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
    step_count: u64,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
            step_count: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry::new(name, value));
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry<T> {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].grad
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(T::zero());
        }
    }

    /// L2 norm of the gradients of entries whose name satisfies `select`.
    pub fn grad_norm(&self, select: impl Fn(&str) -> bool) -> f64 {
        self.entries
            .iter()
            .filter(|e| select(&e.name))
            .map(|e| e.grad.sum_sq().as_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescale the selected gradients so their joint norm is at most
    /// `max_norm`. Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, select: impl Fn(&str) -> bool, max_norm: f64) -> f64 {
        let norm = self.grad_norm(&select);
        if norm.is_finite() && norm > max_norm {
            let scale = T::lit(max_norm / (norm + 1e-6));
            for e in self.entries.iter_mut().filter(|e| select(&e.name)) {
                e.grad.data_mut().iter_mut().for_each(|g| *g *= scale);
            }
        }
        norm
    }

    /// Bias-corrected Adam update on every entry, then zero the gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        self.adam_step_where(cfg, |_| true)
    }

    /// Adam update restricted to entries whose name satisfies `select`.
    ///
    /// Each entry keeps its own bias-correction step so parameter groups
    /// updated on different schedules stay correctly corrected. An entry
    /// whose gradient is identically zero only decays its moments; its
    /// values are left untouched. Nothing is modified if any selected
    /// gradient is non-finite.
    pub fn adam_step_where(&mut self, cfg: &AdamConfig, select: impl Fn(&str) -> bool) -> Result<()> {
        if let Some(bad) = self
            .entries
            .iter()
            .find(|e| select(&e.name) && !e.grad.is_finite())
        {
            return Err(Error::NonFiniteGradient(bad.name.clone()));
        }
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let (one_m_b1, one_m_b2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
        let eps = T::lit(cfg.eps);
        for e in self.entries.iter_mut().filter(|e| select(&e.name)) {
            e.steps += 1;
            let all_zero = e.grad.data().iter().all(|g| *g == T::zero());
            let t = e.steps as i32;
            let c1 = T::lit(1.0 - cfg.beta1.powi(t));
            let c2 = T::lit(1.0 - cfg.beta2.powi(t));
            let lr = T::lit(cfg.lr);
            let ParamEntry { value, grad, m, v, .. } = e;
            for (((p, &g), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + one_m_b1 * g;
                *vi = b2 * *vi + one_m_b2 * g * g;
                if !all_zero {
                    let m_hat = *mi / c1;
                    let v_hat = *vi / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
            grad.fill(T::zero());
        }
        self.step_count += 1;
        Ok(())
    }

    /// Copy of the values only, with fresh gradients and optimizer state.
    pub fn snapshot(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for e in &self.entries {
            out.add(e.name.clone(), e.value.clone()).expect("names are unique");
        }
        out
    }

    pub fn named_values(&self) -> Vec<(&str, &Tensor<T>)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value)).collect()
    }

    /// Overwrite values from `(name, tensor)` pairs; every entry must be covered
    /// exactly and shapes must agree.
    pub fn load_values(&mut self, values: Vec<(String, Tensor<T>)>) -> Result<()> {
        if values.len() != self.entries.len() {
            return Err(Error::Format(format!(
                "expected {} entries, found {}",
                self.entries.len(),
                values.len()
            )));
        }
        for (name, t) in values {
            let id = self.id(&name)?;
            let entry = &mut self.entries[id.0];
            if entry.value.shape() != t.shape() {
                return Err(Error::shape(name, entry.value.shape(), t.shape()));
            }
            entry.value = t;
        }
        Ok(())
    }

    /// Flat copy of all values, in entry order.
    pub fn flat_values(&self) -> Vec<T> {
        self.entries
            .iter()
            .flat_map(|e| e.value.data().iter().copied())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::from_f64(&[1], &[v]).unwrap()).unwrap();
        (s, id)
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = scalar_store(0.0);
        s.grad_mut(id).data_mut()[0] = 1.0;
        s.adam_step(&AdamConfig::with_lr(0.001)).unwrap();
        let got = s.value(id).data()[0];
        // m_hat = 1, v_hat = 1, update = lr / (1 + eps)
        let want = -0.001 / (1.0 + 1e-8);
        assert!((got - want).abs() < 1e-15, "{got}");
        assert!((got + 0.0009999999).abs() < 1e-10);
        assert_eq!(s.step_count(), 1);
        assert_eq!(s.grad(id).data()[0], 0.0);
    }

    #[test]
    fn equal_gradients_move_by_lr_each_step() {
        let (mut s, id) = scalar_store(0.0);
        let cfg = AdamConfig::with_lr(0.001);
        let mut prev = 0.0;
        for _ in 0..2 {
            s.grad_mut(id).data_mut()[0] = 1.0;
            s.adam_step(&cfg).unwrap();
            let cur = s.value(id).data()[0];
            assert!(((prev - cur) - 0.001).abs() < 1e-9);
            prev = cur;
        }
        assert_eq!(s.step_count(), 2);
    }

    #[test]
    fn zero_gradient_keeps_values_and_decays_moments() {
        let (mut s, id) = scalar_store(0.5);
        let cfg = AdamConfig::default();
        s.grad_mut(id).data_mut()[0] = 2.0;
        s.adam_step(&cfg).unwrap();
        let after_first = s.value(id).data()[0];
        let m1 = s.entry(id).first_moment().data()[0];
        s.adam_step(&cfg).unwrap();
        assert_eq!(s.value(id).data()[0], after_first);
        let m2 = s.entry(id).first_moment().data()[0];
        assert!((m2 - 0.9 * m1).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts_and_names_entry() {
        let mut s = ParamStore::<f64>::new();
        let a = s.add("a", Tensor::zeros(&[2])).unwrap();
        let b = s.add("b", Tensor::zeros(&[1])).unwrap();
        s.grad_mut(a).data_mut()[0] = 1.0;
        s.grad_mut(b).data_mut()[0] = f64::NAN;
        match s.adam_step(&AdamConfig::default()) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "b"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.value(a).data(), &[0.0, 0.0]);
        assert_eq!(s.step_count(), 0);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f64>::new();
        s.add("x", Tensor::zeros(&[1])).unwrap();
        assert!(matches!(s.add("x", Tensor::zeros(&[1])), Err(Error::DuplicateParam(_))));
    }

    #[test]
    fn clip_scales_selected_only() {
        let mut s = ParamStore::<f64>::new();
        let a = s.add("a.w", Tensor::zeros(&[2])).unwrap();
        let b = s.add("b.w", Tensor::zeros(&[1])).unwrap();
        s.grad_mut(a).data_mut().copy_from_slice(&[3.0, 4.0]);
        s.grad_mut(b).data_mut()[0] = 10.0;
        let norm = s.clip_grad_norm(|n| n.starts_with("a."), 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        assert!((s.grad_norm(|n| n.starts_with("a.")) - 1.0).abs() < 1e-6);
        assert_eq!(s.grad(b).data()[0], 10.0);
    }
}
