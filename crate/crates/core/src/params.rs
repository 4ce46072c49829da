//! Named parameters, non-trainable buffers, initialization and Adam.

use indexmap::IndexMap;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::ops::norm;
use crate::real::Real;
use crate::seed;
use crate::tape::{Gradients, Tape};
use crate::tensor::Tensor;

/// A trainable tensor with its gradient accumulator and Adam moments.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let n = value.numel();
        Param {
            value,
            grad: None,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    pub fn first_moment(&self) -> &[T] {
        &self.m
    }

    pub fn second_moment(&self) -> &[T] {
        &self.v
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Trainable parameters plus buffers (batch-norm running statistics),
/// both keyed by unique dotted names in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: IndexMap<String, Param<T>>,
    buffers: IndexMap<String, Tensor<T>>,
    step: u64,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: IndexMap::new(),
            buffers: IndexMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.params.insert(name, Param::new(value));
        Ok(())
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::Config(format!("duplicate buffer name `{name}`")));
        }
        self.buffers.insert(name, value);
        Ok(())
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor<T>> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn buffer_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.buffers
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count of trainable parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// Adds the tape's gradients into every parameter bound on it. Bound
    /// parameters the loss does not reach receive zeros.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, grads: &Gradients<T>) -> Result<()> {
        for (name, var) in tape.bindings() {
            let g = grads.get_or_zero(tape, var);
            let p = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
            match &mut p.grad {
                Some(acc) => acc
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(a, b)| *a += *b),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// One Adam step with bias correction over every parameter.
    ///
    /// Gradients are left in place; call [`ParamStore::zero_grad`] to clear.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some((name, _)) = self.params.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(Error::MissingGradient(name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        let lr = T::lit(cfg.lr);
        let eps = T::lit(cfg.eps);
        for p in self.params.values_mut() {
            let g = p.grad.as_ref().expect("checked above");
            for (((w, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(p.m.iter_mut())
                .zip(p.v.iter_mut())
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moves the running statistics `{prefix}.running_mean/var` towards a
    /// batch's statistics.
    pub fn update_bn_running(
        &mut self,
        prefix: &str,
        mean: &[T],
        var: &[T],
        momentum: f64,
    ) -> Result<()> {
        let rm = self.buffer_mut(&format!("{prefix}.running_mean"))?;
        norm::update_running(rm.data_mut(), mean, momentum);
        let rv = self.buffer_mut(&format!("{prefix}.running_var"))?;
        norm::update_running(rv.data_mut(), var, momentum);
        Ok(())
    }

    /// Copy of the store in another precision. Optimizer state is reset.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (k, p) in &self.params {
            out.params.insert(k.clone(), Param::new(p.value.cast()));
        }
        for (k, b) in &self.buffers {
            out.buffers.insert(k.clone(), b.cast());
        }
        out
    }
}

/// He (Kaiming) normal initialization: zero mean, standard deviation
/// `sqrt(2 / fan_in)`. The stream depends only on `(seed, name)`.
pub fn he_init<T: Real>(shape: &[usize], fan_in: usize, seed: u64, name: &str) -> Result<Tensor<T>> {
    if fan_in == 0 {
        return Err(Error::invalid("he_init", "fan_in must be >= 1"));
    }
    normal_init(shape, (2.0 / fan_in as f64).sqrt(), seed, name)
}

/// Zero-mean normal initialization with a fixed standard deviation, drawn
/// from the same `(seed, name)` stream as [`he_init`].
pub fn normal_init<T: Real>(shape: &[usize], std: f64, seed: u64, name: &str) -> Result<Tensor<T>> {
    if !(std.is_finite() && std >= 0.0) {
        return Err(Error::invalid("normal_init", format!("bad standard deviation {std}")));
    }
    let mut rng = seed::rng(seed, &format!("init/{name}"));
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::lit(z * std)
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}
