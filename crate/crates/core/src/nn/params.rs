use std::collections::BTreeMap;

use super::Real;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One named parameter with its Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn new(shape: Vec<usize>, value: Vec<T>) -> Self {
        let n = value.len();
        debug_assert_eq!(n, shape.iter().product::<usize>());
        Param {
            shape,
            value,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }
}

/// Gradients keyed by parameter name.
pub type Grads<T> = BTreeMap<String, Vec<T>>;

/// Accumulates `g` into `grads[name]`, allocating on first use.
pub fn accumulate<T: Real>(grads: &mut Grads<T>, name: &str, g: &[T]) {
    match grads.get_mut(name) {
        Some(acc) => {
            for (a, &b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => {
            grads.insert(name.to_string(), g.to_vec());
        }
    }
}

/// Named parameters, Adam state and step count. Iteration order is the
/// lexicographic order of names.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    pub params: BTreeMap<String, Param<T>>,
    pub step: u64,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, value: Vec<T>) {
        self.params.insert(name.into(), Param::new(shape, value));
    }

    pub fn get(&self, name: &str) -> Result<&[T]> {
        self.params
            .get(name)
            .map(|p| p.value.as_slice())
            .ok_or_else(|| Error::State(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Vec<T>> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::State(format!("missing parameter `{name}`")))
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.f64())).collect::<Vec<U>>();
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            shape: p.shape.clone(),
                            value: conv(&p.value),
                            m: conv(&p.m),
                            v: conv(&p.v),
                        },
                    )
                })
                .collect(),
            step: self.step,
        }
    }

    /// Adds every parameter of `other` (names must not collide).
    pub fn merge(&mut self, other: ParamStore<T>) -> Result<()> {
        for (k, p) in other.params {
            if self.params.contains_key(&k) {
                return Err(Error::invalid(format!("duplicate parameter `{k}`")));
            }
            self.params.insert(k, p);
        }
        Ok(())
    }

    /// Bias-corrected Adam update. Parameters without a gradient entry are
    /// updated as if their gradient were zero.
    pub fn adam_step(&mut self, grads: &Grads<T>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            match self.params.get(name) {
                Some(p) if p.value.len() == g.len() => {}
                Some(p) => {
                    return Err(Error::invalid(format!(
                        "gradient for `{name}` has {} values, parameter has {}",
                        g.len(),
                        p.value.len()
                    )))
                }
                None => return Err(Error::invalid(format!("gradient for unknown parameter `{name}`"))),
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
        for (name, p) in self.params.iter_mut() {
            let g = grads.get(name);
            for i in 0..p.value.len() {
                let gi = g.map_or(T::zero(), |g| g[i]);
                p.m[i] = b1 * p.m[i] + (T::one() - b1) * gi;
                p.v[i] = b2 * p.v[i] + (T::one() - b2) * gi * gi;
                let m_hat = p.m[i].f64() / bc1;
                let v_hat = p.v[i].f64() / bc2;
                let update = lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                p.value[i] = T::of(p.value[i].f64() - update);
            }
        }
        Ok(())
    }
}

/// Global L2 norm of a gradient set.
pub fn grad_norm<T: Real>(grads: &Grads<T>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.iter())
        .map(|v| v.f64() * v.f64())
        .sum::<f64>()
        .sqrt()
}

/// Scales all gradients so their global norm is at most `max_norm`.
pub fn clip_grad_norm<T: Real>(grads: &mut Grads<T>, max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = T::of(max_norm / norm);
        for g in grads.values_mut() {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }
    norm
}
