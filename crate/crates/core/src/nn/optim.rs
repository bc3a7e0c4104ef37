use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Tensor4;
use crate::error::{Error, Result};

/// One named parameter with its gradient and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    /// Logical shape as stored in checkpoints.
    pub shape: Vec<usize>,
    /// Values, viewed as a 4-D tensor (vectors live in the last axis).
    pub value: Tensor4,
    /// `None` until a backward pass or [`ParamStore::zero_grads`] fills it.
    pub grad: Option<Vec<f32>>,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

/// Ordered parameter collection plus the optimizer step counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
    step: u64,
}

fn as_dims4(shape: &[usize]) -> Result<[usize; 4]> {
    match *shape {
        [a] => Ok([1, 1, 1, a]),
        [a, b] => Ok([1, 1, a, b]),
        [a, b, c] => Ok([1, a, b, c]),
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::WeightShape(format!("unsupported rank {}", shape.len()))),
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter; names must be unique.
    pub fn add(&mut self, name: &str, shape: &[usize], values: Vec<f32>) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::WeightShape(format!("duplicate parameter `{name}`")));
        }
        let value = Tensor4::from_vec(as_dims4(shape)?, values)?;
        let n = value.data().len();
        let id = self.params.len();
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            value,
            grad: None,
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|i| &self.params[i])
    }

    #[inline]
    pub fn value(&self, id: usize) -> &Tensor4 {
        &self.params[id].value
    }

    /// Optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Adds `g` to the gradient buffer of `id`, allocating it on first use.
    pub fn accumulate(&mut self, id: usize, g: &[f32]) -> Result<()> {
        let p = &mut self.params[id];
        if g.len() != p.m.len() {
            return Err(Error::WeightShape(format!(
                "gradient of `{}` has {} values, expected {}",
                p.name,
                g.len(),
                p.m.len()
            )));
        }
        let buf = p.grad.get_or_insert_with(|| vec![0.0; g.len()]);
        buf.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Sets every gradient buffer to zeros.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            match &mut p.grad {
                Some(g) => g.fill(0.0),
                None => p.grad = Some(vec![0.0; p.m.len()]),
            }
        }
    }

    pub fn clear_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.m.len()).sum()
    }
}

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamW {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamW {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// One AdamW update: decoupled weight decay followed by the
/// bias-corrected Adam step. Gradients are left in place.
pub fn adamw_step(store: &mut ParamStore, opt: &AdamW) -> Result<()> {
    opt.validate()?;
    if let Some(p) = store.params.iter().find(|p| p.grad.is_none()) {
        return Err(Error::MissingGradients(p.name.clone()));
    }
    store.step += 1;
    let t = store.step as i32;
    let (b1, b2) = (opt.beta1 as f64, opt.beta2 as f64);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let (lr, eps, wd) = (opt.lr as f64, opt.eps as f64, opt.weight_decay as f64);
    for p in &mut store.params {
        let grad = p.grad.as_ref().expect("checked above");
        for (((w, &g), m), v) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(grad)
            .zip(p.m.iter_mut())
            .zip(p.v.iter_mut())
        {
            let g = g as f64;
            let mut wv = *w as f64;
            wv -= lr * wd * wv;
            let mn = b1 * *m as f64 + (1.0 - b1) * g;
            let vn = b2 * *v as f64 + (1.0 - b2) * g * g;
            *m = mn as f32;
            *v = vn as f32;
            wv -= lr * (mn / bc1) / ((vn / bc2).sqrt() + eps);
            *w = wv as f32;
        }
    }
    Ok(())
}
