//! Named parameter storage and initialization.
//!
//! Every learnable tensor lives in a [`ParamStore`] under a dotted canonical
//! name such as `enc.rgb.stage2.conv1.w` or `ema.3.alpha`. Layers hold
//! [`ParamId`]s and look their values up through a [`Bound`] set of tape
//! variables created for each forward pass.

use std::collections::HashMap;
use std::ops::Index;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.id(name).map(|id| &mut self.values[id.0])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    /// Registers every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(self.values.iter().map(|v| tape.param(v.clone())).collect())
    }

    /// Same as [`bind`](Self::bind) but with gradients disabled.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound(self.values.iter().map(|v| tape.constant(v.clone())).collect())
    }

    /// Overwrites values from `(name, tensor)` pairs. Every stored parameter
    /// must be supplied exactly once with a matching shape.
    pub fn load(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        if entries.len() != self.len() {
            return Err(Error::Format(format!("checkpoint has {} parameters, model has {}", entries.len(), self.len())));
        }
        let mut seen = vec![false; self.len()];
        for (name, value) in entries {
            let id = self.id(&name).ok_or_else(|| Error::Format(format!("unknown parameter `{name}`")))?;
            if seen[id.0] {
                return Err(Error::Format(format!("parameter `{name}` appears twice")));
            }
            if value.shape() != self.values[id.0].shape() {
                return Err(Error::Format(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    value.shape(),
                    self.values[id.0].shape()
                )));
            }
            seen[id.0] = true;
            self.values[id.0] = value;
        }
        Ok(())
    }
}

/// Tape variables for a [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Wraps variables created in store order, e.g. by a gradient checker.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Seeded initializer: kernels uniform in `±1/sqrt(fan_in)`, biases zero.
pub struct Initializer<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl<'a> Initializer<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Initializer { store, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let t = Tensor::from_fn(shape, |_| self.rng.random_range(-bound..bound));
        self.store.insert(name, t)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        self.store.insert(name, Tensor::zeros(shape))
    }
}

/// 3x3 (or other odd) convolution with bias.
#[derive(Clone, Copy, Debug)]
pub struct ConvLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvLayer {
    pub fn new(init: &mut Initializer<'_>, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> Result<Self> {
        let w = init.uniform(format!("{name}.w"), &[c_out, c_in, k, k], c_in * k * k)?;
        let b = init.zeros(format!("{name}.b"), &[c_out])?;
        Ok(ConvLayer { w, b, stride, pad: k / 2 })
    }

    /// All-zero weights and bias.
    pub fn zeroed(init: &mut Initializer<'_>, name: &str, c_in: usize, c_out: usize, k: usize) -> Result<Self> {
        let w = init.zeros(format!("{name}.w"), &[c_out, c_in, k, k])?;
        let b = init.zeros(format!("{name}.b"), &[c_out])?;
        Ok(ConvLayer { w, b, stride: 1, pad: k / 2 })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(x, p[self.w], p[self.b], self.stride, self.pad)
    }
}
