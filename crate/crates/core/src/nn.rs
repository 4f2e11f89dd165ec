//! Named parameter storage and the few layer types the networks share.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;
use rawdiff_tensor::{Graph, PadMode, Scalar, Tensor, Var};

use crate::error::{bail, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    /// Position in the owning store.
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named tensors. Names follow
/// `module/level/block/tensor`, e.g. `decoder/level1/block0/conv1/weight`.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Rc<Tensor<T>>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: String, value: Tensor<T>) -> ParamId {
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(Rc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Rc::make_mut(&mut self.values[id.0])
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.id(name).map(|id| self.get_mut(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().map(|v| &**v))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|v| Rc::new(v.cast())).collect(),
            index: self.index.clone(),
        }
    }

    /// Replaces every tensor with the same-named one from `other`, which
    /// must have exactly the same names and shapes.
    pub fn load_from(&mut self, other: &[(String, Tensor<T>)]) -> Result<()> {
        if other.len() != self.len() {
            bail!(Data, "checkpoint has {} tensors, model expects {}", other.len(), self.len());
        }
        for (name, t) in other {
            let Some(id) = self.id(name) else {
                bail!(Data, "checkpoint tensor {name} is not a model parameter");
            };
            if self.get(id).shape() != t.shape() {
                bail!(
                    Data,
                    "shape mismatch for {name}: checkpoint {:?}, model {:?}",
                    t.shape(),
                    self.get(id).shape()
                );
            }
        }
        for (name, t) in other {
            let id = self.id(name).expect("checked above");
            *self.get_mut(id) = t.clone();
        }
        Ok(())
    }
}

/// Lazily maps parameters into one graph as leaves.
pub struct Binding<'g, 's, T: Scalar> {
    graph: &'g Graph<T>,
    store: &'s ParamStore<T>,
    vars: RefCell<Vec<Option<Var<'g, T>>>>,
}

impl<'g, 's, T: Scalar> Binding<'g, 's, T> {
    pub fn new(graph: &'g Graph<T>, store: &'s ParamStore<T>) -> Self {
        Binding {
            graph,
            store,
            vars: RefCell::new(vec![None; store.len()]),
        }
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn var(&self, id: ParamId) -> Var<'g, T> {
        let mut vars = self.vars.borrow_mut();
        *vars[id.0].get_or_insert_with(|| self.graph.leaf_rc(self.store.values[id.0].clone()))
    }

    /// Parameters that were used, with their graph handles.
    pub fn bound(&self) -> Vec<(ParamId, Var<'g, T>)> {
        self.vars
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .collect()
    }
}

/// Builds parameters with a shared name prefix and RNG.
pub struct ParamBuilder<'a, T: Scalar, R: Rng> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
}

impl<T: Scalar, R: Rng> ParamBuilder<'_, T, R> {
    /// Uniform `±1/sqrt(fan_in)` initialization.
    pub fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64_lossy(self.rng.gen_range(-bound..bound)))
            .collect();
        self.store.insert(name, Tensor::from_vec(shape, data))
    }

    pub fn constant(&mut self, name: String, shape: &[usize], v: f64) -> ParamId {
        self.store.insert(name, Tensor::full(shape, T::from_f64_lossy(v)))
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_mode: PadMode,
}

impl Conv2d {
    pub fn new<T: Scalar, R: Rng>(
        b: &mut ParamBuilder<'_, T, R>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad_mode: PadMode,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        let weight = b.uniform(format!("{name}/weight"), &[cout, cin, kernel, kernel], fan_in);
        let bias = b.uniform(format!("{name}/bias"), &[cout], fan_in);
        Conv2d {
            weight,
            bias,
            cin,
            cout,
            kernel,
            stride,
            pad_mode,
        }
    }

    pub fn forward<'g, T: Scalar>(&self, p: &Binding<'g, '_, T>, x: Var<'g, T>) -> Var<'g, T> {
        x.conv2d(
            p.var(self.weight),
            Some(p.var(self.bias)),
            self.stride,
            self.kernel / 2,
            self.pad_mode,
        )
    }

    pub fn num_scalars(&self) -> usize {
        self.cout * self.cin * self.kernel * self.kernel + self.cout
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(b: &mut ParamBuilder<'_, T, R>, name: &str, din: usize, dout: usize) -> Self {
        Linear {
            weight: b.uniform(format!("{name}/weight"), &[dout, din], din),
            bias: b.uniform(format!("{name}/bias"), &[dout], din),
        }
    }

    pub fn forward<'g, T: Scalar>(&self, p: &Binding<'g, '_, T>, x: Var<'g, T>) -> Var<'g, T> {
        x.linear(p.var(self.weight), Some(p.var(self.bias)))
    }
}

/// Group normalization with a learned per-channel affine.
#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub groups: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

pub const NORM_EPS: f64 = 1e-5;

impl GroupNorm {
    pub fn new<T: Scalar, R: Rng>(b: &mut ParamBuilder<'_, T, R>, name: &str, groups: usize, channels: usize) -> Self {
        GroupNorm {
            groups,
            weight: b.constant(format!("{name}/weight"), &[channels], 1.0),
            bias: b.constant(format!("{name}/bias"), &[channels], 0.0),
        }
    }

    pub fn forward<'g, T: Scalar>(&self, p: &Binding<'g, '_, T>, x: Var<'g, T>) -> Var<'g, T> {
        x.group_norm(self.groups, NORM_EPS)
            .mul_channels(p.var(self.weight))
            .add_channels(p.var(self.bias))
    }
}
