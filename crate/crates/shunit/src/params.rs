//! Named parameter storage and per-step binding onto a [`Tape`].
//!
//! Parameters live in a [`ParamStore`] between steps. Each training or
//! inference step opens a [`Session`], which lazily binds parameters as tape
//! leaves (or constants, for frozen prefixes) and remembers the binding so
//! the optimizer can collect gradients by name afterwards.

use crate::error::{Error, Result};
use crate::graph::{Gradients, Tape, Var};
use indexmap::IndexMap;
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use std::cell::RefCell;
use std::rc::Rc;

/// Ordered map of named parameter arrays.
#[derive(Default, Clone)]
pub struct ParamStore {
    entries: IndexMap<String, Rc<ArrayD<f64>>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        self.insert_shared(name, Rc::new(value));
    }

    /// Insert an entry that shares an existing allocation.
    pub fn insert_shared(&mut self, name: impl Into<String>, value: Rc<ArrayD<f64>>) {
        let name = name.into();
        let prev = self.entries.insert(name.clone(), value);
        assert!(prev.is_none(), "duplicate parameter `{name}`");
    }

    pub fn get(&self, name: &str) -> Result<&Rc<ArrayD<f64>>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Replace a parameter value; the shape must not change.
    pub fn set(&mut self, name: &str, value: ArrayD<f64>) -> Result<()> {
        let slot = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        assert_eq!(slot.shape(), value.shape(), "parameter `{name}` shape");
        *slot = Rc::new(value);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Rc<ArrayD<f64>>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    /// Names with a given prefix, in insertion order.
    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> {
        self.names().filter(move |n| n.starts_with(prefix))
    }
}

/// One forward/backward step's view of the parameters.
pub struct Session<'t, 's> {
    tape: &'t Tape,
    store: &'s ParamStore,
    bound: RefCell<IndexMap<String, Var<'t>>>,
    frozen_prefixes: Vec<String>,
}

impl<'t, 's> Session<'t, 's> {
    pub fn new(tape: &'t Tape, store: &'s ParamStore) -> Self {
        Session {
            tape,
            store,
            bound: RefCell::new(IndexMap::new()),
            frozen_prefixes: Vec::new(),
        }
    }

    /// Parameters under `prefix` bind as constants: no gradient is ever
    /// accumulated for them in this session.
    pub fn freeze_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.frozen_prefixes.push(prefix.into());
        self
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Bind (once) and return the tape node for a named parameter.
    pub fn param(&self, name: &str) -> Result<Var<'t>> {
        if let Some(v) = self.bound.borrow().get(name) {
            return Ok(*v);
        }
        let value = Rc::clone(self.store.get(name)?);
        let frozen = self.frozen_prefixes.iter().any(|p| name.starts_with(p));
        let var = if frozen {
            self.tape.constant_shared(value)
        } else {
            self.tape.leaf_shared(value)
        };
        self.bound.borrow_mut().insert(name.to_string(), var);
        Ok(var)
    }

    /// The node previously bound for `name`, if any.
    pub fn bound_var(&self, name: &str) -> Option<Var<'t>> {
        self.bound.borrow().get(name).copied()
    }

    /// Collect gradients of all bound parameters whose name passes `filter`.
    /// Parameters that received no gradient are reported as zeros.
    pub fn collect_grads(
        &self,
        grads: &Gradients,
        filter: impl Fn(&str) -> bool,
    ) -> IndexMap<String, ArrayD<f64>> {
        let mut out = IndexMap::new();
        for (name, var) in self.bound.borrow().iter() {
            if !filter(name) {
                continue;
            }
            let g = match grads.wrt(*var) {
                Some(g) => g.clone(),
                None => ArrayD::zeros(IxDyn(&var.shape())),
            };
            out.insert(name.clone(), g);
        }
        out
    }

    /// L2 norm of the gradient that reached parameter `name` (0 if none).
    pub fn grad_norm(&self, grads: &Gradients, name: &str) -> f64 {
        self.bound_var(name).map(|v| grads.norm(v)).unwrap_or(0.0)
    }
}

/// Draw an array with i.i.d. normal entries.
pub fn normal_init(rng: &mut ChaCha12Rng, shape: &[usize], std: f64) -> ArrayD<f64> {
    let dist = Normal::new(0.0, std).expect("valid std");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng))
}

/// Register a convolution layer: weight `{name}.w` of `[out, in, k, k]`
/// initialized normal(0, 0.02) and zero bias `{name}.b`.
pub fn init_conv(
    store: &mut ParamStore,
    rng: &mut ChaCha12Rng,
    name: &str,
    in_ch: usize,
    out_ch: usize,
    k: usize,
) {
    store.insert(
        format!("{name}.w"),
        normal_init(rng, &[out_ch, in_ch, k, k], 0.02),
    );
    store.insert(format!("{name}.b"), ArrayD::zeros(IxDyn(&[out_ch])));
}

/// Uniform value in `[lo, hi)` drawn from the shared seeded stream.
pub fn uniform(rng: &mut ChaCha12Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}
