//! Named parameter storage.
//!
//! A [`ParamStore`] owns the master copy of every trainable tensor as plain
//! data, keyed by a canonical name and ordered by insertion. Computation
//! graphs are built against leaf tensors created from the store; gradients
//! flow back into a [`GradAccum`] indexed the same way. The store itself is
//! `Sync`, so read-only snapshots can be shared across worker threads.

use std::collections::HashMap;

use super::{Gradients, Real, Tensor};

#[derive(Clone)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<Real>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            shapes: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: &str, shape: &[usize], value: Vec<Real>) -> usize {
        assert_eq!(
            value.len(),
            shape.iter().product::<usize>(),
            "parameter {name}: data length {} does not match shape {shape:?}",
            value.len()
        );
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let idx = self.names.len();
        self.index.insert(name.to_string(), idx);
        self.names.push(name.to_string());
        self.shapes.push(shape.to_vec());
        self.values.push(value);
        idx
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn idx(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn shape(&self, idx: usize) -> &[usize] {
        &self.shapes[idx]
    }

    pub fn value(&self, idx: usize) -> &[Real] {
        &self.values[idx]
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Vec<Real> {
        &mut self.values[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&[Real]> {
        self.idx(name).map(|i| self.value(i))
    }

    /// Iterates `(name, shape, value)` in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[usize], &[Real])> {
        (0..self.len()).map(move |i| {
            (
                self.names[i].as_str(),
                self.shapes[i].as_slice(),
                self.values[i].as_slice(),
            )
        })
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Creates one graph leaf per parameter, plus a map from leaf node id
    /// back to the parameter index. Trainable leaves record gradients;
    /// frozen leaves build gradient-free graphs for inference.
    pub fn make_leaves(&self, trainable: bool) -> (Vec<Tensor>, HashMap<u64, usize>) {
        let mut leaves = Vec::with_capacity(self.len());
        let mut ids = HashMap::with_capacity(self.len());
        for i in 0..self.len() {
            let t = if trainable {
                Tensor::param(self.values[i].clone(), &self.shapes[i])
            } else {
                Tensor::constant(self.values[i].clone(), &self.shapes[i])
            };
            ids.insert(t.id(), i);
            leaves.push(t);
        }
        (leaves, ids)
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient accumulator aligned with a [`ParamStore`].
///
/// Accumulation is slot-wise: each parameter collects its contributions in
/// the order `accumulate` is called, so a fixed call order (for example,
/// query order within an episode) yields bit-identical sums regardless of
/// how the work was distributed.
pub struct GradAccum {
    grads: Vec<Option<Vec<Real>>>,
}

impl GradAccum {
    pub fn new(store: &ParamStore) -> Self {
        GradAccum {
            grads: vec![None; store.len()],
        }
    }

    /// Folds one backward pass into the accumulator. `leaf_ids` maps leaf
    /// node ids to parameter indices, as produced by `make_leaves`.
    pub fn accumulate(&mut self, grads: &Gradients, leaves: &[Tensor], leaf_ids: &HashMap<u64, usize>) {
        for leaf in leaves {
            let Some(g) = grads.by_id(leaf.id()) else {
                continue;
            };
            let idx = leaf_ids[&leaf.id()];
            match &mut self.grads[idx] {
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(g) {
                        *a += *v;
                    }
                }
                slot => *slot = Some(g.to_vec()),
            }
        }
    }

    /// Merges another accumulator (used when reducing worker results in a
    /// fixed order).
    pub fn merge(&mut self, other: GradAccum) {
        for (slot, incoming) in self.grads.iter_mut().zip(other.grads) {
            match (slot.as_mut(), incoming) {
                (Some(acc), Some(inc)) => {
                    for (a, v) in acc.iter_mut().zip(inc) {
                        *a += v;
                    }
                }
                (None, Some(inc)) => *slot = Some(inc),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, factor: Real) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
    }

    /// Gradient for parameter `idx`; `None` means the loss never reached it.
    pub fn get(&self, idx: usize) -> Option<&[Real]> {
        self.grads[idx].as_deref()
    }

    pub fn max_abs(&self) -> Real {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}
