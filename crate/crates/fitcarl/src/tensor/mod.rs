//! Minimal reverse-mode automatic differentiation engine.
//!
//! Tensors are immutable nodes of a computation graph. Building an operation
//! records its inputs; [`Tensor::backward`] walks the recorded graph once in
//! reverse topological order and accumulates gradients additively across
//! fan-out. Graphs are thread-confined (nodes are `Rc`-shared); independent
//! graphs may run on different threads against shared read-only parameter
//! snapshots.
//!
//! Shape mismatches are programming errors and panic with the operation name
//! and both shapes. Non-finite results trip a debug assertion rather than
//! propagating silently.
//!
//! Values are `f64` by default; the `single-precision` feature switches the
//! whole engine to `f32`.

mod adam;
mod nn;
mod ops;
mod params;
mod rng;

pub use adam::{AdamConfig, AdamState};
pub use nn::{gru_cell, GruParams};
pub use ops::{concat, concat_cols, stack_rows, tucker3, tucker3_vec};
pub use params::{GradAccum, ParamStore};
pub use rng::{stream, RngStream};

use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

#[cfg(not(feature = "single-precision"))]
pub type Real = f64;
#[cfg(feature = "single-precision")]
pub type Real = f32;

/// Floor used when taking logarithms of probabilities.
pub const LOG_EPS: Real = 1e-12;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Operation that produced a node; stores whatever the backward pass needs
/// beyond the parent tensors themselves.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    AddScalar,
    ScalarMul(Real),
    Matmul,
    Transpose,
    Reshape,
    Concat { sizes: Vec<usize> },
    ConcatCols { widths: Vec<usize> },
    StackRows,
    Slice { start: usize },
    Row { index: usize },
    Sum,
    RowSums,
    Softmax,
    SoftmaxRows,
    Sigmoid,
    Tanh,
    Cos,
    Exp,
    Log,
    Relu,
    Softplus,
    L2Norm,
    LayerNorm { eps: Real },
    Dropout { mask: Rc<Vec<Real>> },
    AddRowVec,
    Tucker3Vec,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::AddScalar => "add_scalar",
            Op::ScalarMul(_) => "scalar_mul",
            Op::Matmul => "matmul",
            Op::Transpose => "transpose",
            Op::Reshape => "reshape",
            Op::Concat { .. } => "concat",
            Op::ConcatCols { .. } => "concat_cols",
            Op::StackRows => "stack_rows",
            Op::Slice { .. } => "slice",
            Op::Row { .. } => "row",
            Op::Sum => "sum",
            Op::RowSums => "row_sums",
            Op::Softmax => "softmax",
            Op::SoftmaxRows => "softmax_rows",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Cos => "cos",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Relu => "relu",
            Op::Softplus => "softplus",
            Op::L2Norm => "l2_norm",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Dropout { .. } => "dropout",
            Op::AddRowVec => "add_row_vec",
            Op::Tucker3Vec => "tucker3_vec",
        }
    }
}

pub(crate) struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<Real>,
    op: Op,
    parents: Vec<Tensor>,
    requires_grad: bool,
}

/// Node of the computation graph. Cloning is cheap (reference counted).
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("op", &self.inner.op.name())
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn leaf(data: Vec<Real>, shape: &[usize], requires_grad: bool) -> Tensor {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "leaf data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape: shape.to_vec(),
                data,
                op: Op::Leaf,
                parents: Vec::new(),
                requires_grad,
            }),
        }
    }

    /// Trainable leaf; gradients flow into it.
    pub fn param(data: Vec<Real>, shape: &[usize]) -> Tensor {
        Tensor::leaf(data, shape, true)
    }

    /// Non-trainable leaf. Operations whose inputs are all constants skip
    /// gradient bookkeeping entirely.
    pub fn constant(data: Vec<Real>, shape: &[usize]) -> Tensor {
        Tensor::leaf(data, shape, false)
    }

    pub fn scalar_const(v: Real) -> Tensor {
        Tensor::constant(vec![v], &[1])
    }

    pub fn zeros_const(shape: &[usize]) -> Tensor {
        Tensor::constant(vec![0.0; shape.iter().product()], shape)
    }

    pub(crate) fn new_node(
        shape: Vec<usize>,
        data: Vec<Real>,
        op: Op,
        parents: Vec<Tensor>,
    ) -> Tensor {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "op {} produced a non-finite value",
            op.name()
        );
        let requires_grad = parents.iter().any(|p| p.inner.requires_grad);
        // Constants drop their history so inference graphs free eagerly.
        let (op, parents) = if requires_grad {
            (op, parents)
        } else {
            (Op::Leaf, Vec::new())
        };
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                data,
                op,
                parents,
                requires_grad,
            }),
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[Real] {
        &self.inner.data
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn scalar(&self) -> Real {
        assert_eq!(
            self.numel(),
            1,
            "scalar() on tensor of shape {:?}",
            self.shape()
        );
        self.inner.data[0]
    }

    /// Reverse pass from a scalar loss. Visits each reachable node exactly
    /// once in reverse creation order (a valid reverse topological order,
    /// since every node is created after its parents) and accumulates
    /// gradients additively across fan-out.
    pub fn backward(&self) -> Gradients {
        assert_eq!(
            self.numel(),
            1,
            "backward() requires a scalar loss, got shape {:?}",
            self.shape()
        );
        if !self.inner.requires_grad {
            return Gradients {
                map: HashMap::new(),
            };
        }

        // Collect the reachable differentiable subgraph.
        let mut nodes: Vec<Tensor> = Vec::new();
        let mut seen: HashMap<u64, ()> = HashMap::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if seen.insert(t.inner.id, ()).is_some() {
                continue;
            }
            for p in &t.inner.parents {
                if p.inner.requires_grad {
                    stack.push(p.clone());
                }
            }
            nodes.push(t);
        }
        nodes.sort_by(|a, b| b.inner.id.cmp(&a.inner.id));

        let mut map: HashMap<u64, Vec<Real>> = HashMap::new();
        map.insert(self.inner.id, vec![1.0]);
        for node in &nodes {
            let Some(grad) = map.get(&node.inner.id).cloned() else {
                continue;
            };
            if matches!(node.inner.op, Op::Leaf) {
                continue;
            }
            let parent_grads = ops::backward_op(&node.inner, &grad);
            for (parent, pg) in node.inner.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !parent.inner.requires_grad {
                    continue;
                }
                match map.entry(parent.inner.id) {
                    std::collections::hash_map::Entry::Occupied(mut e) => {
                        for (acc, v) in e.get_mut().iter_mut().zip(&pg) {
                            *acc += *v;
                        }
                    }
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(pg);
                    }
                }
            }
        }
        Gradients { map }
    }
}

/// Gradients keyed by node id, as returned by [`Tensor::backward`].
pub struct Gradients {
    map: HashMap<u64, Vec<Real>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `t`, or `None` when the loss
    /// does not depend on it.
    pub fn get(&self, t: &Tensor) -> Option<&[Real]> {
        self.map.get(&t.id()).map(|v| v.as_slice())
    }

    /// Gradient with unreached tensors reported as zeros.
    pub fn wrt(&self, t: &Tensor) -> Vec<Real> {
        self.get(t)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; t.numel()])
    }

    pub(crate) fn by_id(&self, id: u64) -> Option<&[Real]> {
        self.map.get(&id).map(|v| v.as_slice())
    }
}
