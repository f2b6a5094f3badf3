//! Forward and backward implementations of the primitive operations.

use std::rc::Rc;

use super::{Inner, Op, Real, RngStream, Tensor, LOG_EPS};

fn shape_panic(op: &str, a: &[usize], b: &[usize]) -> ! {
    panic!("{op}: incompatible shapes {a:?} and {b:?}");
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) {
    if a.shape() != b.shape() {
        shape_panic(op, a.shape(), b.shape());
    }
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Tensor {
        same_shape("add", self, other);
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| a + b)
            .collect();
        Tensor::new_node(
            self.shape().to_vec(),
            data,
            Op::Add,
            vec![self.clone(), other.clone()],
        )
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        same_shape("sub", self, other);
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| a - b)
            .collect();
        Tensor::new_node(
            self.shape().to_vec(),
            data,
            Op::Sub,
            vec![self.clone(), other.clone()],
        )
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Tensor {
        same_shape("mul", self, other);
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| a * b)
            .collect();
        Tensor::new_node(
            self.shape().to_vec(),
            data,
            Op::Mul,
            vec![self.clone(), other.clone()],
        )
    }

    pub fn add_scalar(&self, c: Real) -> Tensor {
        let data = self.data().iter().map(|a| a + c).collect();
        Tensor::new_node(
            self.shape().to_vec(),
            data,
            Op::AddScalar,
            vec![self.clone()],
        )
    }

    pub fn scalar_mul(&self, c: Real) -> Tensor {
        let data = self.data().iter().map(|a| a * c).collect();
        Tensor::new_node(
            self.shape().to_vec(),
            data,
            Op::ScalarMul(c),
            vec![self.clone()],
        )
    }

    /// Matrix product. Accepts `[m,k]x[k,n] -> [m,n]`, `[m,k]x[k] -> [m]`
    /// and `[k]x[k,n] -> [n]`.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (m, k, n, out_shape) = match (self.shape(), other.shape()) {
            ([m, k1], [k2, n]) if k1 == k2 => (*m, *k1, *n, vec![*m, *n]),
            ([m, k1], [k2]) if k1 == k2 => (*m, *k1, 1, vec![*m]),
            ([k1], [k2, n]) if k1 == k2 => (1, *k1, *n, vec![*n]),
            (a, b) => shape_panic("matmul", a, b),
        };
        let a = self.data();
        let b = other.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        Tensor::new_node(out_shape, out, Op::Matmul, vec![self.clone(), other.clone()])
    }

    /// Inner product of two equally sized one-dimensional tensors.
    pub fn dot(&self, other: &Tensor) -> Tensor {
        same_shape("dot", self, other);
        self.mul(other).sum()
    }

    pub fn transpose(&self) -> Tensor {
        let [m, n] = *self.shape() else {
            panic!("transpose: expected rank 2, got {:?}", self.shape());
        };
        let a = self.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = a[i * n + j];
            }
        }
        Tensor::new_node(vec![n, m], out, Op::Transpose, vec![self.clone()])
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        if shape.iter().product::<usize>() != self.numel() {
            shape_panic("reshape", self.shape(), shape);
        }
        Tensor::new_node(
            shape.to_vec(),
            self.data().to_vec(),
            Op::Reshape,
            vec![self.clone()],
        )
    }

    /// Contiguous sub-range of a one-dimensional tensor.
    pub fn slice(&self, start: usize, len: usize) -> Tensor {
        assert_eq!(
            self.shape().len(),
            1,
            "slice: expected rank 1, got {:?}",
            self.shape()
        );
        if start + len > self.numel() {
            panic!(
                "slice: range {}..{} out of bounds for length {}",
                start,
                start + len,
                self.numel()
            );
        }
        Tensor::new_node(
            vec![len],
            self.data()[start..start + len].to_vec(),
            Op::Slice { start },
            vec![self.clone()],
        )
    }

    /// Single row of a rank-2 tensor as a rank-1 tensor.
    pub fn row(&self, index: usize) -> Tensor {
        let [m, n] = *self.shape() else {
            panic!("row: expected rank 2, got {:?}", self.shape());
        };
        assert!(index < m, "row: index {index} out of bounds for {m} rows");
        Tensor::new_node(
            vec![n],
            self.data()[index * n..(index + 1) * n].to_vec(),
            Op::Row { index },
            vec![self.clone()],
        )
    }

    /// Sum of all elements, as a single-element tensor.
    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        Tensor::new_node(vec![1], vec![s], Op::Sum, vec![self.clone()])
    }

    /// Per-row sums of a rank-2 tensor.
    pub fn row_sums(&self) -> Tensor {
        let [m, n] = *self.shape() else {
            panic!("row_sums: expected rank 2, got {:?}", self.shape());
        };
        let a = self.data();
        let out = (0..m).map(|i| a[i * n..(i + 1) * n].iter().sum()).collect();
        Tensor::new_node(vec![m], out, Op::RowSums, vec![self.clone()])
    }

    /// Numerically stable softmax over a rank-1 tensor.
    pub fn softmax(&self) -> Tensor {
        assert_eq!(
            self.shape().len(),
            1,
            "softmax: expected rank 1, got {:?}",
            self.shape()
        );
        let out = softmax_slice(self.data());
        Tensor::new_node(self.shape().to_vec(), out, Op::Softmax, vec![self.clone()])
    }

    /// Softmax applied independently to each row of a rank-2 tensor.
    pub fn softmax_rows(&self) -> Tensor {
        let [m, n] = *self.shape() else {
            panic!("softmax_rows: expected rank 2, got {:?}", self.shape());
        };
        let a = self.data();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            out.extend(softmax_slice(&a[i * n..(i + 1) * n]));
        }
        Tensor::new_node(vec![m, n], out, Op::SoftmaxRows, vec![self.clone()])
    }

    pub fn sigmoid(&self) -> Tensor {
        let data = self.data().iter().map(|&x| sigmoid(x)).collect();
        Tensor::new_node(self.shape().to_vec(), data, Op::Sigmoid, vec![self.clone()])
    }

    pub fn tanh(&self) -> Tensor {
        let data = self.data().iter().map(|x| x.tanh()).collect();
        Tensor::new_node(self.shape().to_vec(), data, Op::Tanh, vec![self.clone()])
    }

    pub fn cos(&self) -> Tensor {
        let data = self.data().iter().map(|x| x.cos()).collect();
        Tensor::new_node(self.shape().to_vec(), data, Op::Cos, vec![self.clone()])
    }

    pub fn exp(&self) -> Tensor {
        let data = self.data().iter().map(|x| x.exp()).collect();
        Tensor::new_node(self.shape().to_vec(), data, Op::Exp, vec![self.clone()])
    }

    /// Natural logarithm with the argument floored at `LOG_EPS`, so
    /// vanishing probabilities produce large negative values instead of
    /// infinities.
    pub fn log(&self) -> Tensor {
        let data = self.data().iter().map(|x| x.max(LOG_EPS).ln()).collect();
        Tensor::new_node(self.shape().to_vec(), data, Op::Log, vec![self.clone()])
    }

    pub fn relu(&self) -> Tensor {
        let data = self.data().iter().map(|x| x.max(0.0)).collect();
        Tensor::new_node(self.shape().to_vec(), data, Op::Relu, vec![self.clone()])
    }

    /// `ln(1 + exp(x))`, computed without overflow.
    pub fn softplus(&self) -> Tensor {
        let data = self
            .data()
            .iter()
            .map(|&x| x.max(0.0) + (-x.abs()).exp().ln_1p())
            .collect();
        Tensor::new_node(
            self.shape().to_vec(),
            data,
            Op::Softplus,
            vec![self.clone()],
        )
    }

    /// Euclidean norm, as a single-element tensor.
    pub fn l2_norm(&self) -> Tensor {
        let s: Real = self.data().iter().map(|x| x * x).sum();
        Tensor::new_node(vec![1], vec![s.sqrt()], Op::L2Norm, vec![self.clone()])
    }

    /// Layer normalization over the last dimension, with trainable gain and
    /// bias. Rank-1 input is treated as a single row.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: Real) -> Tensor {
        let n = *self.shape().last().expect("layer_norm on empty shape");
        if gain.shape() != [n] || bias.shape() != [n] {
            shape_panic("layer_norm", self.shape(), gain.shape());
        }
        let rows = self.numel() / n;
        let mut out = Vec::with_capacity(self.numel());
        for r in 0..rows {
            let x = &self.data()[r * n..(r + 1) * n];
            let (mean, std) = row_moments(x, eps);
            for j in 0..n {
                out.push((x[j] - mean) / std * gain.data()[j] + bias.data()[j]);
            }
        }
        Tensor::new_node(
            self.shape().to_vec(),
            out,
            Op::LayerNorm { eps },
            vec![self.clone(), gain.clone(), bias.clone()],
        )
    }

    /// Inverted dropout with a mask drawn from `rng`. `rate == 0` is the
    /// identity and consumes no randomness.
    pub fn dropout(&self, rate: Real, rng: &mut RngStream) -> Tensor {
        assert!((0.0..1.0).contains(&rate), "dropout rate {rate} not in [0,1)");
        if rate == 0.0 {
            return self.clone();
        }
        let keep = 1.0 - rate;
        let mask: Vec<Real> = (0..self.numel())
            .map(|_| {
                if (rng.uniform() as Real) < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let data = self
            .data()
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        Tensor::new_node(
            self.shape().to_vec(),
            data,
            Op::Dropout {
                mask: Rc::new(mask),
            },
            vec![self.clone()],
        )
    }

    /// Adds a rank-1 tensor to every row of a rank-2 tensor.
    pub fn add_row_vec(&self, v: &Tensor) -> Tensor {
        let [m, n] = *self.shape() else {
            panic!("add_row_vec: expected rank 2, got {:?}", self.shape());
        };
        if v.shape() != [n] {
            shape_panic("add_row_vec", self.shape(), v.shape());
        }
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(self.data()[i * n + j] + v.data()[j]);
            }
        }
        Tensor::new_node(
            vec![m, n],
            out,
            Op::AddRowVec,
            vec![self.clone(), v.clone()],
        )
    }
}

pub(crate) fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_slice(x: &[Real]) -> Vec<Real> {
    let max = x.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let exps: Vec<Real> = x.iter().map(|v| (v - max).exp()).collect();
    let denom: Real = exps.iter().sum();
    exps.iter().map(|e| e / denom).collect()
}

fn row_moments(x: &[Real], eps: Real) -> (Real, Real) {
    let n = x.len() as Real;
    let mean = x.iter().sum::<Real>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / n;
    (mean, (var + eps).sqrt())
}

/// Concatenates rank-1 tensors into one rank-1 tensor.
pub fn concat(parts: &[&Tensor]) -> Tensor {
    assert!(!parts.is_empty(), "concat of zero tensors");
    let mut sizes = Vec::with_capacity(parts.len());
    let mut data = Vec::new();
    for p in parts {
        assert_eq!(
            p.shape().len(),
            1,
            "concat: expected rank 1, got {:?}",
            p.shape()
        );
        sizes.push(p.numel());
        data.extend_from_slice(p.data());
    }
    Tensor::new_node(
        vec![data.len()],
        data,
        Op::Concat { sizes },
        parts.iter().map(|p| (*p).clone()).collect(),
    )
}

/// Concatenates rank-2 tensors with equal row counts along the column axis.
pub fn concat_cols(parts: &[&Tensor]) -> Tensor {
    assert!(!parts.is_empty(), "concat_cols of zero tensors");
    let m = parts[0].shape()[0];
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        match p.shape() {
            [rows, cols] if *rows == m => widths.push(*cols),
            s => shape_panic("concat_cols", parts[0].shape(), s),
        }
    }
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(m * total);
    for i in 0..m {
        for (p, w) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data()[i * w..(i + 1) * w]);
        }
    }
    Tensor::new_node(
        vec![m, total],
        data,
        Op::ConcatCols { widths },
        parts.iter().map(|p| (*p).clone()).collect(),
    )
}

/// Stacks equally sized rank-1 tensors as the rows of a rank-2 tensor.
pub fn stack_rows(rows: &[&Tensor]) -> Tensor {
    assert!(!rows.is_empty(), "stack_rows of zero tensors");
    let n = rows[0].numel();
    let mut data = Vec::with_capacity(rows.len() * n);
    for r in rows {
        if r.shape() != [n] {
            shape_panic("stack_rows", rows[0].shape(), r.shape());
        }
        data.extend_from_slice(r.data());
    }
    Tensor::new_node(
        vec![rows.len(), n],
        data,
        Op::StackRows,
        rows.iter().map(|r| (*r).clone()).collect(),
    )
}

/// Contracts the first two modes of a rank-3 tensor with two vectors:
/// `out[k] = sum_ij core[i,j,k] * v1[i] * v2[j]`.
pub fn tucker3_vec(core: &Tensor, v1: &Tensor, v2: &Tensor) -> Tensor {
    let [a, b, c] = *core.shape() else {
        panic!("tucker3_vec: core must be rank 3, got {:?}", core.shape());
    };
    if v1.shape() != [a] {
        shape_panic("tucker3_vec", core.shape(), v1.shape());
    }
    if v2.shape() != [b] {
        shape_panic("tucker3_vec", core.shape(), v2.shape());
    }
    let mut out = vec![0.0; c];
    let w = core.data();
    for i in 0..a {
        let x1 = v1.data()[i];
        if x1 == 0.0 {
            continue;
        }
        for j in 0..b {
            let f = x1 * v2.data()[j];
            if f == 0.0 {
                continue;
            }
            let base = (i * b + j) * c;
            for k in 0..c {
                out[k] += f * w[base + k];
            }
        }
    }
    Tensor::new_node(
        vec![c],
        out,
        Op::Tucker3Vec,
        vec![core.clone(), v1.clone(), v2.clone()],
    )
}

/// Full three-mode contraction of a rank-3 tensor with three vectors,
/// producing a single-element tensor.
pub fn tucker3(core: &Tensor, v1: &Tensor, v2: &Tensor, v3: &Tensor) -> Tensor {
    tucker3_vec(core, v1, v2).dot(v3)
}

/// Backward rule dispatch: given a node and the gradient of the loss with
/// respect to its output, produces gradients with respect to each parent
/// (`None` for parents the operation does not differentiate through).
pub(crate) fn backward_op(node: &Inner, g: &[Real]) -> Vec<Option<Vec<Real>>> {
    let parents = &node.parents;
    let pdata = |i: usize| parents[i].data();
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
        Op::Sub => vec![
            Some(g.to_vec()),
            Some(g.iter().map(|v| -v).collect()),
        ],
        Op::Mul => vec![
            Some(g.iter().zip(pdata(1)).map(|(v, b)| v * b).collect()),
            Some(g.iter().zip(pdata(0)).map(|(v, a)| v * a).collect()),
        ],
        Op::AddScalar => vec![Some(g.to_vec())],
        Op::ScalarMul(c) => vec![Some(g.iter().map(|v| v * c).collect())],
        Op::Matmul => {
            let (m, k) = match parents[0].shape() {
                [m, k] => (*m, *k),
                [k] => (1, *k),
                s => panic!("matmul backward: bad lhs shape {s:?}"),
            };
            let n = match parents[1].shape() {
                [_, n] => *n,
                [_] => 1,
                s => panic!("matmul backward: bad rhs shape {s:?}"),
            };
            let a = pdata(0);
            let b = pdata(1);
            // dA = g . B^T
            let mut da = vec![0.0; m * k];
            for i in 0..m {
                for j in 0..n {
                    let gv = g[i * n + j];
                    if gv == 0.0 {
                        continue;
                    }
                    for p in 0..k {
                        da[i * k + p] += gv * b[p * n + j];
                    }
                }
            }
            // dB = A^T . g
            let mut db = vec![0.0; k * n];
            for i in 0..m {
                for p in 0..k {
                    let av = a[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        db[p * n + j] += av * g[i * n + j];
                    }
                }
            }
            vec![Some(da), Some(db)]
        }
        Op::Transpose => {
            let [n, m] = *node.shape.as_slice() else {
                unreachable!()
            };
            let mut out = vec![0.0; m * n];
            for i in 0..n {
                for j in 0..m {
                    out[j * n + i] = g[i * m + j];
                }
            }
            vec![Some(out)]
        }
        Op::Reshape => vec![Some(g.to_vec())],
        Op::Concat { sizes } => {
            let mut out = Vec::with_capacity(sizes.len());
            let mut offset = 0;
            for s in sizes {
                out.push(Some(g[offset..offset + s].to_vec()));
                offset += s;
            }
            out
        }
        Op::ConcatCols { widths } => {
            let total: usize = widths.iter().sum();
            let m = node.shape[0];
            let mut outs: Vec<Vec<Real>> =
                widths.iter().map(|w| Vec::with_capacity(m * w)).collect();
            for i in 0..m {
                let mut offset = 0;
                for (pi, w) in widths.iter().enumerate() {
                    outs[pi].extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                    offset += w;
                }
            }
            outs.into_iter().map(Some).collect()
        }
        Op::StackRows => {
            let n = node.shape[1];
            (0..node.shape[0])
                .map(|i| Some(g[i * n..(i + 1) * n].to_vec()))
                .collect()
        }
        Op::Slice { start } => {
            let mut out = vec![0.0; parents[0].numel()];
            out[*start..start + g.len()].copy_from_slice(g);
            vec![Some(out)]
        }
        Op::Row { index } => {
            let n = node.shape[0];
            let mut out = vec![0.0; parents[0].numel()];
            out[index * n..(index + 1) * n].copy_from_slice(g);
            vec![Some(out)]
        }
        Op::Sum => vec![Some(vec![g[0]; parents[0].numel()])],
        Op::RowSums => {
            let [m, n] = *parents[0].shape() else {
                unreachable!()
            };
            let mut out = Vec::with_capacity(m * n);
            for i in 0..m {
                out.extend(std::iter::repeat(g[i]).take(n));
            }
            vec![Some(out)]
        }
        Op::Softmax => {
            let y = &node.data;
            let dot: Real = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
            vec![Some(
                g.iter().zip(y).map(|(gi, yi)| yi * (gi - dot)).collect(),
            )]
        }
        Op::SoftmaxRows => {
            let [m, n] = *node.shape.as_slice() else {
                unreachable!()
            };
            let y = &node.data;
            let mut out = Vec::with_capacity(m * n);
            for i in 0..m {
                let yr = &y[i * n..(i + 1) * n];
                let gr = &g[i * n..(i + 1) * n];
                let dot: Real = gr.iter().zip(yr).map(|(gi, yi)| gi * yi).sum();
                out.extend(gr.iter().zip(yr).map(|(gi, yi)| yi * (gi - dot)));
            }
            vec![Some(out)]
        }
        Op::Sigmoid => vec![Some(
            g.iter()
                .zip(&node.data)
                .map(|(gi, yi)| gi * yi * (1.0 - yi))
                .collect(),
        )],
        Op::Tanh => vec![Some(
            g.iter()
                .zip(&node.data)
                .map(|(gi, yi)| gi * (1.0 - yi * yi))
                .collect(),
        )],
        Op::Cos => vec![Some(
            g.iter()
                .zip(pdata(0))
                .map(|(gi, xi)| -gi * xi.sin())
                .collect(),
        )],
        Op::Exp => vec![Some(
            g.iter()
                .zip(&node.data)
                .map(|(gi, yi)| gi * yi)
                .collect(),
        )],
        Op::Log => vec![Some(
            g.iter()
                .zip(pdata(0))
                .map(|(gi, xi)| if *xi < LOG_EPS { 0.0 } else { gi / xi })
                .collect(),
        )],
        Op::Relu => vec![Some(
            g.iter()
                .zip(pdata(0))
                .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                .collect(),
        )],
        Op::Softplus => vec![Some(
            g.iter()
                .zip(pdata(0))
                .map(|(gi, xi)| gi * sigmoid(*xi))
                .collect(),
        )],
        Op::L2Norm => {
            let y = node.data[0].max(1e-12);
            vec![Some(pdata(0).iter().map(|x| g[0] * x / y).collect())]
        }
        Op::LayerNorm { eps } => {
            let n = *parents[0].shape().last().unwrap();
            let rows = parents[0].numel() / n;
            let x = pdata(0);
            let gain = pdata(1);
            let mut dx = Vec::with_capacity(rows * n);
            let mut dgain = vec![0.0; n];
            let mut dbias = vec![0.0; n];
            for r in 0..rows {
                let xr = &x[r * n..(r + 1) * n];
                let gr = &g[r * n..(r + 1) * n];
                let (mean, std) = row_moments(xr, *eps);
                let xhat: Vec<Real> = xr.iter().map(|v| (v - mean) / std).collect();
                for j in 0..n {
                    dgain[j] += gr[j] * xhat[j];
                    dbias[j] += gr[j];
                }
                let gx: Vec<Real> = gr.iter().zip(gain).map(|(gi, w)| gi * w).collect();
                let mean_gx = gx.iter().sum::<Real>() / n as Real;
                let mean_gx_xhat =
                    gx.iter().zip(&xhat).map(|(a, b)| a * b).sum::<Real>() / n as Real;
                for j in 0..n {
                    dx.push((gx[j] - mean_gx - xhat[j] * mean_gx_xhat) / std);
                }
            }
            vec![Some(dx), Some(dgain), Some(dbias)]
        }
        Op::Dropout { mask } => vec![Some(
            g.iter().zip(mask.iter()).map(|(gi, m)| gi * m).collect(),
        )],
        Op::AddRowVec => {
            let [m, n] = *node.shape.as_slice() else {
                unreachable!()
            };
            let mut dv = vec![0.0; n];
            for i in 0..m {
                for j in 0..n {
                    dv[j] += g[i * n + j];
                }
            }
            vec![Some(g.to_vec()), Some(dv)]
        }
        Op::Tucker3Vec => {
            let [a, b, c] = *parents[0].shape() else {
                unreachable!()
            };
            let w = pdata(0);
            let v1 = pdata(1);
            let v2 = pdata(2);
            let mut dw = vec![0.0; a * b * c];
            let mut dv1 = vec![0.0; a];
            let mut dv2 = vec![0.0; b];
            for i in 0..a {
                for j in 0..b {
                    let base = (i * b + j) * c;
                    let f = v1[i] * v2[j];
                    let mut acc = 0.0;
                    for k in 0..c {
                        dw[base + k] = f * g[k];
                        acc += w[base + k] * g[k];
                    }
                    dv1[i] += v2[j] * acc;
                    dv2[j] += v1[i] * acc;
                }
            }
            vec![Some(dw), Some(dv1), Some(dv2)]
        }
    }
}
