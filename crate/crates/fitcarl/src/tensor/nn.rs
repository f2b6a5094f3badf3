//! Gated recurrent cell, composed from the primitive operations so its
//! gradients come from the engine rather than a hand-written rule.

use super::Tensor;

/// Weights of one GRU cell. Input and hidden sizes are read off the shapes:
/// input-to-hidden matrices are `[hidden, input]`, hidden-to-hidden are
/// `[hidden, hidden]`, biases are `[hidden]`.
#[derive(Clone)]
pub struct GruParams {
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_z: Tensor,
    pub u_z: Tensor,
    pub b_z: Tensor,
    pub w_n: Tensor,
    pub u_n: Tensor,
    pub b_n: Tensor,
}

/// One step of the gated recurrent unit in its original form:
///
/// ```text
/// r  = sigmoid(W_r x + U_r h + b_r)
/// z  = sigmoid(W_z x + U_z h + b_z)
/// n  = tanh(W_n x + U_n (r * h) + b_n)
/// h' = (1 - z) * n + z * h
/// ```
pub fn gru_cell(p: &GruParams, x: &Tensor, h: &Tensor) -> Tensor {
    let r = p
        .w_r
        .matmul(x)
        .add(&p.u_r.matmul(h))
        .add(&p.b_r)
        .sigmoid();
    let z = p
        .w_z
        .matmul(x)
        .add(&p.u_z.matmul(h))
        .add(&p.b_z)
        .sigmoid();
    let n = p
        .w_n
        .matmul(x)
        .add(&p.u_n.matmul(&r.mul(h)))
        .add(&p.b_n)
        .tanh();
    z.scalar_mul(-1.0).add_scalar(1.0).mul(&n).add(&z.mul(h))
}
