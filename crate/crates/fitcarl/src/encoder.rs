//! Time encoding and the unseen-entity encoder.
//!
//! Time differences map to d-dimensional vectors through a learned bank of
//! cosines. An unseen entity is represented by projecting each of its K
//! support neighbors (neighbor embedding ‖ relation embedding) to a
//! meta-representation, then running a small Transformer over the sequence
//! [CLS, meta_1, .., meta_K] whose attention logits carry an additive
//! time-difference bias, and reading off the final CLS vector.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::store::{EntityId, Quadruple, RelId, Vocabs};
use crate::tensor::{concat, concat_cols, stack_rows, Real, Tensor};

/// Learned cosine bank mapping an integer time difference to R^d, with a
/// per-graph cache so repeated differences share one node. `zeroed` makes
/// every encoding the zero vector, hiding all temporal information.
pub struct TimeEncoder {
    pub omega: Tensor,
    pub phi: Tensor,
    pub zeroed: bool,
    cache: RefCell<HashMap<i64, Tensor>>,
}

impl TimeEncoder {
    pub fn new(omega: Tensor, phi: Tensor, zeroed: bool) -> TimeEncoder {
        TimeEncoder {
            omega,
            phi,
            zeroed,
            cache: RefCell::new(HashMap::new()),
        }
    }

    pub fn dim(&self) -> usize {
        self.omega.shape()[0]
    }

    /// sqrt(1/d) · [cos(ω_k·Δt + φ_k)]_k
    pub fn encode(&self, dt: i64) -> Tensor {
        if let Some(t) = self.cache.borrow().get(&dt) {
            return t.clone();
        }
        let d = self.dim();
        let enc = if self.zeroed {
            Tensor::zeros_const(&[d])
        } else {
            self.omega
                .scalar_mul(dt as Real)
                .add(&self.phi)
                .cos()
                .scalar_mul((1.0 / d as Real).sqrt())
        };
        self.cache.borrow_mut().insert(dt, enc.clone());
        enc
    }
}

/// One attention head: query/key/value projections and the weight vector
/// scoring time-difference encodings.
pub struct HeadParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wpos: Tensor,
}

pub struct LayerParams {
    pub heads: Vec<HeadParams>,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ff1_w: Tensor,
    pub ff1_b: Tensor,
    pub ff2_w: Tensor,
    pub ff2_b: Tensor,
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
}

pub struct EncoderParams {
    pub cls: Tensor,
    pub meta_w: Tensor,
    pub meta_b: Tensor,
    pub layers: Vec<LayerParams>,
    /// When false the attention logits drop the time-difference term and
    /// reduce to plain scaled dot-product attention.
    pub use_time_bias: bool,
}

/// One entry of a temporal neighborhood: `(neighbor, relation, time)` with
/// the relation oriented from the neighbor towards the unseen entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub entity: EntityId,
    pub rel: RelId,
    pub t: i64,
}

/// Extracts the temporal neighborhood of `e` from its support facts, in
/// support order. Facts with `e` as subject contribute their inverse
/// relation so every entry points towards `e`.
pub fn temporal_neighborhood(vocabs: &Vocabs, support: &[Quadruple], e: EntityId) -> Vec<Neighbor> {
    support
        .iter()
        .map(|q| {
            if q.o == e {
                Neighbor {
                    entity: q.s,
                    rel: q.r,
                    t: q.t,
                }
            } else {
                Neighbor {
                    entity: q.o,
                    rel: vocabs.relations.inverse_of(q.r),
                    t: q.t,
                }
            }
        })
        .collect()
}

/// Projects each temporal neighbor to its meta-representation
/// `W·(h_neighbor ‖ h_relation) + b`.
pub fn meta_representations(
    params: &EncoderParams,
    neighbors: &[Neighbor],
    entity_emb: &dyn Fn(EntityId) -> Tensor,
    relation_emb: &dyn Fn(RelId) -> Tensor,
) -> Vec<Tensor> {
    neighbors
        .iter()
        .map(|n| {
            let h_e = entity_emb(n.entity);
            let h_r = relation_emb(n.rel);
            let joint = concat(&[&h_e, &h_r]);
            params.meta_w.matmul(&joint).add(&params.meta_b)
        })
        .collect()
}

/// Runs the time-aware Transformer over `[CLS] + tokens` and returns the
/// final CLS representation. `times` pairs with `tokens`; the CLS token
/// carries `t_cls`.
pub fn encode_entity(
    params: &EncoderParams,
    time: &TimeEncoder,
    tokens: &[Tensor],
    times: &[i64],
    t_cls: i64,
) -> Tensor {
    encode_entity_with_attn(params, time, tokens, times, t_cls).0
}

/// As [`encode_entity`], additionally returning every layer's per-head
/// attention matrices for inspection.
pub fn encode_entity_with_attn(
    params: &EncoderParams,
    time: &TimeEncoder,
    tokens: &[Tensor],
    times: &[i64],
    t_cls: i64,
) -> (Tensor, Vec<Vec<Tensor>>) {
    assert_eq!(tokens.len(), times.len(), "one timestamp per token");
    assert!(!tokens.is_empty(), "need at least one neighbor token");
    let d = params.cls.shape()[0];
    let n = tokens.len() + 1;
    let mut seq_times = Vec::with_capacity(n);
    seq_times.push(t_cls);
    seq_times.extend_from_slice(times);

    let mut rows = Vec::with_capacity(n);
    rows.push(params.cls.clone());
    rows.extend(tokens.iter().cloned());
    let mut x = stack_rows(&rows.iter().collect::<Vec<_>>());

    let mut attns = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let d_h = layer.heads[0].wq.shape()[0];
        let scale = 1.0 / (d_h as Real).sqrt();
        let mut head_outs = Vec::with_capacity(layer.heads.len());
        let mut head_attns = Vec::with_capacity(layer.heads.len());
        for head in &layer.heads {
            let q = x.matmul(&head.wq.transpose());
            let k = x.matmul(&head.wk.transpose());
            let v = x.matmul(&head.wv.transpose());
            let mut logits = q.matmul(&k.transpose()).scalar_mul(scale);
            if params.use_time_bias {
                logits = logits.add(&time_bias(&head.wpos, time, &seq_times));
            }
            let attn = logits.softmax_rows();
            head_outs.push(attn.matmul(&v));
            head_attns.push(attn);
        }
        attns.push(head_attns);
        let merged = concat_cols(&head_outs.iter().collect::<Vec<_>>());
        let projected = merged.matmul(&layer.wo.transpose()).add_row_vec(&layer.bo);
        x = x.add(&projected).layer_norm(&layer.ln1_g, &layer.ln1_b, 1e-5);
        let ff = x
            .matmul(&layer.ff1_w.transpose())
            .add_row_vec(&layer.ff1_b)
            .relu()
            .matmul(&layer.ff2_w.transpose())
            .add_row_vec(&layer.ff2_b);
        x = x.add(&ff).layer_norm(&layer.ln2_g, &layer.ln2_b, 1e-5);
    }
    let _ = d;
    (x.row(0), attns)
}

/// The [n, n] matrix of `wposᵀ·h_{t_u - t_v}` attention biases.
fn time_bias(wpos: &Tensor, time: &TimeEncoder, seq_times: &[i64]) -> Tensor {
    let n = seq_times.len();
    let mut rows = Vec::with_capacity(n);
    for &tu in seq_times {
        let cells: Vec<Tensor> = seq_times
            .iter()
            .map(|&tv| wpos.dot(&time.encode(tu - tv)))
            .collect();
        rows.push(concat(&cells.iter().collect::<Vec<_>>()));
    }
    stack_rows(&rows.iter().collect::<Vec<_>>())
}

/// Encodes one unseen entity from raw support facts: neighborhood, meta-
/// representations, then the Transformer with CLS time `t_cls`.
pub fn encode_unseen_entity(
    params: &EncoderParams,
    time: &TimeEncoder,
    vocabs: &Vocabs,
    support: &[Quadruple],
    e: EntityId,
    t_cls: i64,
    entity_emb: &dyn Fn(EntityId) -> Tensor,
    relation_emb: &dyn Fn(RelId) -> Tensor,
) -> Tensor {
    let neighborhood = temporal_neighborhood(vocabs, support, e);
    let metas = meta_representations(params, &neighborhood, entity_emb, relation_emb);
    let times: Vec<i64> = neighborhood.iter().map(|n| n.t).collect();
    encode_entity(params, time, &metas, &times, t_cls)
}
