//! Search state, action-space sampling, and the confidence-augmented
//! policy network that scores candidate actions.
//!
//! A rollout walks the temporal graph from an unseen entity. At each step
//! the agent sees candidate actions (outgoing edges plus one self-loop),
//! encodes its search history with a GRU, attends over history and query
//! context per candidate, and blends the resulting action probabilities
//! with a query-conditioned confidence score. A concept-aware target
//! distribution regularizes the policy toward type-plausible actions.

use crate::encoder::TimeEncoder;
use crate::store::{ConceptTable, Edge, EntityId, RelId, Vocabs, SELF_LOOP};
use crate::tensor::{
    concat, gru_cell, stack_rows, tucker3_vec, GruParams, Real, RngStream, Tensor, LOG_EPS,
};

/// Position of the agent during a rollout, together with the query that
/// fixed its starting point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchState {
    /// Entity the agent currently occupies.
    pub entity: EntityId,
    /// Timestamp attached to the edge that led here (query time at start).
    pub time: i64,
    /// Unseen source entity of the query.
    pub source: EntityId,
    /// Query relation.
    pub relation: RelId,
    /// Query timestamp.
    pub query_time: i64,
    /// Number of transitions taken so far.
    pub step: usize,
}

impl SearchState {
    /// Starting state: the agent sits on the query source at query time.
    pub fn start(source: EntityId, relation: RelId, query_time: i64) -> Self {
        SearchState {
            entity: source,
            time: query_time,
            source,
            relation,
            query_time,
            step: 0,
        }
    }

    /// Moves along a chosen action. Query fields are preserved; only the
    /// position, its timestamp, and the step counter change.
    pub fn transition(&self, action: &ActionCandidate) -> Self {
        SearchState {
            entity: action.entity,
            time: action.t,
            step: self.step + 1,
            ..*self
        }
    }
}

/// One admissible action: follow an edge `(rel, entity, t)` or stay put.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionCandidate {
    pub rel: RelId,
    pub entity: EntityId,
    pub t: i64,
    pub is_self_loop: bool,
}

impl ActionCandidate {
    /// The stay-in-place action for the given state.
    pub fn self_loop(state: &SearchState) -> Self {
        ActionCandidate {
            rel: SELF_LOOP,
            entity: state.entity,
            t: state.time,
            is_self_loop: true,
        }
    }
}

/// How outgoing edges are cut down to at most `cap` candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    /// Keep the edges whose time encoding scores highest under `w_dt`.
    TimeAdaptive,
    /// Keep a uniform random sample.
    Random,
    /// Keep the edges whose timestamp is closest to the query time.
    TimeProximity,
}

/// Learned parameters of the policy network.
#[derive(Clone)]
pub struct PolicyParams {
    /// History GRU: input `3d` (relation plus node), hidden `3d`.
    pub gru: GruParams,
    /// Placeholder relation embedding for the first history step (`[d]`).
    pub r_dummy: Tensor,
    /// Projects the GRU hidden state into the matching space (`[2d, 3d]`).
    pub w1: Tensor,
    /// Projects the query context into the matching space (`[2d, 3d]`).
    pub w2: Tensor,
    /// Projects each action into the matching space (`[2d, 3d]`).
    pub w3: Tensor,
    /// Bilinear form between actions and blended context (`[2d, 2d]`).
    pub w4: Tensor,
    /// Confidence core tensor (`[2d, d, 2d]`).
    pub core: Tensor,
    /// Time-difference scoring vector, shared with action sampling (`[d]`).
    pub w_dt: Tensor,
}

/// Query-conditioned node representation: entity embedding concatenated
/// with the encoding of the time gap back to the query (`[2d]`).
pub fn node_repr(h_entity: &Tensor, enc: &TimeEncoder, t: i64, query_time: i64) -> Tensor {
    let h_dt = enc.encode(query_time - t);
    concat(&[h_entity, &h_dt])
}

/// Cuts the outgoing edges of the current entity down to at most `cap`
/// candidates according to `mode`, then appends the self-loop. Ties are
/// broken by the deterministic order of `edges`.
pub fn sample_action_space(
    state: &SearchState,
    edges: &[Edge],
    mode: ActionMode,
    cap: usize,
    enc: &TimeEncoder,
    w_dt: &Tensor,
    rng: &mut RngStream,
) -> Vec<ActionCandidate> {
    assert!(cap >= 1, "action cap must be at least 1");
    let kept: Vec<usize> = if edges.len() <= cap {
        (0..edges.len()).collect()
    } else {
        match mode {
            ActionMode::TimeAdaptive => {
                let w = w_dt.data();
                let scores: Vec<Real> = edges
                    .iter()
                    .map(|e| {
                        let h = enc.encode(state.query_time - e.t);
                        h.data().iter().zip(w).map(|(a, b)| a * b).sum()
                    })
                    .collect();
                let mut order: Vec<usize> = (0..edges.len()).collect();
                order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
                order.truncate(cap);
                order
            }
            ActionMode::Random => {
                let mut picked = rng.sample_indices(edges.len(), cap);
                picked.sort_unstable();
                picked
            }
            ActionMode::TimeProximity => {
                let mut order: Vec<usize> = (0..edges.len()).collect();
                order.sort_by_key(|&i| ((state.query_time - edges[i].t).abs(), i));
                order.truncate(cap);
                order
            }
        }
    };
    let mut out: Vec<ActionCandidate> = kept
        .iter()
        .map(|&i| ActionCandidate {
            rel: edges[i].rel,
            entity: edges[i].to,
            t: edges[i].t,
            is_self_loop: false,
        })
        .collect();
    out.push(ActionCandidate::self_loop(state));
    out
}

/// Terminal reward: close to 1 when the reached entity's embedding lies
/// within `theta` of the answer's, decaying smoothly with distance.
pub fn reward(answer: &[Real], reached: &[Real], theta: Real) -> Real {
    let d2: Real = answer
        .iter()
        .zip(reached)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let x = theta - d2.sqrt();
    1.0 / (1.0 + (-x).exp())
}

/// Same reward built on graph tensors, for experiments that let gradients
/// flow through the reward instead of treating it as a constant.
pub fn reward_traced(answer: &Tensor, reached: &Tensor, theta: Real) -> Tensor {
    answer
        .sub(reached)
        .l2_norm()
        .scalar_mul(-1.0)
        .add_scalar(theta)
        .sigmoid()
}

/// One history step: feeds the chosen relation and the reached node into
/// the GRU. The first step uses the dummy relation, the source node at
/// query time, and a zero hidden state.
pub fn encode_history(gru: &GruParams, prev: &Tensor, h_rel: &Tensor, h_node: &Tensor) -> Tensor {
    let x = concat(&[h_rel, h_node]);
    gru_cell(gru, &x, prev)
}

/// Per-candidate tensors shared by the action scorer and the confidence
/// learner, built once per step.
pub struct ActionFeatures {
    /// Projected action representations, one row per candidate (`[n, 2d]`).
    projected: Tensor,
    /// Raw node representations `h_entity ‖ h_{t_q - t_a}` (`[n, 2d]`).
    nodes: Tensor,
    /// Encodings of each candidate's time gap to the current state (`[n, d]`).
    dt_state: Tensor,
    /// Encodings of each candidate's time gap to the query (`[n, d]`).
    dt_query: Tensor,
}

/// Builds the shared per-candidate tensors for one step of the search.
pub fn action_features(
    params: &PolicyParams,
    enc: &TimeEncoder,
    state: &SearchState,
    candidates: &[ActionCandidate],
    embed_entity: &dyn Fn(EntityId) -> Tensor,
    embed_relation: &dyn Fn(RelId) -> Tensor,
) -> ActionFeatures {
    assert!(!candidates.is_empty(), "candidate set is empty");
    let mut inputs = Vec::with_capacity(candidates.len());
    let mut nodes = Vec::with_capacity(candidates.len());
    let mut dt_state = Vec::with_capacity(candidates.len());
    let mut dt_query = Vec::with_capacity(candidates.len());
    for c in candidates {
        let h_e = embed_entity(c.entity);
        let h_r = embed_relation(c.rel);
        let node = node_repr(&h_e, enc, c.t, state.query_time);
        inputs.push(concat(&[&h_r, &node]));
        nodes.push(node);
        dt_state.push(enc.encode(c.t - state.time));
        dt_query.push(enc.encode(c.t - state.query_time));
    }
    let stacked_inputs = stack_rows(&inputs.iter().collect::<Vec<_>>());
    ActionFeatures {
        projected: stacked_inputs.matmul(&params.w3.transpose()),
        nodes: stack_rows(&nodes.iter().collect::<Vec<_>>()),
        dt_state: stack_rows(&dt_state.iter().collect::<Vec<_>>()),
        dt_query: stack_rows(&dt_query.iter().collect::<Vec<_>>()),
    }
}

/// Probability of each candidate given history and query context.
///
/// Each candidate attends over the projected history and query vectors
/// with a two-way softmax driven by affinity-plus-recency scores, and the
/// blended context is matched against the candidate through a bilinear
/// form. The result is a softmax over candidates.
pub fn action_scores(
    params: &PolicyParams,
    feats: &ActionFeatures,
    h_hist: &Tensor,
    h_query: &Tensor,
) -> Tensor {
    let hbar_hist = params.w1.matmul(h_hist);
    let hbar_q = params.w2.matmul(h_query);
    let time_hist = feats.dt_state.matmul(&params.w_dt);
    let time_q = feats.dt_query.matmul(&params.w_dt);
    let phi_hist = feats.projected.matmul(&hbar_hist).add(&time_hist);
    let phi_q = feats.projected.matmul(&hbar_q).add(&time_q);
    // Two-way softmax over {history, query} reduces to a sigmoid of the
    // score difference.
    let att_hist = phi_hist.sub(&phi_q).sigmoid();
    let att_q = att_hist.scalar_mul(-1.0).add_scalar(1.0);
    // a^T W4 (att_h * h_hist + att_q * h_q) for every candidate a, batched
    // by distributing the bilinear form over the two context vectors.
    let aw4 = feats.projected.matmul(&params.w4);
    let logits = att_hist
        .mul(&aw4.matmul(&hbar_hist))
        .add(&att_q.mul(&aw4.matmul(&hbar_q)));
    logits.softmax()
}

/// Confidence of each candidate given only the query, independent of the
/// search history: a three-way tensor product between the source node,
/// the query relation, and each candidate node, softmaxed over candidates.
pub fn confidence(
    params: &PolicyParams,
    feats: &ActionFeatures,
    h_source_node: &Tensor,
    h_query_rel: &Tensor,
) -> Tensor {
    let contracted = tucker3_vec(&params.core, h_source_node, h_query_rel);
    feats.nodes.matmul(&contracted).softmax()
}

/// Final policy: renormalized product of action probabilities and
/// confidence. With `use_confidence` off the action probabilities are the
/// policy (confidence learner ablated).
pub fn policy_distribution(p: &Tensor, conf: &Tensor, use_confidence: bool) -> Tensor {
    if use_confidence {
        p.mul(conf).softmax()
    } else {
        p.clone()
    }
}

/// Concept-aware target distribution over candidates: each candidate is
/// weighted by the total prior mass of its entity's concepts under the
/// query relation, softmaxed. Without a prior for the relation the target
/// is uniform, which makes the regularizer inert.
pub fn concept_action_prob(
    candidates: &[ActionCandidate],
    concepts: &ConceptTable,
    query_rel: RelId,
) -> Vec<Real> {
    let n = candidates.len();
    assert!(n > 0, "candidate set is empty");
    let prior = concepts.prior(query_rel);
    if prior.is_empty() {
        return vec![1.0 / n as Real; n];
    }
    let sums: Vec<Real> = candidates
        .iter()
        .map(|c| {
            concepts
                .concepts_of(c.entity)
                .iter()
                .map(|&cid| concepts.prior_of(query_rel, cid) as Real)
                .sum()
        })
        .collect();
    softmax_slice(&sums)
}

/// Divergence of the policy from the concept-aware target, with both
/// probabilities floored to keep the logs finite. Gradients flow through
/// the policy only; the target is data.
pub fn concept_kl(pi: &Tensor, target: &[Real]) -> Tensor {
    let n = pi.numel();
    assert_eq!(n, target.len(), "distribution lengths differ");
    let log_target: Vec<Real> = target.iter().map(|p| p.max(LOG_EPS).ln()).collect();
    let log_target = Tensor::constant(log_target, &[n]);
    pi.dot(&pi.log().sub(&log_target))
}

fn softmax_slice(xs: &[Real]) -> Vec<Real> {
    let m = xs.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let exps: Vec<Real> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: Real = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

/// One hop of a rendered reasoning path.
#[derive(Debug, Clone)]
pub struct PathHop {
    pub relation: RelId,
    pub entity: EntityId,
    pub time: i64,
    /// Policy probability of the hop when it was chosen.
    pub prob: Real,
    /// Confidence of the hop when it was chosen.
    pub conf: Real,
}

/// A reasoning path taken by the agent, renderable as evidence for a
/// prediction.
#[derive(Debug, Clone)]
pub struct PathTrace {
    pub start_entity: EntityId,
    pub start_time: i64,
    pub hops: Vec<PathHop>,
}

impl PathTrace {
    /// One line per hop: `(entity@time) -[relation, p=…, conf=…]-> (entity@time)`.
    pub fn render(&self, vocabs: &Vocabs) -> String {
        let mut lines = Vec::new();
        let mut from = (self.start_entity, self.start_time);
        for hop in &self.hops {
            lines.push(format!(
                "({}@{}) -[{}, p={:.4}, conf={:.4}]-> ({}@{})",
                vocabs.entities.name(from.0),
                vocabs.time_display(from.1),
                vocabs.relations.display(hop.relation),
                hop.prob,
                hop.conf,
                vocabs.entities.name(hop.entity),
                vocabs.time_display(hop.time),
            ));
            from = (hop.entity, hop.time);
        }
        lines.join("\n")
    }
}
