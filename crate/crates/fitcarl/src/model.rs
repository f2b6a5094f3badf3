//! Model assembly: a flat parameter store under canonical names, and the
//! per-episode views that wire the time encoder, the entity encoder, and
//! the policy network over shared leaf tensors.
//!
//! Parameters live as plain values in a `ParamStore`. Each episode (or
//! evaluation pass) turns the store into leaf tensors once and builds a
//! `Model` over them, so every module differentiates against the same
//! leaves and one gradient accumulator serves the whole network.

use std::collections::HashMap;

use crate::encoder::{encode_unseen_entity, EncoderParams, HeadParams, LayerParams, TimeEncoder};
use crate::episodes::EpisodeTask;
use crate::policy::{ActionMode, PolicyParams};
use crate::pretrain::ComplexEmbedding;
use crate::store::{Edge, EntityId, RelId, TkgStore, Vocabs};
use crate::tensor::{stream, GruParams, ParamStore, Real, RngStream, Tensor};
use crate::{Error, Result};

/// Core sizes of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Embedding width; node representations are `2d`, history `3d`.
    pub d: usize,
    /// Attention heads per encoder layer.
    pub heads: usize,
    /// Encoder layers.
    pub layers: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims { d: 100, heads: 2, layers: 2 }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.layers == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.d % 2 != 0 {
            return Err(Error::Config(format!(
                "embedding width must be even for complex-valued pretraining, got {}",
                self.d
            )));
        }
        if self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "embedding width {} is not divisible by {} heads",
                self.d, self.heads
            )));
        }
        Ok(())
    }
}

/// Which parts of the model are switched off for component studies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AblationFlags {
    /// A1: sample action spaces uniformly at random.
    pub random_actions: bool,
    /// A2: keep the actions closest in time instead of scoring them.
    pub proximity_actions: bool,
    /// B: bypass the confidence learner.
    pub no_confidence: bool,
    /// C: drop the concept regularizer from the loss.
    pub no_concept_reg: bool,
    /// D: drop the time bias from encoder attention.
    pub no_time_bias: bool,
    /// E: remove every temporal signal (zeroed time encodings, random
    /// action sampling, no attention time bias).
    pub no_temporal: bool,
}

impl AblationFlags {
    /// Parses codes like `A1,B,D`. Unknown codes and contradictory action
    /// sampling choices are rejected.
    pub fn from_codes<S: AsRef<str>>(codes: &[S]) -> Result<Self> {
        let mut flags = AblationFlags::default();
        for code in codes {
            match code.as_ref().trim() {
                "" => {}
                "A1" => flags.random_actions = true,
                "A2" => flags.proximity_actions = true,
                "B" => flags.no_confidence = true,
                "C" => flags.no_concept_reg = true,
                "D" => flags.no_time_bias = true,
                "E" => flags.no_temporal = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown ablation code {other:?} (expected A1, A2, B, C, D or E)"
                    )))
                }
            }
        }
        if flags.random_actions && flags.proximity_actions {
            return Err(Error::Config(
                "ablations A1 and A2 select conflicting action sampling modes".into(),
            ));
        }
        Ok(flags)
    }

    /// Action sampling mode implied by the flags.
    pub fn action_mode(&self) -> ActionMode {
        if self.no_temporal || self.random_actions {
            ActionMode::Random
        } else if self.proximity_actions {
            ActionMode::TimeProximity
        } else {
            ActionMode::TimeAdaptive
        }
    }

    /// Whether time encodings are zeroed out everywhere.
    pub fn time_zeroed(&self) -> bool {
        self.no_temporal
    }

    /// Whether encoder attention adds the learned time bias.
    pub fn use_time_bias(&self) -> bool {
        !(self.no_time_bias || self.no_temporal)
    }

    /// Whether the policy multiplies in the confidence scores.
    pub fn use_confidence(&self) -> bool {
        !self.no_confidence
    }

    /// Whether the loss carries the concept divergence term.
    pub fn use_concept_reg(&self) -> bool {
        !self.no_concept_reg
    }

    /// The active codes, in canonical order; `from_codes(codes())` is the
    /// identity.
    pub fn codes(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.random_actions {
            out.push("A1");
        }
        if self.proximity_actions {
            out.push("A2");
        }
        if self.no_confidence {
            out.push("B");
        }
        if self.no_concept_reg {
            out.push("C");
        }
        if self.no_time_bias {
            out.push("D");
        }
        if self.no_temporal {
            out.push("E");
        }
        out
    }
}

fn xavier(rng: &mut RngStream, fan_in: usize, fan_out: usize, n: usize) -> Vec<Real> {
    let bound = (6.0 / (fan_in + fan_out) as Real).sqrt();
    (0..n).map(|_| (rng.uniform() * 2.0 - 1.0) * bound).collect()
}

fn small_normal(rng: &mut RngStream, d: usize, n: usize) -> Vec<Real> {
    let scale = 1.0 / (d as Real).sqrt();
    (0..n).map(|_| rng.normal() * scale).collect()
}

/// Geometric frequency ladder from 1 down to 1e-4, so the time encoding
/// resolves gaps across several orders of magnitude.
fn frequency_ladder(d: usize) -> Vec<Real> {
    (0..d)
        .map(|k| {
            if d == 1 {
                1.0
            } else {
                let exponent = -4.0 * k as Real / (d - 1) as Real;
                (10.0 as Real).powf(exponent)
            }
        })
        .collect()
}

/// Registers every model parameter under its canonical name and returns
/// the initialized store. Entity and relation vectors are copied from
/// `pretrained` when given (widths must agree), otherwise seeded randomly.
pub fn init_params(
    dims: ModelDims,
    vocabs: &Vocabs,
    pretrained: Option<&ComplexEmbedding>,
    seed: u64,
) -> Result<ParamStore> {
    dims.validate()?;
    let d = dims.d;
    let dh = d / dims.heads;
    let n_ent = vocabs.entities.len();
    let n_rel = vocabs.relations.id_count();
    if n_ent == 0 || n_rel == 0 {
        return Err(Error::Config("empty vocabulary".into()));
    }
    if let Some(emb) = pretrained {
        if emb.d != d {
            return Err(Error::Config(format!(
                "pretrained width {} does not match model width {}",
                emb.d, d
            )));
        }
        if emb.entities.len() != n_ent || emb.relations.len() != n_rel {
            return Err(Error::Config(format!(
                "pretrained table sizes {}x{} do not match vocabulary {}x{}",
                emb.entities.len(),
                emb.relations.len(),
                n_ent,
                n_rel
            )));
        }
    }

    let mut store = ParamStore::new();
    let add_xavier = |store: &mut ParamStore, name: &str, shape: &[usize]| {
        let n: usize = shape.iter().product();
        let (fan_out, fan_in) = match *shape {
            [r, c] => (r, c),
            [a, b, c] => (c, a * b),
            [v] => (v, v),
            _ => unreachable!("unsupported parameter rank"),
        };
        let mut rng = stream(seed, &format!("init/{name}"));
        store.add(name, shape, xavier(&mut rng, fan_in, fan_out, n));
    };
    let add_vec = |store: &mut ParamStore, name: &str, d: usize| {
        let mut rng = stream(seed, &format!("init/{name}"));
        store.add(name, &[d], small_normal(&mut rng, d, d));
    };
    let add_zeros = |store: &mut ParamStore, name: &str, shape: &[usize]| {
        store.add(name, shape, vec![0.0; shape.iter().product()]);
    };

    store.add("time/omega", &[d], frequency_ladder(d));
    add_zeros(&mut store, "time/phi", &[d]);

    add_vec(&mut store, "enc/cls", d);
    add_xavier(&mut store, "enc/meta_w", &[d, 2 * d]);
    add_zeros(&mut store, "enc/meta_b", &[d]);
    for l in 0..dims.layers {
        for h in 0..dims.heads {
            add_xavier(&mut store, &format!("enc/l{l}/h{h}/wq"), &[dh, d]);
            add_xavier(&mut store, &format!("enc/l{l}/h{h}/wk"), &[dh, d]);
            add_xavier(&mut store, &format!("enc/l{l}/h{h}/wv"), &[dh, d]);
            add_vec(&mut store, &format!("enc/l{l}/h{h}/wpos"), d);
        }
        add_xavier(&mut store, &format!("enc/l{l}/wo"), &[d, d]);
        add_zeros(&mut store, &format!("enc/l{l}/bo"), &[d]);
        add_xavier(&mut store, &format!("enc/l{l}/ff1_w"), &[2 * d, d]);
        add_zeros(&mut store, &format!("enc/l{l}/ff1_b"), &[2 * d]);
        add_xavier(&mut store, &format!("enc/l{l}/ff2_w"), &[d, 2 * d]);
        add_zeros(&mut store, &format!("enc/l{l}/ff2_b"), &[d]);
        store.add(&format!("enc/l{l}/ln1_g"), &[d], vec![1.0; d]);
        add_zeros(&mut store, &format!("enc/l{l}/ln1_b"), &[d]);
        store.add(&format!("enc/l{l}/ln2_g"), &[d], vec![1.0; d]);
        add_zeros(&mut store, &format!("enc/l{l}/ln2_b"), &[d]);
    }

    for gate in ["r", "z", "n"] {
        add_xavier(&mut store, &format!("gru/w_{gate}"), &[3 * d, 3 * d]);
        add_xavier(&mut store, &format!("gru/u_{gate}"), &[3 * d, 3 * d]);
        add_zeros(&mut store, &format!("gru/b_{gate}"), &[3 * d]);
    }

    add_vec(&mut store, "policy/r_dummy", d);
    add_xavier(&mut store, "policy/w1", &[2 * d, 3 * d]);
    add_xavier(&mut store, "policy/w2", &[2 * d, 3 * d]);
    add_xavier(&mut store, "policy/w3", &[2 * d, 3 * d]);
    add_xavier(&mut store, "policy/w4", &[2 * d, 2 * d]);
    add_xavier(&mut store, "policy/core", &[2 * d, d, 2 * d]);
    add_vec(&mut store, "policy/w_dt", d);

    for e in 0..n_ent {
        let name = format!("ent/{e}");
        match pretrained {
            Some(emb) => {
                store.add(&name, &[d], emb.entities[e].clone());
            }
            None => add_vec(&mut store, &name, d),
        }
    }
    for r in 0..n_rel {
        let name = format!("rel/{r}");
        match pretrained {
            Some(emb) => {
                store.add(&name, &[d], emb.relations[r].clone());
            }
            None => add_vec(&mut store, &name, d),
        }
    }
    Ok(store)
}

/// One differentiation-ready view over a parameter store: leaf tensors
/// plus the encoder and policy wired over them.
pub struct Model {
    pub dims: ModelDims,
    pub flags: AblationFlags,
    pub leaves: Vec<Tensor>,
    pub by_id: HashMap<u64, usize>,
    pub time: TimeEncoder,
    pub encoder: EncoderParams,
    pub policy: PolicyParams,
    ent_base: usize,
    rel_base: usize,
    n_ent: usize,
    n_rel: usize,
}

impl Model {
    /// Builds the view. `trainable` controls whether backward passes
    /// produce gradients for the leaves.
    pub fn build(store: &ParamStore, dims: ModelDims, flags: AblationFlags, trainable: bool) -> Model {
        let (leaves, by_id) = store.make_leaves(trainable);
        let g = |name: &str| -> Tensor {
            let idx = store
                .idx(name)
                .unwrap_or_else(|| panic!("parameter {name} missing from store"));
            leaves[idx].clone()
        };
        let time = TimeEncoder::new(g("time/omega"), g("time/phi"), flags.time_zeroed());
        let encoder = EncoderParams {
            cls: g("enc/cls"),
            meta_w: g("enc/meta_w"),
            meta_b: g("enc/meta_b"),
            layers: (0..dims.layers)
                .map(|l| LayerParams {
                    heads: (0..dims.heads)
                        .map(|h| HeadParams {
                            wq: g(&format!("enc/l{l}/h{h}/wq")),
                            wk: g(&format!("enc/l{l}/h{h}/wk")),
                            wv: g(&format!("enc/l{l}/h{h}/wv")),
                            wpos: g(&format!("enc/l{l}/h{h}/wpos")),
                        })
                        .collect(),
                    wo: g(&format!("enc/l{l}/wo")),
                    bo: g(&format!("enc/l{l}/bo")),
                    ff1_w: g(&format!("enc/l{l}/ff1_w")),
                    ff1_b: g(&format!("enc/l{l}/ff1_b")),
                    ff2_w: g(&format!("enc/l{l}/ff2_w")),
                    ff2_b: g(&format!("enc/l{l}/ff2_b")),
                    ln1_g: g(&format!("enc/l{l}/ln1_g")),
                    ln1_b: g(&format!("enc/l{l}/ln1_b")),
                    ln2_g: g(&format!("enc/l{l}/ln2_g")),
                    ln2_b: g(&format!("enc/l{l}/ln2_b")),
                })
                .collect(),
            use_time_bias: flags.use_time_bias(),
        };
        let policy = PolicyParams {
            gru: GruParams {
                w_r: g("gru/w_r"),
                u_r: g("gru/u_r"),
                b_r: g("gru/b_r"),
                w_z: g("gru/w_z"),
                u_z: g("gru/u_z"),
                b_z: g("gru/b_z"),
                w_n: g("gru/w_n"),
                u_n: g("gru/u_n"),
                b_n: g("gru/b_n"),
            },
            r_dummy: g("policy/r_dummy"),
            w1: g("policy/w1"),
            w2: g("policy/w2"),
            w3: g("policy/w3"),
            w4: g("policy/w4"),
            core: g("policy/core"),
            w_dt: g("policy/w_dt"),
        };
        let ent_base = store.idx("ent/0").expect("entity table missing");
        let rel_base = store.idx("rel/0").expect("relation table missing");
        let n_ent = rel_base - ent_base;
        let n_rel = store.len() - rel_base;
        debug_assert_eq!(store.name(ent_base + n_ent - 1), format!("ent/{}", n_ent - 1));
        debug_assert_eq!(store.name(rel_base + n_rel - 1), format!("rel/{}", n_rel - 1));
        Model {
            dims,
            flags,
            leaves,
            by_id,
            time,
            encoder,
            policy,
            ent_base,
            rel_base,
            n_ent,
            n_rel,
        }
    }

    /// Raw embedding-table leaf for an entity.
    pub fn entity_embedding(&self, e: EntityId) -> Tensor {
        assert!((e as usize) < self.n_ent, "entity id {e} out of range");
        self.leaves[self.ent_base + e as usize].clone()
    }

    /// Raw embedding-table leaf for a relation id.
    pub fn relation_embedding(&self, r: RelId) -> Tensor {
        assert!((r as usize) < self.n_rel, "relation id {r} out of range");
        self.leaves[self.rel_base + r as usize].clone()
    }

    pub fn entity_count(&self) -> usize {
        self.n_ent
    }
}

/// Walkable edges for one episode: the background graph extended with
/// both directions of every support fact of the task's unseen entities.
pub struct TaskGraph<'a> {
    store: &'a TkgStore,
    extra: HashMap<EntityId, Vec<Edge>>,
}

impl<'a> TaskGraph<'a> {
    pub fn new(vocabs: &Vocabs, store: &'a TkgStore, task: &EpisodeTask) -> TaskGraph<'a> {
        let mut extra: HashMap<EntityId, Vec<Edge>> = HashMap::new();
        for &e in &task.entities {
            for q in crate::episodes::rewrite_support(vocabs, task.support_of(e), e) {
                extra
                    .entry(q.s)
                    .or_default()
                    .push(Edge { rel: q.r, to: q.o, t: q.t });
                extra.entry(q.o).or_default().push(Edge {
                    rel: vocabs.relations.inverse_of(q.r),
                    to: q.s,
                    t: q.t,
                });
            }
        }
        TaskGraph { store, extra }
    }

    /// All outgoing edges of `e`: background first, support extensions
    /// after, each block in its deterministic load order.
    pub fn edges_from(&self, e: EntityId) -> Vec<Edge> {
        let base = self.store.out_edges(e);
        match self.extra.get(&e) {
            None => base.to_vec(),
            Some(more) => {
                let mut out = Vec::with_capacity(base.len() + more.len());
                out.extend_from_slice(base);
                out.extend_from_slice(more);
                out
            }
        }
    }
}

/// Mean support timestamp, rounded to the nearest integer: the reference
/// time used to encode unseen entities that have no live query.
pub fn mean_support_time(support: &[crate::store::Quadruple]) -> i64 {
    assert!(!support.is_empty(), "support set is empty");
    let sum: f64 = support.iter().map(|q| q.t as f64).sum();
    (sum / support.len() as f64).round() as i64
}

/// Encodes every unseen entity of the task at its mean support time.
/// These representations stand in for unseen entities whenever they are
/// met outside their own query (as neighbors, candidates, or answers).
pub fn encode_task_entities(
    model: &Model,
    vocabs: &Vocabs,
    task: &EpisodeTask,
) -> HashMap<EntityId, Tensor> {
    let mut encoded = HashMap::new();
    for &e in &task.entities {
        let support = task.support_of(e);
        let t_cls = mean_support_time(support);
        encoded.insert(e, encode_at(model, vocabs, task, e, t_cls));
    }
    encoded
}

/// Encodes one unseen entity with the CLS token pinned at `t_cls`.
pub fn encode_at(
    model: &Model,
    vocabs: &Vocabs,
    task: &EpisodeTask,
    e: EntityId,
    t_cls: i64,
) -> Tensor {
    let embed_e = |id: EntityId| model.entity_embedding(id);
    let embed_r = |id: RelId| model.relation_embedding(id);
    encode_unseen_entity(
        &model.encoder,
        &model.time,
        vocabs,
        task.support_of(e),
        e,
        t_cls,
        &embed_e,
        &embed_r,
    )
}

/// Entity lookup during one query's rollout: the query source resolves to
/// its query-time encoding, other unseen entities to their task
/// encodings, and everything else to its embedding-table leaf.
pub struct TaskView<'a> {
    pub model: &'a Model,
    pub encoded: &'a HashMap<EntityId, Tensor>,
    pub source: EntityId,
    pub source_repr: Tensor,
}

impl TaskView<'_> {
    pub fn embed_entity(&self, e: EntityId) -> Tensor {
        if e == self.source {
            self.source_repr.clone()
        } else if let Some(h) = self.encoded.get(&e) {
            h.clone()
        } else {
            self.model.entity_embedding(e)
        }
    }
}
