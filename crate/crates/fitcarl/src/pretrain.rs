//! Embedding pretraining on the background graph.
//!
//! Entities and relations (originals, inverses and the self-loop) get
//! d-dimensional vectors interpreted as d/2 complex numbers, stored as the
//! concatenation `real ‖ imag`. Facts are scored with the ComplEx bilinear
//! form and trained with binary cross-entropy against uniformly corrupted
//! objects, in both fact directions, ignoring timestamps. Ids never touched
//! by a background fact (unseen entities, the self-loop relation) keep
//! their seeded random initialization.

use std::fs;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use crate::binio::{BinReader, BinWriter};
use crate::store::{EntityId, RelId, TkgStore, Vocabs};
use crate::tensor::{stream, Real};
use crate::{Error, Result};

/// Pretrained vectors for every entity and relation id, length d each.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexEmbedding {
    pub d: usize,
    pub entities: Vec<Vec<Real>>,
    pub relations: Vec<Vec<Real>>,
}

impl ComplexEmbedding {
    pub fn entity(&self, e: EntityId) -> &[Real] {
        &self.entities[e as usize]
    }

    pub fn relation(&self, r: RelId) -> &[Real] {
        &self.relations[r as usize]
    }

    pub fn score(&self, s: EntityId, r: RelId, o: EntityId) -> Real {
        complex_score(self.entity(s), self.relation(r), self.entity(o))
    }
}

/// The ComplEx score Re(⟨e_s, w_r, conj(e_o)⟩) over `real ‖ imag` vectors.
pub fn complex_score(s: &[Real], r: &[Real], o: &[Real]) -> Real {
    let d = s.len();
    debug_assert!(d % 2 == 0 && r.len() == d && o.len() == d);
    let h = d / 2;
    let mut total = 0.0;
    for k in 0..h {
        let (sr, si) = (s[k], s[h + k]);
        let (rr, ri) = (r[k], r[h + k]);
        let (or, oi) = (o[k], o[h + k]);
        total += sr * rr * or + si * rr * oi + sr * ri * oi - si * ri * or;
    }
    total
}

/// Accumulates d(score)/d(s,r,o) scaled by `g` into the three gradient
/// buffers.
fn accumulate_score_grads(
    s: &[Real],
    r: &[Real],
    o: &[Real],
    g: Real,
    gs: &mut [Real],
    gr: &mut [Real],
    go: &mut [Real],
) {
    let h = s.len() / 2;
    for k in 0..h {
        let (sr, si) = (s[k], s[h + k]);
        let (rr, ri) = (r[k], r[h + k]);
        let (or, oi) = (o[k], o[h + k]);
        gs[k] += g * (rr * or + ri * oi);
        gs[h + k] += g * (rr * oi - ri * or);
        gr[k] += g * (sr * or + si * oi);
        gr[h + k] += g * (sr * oi - si * or);
        go[k] += g * (sr * rr - si * ri);
        go[h + k] += g * (si * rr + sr * ri);
    }
}

#[derive(Debug, Clone)]
pub struct PretrainConfig {
    /// Embedding width; must be even.
    pub d: usize,
    pub epochs: usize,
    /// Corrupted objects per training fact.
    pub neg_ratio: usize,
    pub lr: Real,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            d: 100,
            epochs: 50,
            neg_ratio: 10,
            lr: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainResult {
    pub embedding: ComplexEmbedding,
    /// Mean per-fact loss of each epoch.
    pub epoch_losses: Vec<Real>,
}

fn seeded_init(vocabs: &Vocabs, d: usize, seed: u64) -> ComplexEmbedding {
    let scale = 1.0 / (d as Real).sqrt();
    let init = |name: String, n: usize| -> Vec<Vec<Real>> {
        let mut rng = stream(seed, &name);
        (0..n)
            .map(|_| (0..d).map(|_| rng.normal() * scale).collect())
            .collect()
    };
    ComplexEmbedding {
        d,
        entities: init("cpx/init/entities".into(), vocabs.entities.len()),
        relations: init("cpx/init/relations".into(), vocabs.relations.id_count()),
    }
}

fn softplus(x: Real) -> Real {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pretrains embeddings on the background facts. Each fact is trained in
/// the original and the inverse direction; each direction contributes a
/// positive sample and `neg_ratio` negatives with the object replaced by a
/// uniformly drawn background entity. Updates are per-fact adaptive-
/// gradient steps, so parameters untouched by any fact stay at their
/// seeded initialization; `epochs = 0` returns that initialization as-is.
pub fn pretrain(
    background: &TkgStore,
    vocabs: &Vocabs,
    cfg: &PretrainConfig,
) -> Result<PretrainResult> {
    if cfg.d == 0 || cfg.d % 2 != 0 {
        return Err(Error::Config(format!(
            "embedding width must be a positive even number, got {}",
            cfg.d
        )));
    }
    if background.is_empty() {
        return Err(Error::Invariant("cannot pretrain on an empty background".into()));
    }
    let mut emb = seeded_init(vocabs, cfg.d, cfg.seed);
    let mut ent_acc = vec![vec![0.0; cfg.d]; emb.entities.len()];
    let mut rel_acc = vec![vec![0.0; cfg.d]; emb.relations.len()];

    // Negatives are drawn from entities the background actually contains.
    let mut bg_entities: Vec<EntityId> = background
        .quads()
        .iter()
        .flat_map(|q| [q.s, q.o])
        .collect();
    bg_entities.sort_unstable();
    bg_entities.dedup();

    let d = cfg.d;
    let eps = 1e-8;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..background.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = stream(cfg.seed, &format!("cpx/epoch/{epoch}"));
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut gs = vec![0.0; d];
        let mut gr = vec![0.0; d];
        for &qi in &order {
            let q = background.quads()[qi];
            let inv = vocabs.relations.inverse_of(q.r);
            for (s, r, o) in [(q.s, q.r, q.o), (q.o, inv, q.s)] {
                gs.iter_mut().for_each(|v| *v = 0.0);
                gr.iter_mut().for_each(|v| *v = 0.0);
                let mut updates: Vec<(EntityId, Vec<Real>)> = Vec::with_capacity(1 + cfg.neg_ratio);

                let score = emb.score(s, r, o);
                epoch_loss += softplus(-score);
                let g = sigmoid(score) - 1.0;
                let mut go = vec![0.0; d];
                accumulate_score_grads(
                    &emb.entities[s as usize],
                    &emb.relations[r as usize],
                    &emb.entities[o as usize],
                    g,
                    &mut gs,
                    &mut gr,
                    &mut go,
                );
                updates.push((o, go));

                for _ in 0..cfg.neg_ratio {
                    let neg = bg_entities[rng.below(bg_entities.len())];
                    let score = emb.score(s, r, neg);
                    epoch_loss += softplus(score);
                    let g = sigmoid(score);
                    let mut go = vec![0.0; d];
                    accumulate_score_grads(
                        &emb.entities[s as usize],
                        &emb.relations[r as usize],
                        &emb.entities[neg as usize],
                        g,
                        &mut gs,
                        &mut gr,
                        &mut go,
                    );
                    updates.push((neg, go));
                }

                apply(&mut emb.entities[s as usize], &mut ent_acc[s as usize], &gs, cfg.lr, eps);
                apply(&mut emb.relations[r as usize], &mut rel_acc[r as usize], &gr, cfg.lr, eps);
                for (e, go) in updates {
                    apply(&mut emb.entities[e as usize], &mut ent_acc[e as usize], &go, cfg.lr, eps);
                }
            }
        }
        let avg = epoch_loss / background.len() as Real;
        if !avg.is_finite() {
            return Err(Error::Runtime(format!(
                "pretraining diverged at epoch {epoch}: loss {avg}"
            )));
        }
        log::debug!("pretrain epoch {epoch}: mean fact loss {avg:.6}");
        epoch_losses.push(avg);
    }
    Ok(PretrainResult {
        embedding: emb,
        epoch_losses,
    })
}

fn apply(param: &mut [Real], acc: &mut [Real], grad: &[Real], lr: Real, eps: Real) {
    for k in 0..param.len() {
        if grad[k] == 0.0 {
            continue;
        }
        acc[k] += grad[k] * grad[k];
        param[k] -= lr * grad[k] / (acc[k].sqrt() + eps);
    }
}

const EMB_MAGIC: &str = "CPXEMB1";
const EMB_VERSION: u32 = 1;

pub fn write_embedding(path: &Path, emb: &ComplexEmbedding) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BinWriter::new(BufWriter::new(file));
    let io_err = |e: std::io::Error| Error::io(path, e);
    w.magic(EMB_MAGIC).map_err(io_err)?;
    w.u32(EMB_VERSION).map_err(io_err)?;
    w.u32(emb.d as u32).map_err(io_err)?;
    w.u32(emb.entities.len() as u32).map_err(io_err)?;
    w.u32(emb.relations.len() as u32).map_err(io_err)?;
    let mut write_block = |rows: &[Vec<Real>]| -> Result<()> {
        for (id, v) in rows.iter().enumerate() {
            w.u32(id as u32).map_err(io_err)?;
            let row: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            w.f64_slice(&row).map_err(io_err)?;
        }
        Ok(())
    };
    write_block(&emb.entities)?;
    write_block(&emb.relations)?;
    w.finish().flush().map_err(io_err)?;
    Ok(())
}

pub fn read_embedding(path: &Path) -> Result<ComplexEmbedding> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BinReader::new(BufReader::new(file), path);
    r.expect_magic(EMB_MAGIC)?;
    let version = r.u32()?;
    if version != EMB_VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("unsupported embedding version {version}"),
        });
    }
    let d = r.u32()? as usize;
    let n_ent = r.u32()? as usize;
    let n_rel = r.u32()? as usize;
    let mut read_block = |n: usize, kind: &str| -> Result<Vec<Vec<Real>>> {
        let mut out = Vec::with_capacity(n);
        for expect in 0..n {
            let id = r.u32()? as usize;
            if id != expect {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    msg: format!("{kind} record {expect} carries id {id}"),
                });
            }
            let row: Vec<Real> = r.f64_vec(d)?.into_iter().map(|x| x as Real).collect();
            out.push(row);
        }
        Ok(out)
    };
    let entities = read_block(n_ent, "entity")?;
    let relations = read_block(n_rel, "relation")?;
    Ok(ComplexEmbedding {
        d,
        entities,
        relations,
    })
}

/// Text export, one `entity|relation <TAB> name <TAB> space-joined values`
/// line per id, for inspection.
pub fn write_embedding_text(path: &Path, emb: &ComplexEmbedding, vocabs: &Vocabs) -> Result<()> {
    let mut out = String::new();
    let join = |v: &[Real]| {
        v.iter()
            .map(|x| format!("{x:.17e}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    for (id, v) in emb.entities.iter().enumerate() {
        out.push_str(&format!(
            "entity\t{}\t{}\n",
            vocabs.entities.name(id as u32),
            join(v)
        ));
    }
    for (id, v) in emb.relations.iter().enumerate() {
        out.push_str(&format!(
            "relation\t{}\t{}\n",
            vocabs.relations.display(id as u32),
            join(v)
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
