//! Out-of-graph splits and episodic task sampling.
//!
//! A split partitions a temporal knowledge graph into a background graph
//! over seen entities and three meta sets (train/valid/test) of facts
//! touching unseen entities. Unseen entities never occur in the background
//! and no fact links unseen entities of two different meta sets, so each
//! meta set is reachable only through seen entities.
//!
//! An episode task fixes, for every usable unseen entity of one meta set,
//! a support set of exactly K facts and a query set of the remaining facts.
//! Queries are rewritten so the unseen entity is always the source, using
//! inverse relation ids for subject-side predictions.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::store::{
    compute_concept_prior, load_concepts, load_quadruples, ConceptTable, EntityId, Quadruple,
    RelId, TkgStore, VocabMode, Vocabs,
};
use crate::tensor::{stream, RngStream};
use crate::{Error, Result};

/// Which meta set of a split to draw tasks from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaSplit {
    Train,
    Valid,
    Test,
}

impl MetaSplit {
    pub fn name(self) -> &'static str {
        match self {
            MetaSplit::Train => "meta_train",
            MetaSplit::Valid => "meta_valid",
            MetaSplit::Test => "meta_test",
        }
    }
}

/// One meta set: its unseen entities and the facts touching them.
#[derive(Debug, Clone, Default)]
pub struct MetaSet {
    /// Unseen entity ids, ascending.
    pub unseen: Vec<EntityId>,
    /// Facts in file order, original direction.
    pub facts: Vec<Quadruple>,
    by_entity: HashMap<EntityId, Vec<usize>>,
}

impl MetaSet {
    fn build(unseen: Vec<EntityId>, facts: Vec<Quadruple>) -> MetaSet {
        let unseen_set: HashSet<EntityId> = unseen.iter().copied().collect();
        let mut by_entity: HashMap<EntityId, Vec<usize>> = HashMap::new();
        for (i, q) in facts.iter().enumerate() {
            if unseen_set.contains(&q.s) {
                by_entity.entry(q.s).or_default().push(i);
            }
            if q.o != q.s && unseen_set.contains(&q.o) {
                by_entity.entry(q.o).or_default().push(i);
            }
        }
        MetaSet {
            unseen,
            facts,
            by_entity,
        }
    }

    /// Facts of one unseen entity, in file order.
    pub fn facts_of(&self, e: EntityId) -> impl Iterator<Item = &Quadruple> {
        self.by_entity
            .get(&e)
            .into_iter()
            .flatten()
            .map(|&i| &self.facts[i])
    }

    pub fn fact_count_of(&self, e: EntityId) -> usize {
        self.by_entity.get(&e).map_or(0, |v| v.len())
    }
}

/// A validated out-of-graph split bundling vocabularies, the background
/// graph, the three meta sets and the concept table.
#[derive(Debug, Clone)]
pub struct OogSplit {
    pub vocabs: Vocabs,
    pub background: TkgStore,
    pub meta_train: MetaSet,
    pub meta_valid: MetaSet,
    pub meta_test: MetaSet,
    pub concepts: ConceptTable,
    known: HashSet<Quadruple>,
}

impl OogSplit {
    pub fn meta(&self, which: MetaSplit) -> &MetaSet {
        match which {
            MetaSplit::Train => &self.meta_train,
            MetaSplit::Valid => &self.meta_valid,
            MetaSplit::Test => &self.meta_test,
        }
    }

    /// True when `(s, r, o, t)` is a fact anywhere in the split, in either
    /// orientation (inverse ids included). The basis of filtered ranking.
    pub fn is_known(&self, s: EntityId, r: RelId, o: EntityId, t: i64) -> bool {
        self.known.contains(&Quadruple { s, r, o, t })
    }

    pub fn stats(&self) -> DatasetStats {
        let mut lo = i64::MAX;
        let mut hi = i64::MIN;
        let mut count_span = |quads: &[Quadruple]| {
            for q in quads {
                lo = lo.min(q.t);
                hi = hi.max(q.t);
            }
        };
        count_span(self.background.quads());
        count_span(&self.meta_train.facts);
        count_span(&self.meta_valid.facts);
        count_span(&self.meta_test.facts);
        DatasetStats {
            entities: self.vocabs.entities.len(),
            relations: self.vocabs.relations.original_count(),
            timestamps: if lo > hi { 0 } else { hi - lo + 1 },
            unseen: [
                self.meta_train.unseen.len(),
                self.meta_valid.unseen.len(),
                self.meta_test.unseen.len(),
            ],
            background_facts: self.background.len(),
            meta_facts: [
                self.meta_train.facts.len(),
                self.meta_valid.facts.len(),
                self.meta_test.facts.len(),
            ],
        }
    }

    fn assemble(
        vocabs: Vocabs,
        background: TkgStore,
        meta_train: MetaSet,
        meta_valid: MetaSet,
        meta_test: MetaSet,
        concepts: ConceptTable,
    ) -> Result<OogSplit> {
        validate(&vocabs, &background, &[&meta_train, &meta_valid, &meta_test])?;
        let mut known = HashSet::new();
        let mut absorb = |quads: &[Quadruple]| {
            for q in quads {
                known.insert(*q);
                known.insert(Quadruple {
                    s: q.o,
                    r: vocabs.relations.inverse_of(q.r),
                    o: q.s,
                    t: q.t,
                });
            }
        };
        absorb(background.quads());
        absorb(&meta_train.facts);
        absorb(&meta_valid.facts);
        absorb(&meta_test.facts);
        Ok(OogSplit {
            vocabs,
            background,
            meta_train,
            meta_valid,
            meta_test,
            concepts,
            known,
        })
    }
}

/// Headline counts of a split, one row per quantity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetStats {
    pub entities: usize,
    pub relations: usize,
    /// Span of observed timestamps: max - min + 1.
    pub timestamps: i64,
    /// Unseen entity counts for [meta_train, meta_valid, meta_test].
    pub unseen: [usize; 3],
    pub background_facts: usize,
    /// Fact counts for [meta_train, meta_valid, meta_test].
    pub meta_facts: [usize; 3],
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "entities            {:>10}", self.entities)?;
        writeln!(f, "relations           {:>10}", self.relations)?;
        writeln!(f, "timestamps          {:>10}", self.timestamps)?;
        writeln!(f, "unseen (train)      {:>10}", self.unseen[0])?;
        writeln!(f, "unseen (valid)      {:>10}", self.unseen[1])?;
        writeln!(f, "unseen (test)       {:>10}", self.unseen[2])?;
        writeln!(f, "background facts    {:>10}", self.background_facts)?;
        writeln!(f, "meta-train facts    {:>10}", self.meta_facts[0])?;
        writeln!(f, "meta-valid facts    {:>10}", self.meta_facts[1])?;
        write!(f, "meta-test facts     {:>10}", self.meta_facts[2])
    }
}

fn validate(vocabs: &Vocabs, background: &TkgStore, metas: &[&MetaSet; 3]) -> Result<()> {
    let mut bg_entities = HashSet::new();
    for q in background.quads() {
        bg_entities.insert(q.s);
        bg_entities.insert(q.o);
    }
    // Group index per unseen entity; detects overlaps between meta sets.
    let mut group_of: HashMap<EntityId, usize> = HashMap::new();
    for (gi, meta) in metas.iter().enumerate() {
        for &e in &meta.unseen {
            if bg_entities.contains(&e) {
                return Err(Error::Invariant(format!(
                    "unseen entity '{}' of {} appears in the background graph",
                    vocabs.entities.name(e),
                    MetaSplit::name(split_of(gi)),
                )));
            }
            if let Some(prev) = group_of.insert(e, gi) {
                let quad = metas[gi]
                    .facts
                    .iter()
                    .find(|q| q.s == e || q.o == e)
                    .map(|q| vocabs.quad_display(q))
                    .unwrap_or_default();
                return Err(Error::Invariant(format!(
                    "entity '{}' appears in both {} and {} meta sets, e.g. {}",
                    vocabs.entities.name(e),
                    MetaSplit::name(split_of(prev)),
                    MetaSplit::name(split_of(gi)),
                    quad,
                )));
            }
        }
    }
    for (gi, meta) in metas.iter().enumerate() {
        let set: HashSet<EntityId> = meta.unseen.iter().copied().collect();
        for q in &meta.facts {
            if !set.contains(&q.s) && !set.contains(&q.o) {
                return Err(Error::Invariant(format!(
                    "{} fact {} touches no unseen entity of its set",
                    MetaSplit::name(split_of(gi)),
                    vocabs.quad_display(q),
                )));
            }
            for e in [q.s, q.o] {
                if let Some(&other) = group_of.get(&e) {
                    if other != gi {
                        return Err(Error::Invariant(format!(
                            "fact {} links unseen entities of {} and {}",
                            vocabs.quad_display(q),
                            MetaSplit::name(split_of(gi)),
                            MetaSplit::name(split_of(other)),
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

fn split_of(gi: usize) -> MetaSplit {
    match gi {
        0 => MetaSplit::Train,
        1 => MetaSplit::Valid,
        _ => MetaSplit::Test,
    }
}

/// Loads a split directory: `background.txt`, `meta_train.txt`,
/// `meta_valid.txt`, `meta_test.txt` and `concepts.txt`. Unseen entities
/// are derived per meta file as the entities absent from the background;
/// all split invariants are checked before returning.
pub fn load_split(dir: &Path) -> Result<OogSplit> {
    let bg_path = dir.join("background.txt");
    let train_path = dir.join("meta_train.txt");
    let valid_path = dir.join("meta_valid.txt");
    let test_path = dir.join("meta_test.txt");
    let mut vocabs = Vocabs::new();
    vocabs.scan_files(&[&bg_path, &train_path, &valid_path, &test_path])?;

    let background = load_quadruples(&bg_path, &mut vocabs, VocabMode::Frozen)?;
    let mut bg_entities = HashSet::new();
    for q in background.quads() {
        bg_entities.insert(q.s);
        bg_entities.insert(q.o);
    }
    let mut load_meta = |path: &Path| -> Result<MetaSet> {
        let store = load_quadruples(path, &mut vocabs, VocabMode::Frozen)?;
        let mut unseen: Vec<EntityId> = store
            .quads()
            .iter()
            .flat_map(|q| [q.s, q.o])
            .filter(|e| !bg_entities.contains(e))
            .collect();
        unseen.sort_unstable();
        unseen.dedup();
        Ok(MetaSet::build(unseen, store.quads().to_vec()))
    };
    let meta_train = load_meta(&train_path)?;
    let meta_valid = load_meta(&valid_path)?;
    let meta_test = load_meta(&test_path)?;

    let mut concepts = load_concepts(&dir.join("concepts.txt"), &vocabs)?;
    compute_concept_prior(&background, &vocabs, &mut concepts)?;
    OogSplit::assemble(vocabs, background, meta_train, meta_valid, meta_test, concepts)
}

/// Carves an out-of-graph split from a monolithic store: samples three
/// disjoint unseen entity groups by the given fractions of the entity
/// count, keeps facts with no unseen endpoint as background, assigns facts
/// with one unseen endpoint to that entity's group, and drops facts linking
/// two groups. Deterministic under the seed. The concept table is left
/// empty.
pub fn make_split(
    store: &TkgStore,
    vocabs: &Vocabs,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<OogSplit> {
    let (ft, fv, fs) = fractions;
    if ft <= 0.0 || fv <= 0.0 || fs <= 0.0 || ft + fv + fs >= 1.0 {
        return Err(Error::Config(format!(
            "unseen fractions must be positive and sum below 1, got {ft}, {fv}, {fs}"
        )));
    }
    let n = vocabs.entities.len();
    let n_train = (ft * n as f64).floor() as usize;
    let n_valid = (fv * n as f64).floor() as usize;
    let n_test = (fs * n as f64).floor() as usize;
    if n_train == 0 || n_valid == 0 || n_test == 0 {
        return Err(Error::Config(format!(
            "store with {n} entities is too small for fractions {ft}, {fv}, {fs}"
        )));
    }

    let mut rng = stream(seed, "make-split");
    let mut ids: Vec<EntityId> = (0..n as u32).collect();
    rng.shuffle(&mut ids);
    let mut group_of: HashMap<EntityId, usize> = HashMap::new();
    let mut groups: [Vec<EntityId>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (i, &e) in ids.iter().take(n_train + n_valid + n_test).enumerate() {
        let gi = if i < n_train {
            0
        } else if i < n_train + n_valid {
            1
        } else {
            2
        };
        group_of.insert(e, gi);
        groups[gi].push(e);
    }
    for g in &mut groups {
        g.sort_unstable();
    }

    let mut background = Vec::new();
    let mut meta_facts: [Vec<Quadruple>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for q in store.quads() {
        match (group_of.get(&q.s), group_of.get(&q.o)) {
            (None, None) => background.push(*q),
            (Some(&a), Some(&b)) if a != b => {} // cross-group link: dropped
            (Some(&g), _) | (None, Some(&g)) => meta_facts[g].push(*q),
        }
    }
    let [gt, gv, gs] = groups;
    let [mt, mv, ms] = meta_facts;
    OogSplit::assemble(
        vocabs.clone(),
        TkgStore::from_quads(background, vocabs),
        MetaSet::build(gt, mt),
        MetaSet::build(gv, mv),
        MetaSet::build(gs, ms),
        ConceptTable::default(),
    )
}

/// Writes a split back out as the five-file directory layout. Timestamps
/// are rendered as dates when the vocabularies carry an epoch.
pub fn write_split(dir: &Path, split: &OogSplit) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let vocabs = &split.vocabs;
    let write_quads = |name: &str, quads: &[Quadruple]| -> Result<()> {
        let path = dir.join(name);
        let mut out = String::new();
        for q in quads {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                vocabs.entities.name(q.s),
                vocabs.relations.display(q.r),
                vocabs.entities.name(q.o),
                vocabs.time_display(q.t),
            ));
        }
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(&path, e))
    };
    write_quads("background.txt", split.background.quads())?;
    write_quads("meta_train.txt", &split.meta_train.facts)?;
    write_quads("meta_valid.txt", &split.meta_valid.facts)?;
    write_quads("meta_test.txt", &split.meta_test.facts)?;

    let path = dir.join("concepts.txt");
    let mut out = String::new();
    for e in 0..vocabs.entities.len() as u32 {
        let cs = split.concepts.concepts_of(e);
        if cs.is_empty() {
            continue;
        }
        let names: Vec<&str> = cs.iter().map(|&c| split.concepts.concepts.name(c)).collect();
        out.push_str(&format!("{}\t{}\n", vocabs.entities.name(e), names.join("|")));
    }
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(&path, e))
}

/// One episode: a fixed support/query partition of every usable unseen
/// entity's facts in one meta set.
#[derive(Debug, Clone)]
pub struct EpisodeTask {
    pub k: usize,
    /// Usable unseen entities (more than K facts), ascending.
    pub entities: Vec<EntityId>,
    support: HashMap<EntityId, Vec<Quadruple>>,
    query: HashMap<EntityId, Vec<Quadruple>>,
}

impl EpisodeTask {
    /// The K support facts of an entity, in sampling order.
    pub fn support_of(&self, e: EntityId) -> &[Quadruple] {
        self.support.get(&e).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// The query facts of an entity, in file order.
    pub fn query_of(&self, e: EntityId) -> &[Quadruple] {
        self.query.get(&e).map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Samples an episode task: for every unseen entity of the chosen meta set
/// with more than K facts, picks K support facts uniformly without
/// replacement; the rest become queries. Entities with at most K facts are
/// skipped. Consumes the stream deterministically in ascending entity
/// order.
pub fn sample_task(
    split: &OogSplit,
    which: MetaSplit,
    k: usize,
    rng: &mut RngStream,
) -> Result<EpisodeTask> {
    if k == 0 {
        return Err(Error::Config("shot count K must be positive".into()));
    }
    let meta = split.meta(which);
    let mut entities = Vec::new();
    let mut support = HashMap::new();
    let mut query = HashMap::new();
    let mut skipped = 0usize;
    for &e in &meta.unseen {
        let facts: Vec<Quadruple> = meta.facts_of(e).copied().collect();
        if facts.len() <= k {
            skipped += 1;
            continue;
        }
        // Selection order is kept: it later fixes the encoder's token order.
        let picked = rng.sample_indices(facts.len(), k);
        let picked_set: HashSet<usize> = picked.iter().copied().collect();
        let sup: Vec<Quadruple> = picked.iter().map(|&i| facts[i]).collect();
        let que: Vec<Quadruple> = facts
            .iter()
            .enumerate()
            .filter(|(i, _)| !picked_set.contains(i))
            .map(|(_, q)| *q)
            .collect();
        entities.push(e);
        support.insert(e, sup);
        query.insert(e, que);
    }
    if skipped > 0 {
        log::warn!(
            "{}: skipped {skipped} unseen entities with at most {k} facts",
            which.name()
        );
    }
    if entities.is_empty() {
        return Err(Error::Invariant(format!(
            "{}: no unseen entity has more than {k} facts",
            which.name()
        )));
    }
    Ok(EpisodeTask {
        k,
        entities,
        support,
        query,
    })
}

/// A link-prediction query: predict `answer` from the unseen `source`
/// entity under `relation` at `query_time`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LpQuery {
    pub source: EntityId,
    pub relation: RelId,
    pub query_time: i64,
    pub answer: EntityId,
}

/// Rewrites an entity's query facts into link-prediction queries with the
/// unseen entity as source. Object-side facts keep their relation;
/// subject-side facts use the inverse relation id.
pub fn derive_queries(vocabs: &Vocabs, task: &EpisodeTask, e: EntityId) -> Vec<LpQuery> {
    task.query_of(e)
        .iter()
        .map(|q| {
            if q.s == e {
                LpQuery {
                    source: e,
                    relation: q.r,
                    query_time: q.t,
                    answer: q.o,
                }
            } else {
                LpQuery {
                    source: e,
                    relation: vocabs.relations.inverse_of(q.r),
                    query_time: q.t,
                    answer: q.s,
                }
            }
        })
        .collect()
}

/// Rewrites an entity's support facts so the unseen entity is the subject
/// of every fact. This is the outgoing-edge view used when the agent walks
/// away from the unseen entity; the encoder uses the opposite orientation.
pub fn rewrite_support(vocabs: &Vocabs, facts: &[Quadruple], e: EntityId) -> Vec<Quadruple> {
    facts
        .iter()
        .map(|q| {
            if q.s == e {
                *q
            } else {
                Quadruple {
                    s: e,
                    r: vocabs.relations.inverse_of(q.r),
                    o: q.s,
                    t: q.t,
                }
            }
        })
        .collect()
}
