//! Temporal knowledge graph storage: vocabularies, quadruple stores and
//! concept tables.
//!
//! Facts are quadruples `(subject, relation, object, timestamp)`. For every
//! loaded fact the store also materializes the inverse edge
//! `(object, relation^-1, subject, timestamp)`, so graph walks can traverse
//! facts in both directions. Relation ids interleave originals and inverses
//! (`2k+1` / `2k+2`) and reserve id 0 for the self-loop relation, whose
//! inverse is itself; ids therefore stay stable while a vocabulary grows.
//!
//! Timestamps are either `YYYY-MM-DD` dates, normalized to integer day
//! offsets from the earliest date across the scanned file set, or raw
//! non-negative integers used as-is. A file set must not mix the two.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::NaiveDate;

use crate::binio::{BinReader, BinWriter};
use crate::{Error, Result};

pub type EntityId = u32;
pub type RelId = u32;

/// Reserved relation id for the agent's stay-in-place action.
pub const SELF_LOOP: RelId = 0;

/// Interning table mapping names to dense ids in first-appearance order.
#[derive(Debug, Clone, Default)]
pub struct NameTable {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl NameTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(id) = self.index.get(name) {
            return *id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|s| s.as_str())
    }
}

/// Relation vocabulary with automatic inverse ids.
#[derive(Debug, Clone, Default)]
pub struct RelationVocab {
    originals: NameTable,
}

impl RelationVocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Interns an original relation name, returning its (odd) id.
    pub fn intern(&mut self, name: &str) -> RelId {
        2 * self.originals.intern(name) + 1
    }

    pub fn get(&self, name: &str) -> Option<RelId> {
        self.originals.get(name).map(|k| 2 * k + 1)
    }

    /// Number of original relation names.
    pub fn original_count(&self) -> usize {
        self.originals.len()
    }

    /// Total number of relation ids: self-loop, originals and inverses.
    pub fn id_count(&self) -> usize {
        1 + 2 * self.originals.len()
    }

    /// The inverse of a relation. Involutive; the self-loop is its own
    /// inverse.
    pub fn inverse_of(&self, id: RelId) -> RelId {
        if id == SELF_LOOP {
            SELF_LOOP
        } else if id % 2 == 1 {
            id + 1
        } else {
            id - 1
        }
    }

    pub fn is_inverse(&self, id: RelId) -> bool {
        id != SELF_LOOP && id % 2 == 0
    }

    /// Display name; inverses get a `^-1` suffix.
    pub fn display(&self, id: RelId) -> String {
        if id == SELF_LOOP {
            "<self>".to_string()
        } else if id % 2 == 1 {
            self.originals.name((id - 1) / 2).to_string()
        } else {
            format!("{}^-1", self.originals.name((id - 2) / 2))
        }
    }

    fn iter_names(&self) -> impl Iterator<Item = &str> {
        self.originals.iter()
    }
}

/// Shared vocabularies and the timestamp convention of a file set.
#[derive(Debug, Clone, Default)]
pub struct Vocabs {
    pub entities: NameTable,
    pub relations: RelationVocab,
    /// Calendar date of timestamp 0 when the files used dates.
    pub epoch: Option<NaiveDate>,
    saw_raw: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabMode {
    /// Unknown names extend the vocabulary.
    Build,
    /// Unknown names are an error.
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Quadruple {
    pub s: EntityId,
    pub r: RelId,
    pub o: EntityId,
    pub t: i64,
}

/// One outgoing edge of the (inverse-materialized) graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub rel: RelId,
    pub to: EntityId,
    pub t: i64,
}

/// An immutable set of facts with per-entity adjacency.
#[derive(Debug, Clone)]
pub struct TkgStore {
    quads: Vec<Quadruple>,
    out_edges: Vec<Vec<Edge>>,
    time_span: (i64, i64),
}

struct RawLine {
    s: String,
    r: String,
    o: String,
    t: String,
}

fn read_lines(path: &Path) -> Result<Vec<(usize, RawLine)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let fname = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::Parse {
                file: fname.clone(),
                line: i + 1,
                msg: format!("expected 4 tab-separated columns, found {}", cols.len()),
            });
        }
        out.push((
            i + 1,
            RawLine {
                s: cols[0].to_string(),
                r: cols[1].to_string(),
                o: cols[2].to_string(),
                t: cols[3].to_string(),
            },
        ));
    }
    Ok(out)
}

enum RawTime {
    Days(NaiveDate),
    Int(i64),
}

fn parse_time(file: &str, line: usize, text: &str) -> Result<RawTime> {
    if let Ok(v) = text.parse::<i64>() {
        if v < 0 {
            return Err(Error::Parse {
                file: file.to_string(),
                line,
                msg: format!("negative timestamp {v}"),
            });
        }
        return Ok(RawTime::Int(v));
    }
    match NaiveDate::parse_from_str(text, "%Y-%m-%d") {
        Ok(d) => Ok(RawTime::Days(d)),
        Err(_) => Err(Error::Parse {
            file: file.to_string(),
            line,
            msg: format!("timestamp '{text}' is neither an integer nor YYYY-MM-DD"),
        }),
    }
}

impl Vocabs {
    pub fn new() -> Self {
        Self::default()
    }

    /// First pass over a file set: interns every name and establishes the
    /// shared epoch (the earliest date across all files). Must cover every
    /// file that will share these vocabularies, since a later file may not
    /// predate an already established epoch.
    pub fn scan_files(&mut self, paths: &[&Path]) -> Result<()> {
        let mut min_date: Option<NaiveDate> = self.epoch;
        for path in paths {
            let fname = path.display().to_string();
            let lines = read_lines(path)?;
            for (lineno, raw) in &lines {
                self.entities.intern(&raw.s);
                self.relations.intern(&raw.r);
                self.entities.intern(&raw.o);
                match parse_time(&fname, *lineno, &raw.t)? {
                    RawTime::Days(d) => {
                        if self.saw_raw {
                            return Err(Error::Parse {
                                file: fname.clone(),
                                line: *lineno,
                                msg: "date timestamp in a file set using raw integers".into(),
                            });
                        }
                        min_date = Some(min_date.map_or(d, |m| m.min(d)));
                    }
                    RawTime::Int(_) => {
                        if min_date.is_some() {
                            return Err(Error::Parse {
                                file: fname.clone(),
                                line: *lineno,
                                msg: "raw integer timestamp in a file set using dates".into(),
                            });
                        }
                        self.saw_raw = true;
                    }
                }
            }
        }
        self.epoch = min_date;
        Ok(())
    }

    /// Renders a timestamp back in the file set's convention: a date when
    /// an epoch is set, the raw integer otherwise.
    pub fn time_display(&self, t: i64) -> String {
        match self.epoch {
            Some(epoch) => (epoch + chrono::Duration::days(t))
                .format("%Y-%m-%d")
                .to_string(),
            None => t.to_string(),
        }
    }

    /// Human-readable rendering of a quadruple.
    pub fn quad_display(&self, q: &Quadruple) -> String {
        format!(
            "({}, {}, {}, {})",
            self.entities.name(q.s),
            self.relations.display(q.r),
            self.entities.name(q.o),
            self.time_display(q.t),
        )
    }

    fn normalize_time(&self, file: &str, line: usize, raw: RawTime) -> Result<i64> {
        match (raw, self.epoch) {
            (RawTime::Int(v), None) => Ok(v),
            (RawTime::Days(d), Some(epoch)) => {
                let days = (d - epoch).num_days();
                if days < 0 {
                    return Err(Error::Parse {
                        file: file.to_string(),
                        line,
                        msg: format!(
                            "date {d} predates the established epoch {epoch}; scan all files together"
                        ),
                    });
                }
                Ok(days)
            }
            (RawTime::Int(_), Some(_)) | (RawTime::Days(_), None) => Err(Error::Parse {
                file: file.to_string(),
                line,
                msg: "mixed raw integer and date timestamps".into(),
            }),
        }
    }
}

/// Loads one quadruple file. In [`VocabMode::Build`] the file is scanned
/// first so new names and (for the first file set) the epoch are absorbed;
/// in [`VocabMode::Frozen`] unknown names are errors.
pub fn load_quadruples(path: &Path, vocabs: &mut Vocabs, mode: VocabMode) -> Result<TkgStore> {
    if mode == VocabMode::Build {
        vocabs.scan_files(&[path])?;
    }
    let fname = path.display().to_string();
    let lines = read_lines(path)?;
    if lines.is_empty() {
        return Err(Error::Parse {
            file: fname,
            line: 0,
            msg: "file contains no quadruples".into(),
        });
    }
    let mut quads = Vec::with_capacity(lines.len());
    let lookup_entity = |vocabs: &Vocabs, name: &str| -> Result<EntityId> {
        vocabs.entities.get(name).ok_or_else(|| Error::UnknownName {
            kind: "entity",
            name: name.to_string(),
            context: fname.clone(),
        })
    };
    for (lineno, raw) in &lines {
        let s = lookup_entity(vocabs, &raw.s)?;
        let o = lookup_entity(vocabs, &raw.o)?;
        let r = vocabs
            .relations
            .get(&raw.r)
            .ok_or_else(|| Error::UnknownName {
                kind: "relation",
                name: raw.r.clone(),
                context: fname.clone(),
            })?;
        let t = vocabs.normalize_time(&fname, *lineno, parse_time(&fname, *lineno, &raw.t)?)?;
        quads.push(Quadruple { s, r, o, t });
    }
    Ok(TkgStore::from_quads(quads, vocabs))
}

impl TkgStore {
    /// Builds adjacency from facts, materializing inverse edges. Edge order
    /// per entity follows fact order, which fixes all tie-breaking.
    pub fn from_quads(quads: Vec<Quadruple>, vocabs: &Vocabs) -> TkgStore {
        let mut out_edges = vec![Vec::new(); vocabs.entities.len()];
        let mut lo = i64::MAX;
        let mut hi = i64::MIN;
        for q in &quads {
            lo = lo.min(q.t);
            hi = hi.max(q.t);
            out_edges[q.s as usize].push(Edge {
                rel: q.r,
                to: q.o,
                t: q.t,
            });
            out_edges[q.o as usize].push(Edge {
                rel: vocabs.relations.inverse_of(q.r),
                to: q.s,
                t: q.t,
            });
        }
        let time_span = if quads.is_empty() { (0, 0) } else { (lo, hi) };
        TkgStore {
            quads,
            out_edges,
            time_span,
        }
    }

    pub fn quads(&self) -> &[Quadruple] {
        &self.quads
    }

    pub fn len(&self) -> usize {
        self.quads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quads.is_empty()
    }

    /// Outgoing edges of an entity, inverse directions included. Entities
    /// outside the adjacency (for example interned after the store was
    /// built) have none.
    pub fn out_edges(&self, e: EntityId) -> &[Edge] {
        self.out_edges
            .get(e as usize)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    /// `(min, max)` timestamp over the facts.
    pub fn time_span(&self) -> (i64, i64) {
        self.time_span
    }
}

/// Entity-to-concept assignments plus per-relation concept priors.
#[derive(Debug, Clone, Default)]
pub struct ConceptTable {
    pub concepts: NameTable,
    concepts_of: Vec<Vec<u32>>,
    priors: Vec<Vec<(u32, f64)>>,
}

impl ConceptTable {
    /// Concepts of an entity; empty when none were declared.
    pub fn concepts_of(&self, e: EntityId) -> &[u32] {
        self.concepts_of
            .get(e as usize)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    /// Concept prior of a relation as sorted `(concept, probability)` pairs.
    /// Empty when the relation has no prior (no facts, or no object of any
    /// fact carried concepts); callers treat that as a uniform prior.
    pub fn prior(&self, r: RelId) -> &[(u32, f64)] {
        self.priors
            .get(r as usize)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn prior_of(&self, r: RelId, concept: u32) -> f64 {
        self.prior(r)
            .binary_search_by_key(&concept, |(c, _)| *c)
            .map(|i| self.prior(r)[i].1)
            .unwrap_or(0.0)
    }

    pub fn has_priors(&self) -> bool {
        !self.priors.is_empty()
    }

    /// Used by tests and the synthetic generator to build tables directly.
    pub fn from_parts(
        concepts: NameTable,
        concepts_of: Vec<Vec<u32>>,
        priors: Vec<Vec<(u32, f64)>>,
    ) -> Self {
        ConceptTable {
            concepts,
            concepts_of,
            priors,
        }
    }
}

/// Loads `entity<TAB>concept|concept|...` lines. Unknown entities are
/// errors; duplicate entity lines union their concept sets. Priors are left
/// unset.
pub fn load_concepts(path: &Path, vocabs: &Vocabs) -> Result<ConceptTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let fname = path.display().to_string();
    let mut table = ConceptTable {
        concepts: NameTable::new(),
        concepts_of: vec![Vec::new(); vocabs.entities.len()],
        priors: Vec::new(),
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let Some((ename, clist)) = line.split_once('\t') else {
            return Err(Error::Parse {
                file: fname.clone(),
                line: i + 1,
                msg: "expected entity<TAB>concept|concept|...".into(),
            });
        };
        let e = vocabs
            .entities
            .get(ename)
            .ok_or_else(|| Error::UnknownName {
                kind: "entity",
                name: ename.to_string(),
                context: fname.clone(),
            })?;
        let set = &mut table.concepts_of[e as usize];
        for cname in clist.split('|').filter(|c| !c.is_empty()) {
            let c = table.concepts.intern(cname);
            if !set.contains(&c) {
                set.push(c);
            }
        }
        set.sort_unstable();
    }
    Ok(table)
}

/// Fills the per-relation concept priors from a background store: for each
/// relation, the prior of concept `c` is the number of (fact, concept)
/// occurrences among the objects of that relation's facts, normalized over
/// all concepts. Inverse relations are counted symmetrically (their objects
/// are the original subjects).
pub fn compute_concept_prior(
    background: &TkgStore,
    vocabs: &Vocabs,
    table: &mut ConceptTable,
) -> Result<()> {
    let n_rel = vocabs.relations.id_count();
    let mut counts: Vec<HashMap<u32, u64>> = vec![HashMap::new(); n_rel];
    for q in background.quads() {
        for &c in table.concepts_of(q.o) {
            *counts[q.r as usize].entry(c).or_insert(0) += 1;
        }
        let inv = vocabs.relations.inverse_of(q.r);
        for &c in table.concepts_of(q.s) {
            *counts[inv as usize].entry(c).or_insert(0) += 1;
        }
    }
    table.priors = counts
        .into_iter()
        .map(|m| {
            let total: u64 = m.values().sum();
            if total == 0 {
                return Vec::new();
            }
            let mut pairs: Vec<(u32, f64)> = m
                .into_iter()
                .map(|(c, n)| (c, n as f64 / total as f64))
                .collect();
            pairs.sort_unstable_by_key(|(c, _)| *c);
            pairs
        })
        .collect();
    Ok(())
}

const STORE_MAGIC: &str = "TKGSTORE1";
const STORE_VERSION: u32 = 1;

/// Serializes vocabularies and a store. Identical inputs produce
/// byte-identical files.
pub fn write_store(path: &Path, vocabs: &Vocabs, store: &TkgStore) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BinWriter::new(std::io::BufWriter::new(file));
    let io_err = |e: std::io::Error| Error::io(path, e);
    w.magic(STORE_MAGIC).map_err(io_err)?;
    w.u32(STORE_VERSION).map_err(io_err)?;
    w.u32(vocabs.entities.len() as u32).map_err(io_err)?;
    for name in vocabs.entities.iter() {
        w.str(name).map_err(io_err)?;
    }
    w.u32(vocabs.relations.original_count() as u32)
        .map_err(io_err)?;
    for name in vocabs.relations.iter_names() {
        w.str(name).map_err(io_err)?;
    }
    match vocabs.epoch {
        Some(d) => {
            w.u32(1).map_err(io_err)?;
            w.str(&d.format("%Y-%m-%d").to_string()).map_err(io_err)?;
        }
        None => w.u32(0).map_err(io_err)?,
    }
    w.u64(store.quads.len() as u64).map_err(io_err)?;
    for q in &store.quads {
        w.u32(q.s).map_err(io_err)?;
        w.u32(q.r).map_err(io_err)?;
        w.u32(q.o).map_err(io_err)?;
        w.i64(q.t).map_err(io_err)?;
    }
    w.finish().flush().map_err(io_err)?;
    Ok(())
}

/// Reads a serialized store back; adjacency is rebuilt.
pub fn read_store(path: &Path) -> Result<(Vocabs, TkgStore)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BinReader::new(BufReader::new(file), path);
    r.expect_magic(STORE_MAGIC)?;
    let version = r.u32()?;
    if version != STORE_VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("unsupported store version {version}"),
        });
    }
    let mut vocabs = Vocabs::new();
    let n_ent = r.u32()?;
    for _ in 0..n_ent {
        let name = r.str()?;
        vocabs.entities.intern(&name);
    }
    let n_rel = r.u32()?;
    for _ in 0..n_rel {
        let name = r.str()?;
        vocabs.relations.intern(&name);
    }
    if r.u32()? == 1 {
        let text = r.str()?;
        let d = NaiveDate::parse_from_str(&text, "%Y-%m-%d").map_err(|_| Error::Format {
            path: path.to_path_buf(),
            msg: format!("bad epoch date '{text}'"),
        })?;
        vocabs.epoch = Some(d);
    } else {
        vocabs.saw_raw = true;
    }
    let n_quads = r.u64()? as usize;
    let mut quads = Vec::with_capacity(n_quads);
    for _ in 0..n_quads {
        let s = r.u32()?;
        let rel = r.u32()?;
        let o = r.u32()?;
        let t = r.i64()?;
        if s >= n_ent || o >= n_ent || rel as usize >= vocabs.relations.id_count() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: "quadruple references an id outside the vocabularies".into(),
            });
        }
        quads.push(Quadruple { s, r: rel, o, t });
    }
    let store = TkgStore::from_quads(quads, &vocabs);
    Ok((vocabs, store))
}
