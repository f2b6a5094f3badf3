//! Checkpoint artifacts: every parameter by canonical name, the optimizer
//! moments, the effective configuration, and resume bookkeeping, in one
//! binary file that round-trips bit-exactly.

use std::fs;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use crate::binio::{BinReader, BinWriter};
use crate::config::TrainConfig;
use crate::tensor::{AdamState, ParamStore, Real};
use crate::{Error, Result};

const MAGIC: &str = "FITCARL1";
const VERSION: u32 = 1;

/// Full training state at some episode boundary.
#[derive(Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ParamStore,
    pub adam: AdamState,
    /// Episode the next training step would run.
    pub next_episode: u64,
    /// Best validation MRR seen so far, if any validation ran.
    pub best_valid_mrr: Option<f64>,
    /// Saved positions of long-lived named random streams.
    pub rng_cursors: Vec<(String, u128)>,
}

impl Checkpoint {
    /// Fresh state before the first episode.
    pub fn initial(config: TrainConfig, params: ParamStore) -> Checkpoint {
        let adam = AdamState::new(&params);
        Checkpoint {
            config,
            params,
            adam,
            next_episode: 0,
            best_valid_mrr: None,
            rng_cursors: Vec::new(),
        }
    }
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let io_err = |e: std::io::Error| Error::io(path, e);
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BinWriter::new(BufWriter::new(file));
    w.magic(MAGIC).map_err(io_err)?;
    w.u32(VERSION).map_err(io_err)?;
    w.str(&ck.config.render()).map_err(io_err)?;
    w.u64(ck.next_episode).map_err(io_err)?;
    match ck.best_valid_mrr {
        Some(v) => {
            w.u32(1).map_err(io_err)?;
            w.f64(v).map_err(io_err)?;
        }
        None => {
            w.u32(0).map_err(io_err)?;
            w.f64(0.0).map_err(io_err)?;
        }
    }

    w.u64(ck.params.len() as u64).map_err(io_err)?;
    for (name, shape, value) in ck.params.iter() {
        w.str(name).map_err(io_err)?;
        w.u32(shape.len() as u32).map_err(io_err)?;
        for &dim in shape {
            w.u64(dim as u64).map_err(io_err)?;
        }
        let row: Vec<f64> = value.iter().map(|&x| x as f64).collect();
        w.f64_slice(&row).map_err(io_err)?;
    }

    w.u64(ck.adam.step).map_err(io_err)?;
    for moments in [&ck.adam.m, &ck.adam.v] {
        if moments.len() != ck.params.len() {
            return Err(Error::Invariant(
                "optimizer moments do not align with the parameter store".into(),
            ));
        }
        for m in moments {
            let row: Vec<f64> = m.iter().map(|&x| x as f64).collect();
            w.f64_slice(&row).map_err(io_err)?;
        }
    }

    w.u64(ck.rng_cursors.len() as u64).map_err(io_err)?;
    for (name, pos) in &ck.rng_cursors {
        w.str(name).map_err(io_err)?;
        w.u64((pos >> 64) as u64).map_err(io_err)?;
        w.u64(*pos as u64).map_err(io_err)?;
    }
    w.finish().flush().map_err(io_err)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BinReader::new(BufReader::new(file), path);
    let format_err = |msg: String| Error::Format { path: path.to_path_buf(), msg };
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(format_err(format!("unsupported checkpoint version {version}")));
    }
    let mut config = TrainConfig::default();
    let rendered = r.str()?;
    config
        .apply_text(&rendered, "checkpoint")
        .map_err(|e| format_err(format!("embedded configuration: {e}")))?;
    let next_episode = r.u64()?;
    let has_best = r.u32()?;
    let best_raw = r.f64()?;
    let best_valid_mrr = match has_best {
        0 => None,
        1 => Some(best_raw),
        other => return Err(format_err(format!("bad best-metric flag {other}"))),
    };

    let n_params = r.u64()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..n_params {
        let name = r.str()?;
        let rank = r.u32()? as usize;
        if rank > 3 {
            return Err(format_err(format!("parameter {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let value: Vec<Real> = r.f64_vec(n)?.into_iter().map(|x| x as Real).collect();
        params.add(&name, &shape, value);
    }

    let step = r.u64()?;
    let mut read_moments = || -> Result<Vec<Vec<Real>>> {
        (0..n_params)
            .map(|i| {
                let n = params.value(i).len();
                Ok(r.f64_vec(n)?.into_iter().map(|x| x as Real).collect())
            })
            .collect()
    };
    let m = read_moments()?;
    let v = read_moments()?;
    let adam = AdamState { step, m, v };

    let n_cursors = r.u64()? as usize;
    let mut rng_cursors = Vec::with_capacity(n_cursors);
    for _ in 0..n_cursors {
        let name = r.str()?;
        let hi = r.u64()? as u128;
        let lo = r.u64()? as u128;
        rng_cursors.push((name, (hi << 64) | lo));
    }

    Ok(Checkpoint {
        config,
        params,
        adam,
        next_episode,
        best_valid_mrr,
        rng_cursors,
    })
}
