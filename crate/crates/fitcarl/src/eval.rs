//! Filtered ranking evaluation: beam-search every query of a meta set,
//! rank candidate answers, and report MRR and Hits@k averaged over
//! support resampling seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::episodes::{derive_queries, sample_task, LpQuery, MetaSplit, OogSplit};
use crate::model::{encode_at, encode_task_entities, Model, TaskGraph, TaskView};
use crate::search::{beam_search, greedy_trace, QueryContext};
use crate::store::EntityId;
use crate::tensor::{stream, ParamStore, Real};
use crate::Result;

/// Ranking metrics of one support resampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub queries: usize,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

/// One evaluated query and the filtered rank its answer reached
/// (`None` when the beam never surfaced the answer).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub seed: u64,
    pub source: EntityId,
    pub relation: u32,
    pub query_time: i64,
    pub answer: EntityId,
    pub rank: Option<usize>,
}

/// Full evaluation result: per-seed metrics, their means, and the raw
/// per-query outcomes for downstream slicing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub seeds: Vec<u64>,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub per_seed: Vec<SeedMetrics>,
    pub outcomes: Vec<QueryOutcome>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Rank of the answer in a scored candidate list under the filtered
/// setting: candidates other than the answer that restate a fact known
/// anywhere in the split are skipped before counting. `None` when the
/// answer is absent from the list.
pub fn filtered_rank(
    ranked: &[(EntityId, Real)],
    split: &OogSplit,
    query: &LpQuery,
) -> Option<usize> {
    let mut rank = 0usize;
    for &(e, _) in ranked {
        if e == query.answer {
            return Some(rank + 1);
        }
        if !split.is_known(query.source, query.relation, e, query.query_time) {
            rank += 1;
        }
    }
    None
}

/// Evaluates the parameters on one meta set. Each seed resamples which
/// facts act as support; queries are the remaining facts. Metrics are
/// averaged first within a seed, then across seeds.
pub fn evaluate(
    split: &OogSplit,
    params: &ParamStore,
    cfg: &TrainConfig,
    which: MetaSplit,
    seeds: &[u64],
) -> Result<EvalReport> {
    assert!(!seeds.is_empty(), "need at least one evaluation seed");
    let model = Model::build(params, cfg.dims(), cfg.ablations, false);
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut outcomes = Vec::new();
    for &seed in seeds {
        let mut rng = stream(seed, "eval/task");
        let task = sample_task(split, which, cfg.shots, &mut rng)?;
        let graph = TaskGraph::new(&split.vocabs, &split.background, &task);
        let encoded = encode_task_entities(&model, &split.vocabs, &task);
        let mut sum_rr = 0.0;
        let mut hits = [0usize; 3];
        let mut n = 0usize;
        for &e in &task.entities {
            for (qi, query) in derive_queries(&split.vocabs, &task, e).into_iter().enumerate() {
                let source_repr = if cfg.source_at_query_time {
                    encode_at(&model, &split.vocabs, &task, e, query.query_time)
                } else {
                    encoded[&e].clone()
                };
                let view = TaskView { model: &model, encoded: &encoded, source: e, source_repr };
                let ctx =
                    QueryContext::new(&model, view, &graph, &split.concepts, query, cfg);
                let mut qrng = stream(seed, &format!("eval/beam/{e}/{qi}"));
                let ranked = beam_search(
                    &ctx,
                    cfg.steps,
                    cfg.beam,
                    cfg.sum_endpoint_scores,
                    &mut qrng,
                );
                let rank = filtered_rank(&ranked, split, &query);
                if let Some(r) = rank {
                    sum_rr += 1.0 / r as f64;
                    for (slot, threshold) in hits.iter_mut().zip([1, 3, 10]) {
                        if r <= threshold {
                            *slot += 1;
                        }
                    }
                }
                outcomes.push(QueryOutcome {
                    seed,
                    source: query.source,
                    relation: query.relation,
                    query_time: query.query_time,
                    answer: query.answer,
                    rank,
                });
                n += 1;
            }
        }
        let denom = n.max(1) as f64;
        per_seed.push(SeedMetrics {
            seed,
            queries: n,
            mrr: sum_rr / denom,
            hits1: hits[0] as f64 / denom,
            hits3: hits[1] as f64 / denom,
            hits10: hits[2] as f64 / denom,
        });
    }
    let k = per_seed.len() as f64;
    let mean = |f: fn(&SeedMetrics) -> f64| per_seed.iter().map(f).sum::<f64>() / k;
    Ok(EvalReport {
        split: which.name().to_string(),
        seeds: seeds.to_vec(),
        mrr: mean(|m| m.mrr),
        hits1: mean(|m| m.hits1),
        hits3: mean(|m| m.hits3),
        hits10: mean(|m| m.hits10),
        per_seed,
        outcomes,
    })
}

/// Convenience for the training loop: mean filtered MRR over the given
/// seeds, nothing else retained.
pub fn validation_mrr(
    split: &OogSplit,
    params: &ParamStore,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<f64> {
    Ok(evaluate(split, params, cfg, MetaSplit::Valid, seeds)?.mrr)
}

/// Time bucket width for [`bucket_by_time`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BucketWidth {
    Month,
    Year,
}

/// Aggregates query outcomes into calendar buckets and renders a
/// `bucket,mrr,count` CSV, buckets ascending. Needs the split's epoch to
/// place day offsets on the calendar; buckets without queries are absent.
pub fn bucket_by_time(
    outcomes: &[QueryOutcome],
    width: BucketWidth,
    epoch: NaiveDate,
) -> String {
    let mut buckets: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for out in outcomes {
        let date = epoch + Duration::days(out.query_time);
        let label = match width {
            BucketWidth::Month => format!("{:04}-{:02}", date.year(), date.month()),
            BucketWidth::Year => format!("{:04}", date.year()),
        };
        let slot = buckets.entry(label).or_insert((0.0, 0));
        slot.0 += out.rank.map_or(0.0, |r| 1.0 / r as f64);
        slot.1 += 1;
    }
    let mut csv = String::from("bucket,mrr,count\n");
    for (label, (sum_rr, count)) in buckets {
        writeln!(csv, "{label},{:.6},{count}", sum_rr / count as f64).unwrap();
    }
    csv
}

/// Greedy-decodes up to `limit` queries of one meta set and renders the
/// walked paths, one block per query.
pub fn explain(
    split: &OogSplit,
    params: &ParamStore,
    cfg: &TrainConfig,
    which: MetaSplit,
    seed: u64,
    limit: usize,
) -> Result<String> {
    let model = Model::build(params, cfg.dims(), cfg.ablations, false);
    let mut rng = stream(seed, "eval/task");
    let task = sample_task(split, which, cfg.shots, &mut rng)?;
    let graph = TaskGraph::new(&split.vocabs, &split.background, &task);
    let encoded = encode_task_entities(&model, &split.vocabs, &task);
    let mut text = String::new();
    let mut shown = 0usize;
    'outer: for &e in &task.entities {
        for (qi, query) in derive_queries(&split.vocabs, &task, e).into_iter().enumerate() {
            if shown == limit {
                break 'outer;
            }
            let source_repr = if cfg.source_at_query_time {
                encode_at(&model, &split.vocabs, &task, e, query.query_time)
            } else {
                encoded[&e].clone()
            };
            let view = TaskView { model: &model, encoded: &encoded, source: e, source_repr };
            let ctx = QueryContext::new(&model, view, &graph, &split.concepts, query, cfg);
            let mut qrng = stream(seed, &format!("eval/trace/{e}/{qi}"));
            let trace = greedy_trace(&ctx, cfg.steps, &mut qrng);
            let reached = trace.hops.last().map(|h| h.entity);
            writeln!(
                text,
                "query: ({}, {}, ?, {})  expected: {}  reached: {}",
                split.vocabs.entities.name(query.source),
                split.vocabs.relations.display(query.relation),
                split.vocabs.time_display(query.query_time),
                split.vocabs.entities.name(query.answer),
                reached.map_or_else(|| "-".to_string(), |r| split.vocabs.entities.name(r).to_string()),
            )
            .unwrap();
            text.push_str(&trace.render(&split.vocabs));
            text.push('\n');
            shown += 1;
        }
    }
    Ok(text)
}
