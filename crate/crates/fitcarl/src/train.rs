//! Episodic training: per-episode tasks, discounted policy-gradient loss
//! with the concept divergence term, Adam updates, and periodic
//! validation that retains the best parameters.

use std::fmt::Write as _;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::episodes::{derive_queries, sample_task, LpQuery, MetaSplit, OogSplit};
use crate::eval::validation_mrr;
use crate::model::{encode_at, encode_task_entities, init_params, Model, TaskGraph, TaskView};
use crate::pretrain::ComplexEmbedding;
use crate::search::{rollout, QueryContext, Rollout};
use crate::store::EntityId;
use crate::tensor::{stream, AdamConfig, AdamState, GradAccum, ParamStore, Real, Tensor};
use crate::{Error, Result};

/// Discounted sum of one rollout's step terms: at step l the divergence
/// weighted by eta minus the log policy probability weighted by the
/// reward, the whole step scaled by gamma^l.
pub fn rollout_loss(r: &Rollout, gamma: Real, eta: Real) -> Tensor {
    let mut total = Tensor::zeros_const(&[1]);
    let mut discount = 1.0;
    for step in &r.steps {
        let term = step
            .kl
            .scalar_mul(eta)
            .sub(&step.log_pi.mul(&step.reward))
            .scalar_mul(discount);
        total = total.add(&term);
        discount *= gamma;
    }
    total
}

/// Mean rollout loss over every query of an episode.
pub fn episode_loss(rollouts: &[Rollout], gamma: Real, eta: Real) -> Tensor {
    assert!(!rollouts.is_empty(), "episode without rollouts");
    let mut total = Tensor::zeros_const(&[1]);
    for r in rollouts {
        total = total.add(&rollout_loss(r, gamma, eta));
    }
    total.scalar_mul(1.0 / rollouts.len() as Real)
}

fn check_finite(loss: Real, episode: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Runtime(format!(
            "episode {episode}: loss is {loss}; aborting before the parameters are poisoned"
        )))
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy)]
pub struct CurvePoint {
    pub episode: u64,
    pub loss: f64,
    /// Present on validation episodes.
    pub valid_mrr: Option<f64>,
}

/// Renders the curve as `episode,loss,valid_mrr` CSV; the last column is
/// empty on non-validation episodes.
pub fn render_curve(curve: &[CurvePoint]) -> String {
    let mut csv = String::from("episode,loss,valid_mrr\n");
    for p in curve {
        match p.valid_mrr {
            Some(mrr) => writeln!(csv, "{},{:.6},{:.6}", p.episode, p.loss, mrr).unwrap(),
            None => writeln!(csv, "{},{:.6},", p.episode, p.loss).unwrap(),
        }
    }
    csv
}

/// The result of a training run.
pub struct TrainOutcome {
    /// Parameters of the best validation episode (the final state when
    /// validation never ran).
    pub best: Checkpoint,
    /// Parameters after the last episode.
    pub last: Checkpoint,
    pub curve: Vec<CurvePoint>,
}

/// Work order for one query of an episode: the unseen source entity, the
/// episode-wide query index (fixes the rollout stream name), and the
/// query itself.
type QueryJob = (EntityId, usize, LpQuery);

/// Processes a slice of an episode's queries against a private model
/// instance and returns the summed loss value, its gradients, and the
/// query count. Runs on a worker thread; only plain data crosses back.
fn run_chunk(
    split: &OogSplit,
    task: &crate::episodes::EpisodeTask,
    store: &ParamStore,
    cfg: &TrainConfig,
    episode: usize,
    chunk: &[QueryJob],
) -> (f64, GradAccum, usize) {
    let model = Model::build(store, cfg.dims(), cfg.ablations, true);
    let graph = TaskGraph::new(&split.vocabs, &split.background, task);
    let encoded = encode_task_entities(&model, &split.vocabs, task);
    let mut sum = Tensor::zeros_const(&[1]);
    for &(e, qidx, query) in chunk {
        let source_repr = if cfg.source_at_query_time {
            encode_at(&model, &split.vocabs, task, e, query.query_time)
        } else {
            encoded[&e].clone()
        };
        let view = TaskView { model: &model, encoded: &encoded, source: e, source_repr };
        let ctx = QueryContext::new(&model, view, &graph, &split.concepts, query, cfg);
        let mut rng = stream(cfg.seed, &format!("rollout/{episode}/{qidx}"));
        let r = rollout(&ctx, cfg.steps, &mut rng);
        sum = sum.add(&rollout_loss(&r, cfg.gamma, cfg.eta));
    }
    let mut acc = GradAccum::new(store);
    if !chunk.is_empty() {
        let grads = sum.backward();
        acc.accumulate(&grads, &model.leaves, &model.by_id);
    }
    (sum.data()[0] as f64, acc, chunk.len())
}

/// Splits `jobs` into `workers` contiguous chunks of near-equal size.
fn chunks(jobs: &[QueryJob], workers: usize) -> Vec<&[QueryJob]> {
    let workers = workers.clamp(1, jobs.len().max(1));
    let base = jobs.len() / workers;
    let extra = jobs.len() % workers;
    let mut out = Vec::with_capacity(workers);
    let mut start = 0;
    for w in 0..workers {
        let len = base + usize::from(w < extra);
        out.push(&jobs[start..start + len]);
        start += len;
    }
    out
}

/// Runs episodic training on the meta-train set. Every `eval_every`
/// episodes (and after the last one) the validation set is scored with
/// filtered MRR and the best-scoring parameters are retained.
pub fn meta_train(
    split: &OogSplit,
    cfg: &TrainConfig,
    pretrained: Option<&ComplexEmbedding>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut store = init_params(cfg.dims(), &split.vocabs, pretrained, cfg.seed)?;
    let mut adam = AdamState::new(&store);
    let adam_cfg = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let valid_seeds = [cfg.seed];
    let mut curve = Vec::with_capacity(cfg.episodes);
    let mut best: Option<Checkpoint> = None;
    let mut best_mrr = f64::NEG_INFINITY;

    for episode in 0..cfg.episodes {
        let mut task_rng = stream(cfg.seed, &format!("task/{episode}"));
        let task = sample_task(split, MetaSplit::Train, cfg.shots, &mut task_rng)?;
        let mut jobs: Vec<QueryJob> = Vec::new();
        for &e in &task.entities {
            for query in derive_queries(&split.vocabs, &task, e) {
                jobs.push((e, jobs.len(), query));
            }
        }
        if jobs.is_empty() {
            return Err(Error::Invariant(format!(
                "episode {episode}: task has no queries"
            )));
        }

        let parts = chunks(&jobs, cfg.workers);
        let results: Vec<(f64, GradAccum, usize)> = if parts.len() == 1 {
            vec![run_chunk(split, &task, &store, cfg, episode, parts[0])]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = parts
                    .iter()
                    .map(|chunk| {
                        let task = &task;
                        let store = &store;
                        scope.spawn(move || run_chunk(split, task, store, cfg, episode, chunk))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            })
        };

        let total: usize = results.iter().map(|r| r.2).sum();
        let mut merged = GradAccum::new(&store);
        let mut loss_sum = 0.0;
        for (value, acc, _) in results {
            loss_sum += value;
            merged.merge(acc);
        }
        let loss = loss_sum / total as f64;
        check_finite(loss as Real, episode)?;
        merged.scale(1.0 / total as Real);
        adam.step(&mut store, &merged, &adam_cfg);

        let validate = (episode + 1) % cfg.eval_every == 0 || episode + 1 == cfg.episodes;
        let valid_mrr = if validate {
            let mrr = validation_mrr(split, &store, cfg, &valid_seeds)?;
            log::info!("episode {episode}: loss {loss:.6}, valid MRR {mrr:.4}");
            if mrr > best_mrr {
                best_mrr = mrr;
                best = Some(Checkpoint {
                    config: cfg.clone(),
                    params: store.clone(),
                    adam: adam.clone(),
                    next_episode: episode as u64 + 1,
                    best_valid_mrr: Some(mrr),
                    rng_cursors: Vec::new(),
                });
            }
            Some(mrr)
        } else {
            None
        };
        curve.push(CurvePoint { episode: episode as u64, loss, valid_mrr });
    }

    let last = Checkpoint {
        config: cfg.clone(),
        params: store,
        adam,
        next_episode: cfg.episodes as u64,
        best_valid_mrr: (best_mrr.is_finite()).then_some(best_mrr),
        rng_cursors: Vec::new(),
    };
    let best = best.unwrap_or_else(|| last.clone());
    Ok(TrainOutcome { best, last, curve })
}
