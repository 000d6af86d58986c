//! Link-prediction training: full-graph encoding per step, 1-N
//! multi-label queries over train triples in both directions, Adam
//! updates, periodic filtered evaluation on the validation split, and
//! best-validation-MRR checkpointing.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{write_metrics_csv, EpochRow, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, rank_split, EvalReport};
use crate::graph::{augment, load_dir, AugmentedGraph, FilterIndex, MultiRelGraph, Split};
use crate::model::CompGcnModel;
use crate::numeric::{Adam, ParamStore, Tape};
use crate::scoring::{link_prediction_loss, train_queries, TrainTargets};

/// Outcome of one link-prediction run.
pub struct LinkOutcome {
    pub model: CompGcnModel,
    pub history: Vec<EpochRow>,
    /// Best validation report seen, when the valid split is non-empty.
    pub best_valid: Option<EvalReport>,
    /// Test report of the best checkpoint, when the test split is non-empty.
    pub test: Option<EvalReport>,
    pub graph: AugmentedGraph,
    pub filter: FilterIndex,
}

/// Loads the dataset named in the config and trains.
pub fn train_link_prediction(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<LinkOutcome> {
    let report = load_dir(Path::new(&cfg.dataset))?;
    train_link_prediction_on(Arc::new(report.graph), cfg, out_dir)
}

/// Trains on an already-constructed graph. When `out_dir` is given,
/// writes `metrics.csv`, `report.json`, and `model.ckpt` there.
pub fn train_link_prediction_on(
    graph: Arc<MultiRelGraph>,
    cfg: &RunConfig,
    out_dir: Option<&Path>,
) -> Result<LinkOutcome> {
    cfg.validate()?;
    let aug = augment(graph.clone());
    let filter = FilterIndex::build(&graph);
    let targets = TrainTargets::build(&aug);
    let queries = train_queries(&aug);
    if queries.is_empty() {
        return Err(Error::InvalidGraph("no train triples to learn from".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = CompGcnModel::new(
        cfg.model.clone(),
        graph.num_entities(),
        aug.aug_relation_count(),
        &mut rng,
    )?;
    let mut adam = Adam::new(cfg.lr);

    let has_valid = graph.split_size(Split::Valid) > 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, ParamStore, EvalReport)> = None;
    let mut evals_since_best = 0usize;

    let mut order: Vec<usize> = (0..queries.len()).collect();
    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| queries[i]).collect();
            let mut tape = Tape::new();
            let binding = model.bind(&mut tape);
            let out = model.encode(&mut tape, &binding, &aug, true, &mut rng)?;
            let loss = link_prediction_loss(
                &mut tape,
                cfg.score_fn,
                out.nodes,
                out.relations,
                &batch,
                &targets,
                cfg.label_smoothing,
            )?;
            let loss_value = tape.value(loss).scalar_value();
            if !loss_value.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss {loss_value} at epoch {epoch}"
                )));
            }
            tape.backward(loss)?;
            let grads = binding.collect_grads(&tape);
            adam.step(model.params_mut(), &grads);
            loss_sum += loss_value * batch.len() as f64;
        }
        let epoch_loss = loss_sum / queries.len() as f64;

        let mut row = EpochRow {
            epoch,
            loss: epoch_loss,
            valid: None,
        };
        if has_valid && epoch % cfg.eval_every == 0 {
            let (nodes, relations) = model.encode_eval(&aug)?;
            let records = rank_split(&nodes, &relations, &aug, Split::Valid, &filter, cfg.score_fn)?;
            let report = compute_metrics(&records, None)?;
            row.valid = Some(report.overall.clone());
            let mrr = report.overall.mrr;
            let improved = best.as_ref().is_none_or(|(b, _, _)| mrr > *b);
            if improved {
                best = Some((mrr, model.params().clone(), report));
                evals_since_best = 0;
            } else {
                evals_since_best += 1;
                if evals_since_best >= cfg.patience {
                    history.push(row);
                    break 'epochs;
                }
            }
        }
        history.push(row);
    }

    // evaluate the retained checkpoint
    let best_valid = match best {
        Some((_, params, report)) => {
            *model.params_mut() = params;
            Some(report)
        }
        None => None,
    };
    let test = if graph.split_size(Split::Test) > 0 {
        let (nodes, relations) = model.encode_eval(&aug)?;
        let records = rank_split(&nodes, &relations, &aug, Split::Test, &filter, cfg.score_fn)?;
        Some(compute_metrics(&records, None)?)
    } else {
        None
    };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_metrics_csv(&dir.join("metrics.csv"), &history)?;
        model.save_checkpoint(&dir.join("model.ckpt"))?;
        let report = serde_json::json!({
            "best_valid": best_valid,
            "test": test,
        });
        std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
    }

    Ok(LinkOutcome {
        model,
        history,
        best_valid,
        test,
        graph: aug,
        filter,
    })
}
