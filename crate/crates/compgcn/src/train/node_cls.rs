//! Node classification: encoder plus a linear softmax head over final
//! node states, trained with cross entropy on labeled train nodes. A
//! seeded 10% slice of the train labels serves as validation; the best
//! validation model is evaluated on the test labels.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::RunConfig;
use crate::error::{Error, Result};
use crate::graph::{augment, MultiRelGraph, Split};
use crate::model::CompGcnModel;
use crate::numeric::{checkpoint, xavier_uniform, Adam, ParamStore, Tape, Tensor};

/// Class labels for a subset of entities. `split` is train or test;
/// validation is carved from train at run time.
#[derive(Debug, Clone)]
pub struct LabeledNodes {
    pub labels: Vec<(usize, usize, Split)>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
}

impl LabeledNodes {
    /// Parses `labels.tsv`: `entity<TAB>class[<TAB>split]`, split in
    /// {train, test}, defaulting to train. Entities resolve through the
    /// graph's name table when present, else as numeric ids.
    pub fn load(path: &Path, graph: &MultiRelGraph) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut class_names: Vec<String> = Vec::new();
        let mut labels = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 2 || fields.len() > 3 {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: "expected `entity<TAB>class[<TAB>split]`".into(),
                });
            }
            let entity = match graph.entity_names() {
                Some(names) => names.iter().position(|n| n == fields[0]),
                None => fields[0].parse::<usize>().ok(),
            }
            .ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("unknown entity {}", fields[0]),
            })?;
            let class = match class_names.iter().position(|c| c == fields[1]) {
                Some(c) => c,
                None => {
                    class_names.push(fields[1].to_string());
                    class_names.len() - 1
                }
            };
            let split = match fields.get(2).copied().unwrap_or("train") {
                "train" => Split::Train,
                "test" => Split::Test,
                other => {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: lineno + 1,
                        msg: format!("unknown split {other}"),
                    })
                }
            };
            labels.push((entity, class, split));
        }
        Ok(LabeledNodes {
            num_classes: class_names.len(),
            class_names,
            labels,
        })
    }
}

/// Outcome of a node-classification run.
pub struct NodeClassOutcome {
    pub model: CompGcnModel,
    pub head: ParamStore,
    pub best_valid_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    /// (epoch, loss, valid accuracy when evaluated)
    pub history: Vec<(usize, f64, Option<f64>)>,
}

/// Argmax class per node row against the head weights, lowest class id
/// winning ties; returns the fraction correct.
fn accuracy(nodes: &Tensor, head_w: &Tensor, labeled: &[(usize, usize)]) -> f64 {
    if labeled.is_empty() {
        return 0.0;
    }
    let d = nodes.cols();
    let classes = head_w.rows();
    let mut correct = 0usize;
    for &(entity, gold) in labeled {
        let row = nodes.row(entity);
        let mut best_class = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for c in 0..classes {
            let w = head_w.row(c);
            let mut s = 0.0;
            for j in 0..d {
                s += row[j] * w[j];
            }
            if s > best_score {
                best_score = s;
                best_class = c;
            }
        }
        correct += usize::from(best_class == gold);
    }
    correct as f64 / labeled.len() as f64
}

/// Trains on an in-memory graph and label set. When `out_dir` is given,
/// writes `metrics.csv`, `report.json`, and `model.ckpt`.
pub fn train_node_classification_on(
    graph: Arc<MultiRelGraph>,
    labeled: &LabeledNodes,
    cfg: &RunConfig,
    out_dir: Option<&Path>,
) -> Result<NodeClassOutcome> {
    cfg.validate()?;
    let aug = augment(graph.clone());
    let train_all: Vec<(usize, usize)> = labeled
        .labels
        .iter()
        .filter(|(_, _, s)| *s == Split::Train)
        .map(|&(e, c, _)| (e, c))
        .collect();
    let test: Vec<(usize, usize)> = labeled
        .labels
        .iter()
        .filter(|(_, _, s)| *s == Split::Test)
        .map(|&(e, c, _)| (e, c))
        .collect();
    if train_all.is_empty() {
        return Err(Error::InvalidArgument("no labeled train nodes".into()));
    }
    if labeled.num_classes == 0 {
        return Err(Error::InvalidArgument("no classes".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = CompGcnModel::new(
        cfg.model.clone(),
        graph.num_entities(),
        aug.aug_relation_count(),
        &mut rng,
    )?;
    let mut head = ParamStore::new();
    head.insert(
        "head.w",
        xavier_uniform((labeled.num_classes, model.output_dim()), &mut rng)?,
    );

    // 10% of train labels become validation
    let mut idx: Vec<usize> = (0..train_all.len()).collect();
    idx.shuffle(&mut rng);
    let n_valid = if train_all.len() >= 10 {
        train_all.len() / 10
    } else {
        usize::from(train_all.len() > 1)
    };
    let valid: Vec<(usize, usize)> = idx[..n_valid].iter().map(|&i| train_all[i]).collect();
    let train: Vec<(usize, usize)> = idx[n_valid..].iter().map(|&i| train_all[i]).collect();

    let train_entities: Vec<usize> = train.iter().map(|&(e, _)| e).collect();
    let train_classes: Vec<usize> = train.iter().map(|&(_, c)| c).collect();

    let mut adam_model = Adam::new(cfg.lr);
    let mut adam_head = Adam::new(cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, ParamStore, ParamStore)> = None;
    let mut evals_since_best = 0usize;

    'epochs: for epoch in 1..=cfg.epochs {
        let mut tape = Tape::new();
        let binding = model.bind(&mut tape);
        let head_id = tape.leaf(head.value(0).clone(), head.is_trainable(0));
        let out = model.encode(&mut tape, &binding, &aug, true, &mut rng)?;
        let rows = tape.gather_rows(out.nodes, &train_entities)?;
        let logits = tape.matmul_nt(rows, head_id)?;
        let loss = tape.softmax_cross_entropy(logits, &train_classes)?;
        let loss_value = tape.value(loss).scalar_value();
        if !loss_value.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite loss {loss_value} at epoch {epoch}"
            )));
        }
        tape.backward(loss)?;
        adam_model.step(model.params_mut(), &binding.collect_grads(&tape));
        adam_head.step(&mut head, &[tape.grad(head_id).cloned()]);

        let mut valid_acc = None;
        if !valid.is_empty() && epoch % cfg.eval_every == 0 {
            let (nodes, _) = model.encode_eval(&aug)?;
            let acc = accuracy(&nodes, head.value(0), &valid);
            valid_acc = Some(acc);
            let improved = best.as_ref().is_none_or(|(b, _, _)| acc > *b);
            if improved {
                best = Some((acc, model.params().clone(), head.clone()));
                evals_since_best = 0;
            } else {
                evals_since_best += 1;
                if evals_since_best >= cfg.patience {
                    history.push((epoch, loss_value, valid_acc));
                    break 'epochs;
                }
            }
        }
        history.push((epoch, loss_value, valid_acc));
    }

    let best_valid_accuracy = best.as_ref().map(|(acc, _, _)| *acc);
    if let Some((_, params, head_params)) = best {
        *model.params_mut() = params;
        head = head_params;
    }
    let test_accuracy = if test.is_empty() {
        None
    } else {
        let (nodes, _) = model.encode_eval(&aug)?;
        Some(accuracy(&nodes, head.value(0), &test))
    };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let mut csv = String::from("epoch,loss,valid_accuracy\n");
        for (epoch, loss, acc) in &history {
            match acc {
                Some(a) => csv.push_str(&format!("{epoch},{loss},{a}\n")),
                None => csv.push_str(&format!("{epoch},{loss},\n")),
            }
        }
        std::fs::write(dir.join("metrics.csv"), csv)?;
        let arrays: Vec<(&str, &Tensor)> = model
            .params()
            .iter()
            .chain(head.iter())
            .collect();
        checkpoint::save(&dir.join("model.ckpt"), &arrays)?;
        let report = serde_json::json!({
            "best_valid_accuracy": best_valid_accuracy,
            "test_accuracy": test_accuracy,
        });
        std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
    }

    Ok(NodeClassOutcome {
        model,
        head,
        best_valid_accuracy,
        test_accuracy,
        history,
    })
}
