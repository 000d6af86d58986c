//! Graph classification: a shared encoder over a collection of small
//! graphs, mean readout of node states, a linear softmax head, and
//! 10-fold cross-validation reporting mean and standard deviation of
//! the per-fold validation accuracies.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::RunConfig;
use crate::error::{Error, Result};
use crate::graph::{augment, AugmentedGraph, MultiRelGraph, Split, Triple};
use crate::model::CompGcnModel;
use crate::numeric::{xavier_uniform, Adam, ParamStore, Tape, TensorId};

/// One graph with its label and the map from local node ids to rows of
/// the shared entity table.
pub struct GraphClassItem {
    pub aug: AugmentedGraph,
    pub node_map: Vec<usize>,
    pub label: usize,
}

type RawTriple = (String, String, String);

/// A labeled multi-graph dataset sharing entity and relation vocabularies.
pub struct GraphClassData {
    pub items: Vec<GraphClassItem>,
    pub num_classes: usize,
    pub num_global_entities: usize,
    pub num_aug_relations: usize,
}

impl GraphClassData {
    /// Loads a dataset directory: `index.tsv` lines are
    /// `subdir<TAB>label`; each subdir holds a `train.txt` edge list.
    /// Node and relation names are interned across all graphs.
    pub fn load(dir: &Path) -> Result<Self> {
        let index_path = dir.join("index.tsv");
        let text = std::fs::read_to_string(&index_path)?;
        let mut global_entities: HashMap<String, usize> = HashMap::new();
        let mut global_relations: Vec<String> = Vec::new();
        let mut class_names: Vec<String> = Vec::new();
        let mut raw: Vec<(Vec<RawTriple>, usize)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (sub, label) = match (fields.next(), fields.next(), fields.next()) {
                (Some(s), Some(l), None) => (s, l),
                _ => {
                    return Err(Error::Parse {
                        path: index_path.display().to_string(),
                        line: lineno + 1,
                        msg: "expected `subdir<TAB>label`".into(),
                    })
                }
            };
            let class = match class_names.iter().position(|c| c == label) {
                Some(c) => c,
                None => {
                    class_names.push(label.to_string());
                    class_names.len() - 1
                }
            };
            let edge_path = dir.join(sub).join("train.txt");
            let edges = std::fs::read_to_string(&edge_path)?;
            let mut triples = Vec::new();
            for (el, eline) in edges.lines().enumerate() {
                let eline = eline.trim_end_matches('\r');
                if eline.is_empty() {
                    continue;
                }
                let parts: Vec<&str> = eline.split('\t').collect();
                if parts.len() != 3 {
                    return Err(Error::Parse {
                        path: edge_path.display().to_string(),
                        line: el + 1,
                        msg: "expected `subject<TAB>relation<TAB>object`".into(),
                    });
                }
                triples.push((
                    parts[0].to_string(),
                    parts[1].to_string(),
                    parts[2].to_string(),
                ));
            }
            raw.push((triples, class));
        }
        // global vocabularies in first-appearance order
        for (triples, _) in &raw {
            for (s, r, o) in triples {
                let next = global_entities.len();
                global_entities.entry(s.clone()).or_insert(next);
                let next = global_entities.len();
                global_entities.entry(o.clone()).or_insert(next);
                if !global_relations.contains(r) {
                    global_relations.push(r.clone());
                }
            }
        }
        let mut items = Vec::with_capacity(raw.len());
        for (triples, label) in raw {
            let mut local: HashMap<String, usize> = HashMap::new();
            let mut node_map = Vec::new();
            let mut local_triples = Vec::new();
            for (s, r, o) in &triples {
                for name in [s, o] {
                    if !local.contains_key(name) {
                        local.insert(name.clone(), node_map.len());
                        node_map.push(global_entities[name]);
                    }
                }
                local_triples.push((
                    Triple {
                        subject: local[s],
                        relation: global_relations.iter().position(|x| x == r).unwrap(),
                        object: local[o],
                    },
                    Split::Train,
                ));
            }
            let graph = MultiRelGraph::new(
                node_map.len(),
                global_relations.clone(),
                None,
                local_triples,
            )?;
            items.push(GraphClassItem {
                aug: augment(Arc::new(graph)),
                node_map,
                label,
            });
        }
        let num_aug_relations = 2 * global_relations.len() + 1;
        Ok(GraphClassData {
            items,
            num_classes: class_names.len(),
            num_global_entities: global_entities.len(),
            num_aug_relations,
        })
    }
}

/// `k` disjoint index folds with sizes differing by at most one, stable
/// under the seed.
pub struct FoldSplit {
    folds: Vec<Vec<usize>>,
}

impl FoldSplit {
    pub fn new(n: usize, k: usize, seed: u64) -> Result<Self> {
        if n < k {
            return Err(Error::InvalidArgument(format!(
                "cannot split {n} items into {k} folds"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        let base = n / k;
        let extra = n % k;
        let mut folds = Vec::with_capacity(k);
        let mut start = 0;
        for f in 0..k {
            let size = base + usize::from(f < extra);
            folds.push(idx[start..start + size].to_vec());
            start += size;
        }
        Ok(FoldSplit { folds })
    }

    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }
}

/// Mean readout in canonical node order (ascending global id), so node
/// relabeling inside a graph cannot change the floating-point sum.
pub fn readout_mean(
    tape: &mut Tape,
    node_states: TensorId,
    node_map: &[usize],
) -> Result<TensorId> {
    let mut order: Vec<usize> = (0..node_map.len()).collect();
    order.sort_by_key(|&i| node_map[i]);
    let canonical = tape.gather_rows(node_states, &order)?;
    tape.mean_rows(canonical)
}

/// Per-fold accuracies plus their mean and sample standard deviation.
pub struct GraphClassOutcome {
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

fn fold_accuracy(
    data: &GraphClassData,
    model: &CompGcnModel,
    head: &ParamStore,
    fold: &[usize],
) -> Result<f64> {
    let mut correct = 0usize;
    for &gi in fold {
        let item = &data.items[gi];
        let mut tape = Tape::new();
        let binding = model.bind_frozen(&mut tape);
        let entity_table = binding.id(0);
        let features = tape.gather_rows(entity_table, &item.node_map)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out =
            model.encode_with_features(&mut tape, &binding, &item.aug, features, false, &mut rng)?;
        let pooled = readout_mean(&mut tape, out.nodes, &item.node_map)?;
        let w = head.value(0);
        let row = tape.value(pooled).row(0);
        let mut best_class = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for c in 0..w.rows() {
            let s: f64 = row.iter().zip(w.row(c)).map(|(a, b)| a * b).sum();
            if s > best_score {
                best_score = s;
                best_class = c;
            }
        }
        correct += usize::from(best_class == item.label);
    }
    Ok(correct as f64 / fold.len() as f64)
}

/// Runs 10-fold cross-validation; per fold, trains on the other nine and
/// records the best validation accuracy on the held-out fold.
pub fn train_graph_classification_on(
    data: &GraphClassData,
    cfg: &RunConfig,
    out_dir: Option<&Path>,
) -> Result<GraphClassOutcome> {
    cfg.validate()?;
    if data.items.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "graph classification needs >= 10 graphs, got {}",
            data.items.len()
        )));
    }
    let folds = FoldSplit::new(data.items.len(), 10, cfg.seed)?;
    let mut fold_accuracies = Vec::with_capacity(10);
    for held_out in 0..10 {
        let valid = &folds.folds()[held_out];
        let train: Vec<usize> = (0..10)
            .filter(|&f| f != held_out)
            .flat_map(|f| folds.folds()[f].iter().copied())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(held_out as u64));
        let mut model = CompGcnModel::new(
            cfg.model.clone(),
            data.num_global_entities,
            data.num_aug_relations,
            &mut rng,
        )?;
        let mut head = ParamStore::new();
        head.insert(
            "head.w",
            xavier_uniform((data.num_classes, model.output_dim()), &mut rng)?,
        );
        let mut adam_model = Adam::new(cfg.lr);
        let mut adam_head = Adam::new(cfg.lr);
        let labels: Vec<usize> = train.iter().map(|&gi| data.items[gi].label).collect();

        let mut best_acc = 0.0f64;
        for epoch in 1..=cfg.epochs {
            let mut tape = Tape::new();
            let binding = model.bind(&mut tape);
            let head_id = tape.leaf(head.value(0).clone(), true);
            let entity_table = binding.id(0);
            let mut pooled = Vec::with_capacity(train.len());
            for &gi in &train {
                let item = &data.items[gi];
                let features = tape.gather_rows(entity_table, &item.node_map)?;
                let out = model.encode_with_features(
                    &mut tape, &binding, &item.aug, features, true, &mut rng,
                )?;
                pooled.push(readout_mean(&mut tape, out.nodes, &item.node_map)?);
            }
            let batch = tape.concat_rows(&pooled)?;
            let logits = tape.matmul_nt(batch, head_id)?;
            let loss = tape.softmax_cross_entropy(logits, &labels)?;
            let loss_value = tape.value(loss).scalar_value();
            if !loss_value.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss {loss_value} at fold {held_out} epoch {epoch}"
                )));
            }
            tape.backward(loss)?;
            adam_model.step(model.params_mut(), &binding.collect_grads(&tape));
            adam_head.step(&mut head, &[tape.grad(head_id).cloned()]);

            let acc = fold_accuracy(data, &model, &head, valid)?;
            if acc > best_acc {
                best_acc = acc;
            }
        }
        fold_accuracies.push(best_acc);
    }

    let mean = fold_accuracies.iter().sum::<f64>() / fold_accuracies.len() as f64;
    let var = fold_accuracies
        .iter()
        .map(|a| (a - mean) * (a - mean))
        .sum::<f64>()
        / (fold_accuracies.len() - 1) as f64;
    let std = var.sqrt();

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let mut csv = String::from("fold,accuracy\n");
        for (f, a) in fold_accuracies.iter().enumerate() {
            csv.push_str(&format!("{f},{a}\n"));
        }
        std::fs::write(dir.join("metrics.csv"), csv)?;
        let report = serde_json::json!({
            "fold_accuracies": fold_accuracies,
            "mean": mean,
            "std": std,
        });
        std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
    }

    Ok(GraphClassOutcome {
        fold_accuracies,
        mean,
        std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;

    #[test]
    fn folds_partition_and_balance() {
        let split = FoldSplit::new(23, 10, 7).unwrap();
        let mut seen = [false; 23];
        for fold in split.folds() {
            for &i in fold {
                assert!(!seen[i], "index {i} in two folds");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        let sizes: Vec<usize> = split.folds().iter().map(Vec::len).collect();
        let (min, max) = (
            sizes.iter().min().unwrap(),
            sizes.iter().max().unwrap(),
        );
        assert!(max - min <= 1, "sizes {sizes:?}");
    }

    #[test]
    fn folds_stable_under_seed() {
        let a = FoldSplit::new(30, 10, 42).unwrap();
        let b = FoldSplit::new(30, 10, 42).unwrap();
        assert_eq!(a.folds(), b.folds());
        let c = FoldSplit::new(30, 10, 43).unwrap();
        assert_ne!(a.folds(), c.folds());
    }

    #[test]
    fn too_few_items_rejected() {
        assert!(FoldSplit::new(5, 10, 0).is_err());
    }

    #[test]
    fn readout_of_single_node_graph_is_that_node() {
        let mut tape = Tape::new();
        let states = tape.constant(Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]).unwrap());
        let pooled = readout_mean(&mut tape, states, &[7]).unwrap();
        assert_eq!(tape.value(pooled).data(), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn readout_exactly_permutation_invariant() {
        // same rows, permuted local order, same global ids
        let rows = [vec![0.1, 0.7],
            vec![-0.4, 0.2],
            vec![0.9, -0.3],
            vec![0.05, 0.55]];
        let perm = [2usize, 0, 3, 1];
        let mut tape = Tape::new();
        let base = tape.constant(
            Tensor::matrix(4, 2, rows.iter().flatten().copied().collect()).unwrap(),
        );
        let permuted_rows: Vec<f64> = perm.iter().flat_map(|&i| rows[i].clone()).collect();
        let permuted = tape.constant(Tensor::matrix(4, 2, permuted_rows).unwrap());
        // local node i of the permuted graph is global node perm[i]
        let a = readout_mean(&mut tape, base, &[0, 1, 2, 3]).unwrap();
        let b = readout_mean(&mut tape, permuted, &perm).unwrap();
        assert_eq!(tape.value(a).data(), tape.value(b).data());
    }
}
