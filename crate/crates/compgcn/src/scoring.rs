//! Decoder score functions over encoded embeddings, 1-vs-all candidate
//! scoring, and the multi-label training loss for link prediction.
//!
//! Queries run in both directions: `(s, r)` predicts objects and
//! `(o, r⁻¹)` predicts subjects, sharing the encoder's inverse-relation
//! embeddings. Training targets come from the train split only.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AugmentedGraph, Split};
use crate::numeric::{Tape, Tensor, TensorId};

/// Norm used inside the translational score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranseNorm {
    L1,
    L2,
}

/// Score is a scalar; higher means more plausible for both functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
#[derive(Default)]
pub enum ScoreFn {
    /// `-||h_s + h_r - h_o||`, margin-free distance as a logit.
    Transe { norm: TranseNorm },
    /// `Σ_i h_s[i] · h_r[i] · h_o[i]`.
    #[default]
    Distmult,
}


/// Scores one triple from plain embedding slices.
pub fn score(f: ScoreFn, h_s: &[f64], h_r: &[f64], h_o: &[f64]) -> Result<f64> {
    if h_s.len() != h_r.len() || h_s.len() != h_o.len() {
        return Err(Error::ShapeMismatch {
            op: "score",
            lhs: vec![h_s.len(), h_r.len()],
            rhs: vec![h_o.len()],
        });
    }
    Ok(match f {
        ScoreFn::Transe { norm } => {
            let mut acc = 0.0;
            for i in 0..h_s.len() {
                let diff = h_s[i] + h_r[i] - h_o[i];
                match norm {
                    TranseNorm::L1 => acc += diff.abs(),
                    TranseNorm::L2 => acc += diff * diff,
                }
            }
            match norm {
                TranseNorm::L1 => -acc,
                TranseNorm::L2 => -acc.sqrt(),
            }
        }
        ScoreFn::Distmult => h_s
            .iter()
            .zip(h_r)
            .zip(h_o)
            .map(|((s, r), o)| s * r * o)
            .sum(),
    })
}

/// Scores a query against every row of the entity matrix; entry `v`
/// equals `score(f, h_s, h_r, entities.row(v))`.
pub fn score_all_objects(
    f: ScoreFn,
    h_s: &[f64],
    h_r: &[f64],
    entities: &Tensor,
) -> Result<Vec<f64>> {
    (0..entities.rows())
        .map(|v| score(f, h_s, h_r, entities.row(v)))
        .collect()
}

/// A directed link-prediction query: rank all entities as the missing
/// endpoint for `(source, aug_relation, ?)`. Head prediction uses the
/// inverse relation id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LinkQuery {
    pub source: usize,
    pub aug_relation: usize,
}

/// Tape-side 1-vs-all scores for a batch of queries: `batch x |V|` logits.
pub fn score_queries(
    tape: &mut Tape,
    f: ScoreFn,
    nodes: TensorId,
    relations: TensorId,
    queries: &[LinkQuery],
) -> Result<TensorId> {
    if queries.is_empty() {
        return Err(Error::InvalidArgument("empty query batch".into()));
    }
    let sources: Vec<usize> = queries.iter().map(|q| q.source).collect();
    let rels: Vec<usize> = queries.iter().map(|q| q.aug_relation).collect();
    let h_s = tape.gather_rows(nodes, &sources)?;
    let h_r = tape.gather_rows(relations, &rels)?;
    match f {
        ScoreFn::Distmult => {
            // (h_s ⊙ h_r) · Hᵀ
            let prod = tape.mul(h_s, h_r)?;
            tape.matmul_nt(prod, nodes)
        }
        ScoreFn::Transe { norm } => {
            let q = tape.add(h_s, h_r)?;
            tape.transe_scores(q, nodes, norm == TranseNorm::L2)
        }
    }
}

/// Train-split gold targets per `(source, aug_relation)` query, both
/// directions. Target lists are sorted and deduplicated.
#[derive(Debug, Clone, Default)]
pub struct TrainTargets {
    map: HashMap<(usize, usize), Vec<usize>>,
}

impl TrainTargets {
    pub fn build(graph: &AugmentedGraph) -> Self {
        let mut map: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for t in graph.base().split_triples(Split::Train) {
            map.entry((t.subject, t.relation)).or_default().push(t.object);
            map.entry((t.object, graph.inverse_relation(t.relation)))
                .or_default()
                .push(t.subject);
        }
        for v in map.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        TrainTargets { map }
    }

    pub fn targets(&self, q: LinkQuery) -> &[usize] {
        self.map
            .get(&(q.source, q.aug_relation))
            .map_or(&[], Vec::as_slice)
    }
}

/// One query per train triple per direction, in triple order.
pub fn train_queries(graph: &AugmentedGraph) -> Vec<LinkQuery> {
    let mut queries = Vec::with_capacity(2 * graph.base().split_size(Split::Train));
    for t in graph.base().split_triples(Split::Train) {
        queries.push(LinkQuery {
            source: t.subject,
            aug_relation: t.relation,
        });
        queries.push(LinkQuery {
            source: t.object,
            aug_relation: graph.inverse_relation(t.relation),
        });
    }
    queries
}

/// Binary cross entropy with label smoothing over 1-vs-all logits: every
/// train-split true endpoint of each query is a positive.
pub fn link_prediction_loss(
    tape: &mut Tape,
    f: ScoreFn,
    nodes: TensorId,
    relations: TensorId,
    queries: &[LinkQuery],
    targets: &TrainTargets,
    eps: f64,
) -> Result<TensorId> {
    let num_rel = tape.value(relations).rows();
    for q in queries {
        if q.aug_relation >= num_rel {
            return Err(Error::InvalidArgument(format!(
                "query relation {} out of range ({num_rel} augmented relations)",
                q.aug_relation
            )));
        }
    }
    let logits = score_queries(tape, f, nodes, relations, queries)?;
    let num_entities = tape.value(logits).cols();
    let mut labels = vec![0.0; queries.len() * num_entities];
    for (i, q) in queries.iter().enumerate() {
        for &gold in targets.targets(*q) {
            labels[i * num_entities + gold] = 1.0;
        }
    }
    tape.bce_with_label_smoothing(logits, &labels, eps)
}
