//! Deterministic synthetic datasets for desk-scale experiments and the
//! acceptance suite.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{augment, MultiRelGraph, Split, Triple};
use crate::train::graph_cls::{GraphClassData, GraphClassItem};
use crate::train::node_cls::LabeledNodes;

/// A knowledge graph with the compositional rule `r2 = r0 ∘ r1` where
/// edge direction carries the signal. Entities split into banks A, B, C:
/// every `b` has one `r1` edge to its own `c`, and every `a` holds two
/// outgoing `r0` edges (to `out` nodes in B) and two incoming `r3` edges
/// (from `in` nodes). `r2` holds exactly the compositions through the
/// outgoing legs, `(a, r2, c(out))`. With inverse edges added for message
/// passing, in- and out-neighbors look identical to any direction- and
/// relation-agnostic encoder, so the decoy targets `c(in)` are
/// indistinguishable from gold without relation-aware composition.
/// Every relation is bipartite across banks, which keeps the train split
/// free of the symmetric-scorer mirror artifact.
///
/// The `holdout` fraction applies to A entities: a held-out entity keeps
/// none of its `r2` facts in train, which removes any co-occurrence
/// signal the decoder alone could exploit.
const LEGS_PER_SIDE: usize = 2;

pub fn compositional_kg(num_entities: usize, seed: u64, holdout: f64) -> MultiRelGraph {
    assert!(num_entities >= 14, "need at least 14 entities");
    assert!((0.0..1.0).contains(&holdout));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bc = (num_entities - (2 * num_entities) / 5) / 2;
    let a_count = num_entities - 2 * bc;
    let bank_a: Vec<usize> = (0..a_count).collect();
    let bank_b: Vec<usize> = (a_count..a_count + bc).collect();
    let bank_c: Vec<usize> = (a_count + bc..num_entities).collect();
    assert!(bc >= 2 * LEGS_PER_SIDE, "need enough B entities for the legs");

    let mut triples: Vec<(Triple, Split)> = Vec::new();
    let mut push = |s: usize, r: usize, o: usize, split: Split| {
        triples.push((
            Triple {
                subject: s,
                relation: r,
                object: o,
            },
            split,
        ))
    };

    // one second-leg edge per b, to its paired c
    let c_of = |b: usize| -> usize { bank_c[b - a_count] };
    for &b in &bank_b {
        push(b, 1, c_of(b), Split::Train);
    }

    // held-out subjects keep no composed facts in train
    let mut test_subjects: Vec<usize> = bank_a.clone();
    test_subjects.shuffle(&mut rng);
    let n_test = ((bank_a.len() as f64) * holdout).floor() as usize;
    test_subjects.truncate(n_test);

    for &a in &bank_a {
        let mut slots: Vec<usize> = bank_b.clone();
        slots.shuffle(&mut rng);
        let legs = LEGS_PER_SIDE;
        let (outs, ins) = (&slots[..legs], &slots[legs..2 * legs]);
        for (&out_b, &in_b) in outs.iter().zip(ins) {
            push(a, 0, out_b, Split::Train);
            push(in_b, 3, a, Split::Train);
        }
        let split = if test_subjects.contains(&a) {
            Split::Test
        } else {
            Split::Train
        };
        for &out_b in outs {
            push(a, 2, c_of(out_b), split);
        }
    }
    MultiRelGraph::new(
        num_entities,
        vec![
            "first_leg".into(),
            "second_leg".into(),
            "shortcut".into(),
            "first_leg_in".into(),
        ],
        None,
        triples,
    )
    .expect("construction is valid")
}

/// Two node clusters, each wired to its own hub entity. Labels are the
/// cluster ids; roughly 30% of each cluster is held out as test.
pub fn two_cluster_graph(nodes_per_cluster: usize, seed: u64) -> (MultiRelGraph, LabeledNodes) {
    assert!(nodes_per_cluster >= 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = nodes_per_cluster;
    let hub0 = 2 * n;
    let hub1 = 2 * n + 1;
    let mut triples = Vec::new();
    for v in 0..n {
        triples.push((Triple { subject: v, relation: 0, object: hub0 }, Split::Train));
    }
    for v in n..2 * n {
        triples.push((Triple { subject: v, relation: 0, object: hub1 }, Split::Train));
    }
    // sparse intra-cluster texture
    let mut seen = HashSet::new();
    for cluster in 0..2usize {
        let lo = cluster * n;
        for _ in 0..n / 2 {
            let s = lo + rng.gen_range(0..n);
            let o = lo + rng.gen_range(0..n);
            if s != o && seen.insert((s, o)) {
                triples.push((Triple { subject: s, relation: 1, object: o }, Split::Train));
            }
        }
    }
    let graph = MultiRelGraph::new(
        2 * n + 2,
        vec!["to_hub".into(), "peer".into()],
        None,
        triples,
    )
    .expect("construction is valid");

    let mut labels = Vec::new();
    for cluster in 0..2usize {
        let lo = cluster * n;
        let mut ids: Vec<usize> = (lo..lo + n).collect();
        ids.shuffle(&mut rng);
        let n_test = (n * 3) / 10;
        for (i, &v) in ids.iter().enumerate() {
            let split = if i < n_test { Split::Test } else { Split::Train };
            labels.push((v, cluster, split));
        }
    }
    labels.sort_unstable_by_key(|&(e, c, _)| (e, c));
    (
        graph,
        LabeledNodes {
            labels,
            num_classes: 2,
            class_names: vec!["cluster0".into(), "cluster1".into()],
        },
    )
}

/// Graph-classification dataset whose label is "contains an `r1` edge".
/// All graphs share a small node vocabulary; positives carry one or two
/// `r1` edges on top of the common `r0` wiring.
pub fn relation_presence_graphs(num_graphs: usize, seed: u64) -> GraphClassData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes_per_graph = 6usize;
    let relations = vec!["r0".to_string(), "r1".to_string()];
    let mut items = Vec::with_capacity(num_graphs);
    for g in 0..num_graphs {
        let positive = g % 2 == 1;
        let mut edges = HashSet::new();
        while edges.len() < 5 {
            let s = rng.gen_range(0..nodes_per_graph);
            let o = rng.gen_range(0..nodes_per_graph);
            if s != o {
                edges.insert((s, 0usize, o));
            }
        }
        if positive {
            let extra = 1 + rng.gen_range(0..2usize);
            let mut added = 0;
            while added < extra {
                let s = rng.gen_range(0..nodes_per_graph);
                let o = rng.gen_range(0..nodes_per_graph);
                if s != o && edges.insert((s, 1usize, o)) {
                    added += 1;
                }
            }
        }
        let mut sorted: Vec<_> = edges.into_iter().collect();
        sorted.sort_unstable();
        let triples = sorted
            .into_iter()
            .map(|(s, r, o)| {
                (
                    Triple {
                        subject: s,
                        relation: r,
                        object: o,
                    },
                    Split::Train,
                )
            })
            .collect();
        let graph = MultiRelGraph::new(nodes_per_graph, relations.clone(), None, triples)
            .expect("construction is valid");
        items.push(GraphClassItem {
            aug: augment(Arc::new(graph)),
            node_map: (0..nodes_per_graph).collect(),
            label: usize::from(positive),
        });
    }
    GraphClassData {
        items,
        num_classes: 2,
        num_global_entities: nodes_per_graph,
        num_aug_relations: 2 * relations.len() + 1,
    }
}

/// Uniform random knowledge graph, all triples in the train split,
/// deduplicated, every entity guaranteed at least one incident triple
/// attempt (isolated entities may remain and only carry self-loops).
pub fn random_kg(
    num_entities: usize,
    num_relations: usize,
    num_triples: usize,
    seed: u64,
) -> MultiRelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = HashSet::new();
    let mut attempts = 0;
    while set.len() < num_triples && attempts < num_triples * 20 {
        attempts += 1;
        let s = rng.gen_range(0..num_entities);
        let o = rng.gen_range(0..num_entities);
        let r = rng.gen_range(0..num_relations);
        if s != o {
            set.insert((s, r, o));
        }
    }
    let mut sorted: Vec<_> = set.into_iter().collect();
    sorted.sort_unstable();
    let triples = sorted
        .into_iter()
        .map(|(s, r, o)| {
            (
                Triple {
                    subject: s,
                    relation: r,
                    object: o,
                },
                Split::Train,
            )
        })
        .collect();
    let relations = (0..num_relations).map(|r| format!("r{r}")).collect();
    MultiRelGraph::new(num_entities, relations, None, triples).expect("construction is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compositional_kg_is_deterministic() {
        let a = compositional_kg(20, 5, 0.2);
        let b = compositional_kg(20, 5, 0.2);
        let ta: Vec<_> = a.triples().collect();
        let tb: Vec<_> = b.triples().collect();
        assert_eq!(ta, tb);
    }

    #[test]
    fn compositional_rule_holds() {
        let g = compositional_kg(20, 1, 0.2);
        let r0: HashSet<(usize, usize)> = g
            .triples()
            .filter(|(t, _)| t.relation == 0)
            .map(|(t, _)| (t.subject, t.object))
            .collect();
        let r1: HashSet<(usize, usize)> = g
            .triples()
            .filter(|(t, _)| t.relation == 1)
            .map(|(t, _)| (t.subject, t.object))
            .collect();
        // every r2 pair is a composition of some r0 and r1 edge
        for (t, _) in g.triples().filter(|(t, _)| t.relation == 2) {
            let composed = r0
                .iter()
                .any(|&(a, b)| a == t.subject && r1.contains(&(b, t.object)));
            assert!(composed, "({}, r2, {}) not composed", t.subject, t.object);
        }
        assert!(g.split_size(Split::Test) > 0);
    }

    #[test]
    fn cluster_labels_cover_both_classes() {
        let (_, labels) = two_cluster_graph(8, 3);
        assert_eq!(labels.num_classes, 2);
        assert!(labels.labels.iter().any(|&(_, c, _)| c == 0));
        assert!(labels.labels.iter().any(|&(_, c, _)| c == 1));
        assert!(labels
            .labels
            .iter()
            .any(|&(_, _, s)| s == Split::Test));
    }

    #[test]
    fn presence_labels_match_edges() {
        let data = relation_presence_graphs(12, 9);
        assert_eq!(data.items.len(), 12);
        for item in &data.items {
            let has_r1 = item
                .aug
                .base()
                .triples()
                .any(|(t, _)| t.relation == 1);
            assert_eq!(usize::from(has_r1), item.label);
        }
    }
}
