//! Pruning a graph to its most frequent relations.

use super::{MultiRelGraph, Split, Triple};
use crate::error::{Error, Result};

/// Keeps only triples (all splits) whose relation is among the `m` most
/// frequent by train-split count; frequency ties break by ascending
/// original relation id. Relation and entity ids are re-compacted in
/// original-id order; entities not incident to any surviving triple are
/// dropped.
pub fn prune_top_relations(g: &MultiRelGraph, m: usize) -> Result<MultiRelGraph> {
    if m == 0 {
        return Err(Error::InvalidArgument(
            "prune_top_relations requires m >= 1".into(),
        ));
    }
    if m > g.num_relations() {
        return Err(Error::InvalidArgument(format!(
            "m = {m} exceeds relation count {}",
            g.num_relations()
        )));
    }
    let mut counts = vec![0usize; g.num_relations()];
    for t in g.split_triples(Split::Train) {
        counts[t.relation] += 1;
    }
    let mut order: Vec<usize> = (0..g.num_relations()).collect();
    order.sort_by_key(|&r| (std::cmp::Reverse(counts[r]), r));
    let mut keep = vec![false; g.num_relations()];
    for &r in order.iter().take(m) {
        keep[r] = true;
    }

    // survivors keep their relative original order
    let mut rel_map = vec![usize::MAX; g.num_relations()];
    let mut relations = Vec::with_capacity(m);
    for r in 0..g.num_relations() {
        if keep[r] {
            rel_map[r] = relations.len();
            relations.push(g.relations()[r].clone());
        }
    }

    let mut entity_seen = vec![false; g.num_entities()];
    let surviving: Vec<(Triple, Split)> = g
        .triples()
        .filter(|(t, _)| keep[t.relation])
        .inspect(|(t, _)| {
            entity_seen[t.subject] = true;
            entity_seen[t.object] = true;
        })
        .collect();

    let mut ent_map = vec![usize::MAX; g.num_entities()];
    let mut num_entities = 0;
    let mut entity_names = g.entity_names().map(|_| Vec::new());
    for e in 0..g.num_entities() {
        if entity_seen[e] {
            ent_map[e] = num_entities;
            num_entities += 1;
            if let (Some(out), Some(names)) = (entity_names.as_mut(), g.entity_names()) {
                out.push(names[e].clone());
            }
        }
    }

    let triples = surviving
        .into_iter()
        .map(|(t, s)| {
            (
                Triple {
                    subject: ent_map[t.subject],
                    relation: rel_map[t.relation],
                    object: ent_map[t.object],
                },
                s,
            )
        })
        .collect();
    MultiRelGraph::new(num_entities, relations, entity_names, triples)
}
