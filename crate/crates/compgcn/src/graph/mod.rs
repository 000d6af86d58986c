//! Multi-relational graphs: loading, validation, inverse/self-loop
//! augmentation, relation pruning and categorization, and the filtered
//! candidate index used by ranking evaluation.
//!
//! All structures are immutable after construction and safe to share
//! across threads read-only.

pub mod categories;
pub mod filter;
pub mod load;
pub mod prune;

use std::collections::HashSet;
use std::sync::Arc;

use crate::error::{Error, Result};

pub use categories::{categorize_relations, RelationCategory, RelationCategoryInfo, DEFAULT_CATEGORY_THRESHOLD};
pub use filter::FilterIndex;
pub use load::{load_dir, write_dir, write_id_maps, LoadReport};
pub use prune::prune_top_relations;

/// A directed labeled edge `subject --relation--> object`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
}

/// Which evaluation split a triple belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// Entities, a relation vocabulary, and split-tagged triples.
#[derive(Debug, Clone)]
pub struct MultiRelGraph {
    num_entities: usize,
    relations: Vec<String>,
    entity_names: Option<Vec<String>>,
    triples: Vec<Triple>,
    splits: Vec<Split>,
}

impl MultiRelGraph {
    /// Validates id ranges, per-split uniqueness, and split disjointness.
    pub fn new(
        num_entities: usize,
        relations: Vec<String>,
        entity_names: Option<Vec<String>>,
        triples: Vec<(Triple, Split)>,
    ) -> Result<Self> {
        if let Some(names) = &entity_names {
            if names.len() != num_entities {
                return Err(Error::InvalidGraph(format!(
                    "entity name table has {} entries for {} entities",
                    names.len(),
                    num_entities
                )));
            }
        }
        let num_relations = relations.len();
        let mut seen: HashSet<Triple> = HashSet::with_capacity(triples.len());
        for (t, _) in &triples {
            if t.subject >= num_entities || t.object >= num_entities {
                return Err(Error::InvalidGraph(format!(
                    "entity id out of range in ({}, {}, {}); num_entities = {}",
                    t.subject, t.relation, t.object, num_entities
                )));
            }
            if t.relation >= num_relations {
                return Err(Error::InvalidGraph(format!(
                    "relation id {} out of range; {} relations",
                    t.relation, num_relations
                )));
            }
            // duplicates within a split and across splits are both rejected:
            // splits must be disjoint as triple sets
            if !seen.insert(*t) {
                return Err(Error::InvalidGraph(format!(
                    "duplicate triple ({}, {}, {})",
                    t.subject, t.relation, t.object
                )));
            }
        }
        let (triples, splits) = triples.into_iter().unzip();
        Ok(MultiRelGraph {
            num_entities,
            relations,
            entity_names,
            triples,
            splits,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn entity_names(&self) -> Option<&[String]> {
        self.entity_names.as_deref()
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    /// All triples with their split tags, in load order.
    pub fn triples(&self) -> impl Iterator<Item = (Triple, Split)> + '_ {
        self.triples.iter().copied().zip(self.splits.iter().copied())
    }

    pub fn split_triples(&self, split: Split) -> impl Iterator<Item = Triple> + '_ {
        self.triples()
            .filter_map(move |(t, s)| (s == split).then_some(t))
    }

    pub fn split_size(&self, split: Split) -> usize {
        self.splits.iter().filter(|&&s| s == split).count()
    }
}

/// Direction class of an augmented edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeDirection {
    Original,
    Inverse,
    SelfLoop,
}

/// An edge of the augmented graph; `relation` is an augmented id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugEdge {
    pub source: usize,
    pub target: usize,
    pub relation: usize,
    pub direction: EdgeDirection,
}

/// The message-passing graph: every train triple contributes an original
/// and an inverse edge, and every entity carries one self-loop.
///
/// Augmented relation ids are laid out as `[0, |R|)` original,
/// `[|R|, 2|R|)` inverse, and `2|R|` for the shared self-loop relation.
/// Only train-split triples produce edges; valid/test triples must not
/// leak into the encoder.
#[derive(Debug, Clone)]
pub struct AugmentedGraph {
    base: Arc<MultiRelGraph>,
    edges: Vec<AugEdge>,
}

/// Extends the train edges of `base` with inverse and self-loop edges.
pub fn augment(base: Arc<MultiRelGraph>) -> AugmentedGraph {
    let num_rel = base.num_relations();
    let train: Vec<Triple> = base.split_triples(Split::Train).collect();
    let mut edges = Vec::with_capacity(2 * train.len() + base.num_entities());
    for t in &train {
        edges.push(AugEdge {
            source: t.subject,
            target: t.object,
            relation: t.relation,
            direction: EdgeDirection::Original,
        });
    }
    for t in &train {
        edges.push(AugEdge {
            source: t.object,
            target: t.subject,
            relation: t.relation + num_rel,
            direction: EdgeDirection::Inverse,
        });
    }
    for v in 0..base.num_entities() {
        edges.push(AugEdge {
            source: v,
            target: v,
            relation: 2 * num_rel,
            direction: EdgeDirection::SelfLoop,
        });
    }
    AugmentedGraph { base, edges }
}

impl AugmentedGraph {
    pub fn base(&self) -> &Arc<MultiRelGraph> {
        &self.base
    }

    pub fn num_entities(&self) -> usize {
        self.base.num_entities()
    }

    pub fn edges(&self) -> &[AugEdge] {
        &self.edges
    }

    /// `2|R| + 1`: originals, inverses, and the self-loop relation.
    pub fn aug_relation_count(&self) -> usize {
        2 * self.base.num_relations() + 1
    }

    pub fn self_loop_relation(&self) -> usize {
        2 * self.base.num_relations()
    }

    /// Augmented id of the inverse of base relation `r`.
    pub fn inverse_relation(&self, r: usize) -> usize {
        r + self.base.num_relations()
    }

    /// Incoming-edge count per entity, split by direction class. Used for
    /// in-degree normalization.
    pub fn in_degrees_by_direction(&self) -> [Vec<usize>; 3] {
        let n = self.num_entities();
        let mut degs = [vec![0usize; n], vec![0usize; n], vec![0usize; n]];
        for e in &self.edges {
            let slot = match e.direction {
                EdgeDirection::Original => 0,
                EdgeDirection::Inverse => 1,
                EdgeDirection::SelfLoop => 2,
            };
            degs[slot][e.target] += 1;
        }
        degs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> MultiRelGraph {
        // (a, r, b), (b, r, c), (a, s, c)
        MultiRelGraph::new(
            3,
            vec!["r".into(), "s".into()],
            None,
            vec![
                (
                    Triple {
                        subject: 0,
                        relation: 0,
                        object: 1,
                    },
                    Split::Train,
                ),
                (
                    Triple {
                        subject: 1,
                        relation: 0,
                        object: 2,
                    },
                    Split::Train,
                ),
                (
                    Triple {
                        subject: 0,
                        relation: 1,
                        object: 2,
                    },
                    Split::Train,
                ),
            ],
        )
        .unwrap()
    }

    #[test]
    fn counts_match_construction() {
        let g = toy();
        assert_eq!(g.num_entities(), 3);
        assert_eq!(g.num_relations(), 2);
        assert_eq!(g.num_triples(), 3);
    }

    #[test]
    fn rejects_out_of_range_entity() {
        let bad = MultiRelGraph::new(
            2,
            vec!["r".into()],
            None,
            vec![(
                Triple {
                    subject: 0,
                    relation: 0,
                    object: 2,
                },
                Split::Train,
            )],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn rejects_cross_split_duplicate() {
        let t = Triple {
            subject: 0,
            relation: 0,
            object: 1,
        };
        let bad = MultiRelGraph::new(
            2,
            vec!["r".into()],
            None,
            vec![(t, Split::Train), (t, Split::Test)],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn augment_edge_count_formula() {
        // 2 * |train triples| + |V|
        let g = Arc::new(toy());
        let a = augment(g);
        assert_eq!(a.edges().len(), 2 * 3 + 3);
        assert_eq!(a.aug_relation_count(), 5);
    }

    #[test]
    fn augment_empty_train_gives_self_loops_only() {
        let g = Arc::new(MultiRelGraph::new(4, vec!["r".into()], None, vec![]).unwrap());
        let a = augment(g);
        assert_eq!(a.edges().len(), 4);
        assert!(a
            .edges()
            .iter()
            .all(|e| e.direction == EdgeDirection::SelfLoop && e.source == e.target));
    }

    #[test]
    fn augment_id_layout() {
        let g = Arc::new(toy());
        let a = augment(g);
        for e in a.edges() {
            match e.direction {
                EdgeDirection::Original => assert!(e.relation < 2),
                EdgeDirection::Inverse => assert!((2..4).contains(&e.relation)),
                EdgeDirection::SelfLoop => assert_eq!(e.relation, 4),
            }
        }
    }

    #[test]
    fn inverse_edges_mirror_originals() {
        let g = Arc::new(toy());
        let a = augment(g);
        let originals: Vec<&AugEdge> = a
            .edges()
            .iter()
            .filter(|e| e.direction == EdgeDirection::Original)
            .collect();
        let inverses: Vec<&AugEdge> = a
            .edges()
            .iter()
            .filter(|e| e.direction == EdgeDirection::Inverse)
            .collect();
        assert_eq!(originals.len(), inverses.len());
        for o in &originals {
            assert!(inverses.iter().any(|i| i.source == o.target
                && i.target == o.source
                && i.relation == o.relation + 2));
        }
    }

    #[test]
    fn valid_triples_produce_no_edges() {
        let g = Arc::new(
            MultiRelGraph::new(
                2,
                vec!["r".into()],
                None,
                vec![(
                    Triple {
                        subject: 0,
                        relation: 0,
                        object: 1,
                    },
                    Split::Valid,
                )],
            )
            .unwrap(),
        );
        let a = augment(g);
        // self-loops only
        assert_eq!(a.edges().len(), 2);
    }
}
