//! Relation categorization by head/tail multiplicity.

use std::collections::HashSet;

use super::{MultiRelGraph, Split};
use crate::error::{Error, Result};

/// Default ratio threshold separating "one" from "many".
pub const DEFAULT_CATEGORY_THRESHOLD: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelationCategory {
    OneToOne,
    OneToMany,
    ManyToOne,
    ManyToMany,
}

impl RelationCategory {
    pub fn name(self) -> &'static str {
        match self {
            RelationCategory::OneToOne => "1-1",
            RelationCategory::OneToMany => "1-N",
            RelationCategory::ManyToOne => "N-1",
            RelationCategory::ManyToMany => "N-N",
        }
    }
}

/// Per-relation multiplicity statistics over train triples.
#[derive(Debug, Clone)]
pub struct RelationCategoryInfo {
    pub category: RelationCategory,
    pub tails_per_head: f64,
    pub heads_per_tail: f64,
    /// Set when the relation has no train triples; such relations default
    /// to 1-1 with both ratios zero.
    pub no_train_triples: bool,
}

/// Computes, for every relation, the average number of tails per head and
/// heads per tail over the train split, then tags it:
/// both below `threshold` → 1-1, tails high → 1-N, heads high → N-1,
/// both high → N-N.
pub fn categorize_relations(
    g: &MultiRelGraph,
    threshold: f64,
) -> Result<Vec<RelationCategoryInfo>> {
    if threshold <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "category threshold must be positive, got {threshold}"
        )));
    }
    let nr = g.num_relations();
    let mut counts = vec![0usize; nr];
    let mut heads: Vec<HashSet<usize>> = vec![HashSet::new(); nr];
    let mut tails: Vec<HashSet<usize>> = vec![HashSet::new(); nr];
    for t in g.split_triples(Split::Train) {
        counts[t.relation] += 1;
        heads[t.relation].insert(t.subject);
        tails[t.relation].insert(t.object);
    }
    Ok((0..nr)
        .map(|r| {
            if counts[r] == 0 {
                return RelationCategoryInfo {
                    category: RelationCategory::OneToOne,
                    tails_per_head: 0.0,
                    heads_per_tail: 0.0,
                    no_train_triples: true,
                };
            }
            let tph = counts[r] as f64 / heads[r].len() as f64;
            let hpt = counts[r] as f64 / tails[r].len() as f64;
            let category = match (tph >= threshold, hpt >= threshold) {
                (false, false) => RelationCategory::OneToOne,
                (true, false) => RelationCategory::OneToMany,
                (false, true) => RelationCategory::ManyToOne,
                (true, true) => RelationCategory::ManyToMany,
            };
            RelationCategoryInfo {
                category,
                tails_per_head: tph,
                heads_per_tail: hpt,
                no_train_triples: false,
            }
        })
        .collect())
}
