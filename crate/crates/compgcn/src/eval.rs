//! Filtered ranking protocol and metric reports.
//!
//! Ranking uses the filtered setting: for a query, every other known-true
//! entity (any split) is removed from the candidate pool before the gold
//! entity's rank is computed. Ties contribute half, rounded up
//! ("pessimistic-average"): `rank = 1 + #better + ceil(#equal / 2)`,
//! which keeps a constant scorer from inflating its metrics. The gold
//! entity is never its own competitor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AugmentedGraph, FilterIndex, RelationCategoryInfo, Split};
use crate::model::CompGcnModel;
use crate::numeric::Tensor;
use crate::scoring::{score_all_objects, ScoreFn};

/// Which endpoint a query predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuerySide {
    /// `(?, r, o)`
    Head,
    /// `(s, r, ?)`
    Tail,
}

/// One ranked query.
#[derive(Debug, Clone, Copy)]
pub struct RankRecord {
    pub side: QuerySide,
    /// Base relation id of the underlying triple.
    pub relation: usize,
    pub gold: usize,
    /// Filtered rank, >= 1.
    pub rank: usize,
}

/// Rank of `gold` among candidates after removing all other known-true
/// entities from the pool.
pub fn filtered_rank(scores: &[f64], gold: usize, known_true: &[usize]) -> Result<usize> {
    if gold >= scores.len() {
        return Err(Error::InvalidArgument(format!(
            "gold entity {gold} out of range for {} candidates",
            scores.len()
        )));
    }
    debug_assert!(
        known_true.binary_search(&gold).is_ok(),
        "gold must be a known true entity"
    );
    let gold_score = scores[gold];
    let mut better = 0usize;
    let mut equal = 0usize;
    for (c, &s) in scores.iter().enumerate() {
        if c == gold || known_true.binary_search(&c).is_ok() {
            continue;
        }
        if s > gold_score {
            better += 1;
        } else if s == gold_score {
            equal += 1;
        }
    }
    Ok(1 + better + equal.div_ceil(2))
}

/// Unfiltered variant (debug use): every entity except gold competes.
pub fn raw_rank(scores: &[f64], gold: usize) -> Result<usize> {
    filtered_rank(scores, gold, &[gold])
}

/// Aggregated metrics over one set of rank records.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricBlock {
    pub count: usize,
    pub mrr: f64,
    pub mr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

impl MetricBlock {
    fn from_ranks<'a>(ranks: impl Iterator<Item = &'a RankRecord>) -> Option<Self> {
        let mut count = 0usize;
        let (mut rr, mut r, mut h1, mut h3, mut h10) = (0.0, 0.0, 0usize, 0usize, 0usize);
        for rec in ranks {
            count += 1;
            rr += 1.0 / rec.rank as f64;
            r += rec.rank as f64;
            h1 += usize::from(rec.rank <= 1);
            h3 += usize::from(rec.rank <= 3);
            h10 += usize::from(rec.rank <= 10);
        }
        (count > 0).then(|| MetricBlock {
            count,
            mrr: rr / count as f64,
            mr: r / count as f64,
            hits1: h1 as f64 / count as f64,
            hits3: h3 as f64 / count as f64,
            hits10: h10 as f64 / count as f64,
        })
    }
}

/// Full evaluation report: overall, per prediction side, and optionally
/// per relation category.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: MetricBlock,
    pub head: Option<MetricBlock>,
    pub tail: Option<MetricBlock>,
    /// Keyed by category name ("1-1", "1-N", "N-1", "N-N").
    pub by_category: Option<BTreeMap<String, MetricBlock>>,
}

/// Aggregates rank records into a report. Category splits need the
/// per-relation table from relation categorization.
pub fn compute_metrics(
    records: &[RankRecord],
    categories: Option<&[RelationCategoryInfo]>,
) -> Result<EvalReport> {
    let overall = MetricBlock::from_ranks(records.iter())
        .ok_or_else(|| Error::InvalidArgument("no rank records to aggregate".into()))?;
    let head = MetricBlock::from_ranks(records.iter().filter(|r| r.side == QuerySide::Head));
    let tail = MetricBlock::from_ranks(records.iter().filter(|r| r.side == QuerySide::Tail));
    let by_category = categories.map(|cats| {
        let mut out = BTreeMap::new();
        for cat in ["1-1", "1-N", "N-1", "N-N"] {
            let block = MetricBlock::from_ranks(
                records
                    .iter()
                    .filter(|r| cats[r.relation].category.name() == cat),
            );
            if let Some(b) = block {
                out.insert(cat.to_string(), b);
            }
        }
        out
    });
    Ok(EvalReport {
        overall,
        head,
        tail,
        by_category,
    })
}

/// Ranks every triple of `split` in both directions against encoded
/// embeddings, filtered through `filter`.
pub fn rank_split(
    nodes: &Tensor,
    relations: &Tensor,
    graph: &AugmentedGraph,
    split: Split,
    filter: &FilterIndex,
    score_fn: ScoreFn,
) -> Result<Vec<RankRecord>> {
    let mut records = Vec::new();
    for t in graph.base().split_triples(split) {
        // tail prediction: (s, r, ?)
        let scores = score_all_objects(
            score_fn,
            nodes.row(t.subject),
            relations.row(t.relation),
            nodes,
        )?;
        let known = filter.objects_for(t.subject, t.relation);
        records.push(RankRecord {
            side: QuerySide::Tail,
            relation: t.relation,
            gold: t.object,
            rank: filtered_rank(&scores, t.object, known)?,
        });
        // head prediction: (?, r, o) via the inverse relation
        let scores = score_all_objects(
            score_fn,
            nodes.row(t.object),
            relations.row(graph.inverse_relation(t.relation)),
            nodes,
        )?;
        let known = filter.subjects_for(t.object, t.relation);
        records.push(RankRecord {
            side: QuerySide::Head,
            relation: t.relation,
            gold: t.subject,
            rank: filtered_rank(&scores, t.subject, known)?,
        });
    }
    Ok(records)
}

/// Encodes in eval mode (dropout off) and ranks the chosen split.
pub fn evaluate_model(
    model: &CompGcnModel,
    graph: &AugmentedGraph,
    split: Split,
    filter: &FilterIndex,
    score_fn: ScoreFn,
    categories: Option<&[RelationCategoryInfo]>,
) -> Result<EvalReport> {
    let (nodes, relations) = model.encode_eval(graph)?;
    let records = rank_split(&nodes, &relations, graph, split, filter, score_fn)?;
    compute_metrics(&records, categories)
}

/// Aligned plain-text table of a report.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let line = |name: &str, b: &MetricBlock| {
        format!(
            "{name:<10} {:>7} {:>8.4} {:>10.2} {:>8.4} {:>8.4} {:>8.4}\n",
            b.count, b.mrr, b.mr, b.hits1, b.hits3, b.hits10
        )
    };
    out.push_str(&format!(
        "{:<10} {:>7} {:>8} {:>10} {:>8} {:>8} {:>8}\n",
        "", "N", "MRR", "MR", "H@1", "H@3", "H@10"
    ));
    out.push_str(&line("overall", &report.overall));
    if let Some(b) = &report.head {
        out.push_str(&line("head", b));
    }
    if let Some(b) = &report.tail {
        out.push_str(&line("tail", b));
    }
    if let Some(cats) = &report.by_category {
        for (name, b) in cats {
            out.push_str(&line(name, b));
        }
    }
    out
}
