//! Scalability study: relative link-prediction performance under relation
//! pruning and under varying numbers of relation basis vectors. All runs
//! share the seed and epoch budget of the base config.

use std::path::Path;
use std::sync::Arc;

use super::{link::train_link_prediction_on, RunConfig};
use crate::error::Result;
use crate::eval::{compute_metrics, rank_split};
use crate::graph::{prune_top_relations, MultiRelGraph, Split};

/// One sweep measurement. `relative_mrr = mrr / baseline_mrr`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepRow {
    /// "basis" (varying B on the full set) or "prune" (B=5 vs full
    /// embeddings on a top-m subset).
    pub kind: String,
    pub param: usize,
    pub mrr: f64,
    pub baseline_mrr: f64,
    pub relative_mrr: f64,
}

/// Evaluation split for sweep metrics: test when present, else valid,
/// else train.
fn pick_split(g: &MultiRelGraph) -> Split {
    if g.split_size(Split::Test) > 0 {
        Split::Test
    } else if g.split_size(Split::Valid) > 0 {
        Split::Valid
    } else {
        Split::Train
    }
}

fn train_and_mrr(graph: Arc<MultiRelGraph>, cfg: &RunConfig) -> Result<f64> {
    let split = pick_split(&graph);
    let outcome = train_link_prediction_on(graph, cfg, None)?;
    let (nodes, relations) = outcome.model.encode_eval(&outcome.graph)?;
    let records = rank_split(
        &nodes,
        &relations,
        &outcome.graph,
        split,
        &outcome.filter,
        cfg.score_fn,
    )?;
    Ok(compute_metrics(&records, None)?.overall.mrr)
}

/// Runs the sweep: for each `B` in `b_values`, a basis-`B` model on the
/// full dataset relative to the full-embedding model; for each `m` in
/// `m_values`, a `B = 5` model on the top-`m` pruned dataset relative to
/// the full-embedding model on the same subset.
pub fn scalability_sweep(
    graph: Arc<MultiRelGraph>,
    cfg: &RunConfig,
    m_values: &[usize],
    b_values: &[usize],
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();

    let mut full_cfg = cfg.clone();
    full_cfg.model.num_bases = None;
    let full_mrr = train_and_mrr(graph.clone(), &full_cfg)?;

    for &b in b_values {
        let mut basis_cfg = cfg.clone();
        basis_cfg.model.num_bases = Some(b);
        let mrr = train_and_mrr(graph.clone(), &basis_cfg)?;
        rows.push(SweepRow {
            kind: "basis".into(),
            param: b,
            mrr,
            baseline_mrr: full_mrr,
            relative_mrr: mrr / full_mrr,
        });
    }

    for &m in m_values {
        let pruned = Arc::new(prune_top_relations(&graph, m)?);
        let baseline = train_and_mrr(pruned.clone(), &full_cfg)?;
        let mut b5_cfg = cfg.clone();
        b5_cfg.model.num_bases = Some(5);
        let mrr = train_and_mrr(pruned, &b5_cfg)?;
        rows.push(SweepRow {
            kind: "prune".into(),
            param: m,
            mrr,
            baseline_mrr: baseline,
            relative_mrr: mrr / baseline,
        });
    }
    Ok(rows)
}

/// Writes `sweep.csv`.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = String::from("kind,param,mrr,baseline_mrr,relative_mrr\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.kind, r.param, r.mrr, r.baseline_mrr, r.relative_mrr
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
