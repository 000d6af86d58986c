//! One graph convolution layer over an augmented graph.
//!
//! For each node `v` the update is
//! `h_v' = f( Σ_{(u,r) into v} W_{λ(r)} · φ(h_u, h_r) )`,
//! where the sum runs over augmented edges pointing into `v` (originals at
//! their target, inverses at theirs, self-loops at the node itself) and
//! `W_{λ(r)}` is routed by the weight scheme. Relation states pass through
//! the bare linear map `h_r' = W_rel · h_r`, with no dropout or activation.

use rand_chacha::ChaCha8Rng;

use super::compose::Composition;
use crate::error::{Error, Result};
use crate::graph::{AugmentedGraph, EdgeDirection};
use crate::numeric::{Activation, ElementwiseOp, Tape, TensorId};

/// How `W_{λ(r)}` is selected per edge.
#[derive(Debug, Clone)]
pub enum WeightRouting {
    /// Separate `W_O` / `W_I` / `W_S` per direction class.
    Direction {
        w_out: TensorId,
        w_in: TensorId,
        w_self: TensorId,
    },
    /// One shared weight for every edge.
    Shared { w: TensorId },
    /// Shared weight with a learnable per-relation scalar on each message.
    /// `alpha` has shape `[|R'|, 1]`.
    SharedScaled { w: TensorId, alpha: TensorId },
    /// One weight per augmented relation id.
    PerRelation { ws: Vec<TensorId> },
}

/// Message content before the linear map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageFn {
    /// `φ(h_u, h_r)` with a composition operator.
    Compose(Composition),
    /// `h_u` alone; relation embeddings do not enter the node update.
    NodeOnly,
}

/// Per-direction mean instead of a plain sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    #[default]
    None,
    InDegree,
}

/// Everything a single layer application needs.
pub struct LayerParams<'a> {
    pub routing: WeightRouting,
    pub message: MessageFn,
    pub w_rel: TensorId,
    pub dropout: f64,
    pub activation: Activation,
    pub norm: NormMode,
    /// Optional fixed per-edge scalar weights, aligned with
    /// `graph.edges()`. Used by symmetric-normalization reductions.
    pub edge_weights: Option<&'a [f64]>,
}

const DIRECTIONS: [EdgeDirection; 3] = [
    EdgeDirection::Original,
    EdgeDirection::Inverse,
    EdgeDirection::SelfLoop,
];

/// Applies one layer; returns `(node_states', rel_states')`.
pub fn layer_forward(
    tape: &mut Tape,
    graph: &AugmentedGraph,
    node_states: TensorId,
    rel_states: TensorId,
    params: &LayerParams,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(TensorId, TensorId)> {
    let num_nodes = graph.num_entities();
    let num_rel = graph.aug_relation_count();
    if tape.value(node_states).rows() != num_nodes {
        return Err(Error::InvalidArgument(format!(
            "node state rows {} != entity count {}",
            tape.value(node_states).rows(),
            num_nodes
        )));
    }
    if tape.value(rel_states).rows() != num_rel {
        return Err(Error::InvalidArgument(format!(
            "relation state rows {} != 2|R|+1 = {}",
            tape.value(rel_states).rows(),
            num_rel
        )));
    }
    if let Some(w) = params.edge_weights {
        if w.len() != graph.edges().len() {
            return Err(Error::ShapeMismatch {
                op: "layer_forward edge_weights",
                lhs: vec![w.len()],
                rhs: vec![graph.edges().len()],
            });
        }
    }

    let degrees = graph.in_degrees_by_direction();
    let mut total: Option<TensorId> = None;
    for (slot, dir) in DIRECTIONS.into_iter().enumerate() {
        // edge positions keep the augmented-graph order, so the scatter
        // reduction is deterministic
        let positions: Vec<usize> = graph
            .edges()
            .iter()
            .enumerate()
            .filter_map(|(i, e)| (e.direction == dir).then_some(i))
            .collect();
        if positions.is_empty() {
            continue;
        }
        let mut dir_sum: Option<TensorId> = None;
        for (weight, group) in route_groups(&params.routing, graph, dir, &positions) {
            let aggregated =
                aggregate_messages(tape, graph, node_states, rel_states, params, &group)?;
            // W φ(h_u, h_r) summed = W (Σ φ): apply the map after the
            // per-node reduction
            let mapped = tape.matmul_nt(aggregated, weight)?;
            dir_sum = Some(match dir_sum {
                Some(acc) => tape.add(acc, mapped)?,
                None => mapped,
            });
        }
        let mut dir_sum = dir_sum.expect("non-empty direction group");
        if params.norm == NormMode::InDegree {
            let factors: Vec<f64> = degrees[slot]
                .iter()
                .map(|&d| if d == 0 { 1.0 } else { 1.0 / d as f64 })
                .collect();
            dir_sum = tape.scale_rows(dir_sum, &factors)?;
        }
        total = Some(match total {
            Some(acc) => tape.add(acc, dir_sum)?,
            None => dir_sum,
        });
    }
    let total = match total {
        Some(t) => t,
        None => {
            // no edges at all: zero output of the right shape
            let d_out = tape.value(routing_any_weight(&params.routing)).rows();
            tape.constant(crate::numeric::Tensor::zeros(vec![num_nodes, d_out]))
        }
    };

    // dropout on the aggregated pre-activation, then f
    let dropped = tape.dropout(total, params.dropout, rng, training)?;
    let nodes_out = tape.activation(params.activation, dropped);
    let rels_out = tape.matmul_nt(rel_states, params.w_rel)?;
    Ok((nodes_out, rels_out))
}

/// Splits one direction's edge positions into (weight, positions) groups.
fn route_groups(
    routing: &WeightRouting,
    graph: &AugmentedGraph,
    dir: EdgeDirection,
    positions: &[usize],
) -> Vec<(TensorId, Vec<usize>)> {
    match routing {
        WeightRouting::Direction { w_out, w_in, w_self } => {
            let w = match dir {
                EdgeDirection::Original => *w_out,
                EdgeDirection::Inverse => *w_in,
                EdgeDirection::SelfLoop => *w_self,
            };
            vec![(w, positions.to_vec())]
        }
        WeightRouting::Shared { w } | WeightRouting::SharedScaled { w, .. } => {
            vec![(*w, positions.to_vec())]
        }
        WeightRouting::PerRelation { ws } => {
            // group by augmented relation id, ascending, preserving edge order
            let mut by_rel: Vec<Vec<usize>> = vec![Vec::new(); ws.len()];
            for &p in positions {
                by_rel[graph.edges()[p].relation].push(p);
            }
            by_rel
                .into_iter()
                .enumerate()
                .filter(|(_, g)| !g.is_empty())
                .map(|(r, g)| (ws[r], g))
                .collect()
        }
    }
}

fn routing_any_weight(routing: &WeightRouting) -> TensorId {
    match routing {
        WeightRouting::Direction { w_out, .. } => *w_out,
        WeightRouting::Shared { w } | WeightRouting::SharedScaled { w, .. } => *w,
        WeightRouting::PerRelation { ws } => ws[0],
    }
}

/// Gathers sources, applies the message function and static weights, and
/// scatter-sums into per-node rows (`|V| x d_in`).
fn aggregate_messages(
    tape: &mut Tape,
    graph: &AugmentedGraph,
    node_states: TensorId,
    rel_states: TensorId,
    params: &LayerParams,
    positions: &[usize],
) -> Result<TensorId> {
    let edges = graph.edges();
    let sources: Vec<usize> = positions.iter().map(|&p| edges[p].source).collect();
    let targets: Vec<usize> = positions.iter().map(|&p| edges[p].target).collect();
    let relations: Vec<usize> = positions.iter().map(|&p| edges[p].relation).collect();

    let h_u = tape.gather_rows(node_states, &sources)?;
    let mut msg = match params.message {
        MessageFn::NodeOnly => h_u,
        MessageFn::Compose(comp) => {
            let h_r = tape.gather_rows(rel_states, &relations)?;
            match comp {
                Composition::Sub => tape.elementwise(ElementwiseOp::Sub, h_u, h_r)?,
                Composition::Mult => tape.elementwise(ElementwiseOp::Mul, h_u, h_r)?,
                Composition::Corr => tape.circular_correlation(h_u, h_r)?,
            }
        }
    };
    if let WeightRouting::SharedScaled { alpha, .. } = &params.routing {
        let per_edge = tape.gather_rows(*alpha, &relations)?;
        msg = tape.row_scale(msg, per_edge)?;
    }
    if let Some(all_weights) = params.edge_weights {
        let w: Vec<f64> = positions.iter().map(|&p| all_weights[p]).collect();
        msg = tape.scale_rows(msg, &w)?;
    }
    tape.scatter_add_rows(msg, &targets, graph.num_entities())
}
