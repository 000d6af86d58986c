//! Shared test oracles: a dense reference for the graph convolution layer
//! built from per-relation adjacency matrices, the normalized-adjacency
//! formula for the plain GCN, and a sort-based filtered-rank oracle.
//!
//! Everything here is written against plain `Vec<Vec<f64>>` matrices and
//! deliberately shares no code with the tape implementation it checks.

#![allow(dead_code)]

use compgcn::graph::{AugmentedGraph, EdgeDirection};

pub type Mat = Vec<Vec<f64>>;

pub fn zeros(rows: usize, cols: usize) -> Mat {
    vec![vec![0.0; cols]; rows]
}

/// Plain triple-loop product, `a (m x k) * b (k x n)`.
pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    let mut out = zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i][p] * b[p][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

/// `a (m x k) * b^T (k x n)` where `b` is `n x k`.
pub fn mat_mul_t(a: &Mat, b: &Mat) -> Mat {
    let (m, n) = (a.len(), b.len());
    let k = a[0].len();
    let mut out = zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i][p] * b[j][p];
            }
            out[i][j] = acc;
        }
    }
    out
}

pub fn from_tensor(t: &compgcn::numeric::Tensor) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    let mut worst: f64 = 0.0;
    assert_eq!(a.len(), b.len(), "row count mismatch");
    for (ra, rb) in a.iter().zip(b) {
        assert_eq!(ra.len(), rb.len(), "col count mismatch");
        for (x, y) in ra.iter().zip(rb) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

/// Message content of the dense reference.
#[derive(Clone)]
pub enum DensePhi {
    Sub,
    Mult,
    Corr,
    NodeOnly,
    /// `alpha[r] * h_u` with one scalar per augmented relation.
    Scaled(Vec<f64>),
}

/// Weight selection of the dense reference, mirrors the routing schemes.
#[derive(Clone)]
pub enum DenseWeights {
    Direction { w_out: Mat, w_in: Mat, w_self: Mat },
    Shared(Mat),
    PerRelation(Vec<Mat>),
}

pub struct DenseLayerSpec {
    pub phi: DensePhi,
    pub weights: DenseWeights,
    pub w_rel: Mat,
    pub tanh: bool,
    pub norm_indegree: bool,
    /// Per-edge scalar weights aligned with `graph.edges()`.
    pub edge_weights: Option<Vec<f64>>,
}

fn direction_of(aug_rel: usize, num_base: usize) -> EdgeDirection {
    if aug_rel < num_base {
        EdgeDirection::Original
    } else if aug_rel < 2 * num_base {
        EdgeDirection::Inverse
    } else {
        EdgeDirection::SelfLoop
    }
}

fn phi_all_nodes(phi: &DensePhi, x: &Mat, z_r: &[f64], aug_rel: usize) -> Mat {
    x.iter()
        .map(|xu| match phi {
            DensePhi::Sub => xu.iter().zip(z_r).map(|(a, b)| a - b).collect(),
            DensePhi::Mult => xu.iter().zip(z_r).map(|(a, b)| a * b).collect(),
            DensePhi::Corr => {
                let d = xu.len();
                (0..d)
                    .map(|k| (0..d).map(|i| xu[i] * z_r[(i + k) % d]).sum())
                    .collect()
            }
            DensePhi::NodeOnly => xu.clone(),
            DensePhi::Scaled(alphas) => xu.iter().map(|a| alphas[aug_rel] * a).collect(),
        })
        .collect()
}

/// Dense reference for one layer: materializes one adjacency matrix per
/// augmented relation and computes
/// `H' = f( Σ_dir norm_dir( Σ_{r in dir} A_r · φ_r(X, z_r) · W_{λ(r)}^T ) )`,
/// plus the bare relation transform `Z' = Z · W_rel^T`.
pub fn dense_layer_forward(
    graph: &AugmentedGraph,
    x: &Mat,
    z: &Mat,
    spec: &DenseLayerSpec,
) -> (Mat, Mat) {
    let n = graph.num_entities();
    let num_base = graph.base().num_relations();
    let num_aug = graph.aug_relation_count();
    let d_out = spec.w_rel.len();

    // adjacency per augmented relation; A_r[v][u] carries the edge weight
    let mut adjacency = vec![zeros(n, n); num_aug];
    let mut in_deg = [vec![0usize; n], vec![0usize; n], vec![0usize; n]];
    for (idx, e) in graph.edges().iter().enumerate() {
        let w = spec.edge_weights.as_ref().map_or(1.0, |ws| ws[idx]);
        adjacency[e.relation][e.target][e.source] += w;
        let slot = match e.direction {
            EdgeDirection::Original => 0,
            EdgeDirection::Inverse => 1,
            EdgeDirection::SelfLoop => 2,
        };
        in_deg[slot][e.target] += 1;
    }

    let mut per_direction = vec![zeros(n, d_out); 3];
    for r in 0..num_aug {
        let dir = direction_of(r, num_base);
        let slot = match dir {
            EdgeDirection::Original => 0,
            EdgeDirection::Inverse => 1,
            EdgeDirection::SelfLoop => 2,
        };
        let w = match &spec.weights {
            DenseWeights::Direction { w_out, w_in, w_self } => match dir {
                EdgeDirection::Original => w_out,
                EdgeDirection::Inverse => w_in,
                EdgeDirection::SelfLoop => w_self,
            },
            DenseWeights::Shared(w) => w,
            DenseWeights::PerRelation(ws) => &ws[r],
        };
        let messages = phi_all_nodes(&spec.phi, x, &z[r], r);
        let gathered = mat_mul(&adjacency[r], &messages);
        let mapped = mat_mul_t(&gathered, w);
        for v in 0..n {
            for j in 0..d_out {
                per_direction[slot][v][j] += mapped[v][j];
            }
        }
    }

    let mut nodes = zeros(n, d_out);
    for slot in 0..3 {
        for v in 0..n {
            let scale = if spec.norm_indegree && in_deg[slot][v] > 0 {
                1.0 / in_deg[slot][v] as f64
            } else {
                1.0
            };
            for j in 0..d_out {
                nodes[v][j] += per_direction[slot][v][j] * scale;
            }
        }
    }
    if spec.tanh {
        for row in &mut nodes {
            for v in row {
                *v = v.tanh();
            }
        }
    }
    let rels = mat_mul_t(z, &spec.w_rel);
    (nodes, rels)
}

/// The normalized-adjacency single-layer GCN formula for an undirected
/// graph given as unordered pairs: `H = f(D^-1/2 (A+I) D^-1/2 X W^T)`.
pub fn dense_kipf_reference(
    num_nodes: usize,
    undirected_edges: &[(usize, usize)],
    x: &Mat,
    w: &Mat,
    tanh: bool,
) -> Mat {
    let n = num_nodes;
    let mut a_hat = zeros(n, n);
    for &(u, v) in undirected_edges {
        a_hat[u][v] = 1.0;
        a_hat[v][u] = 1.0;
    }
    for (v, row) in a_hat.iter_mut().enumerate() {
        row[v] += 1.0;
    }
    let deg: Vec<f64> = (0..n).map(|v| a_hat[v].iter().sum()).collect();
    for i in 0..n {
        for j in 0..n {
            if a_hat[i][j] != 0.0 {
                a_hat[i][j] /= (deg[i] * deg[j]).sqrt();
            }
        }
    }
    let mut h = mat_mul_t(&mat_mul(&a_hat, x), w);
    if tanh {
        for row in &mut h {
            for v in row {
                *v = v.tanh();
            }
        }
    }
    h
}

/// Symmetric-normalization edge weights for an augmented graph built from
/// an undirected edge list: weight(u→v) = 1/sqrt(deg~(u) deg~(v)) with
/// deg~ = undirected degree + 1. Aligned with `graph.edges()`.
pub fn symmetric_norm_weights(graph: &AugmentedGraph) -> Vec<f64> {
    let n = graph.num_entities();
    let mut deg = vec![1.0f64; n]; // self-connection
    for e in graph.edges() {
        if e.direction == EdgeDirection::Original {
            deg[e.source] += 1.0;
            deg[e.target] += 1.0;
        }
    }
    graph
        .edges()
        .iter()
        .map(|e| 1.0 / (deg[e.source] * deg[e.target]).sqrt())
        .collect()
}

/// Sort-based rank oracle under the half-tie rule: sorts the surviving
/// candidate scores, reads off the best and worst positions the gold
/// score could take, and averages them rounding up.
pub fn sort_rank_oracle(scores: &[f64], gold: usize, known_true: &[usize]) -> usize {
    let gold_score = scores[gold];
    let mut competitors: Vec<f64> = scores
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != gold && !known_true.contains(&c))
        .map(|(_, &s)| s)
        .collect();
    competitors.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let best = competitors.iter().take_while(|&&s| s > gold_score).count() + 1;
    let worst = competitors.iter().take_while(|&&s| s >= gold_score).count() + 1;
    // average of best and worst placement, rounded up
    (best + worst).div_ceil(2)
}
