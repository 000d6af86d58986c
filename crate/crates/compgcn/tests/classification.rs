//! Node-classification behaviors on synthetic graphs: a separable
//! two-cluster task, the degenerate single-label case, and the
//! shuffled-label null model.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use compgcn::graph::Split;
use compgcn::model::{Composition, ModelConfig, NormMode};
use compgcn::numeric::Activation;
use compgcn::scoring::ScoreFn;
use compgcn::synthetic::two_cluster_graph;
use compgcn::train::{train_node_classification_on, LabeledNodes, RunConfig, Task};

fn cls_config(seed: u64) -> RunConfig {
    RunConfig {
        task: Task::NodeClassification,
        dataset: String::new(),
        model: ModelConfig {
            embed_dim: 16,
            layer_dims: vec![16],
            composition: Composition::Mult,
            num_bases: None,
            dropout: 0.0,
            activation: Activation::Tanh,
            norm: NormMode::None,
            preset: None,
        },
        score_fn: ScoreFn::Distmult,
        lr: 0.02,
        batch_size: 64,
        epochs: 60,
        eval_every: 5,
        seed,
        label_smoothing: 0.0,
        patience: 100,
        grid: None,
    }
}

#[test]
fn two_cluster_graph_is_separable() {
    let (graph, labels) = two_cluster_graph(10, 3);
    let outcome =
        train_node_classification_on(Arc::new(graph), &labels, &cls_config(1), None).unwrap();
    let acc = outcome.test_accuracy.unwrap();
    assert!(acc >= 0.9, "test accuracy {acc}");
}

#[test]
fn single_label_gives_perfect_accuracy() {
    let (graph, mut labels) = two_cluster_graph(8, 5);
    for entry in &mut labels.labels {
        entry.1 = 0;
    }
    labels.num_classes = 1;
    labels.class_names = vec!["only".into()];
    let outcome =
        train_node_classification_on(Arc::new(graph), &labels, &cls_config(2), None).unwrap();
    assert_eq!(outcome.test_accuracy.unwrap(), 1.0);
}

#[test]
fn shuffled_labels_hit_chance_level() {
    let mut accs = Vec::new();
    for seed in 0..5u64 {
        let (graph, mut labels) = two_cluster_graph(10, 30 + seed);
        // destroy the label-structure correlation, keep the class balance
        let mut classes: Vec<usize> = labels.labels.iter().map(|&(_, c, _)| c).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        classes.shuffle(&mut rng);
        for (entry, class) in labels.labels.iter_mut().zip(classes) {
            entry.1 = class;
        }
        let outcome =
            train_node_classification_on(Arc::new(graph), &labels, &cls_config(seed), None)
                .unwrap();
        accs.push(outcome.test_accuracy.unwrap());
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!(
        (mean - 0.5).abs() <= 0.15,
        "null-model accuracy {mean} (per-seed {accs:?})"
    );
}

#[test]
fn no_labeled_nodes_is_an_error() {
    let (graph, _) = two_cluster_graph(6, 1);
    let empty = LabeledNodes {
        labels: vec![],
        num_classes: 2,
        class_names: vec!["a".into(), "b".into()],
    };
    assert!(
        train_node_classification_on(Arc::new(graph), &empty, &cls_config(0), None).is_err()
    );
}

#[test]
fn test_only_labels_are_not_trained_on() {
    // all labels marked test: training must fail for lack of train nodes
    let (graph, mut labels) = two_cluster_graph(6, 2);
    for entry in &mut labels.labels {
        entry.2 = Split::Test;
    }
    assert!(
        train_node_classification_on(Arc::new(graph), &labels, &cls_config(0), None).is_err()
    );
}
