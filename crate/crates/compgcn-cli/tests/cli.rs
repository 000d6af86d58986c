//! End-to-end runs of the binary: every subcommand against a small
//! on-disk dataset, exit codes included.

use std::path::Path;
use std::process::Command;

use compgcn::graph::write_dir;
use compgcn::synthetic::{compositional_kg, relation_presence_graphs, two_cluster_graph};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_compgcn"))
}

fn write_link_dataset(dir: &Path) {
    let graph = compositional_kg(15, 7, 0.25);
    write_dir(&graph, dir).unwrap();
}

fn link_config(dataset: &Path, epochs: usize) -> serde_json::Value {
    serde_json::json!({
        "task": "link-prediction",
        "dataset": dataset.to_str().unwrap(),
        "model": {
            "embed_dim": 12,
            "layer_dims": [12],
            "composition": "mult",
            "num_bases": null,
            "dropout": 0.1,
            "activation": "tanh",
            "norm": "none",
            "preset": null
        },
        "score_fn": {"kind": "distmult"},
        "lr": 0.02,
        "batch_size": 64,
        "epochs": epochs,
        "eval_every": 5,
        "seed": 11,
        "label_smoothing": 0.1,
        "patience": 25
    })
}

#[test]
fn inspect_reports_counts() {
    let data = tempfile::tempdir().unwrap();
    write_link_dataset(data.path());
    let out = bin().arg("inspect").arg(data.path()).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("Entities 15 / Relations 4 / Edges"), "got: {text}");
}

#[test]
fn inspect_dumps_id_maps() {
    let data = tempfile::tempdir().unwrap();
    write_link_dataset(data.path());
    let maps = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("inspect")
        .arg(data.path())
        .arg("--dump-ids")
        .arg(maps.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let entities = std::fs::read_to_string(maps.path().join("entities.tsv")).unwrap();
    assert_eq!(entities.lines().count(), 15);
    assert!(maps.path().join("relations.tsv").exists());
}

#[test]
fn train_eval_roundtrip() {
    let data = tempfile::tempdir().unwrap();
    write_link_dataset(data.path());
    let run = tempfile::tempdir().unwrap();
    let cfg_path = run.path().join("config.json");
    std::fs::write(
        &cfg_path,
        serde_json::to_vec_pretty(&link_config(data.path(), 20)).unwrap(),
    )
    .unwrap();
    let out_dir = run.path().join("out");
    let out = bin()
        .arg("train")
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for file in ["metrics.csv", "report.json", "model.ckpt"] {
        assert!(out_dir.join(file).exists(), "missing {file}");
    }

    let eval = bin()
        .arg("eval")
        .arg("--config")
        .arg(&cfg_path)
        .arg("--checkpoint")
        .arg(out_dir.join("model.ckpt"))
        .arg("--split")
        .arg("test")
        .output()
        .unwrap();
    assert!(
        eval.status.success(),
        "eval failed: {}",
        String::from_utf8_lossy(&eval.stderr)
    );
    let table = String::from_utf8(eval.stdout).unwrap();
    assert!(table.contains("MRR"), "table missing header: {table}");
    assert!(table.contains("overall"));
}

#[test]
fn missing_config_exits_2_and_names_file() {
    let out = bin()
        .arg("train")
        .arg("--config")
        .arg("missing.json")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("missing.json"), "stderr: {err}");
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = bin().arg("--bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn prune_writes_subset() {
    let data = tempfile::tempdir().unwrap();
    write_link_dataset(data.path());
    let out_dir = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("prune")
        .arg("--dataset")
        .arg(data.path())
        .arg("--m")
        .arg("2")
        .arg("--out")
        .arg(out_dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("Relations 2"), "got: {text}");
    assert!(out_dir.path().join("train.txt").exists());
    assert!(out_dir.path().join("valid.txt").exists());
    assert!(out_dir.path().join("test.txt").exists());
}

#[test]
fn sweep_writes_csv() {
    let data = tempfile::tempdir().unwrap();
    write_link_dataset(data.path());
    let run = tempfile::tempdir().unwrap();
    let cfg_path = run.path().join("config.json");
    std::fs::write(
        &cfg_path,
        serde_json::to_vec_pretty(&link_config(data.path(), 5)).unwrap(),
    )
    .unwrap();
    let out_dir = run.path().join("sweep");
    let out = bin()
        .arg("sweep")
        .arg("--config")
        .arg(&cfg_path)
        .arg("--m")
        .arg("2,4")
        .arg("--basis")
        .arg("1,2")
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "sweep failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("kind,param,mrr,baseline_mrr,relative_mrr"));
    assert_eq!(csv.lines().count(), 5, "2 basis + 2 prune rows: {csv}");
}

#[test]
fn gradcheck_passes() {
    let out = bin()
        .arg("gradcheck")
        .arg("--seed")
        .arg("7")
        .arg("--trials")
        .arg("3")
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("max relative error"));
}

#[test]
fn node_classification_via_cli() {
    let data = tempfile::tempdir().unwrap();
    let (graph, labels) = two_cluster_graph(6, 3);
    write_dir(&graph, data.path()).unwrap();
    let mut tsv = String::new();
    for &(entity, class, split) in &labels.labels {
        let split = match split {
            compgcn::graph::Split::Test => "test",
            _ => "train",
        };
        tsv.push_str(&format!("{entity}\t{}\t{split}\n", labels.class_names[class]));
    }
    std::fs::write(data.path().join("labels.tsv"), tsv).unwrap();

    let run = tempfile::tempdir().unwrap();
    let cfg_path = run.path().join("config.json");
    let mut cfg = link_config(data.path(), 30);
    cfg["task"] = "node-classification".into();
    cfg["eval_every"] = 5.into();
    std::fs::write(&cfg_path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    let out = bin()
        .arg("train")
        .arg("--config")
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "node classification failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("test accuracy"), "got: {text}");
}

#[test]
fn graph_classification_via_cli() {
    let data = tempfile::tempdir().unwrap();
    // write the synthetic multi-graph dataset in the on-disk layout
    let gc = relation_presence_graphs(12, 4);
    let mut index = String::new();
    for (i, item) in gc.items.iter().enumerate() {
        let sub = format!("g{i}");
        index.push_str(&format!("{sub}\t{}\n", item.label));
        let gdir = data.path().join(&sub);
        std::fs::create_dir_all(&gdir).unwrap();
        let mut edges = String::new();
        for (t, _) in item.aug.base().triples() {
            edges.push_str(&format!(
                "n{}\tr{}\tn{}\n",
                t.subject, t.relation, t.object
            ));
        }
        std::fs::write(gdir.join("train.txt"), edges).unwrap();
    }
    std::fs::write(data.path().join("index.tsv"), index).unwrap();

    let run = tempfile::tempdir().unwrap();
    let cfg_path = run.path().join("config.json");
    let mut cfg = link_config(data.path(), 10);
    cfg["task"] = "graph-classification".into();
    cfg["eval_every"] = 1.into();
    std::fs::write(&cfg_path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    let out = bin()
        .arg("train")
        .arg("--config")
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "graph classification failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("10-fold accuracy"), "got: {text}");
}
