//! Command-line surface: train, eval, prune, sweep, gradcheck, inspect.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use compgcn::eval::{evaluate_model, render_table};
use compgcn::gradcheck::pipeline_gradcheck;
use compgcn::graph::{
    augment, categorize_relations, load_dir, prune_top_relations, write_dir, write_id_maps,
    FilterIndex, Split, DEFAULT_CATEGORY_THRESHOLD,
};
use compgcn::model::{CompGcnModel, Composition};
use compgcn::numeric::fdcheck::op_suite;
use compgcn::train::{
    scalability_sweep, train_graph_classification_on, train_link_prediction,
    train_node_classification_on, write_sweep_csv, GraphClassData, LabeledNodes, RunConfig, Task,
};

#[derive(Parser)]
#[command(name = "compgcn", about = "Joint node and relation embedding for multi-relational graphs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonRunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for metrics.csv / report.json / model.ckpt.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Execution device; only "cpu" is implemented.
    #[arg(long, default_value = "cpu")]
    device: String,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model for the task named in the config.
    Train(CommonRunArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[command(flatten)]
        common: CommonRunArgs,
        /// Checkpoint produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split to rank: train, valid, or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Write a top-m most-frequent-relations subset of a dataset.
    Prune {
        /// Dataset directory (train.txt / valid.txt / test.txt).
        #[arg(long)]
        dataset: PathBuf,
        /// Number of relations to keep.
        #[arg(long)]
        m: usize,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Relative-MRR study over basis counts and pruned relation sets.
    Sweep {
        #[command(flatten)]
        common: CommonRunArgs,
        /// Comma-separated top-m values, e.g. 10,25,50.
        #[arg(long, value_delimiter = ',')]
        m: Vec<usize>,
        /// Comma-separated basis counts, e.g. 1,2,8.
        #[arg(long, value_delimiter = ',')]
        basis: Vec<usize>,
    },
    /// Finite-difference gradient verification of every op and the full
    /// encoder/decoder pipeline; exits nonzero above 1e-4.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Random inputs per op.
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
    /// Print dataset statistics.
    Inspect {
        /// Dataset directory.
        dataset: PathBuf,
        /// Also write entities.tsv / relations.tsv id maps here.
        #[arg(long)]
        dump_ids: Option<PathBuf>,
    },
}

fn parse_split(name: &str) -> Result<Split, String> {
    match name {
        "train" => Ok(Split::Train),
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split {other}; expected train|valid|test")),
    }
}

fn load_config(args: &CommonRunArgs) -> Result<RunConfig, String> {
    if args.device != "cpu" {
        return Err(format!("device {} not available; use cpu", args.device));
    }
    let mut cfg = RunConfig::load(&args.config).map_err(|e| e.to_string())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn cmd_train(args: &CommonRunArgs) -> Result<(), String> {
    let cfg = load_config(args)?;
    let out = args.out.as_deref();
    match cfg.task {
        Task::LinkPrediction => {
            let configs = cfg.expand_grid().map_err(|e| e.to_string())?;
            let grid_mode = configs.len() > 1;
            let mut best: Option<(f64, String)> = None;
            for (i, c) in configs.iter().enumerate() {
                let run_out = if grid_mode {
                    out.map(|d| d.join(format!("grid{i}")))
                } else {
                    out.map(Path::to_path_buf)
                };
                let outcome =
                    train_link_prediction(c, run_out.as_deref()).map_err(|e| e.to_string())?;
                let valid_mrr = outcome.best_valid.as_ref().map(|r| r.overall.mrr);
                if grid_mode {
                    println!(
                        "grid{i}: layers={} lr={} batch={} dropout={} valid_mrr={}",
                        c.model.num_layers(),
                        c.lr,
                        c.batch_size,
                        c.model.dropout,
                        valid_mrr.map_or("n/a".into(), |m| format!("{m:.4}")),
                    );
                }
                if let Some(report) = &outcome.test {
                    if !grid_mode {
                        println!("test metrics:");
                        print!("{}", render_table(report));
                    }
                }
                if let Some(m) = valid_mrr {
                    if best.as_ref().is_none_or(|(b, _)| m > *b) {
                        best = Some((m, format!("grid{i}")));
                    }
                }
            }
            if grid_mode {
                if let Some((mrr, name)) = best {
                    println!("best: {name} (valid MRR {mrr:.4})");
                }
            }
        }
        Task::NodeClassification => {
            let report = load_dir(Path::new(&cfg.dataset)).map_err(|e| e.to_string())?;
            let graph = Arc::new(report.graph);
            let labels = LabeledNodes::load(&Path::new(&cfg.dataset).join("labels.tsv"), &graph)
                .map_err(|e| e.to_string())?;
            let outcome = train_node_classification_on(graph, &labels, &cfg, out)
                .map_err(|e| e.to_string())?;
            println!(
                "valid accuracy: {}",
                outcome
                    .best_valid_accuracy
                    .map_or("n/a".into(), |a| format!("{a:.4}"))
            );
            println!(
                "test accuracy: {}",
                outcome
                    .test_accuracy
                    .map_or("n/a".into(), |a| format!("{a:.4}"))
            );
        }
        Task::GraphClassification => {
            let data = GraphClassData::load(Path::new(&cfg.dataset)).map_err(|e| e.to_string())?;
            let outcome =
                train_graph_classification_on(&data, &cfg, out).map_err(|e| e.to_string())?;
            println!(
                "10-fold accuracy: {:.4} ± {:.4}",
                outcome.mean, outcome.std
            );
        }
    }
    Ok(())
}

fn cmd_eval(
    common: &CommonRunArgs,
    checkpoint: &Path,
    split: &str,
) -> Result<(), String> {
    let cfg = load_config(common)?;
    let split = parse_split(split)?;
    let report = load_dir(Path::new(&cfg.dataset)).map_err(|e| e.to_string())?;
    let graph = Arc::new(report.graph);
    let aug = augment(graph.clone());
    let filter = FilterIndex::build(&graph);
    let mut model = CompGcnModel::new_seeded(
        cfg.model.clone(),
        graph.num_entities(),
        aug.aug_relation_count(),
        cfg.seed,
    )
    .map_err(|e| e.to_string())?;
    model.load_checkpoint(checkpoint).map_err(|e| e.to_string())?;
    let categories =
        categorize_relations(&graph, DEFAULT_CATEGORY_THRESHOLD).map_err(|e| e.to_string())?;
    let eval_report = evaluate_model(&model, &aug, split, &filter, cfg.score_fn, Some(&categories))
        .map_err(|e| e.to_string())?;
    print!("{}", render_table(&eval_report));
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
        let json = serde_json::to_vec_pretty(&eval_report).map_err(|e| e.to_string())?;
        std::fs::write(dir.join("report.json"), json).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn cmd_prune(dataset: &Path, m: usize, out: &Path) -> Result<(), String> {
    let report = load_dir(dataset).map_err(|e| e.to_string())?;
    let pruned = prune_top_relations(&report.graph, m).map_err(|e| e.to_string())?;
    write_dir(&pruned, out).map_err(|e| e.to_string())?;
    println!(
        "Entities {} / Relations {} / Edges {}",
        pruned.num_entities(),
        pruned.num_relations(),
        pruned.num_triples()
    );
    Ok(())
}

fn cmd_sweep(common: &CommonRunArgs, m: &[usize], basis: &[usize]) -> Result<(), String> {
    let cfg = load_config(common)?;
    if cfg.task != Task::LinkPrediction {
        return Err("sweep requires a link-prediction config".into());
    }
    let report = load_dir(Path::new(&cfg.dataset)).map_err(|e| e.to_string())?;
    let rows = scalability_sweep(Arc::new(report.graph), &cfg, m, basis)
        .map_err(|e| e.to_string())?;
    for r in &rows {
        println!(
            "{} {} -> mrr {:.4} (baseline {:.4}, relative {:.3})",
            r.kind, r.param, r.mrr, r.baseline_mrr, r.relative_mrr
        );
    }
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
        write_sweep_csv(&dir.join("sweep.csv"), &rows).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64, trials: usize) -> Result<ExitCode, String> {
    let mut worst = 0.0f64;
    let results = op_suite(seed, trials).map_err(|e| e.to_string())?;
    println!("{:<28} {:>12}", "op", "max_rel_err");
    for r in &results {
        println!("{:<28} {:>12.3e}", r.name, r.max_rel_err);
        worst = worst.max(r.max_rel_err);
    }
    for comp in [Composition::Sub, Composition::Mult, Composition::Corr] {
        let check = pipeline_gradcheck(seed, comp).map_err(|e| e.to_string())?;
        println!(
            "{:<28} {:>12.3e}",
            format!("pipeline ({comp:?})").to_lowercase(),
            check.max_rel_err
        );
        worst = worst.max(check.max_rel_err);
    }
    println!("max relative error: {worst:.3e}");
    Ok(if worst < 1e-4 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_inspect(dataset: &Path, dump_ids: Option<&Path>) -> Result<(), String> {
    let report = load_dir(dataset).map_err(|e| e.to_string())?;
    if let Some(dir) = dump_ids {
        write_id_maps(&report.graph, dir).map_err(|e| e.to_string())?;
    }
    let g = &report.graph;
    println!(
        "Entities {} / Relations {} / Edges {}",
        g.num_entities(),
        g.num_relations(),
        g.num_triples()
    );
    println!(
        "  splits: train {} / valid {} / test {}",
        g.split_size(Split::Train),
        g.split_size(Split::Valid),
        g.split_size(Split::Test)
    );
    if report.entities_only_in_eval > 0 {
        println!(
            "  warning: {} entities appear only in valid/test",
            report.entities_only_in_eval
        );
    }
    let categories =
        categorize_relations(g, DEFAULT_CATEGORY_THRESHOLD).map_err(|e| e.to_string())?;
    let mut counts = [0usize; 4];
    for c in &categories {
        let idx = match c.category.name() {
            "1-1" => 0,
            "1-N" => 1,
            "N-1" => 2,
            _ => 3,
        };
        counts[idx] += 1;
    }
    println!(
        "  relation categories: 1-1 {} / 1-N {} / N-1 {} / N-N {}",
        counts[0], counts[1], counts[2], counts[3]
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<ExitCode, String> = match &cli.command {
        Command::Train(args) => cmd_train(args).map(|()| ExitCode::SUCCESS),
        Command::Eval {
            common,
            checkpoint,
            split,
        } => cmd_eval(common, checkpoint, split).map(|()| ExitCode::SUCCESS),
        Command::Prune { dataset, m, out } => {
            cmd_prune(dataset, *m, out).map(|()| ExitCode::SUCCESS)
        }
        Command::Sweep { common, m, basis } => {
            cmd_sweep(common, m, basis).map(|()| ExitCode::SUCCESS)
        }
        Command::Gradcheck { seed, trials } => cmd_gradcheck(*seed, *trials),
        Command::Inspect { dataset, dump_ids } => {
            cmd_inspect(dataset, dump_ids.as_deref()).map(|()| ExitCode::SUCCESS)
        }
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
