use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use sharp_core::encoders::{load_checkpoint, save_checkpoint, Model};
use sharp_core::eval::{
    evaluate_checkpoint, export_embeddings, global_csv, hard_negative_degree_export, DegreeReport, Evaluation,
    GlobalRow,
};
use sharp_core::fsutil::{read_to_string, write_atomic};
use sharp_core::graph::{load_graph, load_splits, DataSplit, Graph};
use sharp_core::pipeline::{resolve_split, run_sharp, TrainConfig};
use sharp_core::{Error, ErrorKind};

mod sweep;

pub(crate) const CONFIG_FILE: &str = "config.toml";
pub(crate) const SPLIT_FILE: &str = "split.json";
pub(crate) const CHECKPOINT_FILE: &str = "model.ckpt";
pub(crate) const RECORD_FILE: &str = "runrecord.json";

#[derive(Parser)]
#[command(name = "sharp", version, about = "Graph contrastive learning with hardness-aware reweighting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resolve the train/val/test split for a config and write split.json.
    PrepareSplits {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pre-train, pseudo-label, fine-tune and evaluate one run.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-score a checkpoint. Config and split default to the files saved next to it.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
        /// degree.csv of a baseline run, used for the delta column.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Run every combination of a parameter grid for K seeds.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seeds: u64,
        /// Base config the grid overrides.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run cells as separate processes.
        #[arg(long)]
        parallel: bool,
        /// Process limit for --parallel.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Write encoder embeddings of every node to embeddings.csv.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Degrees of the top-k hardest negatives at saved pre-training epochs.
    ExportHardNegatives {
        /// A train output directory with snapshots/.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        epochs: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            eprintln!("error[config]: {}", first.lines().next().unwrap_or("bad arguments"));
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (tag, code) = classify(&e);
            let reason = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{tag}]: {reason}");
            ExitCode::from(code)
        }
    }
}

fn classify(e: &anyhow::Error) -> (&'static str, u8) {
    let kind = e.chain().find_map(|c| c.downcast_ref::<Error>()).map(Error::kind);
    match kind {
        Some(ErrorKind::Config) => ("config", 1),
        Some(ErrorKind::Data) => ("data", 2),
        Some(ErrorKind::Numeric) => ("numeric", 3),
        None if e.chain().any(|c| c.is::<std::io::Error>() || c.is::<serde_json::Error>()) => ("data", 2),
        None => ("config", 1),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::PrepareSplits { data, config, out, seed } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let graph = load_graph(&data)?;
            let split = resolve_split(&graph, load_splits(&data)?.as_ref(), &cfg)?;
            create_dir(&out)?;
            write_json(&out.join(SPLIT_FILE), &split)
        }
        Command::Train { data, config, out, seed } => {
            let cfg = load_config(Some(&config), seed)?;
            train(&data, &cfg, &out)
        }
        Command::Evaluate { checkpoint, data, out, config, split, reference } => {
            evaluate(&checkpoint, &data, &out, config, split, reference.as_deref())
        }
        Command::Sweep { data, grid, out, seeds, config, parallel, jobs } => {
            let base = load_config(config.as_deref(), None)?;
            let opts = sweep::Options { seeds, parallel, jobs };
            sweep::run(&data, &grid, &out, &base, &opts)
        }
        Command::ExportEmbeddings { checkpoint, data, out } => {
            let model = load_checkpoint(&checkpoint)?;
            let graph = load_graph(&data)?;
            create_dir(&out)?;
            export_embeddings(&model, &graph, &out.join("embeddings.csv"))?;
            Ok(())
        }
        Command::ExportHardNegatives { run, data, epochs, k, out } => {
            let cfg = load_config(Some(&run.join(CONFIG_FILE)), None)?;
            let graph = load_graph(&data)?;
            let labels = graph.complete_labels()?;
            let mut checkpoints = Vec::with_capacity(epochs.len());
            for e in epochs {
                let path = snapshot_path(&run, e);
                if !path.is_file() {
                    return Err(Error::Data(format!("missing epoch checkpoint {}", path.display())).into());
                }
                checkpoints.push((e, load_checkpoint(&path)?));
            }
            create_dir(&out)?;
            let path = out.join("hard_negatives.csv");
            hard_negative_degree_export(&checkpoints, &graph, &labels, k, cfg.tau, cfg.seed, &path)?;
            Ok(())
        }
    }
}

pub(crate) fn snapshot_path(run: &Path, epoch: usize) -> PathBuf {
    run.join("snapshots").join(format!("epoch_{epoch}.ckpt"))
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::from_toml_str(&read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn read_split(path: &Path) -> Result<DataSplit> {
    serde_json::from_str(&read_to_string(path)?)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())).into())
}

fn write_reports(out: &Path, cfg: &TrainConfig, eval: &Evaluation) -> Result<()> {
    let reports = out.join("reports");
    create_dir(&reports)?;
    let row = GlobalRow {
        model: cfg.model_name().into(),
        dataset: cfg.dataset.clone(),
        encoder: format!("{:?}", cfg.encoder).to_lowercase(),
        r: cfg.unlabelled_fraction,
        seed: cfg.seed,
        micro_f1: eval.scores.micro,
        macro_f1: eval.scores.macro_,
    };
    write_atomic(&reports.join("global.csv"), global_csv(&[row]).as_bytes())?;
    write_atomic(&reports.join("degree.csv"), eval.degree.to_csv().as_bytes())?;
    Ok(())
}

fn prepare_run(data: &Path, cfg: &TrainConfig) -> Result<(Graph, DataSplit)> {
    let graph = load_graph(data)?;
    let split = resolve_split(&graph, load_splits(data)?.as_ref(), cfg)?;
    Ok((graph, split))
}

/// Full run into `out`. Shared by `train` and in-process sweeps.
pub(crate) fn train(data: &Path, cfg: &TrainConfig, out: &Path) -> Result<()> {
    let (graph, split) = prepare_run(data, cfg)?;
    create_dir(out)?;
    write_atomic(&out.join(CONFIG_FILE), cfg.to_toml_string().as_bytes())?;
    write_json(&out.join(SPLIT_FILE), &split)?;
    let mut run = run_sharp(&graph, &split, cfg)?;
    save_checkpoint(&run.model, &out.join(CHECKPOINT_FILE))?;
    if !run.snapshots.is_empty() {
        create_dir(&out.join("snapshots"))?;
        for (epoch, model) in &run.snapshots {
            save_checkpoint(model, &snapshot_path(out, *epoch))?;
        }
    }
    run.record.checkpoint = Some(CHECKPOINT_FILE.into());
    write_json(&out.join(RECORD_FILE), &run.record)?;
    write_reports(out, cfg, &run.evaluation)
}

fn evaluate(
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    config: Option<PathBuf>,
    split: Option<PathBuf>,
    reference: Option<&Path>,
) -> Result<()> {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    let config = config.unwrap_or_else(|| dir.join(CONFIG_FILE));
    let cfg = load_config(config.is_file().then_some(config.as_path()), None)?;
    let reference = reference
        .map(|p| DegreeReport::from_csv(&read_to_string(p)?))
        .transpose()?;
    let model: Model = load_checkpoint(checkpoint)?;
    let graph = load_graph(data)?;
    let split_path = split.unwrap_or_else(|| dir.join(SPLIT_FILE));
    let split = if split_path.is_file() {
        read_split(&split_path)?
    } else {
        resolve_split(&graph, load_splits(data)?.as_ref(), &cfg)?
    };
    split.validate(graph.num_nodes())?;
    let eval = evaluate_checkpoint(&model, &graph, &split, cfg.probe(), reference.as_ref())?;
    create_dir(out)?;
    write_reports(out, &cfg, &eval)
}
