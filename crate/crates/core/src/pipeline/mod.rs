//! Two-step training: contrastive pre-training on the labelled split,
//! pseudo-labelling of the unlabelled split, then fine-tuning with early
//! stopping on validation F1.

mod config;

pub use config::{FinetuneGraph, TrainConfig};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::{augment_pair, AugmentationConfig, AugmentedView};
use crate::autodiff::{OptimizerState, Tape};
use crate::encoders::{GraphOperator, Model};
use crate::error::{Error, Result};
use crate::eval::{evaluate_checkpoint, evaluate_embeddings, Evaluation, LogisticProbe, ProbeConfig};
use crate::graph::{induced_subgraph, split_from_published, split_nodes, DataSplit, Graph, PublishedSplit};
use crate::losses::{loss_on, supervised_loss_on, LossKind};
use crate::matrix::Matrix;
use crate::rng::{self, ids};

/// Published split when available and enabled, otherwise a seeded random one.
pub fn resolve_split(graph: &Graph, published: Option<&PublishedSplit>, cfg: &TrainConfig) -> Result<DataSplit> {
    match published {
        Some(p) if cfg.use_published_split => split_from_published(graph, p, cfg.unlabelled_fraction, cfg.seed),
        _ => split_nodes(
            graph,
            cfg.train_fraction,
            cfg.val_fraction,
            cfg.unlabelled_fraction,
            cfg.seed,
        ),
    }
}

fn with_epoch(epoch: usize, e: Error) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}: {m}")),
        other => other,
    }
}

/// One optimizer step on two fresh views of `graph`. `stream` keys the
/// view randomness (phase and epoch). Returns the loss before the update.
pub fn train_step(
    model: &mut Model,
    opt: &mut OptimizerState,
    graph: &Graph,
    labels: &[usize],
    cfg: &TrainConfig,
    stream: &[u64],
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true)?;
    let kind = cfg.encoder;
    let loss = if cfg.loss == LossKind::Supervised {
        let view = AugmentedView::identity(graph);
        let op = GraphOperator::for_encoder(kind, &view.adjacency);
        let x = tape.constant(view.features)?;
        let h = bound.encode(&mut tape, &op, x)?;
        let z = bound.project(&mut tape, h)?;
        let labels: Vec<Option<usize>> = labels.iter().copied().map(Some).collect();
        supervised_loss_on(&mut tape, z, &labels)?
    } else {
        let aug = AugmentationConfig {
            p_e: cfg.p_e,
            p_f: cfg.p_f,
            seed: cfg.seed,
        };
        let (v1, v2) = augment_pair(graph, &aug, stream);
        let project = |tape: &mut Tape, v: AugmentedView| -> Result<_> {
            let op = GraphOperator::for_encoder(kind, &v.adjacency);
            let x = tape.constant(v.features)?;
            let h = bound.encode(tape, &op, x)?;
            bound.project(tape, h)
        };
        let z1 = project(&mut tape, v1)?;
        let z2 = project(&mut tape, v2)?;
        loss_on(&mut tape, cfg.loss, z1, z2, labels, &cfg.har(graph.num_classes()))?
    };
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }
    tape.backward(loss)?;
    let grads: Vec<Matrix> = bound
        .vars()
        .iter()
        .zip(model.params())
        .map(|(&v, p)| tape.grad(v).cloned().unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols())))
        .collect();
    let grad_refs: Vec<&Matrix> = grads.iter().collect();
    let mut params: Vec<&mut Matrix> = model.params_mut().iter_mut().collect();
    opt.step(&mut params, &grad_refs)?;
    Ok(value)
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub model: Model,
    pub losses: Vec<f64>,
    /// `(epoch, model)` for every configured snapshot epoch that was reached.
    pub snapshots: Vec<(usize, Model)>,
}

/// Train from a seeded initialization for the full epoch budget.
pub fn pretrain(graph: &Graph, cfg: &TrainConfig) -> Result<Pretrained> {
    cfg.validate()?;
    let labels = graph.complete_labels()?;
    let spec = cfg.model_spec(graph.num_features(), graph.num_classes());
    let mut model = Model::init(spec, &mut rng::stream(cfg.seed, &[ids::INIT]))?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, cfg.weight_decay)?;
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut snapshots = Vec::new();
    if cfg.snapshot_epochs.contains(&0) {
        snapshots.push((0, model.clone()));
    }
    for epoch in 1..=cfg.epochs {
        let stream = [ids::PRETRAIN, epoch as u64];
        let loss =
            train_step(&mut model, &mut opt, graph, &labels, cfg, &stream).map_err(|e| with_epoch(epoch, e))?;
        losses.push(loss);
        if cfg.snapshot_epochs.contains(&epoch) {
            snapshots.push((epoch, model.clone()));
        }
    }
    Ok(Pretrained {
        model,
        losses,
        snapshots,
    })
}

/// Fit a probe on frozen embeddings of `labelled` and predict `unlabelled`.
pub fn generate_pseudo_labels(
    model: &Model,
    labelled: &Graph,
    unlabelled: &Graph,
    probe: ProbeConfig,
) -> Result<Vec<usize>> {
    if unlabelled.num_nodes() == 0 {
        return Ok(Vec::new());
    }
    let y = labelled.complete_labels()?;
    let h = model.embed_graph(labelled)?;
    let fitted = LogisticProbe::fit(&h, &y, labelled.num_classes(), probe)?;
    fitted.predict(&model.embed_graph(unlabelled)?)
}

/// Patience-based stopping on a score that should increase.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Record a round; returns whether it is a new best.
    pub fn observe(&mut self, round: usize, score: f64) -> bool {
        if self.best.map_or(true, |(_, b)| score > b) {
            self.best = Some((round, score));
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRound {
    pub epoch: usize,
    pub loss: f64,
    pub f1: f64,
    pub best_f1: f64,
}

#[derive(Debug, Clone)]
pub struct Finetuned {
    /// Checkpoint of the best validation round (the input if none ran).
    pub model: Model,
    pub losses: Vec<f64>,
    pub rounds: Vec<ValidationRound>,
    pub stopped_early: bool,
}

/// Fine-tune with a caller-supplied validation score. The epoch cap is
/// `cfg.epochs`; stops after `cfg.patience` rounds without improvement.
pub fn finetune_with<V>(start: &Model, graph: &Graph, cfg: &TrainConfig, mut validate: V) -> Result<Finetuned>
where
    V: FnMut(&Model) -> Result<f64>,
{
    cfg.validate()?;
    let mut out = Finetuned {
        model: start.clone(),
        losses: Vec::new(),
        rounds: Vec::new(),
        stopped_early: false,
    };
    if graph.num_nodes() == 0 {
        return Ok(out);
    }
    let labels = graph.complete_labels()?;
    let mut model = start.clone();
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, cfg.weight_decay)?;
    let mut stop = EarlyStopping::new(cfg.patience);
    for epoch in 1..=cfg.epochs {
        let stream = [ids::FINETUNE, epoch as u64];
        let loss =
            train_step(&mut model, &mut opt, graph, &labels, cfg, &stream).map_err(|e| with_epoch(epoch, e))?;
        out.losses.push(loss);
        let f1 = validate(&model)?;
        if stop.observe(epoch, f1) {
            out.model = model.clone();
        }
        out.rounds.push(ValidationRound {
            epoch,
            loss,
            f1,
            best_f1: stop.best().map_or(f1, |b| b.1),
        });
        if stop.should_stop() {
            out.stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    Ok(out)
}

/// Fine-tune on `train_graph`, validating each round with a probe re-fit on
/// the labelled split of `full` and scored (micro F1) on its validation set.
pub fn finetune(start: &Model, train_graph: &Graph, full: &Graph, split: &DataSplit, cfg: &TrainConfig) -> Result<Finetuned> {
    if train_graph.num_nodes() > 0 && split.val.is_empty() {
        return Err(Error::Data("fine-tuning needs a non-empty validation set".into()));
    }
    let probe = cfg.probe();
    finetune_with(start, train_graph, cfg, |m| {
        let h = m.embed_graph(full)?;
        Ok(evaluate_embeddings(&h, full, &split.train_labelled, &split.val, probe, None)?
            .scores
            .micro)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub model: String,
    pub encoder: String,
    pub unlabelled_fraction: f64,
    pub seed: u64,
    pub pretrain_losses: Vec<f64>,
    pub finetune_losses: Vec<f64>,
    pub validation: Vec<ValidationRound>,
    pub best_f1: Option<f64>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub pseudo_labelled: usize,
    pub test_micro_f1: f64,
    pub test_macro_f1: f64,
    pub checkpoint: Option<String>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone)]
pub struct SharpRun {
    pub model: Model,
    pub record: RunRecord,
    pub evaluation: Evaluation,
    pub snapshots: Vec<(usize, Model)>,
}

/// Nodes and labels of the fine-tuning graph.
fn finetune_nodes(split: &DataSplit, graph: &Graph, pseudo: &[usize], which: FinetuneGraph) -> Vec<(usize, usize)> {
    let mut nodes: Vec<(usize, usize)> = split.train_unlabelled.iter().copied().zip(pseudo.iter().copied()).collect();
    if which == FinetuneGraph::Train {
        nodes.extend(
            split
                .train_labelled
                .iter()
                .map(|&v| (v, graph.labels()[v].expect("labelled split has labels"))),
        );
        nodes.sort_unstable();
    }
    nodes
}

/// Pre-train, pseudo-label, fine-tune, then evaluate on the test split.
pub fn run_sharp(graph: &Graph, split: &DataSplit, cfg: &TrainConfig) -> Result<SharpRun> {
    cfg.validate()?;
    split.validate(graph.num_nodes())?;
    let started = Instant::now();
    let (labelled, _) = induced_subgraph(graph, &split.train_labelled)?;
    let pre = pretrain(&labelled, cfg)?;
    let (unlabelled, _) = induced_subgraph(graph, &split.train_unlabelled)?;
    let pseudo = generate_pseudo_labels(&pre.model, &labelled, &unlabelled, cfg.probe())?;
    let ft = if pseudo.is_empty() {
        Finetuned {
            model: pre.model.clone(),
            losses: Vec::new(),
            rounds: Vec::new(),
            stopped_early: false,
        }
    } else {
        let nodes = finetune_nodes(split, graph, &pseudo, cfg.finetune_graph);
        let ids: Vec<usize> = nodes.iter().map(|n| n.0).collect();
        let (sub, _) = induced_subgraph(graph, &ids)?;
        let sub = sub.with_labels(nodes.iter().map(|n| Some(n.1)).collect())?;
        finetune(&pre.model, &sub, graph, split, cfg)?
    };
    let evaluation = evaluate_checkpoint(&ft.model, graph, split, cfg.probe(), None)?;
    let best = ft.rounds.iter().max_by(|a, b| a.f1.total_cmp(&b.f1).then(b.epoch.cmp(&a.epoch)));
    let record = RunRecord {
        dataset: cfg.dataset.clone(),
        model: cfg.model_name().into(),
        encoder: format!("{:?}", cfg.encoder).to_lowercase(),
        unlabelled_fraction: cfg.unlabelled_fraction,
        seed: cfg.seed,
        pretrain_losses: pre.losses,
        finetune_losses: ft.losses,
        best_f1: best.map(|r| r.f1),
        best_epoch: best.map(|r| r.epoch),
        validation: ft.rounds,
        stopped_early: ft.stopped_early,
        pseudo_labelled: pseudo.len(),
        test_micro_f1: evaluation.scores.micro,
        test_macro_f1: evaluation.scores.macro_,
        checkpoint: None,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(SharpRun {
        model: ft.model,
        record,
        evaluation,
        snapshots: pre.snapshots,
    })
}
