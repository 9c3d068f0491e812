//! Minibatch training over the training queries with periodic validation,
//! best-checkpoint retention and threshold calibration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{hex, AttributedGraph, NormalizedViews};
use crate::metrics::{binarize, default_grid, select_threshold, validate_grid, Counts};
use crate::model::{Model, ModelConfig, QueryInput};
use crate::nn::{Adam, AdamConfig, Mode, BN_MOMENTUM};
use crate::querygen::{Query, QueryMode, QuerySet};
use crate::rng::{shuffle, sub_stream, Stream};
use crate::tape::Tape;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Validate every this many epochs (and after the last one).
    pub val_period: usize,
    pub seed: u64,
    pub grid: Vec<f64>,
    /// Rescale the gradient to at most this global norm.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            epochs: 300,
            batch_size: 4,
            val_period: 10,
            seed: 0,
            grid: default_grid(),
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.val_period == 0 {
            return Err(Error::Config("validation period must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config("clip norm must be positive".into()));
            }
        }
        validate_grid(&self.grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub epoch: usize,
    /// Summed loss over the epoch's training queries.
    pub train_loss: f64,
    pub val_f1: f64,
    pub val_jaccard: f64,
    pub gamma: f64,
}

impl LogEntry {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_F1,val_Jaccard,gamma";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.train_loss, self.val_f1, self.val_jaccard, self.gamma
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: Model,
    pub gamma: f64,
    pub val_f1: f64,
    pub val_jaccard: f64,
    /// Epoch whose weights were kept; 0 is the initialization.
    pub best_epoch: usize,
    pub train_config: TrainConfig,
    pub dataset: String,
    pub dataset_fingerprint: String,
    pub query_mode: QueryMode,
    /// Free-form run description attached by the caller.
    #[serde(default)]
    pub run: serde_json::Value,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "{}: checkpoint version {} is not supported",
                path.display(),
                ck.format_version
            )));
        }
        Ok(ck)
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }

    pub fn check_graph(&self, graph: &AttributedGraph) -> Result<()> {
        if graph.d() != self.model.d {
            return Err(Error::Compatibility(format!(
                "checkpoint expects {} attributes, dataset {} has {}",
                self.model.d,
                graph.name,
                graph.d()
            )));
        }
        let fp = graph.fingerprint();
        if fp != self.dataset_fingerprint {
            return Err(Error::Compatibility(format!(
                "checkpoint was trained on {} ({}), not {} ({})",
                self.dataset, self.dataset_fingerprint, graph.name, fp
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogEntry>,
    /// Summed training loss of every epoch.
    pub epoch_losses: Vec<f64>,
    /// The weights after the final epoch, whether or not they were kept.
    pub last: Model,
}

/// Precomputed model inputs and ground truths for a list of queries.
pub struct Prepared {
    pub inputs: Vec<QueryInput>,
    pub truths: Vec<Vec<bool>>,
}

impl Prepared {
    pub fn new(graph: &AttributedGraph, queries: &[Query]) -> Result<Self> {
        let inputs = queries
            .iter()
            .map(|q| QueryInput::from_query(graph, q))
            .collect::<Result<_>>()?;
        let truths = queries.iter().map(|q| q.ground_truth(graph)).collect();
        Ok(Self { inputs, truths })
    }
}

/// Inference scores of every prepared query.
pub fn score_all(
    model: &Model,
    views: &NormalizedViews,
    inputs: &[QueryInput],
) -> Result<Vec<Vec<f64>>> {
    let cache = model.graph_cache(views)?;
    inputs
        .iter()
        .map(|q| model.scores(views, q, cache.as_ref()))
        .collect()
}

/// Calibrated threshold, F1 and Jaccard on `prepared`.
pub fn validate_model(
    model: &Model,
    views: &NormalizedViews,
    prepared: &Prepared,
    grid: &[f64],
) -> Result<(f64, f64, f64)> {
    let scores = score_all(model, views, &prepared.inputs)?;
    let (gamma, f1) = select_threshold(&scores, &prepared.truths, grid)?;
    let preds: Vec<Vec<bool>> = scores.iter().map(|z| binarize(z, gamma)).collect();
    let jaccard = Counts::pooled(&preds, &prepared.truths)?.jaccard();
    Ok((gamma, f1, jaccard))
}

/// Training loss of one batch and its gradients applied to `model`.
pub struct Trainer<'a> {
    pub model: Model,
    pub optimizer: Adam,
    views: &'a NormalizedViews,
    config: TrainConfig,
    dropout: crate::rng::Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(model: Model, views: &'a NormalizedViews, config: &TrainConfig) -> Self {
        let optimizer = Adam::new(
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
            model.tensor_lens(),
        );
        Self {
            model,
            optimizer,
            views,
            config: config.clone(),
            dropout: sub_stream(config.seed, Stream::Dropout, 0),
        }
    }

    pub fn weights_finite(&mut self) -> bool {
        self.model
            .weights
            .tensors_mut()
            .iter()
            .all(|t| t.all_finite())
    }

    /// One forward, backward and optimizer step over `batch`; returns the
    /// summed loss before the update.
    pub fn step(&mut self, batch: &[&QueryInput], truths: &[&[bool]]) -> Result<f64> {
        let inputs: Vec<QueryInput> = batch.iter().map(|&q| q.clone()).collect();
        let targets: Vec<f64> = truths
            .iter()
            .flat_map(|t| t.iter().map(|&b| b as u8 as f64))
            .collect();
        let mut tape = Tape::new();
        let fwd = self.model.forward(
            &mut tape,
            self.views,
            &inputs,
            Mode::Train,
            Some(&mut self.dropout),
            None,
            true,
        )?;
        let loss_var = tape.bce(fwd.z, &targets)?;
        let loss = tape.value(loss_var).get(0, 0);
        if !loss.is_finite() {
            return Ok(loss);
        }
        let mut grads = tape.backward(loss_var)?;
        let vars: Vec<_> = fwd.weights.named().into_iter().map(|(_, v)| *v).collect();
        let mut owned: Vec<Option<crate::linalg::Matrix>> =
            vars.iter().map(|&v| grads.take(v)).collect();
        if let Some(max_norm) = self.config.clip_norm {
            let norm = owned
                .iter()
                .flatten()
                .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            if norm > max_norm {
                let k = max_norm / norm;
                for g in owned.iter_mut().flatten() {
                    *g = g.scale(k);
                }
            }
        }
        let refs: Vec<Option<&crate::linalg::Matrix>> = owned.iter().map(Option::as_ref).collect();
        let mut params = self.model.weights.tensors_mut();
        self.optimizer.step(&mut params, &refs);
        self.model.apply_bn_updates(&fwd.bn_updates, BN_MOMENTUM);
        Ok(loss)
    }
}

/// Trains on `queries.train`, validating on `queries.validation`.
pub fn train(
    graph: &AttributedGraph,
    views: &NormalizedViews,
    queries: &QuerySet,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    model_config.validate()?;
    if queries.train.is_empty() {
        return Err(Error::Precondition("no training queries".into()));
    }
    if queries.validation.is_empty() {
        return Err(Error::Precondition("no validation queries".into()));
    }
    let train_set = Prepared::new(graph, &queries.train)?;
    let val_set = Prepared::new(graph, &queries.validation)?;

    let mut init_rng = sub_stream(config.seed, Stream::Init, 0);
    let model = Model::init(model_config, graph.d(), &mut init_rng)?;
    let mut trainer = Trainer::new(model, views, config);

    let checkpoint_of =
        |model: &Model, epoch: usize, gamma: f64, f1: f64, jaccard: f64| Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model: model.clone(),
            gamma,
            val_f1: f1,
            val_jaccard: jaccard,
            best_epoch: epoch,
            train_config: config.clone(),
            dataset: graph.name.clone(),
            dataset_fingerprint: graph.fingerprint(),
            query_mode: queries.mode(),
            run: serde_json::Value::Null,
        };

    let mut best: Option<Checkpoint> = None;
    let mut log = Vec::new();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train_set.inputs.len()).collect();
    for epoch in 1..=config.epochs {
        let mut shuffler = sub_stream(config.seed, Stream::Shuffle, epoch as u64);
        shuffle(&mut shuffler, &mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&QueryInput> = chunk.iter().map(|&i| &train_set.inputs[i]).collect();
            let truths: Vec<&[bool]> = chunk
                .iter()
                .map(|&i| train_set.truths[i].as_slice())
                .collect();
            let loss = trainer.step(&batch, &truths)?;
            if !loss.is_finite() || !trainer.weights_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            epoch_loss += loss;
        }
        epoch_losses.push(epoch_loss);
        if epoch % config.val_period == 0 || epoch == config.epochs {
            let (gamma, f1, jaccard) =
                validate_model(&trainer.model, views, &val_set, &config.grid)?;
            log::info!(
                "epoch {epoch}: loss {epoch_loss:.4} val F1 {f1:.4} J {jaccard:.4} gamma {gamma}"
            );
            log.push(LogEntry {
                epoch,
                train_loss: epoch_loss,
                val_f1: f1,
                val_jaccard: jaccard,
                gamma,
            });
            if best.as_ref().is_none_or(|b| f1 > b.val_f1) {
                best = Some(checkpoint_of(&trainer.model, epoch, gamma, f1, jaccard));
            }
        }
    }
    let checkpoint = match best {
        Some(b) => b,
        None => {
            let (gamma, f1, jaccard) =
                validate_model(&trainer.model, views, &val_set, &config.grid)?;
            checkpoint_of(&trainer.model, 0, gamma, f1, jaccard)
        }
    };
    Ok(TrainOutcome {
        checkpoint,
        log,
        epoch_losses,
        last: trainer.model,
    })
}

pub fn write_log(log: &[LogEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from(LogEntry::CSV_HEADER);
    text.push('\n');
    for e in log {
        text.push_str(&e.csv());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::querygen::GenConfig;

    /// Six nodes in two triangles joined by one edge.
    pub(crate) fn toy() -> AttributedGraph {
        let edges = [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)];
        let feats = [
            (0, 0, 1.0),
            (1, 0, 1.0),
            (2, 0, 1.0),
            (2, 1, 1.0),
            (3, 2, 1.0),
            (4, 2, 1.0),
            (5, 2, 1.0),
            (5, 1, 1.0),
        ];
        AttributedGraph::new(
            "toy6",
            6,
            3,
            &edges,
            &feats,
            vec![vec![0, 1, 2], vec![3, 4, 5]],
        )
        .unwrap()
        .0
    }

    fn small() -> ModelConfig {
        ModelConfig {
            channels: vec![8, 8, 1],
            ..Default::default()
        }
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            val_period: 5,
            seed: 3,
            lr: 0.01,
            ..Default::default()
        }
    }

    fn queries(g: &AttributedGraph) -> QuerySet {
        generate(g, 20, [8, 6, 6])
    }

    fn generate(g: &AttributedGraph, count: usize, split: [usize; 3]) -> QuerySet {
        crate::querygen::generate_query_set(
            g,
            &GenConfig {
                count,
                split,
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let g = toy();
        let views = NormalizedViews::new(&g);
        let q = queries(&g);
        let out = train(&g, &views, &q, &small(), &quick(0)).unwrap();
        let init = Model::init(&small(), 3, &mut sub_stream(3, Stream::Init, 0)).unwrap();
        assert_eq!(out.checkpoint.model, init);
        assert_eq!(out.checkpoint.best_epoch, 0);
        assert!(default_grid().contains(&out.checkpoint.gamma));
    }

    #[test]
    fn single_query_loss_collapses() {
        let g = toy();
        let views = NormalizedViews::new(&g);
        let mut q = generate(&g, 3, [1, 1, 1]);
        q.train.truncate(1);
        let config = TrainConfig {
            epochs: 300,
            val_period: 100,
            ..quick(300)
        };
        let out = train(&g, &views, &q, &small(), &config).unwrap();
        let first = out.epoch_losses[0];
        let last = *out.epoch_losses.last().unwrap();
        assert!(last < 0.1 * first, "loss went from {first} to {last}");
    }

    #[test]
    fn training_is_deterministic() {
        let g = toy();
        let views = NormalizedViews::new(&g);
        let q = queries(&g);
        let a = train(&g, &views, &q, &small(), &quick(10)).unwrap();
        let b = train(&g, &views, &q, &small(), &quick(10)).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn step_changes_only_trainables_and_stats() {
        let g = toy();
        let views = NormalizedViews::new(&g);
        let q = queries(&g);
        let prepared = Prepared::new(&g, &q.train).unwrap();
        let model = Model::init(&small(), 3, &mut sub_stream(0, Stream::Init, 0)).unwrap();
        let before = model.clone();
        let mut t = Trainer::new(model, &views, &quick(1));
        let batch: Vec<&QueryInput> = prepared.inputs.iter().take(4).collect();
        let truths: Vec<&[bool]> = prepared
            .truths
            .iter()
            .take(4)
            .map(|t| t.as_slice())
            .collect();
        t.step(&batch, &truths).unwrap();
        assert_eq!(t.model.config, before.config);
        assert_eq!(t.model.d, before.d);
        assert_ne!(t.model.weights, before.weights);
        assert_ne!(t.model.running, before.running);
        // inference never touches running statistics
        let running = t.model.running.clone();
        score_all(&t.model, &views, &prepared.inputs).unwrap();
        assert_eq!(t.model.running, running);
    }

    #[test]
    fn batch_loss_is_sum_of_query_losses() {
        let g = toy();
        let views = NormalizedViews::new(&g);
        let q = queries(&g);
        let prepared = Prepared::new(&g, &q.train[..4]).unwrap();
        let model = Model::init(&small(), 3, &mut sub_stream(0, Stream::Init, 0)).unwrap();
        let targets = |ts: &[Vec<bool>]| -> Vec<f64> {
            ts.iter().flatten().map(|&b| b as u8 as f64).collect()
        };
        let mut tape = Tape::new();
        let fwd = model
            .forward(
                &mut tape,
                &views,
                &prepared.inputs,
                Mode::Infer,
                None,
                None,
                false,
            )
            .unwrap();
        let joint = tape.bce(fwd.z, &targets(&prepared.truths)).unwrap();
        let joint = tape.value(joint).get(0, 0);
        let mut sum = 0.0;
        for (input, truth) in prepared.inputs.iter().zip(&prepared.truths) {
            let mut tape = Tape::new();
            let fwd = model
                .forward(
                    &mut tape,
                    &views,
                    std::slice::from_ref(input),
                    Mode::Infer,
                    None,
                    None,
                    false,
                )
                .unwrap();
            let l = tape
                .bce(fwd.z, &targets(std::slice::from_ref(truth)))
                .unwrap();
            sum += tape.value(l).get(0, 0);
        }
        assert!((joint - sum).abs() < 1e-10);
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let g = toy();
        let views = NormalizedViews::new(&g);
        let q = queries(&g);
        let out = train(&g, &views, &q, &small(), &quick(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        out.checkpoint.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, out.checkpoint);
        let test = Prepared::new(&g, &q.test).unwrap();
        let a = score_all(&out.checkpoint.model, &views, &test.inputs).unwrap();
        let b = score_all(&back.model, &views, &test.inputs).unwrap();
        assert_eq!(a, b);
        back.check_graph(&g).unwrap();
    }

    #[test]
    fn divergence_is_reported() {
        let g = toy();
        let views = NormalizedViews::new(&g);
        let q = queries(&g);
        let config = TrainConfig {
            lr: 1e308,
            ..quick(30)
        };
        match train(&g, &views, &q, &small(), &config) {
            Err(Error::Divergence { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(TrainConfig {
            batch_size: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            grid: vec![1.0],
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            clip_norm: Some(0.0),
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn log_lines() {
        let e = LogEntry {
            epoch: 10,
            train_loss: 1.5,
            val_f1: 0.5,
            val_jaccard: 0.25,
            gamma: 0.45,
        };
        assert_eq!(e.csv(), "10,1.5,0.5,0.25,0.45");
    }
}
