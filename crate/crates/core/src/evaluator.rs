//! Test-set evaluation with per-query timing, and the ablation, threshold
//! and aggregation experiment drivers.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AttributedGraph, NormalizedViews};
use crate::metrics::{binarize, f1_curve, Counts};
use crate::model::{Aggregation, ModelConfig, QueryInput, Variant};
use crate::querygen::{Query, QueryMode, QuerySet};
use crate::trainer::{score_all, train, Checkpoint, Prepared, TrainConfig};

/// What the per-query wall-clock time covers.
pub const TIMING_SCOPE: &str =
    "query distances, seed and attribute vectors, one inference pass; graph normalization excluded";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub f1: f64,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub jaccard: f64,
    pub gamma: f64,
    pub counts: Counts,
    pub per_query: Vec<QueryScore>,
    pub time_ms_mean: f64,
    pub time_ms_var: f64,
    pub times_ms: Vec<f64>,
    pub timing_scope: String,
    pub dataset: String,
    pub mode: QueryMode,
    pub seed: u64,
    pub checkpoint_fingerprint: String,
}

impl EvalReport {
    /// The report with all wall-clock fields zeroed, for comparing runs.
    pub fn without_timing(&self) -> EvalReport {
        EvalReport {
            time_ms_mean: 0.0,
            time_ms_var: 0.0,
            times_ms: vec![0.0; self.times_ms.len()],
            ..self.clone()
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Population mean and variance.
fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Scores `queries` with the checkpoint's model and threshold.
pub fn evaluate(
    checkpoint: &Checkpoint,
    graph: &AttributedGraph,
    views: &NormalizedViews,
    queries: &[Query],
) -> Result<EvalReport> {
    if graph.d() != checkpoint.model.d || views.n != graph.n() {
        return Err(Error::Compatibility(format!(
            "checkpoint expects d = {}, got a graph with n = {}, d = {}",
            checkpoint.model.d,
            graph.n(),
            graph.d()
        )));
    }
    let model = &checkpoint.model;
    let cache = model.graph_cache(views)?;
    let mut preds = Vec::with_capacity(queries.len());
    let mut truths = Vec::with_capacity(queries.len());
    let mut times_ms = Vec::with_capacity(queries.len());
    for q in queries {
        let start = Instant::now();
        let input = QueryInput::from_query(graph, q)?;
        let z = model.scores(views, &input, cache.as_ref())?;
        let pred = binarize(&z, checkpoint.gamma);
        times_ms.push(start.elapsed().as_secs_f64() * 1e3);
        preds.push(pred);
        truths.push(q.ground_truth(graph));
    }
    let counts = Counts::pooled(&preds, &truths)?;
    let per_query = preds
        .iter()
        .zip(&truths)
        .map(|(p, t)| {
            let c = Counts::of(p, t)?;
            Ok(QueryScore {
                f1: c.f1(),
                jaccard: c.jaccard(),
            })
        })
        .collect::<Result<_>>()?;
    let (time_ms_mean, time_ms_var) = mean_var(&times_ms);
    Ok(EvalReport {
        precision: counts.precision(),
        recall: counts.recall(),
        f1: counts.f1(),
        jaccard: counts.jaccard(),
        gamma: checkpoint.gamma,
        counts,
        per_query,
        time_ms_mean,
        time_ms_var,
        times_ms,
        timing_scope: TIMING_SCOPE.to_string(),
        dataset: checkpoint.dataset.clone(),
        mode: checkpoint.query_mode,
        seed: checkpoint.train_config.seed,
        checkpoint_fingerprint: checkpoint.fingerprint(),
    })
}

/// One trained-and-evaluated configuration.
#[derive(Debug, Clone)]
pub struct Run {
    pub label: String,
    pub checkpoint: Checkpoint,
    pub report: EvalReport,
}

fn train_and_evaluate(
    label: String,
    graph: &AttributedGraph,
    views: &NormalizedViews,
    queries: &QuerySet,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<Run> {
    log::info!("training {label}");
    let outcome = train(graph, views, queries, model_config, train_config)?;
    let report = evaluate(&outcome.checkpoint, graph, views, &queries.test)?;
    Ok(Run {
        label,
        checkpoint: outcome.checkpoint,
        report,
    })
}

/// The full model followed by each variant, all trained with the same seed
/// and scored on the same test queries.
pub fn run_ablation(
    graph: &AttributedGraph,
    views: &NormalizedViews,
    queries: &QuerySet,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    variants: &[Variant],
) -> Result<Vec<Run>> {
    let mut runs = vec![train_and_evaluate(
        Variant::Full.name().to_string(),
        graph,
        views,
        queries,
        model_config,
        train_config,
    )?];
    for &v in variants.iter().filter(|&&v| v != Variant::Full) {
        runs.push(train_and_evaluate(
            v.name().to_string(),
            graph,
            views,
            queries,
            &v.apply(model_config),
            train_config,
        )?);
    }
    Ok(runs)
}

/// Pooled F1 of the checkpoint's scores at each grid threshold.
pub fn sweep_threshold(
    checkpoint: &Checkpoint,
    graph: &AttributedGraph,
    views: &NormalizedViews,
    queries: &[Query],
    grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let prepared = Prepared::new(graph, queries)?;
    let scores = score_all(&checkpoint.model, views, &prepared.inputs)?;
    f1_curve(&scores, &prepared.truths, grid)
}

/// `max - min` of the curve's values over thresholds in `[lo, hi]`.
pub fn curve_spread(curve: &[(f64, f64)], lo: f64, hi: f64) -> f64 {
    let inside: Vec<f64> = curve
        .iter()
        .filter(|(g, _)| *g >= lo - 1e-12 && *g <= hi + 1e-12)
        .map(|&(_, f)| f)
        .collect();
    if inside.is_empty() {
        return 0.0;
    }
    let max = inside.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = inside.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

/// One training run per aggregation function.
pub fn sweep_aggregation(
    graph: &AttributedGraph,
    views: &NormalizedViews,
    queries: &QuerySet,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    aggregations: &[Aggregation],
) -> Result<Vec<Run>> {
    aggregations
        .iter()
        .map(|&agg| {
            let config = ModelConfig {
                aggregation: agg,
                ..model_config.clone()
            };
            train_and_evaluate(
                agg.to_string(),
                graph,
                views,
                queries,
                &config,
                train_config,
            )
        })
        .collect()
}

/// `x,value` rows under a header.
pub fn curve_csv<X: std::fmt::Display>(header: &str, rows: &[(X, f64)]) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for (x, v) in rows {
        out.push_str(&format!("{x},{v}\n"));
    }
    out
}

pub fn write_curve<X: std::fmt::Display>(
    path: impl AsRef<Path>,
    header: &str,
    rows: &[(X, f64)],
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, curve_csv(header, rows)).map_err(|e| Error::io(path, e))
}
