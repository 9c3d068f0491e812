//! `qdgcn`: ingest datasets, generate queries, train, evaluate, predict,
//! run ablations and sweeps, export embeddings.
//!
//! Exit codes: 0 success, 1 usage or other error, 2 format, 3 query
//! generation, 4 incompatible artifacts, 5 training divergence.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mimalloc::MiMalloc;
use qdgcn_core::evaluator::{
    curve_spread, evaluate, run_ablation, sweep_aggregation, sweep_threshold, write_curve, Run,
};
use qdgcn_core::graph::write_canonical;
use qdgcn_core::model::QueryInput;
use qdgcn_core::querygen::{generate_query_set, read_query_set, validate_queries, write_query_set};
use qdgcn_core::trainer::{train, write_log};
use qdgcn_core::{
    Aggregation, AttributedGraph, Checkpoint, Error, NormalizedViews, QueryMode, QuerySet, Result,
    Variant,
};
use serde::Serialize;

use config::{load_dataset, parse_split, DataFormat, RunConfig};

#[derive(Parser)]
#[command(
    name = "qdgcn",
    version,
    about = "Query-driven GCN for attributed community search"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read raw dataset files and write the canonical layout.
    Ingest(Common),
    /// Generate train/validation/test queries for a dataset.
    Genqueries(Common),
    /// Train a model and write its best checkpoint and training log.
    Train(Common),
    /// Evaluate a checkpoint on the test queries.
    Eval(Common),
    /// Predict one community and print its node ids.
    Predict(Common),
    /// Train the full model and each ablation variant.
    Ablate(Common),
    /// Threshold sweep of a checkpoint, or an aggregation sweep with `--agg`.
    Sweep(Common),
    /// Write the last-layer encoder outputs of one query.
    ExportEmbeddings(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// citation, ego or canonical.
    #[arg(long)]
    format: Option<DataFormat>,
    /// community-attrs, node-attrs or none.
    #[arg(long)]
    mode: Option<QueryMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    count: Option<usize>,
    /// train:val:test query counts.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Components to remove: ge, se, ae, ff. Repeatable or comma-separated.
    #[arg(long, value_delimiter = ',')]
    disable: Vec<Variant>,
    /// Aggregation function(s); several values make `sweep` compare them.
    #[arg(long, value_delimiter = ',')]
    agg: Vec<Aggregation>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Query node ids for predict and export-embeddings.
    #[arg(long, value_delimiter = ',')]
    nodes: Vec<usize>,
    /// Query attributes as ids or attribute names.
    #[arg(long, value_delimiter = ',')]
    attrs: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.dataset {
            c.dataset = Some(d.clone());
        }
        if let Some(f) = self.format {
            c.format = f;
        }
        if let Some(o) = &self.out {
            c.out = Some(o.clone());
        }
        if let Some(m) = self.mode {
            c.queries.mode = m;
        }
        if let Some(s) = self.seed {
            c.queries.seed = s;
            c.train.seed = s;
        }
        if let Some(n) = self.count {
            c.queries.count = n;
        }
        if let Some(s) = &self.split {
            c.queries.split = parse_split(s)?;
        }
        if let Some(e) = self.epochs {
            c.train.epochs = e;
        }
        if let [agg] = self.agg[..] {
            c.model.aggregation = agg;
        }
        for v in &self.disable {
            c.model = v.apply(&c.model);
        }
        Ok(c)
    }

    fn require<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::Config(format!("--{flag} is required")))
    }
}

/// An output document with the run configuration attached.
#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    run: &'a RunConfig,
    #[serde(flatten)]
    body: T,
}

fn write_json<T: Serialize>(path: &Path, run: &RunConfig, body: T) -> Result<()> {
    let text = serde_json::to_string_pretty(&Artifact { run, body })?;
    write_file(path, text)
}

fn write_file(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn graph_of(run: &RunConfig) -> Result<AttributedGraph> {
    Ok(load_dataset(run.dataset()?, run.format)?.0)
}

fn queries_of(args: &Common, graph: &AttributedGraph) -> Result<QuerySet> {
    let set = read_query_set(args.require(&args.queries, "queries")?)?;
    set.check_graph(graph)?;
    validate_queries(&set, graph)?;
    Ok(set)
}

fn checkpoint_of(args: &Common, graph: &AttributedGraph) -> Result<Checkpoint> {
    let ck = Checkpoint::load(args.require(&args.checkpoint, "checkpoint")?)?;
    ck.check_graph(graph)?;
    Ok(ck)
}

fn resolve_attrs(graph: &AttributedGraph, attrs: &[String]) -> Result<Vec<usize>> {
    attrs
        .iter()
        .map(|a| {
            if let Ok(id) = a.parse::<usize>() {
                return Ok(id);
            }
            graph
                .attr_labels
                .as_ref()
                .and_then(|labels| labels.iter().position(|l| l == a))
                .ok_or_else(|| Error::Config(format!("unknown attribute `{a}`")))
        })
        .collect()
}

fn ingest(args: &Common) -> Result<()> {
    let run = args.run_config()?;
    let (graph, report) = load_dataset(run.dataset()?, run.format)?;
    let out = run.out()?;
    write_canonical(&graph, out)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        name: &'a str,
        n: usize,
        m: usize,
        d: usize,
        k: usize,
        average_community_size: f64,
        fingerprint: String,
        load_report: &'a qdgcn_core::graph::LoadReport,
    }
    let summary = Summary {
        name: &graph.name,
        n: graph.n(),
        m: graph.m(),
        d: graph.d(),
        k: graph.k(),
        average_community_size: graph.average_community_size(),
        fingerprint: graph.fingerprint(),
        load_report: &report,
    };
    write_json(&out.join("summary.json"), &run, &summary)?;
    println!(
        "{}: n={} m={} d={} K={} AS={:.2}",
        summary.name, summary.n, summary.m, summary.d, summary.k, summary.average_community_size
    );
    Ok(())
}

fn genqueries(args: &Common) -> Result<()> {
    let run = args.run_config()?;
    let graph = graph_of(&run)?;
    let set = generate_query_set(&graph, &run.queries)?;
    if set.flagged {
        log::warn!("fewer distinct queries than requested; the set repeats queries");
    }
    let out = run.out()?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_query_set(&set, out)?;
    println!("{} queries written to {}", set.len(), out.display());
    Ok(())
}

fn cmd_train(args: &Common) -> Result<()> {
    let run = args.run_config()?;
    let graph = graph_of(&run)?;
    let queries = queries_of(args, &graph)?;
    let views = NormalizedViews::new(&graph);
    let out = run.out()?;
    create_dir(out)?;
    let outcome = train(&graph, &views, &queries, &run.model, &run.train)?;
    let mut ck = outcome.checkpoint;
    ck.run = serde_json::to_value(&run)?;
    ck.save(out.join("checkpoint.json"))?;
    write_log(&outcome.log, out.join("train_log.csv"))?;
    println!(
        "best epoch {}: validation F1 {:.4}, Jaccard {:.4}, gamma {}",
        ck.best_epoch, ck.val_f1, ck.val_jaccard, ck.gamma
    );
    Ok(())
}

fn eval(args: &Common) -> Result<()> {
    let run = args.run_config()?;
    let graph = graph_of(&run)?;
    let ck = checkpoint_of(args, &graph)?;
    let queries = queries_of(args, &graph)?;
    let views = NormalizedViews::new(&graph);
    let report = evaluate(&ck, &graph, &views, &queries.test)?;
    if let Some(out) = &run.out {
        #[derive(Serialize)]
        struct Doc<'a> {
            #[serde(flatten)]
            report: &'a qdgcn_core::EvalReport,
            training_run: &'a serde_json::Value,
        }
        let doc = Doc {
            report: &report,
            training_run: &ck.run,
        };
        write_json(out, &run, doc)?;
    }
    println!(
        "F1 {:.4} Jaccard {:.4} precision {:.4} recall {:.4} time {:.3} ms",
        report.f1, report.jaccard, report.precision, report.recall, report.time_ms_mean
    );
    Ok(())
}

fn predict(args: &Common) -> Result<()> {
    let run = args.run_config()?;
    let graph = graph_of(&run)?;
    let ck = checkpoint_of(args, &graph)?;
    let attrs = resolve_attrs(&graph, &args.attrs)?;
    let views = NormalizedViews::new(&graph);
    let input = QueryInput::new(&graph, &args.nodes, &attrs)?;
    let z = ck.model.scores(&views, &input, None)?;
    let members: Vec<String> = z
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= ck.gamma)
        .map(|(v, _)| v.to_string())
        .collect();
    println!("{}", members.join(" "));
    Ok(())
}

fn print_runs(runs: &[Run]) {
    for r in runs {
        println!(
            "{}: F1 {:.4} Jaccard {:.4}",
            r.label, r.report.f1, r.report.jaccard
        );
    }
}

fn save_runs(runs: &[Run], out: &Path, run: &RunConfig) -> Result<Vec<(String, f64)>> {
    create_dir(out)?;
    for r in runs {
        let mut ck = r.checkpoint.clone();
        ck.run = serde_json::to_value(run)?;
        ck.save(out.join(format!("{}.checkpoint.json", r.label)))?;
        write_json(
            &out.join(format!("{}.report.json", r.label)),
            run,
            &r.report,
        )?;
    }
    Ok(runs
        .iter()
        .map(|r| (r.label.clone(), r.report.f1))
        .collect())
}

fn ablate(args: &Common) -> Result<()> {
    let run = args.run_config()?;
    let graph = graph_of(&run)?;
    let queries = queries_of(args, &graph)?;
    let views = NormalizedViews::new(&graph);
    // `--disable` here picks the variants; the base model stays complete
    let variants = if args.disable.is_empty() {
        Variant::ABLATIONS.to_vec()
    } else {
        args.disable.clone()
    };
    let base = Common {
        disable: Vec::new(),
        ..args.clone()
    }
    .run_config()?;
    let runs = run_ablation(
        &graph,
        &views,
        &queries,
        &base.model,
        &base.train,
        &variants,
    )?;
    print_runs(&runs);
    let rows = save_runs(&runs, base.out()?, &base)?;
    write_curve(base.out()?.join("ablation.csv"), "variant,F1", &rows)
}

fn sweep(args: &Common) -> Result<()> {
    let run = args.run_config()?;
    let graph = graph_of(&run)?;
    let queries = queries_of(args, &graph)?;
    let views = NormalizedViews::new(&graph);
    let out = run.out()?;
    if args.agg.len() > 1 {
        let runs = sweep_aggregation(&graph, &views, &queries, &run.model, &run.train, &args.agg)?;
        print_runs(&runs);
        let rows = save_runs(&runs, out, &run)?;
        return write_curve(out.join("aggregation.csv"), "aggregation,F1", &rows);
    }
    let ck = checkpoint_of(args, &graph)?;
    let curve = sweep_threshold(&ck, &graph, &views, &queries.test, &run.train.grid)?;
    create_dir(out)?;
    write_curve(out.join("threshold.csv"), "gamma,F1", &curve)?;
    for (g, f) in &curve {
        println!("{g},{f}");
    }
    println!(
        "spread over [0.3, 0.7]: {:.4}",
        curve_spread(&curve, 0.3, 0.7)
    );
    Ok(())
}

fn export_embeddings(args: &Common) -> Result<()> {
    let run = args.run_config()?;
    let graph = graph_of(&run)?;
    let ck = checkpoint_of(args, &graph)?;
    let attrs = resolve_attrs(&graph, &args.attrs)?;
    let views = NormalizedViews::new(&graph);
    let input = QueryInput::new(&graph, &args.nodes, &attrs)?;
    let emb = ck.model.trace(&views, &input, None)?.embedding()?;
    // one row per node: id, then the embedding
    let mut text = String::new();
    for v in 0..emb.rows() {
        text.push_str(&v.to_string());
        for x in emb.row(v) {
            text.push_str(&format!("\t{x}"));
        }
        text.push('\n');
    }
    write_file(run.out()?, text)?;
    println!("{} x {} embedding written", emb.rows(), emb.cols());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. }
        | Error::EmptyDataset
        | Error::Format(_)
        | Error::InvalidGraph(_)
        | Error::Io { .. }
        | Error::Json(_) => 2,
        Error::Generation(_) => 3,
        Error::Compatibility(_) => 4,
        Error::Divergence { .. } => 5,
        Error::Shape(_) | Error::Precondition(_) | Error::Config(_) => 1,
    }
}

#[global_allocator]
static GLOBAL: MiMalloc = MiMalloc;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Genqueries(a) => genqueries(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Ablate(a) => ablate(a),
        Command::Sweep(a) => sweep(a),
        Command::ExportEmbeddings(a) => export_embeddings(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
