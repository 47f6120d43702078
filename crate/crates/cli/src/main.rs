use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chatgnn::analysis::{
    attention_cosine, depth_sweep, energy_decay_experiment, format_cosine_dumps,
};
use chatgnn::data::{load_dataset, synthetic, write_metrics_csv, write_summary, Dataset};
use chatgnn::gradsuite::run_suite;
use chatgnn::model::{ChatGnnModel, LayerKind, ModelConfig};
use chatgnn::trainer::{evaluate, train_splits, Metric, TrainConfig};
use chatgnn::Rng;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Channel-attentive graph neural networks for node classification.
#[derive(Parser)]
#[command(name = "chatgnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on one or more splits; writes checkpoints, metrics and a summary.
    Train(TrainCmd),
    /// Score a checkpoint on one split.
    Eval(EvalCmd),
    /// Mean test score against depth for several layer kinds.
    DepthSweep(SweepCmd),
    /// Dirichlet energy of untrained stacked layers on a lattice.
    Dirichlet(DirichletCmd),
    /// Cosine similarities between the channel weights of a trained model.
    Attention(AttentionCmd),
    /// Finite-difference check of every differentiable operation.
    Gradcheck(GradcheckCmd),
    /// Write a generated dataset in the JSON dataset format.
    Synthetic(SyntheticCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn on(self) -> bool {
        matches!(self, Toggle::On)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Chat,
    Gcn,
    ScalarAttention,
    FreqGate,
}

impl From<KindArg> for LayerKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Chat => LayerKind::Chat,
            KindArg::Gcn => LayerKind::Gcn,
            KindArg::ScalarAttention => LayerKind::ScalarAttention,
            KindArg::FreqGate => LayerKind::FreqGate,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Accuracy,
    RocAuc,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Accuracy => Metric::Accuracy,
            MetricArg::RocAuc => Metric::RocAuc,
        }
    }
}

#[derive(Args)]
struct ModelFlags {
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, value_enum, default_value = "on")]
    layer_norm: Toggle,
    #[arg(long, value_enum, default_value = "off")]
    projection: Toggle,
    #[arg(long, value_enum, default_value = "off")]
    directed: Toggle,
    /// Initial residual to the layer-0 representation.
    #[arg(long, value_enum, default_value = "on")]
    residual: Toggle,
    #[arg(long, value_enum, default_value = "chat")]
    model: KindArg,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 5000)]
    max_epochs: usize,
    #[arg(long, default_value_t = 500)]
    patience: usize,
    #[arg(long, default_value_t = 200)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "accuracy")]
    metric: MetricArg,
}

impl TrainFlags {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            max_epochs: self.max_epochs,
            patience: self.patience,
            warmup: self.warmup,
            seed: self.seed,
            test_metric: self.metric.into(),
            ..TrainConfig::default()
        }
    }
}

#[derive(Args)]
struct TrainCmd {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
    /// Split to train on; repeat for several. Default: every split.
    #[arg(long)]
    split: Vec<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Part {
    Train,
    Val,
    Test,
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 0)]
    split: usize,
    #[arg(long, value_enum, default_value = "test")]
    part: Part,
    #[arg(long, value_enum, default_value = "accuracy")]
    metric: MetricArg,
}

#[derive(Args)]
struct SweepCmd {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "chat,gcn")]
    models: Vec<KindArg>,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32")]
    depths: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    /// Use the first N splits. Default: every split.
    #[arg(long)]
    splits: Option<usize>,
    #[command(flatten)]
    train: TrainFlags,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DirichletCmd {
    #[arg(long, value_enum, default_value = "gcn")]
    model: KindArg,
    #[arg(long, default_value_t = 10)]
    rows: usize,
    #[arg(long, default_value_t = 10)]
    cols: usize,
    #[arg(long, default_value_t = 1000)]
    depth: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AttentionCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Number of nodes drawn at random among those with two or more neighbours.
    #[arg(long, default_value_t = 5)]
    nodes: usize,
    /// Explicit node ids; overrides `--nodes`.
    #[arg(long, value_delimiter = ',')]
    node_ids: Vec<usize>,
    /// Dump layers `0..N`.
    #[arg(long, default_value_t = 5)]
    layers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckCmd {
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Heterophilous,
    TwoClass,
}

#[derive(Args)]
struct SyntheticCmd {
    #[arg(long, value_enum, default_value = "heterophilous")]
    kind: SynthKind,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long, default_value_t = 10)]
    splits: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Flag(String),
    Runtime(String),
}

impl<E: std::fmt::Display> From<E> for Failure
where
    E: Into<chatgnn::Error>,
{
    fn from(e: E) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let header = echo_args(std::env::args().skip(1));
    let result = match cli.command {
        Command::Train(c) => train_cmd(c, &header),
        Command::Eval(c) => eval_cmd(c),
        Command::DepthSweep(c) => sweep_cmd(c, &header),
        Command::Dirichlet(c) => dirichlet_cmd(c, &header),
        Command::Attention(c) => attention_cmd(c, &header),
        Command::Gradcheck(c) => gradcheck_cmd(c),
        Command::Synthetic(c) => synthetic_cmd(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Flag(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

/// The invocation minus `--out`, which does not influence results.
fn echo_args(args: impl Iterator<Item = String>) -> String {
    let mut kept = vec!["chatgnn".to_string()];
    let mut skip_next = false;
    for a in args {
        if std::mem::take(&mut skip_next) {
            continue;
        }
        if a == "--out" {
            skip_next = true;
        } else if !a.starts_with("--out=") {
            kept.push(a);
        }
    }
    kept.join(" ")
}

fn flag_check(r: chatgnn::Result<()>) -> Outcome {
    r.map_err(|e| Failure::Flag(e.to_string()))
}

fn write_out(path: Option<&Path>, text: &str) -> Outcome {
    match path {
        Some(p) => fs::write(p, text)
            .map_err(|e| Failure::Runtime(format!("writing {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn model_config(f: &ModelFlags, ds: &Dataset, seed: u64) -> ModelConfig {
    let mut cfg = ModelConfig::new(ds.num_features(), f.hidden, ds.num_classes, f.layers);
    cfg.use_layer_norm = f.layer_norm.on();
    cfg.use_projection = f.projection.on();
    cfg.directed_mode = f.directed.on();
    cfg.residual = f.residual.on();
    cfg.layer_kind = f.model.into();
    cfg.seed = seed;
    cfg
}

fn train_cmd(c: TrainCmd, header: &str) -> Outcome {
    let tcfg = c.train.config();
    flag_check(tcfg.validate())?;
    let ds = load_dataset(&c.dataset)?;
    let mcfg = model_config(&c.model, &ds, tcfg.seed);
    flag_check(mcfg.validate())?;
    let splits: Vec<usize> = if c.split.is_empty() {
        (0..ds.splits.len()).collect()
    } else {
        c.split.clone()
    };
    if let Some(&bad) = splits.iter().find(|&&s| s >= ds.splits.len()) {
        return Err(Failure::Flag(format!(
            "--split {bad}: dataset has {} splits",
            ds.splits.len()
        )));
    }
    fs::create_dir_all(&c.out)
        .map_err(|e| Failure::Runtime(format!("creating {}: {e}", c.out.display())))?;

    let runs = train_splits(&mcfg, &ds, &splits, &tcfg)?;
    let comments = vec![header.to_string(), format!("dataset {}", ds.name)];
    let mut results = Vec::new();
    for run in &runs {
        let s = run.split;
        run.outcome
            .model
            .save_checkpoint(c.out.join(format!("checkpoint_split{s}.json")))?;
        write_metrics_csv(
            &run.outcome.history,
            &comments,
            c.out.join(format!("metrics_split{s}.csv")),
        )?;
        let best = run.outcome.best();
        match run.test {
            Some(t) => {
                println!(
                    "split {s}: best epoch {} val_acc {:.4} test {:.4}",
                    run.outcome.best_epoch, best.val_accuracy, t
                );
                results.push((s, t));
            }
            None => println!(
                "split {s}: best epoch {} val_acc {:.4} (no test nodes)",
                run.outcome.best_epoch, best.val_accuracy
            ),
        }
    }
    if !results.is_empty() {
        let metric = match tcfg.test_metric {
            Metric::Accuracy => "accuracy",
            Metric::RocAuc => "roc_auc",
        };
        write_summary(&results, metric, &comments, c.out.join("summary.csv"))?;
        let values: Vec<f64> = results.iter().map(|r| r.1).collect();
        println!(
            "test {metric} over {} split(s): {}",
            values.len(),
            chatgnn::data::format_mean_std(&values)
        );
    }
    Ok(())
}

fn eval_cmd(c: EvalCmd) -> Outcome {
    let (model, _) = ChatGnnModel::load_checkpoint(&c.checkpoint)?;
    let ds = load_dataset(&c.dataset)?;
    let split = ds
        .split(c.split)
        .map_err(|e| Failure::Flag(e.to_string()))?;
    let (name, mask) = match c.part {
        Part::Train => ("train", &split.train),
        Part::Val => ("val", &split.val),
        Part::Test => ("test", &split.test),
    };
    let metric: Metric = c.metric.into();
    let score = evaluate(&model, &ds, mask, metric)?;
    let label = match metric {
        Metric::Accuracy => "accuracy",
        Metric::RocAuc => "roc_auc",
    };
    println!("{name} {label} split {}: {score:.6}", c.split);
    Ok(())
}

fn sweep_cmd(c: SweepCmd, header: &str) -> Outcome {
    let tcfg = c.train.config();
    flag_check(tcfg.validate())?;
    if c.hidden == 0 || c.depths.contains(&0) {
        return Err(Failure::Flag(
            "--hidden and --depths must be positive".into(),
        ));
    }
    let ds = load_dataset(&c.dataset)?;
    let n = c.splits.unwrap_or(ds.splits.len());
    if n == 0 || n > ds.splits.len() {
        return Err(Failure::Flag(format!(
            "--splits {n}: dataset has {} splits",
            ds.splits.len()
        )));
    }
    let splits: Vec<usize> = (0..n).collect();
    let kinds: Vec<LayerKind> = c.models.iter().map(|&k| k.into()).collect();
    let points = depth_sweep(&ds, &kinds, &c.depths, c.hidden, &splits, &tcfg)?;
    let mut text = format!("# {header}\nmodel,layers,mean_test,std_test\n");
    for p in &points {
        text.push_str(&format!(
            "{},{},{},{}\n",
            p.kind.as_str(),
            p.layers,
            p.mean,
            p.std
        ));
    }
    write_out(c.out.as_deref(), &text)
}

fn dirichlet_cmd(c: DirichletCmd, header: &str) -> Outcome {
    let kind: LayerKind = c.model.into();
    let trace = energy_decay_experiment(kind.as_str(), c.depth, c.rows, c.cols, c.seed)
        .map_err(|e| Failure::Flag(e.to_string()))?;
    write_out(c.out.as_deref(), &trace.to_csv(&[header.to_string()]))
}

fn attention_cmd(c: AttentionCmd, header: &str) -> Outcome {
    let (model, _) = ChatGnnModel::load_checkpoint(&c.checkpoint)?;
    let ds = load_dataset(&c.dataset)?;
    let nodes = if c.node_ids.is_empty() {
        let mut eligible: Vec<usize> = (0..ds.num_nodes())
            .filter(|&v| ds.graph.degrees()[v] >= 2)
            .collect();
        Rng::new(c.seed).shuffle(&mut eligible);
        eligible.truncate(c.nodes);
        eligible
    } else {
        c.node_ids.clone()
    };
    let (dumps, notices) = attention_cosine(&model, &ds, &nodes, 0..c.layers)?;
    for n in &notices {
        eprintln!("notice: {n}");
    }
    write_out(
        c.out.as_deref(),
        &format_cosine_dumps(&dumps, &[header.to_string()]),
    )
}

fn gradcheck_cmd(c: GradcheckCmd) -> Outcome {
    if c.instances == 0 {
        return Err(Failure::Flag("--instances must be at least 1".into()));
    }
    let results = run_suite(c.instances, c.seed)?;
    let mut failed = 0;
    println!("case,instances,tolerance,max_rel_err,status");
    for r in &results {
        println!(
            "{},{},{:e},{:e},{}",
            r.name,
            r.instances,
            r.tol,
            r.max_rel_err,
            if r.passed() { "pass" } else { "FAIL" }
        );
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!(
            "{failed} gradient check(s) failed"
        )));
    }
    Ok(())
}

fn synthetic_cmd(c: SyntheticCmd) -> Outcome {
    if c.nodes.is_some_and(|n| n < 10) {
        return Err(Failure::Flag("--nodes must be at least 10".into()));
    }
    let ds = match c.kind {
        SynthKind::Heterophilous => {
            let mut spec = synthetic::HeteroSpec::texas_like();
            if let Some(n) = c.nodes {
                spec.nodes = n;
            }
            synthetic::heterophilous(&spec, c.splits, c.seed)
        }
        SynthKind::TwoClass => synthetic::two_class(c.nodes.unwrap_or(20), c.seed),
    };
    ds.save(&c.out)?;
    println!(
        "wrote {} ({} nodes, {} edges, {} splits)",
        c.out.display(),
        ds.num_nodes(),
        ds.graph.num_edges(),
        ds.splits.len()
    );
    Ok(())
}
