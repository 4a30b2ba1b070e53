use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sdsbm::evaluation::{cross_validate, rmse_aligned, ModelFamily, SplitPlan, DEFAULT_BETA_GRID};
use sdsbm::io::{
    export_flows, ingest_path, read_config, read_memberships, write_blocks, write_events,
    write_flows, write_memberships, write_results_csv, write_results_json, FitMetadata, Ingested,
    ModelArchive, Slicing, Vocabulary,
};
use sdsbm::synthetic::{sample_dataset, GroundTruth, PatternKind, PatternSpec, Schedule};
use sdsbm::{fit, BlockMode, Error, ErrorKind, FitConfig, FittedModel, MembershipTensor, PriorConfig, Result};

#[derive(Parser)]
#[command(name = "sdsbm", version, about = "Dynamic mixed-membership block model for labeled event logs")]
#[command(args_override_self = true)]
struct Cli {
    /// Key-value file whose entries act as flags; explicit flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate ground truth and a sampled event log.
    Synth(SynthArgs),
    /// Fit a model and save it as an archive.
    Fit(FitArgs),
    /// Cross-validate SDSBM against the no-coupling and static baselines.
    Cv(CvArgs),
    /// Print label probabilities for a node at an epoch.
    Predict(PredictArgs),
    /// Write membership flows between consecutive epochs.
    ExportFlows(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Pattern {
    Sin,
    Broken,
}

#[derive(Clone, Copy, ValueEnum)]
enum PMode {
    Dynamic,
    Static,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    pattern: Pattern,
    #[arg(long)]
    epochs: usize,
    #[arg(long)]
    items: usize,
    /// Observations per item over the whole time span.
    #[arg(long, conflicts_with = "obs_per_epoch", required_unless_present = "obs_per_epoch")]
    obs_per_item: Option<usize>,
    /// Observations per item in every epoch.
    #[arg(long)]
    obs_per_epoch: Option<usize>,
    /// Block-matrix mixing parameter in [0, 1].
    #[arg(long, default_value_t = 0.05)]
    s: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    clusters: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    /// Event log: node, label, timestamp[, weight].
    #[arg(long)]
    data: PathBuf,
    /// Epoch width in timestamp units.
    #[arg(long, default_value_t = 1.0, conflicts_with = "epochs")]
    slice: f64,
    /// Split the time span into this many epochs instead of fixed widths.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

impl DataArgs {
    fn load(&self) -> Result<Ingested> {
        if !self.delimiter.is_ascii() {
            return Err(Error::InvalidConfig("delimiter must be an ASCII character".into()));
        }
        let slicing = match self.epochs {
            Some(n) => Slicing::Count(n),
            None => Slicing::Width(self.slice),
        };
        ingest_path(&self.data, slicing, self.delimiter as u8)
    }
}

#[derive(Args)]
struct EmArgs {
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value = "dynamic")]
    p_mode: PMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 1)]
    kernel_exponent: u32,
    /// Only epochs within this distance enter the temporal average.
    #[arg(long)]
    window: Option<usize>,
}

impl EmArgs {
    fn config(&self, beta_theta: f64, beta_p: f64) -> FitConfig {
        let mut config = FitConfig::new(self.k);
        config.max_iterations = self.max_iter;
        config.tol = self.tol;
        config.restarts = self.restarts;
        config.seed = self.seed;
        config.block_mode = match self.p_mode {
            PMode::Dynamic => BlockMode::Dynamic,
            PMode::Static => BlockMode::Static,
        };
        config.prior = PriorConfig {
            beta_theta,
            beta_p,
            kernel_exponent: self.kernel_exponent,
            window: self.window,
        };
        config
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    em: EmArgs,
    #[arg(long, default_value_t = 0.0)]
    beta_theta: f64,
    #[arg(long, default_value_t = 0.0)]
    beta_p: f64,
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth memberships (as written by `synth`) to report RMSE against.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    em: EmArgs,
    /// Comma-separated candidate values for beta.
    #[arg(long, value_delimiter = ',')]
    beta_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long)]
    metrics_out: PathBuf,
    #[arg(long)]
    json_out: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    node: String,
    /// Epoch index; epochs past the fitted range are extrapolated.
    #[arg(long)]
    epoch: usize,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn load_truth(path: &Path, data: &Ingested, clusters: usize) -> Result<MembershipTensor> {
    read_memberships(BufReader::new(File::open(path)?), &data.nodes, &data.time, clusters)
}

fn synth(args: &SynthArgs) -> Result<()> {
    let kind = match args.pattern {
        Pattern::Sin => PatternKind::Sinusoidal,
        Pattern::Broken => PatternKind::BrokenLine,
    };
    let spec = PatternSpec::new(kind, args.epochs, args.items, args.clusters, args.seed);
    let truth = GroundTruth::generate(spec, args.s)?;
    let schedule = match (args.obs_per_item, args.obs_per_epoch) {
        (_, Some(n)) => Schedule::PerItemPerEpoch(n),
        (Some(n), None) => Schedule::PerItemTotal(n),
        (None, None) => unreachable!("enforced by the argument parser"),
    };
    let data = sample_dataset(&truth, &schedule, args.seed)?;
    let nodes = Vocabulary::from_keys((0..args.items).map(|i| format!("n{i}")).collect())?;
    let labels = Vocabulary::from_keys((0..truth.p.labels()).map(|o| format!("l{o}")).collect())?;

    std::fs::create_dir_all(&args.out)?;
    let mut out = create(&args.out.join("events.csv"))?;
    write_events(&mut out, &data, &nodes, &labels)?;
    out.flush()?;
    let mut out = create(&args.out.join("theta_true.csv"))?;
    write_memberships(&mut out, &truth.theta, &nodes)?;
    out.flush()?;
    let mut out = create(&args.out.join("p_true.csv"))?;
    write_blocks(&mut out, &truth.p, &labels)?;
    out.flush()?;
    println!(
        "wrote {} observations over {} epochs to {}",
        data.len(),
        data.epochs(),
        args.out.display()
    );
    Ok(())
}

fn run_fit(args: &FitArgs) -> Result<()> {
    let data = args.data.load()?;
    let config = args.em.config(args.beta_theta, args.beta_p);
    let truth = args
        .truth
        .as_deref()
        .map(|p| load_truth(p, &data, args.em.k))
        .transpose()?;
    let report = fit(&data.dataset, &config)?;
    let meta = FitMetadata::from_report(&report);
    let model = FittedModel::new(
        report.theta.clone(),
        report.p.clone(),
        data.dataset.epoch_counts().to_vec(),
        config.prior,
    )?;
    ModelArchive::new(&model, &data.nodes, &data.labels, Some(data.time), Some(meta))?
        .save(&args.out)?;
    println!("objective {:.10e}", report.final_objective());
    println!(
        "iterations {}{}",
        report.iterations_run,
        if report.converged { "" } else { " (not converged)" }
    );
    if let Some(truth) = truth {
        println!("rmse {:.6}", rmse_aligned(&model.theta, &truth)?.rmse);
    }
    Ok(())
}

fn run_cv(args: &CvArgs) -> Result<()> {
    let data = args.data.load()?;
    let base = args.em.config(0.0, 0.0);
    let plan = SplitPlan {
        folds: args.folds,
        seed: args.em.seed,
        ..SplitPlan::default()
    };
    let grid = args.beta_grid.clone().unwrap_or_else(|| DEFAULT_BETA_GRID.to_vec());
    let truth = args
        .truth
        .as_deref()
        .map(|p| load_truth(p, &data, args.em.k))
        .transpose()?;
    let results = ModelFamily::all()
        .into_iter()
        .map(|family| cross_validate(&data.dataset, family, &grid, &plan, &base, truth.as_ref()))
        .collect::<Result<Vec<_>>>()?;

    let name = args
        .data
        .data
        .file_stem()
        .map_or_else(|| "data".to_owned(), |s| s.to_string_lossy().into_owned());
    let mut out = create(&args.metrics_out)?;
    write_results_csv(&mut out, &name, &results)?;
    out.flush()?;
    if let Some(path) = &args.json_out {
        let mut out = create(path)?;
        write_results_json(&mut out, &name, &results)?;
        out.flush()?;
    }
    println!("{:<10} {:>16} {:>16} {:>16} {:>16}", "model", "roc", "ap", "nce", "rmse");
    let fmt = |m: sdsbm::evaluation::MeanAndError| format!("{:.4}±{:.4}", m.mean, m.standard_error);
    for r in &results {
        println!(
            "{:<10} {:>16} {:>16} {:>16} {:>16}",
            r.model.name(),
            fmt(r.roc_auc),
            fmt(r.average_precision),
            fmt(r.coverage_error_normalized),
            r.rmse_theta.map_or_else(|| "-".to_owned(), fmt)
        );
    }
    Ok(())
}

fn predict(args: &PredictArgs) -> Result<()> {
    let archive = ModelArchive::load(&args.model)?;
    let model = archive.model()?;
    let nodes = archive.node_vocabulary()?;
    let labels = archive.label_vocabulary()?;
    let node = nodes
        .id(&args.node)
        .ok_or_else(|| Error::Contract(format!("unknown node {:?}", args.node)))?;
    let dist = model.label_distribution(node, args.epoch)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "label,probability")?;
    for (o, prob) in dist.iter().enumerate() {
        writeln!(out, "{},{}", labels.key(o).unwrap_or("?"), prob)?;
    }
    Ok(())
}

fn flows(args: &ExportArgs) -> Result<()> {
    let archive = ModelArchive::load(&args.model)?;
    let model = archive.model()?;
    let records = export_flows(&model.theta, &archive.node_vocabulary()?)?;
    let mut out = create(&args.out)?;
    write_flows(&mut out, &records)?;
    out.flush()?;
    Ok(())
}

/// Splices `--config FILE` entries in right after the subcommand, so that
/// flags given explicitly later on the command line win.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        if arg == "--config" {
            config = iter.next();
        } else if let Some(path) = arg.to_str().and_then(|s| s.strip_prefix("--config=")) {
            config = Some(path.into());
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let mut injected = Vec::new();
    for (key, value) in read_config(Path::new(&path))? {
        injected.push(OsString::from(format!("--{key}")));
        if !value.is_empty() {
            injected.push(value.into());
        }
    }
    let at = rest.len().min(2);
    rest.splice(at..at, injected);
    Ok(rest)
}

fn exit_code(err: &Error) -> u8 {
    match err.kind() {
        ErrorKind::Parse => 2,
        ErrorKind::Contract => 3,
        ErrorKind::Numeric => 4,
        ErrorKind::Io => 5,
    }
}

fn main() -> ExitCode {
    let args = match expand_config(std::env::args_os().collect()) {
        Ok(args) => args,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(exit_code(&err));
        }
    };
    let cli = Cli::parse_from(args);
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Fit(a) => run_fit(a),
        Command::Cv(a) => run_cv(a),
        Command::Predict(a) => predict(a),
        Command::ExportFlows(a) => flows(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
