mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use smuda_core::data::{blobs3, write_csv, write_features, read_features};
use smuda_core::pipeline::{bound_report, direct_adapt_baseline, evaluate, run_algorithm1, source_combined_baseline, RunOutput};
use smuda_core::protocol::{audit_privacy, run_distributed, Transcript};
use smuda_core::{Ensemble, LabeledDataset, Pairing, WeightStrategy};

use config::{Mode, RunConfig};
use output::Metrics;

/// Failures, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration: exit 1.
    Config(String),
    /// Anything that went wrong while running: exit 2.
    Runtime(String),
}

impl From<smuda_core::Error> for CliError {
    fn from(e: smuda_core::Error) -> Self {
        match e {
            smuda_core::Error::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "smuda", version, about = "Private multi-source domain adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the adaptation pipeline and write reports.
    Run(RunArgs),
    /// Run an ablation baseline with the same inputs and outputs as `run`.
    Baseline {
        #[arg(value_enum)]
        kind: BaselineKind,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Generate a synthetic preset as feature files.
    Gen(GenArgs),
    /// Check a transcript for leaked samples.
    Audit {
        #[arg(long)]
        transcript: PathBuf,
        /// Datasets whose rows must not appear (repeatable).
        #[arg(long = "data", required = true)]
        data: Vec<PathBuf>,
    },
    /// Recompute the bound terms of a finished run.
    Bound {
        /// Output directory of a run.
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        xi: f64,
        #[arg(long, default_value_t = 1.0)]
        zeta: f64,
        /// Measured target risk; read from the run's metrics.csv when omitted.
        #[arg(long)]
        target_risk: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy and risk of a saved ensemble on a labeled file.
    Eval {
        #[arg(long)]
        ensemble: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Direct,
    SourceCombined,
}

#[derive(Clone, Copy, ValueEnum)]
enum PairingArg {
    Sorted,
    Random,
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    /// Labeled source feature file (repeatable).
    #[arg(long = "source")]
    sources: Vec<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// swd, uniform or single-best.
    #[arg(long)]
    weighting: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_enum)]
    pairing: Option<PairingArg>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    /// Simulate failure of this source after training (repeatable).
    #[arg(long = "fail-source")]
    fail_sources: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "blobs3")]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    samples: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write CSV instead of the binary format.
    #[arg(long)]
    csv: bool,
    /// Plant one canary row in every generated dataset.
    #[arg(long)]
    canaries: bool,
}

fn resolve(args: &RunArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if args.preset.is_some() {
        cfg.preset = args.preset.clone();
    }
    if !args.sources.is_empty() {
        cfg.sources = args.sources.clone();
    }
    if args.target.is_some() {
        cfg.target = args.target.clone();
    }
    if cfg.preset.is_none() && cfg.sources.is_empty() && cfg.target.is_none() {
        cfg.preset = Some("blobs3".into());
    }
    if let Some(v) = args.samples {
        cfg.samples = v;
    }
    if let Some(v) = args.seed {
        cfg.pipeline.seed = v;
    }
    if let Some(v) = args.mode {
        cfg.mode = v;
    }
    if let Some(v) = &args.weighting {
        cfg.pipeline.weighting = v.parse::<WeightStrategy>()?;
    }
    if let Some(v) = args.workers {
        cfg.pipeline.workers = v;
    }
    if let Some(v) = args.steps {
        cfg.pipeline.adapt.steps = v;
    }
    if let Some(v) = args.pairing {
        cfg.pipeline.adapt.pairing = match v {
            PairingArg::Sorted => Pairing::Sorted,
            PairingArg::Random => Pairing::Random,
        };
    }
    if let Some(v) = args.xi {
        cfg.xi = v;
    }
    if let Some(v) = args.zeta {
        cfg.zeta = v;
    }
    if !args.fail_sources.is_empty() {
        cfg.pipeline.fail_sources = args.fail_sources.clone();
    }
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn cmd_run(args: &RunArgs, baseline: Option<BaselineKind>) -> Result<(), CliError> {
    let cfg = resolve(args)?;
    if baseline.is_some() && cfg.mode == Mode::Distributed {
        return Err(CliError::Config("baselines share source data and have no distributed mode".into()));
    }
    let dir = cfg.out_dir();
    create_dir(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let (sources, target) = cfg.load_data()?;
    let datasets: Vec<LabeledDataset> = sources.iter().cloned().chain(std::iter::once(target.clone())).collect();
    let features = &target.features;
    info!("{} sources, {} target samples", sources.len(), features.rows());

    let run: RunOutput = match (baseline, cfg.mode) {
        (Some(BaselineKind::Direct), _) => direct_adapt_baseline(sources, features, &cfg.pipeline)?,
        (Some(BaselineKind::SourceCombined), _) => source_combined_baseline(sources, features, &cfg.pipeline)?,
        (None, Mode::Local) => run_algorithm1(sources, features, &cfg.pipeline)?,
        (None, Mode::Distributed) => {
            let out = run_distributed(sources, features, &cfg.pipeline)?;
            let mut log = std::io::BufWriter::new(std::fs::File::create(dir.join("transcript.log"))?);
            out.transcript.write_log(&mut log)?;
            let audit = audit_privacy(&out.transcript, &datasets);
            output::write_pairs(&dir.join("audit.csv"), &output::audit_pairs(&audit))?;
            if !audit.passed() {
                return Err(CliError::Runtime("privacy audit failed; see audit.csv".into()));
            }
            out.run
        }
    };

    output::write_report(&dir.join("report.csv"), &run.report)?;
    for s in &run.report.sources {
        output::write_trace(&dir.join(format!("trace_{}.csv", s.index)), &s.trace)?;
    }
    let probs = run.ensemble.predict_proba(features)?;
    output::write_predictions(&dir.join("predictions.csv"), &probs, &target.labels)?;
    for ((s, before), after) in run.report.sources.iter().zip(&run.source_models).zip(&run.ensemble.models) {
        output::write_embeddings(&dir.join(format!("embeddings_{}.csv", s.index)), features, &target.labels, before, after)?;
    }
    output::save_ensemble(&dir.join("ensemble.bin"), &run.ensemble)?;

    let labeled = target.is_labeled();
    let adapted = labeled.then(|| evaluate(&run.ensemble, &target)).transpose()?;
    let bound = bound_report(&run.report.bound_inputs(), cfg.xi, cfg.zeta, adapted.as_ref().map(|e| e.risk))?;
    output::write_bound(&dir.join("bound.csv"), &bound)?;
    if let Some(adapted) = &adapted {
        let source_only = run.source_only_ensemble().and_then(|e| evaluate(&e, &target))?;
        let metrics = Metrics {
            adapted,
            source_only: Some(&source_only),
            bound: &bound,
        };
        output::write_pairs(&dir.join("metrics.csv"), &output::metric_pairs(&metrics))?;
        println!("target accuracy {:.4} (source-only {:.4}), risk {:.4}", adapted.accuracy, source_only.accuracy, adapted.risk);
    }
    for s in &run.report.sources {
        println!("{}: w={:.4} D(S,A)={:.5} D(T,A) {:.5} -> {:.5} [{}]", s.name, s.weight, s.d_source, s.d_target_initial, s.d_target_final, s.decision.mode.as_str());
    }
    for d in &run.report.dropped {
        println!("{}: dropped ({})", d.name, d.reason);
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_gen(args: &GenArgs) -> Result<(), CliError> {
    if args.preset != "blobs3" {
        return Err(CliError::Config(format!("unknown preset {:?}", args.preset)));
    }
    let dir = args.out.clone().unwrap_or_else(|| RunConfig::default().out_dir());
    create_dir(&dir)?;
    let d = blobs3(args.seed, args.samples).generate()?;
    let ext = if args.csv { "csv" } else { "smft" };
    let all = d.sources.into_iter().chain(std::iter::once(d.target));
    for (i, mut ds) in all.enumerate() {
        if args.canaries {
            ds.plant_canary(i as u8);
        }
        let path = dir.join(format!("{}.{ext}", ds.name));
        if args.csv {
            write_csv(&ds, &path)?;
        } else {
            write_features(&ds, &path)?;
        }
        println!("{} ({} x {})", path.display(), ds.len(), ds.dim());
    }
    Ok(())
}

fn cmd_audit(transcript: &Path, data: &[PathBuf]) -> Result<(), CliError> {
    let text = std::fs::read_to_string(transcript).map_err(|e| CliError::Runtime(format!("{}: {e}", transcript.display())))?;
    let t = Transcript::parse_log(&text)?;
    let datasets = data.iter().map(read_features).collect::<Result<Vec<_>, _>>()?;
    let report = audit_privacy(&t, &datasets);
    for (k, v) in output::audit_pairs(&report) {
        println!("{k}: {v}");
    }
    if report.passed() {
        println!("PASS");
        Ok(())
    } else {
        Err(CliError::Runtime("privacy audit FAILED".into()))
    }
}

fn cmd_bound(run: &Path, xi: f64, zeta: f64, target_risk: Option<f64>, out: Option<&Path>) -> Result<(), CliError> {
    let rows = output::read_report(&run.join("report.csv"))?;
    let inputs = output::bound_inputs_from_rows(&rows)?;
    let risk = match target_risk {
        Some(r) => Some(r),
        None => {
            let metrics = run.join("metrics.csv");
            if metrics.exists() {
                output::read_pairs(&metrics)?
                    .into_iter()
                    .find(|(k, _)| k == "risk")
                    .and_then(|(_, v)| v.parse().ok())
            } else {
                None
            }
        }
    };
    let b = bound_report(&inputs, xi, zeta, risk)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| run.join("bound.csv"));
    output::write_bound(&path, &b)?;
    for s in &b.sources {
        println!("{}: risk {:.4} + W(T,P) {:.4} + W(P,S) {:.4} + conf {:.4} = {:.4} (w {:.4})", s.name, s.source_risk, s.w_target_prototype, s.w_prototype_source, s.confidence, s.total, s.weight);
    }
    println!("weighted rhs (without the combined-error term) {:.4}", b.weighted_rhs);
    if let (Some(r), Some(h)) = (b.target_risk, b.holds()) {
        println!("target risk {r:.4}: {}", if h { "within bound" } else { "exceeds computable terms" });
    }
    Ok(())
}

fn cmd_eval(ensemble: &Path, data: &Path, predictions: Option<&Path>) -> Result<(), CliError> {
    let bytes = std::fs::read(ensemble).map_err(|e| CliError::Runtime(format!("{}: {e}", ensemble.display())))?;
    let e = Ensemble::from_bytes(&bytes)?;
    let ds = read_features(data)?;
    if !ds.is_labeled() {
        return Err(CliError::Config(format!("{} has no labels", data.display())));
    }
    let ev = evaluate(&e, &ds)?;
    println!("accuracy {}", ev.accuracy);
    println!("risk {}", ev.risk);
    for (k, v) in output::jensen_pairs(&ev.jensen) {
        println!("{k} {v}");
    }
    if let Some(p) = predictions {
        output::write_predictions(p, &e.predict_proba(&ds.features)?, &ds.labels)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a, None),
        Command::Baseline { kind, args } => cmd_run(args, Some(*kind)),
        Command::Gen(a) => cmd_gen(a),
        Command::Audit { transcript, data } => cmd_audit(transcript, data),
        Command::Bound {
            run,
            xi,
            zeta,
            target_risk,
            out,
        } => cmd_bound(run, *xi, *zeta, *target_risk, out.as_deref()),
        Command::Eval { ensemble, data, predictions } => cmd_eval(ensemble, data, predictions.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
