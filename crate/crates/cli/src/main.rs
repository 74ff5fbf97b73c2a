//! `locqor`: train, evaluate and apply line-level QoR predictors for Verilog.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use locqor_core::bundle::ModelBundle;
use locqor_core::embedding::{EmbeddingProvider, ProviderKind, RemoteProvider};
use locqor_core::eval::{Task, REPORT_SCHEMA};
use locqor_core::pipeline::{self, PipelineConfig};
use locqor_core::synthetic::{generate_synthetic_corpus, SyntheticConfig};

const OK: u8 = 0;
const USAGE: u8 = 1;
const FLAGGED: u8 = 2;
const RUNTIME: u8 = 3;

/// An error paired with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: USAGE,
        error: error.into(),
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            code: RUNTIME,
            error: e.into(),
        }
    }
}

type Outcome = Result<u8, Failure>;

#[derive(Parser, Debug)]
#[command(name = "locqor", version, about = "Line-level congestion and timing prediction for Verilog")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    task: Option<Task>,
    /// Context radius p.
    #[arg(long, global = true)]
    context: Option<usize>,
    /// mock, file or remote.
    #[arg(long, global = true, value_parser = parse_provider)]
    provider: Option<ProviderKind>,
    /// Base URL of the embedding service.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Hidden-state store for the file provider.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Accept a provider whose identity differs from the bundle's.
    #[arg(long, global = true)]
    allow_provider_mismatch: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus with planted labels.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        modules: usize,
        #[arg(long, default_value_t = 100)]
        lines: usize,
        #[arg(long, default_value_t = 5)]
        designs: usize,
    },
    /// Train the autoencoder and head; write a model bundle.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Bundle path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Train one bundle per task into this directory instead.
        #[arg(long, conflicts_with = "out")]
        suite: Option<PathBuf>,
    },
    /// Score a bundle on the test split; write report.json and report.txt.
    Evaluate {
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
    /// Print flagged lines of Verilog files as JSON, one per line.
    Annotate {
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Exit with status 2 when any line is flagged.
        #[arg(long)]
        fail_on_flag: bool,
        /// Override the bundle's threshold.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Describe the configured embedding provider.
    ServeInfo,
}

fn parse_provider(s: &str) -> Result<ProviderKind, String> {
    match s {
        "mock" => Ok(ProviderKind::Mock),
        "file" => Ok(ProviderKind::File),
        "remote" => Ok(ProviderKind::Remote),
        _ => Err(format!("unknown provider `{s}` (expected mock, file or remote)")),
    }
}

fn resolve_config(g: &Global) -> Result<PipelineConfig, Failure> {
    let mut cfg = config::load(g.config.as_deref(), std::env::vars()).map_err(usage)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(task) = g.task {
        cfg.task = task;
    }
    if let Some(p) = g.context {
        cfg.context = p;
    }
    if let Some(kind) = g.provider {
        cfg.provider.kind = kind;
    }
    if let Some(e) = &g.endpoint {
        cfg.provider.endpoint = Some(e.clone());
    }
    if let Some(s) = &g.store {
        cfg.provider.path = Some(s.clone());
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn required(flag: Option<&PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf, Failure> {
    flag.or(fallback.as_ref())
        .cloned()
        .ok_or_else(|| usage(anyhow!("missing {name}: pass --{name} or set paths.{name}")))
}

fn existing(path: PathBuf, what: &str) -> Result<PathBuf, Failure> {
    if path.exists() {
        Ok(path)
    } else {
        Err(usage(anyhow!("{what} {} does not exist", path.display())))
    }
}

fn open_provider(cfg: &PipelineConfig) -> Result<Box<dyn EmbeddingProvider>, Failure> {
    Ok(pipeline::open_provider(&cfg.provider).context("opening embedding provider")?)
}

fn load_bundle(path: &Path) -> Result<ModelBundle, Failure> {
    Ok(ModelBundle::load(path)?)
}

fn strip_flag(bundle: &ModelBundle) -> bool {
    bundle.manifest.config["strip_comments"].as_bool().unwrap_or(false)
}

fn gen_synthetic(seed: u64, out: &Path, modules: usize, lines: usize, designs: usize) -> Outcome {
    let cfg = SyntheticConfig {
        n_modules: modules,
        lines_per_module: lines,
        n_designs: designs,
        seed,
        ..Default::default()
    };
    if modules == 0 {
        return Err(usage(anyhow!("--modules must be at least 1")));
    }
    let corpus = generate_synthetic_corpus(&cfg);
    let (src, labels) = (out.join("corpus"), out.join("labels.csv"));
    corpus.write(&src, &labels)?;
    eprintln!(
        "wrote {} files and {} label rows under {}",
        corpus.files.len(),
        corpus.labels.len(),
        out.display()
    );
    Ok(OK)
}

fn train_one(cfg: &PipelineConfig, corpus: &Path, labels: &Path, out: &Path) -> Outcome {
    let dataset = pipeline::load_dataset(corpus, labels, cfg.seed, cfg.train_fraction, cfg.strip_comments)?;
    let provider = open_provider(cfg)?;
    eprintln!(
        "training {} on {} train / {} test lines with provider {}",
        cfg.task,
        dataset.count(locqor_core::corpus::Split::Train),
        dataset.count(locqor_core::corpus::Split::Test),
        provider.identity()
    );
    let (bundle, summary) = pipeline::train(cfg, &dataset, provider.as_ref())?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    bundle.save(out)?;
    println!("{}", serde_json::to_string(&summary)?);
    eprintln!("wrote {}", out.display());
    Ok(OK)
}

fn train(cfg: &PipelineConfig, corpus: Option<&PathBuf>, labels: Option<&PathBuf>, out: Option<&PathBuf>, suite: Option<&PathBuf>) -> Outcome {
    let corpus = existing(required(corpus, &cfg.paths.corpus, "corpus")?, "corpus directory")?;
    let labels = existing(required(labels, &cfg.paths.labels, "labels")?, "label file")?;
    match suite {
        Some(dir) => {
            for task in [Task::Congestion, Task::Timing, Task::Wns] {
                let cfg = PipelineConfig {
                    task,
                    ..cfg.clone()
                };
                train_one(&cfg, &corpus, &labels, &dir.join(format!("{task}.locq")))?;
            }
            Ok(OK)
        }
        None => {
            let out = required(out, &cfg.paths.bundle, "bundle")?;
            train_one(cfg, &corpus, &labels, &out)
        }
    }
}

fn evaluate(
    cfg: &PipelineConfig,
    allow: bool,
    bundle: Option<&PathBuf>,
    corpus: Option<&PathBuf>,
    labels: Option<&PathBuf>,
    report_dir: Option<&PathBuf>,
) -> Outcome {
    let bundle_path = existing(required(bundle, &cfg.paths.bundle, "bundle")?, "bundle")?;
    let corpus = existing(required(corpus, &cfg.paths.corpus, "corpus")?, "corpus directory")?;
    let labels = existing(required(labels, &cfg.paths.labels, "labels")?, "label file")?;
    let report_dir = report_dir
        .or(cfg.paths.report_dir.as_ref())
        .cloned()
        .unwrap_or_else(|| PathBuf::from("."));
    let bundle = load_bundle(&bundle_path)?;
    let m = &bundle.manifest;
    let dataset = pipeline::load_dataset(&corpus, &labels, m.seeds.split, m.train_fraction, strip_flag(&bundle))?;
    let provider = open_provider(cfg)?;
    let report = pipeline::evaluate(&bundle, &dataset, provider.as_ref(), allow)?;
    std::fs::create_dir_all(&report_dir).with_context(|| format!("creating {}", report_dir.display()))?;
    let json = serde_json::to_string_pretty(&report)?;
    let table = report.to_table();
    std::fs::write(report_dir.join("report.json"), format!("{json}\n"))?;
    std::fs::write(report_dir.join("report.txt"), &table)?;
    eprintln!("{REPORT_SCHEMA} written to {}", report_dir.display());
    print!("{table}");
    Ok(OK)
}

fn annotate(
    cfg: &PipelineConfig,
    allow: bool,
    bundle: Option<&PathBuf>,
    files: &[PathBuf],
    fail_on_flag: bool,
    threshold: Option<f64>,
) -> Outcome {
    let bundle_path = existing(required(bundle, &cfg.paths.bundle, "bundle")?, "bundle")?;
    let mut bundle = load_bundle(&bundle_path)?;
    if let Some(t) = threshold {
        bundle.manifest.threshold = t;
    }
    let provider = open_provider(cfg)?;
    pipeline::check_provider(&bundle, provider.as_ref(), allow)?;
    let strip = cfg.strip_comments || strip_flag(&bundle);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut flagged = 0;
    for file in files {
        let bytes = std::fs::read(file).with_context(|| format!("cannot read {}", file.display()))?;
        let source = locqor_core::corpus::decode_source(&bytes)?;
        let path = file.display().to_string();
        let diagnostics = pipeline::annotate(&bundle, &path, &source, provider.as_ref(), strip)
            .with_context(|| format!("annotating {path}"))?;
        for d in &diagnostics {
            writeln!(out, "{}", serde_json::to_string(d)?)?;
        }
        flagged += diagnostics.len();
    }
    out.flush()?;
    eprintln!("{flagged} flagged line(s) in {} file(s)", files.len());
    Ok(if fail_on_flag && flagged > 0 { FLAGGED } else { OK })
}

fn serve_info(cfg: &PipelineConfig) -> Outcome {
    let info = if cfg.provider.kind == ProviderKind::Remote {
        let endpoint = cfg
            .provider
            .endpoint
            .as_deref()
            .ok_or_else(|| usage(anyhow!("remote provider needs --endpoint")))?;
        let remote = RemoteProvider::connect(endpoint, 1)?;
        serde_json::json!({
            "kind": "remote",
            "identity": remote.identity(),
            "k": remote.k(),
            "backend": remote.info().backend,
            "endpoint": endpoint,
        })
    } else {
        let p = open_provider(cfg)?;
        serde_json::json!({
            "kind": cfg.provider.kind,
            "identity": p.identity(),
            "k": p.k(),
        })
    };
    println!("{info}");
    Ok(OK)
}

fn run(cli: Cli) -> Outcome {
    let cfg = resolve_config(&cli.global)?;
    let allow = cli.global.allow_provider_mismatch;
    match &cli.command {
        Command::GenSynthetic {
            out,
            modules,
            lines,
            designs,
        } => gen_synthetic(cfg.seed, out, *modules, *lines, *designs),
        Command::Train {
            corpus,
            labels,
            out,
            suite,
        } => train(&cfg, corpus.as_ref(), labels.as_ref(), out.as_ref(), suite.as_ref()),
        Command::Evaluate {
            bundle,
            corpus,
            labels,
            report_dir,
        } => evaluate(&cfg, allow, bundle.as_ref(), corpus.as_ref(), labels.as_ref(), report_dir.as_ref()),
        Command::Annotate {
            bundle,
            files,
            fail_on_flag,
            threshold,
        } => annotate(&cfg, allow, bundle.as_ref(), files, *fail_on_flag, *threshold),
        Command::ServeInfo => serve_info(&cfg),
    }
}

/// Context chain joined by `: `, skipping causes already spelled out by
/// the message above them.
fn render(error: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in error.chain() {
        let msg = cause.to_string();
        if text.contains(&msg) {
            continue;
        }
        if !text.is_empty() {
            text.push_str(": ");
        }
        text.push_str(&msg);
    }
    text
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", render(&f.error));
            ExitCode::from(f.code)
        }
    }
}
