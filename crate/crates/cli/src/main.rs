mod http;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use memforge::config::ExtractorChoice;
use memforge::corpus::read_corpus_jsonl;
use memforge::embedding::read_projection;
use memforge::eval::rows_to_csv;
use memforge::extraction::RemoteExtractor;
use memforge::literature::{LiteratureSource, LocalCorpus, PubMedClient};
use memforge::pipeline::graph_stats;
use memforge::{
    run_activation, run_eval, ActivationRequest, BuildReport, EmbeddingProvider, EvalSpec, Extractor, HashEmbedder,
    KnowledgeGraph, MemoryBank, MockExtractor, Pipeline, PipelineConfig, PipelineError, RelationSchema,
};
use serde::Serialize;

use crate::http::{ReqwestExtractor, ReqwestGet};

/// Knowledge-graph memory: build from literature, activate, evaluate.
#[derive(Debug, Parser)]
#[command(name = "memforge", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Option<Command>,
}

/// Flags layered over the config file (or the defaults).
#[derive(Debug, Args)]
struct Overrides {
    /// JSON config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long = "penalty-f", global = true)]
    penalty_f: Option<f64>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long = "cap-dynamic", global = true)]
    cap_dynamic: Option<usize>,
    #[arg(long = "cap-static", global = true)]
    cap_static: Option<usize>,
    #[arg(long = "max-depth", global = true)]
    max_depth: Option<u32>,
    #[arg(long = "query-budget", global = true)]
    query_budget: Option<usize>,
    #[arg(long = "relevance-floor", global = true)]
    relevance_floor: Option<f64>,
    #[arg(long = "disease-lexicon", global = true)]
    disease_lexicon: Option<PathBuf>,
    #[arg(long = "synonym-table", global = true)]
    synonym_table: Option<PathBuf>,
    /// Print the effective config and exit
    #[arg(long = "print-config", global = true)]
    print_config: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the knowledge graph and write a snapshot
    Build(BuildArgs),
    /// Activate working memory for a query and print the report as JSON
    Activate(ActivateArgs),
    /// Run the planted-fact retrieval sweep and emit CSV
    Eval(EvalArgs),
    /// Print graph statistics for a snapshot as JSON
    Stats(SnapshotArg),
    /// Write the memory bank for a snapshot
    ExportBank(ExportArgs),
    /// Print the effective config as JSON
    PrintConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SourceKind {
    Local,
    Ncbi,
}

#[derive(Debug, Args)]
struct BuildArgs {
    /// JSONL corpus (`id`, optional `title`, `abstract` per line)
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Seed query for iterative literature retrieval
    #[arg(long = "seed-query")]
    seed_query: Option<String>,
    /// Where seed queries are answered; `local` searches `--corpus`
    #[arg(long, value_enum, default_value = "local")]
    source: SourceKind,
    /// Abstracts fetched per PubMed query
    #[arg(long, default_value_t = 20)]
    retmax: usize,
    /// Snapshot output path
    #[arg(long, short)]
    out: PathBuf,
    /// Also write the build report as JSON
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SnapshotArg {
    #[arg(long)]
    snapshot: PathBuf,
}

#[derive(Debug, Args)]
struct ActivateArgs {
    #[arg(long)]
    snapshot: PathBuf,
    /// Query text, embedded as a single token
    #[arg(long, conflicts_with = "tokens", required_unless_present = "tokens")]
    query: Option<String>,
    /// JSON token matrix (array of rows) or a full activation request object
    #[arg(long)]
    tokens: Option<PathBuf>,
    /// Bank rows to mask out of dynamic activation
    #[arg(long, value_delimiter = ',')]
    mask: Vec<usize>,
    /// d x d query projection in bank binary layout
    #[arg(long = "projection-query")]
    projection_query: Option<PathBuf>,
    /// d x d memory projection in bank binary layout
    #[arg(long = "projection-memory")]
    projection_memory: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, default_value_t = EvalSpec::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = EvalSpec::default().planted)]
    planted: usize,
    #[arg(long, default_value_t = EvalSpec::default().distractors)]
    distractors: usize,
    #[arg(long = "max-cap", default_value_t = EvalSpec::default().max_cap)]
    max_cap: usize,
    /// CSV output path; stdout when absent
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BankFormat {
    Binary,
    Json,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    snapshot: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "binary")]
    format: BankFormat,
}

/// Machine-readable failure, printed to stderr as JSON.
#[derive(Debug, Serialize)]
struct Failure {
    error: &'static str,
    exit_code: u8,
    message: String,
}

impl Failure {
    fn new(error: &'static str, exit_code: u8, message: impl Into<String>) -> Self {
        Failure {
            error,
            exit_code,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: io::Error) -> Self {
        let code = if e.kind() == io::ErrorKind::NotFound {
            "file_not_found"
        } else {
            "io_error"
        };
        Failure::new(code, 3, format!("{}: {e}", path.display()))
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::new(e.code(), e.exit_code() as u8, e.to_string())
    }
}

macro_rules! via_pipeline {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                PipelineError::from(e).into()
            }
        }
    )*};
}
via_pipeline!(
    memforge::ConfigError,
    memforge::corpus::CorpusError,
    memforge::GraphError,
    memforge::embedding::EmbeddingError,
    memforge::ActivationError
);

type CmdResult = Result<(), Failure>;

fn effective_config(o: &Overrides) -> Result<PipelineConfig, Failure> {
    let mut config = match &o.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = o.$field.clone() {
                config.$field = v.into();
            }
        )*};
    }
    set!(tau, alpha, penalty_f, dim, cap_dynamic, cap_static, max_depth, query_budget);
    set!(relevance_floor, disease_lexicon, synonym_table);
    config.validate()?;
    Ok(config)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> CmdResult {
    std::fs::write(path, bytes).map_err(|e| Failure::io(path, e))
}

fn print_json<T: Serialize>(value: &T) -> CmdResult {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| Failure::new("internal_error", 5, e.to_string()))?;
    writeln!(out).map_err(|e| Failure::new("io_error", 3, e.to_string()))
}

fn load_snapshot(path: &Path) -> Result<KnowledgeGraph, Failure> {
    let file = File::open(path).map_err(|e| Failure::io(path, e))?;
    Ok(KnowledgeGraph::load_snapshot(BufReader::new(file))?)
}

fn load_corpus(path: &Path) -> Result<Vec<memforge::Document>, Failure> {
    let file = File::open(path).map_err(|e| Failure::io(path, e))?;
    Ok(read_corpus_jsonl(BufReader::new(file))?)
}

fn embedder(config: &PipelineConfig) -> Result<Arc<dyn EmbeddingProvider>, Failure> {
    Ok(Arc::new(HashEmbedder::new(config.dim)?))
}

fn pipeline(config: &PipelineConfig) -> Result<Pipeline, Failure> {
    let embedder = embedder(config)?;
    let schema = RelationSchema::default();
    let extractor: Arc<dyn Extractor> = match config.extractor {
        ExtractorChoice::Mock => Arc::new(MockExtractor::new(schema, embedder.clone())),
        ExtractorChoice::Remote => {
            let endpoint = config.remote_endpoint.clone().unwrap_or_default();
            let transport = ReqwestExtractor::from_env(endpoint).map_err(|e| Failure::new("network_error", 4, e.to_string()))?;
            Arc::new(RemoteExtractor::new(transport, schema, embedder.clone()))
        }
    };
    Ok(Pipeline::new(
        config.clone(),
        config.load_synonym_table()?,
        config.load_disease_lexicon()?,
        embedder,
        extractor,
    )?)
}

fn print_build_report(report: &BuildReport, snapshot: &Path) -> CmdResult {
    let mut out = io::stdout().lock();
    let lines = [
        ("docs seen", report.docs_seen),
        ("deduped", report.deduped),
        ("docs retained", report.docs_retained),
        ("triples extracted", report.triples_extracted),
        ("triples retained", report.triples_retained),
        ("malformed items", report.malformed_items),
        ("extraction failed", report.extraction_failed),
        ("queries issued", report.queries_issued),
        ("entities", report.entities),
        ("edges", report.edges),
    ];
    let io_err = |e: io::Error| Failure::new("io_error", 3, e.to_string());
    for (label, n) in lines {
        writeln!(out, "{label}: {n}").map_err(io_err)?;
    }
    for (relation, n) in &report.retained_by_relation {
        writeln!(out, "retained {relation}: {n}").map_err(io_err)?;
    }
    writeln!(out, "snapshot: {}", snapshot.display()).map_err(io_err)
}

fn cmd_build(config: &PipelineConfig, args: &BuildArgs) -> CmdResult {
    let pipeline = pipeline(config)?;
    let (graph, report) = match (&args.seed_query, args.source) {
        (None, _) => {
            let path = args
                .corpus
                .as_deref()
                .ok_or_else(|| Failure::new("config_error", 2, "build needs --corpus or --seed-query"))?;
            pipeline.build_from_documents(load_corpus(path)?)?
        }
        (Some(seed), SourceKind::Local) => {
            let path = args
                .corpus
                .as_deref()
                .ok_or_else(|| Failure::new("config_error", 2, "--source local needs --corpus to search"))?;
            let source = LocalCorpus::new(load_corpus(path)?);
            pipeline.build_from_search(seed, &source)?
        }
        (Some(seed), SourceKind::Ncbi) => {
            let http = ReqwestGet::new().map_err(|e| Failure::new("network_error", 4, e.to_string()))?;
            let source: Box<dyn LiteratureSource> = Box::new(PubMedClient::from_env(http, args.retmax));
            pipeline.build_from_search(seed, source.as_ref())?
        }
    };
    write_file(&args.out, &graph.to_snapshot_bytes())?;
    if let Some(path) = &args.report {
        let mut bytes = serde_json::to_vec_pretty(&report).expect("report serializes");
        bytes.push(b'\n');
        write_file(path, &bytes)?;
    }
    print_build_report(&report, &args.out)
}

fn read_request(args: &ActivateArgs) -> Result<ActivationRequest, Failure> {
    let mut request = match (&args.query, &args.tokens) {
        (Some(text), _) => ActivationRequest::text(text.clone()),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Failure::new("bad_request", 3, e.to_string()))?;
            let parsed = if value.is_array() {
                serde_json::from_value(value).map(|tokens| ActivationRequest {
                    tokens: Some(tokens),
                    ..Default::default()
                })
            } else {
                serde_json::from_value(value)
            };
            parsed.map_err(|e| Failure::new("bad_request", 3, e.to_string()))?
        }
        (None, None) => return Err(Failure::new("config_error", 2, "activate needs --query or --tokens")),
    };
    request.mask.extend(&args.mask);
    request.mask.sort_unstable();
    request.mask.dedup();
    Ok(request)
}

fn load_projection(path: &Path, dim: usize) -> Result<ndarray::Array2<f64>, Failure> {
    let file = File::open(path).map_err(|e| Failure::io(path, e))?;
    Ok(read_projection(BufReader::new(file), dim)?)
}

fn bank_for(config: &PipelineConfig, graph: &KnowledgeGraph) -> Result<MemoryBank, Failure> {
    Ok(MemoryBank::build(graph, embedder(config)?.as_ref())?)
}

fn cmd_activate(config: &PipelineConfig, args: &ActivateArgs) -> CmdResult {
    let request = read_request(args)?;
    let graph = load_snapshot(&args.snapshot)?;
    let bank = bank_for(config, &graph)?;
    let mut act_config = config.activation_config();
    if let Some(path) = &args.projection_query {
        act_config.projection_query = Some(load_projection(path, bank.dim())?);
    }
    if let Some(path) = &args.projection_memory {
        act_config.projection_memory = Some(load_projection(path, bank.dim())?);
    }
    print_json(&run_activation(&graph, &bank, &request, &act_config)?)
}

fn cmd_eval(config: &PipelineConfig, args: &EvalArgs) -> CmdResult {
    let spec = EvalSpec {
        seed: args.seed,
        planted: args.planted,
        distractors: args.distractors,
        max_cap: args.max_cap,
    };
    if spec.planted == 0 || spec.max_cap == 0 {
        return Err(Failure::new("config_error", 2, "--planted and --max-cap must be at least 1"));
    }
    let csv = rows_to_csv(&run_eval(config, &spec)?);
    match &args.out {
        Some(path) => write_file(path, csv.as_bytes()),
        None => io::stdout()
            .lock()
            .write_all(csv.as_bytes())
            .map_err(|e| Failure::new("io_error", 3, e.to_string())),
    }
}

fn cmd_stats(args: &SnapshotArg) -> CmdResult {
    print_json(&graph_stats(&load_snapshot(&args.snapshot)?))
}

fn cmd_export_bank(config: &PipelineConfig, args: &ExportArgs) -> CmdResult {
    let bank = bank_for(config, &load_snapshot(&args.snapshot)?)?;
    let mut out = create(&args.out)?;
    match args.format {
        BankFormat::Binary => bank.write_binary(&mut out)?,
        BankFormat::Json => {
            serde_json::to_writer_pretty(&mut out, &bank.to_json())
                .map_err(|e| Failure::new("internal_error", 5, e.to_string()))?;
            writeln!(out).map_err(|e| Failure::io(&args.out, e))?;
        }
    }
    out.flush().map_err(|e| Failure::io(&args.out, e))
}

fn print_config(config: &PipelineConfig) -> CmdResult {
    println!("{}", config.to_json_pretty());
    Ok(())
}

fn run(cli: &Cli) -> CmdResult {
    let config = effective_config(&cli.overrides)?;
    if cli.overrides.print_config {
        return print_config(&config);
    }
    match &cli.command {
        Some(Command::Build(args)) => cmd_build(&config, args),
        Some(Command::Activate(args)) => cmd_activate(&config, args),
        Some(Command::Eval(args)) => cmd_eval(&config, args),
        Some(Command::Stats(args)) => cmd_stats(args),
        Some(Command::ExportBank(args)) => cmd_export_bank(&config, args),
        Some(Command::PrintConfig) => print_config(&config),
        None => Err(Failure::new("usage_error", 2, "a subcommand is required; see --help")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let failure = Failure::new("usage_error", 2, e.to_string().trim_end());
            eprintln!("{}", serde_json::to_string(&failure).expect("failure serializes"));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{}", serde_json::to_string(&failure).expect("failure serializes"));
            ExitCode::from(failure.exit_code)
        }
    }
}
